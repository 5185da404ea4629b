#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nnshrink/types.hpp"

namespace nnshrink {

/// Dividend-adjusted closing prices, one row per trading day.
struct PriceTable {
  std::vector<std::string> assets;
  std::vector<std::string> dates;  // ISO-8601, strictly increasing
  Matrix prices;                   // T x N, all > 0
};

/// Daily log returns with assets on rows: returns(i, t) is asset i on dates[t].
struct ReturnsMatrix {
  std::vector<std::string> assets;
  std::vector<std::string> dates;
  Matrix returns;  // N x T

  std::size_t n_assets() const { return static_cast<std::size_t>(returns.rows()); }
  std::size_t n_days() const { return static_cast<std::size_t>(returns.cols()); }
};

/// In-sample columns [start, start+n), validation columns [start+n, start+n+m).
struct WindowSpec {
  std::size_t start = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::size_t> assets;
};

struct WindowSlices {
  Matrix in_sample;   // N x n
  Matrix validation;  // N x m
};

PriceTable parse_prices(std::istream& in);
PriceTable load_prices(const std::filesystem::path& path);

/// Throws DataError if any PriceTable invariant is violated.
void validate(const PriceTable& table);
void write_prices(const PriceTable& table, std::ostream& out);
void save_prices(const PriceTable& table, const std::filesystem::path& path);

ReturnsMatrix compute_returns(const PriceTable& table);

/// Returns CSV shares the price layout: `date` column, then one column per asset.
ReturnsMatrix parse_returns(std::istream& in);
ReturnsMatrix load_returns(const std::filesystem::path& path);
void write_returns(const ReturnsMatrix& r, std::ostream& out);
void save_returns(const ReturnsMatrix& r, const std::filesystem::path& path);

WindowSlices slice_window(const ReturnsMatrix& r, const WindowSpec& w);

/// Subtracts each row's mean (the time average of each asset).
Matrix center_columns(const Matrix& x);

std::vector<std::size_t> all_assets(std::size_t n);

/// Formats a double so that parsing it back yields the same bits.
std::string format_double(double v);

}  // namespace nnshrink
