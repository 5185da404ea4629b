#include "nnshrink/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "nnshrink/errors.hpp"

namespace nnshrink {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto first = cell.find_first_not_of(" \t");
    auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool is_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') return false;
  const int month = std::stoi(s.substr(5, 2));
  const int day = std::stoi(s.substr(8, 2));
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

double parse_number(const std::string& cell, std::size_t line_no) {
  if (cell.empty()) throw DataError("missing value on line " + std::to_string(line_no));
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw ParseError("malformed number '" + cell + "' on line " + std::to_string(line_no));
  return v;
}

struct RawPanel {
  std::vector<std::string> assets;
  std::vector<std::string> dates;
  std::vector<std::vector<double>> rows;
};

RawPanel read_panel(std::istream& in) {
  RawPanel panel;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      if (cells.size() < 2) throw ParseError("header needs a date column and at least one asset");
      std::string first = cells[0];
      std::transform(first.begin(), first.end(), first.begin(), ::tolower);
      if (first != "date") throw ParseError("first header column must be 'date'");
      panel.assets.assign(cells.begin() + 1, cells.end());
      std::unordered_set<std::string> seen;
      for (const auto& a : panel.assets) {
        if (a.empty()) throw ParseError("empty asset name in header");
        if (!seen.insert(a).second) throw ParseError("duplicate asset '" + a + "'");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != panel.assets.size() + 1)
      throw ParseError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(panel.assets.size() + 1));
    if (!is_iso_date(cells[0]))
      throw ParseError("bad date '" + cells[0] + "' on line " + std::to_string(line_no));
    std::vector<double> row;
    row.reserve(panel.assets.size());
    for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(parse_number(cells[j], line_no));
    panel.dates.push_back(cells[0]);
    panel.rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError("empty CSV");
  return panel;
}

void check_dates(const std::vector<std::string>& dates) {
  for (std::size_t t = 1; t < dates.size(); ++t) {
    if (dates[t] == dates[t - 1]) throw DataError("duplicate date " + dates[t]);
    if (dates[t] < dates[t - 1]) throw DataError("dates not increasing at " + dates[t]);
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void validate(const PriceTable& table) {
  const auto T = static_cast<std::size_t>(table.prices.rows());
  const auto N = static_cast<std::size_t>(table.prices.cols());
  if (N < 2 || T < 2) throw DataError("price table needs at least 2 assets and 2 dates");
  if (table.assets.size() != N || table.dates.size() != T)
    throw DataError("price table labels do not match matrix shape");
  check_dates(table.dates);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) {
      const double p = table.prices(t, i);
      if (!std::isfinite(p) || p <= 0.0)
        throw DataError("non-positive price for " + table.assets[i] + " on " + table.dates[t]);
    }
}

PriceTable parse_prices(std::istream& in) {
  RawPanel panel = read_panel(in);
  PriceTable table;
  table.assets = std::move(panel.assets);
  table.dates = std::move(panel.dates);
  table.prices.resize(static_cast<Eigen::Index>(panel.rows.size()),
                      static_cast<Eigen::Index>(table.assets.size()));
  for (std::size_t t = 0; t < panel.rows.size(); ++t)
    for (std::size_t i = 0; i < table.assets.size(); ++i)
      table.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = panel.rows[t][i];
  validate(table);
  return table;
}

PriceTable load_prices(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_prices(in);
}

ReturnsMatrix compute_returns(const PriceTable& table) {
  const Eigen::Index T = table.prices.rows();
  const Eigen::Index N = table.prices.cols();
  ReturnsMatrix r;
  r.assets = table.assets;
  r.dates.assign(table.dates.begin() + 1, table.dates.end());
  r.returns.resize(N, T - 1);
  for (Eigen::Index t = 0; t + 1 < T; ++t)
    for (Eigen::Index i = 0; i < N; ++i)
      r.returns(i, t) = std::log(table.prices(t + 1, i)) - std::log(table.prices(t, i));
  return r;
}

ReturnsMatrix parse_returns(std::istream& in) {
  RawPanel panel = read_panel(in);
  if (panel.rows.empty()) throw DataError("returns file has no rows");
  check_dates(panel.dates);
  ReturnsMatrix r;
  r.assets = std::move(panel.assets);
  r.dates = std::move(panel.dates);
  r.returns.resize(static_cast<Eigen::Index>(r.assets.size()),
                   static_cast<Eigen::Index>(panel.rows.size()));
  for (std::size_t t = 0; t < panel.rows.size(); ++t)
    for (std::size_t i = 0; i < r.assets.size(); ++i) {
      const double v = panel.rows[t][i];
      if (!std::isfinite(v)) throw DataError("non-finite return on " + r.dates[t]);
      r.returns(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = v;
    }
  return r;
}

ReturnsMatrix load_returns(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_returns(in);
}

void write_prices(const PriceTable& table, std::ostream& out) {
  out << "date";
  for (const auto& a : table.assets) out << ',' << a;
  out << '\n';
  for (Eigen::Index t = 0; t < table.prices.rows(); ++t) {
    out << table.dates[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < table.prices.cols(); ++i) out << ',' << format_double(table.prices(t, i));
    out << '\n';
  }
}

void save_prices(const PriceTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_prices(table, out);
}

void write_returns(const ReturnsMatrix& r, std::ostream& out) {
  out << "date";
  for (const auto& a : r.assets) out << ',' << a;
  out << '\n';
  for (std::size_t t = 0; t < r.n_days(); ++t) {
    out << r.dates[t];
    for (std::size_t i = 0; i < r.n_assets(); ++i)
      out << ',' << format_double(r.returns(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
    out << '\n';
  }
}

void save_returns(const ReturnsMatrix& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_returns(r, out);
}

WindowSlices slice_window(const ReturnsMatrix& r, const WindowSpec& w) {
  if (w.n < 2 || w.m < 1) throw DataError("window needs n >= 2 and m >= 1");
  if (w.start + w.n + w.m > r.n_days()) throw DataError("window extends past the available returns");
  if (w.assets.empty()) throw DataError("window asset subset is empty");
  std::unordered_set<std::size_t> seen;
  for (auto a : w.assets) {
    if (a >= r.n_assets()) throw DataError("asset index out of range");
    if (!seen.insert(a).second) throw DataError("asset subset has duplicates");
  }
  const auto N = static_cast<Eigen::Index>(w.assets.size());
  WindowSlices out{Matrix(N, static_cast<Eigen::Index>(w.n)), Matrix(N, static_cast<Eigen::Index>(w.m))};
  for (Eigen::Index k = 0; k < N; ++k) {
    const auto row = static_cast<Eigen::Index>(w.assets[static_cast<std::size_t>(k)]);
    out.in_sample.row(k) = r.returns.row(row).segment(static_cast<Eigen::Index>(w.start),
                                                      static_cast<Eigen::Index>(w.n));
    out.validation.row(k) = r.returns.row(row).segment(static_cast<Eigen::Index>(w.start + w.n),
                                                       static_cast<Eigen::Index>(w.m));
  }
  return out;
}

Matrix center_columns(const Matrix& x) {
  Vector mean = x.rowwise().mean();
  return x.colwise() - mean;
}

std::vector<std::size_t> all_assets(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace nnshrink
