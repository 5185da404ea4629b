#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "nnshrink/market_data.hpp"
#include "nnshrink/types.hpp"

// Synthetic populations for tests, acceptance runs and the `simulate` command.
namespace nnshrink::synthetic {

using Rng = std::mt19937_64;

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
Matrix random_orthogonal(std::size_t n, Rng& rng);

/// G G^T + I with Gaussian G.
Matrix random_spd(std::size_t n, Rng& rng);

Matrix random_symmetric(std::size_t n, Rng& rng);

struct Population {
  Matrix covariance;
  Matrix root;  // covariance = root * root^T
};

/// Q diag(spikes, bulk, ..., bulk) Q^T with Haar Q, scaled by `scale`.
Population spiked_population(std::size_t n_assets, const std::vector<double>& spikes, double bulk,
                             Rng& rng, double scale = 1.0);

/// Spikes evenly spaced over [lo, hi].
std::vector<double> linear_spikes(std::size_t count, double lo, double hi);

/// N x n zero-mean Gaussian draws from the population.
Matrix draw_returns(const Population& pop, std::size_t n, Rng& rng);

/// Price panel starting at 100 whose log returns are the given N x T matrix.
PriceTable price_table(const Matrix& returns, const std::vector<std::string>& assets,
                       const std::string& first_date);

/// Consecutive weekday dates starting at an ISO date.
std::vector<std::string> weekday_dates(const std::string& first_date, std::size_t count);

}  // namespace nnshrink::synthetic
