#pragma once

// Brute-force reference implementations used only by tests. Each one takes a
// deliberately different route than the library: O(N^2) counting ranks,
// pairwise AUROC, explicit weighted sums, normal-equations OLS.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace oracles {

// Fractional 1-based ranks by pairwise counting.
std::vector<double> counting_ranks(std::span<const double> v);

std::vector<double> percentile_rank(std::span<const double> v);

std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

// Explicit weighted sum over the observed prefix at every output position.
std::vector<double> ewma(std::span<const double> series, double halflife, int min_periods);

std::vector<double> expanding_zscore(std::span<const double> series, int min_periods,
                                     double std_floor);

double ks_two_sample(std::span<const double> a, std::span<const double> b);

// Normal-equations solve with Gaussian elimination; intercept prepended.
std::vector<double> ols_residuals(std::span<const double> y,
                                  const std::vector<std::vector<double>>& x_cols);

double quantile_type7(std::span<const double> v, double p);

} // namespace oracles
