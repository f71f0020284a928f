#pragma once

#include <optional>
#include <span>
#include <vector>

namespace rankguard::stats {

// Missing observations travel as quiet NaN throughout the library.
[[nodiscard]] double missing() noexcept;
[[nodiscard]] bool is_missing(double x) noexcept;

[[nodiscard]] double mean(std::span<const double> v);
[[nodiscard]] double sample_std(std::span<const double> v); // ddof = 1
[[nodiscard]] double median(std::span<const double> v);

// 1-based ranks, ties averaged. Input must be finite.
[[nodiscard]] std::vector<double> average_ranks(std::span<const double> values);

// Cross-sectional percentile rank: (avg_rank - 1)/(N - 1), so extremes map to
// exactly 0 and 1 and ties share a rank. Throws DegenerateCrossSection for
// N < 2 and InvalidValue on non-finite input.
[[nodiscard]] std::vector<double> percentile_rank(std::span<const double> values);

// Pearson correlation; nullopt when either side has zero variance.
[[nodiscard]] std::optional<double> try_pearson(std::span<const double> x,
                                                std::span<const double> y);

// Spearman = Pearson of percentile ranks. nullopt when n < 3 or either vector
// is constant; the throwing variant raises UndefinedCorrelation instead.
[[nodiscard]] std::optional<double> try_spearman(std::span<const double> x,
                                                 std::span<const double> y);
[[nodiscard]] double spearman(std::span<const double> x, std::span<const double> y);

// AUROC by the rank method: P(score_pos > score_neg) + 0.5 P(tie). nullopt /
// UndefinedAUROC when labels are single-class. Labels must be 0 or 1.
[[nodiscard]] std::optional<double> try_auroc(std::span<const double> scores,
                                              std::span<const int> labels);
[[nodiscard]] double auroc(std::span<const double> scores, std::span<const int> labels);

// EWMA with decay lambda = 1 - exp(-ln2/halflife), weights normalized over the
// observed prefix. Missing inputs are skipped without resetting state; output
// is NaN until min_periods observations have been seen, then carries the
// current state (including at missing-input positions).
[[nodiscard]] std::vector<double> ewma(std::span<const double> series, double halflife,
                                       int min_periods);

// z_t = (x_t - mean(x_1..t)) / max(sample_std(x_1..t), std_floor), the window
// including the current point. NaN before min_periods observations; missing
// inputs skipped (NaN emitted, state kept).
[[nodiscard]] std::vector<double> expanding_zscore(std::span<const double> series,
                                                   int min_periods,
                                                   double std_floor = 1e-9);

// Two-sample Kolmogorov-Smirnov statistic, sup over thresholds of |ECDF_a - ECDF_b|.
[[nodiscard]] double ks_two_sample(std::span<const double> a, std::span<const double> b);

// Residuals of y regressed on [intercept, x_cols] via Householder QR. x_cols
// are given column-wise without the intercept. Throws SingularDesign when the
// augmented design is rank-deficient or rows < cols + 1.
[[nodiscard]] std::vector<double> ols_residualize(
    std::span<const double> y, const std::vector<std::vector<double>>& x_cols);

// Linear-interpolation quantile (type 7) on sorted values, p in [0,1].
[[nodiscard]] double quantile(std::span<const double> values, double p);

} // namespace rankguard::stats
