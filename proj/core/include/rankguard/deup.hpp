#pragma once

#include "rankguard/gbt.hpp"
#include "rankguard/panel.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rankguard::deup {

// Error-predictor feature schema, fixed order. score/abs_score come from the
// ranker; the rest are panel features, missing cells zero-filled.
inline constexpr std::array<std::string_view, 11> kGxFeatures = {
    "score",
    "abs_score",
    "cross_sectional_rank",
    "vol_20d",
    "vol_60d",
    "mom_1m",
    "adv_20d",
    "vix_percentile_252d",
    "market_regime_enc",
    "market_vol_21d",
    "market_return_21d"};

// Per-stock quantile aleatoric model features, fixed order.
inline constexpr std::array<std::string_view, 6> kTier2Features = {
    "vol_20d", "adv_20d", "market_vol_21d", "vix_percentile_252d", "mom_1m", "sector_enc"};

struct GxMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;  // column-major, aligned to label records
};

// Primary scores of the labeled rows, aligned to labels.records.
[[nodiscard]] std::vector<double> primary_scores(const Panel& panel, const LabelSet& labels);

// One row per labeled record; missing feature cells become 0.
[[nodiscard]] GxMatrix build_gx_features(const Panel& panel, const LabelSet& labels,
                                         std::span<const double> scores);

// Contiguous [begin, end) index ranges of labels.records sharing a date.
[[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> record_date_ranges(
    const LabelSet& labels);

struct GxResult {
    std::vector<double> g_by_record;  // NaN where no fold emitted a prediction
    std::vector<std::string> warnings;
    int folds_trained = 0;
    std::vector<gbt::Importance> importance;  // split counts summed over folds
};

// One model per emitting fold, trained on purged prior-chunk labeled rows
// (per-fold seed = config.seed + fold_id); predictions land on the fold's
// labeled rows only.
[[nodiscard]] GxResult train_gx_walkforward(const GxMatrix& features, const LabelSet& labels,
                                            const std::vector<FoldPlan>& folds,
                                            const gbt::GbtConfig& config);

enum class AleatoricMode { kOracle, kPitRolling, kExpanding, kTier0Iqr };

struct AleatoricConfig {
    AleatoricMode mode = AleatoricMode::kPitRolling;
    int window = 60;               // pit_rolling W
    double quantile_level = 0.10;  // per-date loss quantile
    double tier0_epsilon = 1e-6;
    std::size_t dev_end_pos = 0;  // tier0 calibration uses dates < dev_end_pos
};

// Per-date noise floor a(t), NaN where undefined:
//   oracle      same-date quantile of losses (not PIT-safe);
//   pit_rolling quantile of pooled losses over date positions in
//               [t - horizon - W, t - horizon], both ends included;
//   expanding   median over matured dates u <= t - horizon of per-date quantiles;
//   tier0_iqr   c / (cross-sectional IQR of the date's forward returns + eps),
//               c set so the median floor matches the median loss on dates
//               before dev_end_pos.
[[nodiscard]] std::vector<double> aleatoric_baseline(const Panel& panel, const LabelSet& labels,
                                                     const AleatoricConfig& config);

// The bisected tier0 scale c on its own (diagnostic echo for run reports).
[[nodiscard]] double tier0_constant(const Panel& panel, const LabelSet& labels,
                                    const AleatoricConfig& config);

// max(0, g - a); NaN propagates.
[[nodiscard]] double epistemic(double g, double a);
[[nodiscard]] std::vector<double> epistemic_series(std::span<const double> g,
                                                   std::span<const double> a);

struct Tier2Result {
    std::vector<double> p25_by_record;
    std::vector<double> p75_by_record;
    std::vector<std::string> warnings;
};

// Walk-forward pinball-GBT per-stock displacement quantiles (diagnostic;
// disabled by default at the 20d horizon).
[[nodiscard]] Tier2Result train_tier2_quantile(const Panel& panel, const LabelSet& labels,
                                               const std::vector<FoldPlan>& folds,
                                               gbt::GbtConfig config);

struct QuintileTable {
    std::array<double, 5> mean_loss{};
    std::array<std::size_t, 5> counts{};
    double q5_q1 = 0.0;
    double spearman_of_means = 0.0;  // 1.0 iff strictly monotone increasing
};

// Pooled uncertainty quintiles (lowest first) vs mean realized loss. Rows
// with missing values are skipped; needs >= 50 usable rows.
[[nodiscard]] QuintileTable quintile_table(std::span<const double> ehat,
                                           std::span<const double> loss);

struct CouplingSeries {
    std::vector<double> rho_by_date;  // NaN where undefined
    double median = 0.0;
    double frac_positive = 0.0;
};

// Per-date Spearman between an uncertainty signal and |score|.
[[nodiscard]] CouplingSeries coupling_series(
    std::span<const double> ehat, std::span<const double> abs_score,
    const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges);

// Pooled OLS residualization of ê on covariate columns (rows with any
// missing value get NaN residuals and are excluded from the regression).
[[nodiscard]] std::vector<double> residualize_pooled(
    std::span<const double> ehat, const std::vector<std::vector<double>>& covariates);

// Per-date OLS of ê on |score|; each date needs >= 3 usable rows.
[[nodiscard]] std::vector<double> residualize_per_date(
    std::span<const double> ehat, std::span<const double> abs_score,
    const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges);

struct DominanceRow {
    std::string name;
    double mean_rho = 0.0;  // mean per-date Spearman with realized loss
    std::size_t n_dates = 0;
};

[[nodiscard]] std::vector<DominanceRow> baseline_dominance_table(
    const std::vector<std::pair<std::string, std::span<const double>>>& candidates,
    std::span<const double> loss,
    const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges);

// Uncertainty table export: date, asset, horizon, g, a_oracle, a_pit, a_exp,
// e_oracle, e_pit, rank_loss. Missing values become empty cells.
void export_uncertainty_csv(const std::string& path, const Panel& panel, const LabelSet& labels,
                            std::span<const double> g, std::span<const double> a_oracle,
                            std::span<const double> a_pit, std::span<const double> a_exp);

} // namespace rankguard::deup
