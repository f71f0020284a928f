#pragma once

#include "rankguard/gate.hpp"
#include "rankguard/panel.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rankguard::policy {

// Deployment policy variants. All gate_* variants trade only when the regime
// gate clears the threshold; ungated_raw ignores the gate entirely, and
// trail_ic_k4 replaces the binary gate with continuous trailing-IC sizing.
enum class Variant {
    kUngatedRaw,
    kGateRaw,
    kGateVol,
    kGateUaSort,
    kGateResidEhat,
    kGateEhatCap,
    kGateVolEhatCap,
    kTrailIcK4,
};

[[nodiscard]] std::string_view variant_name(Variant v);
[[nodiscard]] Variant variant_from_name(std::string_view name);

struct PolicySpec;
// Named preset for a variant: the plain-cap variant ships with (p=0.90,
// kappa=0.50) and the vol+cap variant with (p=0.85, kappa=0.70).
[[nodiscard]] PolicySpec default_spec(Variant v);

struct PolicySpec {
    Variant variant = Variant::kGateVolEhatCap;
    int legs = 10;          // K names per side
    double theta = 0.2;     // gate activation threshold on G
    double c_vol = 0.1;     // vol-sizing scale, DEV-calibrated
    double lambda = 0.05;   // uncertainty-adjusted sort strength
    bool ua_flip_sign = false;  // sensitivity flag: longs s - lambda*ehat instead
    double cap_percentile = 0.85;
    double cap_weight = 0.70;
    double c_resid = 0.1;   // residual-sizing scale, DEV-calibrated
    double ic_ref = 0.05;   // trailing-IC full-exposure reference
    double epsilon = 1e-6;
};

// Per-member ledger entry. raw_weight is the equal leg weight (+-1/K),
// sized_weight follows any weight-space sizing (residual or trailing-IC),
// final_weight additionally applies the uncertainty cap.
struct WeightEntry {
    std::string asset;
    double raw_weight = 0.0;
    double sized_weight = 0.0;
    double final_weight = 0.0;
    bool capped = false;
};

struct RebalanceWeights {
    std::size_t date_pos = 0;
    bool active = false;  // false: abstained, legs empty
    std::vector<WeightEntry> longs;
    std::vector<WeightEntry> shorts;
    std::vector<std::string> capped_assets;
    double gross = 0.0;  // sum of |final_weight|
};

struct PolicyResult {
    std::vector<RebalanceWeights> rebalances;
    std::vector<std::string> warnings;
};

// Volatility sizing multiplier: min(1, c_vol / sqrt(vol + eps)). Missing vol
// leaves the multiplier at 1 (no information, no de-levering).
[[nodiscard]] double vol_multiplier(double vol_20d, double c_vol, double epsilon);

// Score-space uncertainty adjustment for the long and short sort keys:
// long key s + lambda*ehat, short key s - lambda*ehat (flipped when asked).
struct UaSortKeys {
    std::vector<double> long_key;
    std::vector<double> short_key;
};
[[nodiscard]] UaSortKeys ua_sort(std::span<const double> scores,
                                 std::span<const double> ehat, double lambda,
                                 bool flip_sign = false);

// Top-K by long key and bottom-K by short key, equal weight +-1/K within the
// leg, ties broken by ascending asset id. Throws InsufficientUniverse when
// fewer than 2K assets carry a defined key.
struct SelectedLegs {
    std::vector<std::size_t> long_idx;
    std::vector<std::size_t> short_idx;
};
[[nodiscard]] SelectedLegs select_legs(std::span<const std::string> assets,
                                       std::span<const double> long_key,
                                       std::span<const double> short_key, int legs);

// Indices of members whose ehat lies strictly above the date's cross-sectional
// P_p(ehat); the percentile is computed over every defined ehat in the
// cross-section, not just portfolio members. Ties at the threshold never cap.
[[nodiscard]] std::vector<std::size_t> ehat_cap_indices(
    std::span<const double> member_ehat, std::span<const double> cross_section_ehat,
    double percentile);

// Residual-sizing multiplier: min(1, c_resid / sqrt(max(residual, 0) + eps)).
[[nodiscard]] double resid_multiplier(double residual, double c_resid, double epsilon);

// Trailing-IC exposure scale: clip(ewma_ic / ic_ref, 0, 1).
[[nodiscard]] double trail_ic_scale(double ewma_ic, double ic_ref);

// DEV calibrations. Each solves its scale by bisection until the median
// multiplier over DEV rows reaches 0.70 (the [0.69, 0.71] band is asserted by
// callers). DEV rows are those with date position < dev_end_pos.
[[nodiscard]] double calibrate_c_vol(const Panel& panel, std::size_t dev_end_pos,
                                     double epsilon);
[[nodiscard]] double calibrate_c_resid(const Panel& panel, const LabelSet& labels,
                                       std::span<const double> ehat,
                                       std::size_t dev_end_pos, double epsilon);
// Median of strictly positive matured-IC values over DEV dates.
[[nodiscard]] double calibrate_ic_ref(std::span<const double> matured_ic,
                                      std::size_t dev_end_pos);

// Runs one policy over the given rebalance dates. ehat is aligned with
// labels.records and supplies both cap thresholds and sizing inputs; the gate
// series supplies G and the matured-IC EWMA (h_real) for trailing-IC sizing.
// Dates with too small a universe are skipped with a warning.
[[nodiscard]] PolicyResult apply_policy(const Panel& panel, const LabelSet& labels,
                                        std::span<const double> ehat,
                                        std::span<const gate::GatePoint> gate_points,
                                        std::span<const std::size_t> rebalance_positions,
                                        const PolicySpec& spec);

// Weights ledger: date,asset,side,raw_weight,sized_weight,capped_flag,final_weight.
// Abstained rebalances contribute no rows.
void export_weights_csv(const std::string& path, const TradingCalendar& calendar,
                        std::span<const RebalanceWeights> rebalances);

// DEV grid for the uncertainty-adjusted sort strength.
inline constexpr double kLambdaGrid[] = {0.01, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0};

} // namespace rankguard::policy
