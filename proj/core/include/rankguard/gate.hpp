#pragma once

#include "rankguard/panel.hpp"

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankguard::gate {

// Features whose cross-sectional means feed the drift signal.
inline constexpr std::array<std::string_view, 6> kDriftFeatures = {
    "vol_20d", "mom_1m", "adv_20d", "vix_percentile_252d", "market_vol_21d", "vol_60d"};

struct GateConfig {
    double halflife = 30.0;
    int min_periods = 20;
    double alpha = 0.3;  // drift weight in the health composite
    double beta = 0.3;   // disagreement weight
    double theta = 0.2;  // activation threshold on G
    std::array<double, 3> drift_weights = {0.4, 0.3, 0.3};  // feat, score, corr
    int drift_feature_window = 252;
    int score_ref_window = 60;
    int corr_window = 20;
    int horizon_lag = 20;  // trading-day maturation lag (= label horizon)
};

struct GatePoint {
    static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    double matured_ic = kNaN;
    double h_real = kNaN;
    double h_drift = kNaN;
    double h_disagree = kNaN;
    double z_real = kNaN;
    double z_drift = kNaN;
    double z_disagree = kNaN;
    double h_raw = kNaN;
    double health = kNaN;  // sigmoid(h_raw), in [0,1]
    double g = kNaN;       // clip((health - 0.3)/0.4, 0, 1)
    bool defined = false;  // false during warm-up (undefined h_real)
    bool active = false;
};

// Health-to-gate algebra: logistic squash and the linear ramp with knees at
// health 0.3 and 0.7.
[[nodiscard]] double sigmoid(double x);
[[nodiscard]] double gate_level(double health);

// Per-date Spearman between primary scores and realized forward returns at
// the horizon; NaN where fewer than 3 usable rows or a side is constant.
[[nodiscard]] std::vector<double> rank_ic_series(const Panel& panel, int horizon);

// Value at t is the input at t - tau; the first tau dates are undefined.
[[nodiscard]] std::vector<double> matured_ic_stream(std::span<const double> ic, int tau);

// EWMA of the matured stream (missing skipped, NaN until min_periods seen).
[[nodiscard]] std::vector<double> h_real_series(std::span<const double> matured_ic,
                                                double halflife, int min_periods);

// 0.4 * feat_drift + 0.3 * score_drift + 0.3 * corr_spike, where feat_drift is
// the mean |z| of six feature cross-sectional means against their trailing
// window, score_drift the KS statistic of today's scores vs the pooled
// trailing reference, and corr_spike the mean pairwise correlation of daily
// returns over the trailing window (full-window assets only). Undefined
// components are dropped and the weights renormalized.
[[nodiscard]] std::vector<double> h_drift_series(const Panel& panel, const GateConfig& config);

// With a secondary score: 1 - per-date Spearman(primary, secondary). Without:
// |dispersion / expanding_mean(dispersion) - 1| of the primary scores.
[[nodiscard]] std::vector<double> h_disagree_series(const Panel& panel);

// Eq. chain: expanding z per component, h_raw = z_real - alpha*z_drift -
// beta*z_disagree with undefined z contributing 0, health = sigmoid(h_raw),
// g = clip((health - 0.3)/0.4, 0, 1), active = g >= theta. A date is defined
// iff h_real is defined there.
[[nodiscard]] std::vector<GatePoint> health_and_gate(std::span<const double> matured_ic,
                                                     std::span<const double> h_real,
                                                     std::span<const double> h_drift,
                                                     std::span<const double> h_disagree,
                                                     const GateConfig& config);

// Full chain from a panel: rank IC -> matured stream -> components -> gate.
[[nodiscard]] std::vector<GatePoint> gate_series(const Panel& panel, const GateConfig& config);

struct GateBucket {
    std::size_t count = 0;
    double mean_predictor = 0.0;
    double mean_ic = 0.0;
    double frac_bad = 0.0;  // share of days with non-positive same-date IC
};

struct GateEvaluation {
    std::size_t n_days = 0;
    double auroc = 0.0;
    double precision = 0.0;  // of active days, share that were good
    double recall = 0.0;     // of good days, share on which the gate was active
    double abstention = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::array<GateBucket, 4> buckets{};  // predictor quartiles, lowest first
    double bucket_spearman = 0.0;         // of bucket mean ICs vs bucket order
};

// Classifier view of any per-date predictor against good_day = 1[IC > 0].
// Dates where either side is undefined are dropped; needs >= 8 usable dates
// and both classes present (else UndefinedAUROC).
[[nodiscard]] GateEvaluation evaluate_gate(std::span<const double> predictor,
                                           std::span<const double> ic, double theta);

struct VixGateBaseline {
    std::vector<double> exceed;        // 1 if stress above its rolling percentile, NaN undefined
    std::vector<double> frac_exceeded; // share of trailing window days above threshold
    std::vector<bool> active;          // abstain when more than half the window exceeded
};

// Stress-percentile abstention rule evaluated per date over a trailing window.
[[nodiscard]] VixGateBaseline vix_gate_baseline(std::span<const double> stress, int window,
                                                double percentile = 0.67, int ref_window = 252);

// Gate series export: date, matured_ic, h_real, h_drift, h_disagree, H, G,
// active. Undefined cells are empty; active is 0/1.
void export_gate_csv(const std::string& path, const TradingCalendar& calendar,
                     std::span<const GatePoint> points);

} // namespace rankguard::gate
