#pragma once

#include "rankguard/panel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rankguard {

struct RegimeSegment {
    std::string start_date;  // inclusive, business-day calendar
    std::string end_date;    // inclusive
    double target_ic = 0.0;      // in [-1, 1]
    double noise_scale = 1.0;    // > 0, return-rank noise scale
    double stress_level = 0.5;   // [0,1], drives the vix-style series
};

struct RegimeScript {
    std::vector<RegimeSegment> segments;  // contiguous on business days
    int universe_size = 60;
    std::uint64_t seed = 42;
    // Extra return-rank noise for extreme score percentiles: the noise
    // multiplier is 1 + hetero_strength * 2|u - 0.5|.
    double hetero_strength = 1.2;
    // When set, a segment's effective efficacy is target_ic * (1 - stress),
    // correlating stress with efficacy for sensitivity runs.
    bool couple_stress_efficacy = false;
    bool emit_secondary = true;
};

// Deterministic panel generation. Returns rank-correlate with scores at
// approximately target_ic per segment via a Gaussian copula whose mixing
// weight is solved numerically; extreme-score names carry extra rank noise;
// stress drives vix_percentile_252d and friends independently of efficacy.
// Forward returns at horizon h are absent for the last h dates.
[[nodiscard]] Panel generate(const RegimeScript& script);

// Per-date Spearman(score, fwd return) over the labeled subset, NaN when
// undefined (degenerate or unlabeled date).
[[nodiscard]] std::vector<double> realized_ic_profile(const Panel& panel, int horizon);

// Gaussian-copula mixing weight such that the mean per-date sample Spearman
// of (score, return) at the given cross-section size matches target_ic,
// solved by bisection on a fixed deterministic Monte-Carlo sample. Throws
// GenerationError when the target is unreachable at that noise level.
[[nodiscard]] double solve_mix_weight(double target_ic, double noise_scale,
                                      double hetero_strength, int universe_size);

// Script factories used by tests and sample configs.
struct SegmentSpec {
    int n_days;
    double target_ic;
    double noise_scale;
    double stress_level;
};

[[nodiscard]] RegimeScript build_script(const std::string& start_date,
                                        const std::vector<SegmentSpec>& specs,
                                        int universe_size, std::uint64_t seed);

// Three-segment heteroscedastic script, ~780 trading days, healthy regimes.
[[nodiscard]] RegimeScript default_script(std::uint64_t seed = 42);

// Healthy -> efficacy collapse (-0.10) -> recovery, stress kept flat so the
// vix-style proxy has nothing to say about efficacy.
[[nodiscard]] RegimeScript collapse_script(std::uint64_t seed = 42);

} // namespace rankguard
