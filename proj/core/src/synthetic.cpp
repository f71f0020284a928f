#include "rankguard/synthetic.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rankguard {
namespace {

constexpr double kScoreObsNoise = 0.05;  // score = quality + this * N(0,1)
constexpr double kRetScale20 = 0.04;     // 20d return scale; longer horizons sqrt-scaled
constexpr double kRet1dScale = 0.015;
// Calibration sample: blocks of one cross-section each, so the solved weight
// matches the mean per-date sample Spearman rather than the population value.
constexpr int kCalibBlocks = 512;
constexpr int kBisectIters = 48;
constexpr std::uint64_t kCalibSeed = 0x5eedCA11B7A7E5ULL;  // script-independent

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double clamp01(double x, double lo, double hi) { return std::clamp(x, lo, hi); }

// Noise multiplier rises linearly in score extremity: 1 at the median score,
// 1 + hetero at the tails.
double extremity_multiplier(double z_std, double hetero) {
    const double u = normal_cdf(z_std);
    return 1.0 + hetero * 2.0 * std::abs(u - 0.5);
}

enum Stream : int {
    kStreamAssetStatic = 0,
    kStreamScore,
    kStreamSecondary,
    kStreamRet20,
    kStreamRet60,
    kStreamRet90,
    kStreamDayJitter,
    kStreamMarket,
    kStreamRet1d,
    kStreamCount,
};

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// One generator and one distribution per stream: normal_distribution caches a
// spare deviate, so streams must not share a distribution object.
struct StreamSet {
    std::array<std::mt19937_64, kStreamCount> engines;
    std::array<std::normal_distribution<double>, kStreamCount> normals;

    explicit StreamSet(std::uint64_t seed) {
        std::uint64_t state = seed;
        for (int s = 0; s < kStreamCount; ++s) {
            engines[static_cast<std::size_t>(s)].seed(splitmix64(state));
            normals[static_cast<std::size_t>(s)] = std::normal_distribution<double>(0.0, 1.0);
        }
    }

    double draw(Stream s) {
        return normals[static_cast<std::size_t>(s)](engines[static_cast<std::size_t>(s)]);
    }
};

std::string asset_id(int index) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "A%04d", index);
    return std::string(buf);
}

// Mean per-cross-section sample Spearman of (z, w*z + ns*m(z)*eta) over the
// fixed calibration draws. Monotone nondecreasing in w.
double calib_mean_ic(double w, double noise_scale, double hetero,
                     const std::vector<std::vector<double>>& z_blocks,
                     const std::vector<std::vector<double>>& eta_blocks,
                     std::vector<double>& y_scratch) {
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < z_blocks.size(); ++b) {
        const auto& z = z_blocks[b];
        const auto& eta = eta_blocks[b];
        y_scratch.resize(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            y_scratch[i] = w * z[i] + noise_scale * extremity_multiplier(z[i], hetero) * eta[i];
        }
        const auto ic = stats::try_spearman(z, y_scratch);
        if (ic) {
            total += *ic;
            ++used;
        }
    }
    if (used == 0) throw GenerationError("calibration produced no defined correlations");
    return total / static_cast<double>(used);
}

void validate_script(const RegimeScript& script) {
    if (script.segments.empty()) throw GenerationError("regime script has no segments");
    if (script.universe_size < 20) {
        throw GenerationError("universe_size must be at least 20, got " +
                              std::to_string(script.universe_size));
    }
    if (script.universe_size > 9999) {
        throw GenerationError("universe_size must be at most 9999");
    }
    if (!(script.hetero_strength >= 0.0) || !std::isfinite(script.hetero_strength)) {
        throw GenerationError("hetero_strength must be finite and non-negative");
    }
    for (std::size_t k = 0; k < script.segments.size(); ++k) {
        const auto& seg = script.segments[k];
        const std::string where = "segment " + std::to_string(k + 1);
        const long start = dates::to_serial(seg.start_date);
        const long end = dates::to_serial(seg.end_date);
        if (start > end) throw GenerationError(where + ": start_date after end_date");
        if (dates::is_weekend(start) || dates::is_weekend(end)) {
            throw GenerationError(where + ": boundary dates must be weekdays");
        }
        if (!std::isfinite(seg.target_ic) || std::abs(seg.target_ic) > 1.0) {
            throw GenerationError(where + ": target_ic must lie in [-1, 1]");
        }
        if (!(seg.noise_scale > 0.0) || !std::isfinite(seg.noise_scale)) {
            throw GenerationError(where + ": noise_scale must be positive");
        }
        if (!(seg.stress_level >= 0.0 && seg.stress_level <= 1.0)) {
            throw GenerationError(where + ": stress_level must lie in [0, 1]");
        }
        if (k > 0) {
            long expect = dates::to_serial(script.segments[k - 1].end_date) + 1;
            while (dates::is_weekend(expect)) ++expect;
            if (start != expect) {
                throw GenerationError(where + ": segments must be contiguous on business days");
            }
        }
    }
}

} // namespace

double solve_mix_weight(double target_ic, double noise_scale, double hetero_strength,
                        int universe_size) {
    if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) {
        throw GenerationError("noise_scale must be positive");
    }
    if (!std::isfinite(target_ic) || std::abs(target_ic) > 1.0) {
        throw GenerationError("target_ic must lie in [-1, 1]");
    }
    if (universe_size < 20) throw GenerationError("universe_size must be at least 20");
    if (target_ic == 0.0) return 0.0;

    const double want = std::abs(target_ic);
    const auto n = static_cast<std::size_t>(universe_size);

    std::mt19937_64 eng(kCalibSeed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> z_blocks(kCalibBlocks), eta_blocks(kCalibBlocks);
    for (int b = 0; b < kCalibBlocks; ++b) {
        z_blocks[static_cast<std::size_t>(b)].resize(n);
        eta_blocks[static_cast<std::size_t>(b)].resize(n);
        for (std::size_t i = 0; i < n; ++i) z_blocks[static_cast<std::size_t>(b)][i] = normal(eng);
        for (std::size_t i = 0; i < n; ++i) eta_blocks[static_cast<std::size_t>(b)][i] = normal(eng);
    }

    std::vector<double> scratch;
    const double at_max = calib_mean_ic(1.0, noise_scale, hetero_strength, z_blocks, eta_blocks, scratch);
    if (want > at_max - 1e-3) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "target_ic %.4f unreachable at noise_scale %.4f (max attainable %.4f)",
                      target_ic, noise_scale, at_max);
        throw GenerationError(buf);
    }

    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < kBisectIters; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double got = calib_mean_ic(mid, noise_scale, hetero_strength, z_blocks, eta_blocks, scratch);
        if (got < want) lo = mid;
        else hi = mid;
    }
    const double w = 0.5 * (lo + hi);
    return target_ic < 0.0 ? -w : w;
}

Panel generate(const RegimeScript& script) {
    validate_script(script);

    const int universe = script.universe_size;
    const auto n_assets = static_cast<std::size_t>(universe);

    // Per-date segment index over the contiguous business-day calendar.
    std::vector<std::string> all_dates;
    std::vector<std::size_t> seg_of_date;
    for (std::size_t k = 0; k < script.segments.size(); ++k) {
        const auto days = dates::business_days(script.segments[k].start_date,
                                               script.segments[k].end_date);
        if (days.empty()) {
            throw GenerationError("segment " + std::to_string(k + 1) +
                                  " contains no business days");
        }
        for (const auto& d : days) {
            all_dates.push_back(d);
            seg_of_date.push_back(k);
        }
    }
    const std::size_t n_dates = all_dates.size();

    // One copula weight per segment; coupling (when enabled) scales efficacy
    // down with the segment's stress level.
    std::vector<double> seg_weight(script.segments.size());
    std::vector<double> seg_secondary_noise(script.segments.size());
    for (std::size_t k = 0; k < script.segments.size(); ++k) {
        const auto& seg = script.segments[k];
        const double eff_target =
            script.couple_stress_efficacy ? seg.target_ic * (1.0 - seg.stress_level)
                                          : seg.target_ic;
        seg_weight[k] =
            solve_mix_weight(eff_target, seg.noise_scale, script.hetero_strength, universe);
        // Secondary model diverges as efficacy fades: mild noise in healthy
        // regimes, heavy noise once the edge is gone.
        seg_secondary_noise[k] = 0.3 + 1.2 * std::clamp((0.35 - eff_target) / 0.7, 0.0, 1.0);
    }

    StreamSet streams(script.seed);

    std::vector<std::string> assets(n_assets);
    std::vector<double> base_vol(n_assets), base_adv(n_assets);
    for (std::size_t i = 0; i < n_assets; ++i) {
        assets[i] = asset_id(static_cast<int>(i));
        base_vol[i] = 0.18 * std::exp(0.35 * streams.draw(kStreamAssetStatic));
        base_adv[i] = 3.0e6 * std::exp(1.0 * streams.draw(kStreamAssetStatic));
    }

    const double z_denom = std::sqrt(1.0 + kScoreObsNoise * kScoreObsNoise);
    const std::array<double, 3> ret_scale = {
        kRetScale20, kRetScale20 * std::sqrt(60.0 / 20.0), kRetScale20 * std::sqrt(90.0 / 20.0)};

    std::vector<CrossSection> sections;
    sections.reserve(n_dates);
    std::vector<double> scores(n_assets);
    double market_ar = 0.0;

    for (std::size_t p = 0; p < n_dates; ++p) {
        const std::size_t k = seg_of_date[p];
        const auto& seg = script.segments[k];
        const double w = seg_weight[k];

        // Market state is a single sequential stream so stress evolves
        // smoothly across segment boundaries.
        market_ar = 0.9 * market_ar + 0.1 * streams.draw(kStreamMarket);
        const double stress = clamp01(seg.stress_level + 0.5 * market_ar, 0.01, 0.99);
        const double market_vol = std::max(0.01, 0.10 + 0.18 * stress + 0.02 * streams.draw(kStreamMarket));
        const double market_ret = 0.01 * (0.5 - stress) + 0.02 * streams.draw(kStreamMarket);
        const double regime_enc = stress < 0.33 ? 2.0 : (stress < 0.66 ? 1.0 : 0.0);
        const double market_shock = streams.draw(kStreamMarket);
        const double beta2 = clamp01(0.12 + 0.6 * stress, 0.05, 0.9);

        CrossSection cs;
        cs.date = all_dates[p];
        cs.members.resize(n_assets);

        for (std::size_t i = 0; i < n_assets; ++i) {
            AssetDay& row = cs.members[i];
            row.asset = assets[i];

            const double q = streams.draw(kStreamScore);
            const double eps = streams.draw(kStreamScore);
            const double score = q + kScoreObsNoise * eps;
            const double z = score / z_denom;
            const double m = extremity_multiplier(z, script.hetero_strength);
            row.score_primary = score;
            scores[i] = score;

            const double zeta = streams.draw(kStreamSecondary);
            row.score_secondary = script.emit_secondary
                                      ? score + seg_secondary_noise[k] * zeta
                                      : stats::missing();

            const std::array<double, 3> eta = {streams.draw(kStreamRet20),
                                               streams.draw(kStreamRet60),
                                               streams.draw(kStreamRet90)};
            for (std::size_t h = 0; h < kHorizons.size(); ++h) {
                const auto horizon = static_cast<std::size_t>(kHorizons[h]);
                // Exit price beyond the panel end: the return never matures.
                if (p + horizon >= n_dates) {
                    row.fwd_ret[h] = stats::missing();
                } else {
                    const double y = w * z + seg.noise_scale * m * eta[h];
                    row.fwd_ret[h] = ret_scale[h] * y;
                }
            }

            row.features[static_cast<std::size_t>(feature_index("mom_1m"))] =
                0.04 * streams.draw(kStreamDayJitter);
            row.features[static_cast<std::size_t>(feature_index("mom_3m"))] =
                0.08 * streams.draw(kStreamDayJitter);
            row.features[static_cast<std::size_t>(feature_index("mom_12m"))] =
                0.18 * streams.draw(kStreamDayJitter);
            row.features[static_cast<std::size_t>(feature_index("vol_20d"))] =
                base_vol[i] * std::exp(0.12 * streams.draw(kStreamDayJitter));
            row.features[static_cast<std::size_t>(feature_index("vol_60d"))] =
                base_vol[i] * std::exp(0.08 * streams.draw(kStreamDayJitter));
            row.features[static_cast<std::size_t>(feature_index("adv_20d"))] =
                base_adv[i] * std::exp(0.25 * streams.draw(kStreamDayJitter));
            row.features[static_cast<std::size_t>(feature_index("vix_percentile_252d"))] = stress;
            row.features[static_cast<std::size_t>(feature_index("market_regime_enc"))] = regime_enc;
            row.features[static_cast<std::size_t>(feature_index("market_vol_21d"))] = market_vol;
            row.features[static_cast<std::size_t>(feature_index("market_return_21d"))] = market_ret;
            row.features[static_cast<std::size_t>(feature_index("sector_enc"))] =
                static_cast<double>(i % 8);

            const double xi = streams.draw(kStreamRet1d);
            row.features[static_cast<std::size_t>(feature_index("ret_1d"))] =
                kRet1dScale * (std::sqrt(beta2) * market_shock + std::sqrt(1.0 - beta2) * xi);
        }

        const auto ranks = stats::percentile_rank(scores);
        const auto rank_col = static_cast<std::size_t>(feature_index("cross_sectional_rank"));
        for (std::size_t i = 0; i < n_assets; ++i) cs.members[i].features[rank_col] = ranks[i];

        sections.push_back(std::move(cs));
    }

    return Panel(std::move(sections));
}

std::vector<double> realized_ic_profile(const Panel& panel, int horizon) {
    const auto h = static_cast<std::size_t>(horizon_index(horizon));
    std::vector<double> out(panel.n_dates(), stats::missing());
    std::vector<double> s, r;
    for (std::size_t p = 0; p < panel.n_dates(); ++p) {
        s.clear();
        r.clear();
        for (const auto& row : panel.section(p).members) {
            if (stats::is_missing(row.score_primary) || stats::is_missing(row.fwd_ret[h])) continue;
            s.push_back(row.score_primary);
            r.push_back(row.fwd_ret[h]);
        }
        const auto ic = stats::try_spearman(s, r);
        if (ic) out[p] = *ic;
    }
    return out;
}

RegimeScript build_script(const std::string& start_date, const std::vector<SegmentSpec>& specs,
                          int universe_size, std::uint64_t seed) {
    if (specs.empty()) throw GenerationError("build_script: no segments");
    long total = 0;
    for (const auto& s : specs) {
        if (s.n_days < 1) throw GenerationError("build_script: segment length must be positive");
        total += s.n_days;
    }
    const long start_serial = dates::to_serial(start_date);
    const std::string far_end = dates::from_serial(start_serial + 2 * total + 14);
    const auto days = dates::business_days(start_date, far_end);
    if (static_cast<long>(days.size()) < total) {
        throw GenerationError("build_script: internal calendar too short");
    }

    RegimeScript script;
    script.universe_size = universe_size;
    script.seed = seed;
    std::size_t off = 0;
    for (const auto& s : specs) {
        RegimeSegment seg;
        seg.start_date = days[off];
        seg.end_date = days[off + static_cast<std::size_t>(s.n_days) - 1];
        seg.target_ic = s.target_ic;
        seg.noise_scale = s.noise_scale;
        seg.stress_level = s.stress_level;
        script.segments.push_back(std::move(seg));
        off += static_cast<std::size_t>(s.n_days);
    }
    return script;
}

RegimeScript default_script(std::uint64_t seed) {
    return build_script("2016-02-01",
                        {{270, 0.30, 1.00, 0.35},
                         {260, 0.18, 1.15, 0.55},
                         {250, 0.28, 1.00, 0.30}},
                        60, seed);
}

RegimeScript collapse_script(std::uint64_t seed) {
    return build_script("2016-02-01",
                        {{300, 0.30, 1.00, 0.48},
                         {240, -0.10, 1.10, 0.50},
                         {240, 0.25, 1.00, 0.46}},
                        60, seed);
}

} // namespace rankguard
