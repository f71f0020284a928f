#include "rankguard/policy.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace rankguard::policy {

namespace {

std::string format_cell(double v) {
    if (stats::is_missing(v)) return {};
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void validate_spec(const PolicySpec& spec) {
    if (spec.legs < 1) throw ConfigError("policy: legs per side must be >= 1");
    if (!(spec.theta > 0.0) || !(spec.theta < 1.0)) {
        throw ConfigError("policy: gate threshold must lie in (0,1)");
    }
    if (!(spec.cap_percentile > 0.0) || !(spec.cap_percentile < 1.0)) {
        throw ConfigError("policy: cap percentile must lie in (0,1)");
    }
    if (!(spec.cap_weight > 0.0) || spec.cap_weight > 1.0) {
        throw ConfigError("policy: cap weight must lie in (0,1]");
    }
    if (spec.lambda < 0.0) throw ConfigError("policy: lambda must be >= 0");
    if (!(spec.epsilon > 0.0)) throw ConfigError("policy: epsilon must be > 0");
    if (!(spec.c_vol > 0.0)) throw ConfigError("policy: c_vol must be > 0");
    if (!(spec.c_resid > 0.0)) throw ConfigError("policy: c_resid must be > 0");
}

// First record index at or after date position t.
std::size_t lower_record(const LabelSet& labels, std::size_t t) {
    const auto it = std::lower_bound(
        labels.records.begin(), labels.records.end(), t,
        [](const RankLossRecord& r, std::size_t pos) { return r.date_pos < pos; });
    return static_cast<std::size_t>(it - labels.records.begin());
}

// Solve c by bisection so the median of min(1, c / denom_i) hits the target.
double bisect_scale(const std::vector<double>& denoms, double target,
                    const char* what) {
    if (denoms.empty()) throw DataError(std::string("policy: no DEV rows to calibrate ") + what);
    const auto median_mult = [&](double c) {
        std::vector<double> mult(denoms.size());
        for (std::size_t i = 0; i < denoms.size(); ++i) {
            mult[i] = std::min(1.0, c / denoms[i]);
        }
        return stats::median(mult);
    };
    double hi = 1e-6;
    int guard = 0;
    while (median_mult(hi) < target) {
        hi *= 2.0;
        if (++guard > 200) {
            throw NumericalError(std::string("policy: calibration bracket failed for ") + what);
        }
    }
    double lo = 0.0;
    for (int i = 0; i < 64; ++i) {
        const double mid = 0.5 * (lo + hi);
        (median_mult(mid) < target ? lo : hi) = mid;
    }
    return hi;
}

// Per-date OLS residuals of ehat on |score| over one cross-section. Returns
// false (all-NaN residuals untouched) when the date is singular or too small.
bool date_residuals(std::span<const double> ehat, std::span<const double> scores,
                    std::vector<double>& out) {
    std::vector<double> y;
    std::vector<double> x;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ehat.size(); ++i) {
        if (stats::is_missing(ehat[i]) || stats::is_missing(scores[i])) continue;
        y.push_back(ehat[i]);
        x.push_back(std::fabs(scores[i]));
        idx.push_back(i);
    }
    if (y.size() < 3) return false;
    std::vector<double> resid;
    try {
        resid = stats::ols_residualize(y, {x});
    } catch (const SingularDesign&) {
        return false;
    }
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = resid[k];
    return true;
}

struct DateInputs {
    std::vector<std::string> assets;
    std::vector<double> scores;
    std::vector<double> vols;
    std::vector<double> ehat;  // NaN where the row carries no label record
};

DateInputs gather_date(const Panel& panel, const LabelSet& labels,
                       std::span<const double> ehat_by_record, std::size_t t) {
    DateInputs in;
    const auto& members = panel.section(t).members;
    in.assets.reserve(members.size());
    in.scores.reserve(members.size());
    in.vols.reserve(members.size());
    in.ehat.assign(members.size(), stats::missing());
    std::size_t rec = lower_record(labels, t);
    const std::size_t rec_end = lower_record(labels, t + 1);
    for (std::size_t i = 0; i < members.size(); ++i) {
        in.assets.push_back(members[i].asset);
        in.scores.push_back(members[i].score_primary);
        in.vols.push_back(members[i].feature("vol_20d"));
        // Records and members are both sorted by asset within the date.
        while (rec < rec_end && labels.records[rec].asset < members[i].asset) ++rec;
        if (rec < rec_end && labels.records[rec].asset == members[i].asset) {
            in.ehat[i] = ehat_by_record[rec];
        }
    }
    return in;
}

} // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::kUngatedRaw: return "ungated_raw";
        case Variant::kGateRaw: return "gate_raw";
        case Variant::kGateVol: return "gate_vol";
        case Variant::kGateUaSort: return "gate_ua_sort";
        case Variant::kGateResidEhat: return "gate_resid_ehat";
        case Variant::kGateEhatCap: return "gate_ehat_cap";
        case Variant::kGateVolEhatCap: return "gate_vol_ehat_cap";
        case Variant::kTrailIcK4: return "trail_ic_k4";
    }
    throw InvalidValue("policy: unknown variant");
}

Variant variant_from_name(std::string_view name) {
    for (const Variant v :
         {Variant::kUngatedRaw, Variant::kGateRaw, Variant::kGateVol,
          Variant::kGateUaSort, Variant::kGateResidEhat, Variant::kGateEhatCap,
          Variant::kGateVolEhatCap, Variant::kTrailIcK4}) {
        if (variant_name(v) == name) return v;
    }
    throw ConfigError("policy: unknown variant name '" + std::string(name) + "'");
}

PolicySpec default_spec(Variant v) {
    PolicySpec spec;
    spec.variant = v;
    if (v == Variant::kGateEhatCap) {
        spec.cap_percentile = 0.90;
        spec.cap_weight = 0.50;
    }
    return spec;
}

double vol_multiplier(double vol_20d, double c_vol, double epsilon) {
    if (stats::is_missing(vol_20d)) return 1.0;
    if (vol_20d < 0.0) throw InvalidValue("policy: vol_20d must be >= 0");
    return std::min(1.0, c_vol / std::sqrt(vol_20d + epsilon));
}

UaSortKeys ua_sort(std::span<const double> scores, std::span<const double> ehat,
                   double lambda, bool flip_sign) {
    if (scores.size() != ehat.size()) {
        throw InvalidValue("policy: ua_sort input lengths differ");
    }
    if (lambda < 0.0) throw ConfigError("policy: lambda must be >= 0");
    const double sign = flip_sign ? -1.0 : 1.0;
    UaSortKeys keys;
    keys.long_key.resize(scores.size());
    keys.short_key.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double adj = stats::is_missing(ehat[i]) ? 0.0 : sign * lambda * ehat[i];
        keys.long_key[i] = scores[i] + adj;
        keys.short_key[i] = scores[i] - adj;
    }
    return keys;
}

SelectedLegs select_legs(std::span<const std::string> assets,
                         std::span<const double> long_key,
                         std::span<const double> short_key, int legs) {
    if (legs < 1) throw ConfigError("policy: legs per side must be >= 1");
    if (assets.size() != long_key.size() || assets.size() != short_key.size()) {
        throw InvalidValue("policy: select_legs input lengths differ");
    }
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < assets.size(); ++i) {
        if (!stats::is_missing(long_key[i]) && !stats::is_missing(short_key[i])) {
            eligible.push_back(i);
        }
    }
    const auto k = static_cast<std::size_t>(legs);
    if (eligible.size() < 2 * k) {
        throw InsufficientUniverse("policy: cross-section smaller than two legs");
    }
    SelectedLegs out;
    auto order = eligible;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (long_key[a] != long_key[b]) return long_key[a] > long_key[b];
        return assets[a] < assets[b];
    });
    out.long_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (short_key[a] != short_key[b]) return short_key[a] < short_key[b];
        return assets[a] < assets[b];
    });
    out.short_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

std::vector<std::size_t> ehat_cap_indices(std::span<const double> member_ehat,
                                          std::span<const double> cross_section_ehat,
                                          double percentile) {
    if (!(percentile > 0.0) || !(percentile < 1.0)) {
        throw ConfigError("policy: cap percentile must lie in (0,1)");
    }
    std::vector<double> defined;
    for (const double e : cross_section_ehat) {
        if (!stats::is_missing(e)) defined.push_back(e);
    }
    if (defined.empty()) return {};
    const double threshold = stats::quantile(defined, percentile);
    std::vector<std::size_t> capped;
    for (std::size_t i = 0; i < member_ehat.size(); ++i) {
        if (!stats::is_missing(member_ehat[i]) && member_ehat[i] > threshold) {
            capped.push_back(i);
        }
    }
    return capped;
}

double resid_multiplier(double residual, double c_resid, double epsilon) {
    if (stats::is_missing(residual)) return 1.0;
    return std::min(1.0, c_resid / std::sqrt(std::max(residual, 0.0) + epsilon));
}

double trail_ic_scale(double ewma_ic, double ic_ref) {
    if (!(ic_ref > 0.0)) throw ConfigError("policy: ic_ref must be > 0");
    if (stats::is_missing(ewma_ic)) return stats::missing();
    return std::clamp(ewma_ic / ic_ref, 0.0, 1.0);
}

double calibrate_c_vol(const Panel& panel, std::size_t dev_end_pos, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("policy: epsilon must be > 0");
    std::vector<double> denoms;
    for (std::size_t t = 0; t < std::min(dev_end_pos, panel.n_dates()); ++t) {
        for (const auto& row : panel.section(t).members) {
            const double v = row.feature("vol_20d");
            if (!stats::is_missing(v) && v >= 0.0) denoms.push_back(std::sqrt(v + epsilon));
        }
    }
    return bisect_scale(denoms, 0.70, "c_vol");
}

double calibrate_c_resid(const Panel& panel, const LabelSet& labels,
                         std::span<const double> ehat, std::size_t dev_end_pos,
                         double epsilon) {
    if (ehat.size() != labels.records.size()) {
        throw InvalidValue("policy: ehat not aligned with label records");
    }
    if (!(epsilon > 0.0)) throw ConfigError("policy: epsilon must be > 0");
    std::vector<double> denoms;
    for (std::size_t t = 0; t < std::min(dev_end_pos, panel.n_dates()); ++t) {
        const auto in = gather_date(panel, labels, ehat, t);
        std::vector<double> resid(in.ehat.size(), stats::missing());
        if (!date_residuals(in.ehat, in.scores, resid)) continue;
        for (const double r : resid) {
            if (!stats::is_missing(r)) denoms.push_back(std::sqrt(std::max(r, 0.0) + epsilon));
        }
    }
    return bisect_scale(denoms, 0.70, "c_resid");
}

double calibrate_ic_ref(std::span<const double> matured_ic, std::size_t dev_end_pos) {
    std::vector<double> positive;
    for (std::size_t t = 0; t < std::min(dev_end_pos, matured_ic.size()); ++t) {
        if (!stats::is_missing(matured_ic[t]) && matured_ic[t] > 0.0) {
            positive.push_back(matured_ic[t]);
        }
    }
    if (positive.empty()) {
        throw DataError("policy: no positive matured IC in DEV to calibrate ic_ref");
    }
    return stats::median(positive);
}

PolicyResult apply_policy(const Panel& panel, const LabelSet& labels,
                          std::span<const double> ehat,
                          std::span<const gate::GatePoint> gate_points,
                          std::span<const std::size_t> rebalance_positions,
                          const PolicySpec& spec) {
    validate_spec(spec);
    if (ehat.size() != labels.records.size()) {
        throw InvalidValue("policy: ehat not aligned with label records");
    }
    const bool needs_gate = spec.variant != Variant::kUngatedRaw;
    if (needs_gate && gate_points.size() != panel.n_dates()) {
        throw InvalidValue("policy: gate series not aligned with panel dates");
    }
    const bool vol_sized = spec.variant == Variant::kGateVol ||
                           spec.variant == Variant::kGateVolEhatCap;
    const bool capped = spec.variant == Variant::kGateEhatCap ||
                        spec.variant == Variant::kGateVolEhatCap;

    PolicyResult result;
    result.rebalances.reserve(rebalance_positions.size());
    for (const std::size_t t : rebalance_positions) {
        if (t >= panel.n_dates()) {
            throw InvalidValue("policy: rebalance position beyond panel end");
        }
        RebalanceWeights reb;
        reb.date_pos = t;

        double exposure_scale = 1.0;
        bool trade = true;
        if (spec.variant == Variant::kTrailIcK4) {
            const double scale = trail_ic_scale(gate_points[t].h_real, spec.ic_ref);
            if (stats::is_missing(scale) || scale <= 0.0) {
                trade = false;
            } else {
                exposure_scale = scale;
            }
        } else if (needs_gate) {
            trade = gate_points[t].defined && gate_points[t].g >= spec.theta;
        }
        if (!trade) {
            result.rebalances.push_back(std::move(reb));
            continue;
        }

        const auto in = gather_date(panel, labels, ehat, t);

        std::vector<double> long_key;
        std::vector<double> short_key;
        if (spec.variant == Variant::kGateUaSort) {
            auto keys = ua_sort(in.scores, in.ehat, spec.lambda, spec.ua_flip_sign);
            long_key = std::move(keys.long_key);
            short_key = std::move(keys.short_key);
        } else if (vol_sized) {
            long_key.resize(in.scores.size());
            for (std::size_t i = 0; i < in.scores.size(); ++i) {
                long_key[i] = in.scores[i] * vol_multiplier(in.vols[i], spec.c_vol,
                                                            spec.epsilon);
            }
            short_key = long_key;
        } else {
            long_key.assign(in.scores.begin(), in.scores.end());
            short_key = long_key;
        }

        SelectedLegs legs;
        try {
            legs = select_legs(in.assets, long_key, short_key, spec.legs);
        } catch (const InsufficientUniverse&) {
            result.warnings.push_back("date " + panel.calendar().date(t) +
                                      ": universe smaller than two legs; date skipped");
            result.rebalances.push_back(std::move(reb));
            continue;
        }

        std::vector<double> resid(in.ehat.size(), stats::missing());
        if (spec.variant == Variant::kGateResidEhat) {
            if (!date_residuals(in.ehat, in.scores, resid)) {
                result.warnings.push_back("date " + panel.calendar().date(t) +
                                          ": residual sizing infeasible; weights uncapped");
            }
        }

        const double base = 1.0 / static_cast<double>(spec.legs);
        const auto make_entry = [&](std::size_t i, double side) {
            WeightEntry e;
            e.asset = in.assets[i];
            e.raw_weight = side * base;
            double mult = exposure_scale;
            if (spec.variant == Variant::kGateResidEhat) {
                mult *= resid_multiplier(resid[i], spec.c_resid, spec.epsilon);
            }
            e.sized_weight = e.raw_weight * mult;
            e.final_weight = e.sized_weight;
            return e;
        };
        for (const std::size_t i : legs.long_idx) reb.longs.push_back(make_entry(i, 1.0));
        for (const std::size_t i : legs.short_idx) reb.shorts.push_back(make_entry(i, -1.0));

        if (capped) {
            bool all_defined = true;
            std::vector<double> member_ehat;
            for (const std::size_t i : legs.long_idx) member_ehat.push_back(in.ehat[i]);
            for (const std::size_t i : legs.short_idx) member_ehat.push_back(in.ehat[i]);
            for (const double e : member_ehat) {
                if (stats::is_missing(e)) {
                    all_defined = false;
                    break;
                }
            }
            if (!all_defined) {
                result.warnings.push_back("date " + panel.calendar().date(t) +
                                          ": ehat missing for a portfolio member; cap skipped");
            } else {
                const auto cap_idx =
                    ehat_cap_indices(member_ehat, in.ehat, spec.cap_percentile);
                const std::size_t n_long = reb.longs.size();
                for (const std::size_t m : cap_idx) {
                    WeightEntry& e = m < n_long ? reb.longs[m] : reb.shorts[m - n_long];
                    e.final_weight *= spec.cap_weight;
                    e.capped = true;
                    reb.capped_assets.push_back(e.asset);
                }
                std::sort(reb.capped_assets.begin(), reb.capped_assets.end());
                reb.capped_assets.erase(
                    std::unique(reb.capped_assets.begin(), reb.capped_assets.end()),
                    reb.capped_assets.end());
            }
        }

        for (const auto& e : reb.longs) reb.gross += std::fabs(e.final_weight);
        for (const auto& e : reb.shorts) reb.gross += std::fabs(e.final_weight);
        reb.active = true;
        result.rebalances.push_back(std::move(reb));
    }
    return result;
}

void export_weights_csv(const std::string& path, const TradingCalendar& calendar,
                        std::span<const RebalanceWeights> rebalances) {
    std::ofstream out(path);
    if (!out) throw DataError("policy: cannot open '" + path + "' for writing");
    out << "date,asset,side,raw_weight,sized_weight,capped_flag,final_weight\n";
    const auto write_entry = [&](const RebalanceWeights& reb, const WeightEntry& e,
                                 const char* side) {
        out << calendar.date(reb.date_pos) << ',' << e.asset << ',' << side << ','
            << format_cell(e.raw_weight) << ',' << format_cell(e.sized_weight) << ','
            << (e.capped ? '1' : '0') << ',' << format_cell(e.final_weight) << '\n';
    };
    for (const auto& reb : rebalances) {
        if (!reb.active) continue;
        for (const auto& e : reb.longs) write_entry(reb, e, "long");
        for (const auto& e : reb.shorts) write_entry(reb, e, "short");
    }
    if (!out) throw DataError("policy: failed writing '" + path + "'");
}

} // namespace rankguard::policy
