#include "rankguard/gate.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace rankguard::gate {

namespace {

void validate_config(const GateConfig& c) {
    if (!(c.halflife > 0.0)) throw ConfigError("gate: halflife must be positive");
    if (c.min_periods < 1) throw ConfigError("gate: min_periods must be >= 1");
    if (!(c.theta > 0.0 && c.theta < 1.0)) throw ConfigError("gate: theta outside (0,1)");
    const double wsum = c.drift_weights[0] + c.drift_weights[1] + c.drift_weights[2];
    if (std::fabs(wsum - 1.0) > 1e-12) throw ConfigError("gate: drift weights must sum to 1");
    for (double w : c.drift_weights) {
        if (!(w >= 0.0)) throw ConfigError("gate: drift weights must be non-negative");
    }
    if (c.drift_feature_window < 1 || c.score_ref_window < 1 || c.corr_window < 1) {
        throw ConfigError("gate: windows must be >= 1");
    }
    if (c.horizon_lag < 0) throw ConfigError("gate: negative horizon lag");
}

std::string format_cell(double v) {
    if (stats::is_missing(v)) return {};
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double gate_level(double health) { return std::clamp((health - 0.3) / 0.4, 0.0, 1.0); }

std::vector<double> rank_ic_series(const Panel& panel, int horizon) {
    const auto h_idx = static_cast<std::size_t>(horizon_index(horizon));
    std::vector<double> ic(panel.n_dates(), stats::missing());
    std::vector<double> scores;
    std::vector<double> rets;
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        scores.clear();
        rets.clear();
        for (const auto& row : panel.section(t).members) {
            if (stats::is_missing(row.score_primary) || stats::is_missing(row.fwd_ret[h_idx])) {
                continue;
            }
            scores.push_back(row.score_primary);
            rets.push_back(row.fwd_ret[h_idx]);
        }
        if (const auto rho = stats::try_spearman(scores, rets)) ic[t] = *rho;
    }
    return ic;
}

std::vector<double> matured_ic_stream(std::span<const double> ic, int tau) {
    if (tau < 0) throw ConfigError("matured_ic_stream: negative lag");
    std::vector<double> out(ic.size(), stats::missing());
    for (std::size_t t = static_cast<std::size_t>(tau); t < ic.size(); ++t) {
        out[t] = ic[t - static_cast<std::size_t>(tau)];
    }
    return out;
}

std::vector<double> h_real_series(std::span<const double> matured_ic, double halflife,
                                  int min_periods) {
    return stats::ewma(matured_ic, halflife, min_periods);
}

namespace {

// Cross-sectional mean of one feature per date; NaN when no finite cells.
std::vector<double> feature_mean_series(const Panel& panel, std::string_view name) {
    std::vector<double> out(panel.n_dates(), stats::missing());
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& row : panel.section(t).members) {
            const double v = row.feature(name);
            if (!stats::is_missing(v)) {
                sum += v;
                ++n;
            }
        }
        if (n > 0) out[t] = sum / static_cast<double>(n);
    }
    return out;
}

std::vector<double> feat_drift_series(const Panel& panel, const GateConfig& config) {
    std::vector<std::vector<double>> means;
    means.reserve(kDriftFeatures.size());
    for (const auto name : kDriftFeatures) means.push_back(feature_mean_series(panel, name));

    const auto w = static_cast<std::size_t>(config.drift_feature_window);
    std::vector<double> out(panel.n_dates(), stats::missing());
    std::vector<double> window;
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        double sum_abs_z = 0.0;
        std::size_t defined = 0;
        for (const auto& series : means) {
            if (stats::is_missing(series[t])) continue;
            window.clear();
            const std::size_t lo = t > w ? t - w : 0;
            for (std::size_t u = lo; u < t; ++u) {
                if (!stats::is_missing(series[u])) window.push_back(series[u]);
            }
            if (window.size() < static_cast<std::size_t>(config.min_periods)) continue;
            const double mu = stats::mean(window);
            const double sd = std::max(stats::sample_std(window), 1e-9);
            sum_abs_z += std::fabs((series[t] - mu) / sd);
            ++defined;
        }
        if (defined > 0) out[t] = sum_abs_z / static_cast<double>(defined);
    }
    return out;
}

std::vector<double> score_drift_series(const Panel& panel, const GateConfig& config) {
    const auto w = static_cast<std::size_t>(config.score_ref_window);
    std::vector<double> out(panel.n_dates(), stats::missing());
    std::vector<double> today;
    std::vector<double> reference;
    for (std::size_t t = w; t < panel.n_dates(); ++t) {
        today.clear();
        for (const auto& row : panel.section(t).members) {
            if (!stats::is_missing(row.score_primary)) today.push_back(row.score_primary);
        }
        if (today.empty()) continue;
        reference.clear();
        for (std::size_t u = t - w; u < t; ++u) {
            for (const auto& row : panel.section(u).members) {
                if (!stats::is_missing(row.score_primary)) reference.push_back(row.score_primary);
            }
        }
        if (reference.empty()) continue;
        out[t] = stats::ks_two_sample(today, reference);
    }
    return out;
}

std::vector<double> corr_spike_series(const Panel& panel, const GateConfig& config) {
    const auto w = static_cast<std::size_t>(config.corr_window);
    std::vector<double> out(panel.n_dates(), stats::missing());
    std::vector<std::vector<double>> centered;  // per kept asset, demeaned window
    std::vector<double> norms;
    for (std::size_t t = w - 1; t < panel.n_dates(); ++t) {
        centered.clear();
        norms.clear();
        for (const auto& row : panel.section(t).members) {
            std::vector<double> rets;
            rets.reserve(w);
            bool full = true;
            for (std::size_t u = t + 1 - w; u <= t; ++u) {
                const AssetDay* day = panel.section(u).find(row.asset);
                const double r = day ? day->feature("ret_1d") : stats::missing();
                if (stats::is_missing(r)) {
                    full = false;
                    break;
                }
                rets.push_back(r);
            }
            if (!full) continue;
            const double mu = stats::mean(rets);
            double ss = 0.0;
            for (auto& r : rets) {
                r -= mu;
                ss += r * r;
            }
            // Constant return series carries no correlation; the floor also
            // rejects float-noise residue around an exactly flat series.
            const double sd = std::sqrt(ss / static_cast<double>(w - 1));
            if (sd < 1e-9) continue;
            centered.push_back(std::move(rets));
            norms.push_back(std::sqrt(ss));
        }
        if (centered.size() < 2) continue;
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < centered.size(); ++i) {
            for (std::size_t j = i + 1; j < centered.size(); ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < w; ++k) dot += centered[i][k] * centered[j][k];
                sum += dot / (norms[i] * norms[j]);
                ++pairs;
            }
        }
        out[t] = sum / static_cast<double>(pairs);
    }
    return out;
}

} // namespace

std::vector<double> h_drift_series(const Panel& panel, const GateConfig& config) {
    validate_config(config);
    const auto feat = feat_drift_series(panel, config);
    const auto score = score_drift_series(panel, config);
    const auto corr = corr_spike_series(panel, config);

    std::vector<double> out(panel.n_dates(), stats::missing());
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        const std::array<double, 3> parts = {feat[t], score[t], corr[t]};
        double wsum = 0.0;
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            if (stats::is_missing(parts[k])) continue;
            acc += config.drift_weights[k] * parts[k];
            wsum += config.drift_weights[k];
        }
        if (wsum > 0.0) out[t] = acc / wsum;
    }
    return out;
}

std::vector<double> h_disagree_series(const Panel& panel) {
    bool has_secondary = false;
    for (std::size_t t = 0; t < panel.n_dates() && !has_secondary; ++t) {
        for (const auto& row : panel.section(t).members) {
            if (!stats::is_missing(row.score_secondary)) {
                has_secondary = true;
                break;
            }
        }
    }

    std::vector<double> out(panel.n_dates(), stats::missing());
    if (has_secondary) {
        std::vector<double> prim;
        std::vector<double> sec;
        for (std::size_t t = 0; t < panel.n_dates(); ++t) {
            prim.clear();
            sec.clear();
            for (const auto& row : panel.section(t).members) {
                if (stats::is_missing(row.score_primary) ||
                    stats::is_missing(row.score_secondary)) {
                    continue;
                }
                prim.push_back(row.score_primary);
                sec.push_back(row.score_secondary);
            }
            if (const auto rho = stats::try_spearman(prim, sec)) out[t] = 1.0 - *rho;
        }
        return out;
    }

    // Single-model fallback: score dispersion against its expanding mean.
    double disp_sum = 0.0;
    std::size_t disp_n = 0;
    std::vector<double> scores;
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        scores.clear();
        for (const auto& row : panel.section(t).members) {
            if (!stats::is_missing(row.score_primary)) scores.push_back(row.score_primary);
        }
        if (scores.size() < 2) continue;
        const double disp = stats::sample_std(scores);
        disp_sum += disp;
        ++disp_n;
        const double mean_disp = disp_sum / static_cast<double>(disp_n);
        if (mean_disp < 1e-12) {
            if (disp < 1e-12) out[t] = 0.0;
            continue;
        }
        out[t] = std::fabs(disp / mean_disp - 1.0);
    }
    return out;
}

std::vector<GatePoint> health_and_gate(std::span<const double> matured_ic,
                                       std::span<const double> h_real,
                                       std::span<const double> h_drift,
                                       std::span<const double> h_disagree,
                                       const GateConfig& config) {
    validate_config(config);
    const std::size_t n = h_real.size();
    if (matured_ic.size() != n || h_drift.size() != n || h_disagree.size() != n) {
        throw InvalidValue("health_and_gate: component series length mismatch");
    }
    const auto z_real = stats::expanding_zscore(h_real, config.min_periods);
    const auto z_drift = stats::expanding_zscore(h_drift, config.min_periods);
    const auto z_disagree = stats::expanding_zscore(h_disagree, config.min_periods);

    std::vector<GatePoint> points(n);
    for (std::size_t t = 0; t < n; ++t) {
        if (stats::is_missing(h_real[t])) continue;  // warm-up: point stays undefined
        GatePoint& p = points[t];
        p.matured_ic = matured_ic[t];
        p.h_real = h_real[t];
        p.h_drift = h_drift[t];
        p.h_disagree = h_disagree[t];
        p.z_real = z_real[t];
        p.z_drift = z_drift[t];
        p.z_disagree = z_disagree[t];
        const double zr = stats::is_missing(z_real[t]) ? 0.0 : z_real[t];
        const double zd = stats::is_missing(z_drift[t]) ? 0.0 : z_drift[t];
        const double zs = stats::is_missing(z_disagree[t]) ? 0.0 : z_disagree[t];
        p.h_raw = zr - config.alpha * zd - config.beta * zs;
        p.health = sigmoid(p.h_raw);
        p.g = gate_level(p.health);
        p.defined = true;
        p.active = p.g >= config.theta;
    }
    return points;
}

std::vector<GatePoint> gate_series(const Panel& panel, const GateConfig& config) {
    validate_config(config);
    const auto ic = rank_ic_series(panel, config.horizon_lag);
    const auto matured = matured_ic_stream(ic, config.horizon_lag);
    const auto real = h_real_series(matured, config.halflife, config.min_periods);
    const auto drift = h_drift_series(panel, config);
    const auto disagree = h_disagree_series(panel);
    return health_and_gate(matured, real, drift, disagree, config);
}

GateEvaluation evaluate_gate(std::span<const double> predictor, std::span<const double> ic,
                             double theta) {
    if (predictor.size() != ic.size()) throw InvalidValue("evaluate_gate: length mismatch");
    std::vector<double> pred;
    std::vector<double> target_ic;
    std::vector<int> good;
    for (std::size_t t = 0; t < predictor.size(); ++t) {
        if (stats::is_missing(predictor[t]) || stats::is_missing(ic[t])) continue;
        pred.push_back(predictor[t]);
        target_ic.push_back(ic[t]);
        good.push_back(ic[t] > 0.0 ? 1 : 0);
    }
    if (pred.size() < 8) throw DataError("evaluate_gate: fewer than 8 usable dates");

    GateEvaluation eval;
    eval.n_days = pred.size();
    eval.auroc = stats::auroc(pred, good);  // throws UndefinedAUROC on one class

    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool act = pred[i] >= theta;
        if (act && good[i]) ++eval.tp;
        if (act && !good[i]) ++eval.fp;
        if (!act && good[i]) ++eval.fn;
        if (!act && !good[i]) ++eval.tn;
    }
    const auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? stats::missing()
                        : static_cast<double>(num) / static_cast<double>(den);
    };
    eval.precision = ratio(eval.tp, eval.tp + eval.fp);
    eval.recall = ratio(eval.tp, eval.tp + eval.fn);
    eval.abstention = ratio(eval.tn + eval.fn, eval.n_days);

    // Quartile buckets by predictor rank, ties broken by date order.
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pred[a] != pred[b]) return pred[a] < pred[b];
        return a < b;
    });
    const std::size_t base = order.size() / 4;
    const std::size_t rem = order.size() % 4;
    std::size_t start = 0;
    std::array<double, 4> bucket_pos{};
    std::array<double, 4> bucket_ic{};
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t count = base + (q < rem ? 1 : 0);
        GateBucket& b = eval.buckets[q];
        b.count = count;
        double sum_pred = 0.0;
        double sum_ic = 0.0;
        std::size_t bad = 0;
        for (std::size_t k = start; k < start + count; ++k) {
            const std::size_t i = order[k];
            sum_pred += pred[i];
            sum_ic += target_ic[i];
            if (!good[i]) ++bad;
        }
        b.mean_predictor = sum_pred / static_cast<double>(count);
        b.mean_ic = sum_ic / static_cast<double>(count);
        b.frac_bad = static_cast<double>(bad) / static_cast<double>(count);
        bucket_pos[q] = static_cast<double>(q + 1);
        bucket_ic[q] = b.mean_ic;
        start += count;
    }
    const auto rho = stats::try_spearman(bucket_ic, bucket_pos);
    eval.bucket_spearman = rho ? *rho : stats::missing();
    return eval;
}

VixGateBaseline vix_gate_baseline(std::span<const double> stress, int window, double percentile,
                                  int ref_window) {
    if (window < 1) throw ConfigError("vix_gate_baseline: window must be >= 1");
    if (!(percentile > 0.0 && percentile < 1.0)) {
        throw ConfigError("vix_gate_baseline: percentile outside (0,1)");
    }
    if (ref_window < 1) throw ConfigError("vix_gate_baseline: ref window must be >= 1");

    const std::size_t n = stress.size();
    VixGateBaseline out;
    out.exceed.assign(n, stats::missing());
    out.frac_exceeded.assign(n, stats::missing());
    out.active.assign(n, true);

    std::vector<double> trailing;
    for (std::size_t t = 0; t < n; ++t) {
        if (stats::is_missing(stress[t])) continue;
        trailing.clear();
        const std::size_t lo = t + 1 > static_cast<std::size_t>(ref_window)
                                   ? t + 1 - static_cast<std::size_t>(ref_window)
                                   : 0;
        for (std::size_t u = lo; u <= t; ++u) {
            if (!stats::is_missing(stress[u])) trailing.push_back(stress[u]);
        }
        const double threshold = stats::quantile(trailing, percentile);
        out.exceed[t] = stress[t] > threshold ? 1.0 : 0.0;
    }
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo =
            t + 1 > static_cast<std::size_t>(window) ? t + 1 - static_cast<std::size_t>(window) : 0;
        std::size_t defined = 0;
        std::size_t exceeded = 0;
        for (std::size_t u = lo; u <= t; ++u) {
            if (stats::is_missing(out.exceed[u])) continue;
            ++defined;
            if (out.exceed[u] > 0.5) ++exceeded;
        }
        if (defined == 0) continue;  // no evidence: stay active
        const double frac = static_cast<double>(exceeded) / static_cast<double>(defined);
        out.frac_exceeded[t] = frac;
        out.active[t] = frac <= 0.5;
    }
    return out;
}

void export_gate_csv(const std::string& path, const TradingCalendar& calendar,
                     std::span<const GatePoint> points) {
    if (points.size() != calendar.size()) {
        throw InvalidValue("export_gate_csv: points not aligned to calendar");
    }
    std::ofstream out(path);
    if (!out) throw DataError("export_gate_csv: cannot open " + path);
    out << "date,matured_ic,h_real,h_drift,h_disagree,H,G,active\n";
    for (std::size_t t = 0; t < points.size(); ++t) {
        const GatePoint& p = points[t];
        out << calendar.date(t) << ',' << format_cell(p.matured_ic) << ','
            << format_cell(p.h_real) << ',' << format_cell(p.h_drift) << ','
            << format_cell(p.h_disagree) << ',' << format_cell(p.health) << ','
            << format_cell(p.g) << ',';
        if (p.defined) out << (p.active ? '1' : '0');
        out << '\n';
    }
    if (!out) throw DataError("export_gate_csv: write failed for " + path);
}

} // namespace rankguard::gate
