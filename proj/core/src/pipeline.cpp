#include "rankguard/pipeline.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rankguard::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::string_view kToolVersion = "0.1.0";

fs::path ensure_dir(const std::string& out_dir) {
    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("run: cannot create output directory '" + out_dir + "'");
    return dir;
}

void write_text(const fs::path& dir, const std::string& name, const std::string& text,
                std::vector<std::string>& files) {
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("run: cannot write '" + path.string() + "'");
    out << text << '\n';
    if (!out) throw DataError("run: failed while writing '" + path.string() + "'");
    files.push_back(name);
}

Panel load_input(const config::RunConfig& cfg) {
    if (cfg.script) {
        RegimeScript script = *cfg.script;
        script.seed = cfg.seed;  // master seed drives the generator
        return generate(script);
    }
    return ingest_csv(*cfg.csv_path);
}

// First FINAL date position; both halves must be non-empty.
std::size_t split_position(const TradingCalendar& calendar, const std::string& iso) {
    const auto& dates = calendar.dates();
    const auto it = std::lower_bound(dates.begin(), dates.end(), iso);
    const auto pos = static_cast<std::size_t>(it - dates.begin());
    if (pos == 0 || pos >= dates.size()) {
        throw ConfigError("config: 'dev_final_split' (" + iso +
                          ") must fall strictly inside the panel's date range");
    }
    return pos;
}

// --- signal quality ---------------------------------------------------------

struct IcSummary {
    double mean = kNaN;
    double med = kNaN;
    double stability = kNaN;  // mean / sample std of the per-date series
    std::size_t n = 0;
};

IcSummary summarize_ic(std::span<const double> ic, std::size_t lo, std::size_t hi) {
    std::vector<double> v;
    for (std::size_t t = lo; t < hi && t < ic.size(); ++t) {
        if (!std::isnan(ic[t])) v.push_back(ic[t]);
    }
    IcSummary s;
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = stats::mean(v);
    s.med = stats::median(v);
    if (v.size() >= 2) {
        const double sd = stats::sample_std(v);
        s.stability = sd > 0.0 ? s.mean / sd : kNaN;
    }
    return s;
}

json ic_summary_json(const IcSummary& s) {
    return {{"mean_rankic", s.mean},
            {"median_rankic", s.med},
            {"ic_stability", s.stability},
            {"n_dates", s.n}};
}

// --- per-date / per-record feature views ------------------------------------

std::vector<double> feature_mean_by_date(const Panel& panel, std::string_view name) {
    std::vector<double> out(panel.n_dates(), kNaN);
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& m : panel.section(t).members) {
            const double v = m.feature(name);
            if (!std::isnan(v)) {
                sum += v;
                ++n;
            }
        }
        if (n > 0) out[t] = sum / static_cast<double>(n);
    }
    return out;
}

std::vector<double> feature_by_record(const Panel& panel, const LabelSet& labels,
                                      std::string_view name) {
    std::vector<double> out(labels.records.size(), kNaN);
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        const auto& r = labels.records[i];
        const auto& member =
            panel.section(r.date_pos).members[r.row_id - panel.row_offset(r.date_pos)];
        out[i] = member.feature(name);
    }
    return out;
}

std::vector<double> broadcast_by_record(const LabelSet& labels,
                                        std::span<const double> by_date) {
    std::vector<double> out(labels.records.size(), kNaN);
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        out[i] = by_date[labels.records[i].date_pos];
    }
    return out;
}

// --- uncertainty stack -------------------------------------------------------

struct UqStack {
    std::size_t split_pos = 0;
    std::size_t rec_split = 0;  // first record index in the FINAL half
    LabelSet labels;
    std::vector<FoldPlan> folds;
    std::vector<double> scores, abs_scores, loss;  // by record
    deup::GxResult gx;
    std::vector<double> a_oracle, a_pit, a_exp;       // by date
    std::vector<double> ehat_oracle, ehat_pit, ehat;  // by record; ehat = configured mode
    std::vector<double> vol_rec;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::vector<double> ic;  // per-date rank IC at the uncertainty horizon
    std::vector<gate::GatePoint> points;       // full health composite
    std::vector<gate::GatePoint> points_real;  // realized-efficacy-only health
    std::vector<std::size_t> schedule;         // month starts whose labels mature in-sample
};

UqStack build_uq_stack(const Panel& panel, const config::RunConfig& cfg,
                       std::vector<std::string>& warnings) {
    UqStack s;
    s.split_pos = split_position(panel.calendar(), cfg.dev_final_split);
    s.labels = make_rank_labels(panel, cfg.uq_horizon);
    if (s.labels.records.empty()) {
        throw DataError("run: no labeled rows at the uncertainty horizon");
    }
    s.rec_split = static_cast<std::size_t>(
        std::lower_bound(s.labels.records.begin(), s.labels.records.end(), s.split_pos,
                         [](const RankLossRecord& r, std::size_t pos) {
                             return r.date_pos < pos;
                         }) -
        s.labels.records.begin());

    s.folds = walk_forward_folds(panel.n_dates(), cfg.folds.n_folds, cfg.folds.embargo_days,
                                 cfg.uq_horizon, cfg.folds.min_train_folds);
    s.scores = deup::primary_scores(panel, s.labels);
    s.abs_scores.resize(s.scores.size());
    std::transform(s.scores.begin(), s.scores.end(), s.abs_scores.begin(),
                   [](double v) { return std::fabs(v); });
    s.loss.resize(s.labels.records.size());
    for (std::size_t i = 0; i < s.labels.records.size(); ++i) {
        s.loss[i] = s.labels.records[i].loss;
    }

    const deup::GxMatrix features = deup::build_gx_features(panel, s.labels, s.scores);
    gbt::GbtConfig gx_cfg = cfg.gx;
    gx_cfg.seed = cfg.seed;  // master seed also drives the per-fold models
    s.gx = deup::train_gx_walkforward(features, s.labels, s.folds, gx_cfg);
    warnings.insert(warnings.end(), s.gx.warnings.begin(), s.gx.warnings.end());

    deup::AleatoricConfig base = cfg.aleatoric;
    base.dev_end_pos = s.split_pos;
    const auto with_mode = [&](deup::AleatoricMode m) {
        deup::AleatoricConfig c = base;
        c.mode = m;
        return c;
    };
    s.a_oracle = deup::aleatoric_baseline(panel, s.labels,
                                          with_mode(deup::AleatoricMode::kOracle));
    s.a_pit = deup::aleatoric_baseline(panel, s.labels,
                                       with_mode(deup::AleatoricMode::kPitRolling));
    s.a_exp = deup::aleatoric_baseline(panel, s.labels,
                                       with_mode(deup::AleatoricMode::kExpanding));

    s.ehat_oracle =
        deup::epistemic_series(s.gx.g_by_record, broadcast_by_record(s.labels, s.a_oracle));
    s.ehat_pit =
        deup::epistemic_series(s.gx.g_by_record, broadcast_by_record(s.labels, s.a_pit));
    switch (cfg.aleatoric.mode) {
        case deup::AleatoricMode::kOracle: s.ehat = s.ehat_oracle; break;
        case deup::AleatoricMode::kPitRolling: s.ehat = s.ehat_pit; break;
        case deup::AleatoricMode::kExpanding:
            s.ehat = deup::epistemic_series(s.gx.g_by_record,
                                            broadcast_by_record(s.labels, s.a_exp));
            break;
        case deup::AleatoricMode::kTier0Iqr:
            s.ehat = deup::epistemic_series(
                s.gx.g_by_record,
                broadcast_by_record(s.labels, deup::aleatoric_baseline(panel, s.labels, base)));
            break;
    }

    s.vol_rec = conformal::vol_normalizer_values(panel, s.labels);
    s.ranges = deup::record_date_ranges(s.labels);

    s.ic = gate::rank_ic_series(panel, cfg.uq_horizon);
    gate::GateConfig gate_cfg = cfg.gate;
    gate_cfg.horizon_lag = cfg.uq_horizon;
    const auto matured = gate::matured_ic_stream(s.ic, gate_cfg.horizon_lag);
    const auto h_real = gate::h_real_series(matured, gate_cfg.halflife, gate_cfg.min_periods);
    const auto h_drift = gate::h_drift_series(panel, gate_cfg);
    const auto h_disagree = gate::h_disagree_series(panel);
    s.points = gate::health_and_gate(matured, h_real, h_drift, h_disagree, gate_cfg);
    gate::GateConfig real_only = gate_cfg;
    real_only.alpha = 0.0;
    real_only.beta = 0.0;
    s.points_real = gate::health_and_gate(matured, h_real, h_drift, h_disagree, real_only);

    for (std::size_t pos : panel.calendar().month_start_positions()) {
        if (pos + static_cast<std::size_t>(cfg.uq_horizon) < panel.n_dates()) {
            s.schedule.push_back(pos);
        }
    }
    return s;
}

// --- DEV-frozen calibrations --------------------------------------------------

struct Calibrations {
    double c_vol = 0.1;
    double c_resid = 0.1;
    double ic_ref = 0.05;
    double lambda = 0.05;
    double tier0_c = kNaN;
};

policy::PolicySpec base_spec(policy::Variant v, const config::RunConfig& cfg,
                             const Calibrations& calib) {
    policy::PolicySpec spec = policy::default_spec(v);
    spec.legs = cfg.legs;
    spec.theta = cfg.gate.theta;
    spec.c_vol = calib.c_vol;
    spec.c_resid = calib.c_resid;
    spec.ic_ref = calib.ic_ref;
    spec.lambda = calib.lambda;
    return spec;
}

portfolio::PortfolioPath slice_path(const portfolio::PortfolioPath& path, std::size_t lo,
                                    std::size_t hi) {
    portfolio::PortfolioPath out;
    for (const auto& e : path.entries) {
        if (e.date_pos >= lo && e.date_pos < hi) out.entries.push_back(e);
    }
    for (std::size_t i = 0; i < path.monthly.size(); ++i) {
        const std::size_t pos = path.monthly_positions[i];
        if (pos >= lo && pos < hi) {
            out.monthly.push_back(path.monthly[i]);
            out.monthly_positions.push_back(pos);
        }
    }
    return out;
}

double sharpe_or_nan(const portfolio::PortfolioPath& path, const TradingCalendar& calendar,
                     const std::optional<portfolio::CrisisWindow>& crisis,
                     portfolio::PerfReport* full, const std::string& label,
                     std::vector<std::string>& warnings) {
    try {
        portfolio::PerfReport report = portfolio::perf_report(path, calendar, crisis);
        if (full) *full = report;
        return report.sharpe_ann;
    } catch (const DataError& e) {
        warnings.push_back(label + ": " + e.what());
    } catch (const NumericalError& e) {
        warnings.push_back(label + ": " + e.what());
    }
    return kNaN;
}

Calibrations calibrate_on_dev(const Panel& panel, const UqStack& s,
                              const config::RunConfig& cfg,
                              std::vector<std::string>& warnings) {
    Calibrations calib;
    constexpr double kEps = 1e-6;
    try {
        calib.c_vol = policy::calibrate_c_vol(panel, s.split_pos, kEps);
    } catch (const std::runtime_error& e) {
        warnings.push_back(std::string("calibrate c_vol: ") + e.what() + "; keeping 0.1");
    }
    try {
        calib.c_resid =
            policy::calibrate_c_resid(panel, s.labels, s.ehat, s.split_pos, kEps);
    } catch (const std::runtime_error& e) {
        warnings.push_back(std::string("calibrate c_resid: ") + e.what() + "; keeping 0.1");
    }
    try {
        std::vector<double> matured(s.points.size(), kNaN);
        for (std::size_t t = 0; t < s.points.size(); ++t) {
            matured[t] = s.points[t].matured_ic;
        }
        calib.ic_ref = policy::calibrate_ic_ref(matured, s.split_pos);
    } catch (const std::runtime_error& e) {
        warnings.push_back(std::string("calibrate ic_ref: ") + e.what() + "; keeping 0.05");
    }
    try {
        deup::AleatoricConfig tier0 = cfg.aleatoric;
        tier0.dev_end_pos = s.split_pos;
        calib.tier0_c = deup::tier0_constant(panel, s.labels, tier0);
    } catch (const std::runtime_error& e) {
        warnings.push_back(std::string("calibrate tier0_c: ") + e.what());
    }

    // Uncertainty-adjusted sort strength: DEV Sharpe argmax over the fixed
    // grid, first (smallest) winner on ties; held windows stay inside DEV.
    std::vector<std::size_t> dev_schedule;
    for (std::size_t pos : s.schedule) {
        if (pos + static_cast<std::size_t>(cfg.uq_horizon) <= s.split_pos) {
            dev_schedule.push_back(pos);
        }
    }
    double best = kNaN;
    const portfolio::SimConfig sim{cfg.uq_horizon, cfg.cost_bps};
    for (double lambda : policy::kLambdaGrid) {
        policy::PolicySpec spec = base_spec(policy::Variant::kGateUaSort, cfg, calib);
        spec.lambda = lambda;
        try {
            const auto result = policy::apply_policy(panel, s.labels, s.ehat, s.points,
                                                     dev_schedule, spec);
            const auto path = portfolio::simulate(panel, result.rebalances, sim);
            const auto perf = portfolio::perf_report(path, panel.calendar(), std::nullopt);
            if (std::isnan(best) || perf.sharpe_ann > best) {
                best = perf.sharpe_ann;
                calib.lambda = lambda;
            }
        } catch (const DataError&) {
        } catch (const NumericalError&) {
        }
    }
    if (std::isnan(best)) {
        warnings.push_back("calibrate lambda: DEV Sharpe undefined on the whole grid; "
                           "keeping 0.05");
    }
    return calib;
}

json calibrations_json(const Calibrations& calib, const config::RunConfig& cfg,
                       const UqStack& s) {
    return {{"c_vol", calib.c_vol},
            {"c_resid", calib.c_resid},
            {"ic_ref", calib.ic_ref},
            {"lambda", calib.lambda},
            {"tier0_c", calib.tier0_c},
            {"dev_final_split", cfg.dev_final_split},
            {"split_position", s.split_pos},
            {"fitted_on", "dev"}};
}

// --- gate evaluation ----------------------------------------------------------

// Aggregates of the per-record series over each labeled date.
struct DateAggregates {
    std::vector<double> med, p90, iqr;
};

DateAggregates aggregate_by_date(const Panel& panel, const UqStack& s,
                                 std::span<const double> by_record) {
    DateAggregates agg;
    agg.med.assign(panel.n_dates(), kNaN);
    agg.p90.assign(panel.n_dates(), kNaN);
    agg.iqr.assign(panel.n_dates(), kNaN);
    for (const auto& [lo, hi] : s.ranges) {
        std::vector<double> v;
        for (std::size_t i = lo; i < hi; ++i) {
            if (!std::isnan(by_record[i])) v.push_back(by_record[i]);
        }
        if (v.empty()) continue;
        const std::size_t t = s.labels.records[lo].date_pos;
        agg.med[t] = stats::median(v);
        agg.p90[t] = stats::quantile(v, 0.90);
        agg.iqr[t] = stats::quantile(v, 0.75) - stats::quantile(v, 0.25);
    }
    return agg;
}

// Health-defined dates only; residual predictor gaps inside the mask are
// zero-filled so every row scores the same date set.
json build_gate_json(const Panel& panel, const UqStack& s, const config::RunConfig& cfg,
                     std::vector<std::string>& warnings) {
    const std::size_t n = panel.n_dates();
    std::vector<double> ic_all(n, kNaN);
    for (std::size_t t = 0; t < n; ++t) {
        if (s.points[t].defined && !std::isnan(s.ic[t])) ic_all[t] = s.ic[t];
    }
    std::vector<double> ic_final = ic_all;
    std::fill(ic_final.begin(), ic_final.begin() + static_cast<long>(s.split_pos), kNaN);

    const auto zero_fill = [](std::vector<double> v) {
        for (double& x : v) {
            if (std::isnan(x)) x = 0.0;
        }
        return v;
    };

    json rows = json::array();
    gate::GateEvaluation g_all{};
    bool g_all_ok = false;
    const auto eval_row = [&](const std::string& name, std::vector<double> predictor,
                              double theta, bool keep_operating) {
        predictor = zero_fill(std::move(predictor));
        json row;
        row["name"] = name;
        row["auroc_all"] = kNaN;
        row["auroc_final"] = kNaN;
        row["n_all"] = 0;
        row["n_final"] = 0;
        try {
            const auto e = gate::evaluate_gate(predictor, ic_all, theta);
            row["auroc_all"] = e.auroc;
            row["n_all"] = e.n_days;
            if (keep_operating) {
                g_all = e;
                g_all_ok = true;
            }
        } catch (const std::runtime_error& e) {
            warnings.push_back("gate eval " + name + " (all): " + e.what());
        }
        try {
            const auto e = gate::evaluate_gate(predictor, ic_final, theta);
            row["auroc_final"] = e.auroc;
            row["n_final"] = e.n_days;
        } catch (const std::runtime_error& e) {
            warnings.push_back("gate eval " + name + " (final): " + e.what());
        }
        rows.push_back(std::move(row));
    };

    std::vector<double> health(n, kNaN), gate_g(n, kNaN), health_real(n, kNaN);
    for (std::size_t t = 0; t < n; ++t) {
        if (s.points[t].defined) {
            health[t] = s.points[t].health;
            gate_g[t] = s.points[t].g;
        }
        if (s.points_real[t].defined) health_real[t] = s.points_real[t].health;
    }
    const auto vix_mean = feature_mean_by_date(panel, "vix_percentile_252d");
    const auto mvol_mean = feature_mean_by_date(panel, "market_vol_21d");
    const auto svol_mean = feature_mean_by_date(panel, "vol_20d");
    // Sign conventions keep every predictor oriented higher = better day.
    std::vector<double> one_minus_vix(n, kNaN), neg_mvol(n, kNaN), neg_svol(n, kNaN);
    for (std::size_t t = 0; t < n; ++t) {
        if (!std::isnan(vix_mean[t])) one_minus_vix[t] = 1.0 - vix_mean[t];
        if (!std::isnan(mvol_mean[t])) neg_mvol[t] = -mvol_mean[t];
        if (!std::isnan(svol_mean[t])) neg_svol[t] = -svol_mean[t];
    }
    const DateAggregates ehat_agg = aggregate_by_date(panel, s, s.ehat);

    eval_row("health", health, cfg.gate.theta, false);
    eval_row("gate_g", gate_g, cfg.gate.theta, true);
    eval_row("health_real_only", health_real, cfg.gate.theta, false);
    eval_row("one_minus_vix_percentile", one_minus_vix, 0.5, false);
    eval_row("neg_market_vol_21d", neg_mvol, 0.5, false);
    eval_row("neg_mean_stock_vol_20d", neg_svol, 0.5, false);
    eval_row("ehat_median", ehat_agg.med, 0.5, false);
    eval_row("ehat_p90", ehat_agg.p90, 0.5, false);
    eval_row("ehat_iqr", ehat_agg.iqr, 0.5, false);

    // Stress-percentile abstention rule, scored as a binary predictor.
    const auto vix_rule = gate::vix_gate_baseline(vix_mean, 21);
    std::vector<double> rule(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) rule[t] = vix_rule.active[t] ? 1.0 : 0.0;
    eval_row("vix_gate_rule", rule, 0.5, false);

    json out;
    out["rows"] = std::move(rows);
    if (g_all_ok) {
        out["operating_point"] = {{"theta", cfg.gate.theta},
                                  {"precision", g_all.precision},
                                  {"recall", g_all.recall},
                                  {"abstention", g_all.abstention},
                                  {"tp", g_all.tp},
                                  {"fp", g_all.fp},
                                  {"tn", g_all.tn},
                                  {"fn", g_all.fn}};
        json buckets = json::array();
        for (const auto& b : g_all.buckets) {
            buckets.push_back({{"count", b.count},
                               {"mean_g", b.mean_predictor},
                               {"mean_rankic", b.mean_ic},
                               {"frac_bad", b.frac_bad}});
        }
        out["buckets"] = std::move(buckets);
        out["bucket_spearman"] = g_all.bucket_spearman;
    } else {
        out["operating_point"] = nullptr;
        out["buckets"] = nullptr;
        out["bucket_spearman"] = kNaN;
    }
    return out;
}

// --- conformal ----------------------------------------------------------------

json build_conformal_json(const Panel& panel, const UqStack& s,
                          const config::RunConfig& cfg, const fs::path& dir,
                          std::vector<std::string>& files,
                          std::vector<std::string>& warnings) {
    json rows = json::array();
    const std::vector<double> no_values;
    for (const conformal::Normalizer n : cfg.conformal.normalizers) {
        conformal::ConformalConfig cc;
        cc.nominal = cfg.conformal.nominal;
        cc.calib_window_days = cfg.conformal.window;
        cc.normalizer = n;
        cc.horizon_lag = cfg.uq_horizon;
        cc.min_scores = cfg.conformal.min_scores;
        std::span<const double> values;
        switch (n) {
            case conformal::Normalizer::kRaw: values = no_values; break;
            case conformal::Normalizer::kVol: values = s.vol_rec; break;
            case conformal::Normalizer::kDeupOracle: values = s.ehat_oracle; break;
            case conformal::Normalizer::kDeupPit: values = s.ehat_pit; break;
        }
        const std::string name(conformal::normalizer_name(n));
        const auto set = conformal::run_conformal(s.labels, values, cc);
        conformal::export_intervals_csv((dir / ("intervals_" + name + ".csv")).string(),
                                        panel.calendar(), s.labels, set);
        files.push_back("intervals_" + name + ".csv");

        json row;
        row["normalizer"] = name;
        row["n_intervals"] = set.intervals.size();
        row["skipped"] = set.skipped;
        row["marginal"] = kNaN;
        row["tercile_low"] = kNaN;
        row["tercile_mid"] = kNaN;
        row["tercile_high"] = kNaN;
        row["spread"] = kNaN;
        row["mean_width"] = kNaN;
        row["n_rows"] = 0;
        row["n_tercile_rows"] = 0;
        try {
            const auto report = conformal::coverage_report(set, s.labels, s.ehat);
            row["marginal"] = report.marginal;
            row["tercile_low"] = report.tercile[0];
            row["tercile_mid"] = report.tercile[1];
            row["tercile_high"] = report.tercile[2];
            row["spread"] = report.spread;
            row["mean_width"] = report.mean_width;
            row["n_rows"] = report.n_rows;
            row["n_tercile_rows"] = report.n_tercile_rows;
        } catch (const DataError& e) {
            warnings.push_back("conformal " + name + ": " + e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- uncertainty diagnostics ----------------------------------------------------

json quintiles_json(std::span<const double> ehat, std::span<const double> loss,
                    const std::string& label, std::vector<std::string>& warnings) {
    try {
        const auto table = deup::quintile_table(ehat, loss);
        return {{"mean_loss", table.mean_loss},
                {"counts", table.counts},
                {"q5_q1", table.q5_q1},
                {"spearman_of_means", table.spearman_of_means}};
    } catch (const std::runtime_error& e) {
        warnings.push_back("quintiles " + label + ": " + e.what());
        return nullptr;
    }
}

json dominance_json(const std::vector<deup::DominanceRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"name", r.name}, {"mean_rho", r.mean_rho}, {"n_dates", r.n_dates}});
    }
    return out;
}

json build_uncertainty_json(const Panel& panel, const UqStack& s,
                            const config::RunConfig& cfg,
                            std::vector<std::string>& warnings) {
    json out;
    out["horizon"] = cfg.uq_horizon;
    out["records"] = s.labels.records.size();
    out["folds_planned"] = s.folds.size();
    out["folds_trained"] = s.gx.folds_trained;
    out["aleatoric_mode"] = std::string(config::aleatoric_mode_name(cfg.aleatoric.mode));

    json importance = json::array();
    for (const auto& imp : s.gx.importance) {
        importance.push_back({{"feature", imp.feature}, {"split_count", imp.split_count}});
    }
    out["importance"] = std::move(importance);

    const auto coupling = deup::coupling_series(s.ehat, s.abs_scores, s.ranges);
    std::size_t n_defined = 0;
    for (double rho : coupling.rho_by_date) {
        if (!std::isnan(rho)) ++n_defined;
    }
    out["coupling"] = {{"median_rho", coupling.median},
                       {"frac_positive", coupling.frac_positive},
                       {"n_dates", n_defined}};

    const std::span<const double> ehat(s.ehat), loss(s.loss);
    out["quintiles"] = {
        {"dev", quintiles_json(ehat.subspan(0, s.rec_split), loss.subspan(0, s.rec_split),
                               "dev", warnings)},
        {"final", quintiles_json(ehat.subspan(s.rec_split), loss.subspan(s.rec_split),
                                 "final", warnings)}};

    const auto vix_rec = feature_by_record(panel, s.labels, "vix_percentile_252d");
    const std::vector<std::pair<std::string, std::span<const double>>> candidates = {
        {"ehat", s.ehat},
        {"g_raw", s.gx.g_by_record},
        {"vol_20d", s.vol_rec},
        {"vix_percentile", vix_rec},
        {"abs_score", s.abs_scores}};
    std::vector<std::pair<std::size_t, std::size_t>> final_ranges;
    for (const auto& r : s.ranges) {
        if (s.labels.records[r.first].date_pos >= s.split_pos) final_ranges.push_back(r);
    }
    out["dominance"] = {
        {"all", dominance_json(deup::baseline_dominance_table(candidates, s.loss, s.ranges))},
        {"final",
         dominance_json(deup::baseline_dominance_table(candidates, s.loss, final_ranges))}};
    return out;
}

// --- policies -------------------------------------------------------------------

json policy_row_json(const std::string& name, const portfolio::PortfolioPath& path,
                     const std::vector<policy::RebalanceWeights>& rebalances,
                     const Panel& panel, const config::RunConfig& cfg, std::size_t split_pos,
                     std::vector<std::string>& warnings) {
    json row;
    row["variant"] = name;
    portfolio::PerfReport all{};
    const double sharpe_all = sharpe_or_nan(path, panel.calendar(), cfg.crisis, &all,
                                            "policy " + name + " (all)", warnings);
    row["sharpe_all"] = sharpe_all;
    if (!std::isnan(sharpe_all)) {
        row["crisis_max_dd"] = all.crisis_max_dd;
        row["max_dd"] = all.max_dd;
        row["ann_return"] = all.ann_return;
        row["ann_vol"] = all.ann_vol;
        row["mean_turnover"] = all.mean_turnover;
    } else {
        row["crisis_max_dd"] = kNaN;
        row["max_dd"] = kNaN;
        row["ann_return"] = kNaN;
        row["ann_vol"] = kNaN;
        row["mean_turnover"] = kNaN;
    }
    row["sharpe_dev"] =
        sharpe_or_nan(slice_path(path, 0, split_pos), panel.calendar(), std::nullopt, nullptr,
                      "policy " + name + " (dev)", warnings);
    row["sharpe_final"] =
        sharpe_or_nan(slice_path(path, split_pos, panel.n_dates()), panel.calendar(),
                      std::nullopt, nullptr, "policy " + name + " (final)", warnings);
    row["n_months"] = path.monthly.size();
    std::size_t abstained = 0;
    for (const auto& r : rebalances) {
        if (!r.active) ++abstained;
    }
    row["n_abstained"] = abstained;
    return row;
}

bool same_bits(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

// Oracle vs point-in-time noise floor under the capped deployment policy: the
// cap keys on the within-date order of ehat, which a per-date floor shift
// preserves wherever enough of the cross-section stays strictly positive.
json build_ablation_json(const Panel& panel, const UqStack& s, const config::RunConfig& cfg,
                         const Calibrations& calib, std::vector<std::string>& warnings) {
    const policy::PolicySpec spec =
        base_spec(policy::Variant::kGateVolEhatCap, cfg, calib);
    const portfolio::SimConfig sim{cfg.uq_horizon, cfg.cost_bps};
    const auto res_oracle =
        policy::apply_policy(panel, s.labels, s.ehat_oracle, s.points, s.schedule, spec);
    const auto res_pit =
        policy::apply_policy(panel, s.labels, s.ehat_pit, s.points, s.schedule, spec);
    const auto path_oracle = portfolio::simulate(panel, res_oracle.rebalances, sim);
    const auto path_pit = portfolio::simulate(panel, res_pit.rebalances, sim);

    bool caps_same = res_oracle.rebalances.size() == res_pit.rebalances.size();
    if (caps_same) {
        for (std::size_t i = 0; i < res_oracle.rebalances.size(); ++i) {
            const auto& a = res_oracle.rebalances[i];
            const auto& b = res_pit.rebalances[i];
            if (a.active != b.active || a.capped_assets != b.capped_assets) {
                caps_same = false;
                break;
            }
        }
    }
    bool pnl_same = path_oracle.entries.size() == path_pit.entries.size();
    if (pnl_same) {
        for (std::size_t i = 0; i < path_oracle.entries.size(); ++i) {
            const auto& a = path_oracle.entries[i];
            const auto& b = path_pit.entries[i];
            if (!same_bits(a.net, b.net) || !same_bits(a.gross, b.gross) ||
                !same_bits(a.turnover, b.turnover)) {
                pnl_same = false;
                break;
            }
        }
    }

    json rows = json::array();
    rows.push_back(policy_row_json("gate_vol_ehat_cap[ehat=oracle]", path_oracle,
                                   res_oracle.rebalances, panel, cfg, s.split_pos, warnings));
    rows.push_back(policy_row_json("gate_vol_ehat_cap[ehat=pit]", path_pit,
                                   res_pit.rebalances, panel, cfg, s.split_pos, warnings));
    return {{"rows", std::move(rows)},
            {"capped_sets_identical", caps_same},
            {"pnl_identical", pnl_same}};
}

// --- manifest -------------------------------------------------------------------

json panel_json(const Panel& panel) {
    std::size_t max_universe = 0;
    for (const auto& sec : panel.sections()) {
        max_universe = std::max(max_universe, sec.members.size());
    }
    return {{"n_dates", panel.n_dates()},
            {"n_rows", panel.n_rows()},
            {"first_date", panel.n_dates() ? panel.calendar().date(0) : ""},
            {"last_date", panel.n_dates() ? panel.calendar().date(panel.n_dates() - 1) : ""},
            {"max_universe", max_universe}};
}

void write_manifest(const fs::path& dir, const config::RunConfig& cfg,
                    const std::string& command, std::vector<std::string>& files) {
    json manifest;
    manifest["format"] = 1;
    manifest["tool"] = "rankguard";
    manifest["version"] = std::string(kToolVersion);
    manifest["command"] = command;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = config::config_hash(cfg);
    manifest["config"] = json::parse(config::canonical_json(cfg));
    std::vector<std::string> listed = files;
    std::sort(listed.begin(), listed.end());
    manifest["files"] = listed;
    write_text(dir, "manifest.json", manifest.dump(2), files);
    std::sort(files.begin(), files.end());
}

} // namespace

// --- commands ---------------------------------------------------------------------

RunArtifacts cmd_generate(const config::RunConfig& cfg) {
    config::validate_run_config(cfg);
    if (!cfg.script) {
        throw ConfigError("config: 'generate' needs a script input; csv panels are "
                          "already materialized");
    }
    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    const fs::path dir = ensure_dir(cfg.out_dir);
    const Panel panel = load_input(cfg);
    emit_csv(panel, (dir / "panel.csv").string());
    art.files.push_back("panel.csv");

    json echo = json::parse(config::canonical_json(cfg)).at("input").at("script");
    echo["seed"] = cfg.seed;
    json script_doc;
    script_doc["script"] = std::move(echo);
    script_doc["panel"] = panel_json(panel);
    write_text(dir, "script.json", script_doc.dump(2), art.files);
    write_manifest(dir, cfg, "generate", art.files);
    return art;
}

RunArtifacts cmd_run(const config::RunConfig& cfg) {
    config::validate_run_config(cfg);
    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    const fs::path dir = ensure_dir(cfg.out_dir);
    const Panel panel = load_input(cfg);
    const UqStack s = build_uq_stack(panel, cfg, art.warnings);

    json summary;
    summary["panel"] = panel_json(panel);

    json signal_quality;
    for (const int h : cfg.horizons) {
        const auto ic = gate::rank_ic_series(panel, h);
        signal_quality[std::to_string(h)] = {
            {"all", ic_summary_json(summarize_ic(ic, 0, panel.n_dates()))},
            {"dev", ic_summary_json(summarize_ic(ic, 0, s.split_pos))},
            {"final", ic_summary_json(summarize_ic(ic, s.split_pos, panel.n_dates()))}};
    }
    summary["signal_quality"] = std::move(signal_quality);

    const Calibrations calib = calibrate_on_dev(panel, s, cfg, art.warnings);
    summary["calibrations"] = calibrations_json(calib, cfg, s);
    summary["uncertainty"] = build_uncertainty_json(panel, s, cfg, art.warnings);
    summary["gate"] = build_gate_json(panel, s, cfg, art.warnings);

    deup::export_uncertainty_csv((dir / "uncertainty.csv").string(), panel, s.labels,
                                 s.gx.g_by_record, s.a_oracle, s.a_pit, s.a_exp);
    art.files.push_back("uncertainty.csv");
    gate::export_gate_csv((dir / "gate.csv").string(), panel.calendar(), s.points);
    art.files.push_back("gate.csv");

    const portfolio::SimConfig sim{cfg.uq_horizon, cfg.cost_bps};
    json policy_rows = json::array();
    for (const policy::Variant v : cfg.policies) {
        const std::string name(policy::variant_name(v));
        const policy::PolicySpec spec = base_spec(v, cfg, calib);
        const auto result =
            policy::apply_policy(panel, s.labels, s.ehat, s.points, s.schedule, spec);
        art.warnings.insert(art.warnings.end(), result.warnings.begin(),
                            result.warnings.end());
        const auto path = portfolio::simulate(panel, result.rebalances, sim);
        art.warnings.insert(art.warnings.end(), path.warnings.begin(), path.warnings.end());
        policy_rows.push_back(policy_row_json(name, path, result.rebalances, panel, cfg,
                                              s.split_pos, art.warnings));
        policy::export_weights_csv((dir / ("weights_" + name + ".csv")).string(),
                                   panel.calendar(), result.rebalances);
        art.files.push_back("weights_" + name + ".csv");
        portfolio::export_path_csv((dir / ("path_" + name + ".csv")).string(),
                                   panel.calendar(), path);
        art.files.push_back("path_" + name + ".csv");
    }
    summary["policy_comparison"] = std::move(policy_rows);
    summary["deployability_ablation"] =
        build_ablation_json(panel, s, cfg, calib, art.warnings);
    summary["conformal"] =
        build_conformal_json(panel, s, cfg, dir, art.files, art.warnings);
    summary["warnings"] = art.warnings;

    write_text(dir, "summary.json", summary.dump(2), art.files);
    write_manifest(dir, cfg, "run", art.files);
    return art;
}

RunArtifacts cmd_eval_gate(const config::RunConfig& cfg) {
    config::validate_run_config(cfg);
    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    const fs::path dir = ensure_dir(cfg.out_dir);
    const Panel panel = load_input(cfg);
    const UqStack s = build_uq_stack(panel, cfg, art.warnings);

    json report;
    report["panel"] = panel_json(panel);
    report["gate"] = build_gate_json(panel, s, cfg, art.warnings);
    report["warnings"] = art.warnings;

    gate::export_gate_csv((dir / "gate.csv").string(), panel.calendar(), s.points);
    art.files.push_back("gate.csv");
    write_text(dir, "gate_report.json", report.dump(2), art.files);
    write_manifest(dir, cfg, "eval-gate", art.files);
    return art;
}

RunArtifacts cmd_conformal(const config::RunConfig& cfg) {
    config::validate_run_config(cfg);
    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    const fs::path dir = ensure_dir(cfg.out_dir);
    const Panel panel = load_input(cfg);
    const UqStack s = build_uq_stack(panel, cfg, art.warnings);

    json report;
    report["panel"] = panel_json(panel);
    report["conformal"] = build_conformal_json(panel, s, cfg, dir, art.files, art.warnings);
    report["warnings"] = art.warnings;

    write_text(dir, "conformal_report.json", report.dump(2), art.files);
    write_manifest(dir, cfg, "conformal", art.files);
    return art;
}

// --- report rendering ----------------------------------------------------------

namespace {

std::string fmt(const json& v, int prec = 3) {
    if (v.is_null()) return "-";
    if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isnan(d)) return "-";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*f", prec, d);
        return buf;
    }
    return v.dump();
}

const json* get_ptr(const json& j, const char* key) {
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

} // namespace

std::string render_report(const std::string& out_dir) {
    const fs::path path = fs::path(out_dir) / "summary.json";
    std::ifstream in(path);
    if (!in) throw DataError("report: cannot open '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception&) {
        throw DataError("report: '" + path.string() + "' is not valid JSON");
    }

    std::ostringstream out;
    out << "rankguard run report\n";
    out << "====================\n";
    if (const json* p = get_ptr(j, "panel")) {
        out << "panel: " << fmt((*p)["n_dates"]) << " dates, " << fmt((*p)["n_rows"])
            << " rows, " << fmt((*p)["first_date"]) << " .. " << fmt((*p)["last_date"])
            << "\n";
    }
    if (const json* c = get_ptr(j, "calibrations")) {
        out << "dev/final split: " << fmt((*c)["dev_final_split"]) << " (position "
            << fmt((*c)["split_position"]) << ")\n";
        out << "calibrations (frozen on dev): c_vol " << fmt((*c)["c_vol"]) << ", c_resid "
            << fmt((*c)["c_resid"]) << ", lambda " << fmt((*c)["lambda"]) << ", ic_ref "
            << fmt((*c)["ic_ref"]) << ", tier0_c " << fmt((*c)["tier0_c"]) << "\n";
    }

    if (const json* sq = get_ptr(j, "signal_quality")) {
        out << "\nsignal quality (per-date rank IC)\n";
        for (const auto& [h, periods] : sq->items()) {
            out << "  h=" << h << ":";
            for (const char* period : {"all", "dev", "final"}) {
                const json& p = periods.at(period);
                out << "  " << period << " mean " << fmt(p["mean_rankic"]) << " stab "
                    << fmt(p["ic_stability"], 2) << " (n=" << fmt(p["n_dates"]) << ")";
            }
            out << "\n";
        }
    }

    if (const json* u = get_ptr(j, "uncertainty")) {
        out << "\nuncertainty (h=" << fmt((*u)["horizon"]) << ", " << fmt((*u)["records"])
            << " records, " << fmt((*u)["folds_trained"]) << " folds trained)\n";
        if (const json* cp = get_ptr(*u, "coupling")) {
            out << "  coupling rho(ehat,|score|): median " << fmt((*cp)["median_rho"])
                << ", positive share " << fmt((*cp)["frac_positive"]) << " over "
                << fmt((*cp)["n_dates"]) << " dates\n";
        }
        if (const json* q = get_ptr(*u, "quintiles")) {
            for (const char* period : {"dev", "final"}) {
                const json& t = q->at(period);
                out << "  quintiles (" << period << "): ";
                if (t.is_null()) {
                    out << "-\n";
                    continue;
                }
                out << "mean loss";
                for (const auto& m : t.at("mean_loss")) out << " " << fmt(m);
                out << "  q5/q1 " << fmt(t["q5_q1"]) << "  spearman "
                    << fmt(t["spearman_of_means"], 2) << "\n";
            }
        }
        if (const json* d = get_ptr(*u, "dominance")) {
            out << "  dominance (mean per-date rho with realized loss):\n";
            for (const char* period : {"all", "final"}) {
                out << "    " << period << ":";
                for (const auto& row : d->at(period)) {
                    out << "  " << fmt(row["name"]) << " " << fmt(row["mean_rho"]);
                }
                out << "\n";
            }
        }
    }

    if (const json* g = get_ptr(j, "gate")) {
        out << "\nregime gate\n";
        if (const json* rows = get_ptr(*g, "rows")) {
            for (const auto& row : *rows) {
                out << "  " << fmt(row["name"]) << ": auroc all " << fmt(row["auroc_all"])
                    << " (n=" << fmt(row["n_all"]) << "), final " << fmt(row["auroc_final"])
                    << " (n=" << fmt(row["n_final"]) << ")\n";
            }
        }
        if (const json* op = get_ptr(*g, "operating_point"); op && !op->is_null()) {
            out << "  operating point at G>=" << fmt((*op)["theta"]) << ": precision "
                << fmt((*op)["precision"]) << ", recall " << fmt((*op)["recall"])
                << ", abstention " << fmt((*op)["abstention"]) << ", tp/fp/tn/fn "
                << fmt((*op)["tp"]) << "/" << fmt((*op)["fp"]) << "/" << fmt((*op)["tn"])
                << "/" << fmt((*op)["fn"]) << "\n";
        }
        if (const json* b = get_ptr(*g, "buckets"); b && !b->is_null()) {
            out << "  G quartiles (mean G | mean rank IC | bad-day share):";
            for (const auto& row : *b) {
                out << "  " << fmt(row["mean_g"], 2) << "|" << fmt(row["mean_rankic"])
                    << "|" << fmt(row["frac_bad"], 2);
            }
            out << "  spearman " << fmt((*g)["bucket_spearman"], 2) << "\n";
        }
    }

    if (const json* rows = get_ptr(j, "policy_comparison")) {
        out << "\npolicy comparison (monthly, annualized)\n";
        for (const auto& row : *rows) {
            out << "  " << fmt(row["variant"]) << ": sharpe all " << fmt(row["sharpe_all"])
                << ", dev " << fmt(row["sharpe_dev"]) << ", final "
                << fmt(row["sharpe_final"]) << ", max dd " << fmt(row["max_dd"])
                << ", crisis dd " << fmt(row["crisis_max_dd"]) << ", abstained "
                << fmt(row["n_abstained"]) << "/" << fmt(row["n_months"]) << "\n";
        }
    }

    if (const json* a = get_ptr(j, "deployability_ablation")) {
        out << "\ndeployability ablation (oracle vs point-in-time noise floor)\n";
        if (const json* rows = get_ptr(*a, "rows")) {
            for (const auto& row : *rows) {
                out << "  " << fmt(row["variant"]) << ": sharpe all "
                    << fmt(row["sharpe_all"]) << ", final " << fmt(row["sharpe_final"])
                    << "\n";
            }
        }
        out << "  capped sets identical: " << fmt((*a)["capped_sets_identical"])
            << ", pnl identical: " << fmt((*a)["pnl_identical"]) << "\n";
    }

    if (const json* rows = get_ptr(j, "conformal")) {
        out << "\nconformal coverage (nominal per config)\n";
        for (const auto& row : *rows) {
            out << "  " << fmt(row["normalizer"]) << ": marginal " << fmt(row["marginal"])
                << ", terciles " << fmt(row["tercile_low"]) << "/" << fmt(row["tercile_mid"])
                << "/" << fmt(row["tercile_high"]) << ", spread " << fmt(row["spread"])
                << ", mean width " << fmt(row["mean_width"]) << " (n="
                << fmt(row["n_rows"]) << ")\n";
        }
    }

    if (const json* w = get_ptr(j, "warnings"); w && w->is_array() && !w->empty()) {
        out << "\nwarnings: " << w->size() << "\n";
        for (const auto& msg : *w) out << "  - " << fmt(msg) << "\n";
    }
    return out.str();
}

} // namespace rankguard::pipeline
