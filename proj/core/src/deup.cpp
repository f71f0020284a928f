#include "rankguard/deup.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rankguard::deup {

namespace {

const AssetDay& record_row(const Panel& panel, const RankLossRecord& rec) {
    const std::size_t member = rec.row_id - panel.row_offset(rec.date_pos);
    return panel.section(rec.date_pos).members.at(member);
}

double zero_filled(double v) { return stats::is_missing(v) ? 0.0 : v; }

// First record index whose date_pos is >= pos (records sorted by date_pos).
std::size_t lower_record(const std::vector<RankLossRecord>& records, std::size_t pos) {
    return static_cast<std::size_t>(
        std::lower_bound(records.begin(), records.end(), pos,
                         [](const RankLossRecord& r, std::size_t p) { return r.date_pos < p; }) -
        records.begin());
}

std::string format_cell(double v) {
    if (stats::is_missing(v)) return {};
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::vector<double> primary_scores(const Panel& panel, const LabelSet& labels) {
    std::vector<double> scores;
    scores.reserve(labels.records.size());
    for (const auto& rec : labels.records) scores.push_back(record_row(panel, rec).score_primary);
    return scores;
}

GxMatrix build_gx_features(const Panel& panel, const LabelSet& labels,
                           std::span<const double> scores) {
    if (scores.size() != labels.records.size()) {
        throw InvalidValue("build_gx_features: scores not aligned to label records");
    }
    GxMatrix m;
    m.names.assign(kGxFeatures.begin(), kGxFeatures.end());
    m.columns.assign(m.names.size(), std::vector<double>(labels.records.size(), 0.0));
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        const AssetDay& row = record_row(panel, labels.records[i]);
        const double s = zero_filled(scores[i]);
        m.columns[0][i] = s;
        m.columns[1][i] = std::fabs(s);
        for (std::size_t c = 2; c < m.names.size(); ++c) {
            m.columns[c][i] = zero_filled(row.feature(m.names[c]));
        }
    }
    return m;
}

std::vector<std::pair<std::size_t, std::size_t>> record_date_ranges(const LabelSet& labels) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t i = 0;
    while (i < labels.records.size()) {
        std::size_t j = i;
        while (j + 1 < labels.records.size() &&
               labels.records[j + 1].date_pos == labels.records[i].date_pos) {
            ++j;
        }
        ranges.emplace_back(i, j + 1);
        i = j + 1;
    }
    return ranges;
}

namespace {

struct FoldRows {
    std::vector<std::size_t> train;
    std::vector<std::size_t> predict;
};

FoldRows split_fold_rows(const LabelSet& labels, const FoldPlan& fold) {
    FoldRows rows;
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        const std::size_t p = labels.records[i].date_pos;
        if (fold.trainable(p)) rows.train.push_back(i);
        if (p >= fold.predict_begin && p < fold.predict_end) rows.predict.push_back(i);
    }
    return rows;
}

std::vector<std::vector<double>> subset_columns(const std::vector<std::vector<double>>& columns,
                                                const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> out(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        out[c].reserve(idx.size());
        for (std::size_t i : idx) out[c].push_back(columns[c][i]);
    }
    return out;
}

std::string fold_tag(int fold_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fold %d: ", fold_id);
    return buf;
}

} // namespace

GxResult train_gx_walkforward(const GxMatrix& features, const LabelSet& labels,
                              const std::vector<FoldPlan>& folds, const gbt::GbtConfig& config) {
    const std::size_t n = labels.records.size();
    for (const auto& col : features.columns) {
        if (col.size() != n) throw InvalidValue("train_gx_walkforward: feature rows != label rows");
    }

    GxResult result;
    result.g_by_record.assign(n, stats::missing());
    std::map<std::string, int> split_counts;

    for (const auto& fold : folds) {
        if (fold.horizon != labels.horizon) {
            throw ConfigError("train_gx_walkforward: fold horizon differs from label horizon");
        }
        if (!fold.emits_predictions) continue;
        const FoldRows rows = split_fold_rows(labels, fold);
        if (rows.predict.empty()) continue;
        if (rows.train.empty()) {
            result.warnings.push_back(fold_tag(fold.fold_id) +
                                      "no trainable labeled rows; fold skipped");
            continue;
        }

        std::vector<double> targets;
        targets.reserve(rows.train.size());
        for (std::size_t i : rows.train) targets.push_back(labels.records[i].loss);

        gbt::GbtConfig fold_config = config;
        fold_config.seed = config.seed + static_cast<std::uint64_t>(fold.fold_id);
        const gbt::GbtModel model = gbt::GbtModel::fit(
            features.names, subset_columns(features.columns, rows.train), targets, fold_config);
        for (const auto& w : model.warnings()) {
            result.warnings.push_back(fold_tag(fold.fold_id) + w);
        }

        const std::vector<double> preds =
            model.predict(features.names, subset_columns(features.columns, rows.predict));
        for (std::size_t k = 0; k < rows.predict.size(); ++k) {
            result.g_by_record[rows.predict[k]] = preds[k];
        }
        for (const auto& imp : model.feature_importance()) {
            split_counts[imp.feature] += imp.split_count;
        }
        ++result.folds_trained;
    }

    result.importance.reserve(split_counts.size());
    for (const auto& [name, count] : split_counts) result.importance.push_back({name, count});
    return result;
}

namespace {

void validate_aleatoric(const AleatoricConfig& config, int horizon) {
    if (!(config.quantile_level > 0.0 && config.quantile_level < 1.0)) {
        throw ConfigError("aleatoric_baseline: quantile_level outside (0,1)");
    }
    if (config.mode == AleatoricMode::kPitRolling && config.window < horizon) {
        throw ConfigError("aleatoric_baseline: pit_rolling window shorter than horizon");
    }
    if (config.window < 0) throw ConfigError("aleatoric_baseline: negative window");
    if (config.mode == AleatoricMode::kTier0Iqr && !(config.tier0_epsilon > 0.0)) {
        throw ConfigError("aleatoric_baseline: tier0 epsilon must be positive");
    }
}

// Per labeled date: (date position, quantile of that date's losses).
std::vector<std::pair<std::size_t, double>> per_date_quantiles(const LabelSet& labels, double q) {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& [begin, end] : record_date_ranges(labels)) {
        std::vector<double> losses;
        losses.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) losses.push_back(labels.records[i].loss);
        out.emplace_back(labels.records[begin].date_pos, stats::quantile(losses, q));
    }
    return out;
}

std::vector<double> oracle_floor(const Panel& panel, const LabelSet& labels, double q) {
    std::vector<double> a(panel.n_dates(), stats::missing());
    for (const auto& [pos, value] : per_date_quantiles(labels, q)) a[pos] = value;
    return a;
}

std::vector<double> pit_rolling_floor(const Panel& panel, const LabelSet& labels,
                                      const AleatoricConfig& config) {
    const auto tau = static_cast<std::ptrdiff_t>(labels.horizon);
    const auto w = static_cast<std::ptrdiff_t>(config.window);
    std::vector<double> a(panel.n_dates(), stats::missing());
    std::vector<double> pooled;
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(t) - tau;
        if (hi < 0) continue;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, hi - w);
        const std::size_t begin = lower_record(labels.records, static_cast<std::size_t>(lo));
        const std::size_t end = lower_record(labels.records, static_cast<std::size_t>(hi) + 1);
        if (begin == end) continue;
        pooled.clear();
        pooled.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) pooled.push_back(labels.records[i].loss);
        a[t] = stats::quantile(pooled, config.quantile_level);
    }
    return a;
}

std::vector<double> expanding_floor(const Panel& panel, const LabelSet& labels,
                                    const AleatoricConfig& config) {
    const auto dated = per_date_quantiles(labels, config.quantile_level);
    const auto tau = static_cast<std::ptrdiff_t>(labels.horizon);
    std::vector<double> a(panel.n_dates(), stats::missing());
    std::size_t matured = 0;  // dated[0..matured) have date_pos <= t - tau
    std::vector<double> window;
    for (std::size_t t = 0; t < panel.n_dates(); ++t) {
        const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(t) - tau;
        if (hi < 0) continue;
        while (matured < dated.size() &&
               static_cast<std::ptrdiff_t>(dated[matured].first) <= hi) {
            window.push_back(dated[matured].second);
            ++matured;
        }
        if (!window.empty()) a[t] = stats::median(window);
    }
    return a;
}

// Inverse spread of the date's realized forward returns; diagnostic, not PIT-safe.
std::vector<std::pair<std::size_t, double>> tier0_inverse_spread(
    const Panel& panel, const LabelSet& labels, double epsilon) {
    const int h_idx = horizon_index(labels.horizon);
    std::vector<std::pair<std::size_t, double>> inv_spread;
    std::vector<double> rets;
    for (const auto& [begin, end] : record_date_ranges(labels)) {
        rets.clear();
        for (std::size_t i = begin; i < end; ++i) {
            rets.push_back(record_row(panel, labels.records[i]).fwd_ret[h_idx]);
        }
        const double iqr = stats::quantile(rets, 0.75) - stats::quantile(rets, 0.25);
        inv_spread.emplace_back(labels.records[begin].date_pos, 1.0 / (iqr + epsilon));
    }
    return inv_spread;
}

double tier0_bisect(const std::vector<std::pair<std::size_t, double>>& inv_spread,
                    const LabelSet& labels, std::size_t dev_end_pos) {
    std::vector<double> dev_inv;
    std::vector<double> dev_losses;
    {
        const std::size_t end = lower_record(labels.records, dev_end_pos);
        dev_losses.reserve(end);
        for (std::size_t i = 0; i < end; ++i) dev_losses.push_back(labels.records[i].loss);
        for (const auto& [pos, inv] : inv_spread) {
            if (pos < dev_end_pos) dev_inv.push_back(inv);
        }
    }
    if (dev_inv.empty()) {
        throw ConfigError("aleatoric_baseline: tier0 needs labeled dates before dev_end_pos");
    }

    // median_t(c * inv_t) is monotone in c; bisect c to match the pooled
    // median loss on the calibration range.
    const double target = stats::median(dev_losses);
    std::vector<double> scaled(dev_inv.size());
    const auto floor_median = [&](double c) {
        for (std::size_t i = 0; i < dev_inv.size(); ++i) scaled[i] = c * dev_inv[i];
        return stats::median(scaled);
    };
    double c_hi = 1.0;
    while (floor_median(c_hi) < target && c_hi < 1e12) c_hi *= 2.0;
    double c_lo = 0.0;
    for (int iter = 0; iter < 64; ++iter) {
        const double mid = 0.5 * (c_lo + c_hi);
        (floor_median(mid) < target ? c_lo : c_hi) = mid;
    }
    return 0.5 * (c_lo + c_hi);
}

std::vector<double> tier0_floor(const Panel& panel, const LabelSet& labels,
                                const AleatoricConfig& config) {
    const auto inv_spread = tier0_inverse_spread(panel, labels, config.tier0_epsilon);
    const double c = tier0_bisect(inv_spread, labels, config.dev_end_pos);
    std::vector<double> a(panel.n_dates(), stats::missing());
    for (const auto& [pos, inv] : inv_spread) a[pos] = c * inv;
    return a;
}

} // namespace

std::vector<double> aleatoric_baseline(const Panel& panel, const LabelSet& labels,
                                       const AleatoricConfig& config) {
    validate_aleatoric(config, labels.horizon);
    switch (config.mode) {
        case AleatoricMode::kOracle: return oracle_floor(panel, labels, config.quantile_level);
        case AleatoricMode::kPitRolling: return pit_rolling_floor(panel, labels, config);
        case AleatoricMode::kExpanding: return expanding_floor(panel, labels, config);
        case AleatoricMode::kTier0Iqr: return tier0_floor(panel, labels, config);
    }
    throw ConfigError("aleatoric_baseline: unknown mode");
}

double tier0_constant(const Panel& panel, const LabelSet& labels,
                      const AleatoricConfig& config) {
    if (!(config.tier0_epsilon > 0.0)) {
        throw ConfigError("tier0_constant: tier0 epsilon must be positive");
    }
    return tier0_bisect(tier0_inverse_spread(panel, labels, config.tier0_epsilon), labels,
                        config.dev_end_pos);
}

double epistemic(double g, double a) {
    if (stats::is_missing(g) || stats::is_missing(a)) return stats::missing();
    return std::max(0.0, g - a);
}

std::vector<double> epistemic_series(std::span<const double> g, std::span<const double> a) {
    if (g.size() != a.size()) throw InvalidValue("epistemic_series: length mismatch");
    std::vector<double> e(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) e[i] = epistemic(g[i], a[i]);
    return e;
}

Tier2Result train_tier2_quantile(const Panel& panel, const LabelSet& labels,
                                 const std::vector<FoldPlan>& folds, gbt::GbtConfig config) {
    GxMatrix m;
    m.names.assign(kTier2Features.begin(), kTier2Features.end());
    m.columns.assign(m.names.size(), std::vector<double>(labels.records.size(), 0.0));
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        const AssetDay& row = record_row(panel, labels.records[i]);
        for (std::size_t c = 0; c < m.names.size(); ++c) {
            m.columns[c][i] = zero_filled(row.feature(m.names[c]));
        }
    }

    Tier2Result result;
    config.loss = gbt::Loss::kPinball;
    config.quantile = 0.25;
    GxResult lower = train_gx_walkforward(m, labels, folds, config);
    config.quantile = 0.75;
    config.seed += 500000;  // decorrelate the two quantile fits' subsampling
    GxResult upper = train_gx_walkforward(m, labels, folds, config);

    result.p25_by_record = std::move(lower.g_by_record);
    result.p75_by_record = std::move(upper.g_by_record);
    result.warnings = std::move(lower.warnings);
    for (auto& w : upper.warnings) result.warnings.push_back(std::move(w));
    return result;
}

QuintileTable quintile_table(std::span<const double> ehat, std::span<const double> loss) {
    if (ehat.size() != loss.size()) throw InvalidValue("quintile_table: length mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ehat.size(); ++i) {
        if (!stats::is_missing(ehat[i]) && !stats::is_missing(loss[i])) idx.push_back(i);
    }
    if (idx.size() < 50) throw DataError("quintile_table: fewer than 50 usable rows");
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (ehat[a] != ehat[b]) return ehat[a] < ehat[b];
        return a < b;
    });

    QuintileTable table;
    const std::size_t base = idx.size() / 5;
    const std::size_t rem = idx.size() % 5;
    std::size_t start = 0;
    std::array<double, 5> qpos{};
    for (std::size_t q = 0; q < 5; ++q) {
        const std::size_t count = base + (q < rem ? 1 : 0);
        double sum = 0.0;
        for (std::size_t k = start; k < start + count; ++k) sum += loss[idx[k]];
        table.counts[q] = count;
        table.mean_loss[q] = sum / static_cast<double>(count);
        qpos[q] = static_cast<double>(q + 1);
        start += count;
    }
    table.q5_q1 =
        table.mean_loss[0] > 0.0 ? table.mean_loss[4] / table.mean_loss[0] : stats::missing();
    const auto rho = stats::try_spearman(table.mean_loss, qpos);
    table.spearman_of_means = rho ? *rho : stats::missing();
    return table;
}

CouplingSeries coupling_series(std::span<const double> ehat, std::span<const double> abs_score,
                               const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges) {
    if (ehat.size() != abs_score.size()) throw InvalidValue("coupling_series: length mismatch");
    CouplingSeries series;
    series.rho_by_date.reserve(date_ranges.size());
    std::vector<double> defined;
    std::size_t positive = 0;
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& [begin, end] : date_ranges) {
        x.clear();
        y.clear();
        for (std::size_t i = begin; i < end; ++i) {
            if (!stats::is_missing(ehat[i]) && !stats::is_missing(abs_score[i])) {
                x.push_back(ehat[i]);
                y.push_back(abs_score[i]);
            }
        }
        const auto rho = stats::try_spearman(x, y);
        series.rho_by_date.push_back(rho ? *rho : stats::missing());
        if (rho) {
            defined.push_back(*rho);
            if (*rho > 0.0) ++positive;
        }
    }
    series.median = defined.empty() ? stats::missing() : stats::median(defined);
    series.frac_positive = defined.empty()
                               ? stats::missing()
                               : static_cast<double>(positive) / static_cast<double>(defined.size());
    return series;
}

std::vector<double> residualize_pooled(std::span<const double> ehat,
                                       const std::vector<std::vector<double>>& covariates) {
    for (const auto& col : covariates) {
        if (col.size() != ehat.size()) {
            throw InvalidValue("residualize_pooled: covariate length mismatch");
        }
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ehat.size(); ++i) {
        bool ok = !stats::is_missing(ehat[i]);
        for (const auto& col : covariates) ok = ok && !stats::is_missing(col[i]);
        if (ok) idx.push_back(i);
    }
    std::vector<double> y;
    y.reserve(idx.size());
    for (std::size_t i : idx) y.push_back(ehat[i]);
    std::vector<std::vector<double>> x(covariates.size());
    for (std::size_t c = 0; c < covariates.size(); ++c) {
        x[c].reserve(idx.size());
        for (std::size_t i : idx) x[c].push_back(covariates[c][i]);
    }

    const std::vector<double> resid = stats::ols_residualize(y, x);
    std::vector<double> out(ehat.size(), stats::missing());
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = resid[k];
    return out;
}

std::vector<double> residualize_per_date(
    std::span<const double> ehat, std::span<const double> abs_score,
    const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges) {
    if (ehat.size() != abs_score.size()) {
        throw InvalidValue("residualize_per_date: length mismatch");
    }
    std::vector<double> out(ehat.size(), stats::missing());
    std::vector<std::size_t> idx;
    std::vector<double> y;
    std::vector<std::vector<double>> x(1);
    for (const auto& [begin, end] : date_ranges) {
        idx.clear();
        for (std::size_t i = begin; i < end; ++i) {
            if (!stats::is_missing(ehat[i]) && !stats::is_missing(abs_score[i])) idx.push_back(i);
        }
        if (idx.size() < 3) continue;  // usable cross-section too small; left undefined
        y.clear();
        x[0].clear();
        for (std::size_t i : idx) {
            y.push_back(ehat[i]);
            x[0].push_back(abs_score[i]);
        }
        const std::vector<double> resid = stats::ols_residualize(y, x);
        for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = resid[k];
    }
    return out;
}

std::vector<DominanceRow> baseline_dominance_table(
    const std::vector<std::pair<std::string, std::span<const double>>>& candidates,
    std::span<const double> loss,
    const std::vector<std::pair<std::size_t, std::size_t>>& date_ranges) {
    std::vector<DominanceRow> rows;
    rows.reserve(candidates.size());
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& [name, values] : candidates) {
        if (values.size() != loss.size()) {
            throw InvalidValue("baseline_dominance_table: candidate length mismatch");
        }
        DominanceRow row;
        row.name = name;
        double sum = 0.0;
        for (const auto& [begin, end] : date_ranges) {
            x.clear();
            y.clear();
            for (std::size_t i = begin; i < end; ++i) {
                if (!stats::is_missing(values[i]) && !stats::is_missing(loss[i])) {
                    x.push_back(values[i]);
                    y.push_back(loss[i]);
                }
            }
            if (const auto rho = stats::try_spearman(x, y)) {
                sum += *rho;
                ++row.n_dates;
            }
        }
        row.mean_rho =
            row.n_dates == 0 ? stats::missing() : sum / static_cast<double>(row.n_dates);
        rows.push_back(std::move(row));
    }
    return rows;
}

void export_uncertainty_csv(const std::string& path, const Panel& panel, const LabelSet& labels,
                            std::span<const double> g, std::span<const double> a_oracle,
                            std::span<const double> a_pit, std::span<const double> a_exp) {
    if (g.size() != labels.records.size()) {
        throw InvalidValue("export_uncertainty_csv: g not aligned to label records");
    }
    if (a_oracle.size() != panel.n_dates() || a_pit.size() != panel.n_dates() ||
        a_exp.size() != panel.n_dates()) {
        throw InvalidValue("export_uncertainty_csv: baselines not aligned to dates");
    }
    std::ofstream out(path);
    if (!out) throw DataError("export_uncertainty_csv: cannot open " + path);
    out << "date,asset,horizon,g,a_oracle,a_pit,a_exp,e_oracle,e_pit,rank_loss\n";
    for (std::size_t i = 0; i < labels.records.size(); ++i) {
        const auto& rec = labels.records[i];
        out << panel.calendar().date(rec.date_pos) << ',' << rec.asset << ',' << labels.horizon
            << ',' << format_cell(g[i]) << ',' << format_cell(a_oracle[rec.date_pos]) << ','
            << format_cell(a_pit[rec.date_pos]) << ',' << format_cell(a_exp[rec.date_pos]) << ','
            << format_cell(epistemic(g[i], a_oracle[rec.date_pos])) << ','
            << format_cell(epistemic(g[i], a_pit[rec.date_pos])) << ','
            << format_cell(rec.loss) << '\n';
    }
    if (!out) throw DataError("export_uncertainty_csv: write failed for " + path);
}

} // namespace rankguard::deup
