#include "rankguard/conformal.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

namespace rankguard::conformal {

namespace {

void validate_config(const ConformalConfig& config) {
    if (!(config.nominal > 0.0) || !(config.nominal < 1.0)) {
        throw ConfigError("conformal: nominal coverage must lie in (0,1)");
    }
    if (config.calib_window_days < 10) {
        throw ConfigError("conformal: calibration window must span >= 10 dates");
    }
    if (!(config.epsilon > 0.0)) throw ConfigError("conformal: epsilon must be > 0");
    if (config.horizon_lag < 0) throw ConfigError("conformal: horizon lag must be >= 0");
    if (config.min_scores < 1) throw ConfigError("conformal: min_scores must be >= 1");
}

std::size_t lower_record(const LabelSet& labels, std::size_t t) {
    const auto it = std::lower_bound(
        labels.records.begin(), labels.records.end(), t,
        [](const RankLossRecord& r, std::size_t pos) { return r.date_pos < pos; });
    return static_cast<std::size_t>(it - labels.records.begin());
}

// ceil((n+1)*nominal)-th order statistic of scores, clamped to the maximum.
double window_quantile(std::vector<double>& scores, double nominal) {
    const std::size_t n = scores.size();
    const auto rank = static_cast<std::size_t>(
        std::ceil((static_cast<double>(n) + 1.0) * nominal));
    const std::size_t k = std::min(rank, n);  // 1-based order statistic
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     scores.end());
    return scores[k - 1];
}

std::string format_cell(double v) {
    if (stats::is_missing(v)) return {};
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string_view normalizer_name(Normalizer n) {
    switch (n) {
        case Normalizer::kRaw: return "raw";
        case Normalizer::kVol: return "vol";
        case Normalizer::kDeupOracle: return "deup_oracle";
        case Normalizer::kDeupPit: return "deup_pit";
    }
    throw InvalidValue("conformal: unknown normalizer");
}

double nonconformity(double loss, double normalizer_value, double epsilon,
                     Normalizer kind) {
    if (kind == Normalizer::kRaw) return loss;
    if (stats::is_missing(normalizer_value)) return stats::missing();
    return loss / std::max(normalizer_value, epsilon);
}

IntervalSet run_conformal(const LabelSet& labels,
                          std::span<const double> normalizer_values,
                          const ConformalConfig& config) {
    validate_config(config);
    const bool raw = config.normalizer == Normalizer::kRaw;
    if (!raw && normalizer_values.size() != labels.records.size()) {
        throw InvalidValue("conformal: normalizer values not aligned with records");
    }

    const auto& records = labels.records;
    std::vector<double> scores(records.size(), stats::missing());
    for (std::size_t r = 0; r < records.size(); ++r) {
        const double nv = raw ? 1.0 : normalizer_values[r];
        scores[r] = nonconformity(records[r].loss, nv, config.epsilon,
                                  config.normalizer);
    }

    IntervalSet out;
    out.normalizer = config.normalizer;
    if (records.empty()) return out;

    const auto lag = static_cast<std::size_t>(config.horizon_lag);
    const auto window = static_cast<std::size_t>(config.calib_window_days);
    const std::size_t last_date = records.back().date_pos;
    // Per-date q, NaN while the matured window is too thin.
    std::vector<double> q_by_date(last_date + 1, stats::missing());
    std::vector<double> pooled;
    for (std::size_t t = 0; t <= last_date; ++t) {
        if (t < lag) continue;
        const std::size_t hi = t - lag;
        const std::size_t lo = hi + 1 >= window ? hi + 1 - window : 0;
        pooled.clear();
        const std::size_t begin = lower_record(labels, lo);
        const std::size_t end = lower_record(labels, hi + 1);
        for (std::size_t r = begin; r < end; ++r) {
            if (!stats::is_missing(scores[r])) pooled.push_back(scores[r]);
        }
        if (pooled.size() < static_cast<std::size_t>(config.min_scores)) continue;
        q_by_date[t] = window_quantile(pooled, config.nominal);
    }

    for (std::size_t r = 0; r < records.size(); ++r) {
        const double q = q_by_date[records[r].date_pos];
        const double nv = raw ? 1.0 : normalizer_values[r];
        if (stats::is_missing(q) || (!raw && stats::is_missing(nv))) {
            ++out.skipped;
            continue;
        }
        IntervalRecord rec;
        rec.record_idx = r;
        rec.q = q;
        const double factor = raw ? 1.0 : std::max(nv, config.epsilon);
        rec.width = std::min(q * factor, 1.0);
        rec.loss = records[r].loss;
        rec.covered = rec.loss <= rec.width;
        out.intervals.push_back(rec);
    }
    return out;
}

CoverageReport coverage_report(const IntervalSet& intervals, const LabelSet& labels,
                               std::span<const double> ehat) {
    if (ehat.size() != labels.records.size()) {
        throw InvalidValue("conformal: ehat not aligned with records");
    }
    const auto& rows = intervals.intervals;
    if (rows.size() < 300) {
        throw DataError("conformal: need >= 300 evaluated rows for coverage report");
    }
    CoverageReport report;
    report.n_rows = rows.size();
    double covered = 0.0;
    double width_sum = 0.0;
    std::vector<std::size_t> with_ehat;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        covered += rows[i].covered ? 1.0 : 0.0;
        width_sum += rows[i].width;
        if (!stats::is_missing(ehat[rows[i].record_idx])) with_ehat.push_back(i);
    }
    report.marginal = covered / static_cast<double>(rows.size());
    report.mean_width = width_sum / static_cast<double>(rows.size());

    report.n_tercile_rows = with_ehat.size();
    if (with_ehat.size() >= 3) {
        std::sort(with_ehat.begin(), with_ehat.end(), [&](std::size_t a, std::size_t b) {
            const double ea = ehat[rows[a].record_idx];
            const double eb = ehat[rows[b].record_idx];
            if (ea != eb) return ea < eb;
            return a < b;
        });
        const std::size_t n = with_ehat.size();
        const std::size_t base = n / 3;
        const std::size_t rem = n % 3;
        std::size_t cursor = 0;
        double lo_cov = 1.0, hi_cov = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            const std::size_t size = base + (b < rem ? 1 : 0);
            double c = 0.0;
            for (std::size_t k = 0; k < size; ++k) {
                c += rows[with_ehat[cursor + k]].covered ? 1.0 : 0.0;
            }
            report.tercile[b] = c / static_cast<double>(size);
            lo_cov = std::min(lo_cov, report.tercile[b]);
            hi_cov = std::max(hi_cov, report.tercile[b]);
            cursor += size;
        }
        report.spread = hi_cov - lo_cov;
    } else {
        report.tercile[0] = report.tercile[1] = report.tercile[2] = stats::missing();
        report.spread = stats::missing();
    }
    return report;
}

void export_intervals_csv(const std::string& path, const TradingCalendar& calendar,
                          const LabelSet& labels, const IntervalSet& intervals) {
    std::ofstream out(path);
    if (!out) throw DataError("conformal: cannot open '" + path + "' for writing");
    out << "date,asset,normalizer,q,width,loss,covered\n";
    const auto name = normalizer_name(intervals.normalizer);
    for (const auto& rec : intervals.intervals) {
        const auto& row = labels.records.at(rec.record_idx);
        out << calendar.date(row.date_pos) << ',' << row.asset << ',' << name << ','
            << format_cell(rec.q) << ',' << format_cell(rec.width) << ','
            << format_cell(rec.loss) << ',' << (rec.covered ? '1' : '0') << '\n';
    }
    if (!out) throw DataError("conformal: failed writing '" + path + "'");
}

std::vector<double> vol_normalizer_values(const Panel& panel, const LabelSet& labels) {
    std::vector<double> out(labels.records.size(), stats::missing());
    for (std::size_t r = 0; r < labels.records.size(); ++r) {
        const auto& rec = labels.records[r];
        const AssetDay* row = panel.section(rec.date_pos).find(rec.asset);
        if (row != nullptr) out[r] = row->feature("vol_20d");
    }
    return out;
}

} // namespace rankguard::conformal
