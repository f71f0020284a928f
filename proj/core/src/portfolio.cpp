#include "rankguard/portfolio.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>

namespace rankguard::portfolio {

namespace {

void validate_config(const SimConfig& config) {
    horizon_index(config.horizon);  // throws InvalidValue on unknown horizons
    if (config.cost_bps < 0.0) throw ConfigError("portfolio: cost_bps must be >= 0");
}

// Net target weights per asset; an asset in both legs nets out.
std::map<std::string, double> target_book(const policy::RebalanceWeights& reb) {
    std::map<std::string, double> book;
    for (const auto& e : reb.longs) book[e.asset] += e.final_weight;
    for (const auto& e : reb.shorts) book[e.asset] += e.final_weight;
    return book;
}

double half_turnover(const std::map<std::string, double>& from,
                     const std::map<std::string, double>& to) {
    double traded = 0.0;
    auto a = from.begin();
    auto b = to.begin();
    while (a != from.end() || b != to.end()) {
        if (b == to.end() || (a != from.end() && a->first < b->first)) {
            traded += std::fabs(a->second);
            ++a;
        } else if (a == from.end() || b->first < a->first) {
            traded += std::fabs(b->second);
            ++b;
        } else {
            traded += std::fabs(b->second - a->second);
            ++a;
            ++b;
        }
    }
    return 0.5 * traded;
}

} // namespace

double max_drawdown(std::span<const double> returns) {
    double level = 1.0;
    double peak = 1.0;
    double dd = 0.0;
    for (const double r : returns) {
        level *= 1.0 + r;
        peak = std::max(peak, level);
        dd = std::min(dd, level / peak - 1.0);
    }
    return dd;
}

PortfolioPath simulate(const Panel& panel,
                       std::span<const policy::RebalanceWeights> ledger,
                       const SimConfig& config) {
    validate_config(config);
    const auto h_idx = static_cast<std::size_t>(horizon_index(config.horizon));
    const auto month_starts = panel.calendar().month_start_positions();
    const std::set<std::size_t> month_start_set(month_starts.begin(), month_starts.end());

    PortfolioPath path;
    path.entries.reserve(ledger.size());
    std::map<std::string, double> prior;
    std::size_t prev_pos = 0;
    bool first = true;
    for (const auto& reb : ledger) {
        if (reb.date_pos >= panel.n_dates()) {
            throw InvalidValue("portfolio: rebalance beyond panel end");
        }
        if (!first && reb.date_pos <= prev_pos) {
            throw InvalidValue("portfolio: ledger dates must be strictly increasing");
        }
        first = false;
        prev_pos = reb.date_pos;

        PathEntry entry;
        entry.date_pos = reb.date_pos;
        if (!reb.active) {
            // Abstained: the book goes flat and the period books exactly zero.
            entry.abstained = true;
            prior.clear();
        } else {
            const auto book = target_book(reb);
            entry.turnover = half_turnover(prior, book);
            entry.cost = config.cost_bps / 1e4 * 2.0 * entry.turnover;
            const auto& section = panel.section(reb.date_pos);
            std::size_t gaps = 0;
            for (const auto& [asset, weight] : book) {
                const AssetDay* row = section.find(asset);
                const double r = row ? row->fwd_ret[h_idx] : stats::missing();
                if (stats::is_missing(r)) {
                    ++gaps;
                    continue;  // position contributes zero, no renormalization
                }
                entry.gross += weight * r;
            }
            if (gaps > 0) {
                path.warnings.push_back(
                    "date " + panel.calendar().date(reb.date_pos) + ": " +
                    std::to_string(gaps) +
                    " position(s) missing forward returns contributed zero");
            }
            entry.net = entry.gross - entry.cost;
            prior = book;
        }
        if (month_start_set.count(entry.date_pos) > 0) {
            path.monthly.push_back(entry.net);
            path.monthly_positions.push_back(entry.date_pos);
        }
        path.entries.push_back(entry);
    }
    return path;
}

PerfReport perf_report(const PortfolioPath& path, const TradingCalendar& calendar,
                       const std::optional<CrisisWindow>& crisis) {
    const auto& m = path.monthly;
    if (m.size() < 2) throw DataError("portfolio: need at least two monthly returns");

    PerfReport report;
    report.n_months = static_cast<int>(m.size());
    for (const auto& e : path.entries) report.n_abstained += e.abstained ? 1 : 0;

    const double mean = stats::mean(m);
    const double sd = stats::sample_std(m);
    if (!(sd > 0.0)) throw UndefinedSharpe("portfolio: zero-variance monthly series");
    const double root12 = std::sqrt(12.0);
    report.sharpe_ann = mean / sd * root12;

    double downside_sq = 0.0;
    for (const double r : m) {
        const double d = std::min(r, 0.0);
        downside_sq += d * d;
    }
    const double downside = std::sqrt(downside_sq / static_cast<double>(m.size()));
    report.sortino_ann =
        downside > 0.0 ? mean / downside * root12 : stats::missing();

    report.max_dd = max_drawdown(m);
    report.ann_return = mean * 12.0;
    report.ann_vol = sd * root12;

    double level = 1.0;
    for (const double r : m) level *= 1.0 + r;
    report.cagr =
        level > 0.0
            ? std::pow(level, 12.0 / static_cast<double>(m.size())) - 1.0
            : stats::missing();
    report.calmar = report.max_dd < 0.0 && !stats::is_missing(report.cagr)
                        ? report.cagr / std::fabs(report.max_dd)
                        : stats::missing();

    std::size_t wins = 0;
    double win_sum = 0.0, loss_sum = 0.0;
    std::size_t losses = 0;
    report.best = m.front();
    report.worst = m.front();
    for (const double r : m) {
        report.best = std::max(report.best, r);
        report.worst = std::min(report.worst, r);
        if (r > 0.0) {
            ++wins;
            win_sum += r;
        } else if (r < 0.0) {
            ++losses;
            loss_sum += r;
        }
    }
    report.hit_rate = static_cast<double>(wins) / static_cast<double>(m.size());
    report.win_loss = (wins > 0 && losses > 0)
                          ? (win_sum / static_cast<double>(wins)) /
                                std::fabs(loss_sum / static_cast<double>(losses))
                          : stats::missing();

    std::vector<double> turnovers;
    turnovers.reserve(path.entries.size());
    for (const auto& e : path.entries) turnovers.push_back(e.turnover);
    report.mean_turnover = turnovers.empty() ? stats::missing() : stats::mean(turnovers);
    report.median_turnover =
        turnovers.empty() ? stats::missing() : stats::median(turnovers);

    report.crisis_max_dd = stats::missing();
    if (crisis.has_value()) {
        const long begin = dates::to_serial(crisis->begin);
        const long end = dates::to_serial(crisis->end);
        if (end < begin) throw ConfigError("portfolio: crisis window end before begin");
        std::vector<double> window;
        for (std::size_t i = 0; i < path.monthly.size(); ++i) {
            const long d = dates::to_serial(calendar.date(path.monthly_positions[i]));
            if (d >= begin && d <= end) window.push_back(path.monthly[i]);
        }
        if (!window.empty()) report.crisis_max_dd = max_drawdown(window);
    }

    if (report.n_abstained > 0) {
        report.warnings.push_back(
            "series abstains on " + std::to_string(report.n_abstained) +
            " period(s); metrics are not directly comparable to ungated baselines");
    }
    return report;
}

void export_path_csv(const std::string& path, const TradingCalendar& calendar,
                     const PortfolioPath& portfolio) {
    std::ofstream out(path);
    if (!out) throw DataError("portfolio: cannot open '" + path + "' for writing");
    out << "date,gross,turnover,cost,net,abstained\n";
    out.precision(17);
    for (const auto& e : portfolio.entries) {
        out << calendar.date(e.date_pos) << ',' << e.gross << ',' << e.turnover << ','
            << e.cost << ',' << e.net << ',' << (e.abstained ? '1' : '0') << '\n';
    }
    if (!out) throw DataError("portfolio: failed writing '" + path + "'");
}

void export_report_json(const std::string& path, const PerfReport& report,
                        const SimConfig& config,
                        const std::optional<CrisisWindow>& crisis) {
    nlohmann::json j;
    const auto put = [&](const char* key, double v) {
        if (stats::is_missing(v)) {
            j[key] = nullptr;
        } else {
            j[key] = v;
        }
    };
    put("sharpe_ann", report.sharpe_ann);
    put("sortino_ann", report.sortino_ann);
    put("max_dd", report.max_dd);
    put("calmar", report.calmar);
    put("ann_return", report.ann_return);
    put("cagr", report.cagr);
    put("ann_vol", report.ann_vol);
    put("hit_rate", report.hit_rate);
    put("win_loss", report.win_loss);
    put("best", report.best);
    put("worst", report.worst);
    put("mean_turnover", report.mean_turnover);
    put("median_turnover", report.median_turnover);
    put("crisis_max_dd", report.crisis_max_dd);
    j["n_months"] = report.n_months;
    j["n_abstained"] = report.n_abstained;
    j["warnings"] = report.warnings;
    j["config"] = {{"horizon", config.horizon},
                   {"cost_bps", config.cost_bps},
                   {"cost_convention", "cost = cost_bps x traded notional (2 x half-turnover)"},
                   {"annualization", "sqrt(12)"}};
    if (crisis.has_value()) {
        j["config"]["crisis_window"] = {{"begin", crisis->begin}, {"end", crisis->end}};
    }
    std::ofstream out(path);
    if (!out) throw DataError("portfolio: cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("portfolio: failed writing '" + path + "'");
}

} // namespace rankguard::portfolio
