#pragma once

#include "rankguard/calendar.hpp"
#include "rankguard/panel.hpp"
#include "rankguard/policy.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rankguard::portfolio {

struct SimConfig {
    int horizon = 20;        // forward-return window held per rebalance
    double cost_bps = 10.0;  // cost per unit of traded notional
};

struct PathEntry {
    std::size_t date_pos = 0;
    bool abstained = false;
    double gross = 0.0;
    double turnover = 0.0;  // half-turnover: 1/2 sum |w_new - w_old|
    double cost = 0.0;      // cost_bps/1e4 * 2 * turnover, charged at entry
    double net = 0.0;
};

struct PortfolioPath {
    std::vector<PathEntry> entries;
    // Net returns of entries falling on the first trading day of a month.
    std::vector<double> monthly;
    std::vector<std::size_t> monthly_positions;
    std::vector<std::string> warnings;
};

// Sequential rebalance scan: each period earns sum(w * fwd_ret[horizon]) on
// entry-date weights. Abstained periods hold cash (weights zero, turnover and
// cost zero, net exactly zero); re-entry pays turnover from a flat book.
// Held assets with a missing forward return contribute zero with a data-gap
// warning; remaining weights are not renormalized.
[[nodiscard]] PortfolioPath simulate(const Panel& panel,
                                     std::span<const policy::RebalanceWeights> ledger,
                                     const SimConfig& config);

struct CrisisWindow {
    std::string begin;  // ISO dates, inclusive on both ends
    std::string end;
};

struct PerfReport {
    double sharpe_ann = 0.0;
    double sortino_ann = 0.0;
    double max_dd = 0.0;
    double calmar = 0.0;
    double ann_return = 0.0;
    double cagr = 0.0;
    double ann_vol = 0.0;
    double hit_rate = 0.0;
    double win_loss = 0.0;
    double best = 0.0;
    double worst = 0.0;
    double mean_turnover = 0.0;
    double median_turnover = 0.0;
    double crisis_max_dd = 0.0;  // NaN without a crisis window
    int n_months = 0;
    int n_abstained = 0;
    std::vector<std::string> warnings;
};

// Metrics over the monthly net series, annualized by sqrt(12). Throws
// DataError with fewer than two monthly returns and UndefinedSharpe when the
// series has zero variance. A nonzero abstention count adds a comparability
// warning against ungated baselines.
[[nodiscard]] PerfReport perf_report(const PortfolioPath& path,
                                     const TradingCalendar& calendar,
                                     const std::optional<CrisisWindow>& crisis = {});

// Maximum drawdown of the compounded path of `returns`, <= 0.
[[nodiscard]] double max_drawdown(std::span<const double> returns);

// CSV: date,gross,turnover,cost,net,abstained (one row per rebalance).
void export_path_csv(const std::string& path, const TradingCalendar& calendar,
                     const PortfolioPath& portfolio);

// JSON object with every report field plus the config echo.
void export_report_json(const std::string& path, const PerfReport& report,
                        const SimConfig& config,
                        const std::optional<CrisisWindow>& crisis = {});

} // namespace rankguard::portfolio
