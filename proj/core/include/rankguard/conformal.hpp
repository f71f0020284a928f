#pragma once

#include "rankguard/calendar.hpp"
#include "rankguard/panel.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rankguard::conformal {

// Nonconformity normalizers: raw loss, volatility-scaled, or scaled by the
// learned uncertainty signal (oracle or point-in-time floored variant).
enum class Normalizer { kRaw, kVol, kDeupOracle, kDeupPit };

[[nodiscard]] std::string_view normalizer_name(Normalizer n);

struct ConformalConfig {
    double nominal = 0.90;
    int calib_window_days = 60;  // matured dates pooled into the window
    Normalizer normalizer = Normalizer::kDeupPit;
    double epsilon = 1e-6;
    int horizon_lag = 20;  // maturation lag: date u enters only when u + lag <= t
    int min_scores = 30;   // minimum pooled calibration scores per date
};

// score = loss for raw, loss / max(normalizer_value, epsilon) otherwise.
[[nodiscard]] double nonconformity(double loss, double normalizer_value,
                                   double epsilon, Normalizer kind);

struct IntervalRecord {
    std::size_t record_idx = 0;  // into labels.records
    double q = 0.0;              // windowed calibration quantile
    double width = 0.0;          // q x normalizer, clipped to [0,1]
    double loss = 0.0;
    bool covered = false;        // loss <= width
};

struct IntervalSet {
    Normalizer normalizer = Normalizer::kRaw;
    std::vector<IntervalRecord> intervals;
    std::size_t skipped = 0;  // rows lacking calibration history or normalizer
};

// Split-conformal pass over the label records. The calibration window for
// date t pools every record from the last calib_window_days matured dates
// (u in [t - lag - window + 1, t - lag]); rows are skipped until the window
// holds min_scores scores. q is the ceil((n+1)*nominal)-th order statistic,
// clamped to the sample maximum. normalizer_values align with labels.records
// and are ignored for the raw normalizer.
[[nodiscard]] IntervalSet run_conformal(const LabelSet& labels,
                                        std::span<const double> normalizer_values,
                                        const ConformalConfig& config);

struct CoverageReport {
    double marginal = 0.0;
    double tercile[3] = {0.0, 0.0, 0.0};  // coverage by pooled-uncertainty tercile
    double spread = 0.0;                  // max - min tercile coverage
    double mean_width = 0.0;
    std::size_t n_rows = 0;
    std::size_t n_tercile_rows = 0;
};

// Conditional-coverage evaluation: terciles are assigned by sorting the
// evaluated rows on ehat (pooled across dates); rows with missing ehat count
// toward marginal coverage only. Requires >= 300 evaluated rows.
[[nodiscard]] CoverageReport coverage_report(const IntervalSet& intervals,
                                             const LabelSet& labels,
                                             std::span<const double> ehat);

// CSV: date,asset,normalizer,q,width,loss,covered.
void export_intervals_csv(const std::string& path, const TradingCalendar& calendar,
                          const LabelSet& labels, const IntervalSet& intervals);

// Convenience: vol_20d per label record (NaN when the panel row lacks it).
[[nodiscard]] std::vector<double> vol_normalizer_values(const Panel& panel,
                                                        const LabelSet& labels);

} // namespace rankguard::conformal
