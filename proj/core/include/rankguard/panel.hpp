#pragma once

#include "rankguard/calendar.hpp"

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace rankguard {

// Canonical feature columns, in CSV order. ret_1d (daily excess return) backs
// the gate's correlation-spike signal; like any feature cell it may be absent.
inline constexpr std::array<std::string_view, 13> kPanelFeatures = {
    "mom_1m",      "mom_3m",       "mom_12m",
    "vol_20d",     "vol_60d",      "adv_20d",
    "cross_sectional_rank",        "vix_percentile_252d",
    "market_regime_enc",           "market_vol_21d",
    "market_return_21d",           "sector_enc",
    "ret_1d"};

inline constexpr std::array<int, 3> kHorizons = {20, 60, 90};

[[nodiscard]] int feature_index(std::string_view name);  // -1 when unknown
[[nodiscard]] int horizon_index(int horizon);            // throws InvalidValue

struct AssetDay {
    std::string asset;
    std::array<double, kPanelFeatures.size()> features{};  // NaN = missing
    double score_primary = 0.0;
    double score_secondary = 0.0;                          // NaN = absent
    std::array<double, kHorizons.size()> fwd_ret{};        // NaN = missing

    [[nodiscard]] double feature(std::string_view name) const;
};

struct CrossSection {
    std::string date;
    std::vector<AssetDay> members;  // sorted by asset id, unique

    [[nodiscard]] const AssetDay* find(const std::string& asset) const;
};

// Immutable after construction. Rows are ordered by (date, asset); row ids
// index that flat order and are shared by every per-row table downstream.
class Panel {
public:
    Panel() = default;
    explicit Panel(std::vector<CrossSection> sections);

    [[nodiscard]] const std::vector<CrossSection>& sections() const { return sections_; }
    [[nodiscard]] const CrossSection& section(std::size_t date_pos) const {
        return sections_.at(date_pos);
    }
    [[nodiscard]] const TradingCalendar& calendar() const { return calendar_; }
    [[nodiscard]] std::size_t n_dates() const { return sections_.size(); }
    [[nodiscard]] std::size_t n_rows() const;
    [[nodiscard]] std::size_t row_id(std::size_t date_pos, std::size_t member_idx) const {
        return row_offsets_.at(date_pos) + member_idx;
    }
    [[nodiscard]] std::size_t row_offset(std::size_t date_pos) const {
        return row_offsets_.at(date_pos);
    }

private:
    std::vector<CrossSection> sections_;
    std::vector<std::size_t> row_offsets_;
    TradingCalendar calendar_;
};

// Strict canonical schema: date, asset, the feature columns above,
// score_primary, score_secondary, ret_20, ret_60, ret_90. Empty cell =
// missing. Throws IngestError / DuplicateKey with 1-based line numbers.
[[nodiscard]] Panel ingest_csv(const std::string& path);

// Mirrors the ingest schema; doubles written in shortest round-trip form so
// ingest(emit(panel)) reproduces finite values bit-exactly.
void emit_csv(const Panel& panel, const std::string& path);

struct RankLossRecord {
    std::size_t row_id;
    std::size_t date_pos;
    std::string asset;
    double loss;       // | ret_pct - score_pct |, in [0,1]
    double score_pct;
    double ret_pct;
};

// Rank-displacement labels for one horizon. Ranks are computed over the
// labeled subset of each date; dates with < 2 labeled members are skipped.
struct LabelSet {
    int horizon = 0;
    std::vector<RankLossRecord> records;          // sorted by (date_pos, asset)
    std::vector<std::size_t> skipped_dates;
    // Per panel row: loss value or NaN when the row is unlabeled.
    std::vector<double> loss_by_row;
};

[[nodiscard]] LabelSet make_rank_labels(const Panel& panel, int horizon);

struct FoldPlan {
    int fold_id = 0;                // 1-based
    std::size_t train_begin = 0;    // date positions, pre-purge: [train_begin, train_end)
    std::size_t train_end = 0;
    std::size_t predict_begin = 0;  // [predict_begin, predict_end)
    std::size_t predict_end = 0;
    int embargo_days = 0;
    int horizon = 0;
    bool emits_predictions = false;

    // Purge rule: a training row at date position p is usable iff its label
    // matures (p + horizon) at least embargo_days before the first predict date.
    [[nodiscard]] bool trainable(std::size_t date_pos) const {
        return date_pos >= train_begin && date_pos < train_end &&
               date_pos + static_cast<std::size_t>(horizon) +
                       static_cast<std::size_t>(embargo_days) <=
                   predict_begin;
    }
};

// Equal date-count chronological chunks; fold k trains on chunks 1..k-1 and
// predicts chunk k; folds with fewer than min_train_folds training chunks
// emit no predictions. Throws EmptyTrainSet when the embargo leaves every
// prediction fold without trainable dates.
[[nodiscard]] std::vector<FoldPlan> walk_forward_folds(std::size_t n_dates, int n_folds,
                                                       int embargo_days, int horizon,
                                                       int min_train_folds);

} // namespace rankguard
