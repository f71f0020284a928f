#include "rankguard/panel.hpp"

#include "rankguard/errors.hpp"
#include "rankguard/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace rankguard {

int feature_index(std::string_view name) {
    for (std::size_t i = 0; i < kPanelFeatures.size(); ++i) {
        if (kPanelFeatures[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int horizon_index(int horizon) {
    for (std::size_t i = 0; i < kHorizons.size(); ++i) {
        if (kHorizons[i] == horizon) return static_cast<int>(i);
    }
    throw InvalidValue("unknown horizon: " + std::to_string(horizon));
}

double AssetDay::feature(std::string_view name) const {
    const int idx = feature_index(name);
    if (idx < 0) throw InvalidValue("unknown feature: " + std::string(name));
    return features[static_cast<std::size_t>(idx)];
}

const AssetDay* CrossSection::find(const std::string& asset) const {
    const auto it = std::lower_bound(
        members.begin(), members.end(), asset,
        [](const AssetDay& m, const std::string& a) { return m.asset < a; });
    if (it == members.end() || it->asset != asset) return nullptr;
    return &*it;
}

Panel::Panel(std::vector<CrossSection> sections) : sections_(std::move(sections)) {
    std::vector<std::string> dates;
    dates.reserve(sections_.size());
    row_offsets_.reserve(sections_.size());
    std::size_t offset = 0;
    for (auto& sec : sections_) {
        dates.push_back(sec.date);
        row_offsets_.push_back(offset);
        offset += sec.members.size();
        for (std::size_t i = 1; i < sec.members.size(); ++i) {
            if (sec.members[i - 1].asset >= sec.members[i].asset) {
                throw DataError("cross-section members not sorted/unique at " + sec.date);
            }
        }
    }
    calendar_ = TradingCalendar(std::move(dates));
}

std::size_t Panel::n_rows() const {
    if (sections_.empty()) return 0;
    return row_offsets_.back() + sections_.back().members.size();
}

namespace {

constexpr std::size_t kNumFeatures = kPanelFeatures.size();

std::vector<std::string> expected_header() {
    std::vector<std::string> h = {"date", "asset"};
    for (auto f : kPanelFeatures) h.emplace_back(f);
    h.emplace_back("score_primary");
    h.emplace_back("score_secondary");
    for (int hz : kHorizons) h.push_back("ret_" + std::to_string(hz));
    return h;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
    if (cell.empty()) return stats::missing();
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        throw IngestError("malformed numeric cell '" + cell + "' at line " +
                          std::to_string(line_no));
    }
    return v;
}

// Shortest decimal form that round-trips; empty string for missing.
void append_cell(std::string& out, double v) {
    if (stats::is_missing(v)) return;
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

} // namespace

Panel ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open panel file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw IngestError("empty panel file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto expected = expected_header();
    const auto header = split_csv_line(line);
    if (header.size() != expected.size()) {
        throw IngestError("header column count mismatch in " + path);
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (header[i] != expected[i]) {
            throw IngestError("unexpected header column '" + header[i] + "' (want '" +
                              expected[i] + "')");
        }
    }

    // date -> (asset -> row), ordered; duplicates detected on insert.
    std::map<std::string, std::map<std::string, AssetDay>> by_date;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != expected.size()) {
            throw IngestError("wrong column count at line " + std::to_string(line_no));
        }
        const std::string& date = cells[0];
        static_cast<void>(dates::to_serial(date)); // validates format
        AssetDay row;
        row.asset = cells[1];
        if (row.asset.empty()) throw IngestError("empty asset id at line " + std::to_string(line_no));
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
            row.features[f] = parse_cell(cells[2 + f], line_no);
        }
        row.score_primary = parse_cell(cells[2 + kNumFeatures], line_no);
        row.score_secondary = parse_cell(cells[3 + kNumFeatures], line_no);
        for (std::size_t h = 0; h < kHorizons.size(); ++h) {
            row.fwd_ret[h] = parse_cell(cells[4 + kNumFeatures + h], line_no);
        }
        auto& section = by_date[date];
        if (!section.emplace(row.asset, std::move(row)).second) {
            throw DuplicateKey("duplicate (date, asset) = (" + date + ", " + cells[1] +
                               ") at line " + std::to_string(line_no));
        }
    }

    std::vector<CrossSection> sections;
    sections.reserve(by_date.size());
    for (auto& [date, members] : by_date) {
        CrossSection sec;
        sec.date = date;
        sec.members.reserve(members.size());
        for (auto& [asset, row] : members) sec.members.push_back(std::move(row));
        sections.push_back(std::move(sec));
    }
    return Panel(std::move(sections));
}

void emit_csv(const Panel& panel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write panel file: " + path);

    std::string buf;
    const auto header = expected_header();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) buf.push_back(',');
        buf += header[i];
    }
    buf.push_back('\n');

    for (const auto& sec : panel.sections()) {
        for (const auto& row : sec.members) {
            buf += sec.date;
            buf.push_back(',');
            buf += row.asset;
            for (std::size_t f = 0; f < kNumFeatures; ++f) {
                buf.push_back(',');
                append_cell(buf, row.features[f]);
            }
            buf.push_back(',');
            append_cell(buf, row.score_primary);
            buf.push_back(',');
            append_cell(buf, row.score_secondary);
            for (std::size_t h = 0; h < kHorizons.size(); ++h) {
                buf.push_back(',');
                append_cell(buf, row.fwd_ret[h]);
            }
            buf.push_back('\n');
            if (buf.size() > (1u << 20)) {
                out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
                buf.clear();
            }
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

LabelSet make_rank_labels(const Panel& panel, int horizon) {
    const int h = horizon_index(horizon);
    LabelSet out;
    out.horizon = horizon;
    out.loss_by_row.assign(panel.n_rows(), stats::missing());

    for (std::size_t pos = 0; pos < panel.n_dates(); ++pos) {
        const auto& sec = panel.section(pos);
        std::vector<std::size_t> labeled;
        for (std::size_t i = 0; i < sec.members.size(); ++i) {
            const auto& m = sec.members[i];
            if (!stats::is_missing(m.fwd_ret[static_cast<std::size_t>(h)]) &&
                !stats::is_missing(m.score_primary)) {
                labeled.push_back(i);
            }
        }
        if (labeled.size() < 2) {
            out.skipped_dates.push_back(pos);
            continue;
        }
        std::vector<double> scores, rets;
        scores.reserve(labeled.size());
        rets.reserve(labeled.size());
        for (std::size_t i : labeled) {
            scores.push_back(sec.members[i].score_primary);
            rets.push_back(sec.members[i].fwd_ret[static_cast<std::size_t>(h)]);
        }
        const auto score_pct = stats::percentile_rank(scores);
        const auto ret_pct = stats::percentile_rank(rets);
        for (std::size_t k = 0; k < labeled.size(); ++k) {
            RankLossRecord rec;
            rec.row_id = panel.row_id(pos, labeled[k]);
            rec.date_pos = pos;
            rec.asset = sec.members[labeled[k]].asset;
            rec.score_pct = score_pct[k];
            rec.ret_pct = ret_pct[k];
            rec.loss = std::abs(rec.ret_pct - rec.score_pct);
            out.loss_by_row[rec.row_id] = rec.loss;
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

std::vector<FoldPlan> walk_forward_folds(std::size_t n_dates, int n_folds, int embargo_days,
                                         int horizon, int min_train_folds) {
    if (n_folds < 2) throw ConfigError("walk_forward_folds: n_folds must be >= 2");
    if (embargo_days < 0 || horizon < 0 || min_train_folds < 0) {
        throw ConfigError("walk_forward_folds: negative parameter");
    }
    if (n_dates < static_cast<std::size_t>(n_folds)) {
        throw ConfigError("walk_forward_folds: fewer dates than folds");
    }

    const std::size_t base = n_dates / static_cast<std::size_t>(n_folds);
    const std::size_t rem = n_dates % static_cast<std::size_t>(n_folds);
    std::vector<std::size_t> bounds(static_cast<std::size_t>(n_folds) + 1, 0);
    for (std::size_t k = 0; k < static_cast<std::size_t>(n_folds); ++k) {
        bounds[k + 1] = bounds[k] + base + (k < rem ? 1 : 0);
    }

    std::vector<FoldPlan> folds;
    folds.reserve(static_cast<std::size_t>(n_folds));
    bool any_trainable = false;
    bool any_emitting = false;
    for (int k = 1; k <= n_folds; ++k) {
        FoldPlan f;
        f.fold_id = k;
        f.train_begin = 0;
        f.train_end = bounds[static_cast<std::size_t>(k - 1)];
        f.predict_begin = bounds[static_cast<std::size_t>(k - 1)];
        f.predict_end = bounds[static_cast<std::size_t>(k)];
        f.embargo_days = embargo_days;
        f.horizon = horizon;
        f.emits_predictions = (k - 1) >= min_train_folds;
        if (f.emits_predictions) {
            any_emitting = true;
            for (std::size_t p = f.train_begin; p < f.train_end; ++p) {
                if (f.trainable(p)) {
                    any_trainable = true;
                    break;
                }
            }
        }
        folds.push_back(f);
    }
    if (any_emitting && !any_trainable) {
        throw EmptyTrainSet("embargo leaves no trainable dates in any prediction fold");
    }
    return folds;
}

} // namespace rankguard
