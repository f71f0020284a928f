#include "rankguard/gbt.hpp"

#include "rankguard/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <queue>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rankguard::gbt {
namespace {

using nlohmann::json;

void validate_config(const GbtConfig& c) {
    if (c.n_estimators < 0) throw ConfigError("gbt: n_estimators must be non-negative");
    if (c.max_depth < 1) throw ConfigError("gbt: max_depth must be at least 1");
    if (c.num_leaves < 1) throw ConfigError("gbt: num_leaves must be at least 1");
    if (c.max_depth < 31 && c.num_leaves > (1 << c.max_depth)) {
        throw ConfigError("gbt: num_leaves must not exceed 2^max_depth");
    }
    if (c.min_child_samples < 1) throw ConfigError("gbt: min_child_samples must be at least 1");
    if (!(c.learning_rate > 0.0 && c.learning_rate <= 1.0)) {
        throw ConfigError("gbt: learning_rate must lie in (0, 1]");
    }
    if (!(c.row_subsample > 0.0 && c.row_subsample <= 1.0)) {
        throw ConfigError("gbt: row_subsample must lie in (0, 1]");
    }
    if (!(c.col_subsample > 0.0 && c.col_subsample <= 1.0)) {
        throw ConfigError("gbt: col_subsample must lie in (0, 1]");
    }
    if (c.loss == Loss::kPinball && !(c.quantile > 0.0 && c.quantile < 1.0)) {
        throw ConfigError("gbt: pinball quantile must lie in (0, 1)");
    }
}

// Exact pinball minimizer: the ceil(n*p)-th order statistic of the values.
double pinball_minimizer(std::vector<double>& scratch, double p) {
    const auto n = scratch.size();
    auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * p));
    k = std::clamp<std::size_t>(k, 1, n);
    std::nth_element(scratch.begin(),
                     scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end());
    return scratch[k - 1];
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double pinball_loss(double y, double pred, double p) {
    const double d = y - pred;
    return d >= 0.0 ? p * d : (p - 1.0) * d;
}

// Split threshold between two adjacent distinct sorted values; guarded so
// routing by (x <= threshold) always separates them.
double split_threshold(double lo, double hi) {
    const double mid = lo + 0.5 * (hi - lo);
    if (!(mid < hi) || !std::isfinite(mid)) return lo;
    return mid;
}

struct Candidate {
    bool valid = false;
    double gain = 0.0;
    int feature = -1;      // global feature index
    int slot = -1;         // index into the node's per-selected-feature arrays
    double threshold = 0.0;
    bool default_left = true;
};

struct NodeData {
    std::vector<int> rows;                 // every row in the node
    std::vector<std::vector<int>> sorted;  // per selected feature: finite rows, ascending
    double sum_g = 0.0;
    int depth = 0;
    int node_index = -1;  // position in Tree::nodes
    Candidate best;
};

struct FitContext {
    const std::vector<std::vector<double>>* cols = nullptr;
    const std::vector<double>* grad = nullptr;
    const std::vector<int>* selected = nullptr;  // ascending global feature indices
    int min_child_samples = 0;
};

// Exact greedy split search over this node's rows, one pass per selected
// feature. Missing rows move en bloc; both directions are tried and the
// better one is recorded. Ties keep the first candidate in (feature index,
// threshold, missing-left-first) order via strict > replacement.
Candidate evaluate_node(const FitContext& ctx, const NodeData& node) {
    Candidate best;
    const auto& grad = *ctx.grad;
    const auto n = static_cast<double>(node.rows.size());
    if (node.rows.size() < 2 * static_cast<std::size_t>(ctx.min_child_samples)) return best;

    double gmin = grad[static_cast<std::size_t>(node.rows[0])];
    double gmax = gmin;
    for (int r : node.rows) {
        const double g = grad[static_cast<std::size_t>(r)];
        gmin = std::min(gmin, g);
        gmax = std::max(gmax, g);
    }
    if (gmin == gmax) return best;  // constant gradient: no reducible loss

    const double total = node.sum_g;
    const double parent_term = total * total / n;

    for (std::size_t slot = 0; slot < ctx.selected->size(); ++slot) {
        const int f = (*ctx.selected)[slot];
        const auto& arr = node.sorted[slot];
        if (arr.size() < 2) continue;
        const auto& col = (*ctx.cols)[static_cast<std::size_t>(f)];

        double finite_sum = 0.0;
        for (int r : arr) finite_sum += grad[static_cast<std::size_t>(r)];
        const double miss_n = n - static_cast<double>(arr.size());
        const double miss_sum = total - finite_sum;

        double left_n = 0.0, left_sum = 0.0;
        for (std::size_t i = 0; i + 1 < arr.size(); ++i) {
            const auto r = static_cast<std::size_t>(arr[i]);
            left_n += 1.0;
            left_sum += grad[r];
            const double v = col[r];
            const double vn = col[static_cast<std::size_t>(arr[i + 1])];
            if (v == vn) continue;
            const double theta = split_threshold(v, vn);
            for (int dir = 0; dir < 2; ++dir) {  // 0: missing left, 1: missing right
                const double nl = left_n + (dir == 0 ? miss_n : 0.0);
                const double sl = left_sum + (dir == 0 ? miss_sum : 0.0);
                const double nr = n - nl;
                const double sr = total - sl;
                if (nl < ctx.min_child_samples || nr < ctx.min_child_samples) continue;
                const double gain = sl * sl / nl + sr * sr / nr - parent_term;
                if (gain > best.gain || !best.valid) {
                    if (gain <= 0.0) continue;
                    best.valid = true;
                    best.gain = gain;
                    best.feature = f;
                    best.slot = static_cast<int>(slot);
                    best.threshold = theta;
                    best.default_left = (dir == 0);
                }
            }
        }
    }
    return best;
}

// Partition the node's row containers by the chosen split, preserving order
// so children stay presorted.
void split_node(const FitContext& ctx, const NodeData& node, NodeData& left, NodeData& right) {
    const auto& col = (*ctx.cols)[static_cast<std::size_t>(node.best.feature)];
    const auto& grad = *ctx.grad;
    auto goes_left = [&](int r) {
        const double v = col[static_cast<std::size_t>(r)];
        if (std::isnan(v)) return node.best.default_left;
        return v <= node.best.threshold;
    };

    left.depth = right.depth = node.depth + 1;
    left.sum_g = right.sum_g = 0.0;
    for (int r : node.rows) {
        if (goes_left(r)) {
            left.rows.push_back(r);
            left.sum_g += grad[static_cast<std::size_t>(r)];
        } else {
            right.rows.push_back(r);
            right.sum_g += grad[static_cast<std::size_t>(r)];
        }
    }
    left.sorted.resize(node.sorted.size());
    right.sorted.resize(node.sorted.size());
    for (std::size_t s = 0; s < node.sorted.size(); ++s) {
        for (int r : node.sorted[s]) {
            (goes_left(r) ? left.sorted[s] : right.sorted[s]).push_back(r);
        }
    }
}

double traverse(const Tree& tree, const std::vector<const std::vector<double>*>& cols,
                std::size_t row) {
    int idx = 0;
    while (tree.nodes[static_cast<std::size_t>(idx)].feature >= 0) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(idx)];
        const auto* col = cols[static_cast<std::size_t>(nd.feature)];
        const double v = col == nullptr ? std::numeric_limits<double>::quiet_NaN() : (*col)[row];
        if (std::isnan(v)) {
            idx = nd.default_left ? nd.left : nd.right;
        } else {
            idx = v <= nd.threshold ? nd.left : nd.right;
        }
    }
    return tree.nodes[static_cast<std::size_t>(idx)].value;
}

std::string loss_name(Loss l) { return l == Loss::kSquared ? "squared" : "pinball"; }

Loss loss_from_name(const std::string& s) {
    if (s == "squared") return Loss::kSquared;
    if (s == "pinball") return Loss::kPinball;
    throw DataError("gbt: unknown loss '" + s + "'");
}

} // namespace

GbtModel GbtModel::fit(const std::vector<std::string>& feature_names,
                       const std::vector<std::vector<double>>& columns,
                       std::span<const double> targets, const GbtConfig& config) {
    validate_config(config);
    if (feature_names.size() != columns.size()) {
        throw InvalidValue("gbt: feature_names and columns size mismatch");
    }
    for (std::size_t i = 0; i < feature_names.size(); ++i) {
        for (std::size_t j = i + 1; j < feature_names.size(); ++j) {
            if (feature_names[i] == feature_names[j]) {
                throw ConfigError("gbt: duplicate feature name '" + feature_names[i] + "'");
            }
        }
    }
    const std::size_t n = targets.size();
    if (n == 0) throw EmptyTrainSet("gbt: no training rows");
    for (const auto& col : columns) {
        if (col.size() != n) throw InvalidValue("gbt: column length mismatch");
    }
    for (double y : targets) {
        if (!std::isfinite(y)) throw InvalidValue("gbt: targets must be finite");
    }

    GbtModel model;
    model.config_ = config;
    model.feature_names_ = feature_names;

    // Base prediction: global loss minimizer, exact for constant targets.
    std::vector<double> y_copy(targets.begin(), targets.end());
    const auto [ymin_it, ymax_it] = std::minmax_element(y_copy.begin(), y_copy.end());
    if (*ymin_it == *ymax_it) {
        model.base_score_ = y_copy.front();
    } else if (config.loss == Loss::kSquared) {
        model.base_score_ = mean_of(y_copy);
    } else {
        model.base_score_ = pinball_minimizer(y_copy, config.quantile);
    }

    std::vector<double> fhat(n, model.base_score_);
    auto mean_loss = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (config.loss == Loss::kSquared) {
                const double d = targets[i] - fhat[i];
                s += d * d;
            } else {
                s += pinball_loss(targets[i], fhat[i], config.quantile);
            }
        }
        return s / static_cast<double>(n);
    };
    model.loss_curve_.push_back(mean_loss());

    if (n < 2 * static_cast<std::size_t>(config.min_child_samples)) {
        model.warnings_.push_back("gbt: " + std::to_string(n) +
                                  " rows < 2*min_child_samples; fitted a no-tree model");
        model.fitted_ = std::move(fhat);
        return model;
    }

    const auto n_features = static_cast<int>(columns.size());

    // Global presort, reused by every tree.
    std::vector<std::vector<int>> presorted(columns.size());
    for (std::size_t f = 0; f < columns.size(); ++f) {
        auto& arr = presorted[f];
        for (std::size_t r = 0; r < n; ++r) {
            if (!std::isnan(columns[f][r])) arr.push_back(static_cast<int>(r));
        }
        std::sort(arr.begin(), arr.end(), [&](int a, int b) {
            const double va = columns[f][static_cast<std::size_t>(a)];
            const double vb = columns[f][static_cast<std::size_t>(b)];
            return va < vb || (va == vb && a < b);
        });
    }

    std::mt19937_64 rng(config.seed);
    std::vector<int> all_rows(n), all_feats(columns.size());
    std::iota(all_rows.begin(), all_rows.end(), 0);
    std::iota(all_feats.begin(), all_feats.end(), 0);

    std::vector<double> grad(n);
    std::vector<char> in_bag(n, 1);
    std::vector<double> scratch;

    auto leaf_value = [&](const std::vector<int>& rows) {
        scratch.clear();
        for (int r : rows) scratch.push_back(targets[static_cast<std::size_t>(r)] -
                                             fhat[static_cast<std::size_t>(r)]);
        return config.loss == Loss::kSquared ? mean_of(scratch)
                                             : pinball_minimizer(scratch, config.quantile);
    };

    for (int t = 0; t < config.n_estimators; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            if (config.loss == Loss::kSquared) {
                grad[i] = targets[i] - fhat[i];
            } else {
                grad[i] = targets[i] > fhat[i] ? config.quantile : config.quantile - 1.0;
            }
        }

        // Per-tree row/column subsampling from the seeded stream.
        std::vector<int> bag_rows;
        if (config.row_subsample < 1.0) {
            auto pool = all_rows;
            std::shuffle(pool.begin(), pool.end(), rng);
            const auto m = std::max<std::size_t>(
                1, static_cast<std::size_t>(config.row_subsample * static_cast<double>(n)));
            bag_rows.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
            std::sort(bag_rows.begin(), bag_rows.end());
            std::fill(in_bag.begin(), in_bag.end(), 0);
            for (int r : bag_rows) in_bag[static_cast<std::size_t>(r)] = 1;
        } else {
            bag_rows = all_rows;
        }
        std::vector<int> selected;
        if (config.col_subsample < 1.0) {
            auto pool = all_feats;
            std::shuffle(pool.begin(), pool.end(), rng);
            const auto m = std::max<std::size_t>(
                1, static_cast<std::size_t>(config.col_subsample *
                                            static_cast<double>(n_features)));
            selected.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
            std::sort(selected.begin(), selected.end());
        } else {
            selected = all_feats;
        }

        FitContext ctx{&columns, &grad, &selected, config.min_child_samples};

        Tree tree;
        tree.nodes.emplace_back();  // root placeholder

        auto root = std::make_unique<NodeData>();
        root->rows = bag_rows;
        root->node_index = 0;
        for (int r : bag_rows) root->sum_g += grad[static_cast<std::size_t>(r)];
        root->sorted.resize(selected.size());
        for (std::size_t s = 0; s < selected.size(); ++s) {
            const auto& src = presorted[static_cast<std::size_t>(selected[s])];
            if (config.row_subsample < 1.0) {
                for (int r : src) {
                    if (in_bag[static_cast<std::size_t>(r)]) root->sorted[s].push_back(r);
                }
            } else {
                root->sorted[s] = src;
            }
        }

        // Best-first growth: pending leaves carry their best split; highest
        // gain splits first, ties broken by creation order.
        std::vector<std::unique_ptr<NodeData>> store;
        auto cmp = [&](const std::pair<double, std::size_t>& a,
                       const std::pair<double, std::size_t>& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second > b.second;  // older node wins ties
        };
        std::priority_queue<std::pair<double, std::size_t>,
                            std::vector<std::pair<double, std::size_t>>, decltype(cmp)>
            queue(cmp);

        auto consider = [&](std::unique_ptr<NodeData> nd) {
            if (nd->depth < config.max_depth) nd->best = evaluate_node(ctx, *nd);
            if (nd->best.valid) {
                store.push_back(std::move(nd));
                queue.emplace(store.back()->best.gain, store.size() - 1);
            } else {
                tree.nodes[static_cast<std::size_t>(nd->node_index)].feature = -1;
                tree.nodes[static_cast<std::size_t>(nd->node_index)].value = leaf_value(nd->rows);
            }
        };

        int leaves = 1;
        consider(std::move(root));
        while (leaves < config.num_leaves && !queue.empty()) {
            const auto idx = queue.top().second;
            queue.pop();
            auto nd = std::move(store[idx]);

            auto left = std::make_unique<NodeData>();
            auto right = std::make_unique<NodeData>();
            split_node(ctx, *nd, *left, *right);

            auto& parent = tree.nodes[static_cast<std::size_t>(nd->node_index)];
            parent.feature = nd->best.feature;
            parent.threshold = nd->best.threshold;
            parent.default_left = nd->best.default_left;
            parent.gain = nd->best.gain;
            parent.left = static_cast<int>(tree.nodes.size());
            parent.right = static_cast<int>(tree.nodes.size()) + 1;
            left->node_index = parent.left;
            right->node_index = parent.right;
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            ++leaves;

            consider(std::move(left));
            consider(std::move(right));
        }
        while (!queue.empty()) {  // leaf budget exhausted: finalize leftovers
            const auto idx = queue.top().second;
            queue.pop();
            auto nd = std::move(store[idx]);
            tree.nodes[static_cast<std::size_t>(nd->node_index)].feature = -1;
            tree.nodes[static_cast<std::size_t>(nd->node_index)].value = leaf_value(nd->rows);
        }

        // Advance every row's running prediction through the new tree.
        std::vector<const std::vector<double>*> col_ptrs(columns.size());
        for (std::size_t f = 0; f < columns.size(); ++f) col_ptrs[f] = &columns[f];
        for (std::size_t r = 0; r < n; ++r) {
            fhat[r] += config.learning_rate * traverse(tree, col_ptrs, r);
        }
        model.trees_.push_back(std::move(tree));

        const double prev = model.loss_curve_.back();
        model.loss_curve_.push_back(mean_loss());
        if (config.row_subsample >= 1.0 &&
            model.loss_curve_.back() > prev + 1e-12 * (1.0 + std::abs(prev))) {
            throw NumericalError("gbt: training loss increased in round " + std::to_string(t + 1));
        }
    }

    model.fitted_ = std::move(fhat);
    return model;
}

std::vector<double> GbtModel::predict(const std::vector<std::string>& names,
                                      const std::vector<std::vector<double>>& columns) const {
    if (names.size() != columns.size()) {
        throw InvalidValue("gbt: feature names and columns size mismatch");
    }
    std::vector<const std::vector<double>*> col_ptrs(feature_names_.size(), nullptr);
    for (std::size_t f = 0; f < feature_names_.size(); ++f) {
        for (std::size_t j = 0; j < names.size(); ++j) {
            if (names[j] == feature_names_[f]) {
                col_ptrs[f] = &columns[j];
                break;
            }
        }
        if (col_ptrs[f] == nullptr) {
            throw DataError("gbt: prediction input lacks feature '" + feature_names_[f] + "'");
        }
    }
    std::size_t n = 0;
    if (!columns.empty()) n = columns.front().size();
    for (const auto& col : columns) {
        if (col.size() != n) throw InvalidValue("gbt: column length mismatch");
    }

    std::vector<double> out(n, base_score_);
    for (std::size_t r = 0; r < n; ++r) {
        for (const auto& tree : trees_) {
            out[r] += config_.learning_rate * traverse(tree, col_ptrs, r);
        }
    }
    return out;
}

double GbtModel::predict_row(std::span<const double> row) const {
    if (row.size() != feature_names_.size()) {
        throw InvalidValue("gbt: row length does not match training feature count");
    }
    double pred = base_score_;
    for (const auto& tree : trees_) {
        int idx = 0;
        while (tree.nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const auto& nd = tree.nodes[static_cast<std::size_t>(idx)];
            const double v = row[static_cast<std::size_t>(nd.feature)];
            if (std::isnan(v)) {
                idx = nd.default_left ? nd.left : nd.right;
            } else {
                idx = v <= nd.threshold ? nd.left : nd.right;
            }
        }
        pred += config_.learning_rate * tree.nodes[static_cast<std::size_t>(idx)].value;
    }
    return pred;
}

std::vector<Importance> GbtModel::feature_importance() const {
    std::map<std::string, int> counts;
    for (const auto& tree : trees_) {
        for (const auto& nd : tree.nodes) {
            if (nd.feature >= 0) {
                counts[feature_names_[static_cast<std::size_t>(nd.feature)]] += 1;
            }
        }
    }
    std::vector<Importance> out;
    out.reserve(counts.size());
    for (const auto& [name, c] : counts) out.push_back(Importance{name, c});
    return out;
}

std::string GbtModel::to_json() const {
    json j;
    j["base_score"] = base_score_;
    j["config"] = {{"n_estimators", config_.n_estimators},
                   {"max_depth", config_.max_depth},
                   {"num_leaves", config_.num_leaves},
                   {"min_child_samples", config_.min_child_samples},
                   {"learning_rate", config_.learning_rate},
                   {"row_subsample", config_.row_subsample},
                   {"col_subsample", config_.col_subsample},
                   {"loss", loss_name(config_.loss)},
                   {"quantile", config_.quantile},
                   {"seed", config_.seed}};
    j["feature_names"] = feature_names_;
    json trees = json::array();
    for (const auto& tree : trees_) {
        json nodes = json::array();
        for (const auto& nd : tree.nodes) {
            nodes.push_back({{"feature", nd.feature},
                             {"threshold", nd.threshold},
                             {"default_left", nd.default_left},
                             {"left", nd.left},
                             {"right", nd.right},
                             {"value", nd.value},
                             {"gain", nd.gain}});
        }
        trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
    return j.dump();
}

GbtModel GbtModel::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("gbt: malformed model json: ") + e.what());
    }
    GbtModel model;
    try {
        const auto& c = j.at("config");
        model.config_.n_estimators = c.at("n_estimators").get<int>();
        model.config_.max_depth = c.at("max_depth").get<int>();
        model.config_.num_leaves = c.at("num_leaves").get<int>();
        model.config_.min_child_samples = c.at("min_child_samples").get<int>();
        model.config_.learning_rate = c.at("learning_rate").get<double>();
        model.config_.row_subsample = c.at("row_subsample").get<double>();
        model.config_.col_subsample = c.at("col_subsample").get<double>();
        model.config_.loss = loss_from_name(c.at("loss").get<std::string>());
        model.config_.quantile = c.at("quantile").get<double>();
        model.config_.seed = c.at("seed").get<std::uint64_t>();
        model.base_score_ = j.at("base_score").get<double>();
        model.feature_names_ = j.at("feature_names").get<std::vector<std::string>>();
        for (const auto& tj : j.at("trees")) {
            Tree tree;
            for (const auto& nj : tj) {
                TreeNode nd;
                nd.feature = nj.at("feature").get<int>();
                nd.threshold = nj.at("threshold").get<double>();
                nd.default_left = nj.at("default_left").get<bool>();
                nd.left = nj.at("left").get<int>();
                nd.right = nj.at("right").get<int>();
                nd.value = nj.at("value").get<double>();
                nd.gain = nj.at("gain").get<double>();
                tree.nodes.push_back(nd);
            }
            model.trees_.push_back(std::move(tree));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("gbt: model json missing fields: ") + e.what());
    }
    validate_config(model.config_);
    for (const auto& tree : model.trees_) {
        if (tree.nodes.empty()) throw DataError("gbt: empty tree in model json");
        const auto sz = static_cast<int>(tree.nodes.size());
        for (const auto& nd : tree.nodes) {
            if (nd.feature >= static_cast<int>(model.feature_names_.size())) {
                throw DataError("gbt: node references unknown feature");
            }
            if (nd.feature >= 0 &&
                (nd.left < 0 || nd.left >= sz || nd.right < 0 || nd.right >= sz)) {
                throw DataError("gbt: node child index out of range");
            }
        }
    }
    return model;
}

} // namespace rankguard::gbt
