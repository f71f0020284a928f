#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rankguard::gbt {

enum class Loss { kSquared, kPinball };

struct GbtConfig {
    int n_estimators = 50;
    int max_depth = 3;
    int num_leaves = 8;
    int min_child_samples = 50;
    double learning_rate = 0.05;
    double row_subsample = 0.8;  // (0, 1]
    double col_subsample = 0.8;  // (0, 1]
    Loss loss = Loss::kSquared;
    double quantile = 0.5;  // pinball only, in (0, 1)
    std::uint64_t seed = 0;
};

// Axis-aligned split node; feature == -1 marks a leaf. Leaf values are raw
// loss minimizers; predictions apply the learning rate.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;  // missing-value routing learned at fit time
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf only
    double gain = 0.0;   // split only
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
};

struct Importance {
    std::string feature;
    int split_count = 0;
};

// Gradient-boosted regression trees with exact greedy splits, best-first leaf
// growth bounded by num_leaves and max_depth, native NaN routing with a
// learned default direction, and per-leaf loss-minimizer values (mean for
// squared loss, the p-quantile of residuals for pinball). Deterministic given
// identical data, config, and seed.
class GbtModel {
public:
    GbtModel() = default;

    // columns: column-major feature matrix, NaN = missing; one column per
    // feature name. Targets must be finite. Fewer than 2*min_child_samples
    // rows degrades to a no-tree model predicting the global loss minimizer,
    // recording a warning.
    [[nodiscard]] static GbtModel fit(const std::vector<std::string>& feature_names,
                                      const std::vector<std::vector<double>>& columns,
                                      std::span<const double> targets, const GbtConfig& config);

    // names must be a superset of the training feature names; extra columns
    // are ignored, missing cells route along the recorded default branch.
    [[nodiscard]] std::vector<double> predict(const std::vector<std::string>& names,
                                              const std::vector<std::vector<double>>& columns) const;
    [[nodiscard]] double predict_row(std::span<const double> row_in_training_order) const;

    // Split counts per feature; features that were never split on are absent.
    [[nodiscard]] std::vector<Importance> feature_importance() const;

    // Self-describing JSON; from_json(to_json(m)) serializes byte-equal.
    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] static GbtModel from_json(const std::string& text);

    [[nodiscard]] const GbtConfig& config() const { return config_; }
    [[nodiscard]] const std::vector<std::string>& feature_names() const { return feature_names_; }
    [[nodiscard]] const std::vector<Tree>& trees() const { return trees_; }
    [[nodiscard]] double base_score() const { return base_score_; }

    // Mean training objective after each boosting round (index 0 = base
    // model). Non-increasing whenever row_subsample == 1.
    [[nodiscard]] const std::vector<double>& loss_curve() const { return loss_curve_; }
    // Final fit-time predictions on the training rows, in input order.
    [[nodiscard]] const std::vector<double>& fitted_predictions() const { return fitted_; }
    [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }

private:
    GbtConfig config_{};
    std::vector<std::string> feature_names_;
    std::vector<Tree> trees_;
    double base_score_ = 0.0;
    std::vector<double> loss_curve_;
    std::vector<double> fitted_;
    std::vector<std::string> warnings_;
};

} // namespace rankguard::gbt
