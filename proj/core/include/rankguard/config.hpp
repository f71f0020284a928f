#pragma once

#include "rankguard/conformal.hpp"
#include "rankguard/deup.hpp"
#include "rankguard/gate.hpp"
#include "rankguard/gbt.hpp"
#include "rankguard/policy.hpp"
#include "rankguard/portfolio.hpp"
#include "rankguard/synthetic.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rankguard::config {

struct FoldConfig {
    int n_folds = 36;
    int embargo_days = 90;
    int min_train_folds = 20;
};

struct ConformalBlock {
    double nominal = 0.90;
    int window = 60;
    int min_scores = 30;
    std::vector<conformal::Normalizer> normalizers = {
        conformal::Normalizer::kRaw, conformal::Normalizer::kVol,
        conformal::Normalizer::kDeupOracle, conformal::Normalizer::kDeupPit};
};

// One structured file drives a whole run. The master seed feeds both the
// synthetic generator and the per-fold model seeds; horizons beyond
// uq_horizon only contribute to the signal-quality panel.
struct RunConfig {
    std::optional<RegimeScript> script;   // exactly one of script / csv_path
    std::optional<std::string> csv_path;
    std::vector<int> horizons = {20, 60, 90};
    int uq_horizon = 20;
    FoldConfig folds;
    std::string dev_final_split = "2018-07-02";  // first FINAL date
    gbt::GbtConfig gx;
    deup::AleatoricConfig aleatoric;
    gate::GateConfig gate;
    std::vector<policy::Variant> policies = {
        policy::Variant::kUngatedRaw,    policy::Variant::kGateRaw,
        policy::Variant::kGateVol,       policy::Variant::kGateUaSort,
        policy::Variant::kGateResidEhat, policy::Variant::kGateEhatCap,
        policy::Variant::kGateVolEhatCap, policy::Variant::kTrailIcK4};
    int legs = 10;
    double cost_bps = 10.0;
    ConformalBlock conformal;
    std::optional<portfolio::CrisisWindow> crisis;
    std::string out_dir = "out";
    std::uint64_t seed = 42;
};

// Frozen defaults over the bundled three-segment heteroscedastic script.
[[nodiscard]] RunConfig default_run_config();

// Strict JSON: unknown keys, malformed values, or inconsistent blocks throw
// ConfigError with the offending key in the message.
[[nodiscard]] RunConfig parse_run_config(const std::string& json_text);
[[nodiscard]] RunConfig load_run_config(const std::string& path);

// Re-checks every block invariant; parse runs this automatically, callers that
// override fields afterwards (CLI flags) must run it again.
void validate_run_config(const RunConfig& cfg);

// Canonical serialized form: alphabetically ordered keys with every
// effective value spelled out, so equal configs hash equal.
[[nodiscard]] std::string canonical_json(const RunConfig& cfg);

// FNV-1a 64-bit hash of the canonical form, 16 lowercase hex digits.
[[nodiscard]] std::string config_hash(const RunConfig& cfg);

[[nodiscard]] std::string_view aleatoric_mode_name(deup::AleatoricMode mode);
[[nodiscard]] deup::AleatoricMode aleatoric_mode_from_name(std::string_view name);

} // namespace rankguard::config
