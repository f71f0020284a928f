#pragma once

#include "rankguard/config.hpp"

#include <string>
#include <vector>

namespace rankguard::pipeline {

// One run directory: a manifest plus the per-module tables written next to it.
struct RunArtifacts {
    std::string out_dir;
    std::vector<std::string> files;  // sorted, relative to out_dir
    std::vector<std::string> warnings;
};

// Materializes the scripted panel (script inputs only): panel.csv plus a
// script echo, so a run can later be reproduced from the emitted files.
[[nodiscard]] RunArtifacts cmd_generate(const config::RunConfig& cfg);

// Full pipeline: signal quality per horizon, the uncertainty stack, regime
// gate, deployment policies, and conformal intervals. Emits per-module CSVs,
// summary.json, and manifest.json. Every calibrated scale is fitted on rows
// strictly before dev_final_split and frozen. Deterministic byte for byte
// given the same config and seed.
[[nodiscard]] RunArtifacts cmd_run(const config::RunConfig& cfg);

// Gate-only evaluation against stress-proxy and aggregated-uncertainty
// baselines: gate.csv + gate_report.json.
[[nodiscard]] RunArtifacts cmd_eval_gate(const config::RunConfig& cfg);

// Conformal-only evaluation: intervals_<normalizer>.csv + conformal_report.json.
[[nodiscard]] RunArtifacts cmd_conformal(const config::RunConfig& cfg);

// Text rendering of an existing run directory's summary.json; throws
// DataError when the directory has no readable summary.
[[nodiscard]] std::string render_report(const std::string& out_dir);

} // namespace rankguard::pipeline
