// SPDX-License-Identifier: Apache-2.0
//
// Stage runners behind the command-line tool. Every stage works inside one
// workspace directory, reads the artifacts of earlier stages by fixed file
// names and records a run manifest (config, seeds, input and output hashes)
// under runs/<stage>.json.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace dstyle::pipeline {

namespace fs = std::filesystem;

/// Artifact file names inside the workspace.
namespace artifact {
inline constexpr const char* kRaw = "raw.csv";
inline constexpr const char* kProfiles = "profiles.json";
inline constexpr const char* kTrajectories = "trajectories.csv";
inline constexpr const char* kClean = "clean.csv";
inline constexpr const char* kPreprocessReport = "preprocess_report.json";
inline constexpr const char* kSimilarity = "similarity.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kSampleReport = "sample_report.json";
inline constexpr const char* kSegments = "segments.dpfm";
inline constexpr const char* kModel = "model.dpnn";
inline constexpr const char* kArchitecture = "architecture.json";
inline constexpr const char* kHistory = "history.json";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kFeatureGrid = "feature_grid.csv";
inline constexpr const char* kResolution = "resolution_report.json";
inline constexpr const char* kLatents = "latents.csv";
}  // namespace artifact

/// Every stage name, in pipeline order.
const std::vector<std::string>& stage_names();

/// Built-in defaults for every section.
nlohmann::json default_config();

/// Defaults, then the config file (if any), then `overrides`; later wins.
/// Unknown keys are rejected with UsageError.
nlohmann::json merge_config(const nlohmann::json& file_config, const nlohmann::json& overrides);

struct StageContext {
  fs::path workspace;
  nlohmann::json config;  ///< fully merged
  /// Optional external input for `ingest`; defaults to the workspace raw.csv.
  fs::path input;
  std::ostream* log = nullptr;
};

/// Runs one stage. Throws UsageError, DataError or NumericError.
void run_stage(const std::string& stage, const StageContext& ctx);

/// SHA-256 of an artifact, checked against the hash that the producing
/// stage recorded. Throws DataError when the file is missing or differs.
std::string verify_artifact(const fs::path& workspace, const std::string& name);

}  // namespace dstyle::pipeline
