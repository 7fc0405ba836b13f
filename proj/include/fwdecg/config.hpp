#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "fwdecg/datastore.hpp"
#include "fwdecg/empropagation.hpp"
#include "fwdecg/pseudoecg.hpp"
#include "fwdecg/surrogatenet.hpp"
#include "fwdecg/trainpipe.hpp"

namespace fwdecg {

inline constexpr const char* kToolVersion = "0.1.0";

/// Corpus-level generation settings; class defaults come from default_generation_config.
struct CorpusSettings {
  int n_cases = 60;
  std::uint64_t seed = 0;
  double width_mm = 100.0;
  double dx_mm = 2.0;
};

/// Every tunable of the pipeline in one place.
struct WorkbenchConfig {
  std::string preset = "desk";
  CorpusSettings corpus;
  std::string cell_model = "fenton_karma_atrial_default";
  FentonKarmaParams cell;
  StimulusProtocol stimulus;
  SimulationConfig simulation;
  Electrode electrode;
  DatasetOptions dataset;
  ModelConfig model;
  TrainConfig train;

  /// Cross-section checks (model input size must match the dataset resolution, etc.).
  void validate() const;
};

/// 50 x 50 cells at 2 mm, 32 x 32 inputs, 100 epochs.
WorkbenchConfig desk_preset();
/// 200 x 200 cells at 1 mm, 300 cases, 64 x 64 inputs, 200 epochs.
WorkbenchConfig full_preset();
WorkbenchConfig preset_by_name(const std::string& name);

nlohmann::json to_json(const WorkbenchConfig& c);
/// Overlays `j` on the preset named by j["preset"] (or on `base` when absent). Unknown
/// top-level keys are rejected.
WorkbenchConfig workbench_config_from_json(const nlohmann::json& j, const WorkbenchConfig& base = desk_preset());
WorkbenchConfig load_workbench_config(const std::filesystem::path& path);

}  // namespace fwdecg
