#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fwdecg/config.hpp"

namespace fwdecg {

/// Collects the provenance of one subcommand run and writes `run_manifest.json`.
class RunManifest {
 public:
  RunManifest(std::string subcommand, const WorkbenchConfig& config);

  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_output(const std::string& name, const std::filesystem::path& path);
  void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }
  /// Records the seconds elapsed since the previous mark (or construction) under `stage`.
  void mark(const std::string& stage);

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& out_dir) const;

 private:
  std::string subcommand_;
  nlohmann::json config_;
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json timings_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point last_;
};

/// FNV-1a 64 of the file bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Writes `grids/<case_id>.{ecgf,json}` and `corpus.json`.
void run_generate(const WorkbenchConfig& cfg, const std::filesystem::path& out);

struct SimulateSummary {
  int succeeded = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // case id, message
};

/// One simulation per corpus grid, `jobs` at a time. Failed cases are recorded and skipped.
SimulateSummary run_simulate(const WorkbenchConfig& cfg, const std::filesystem::path& corpus,
                             const std::filesystem::path& out, int jobs);

void run_dataset_build(const WorkbenchConfig& cfg, const std::filesystem::path& simulations,
                       const std::filesystem::path& out);

/// Trains on the dataset and writes epochs.csv, report.json, evaluation.json and checkpoints/best.
TrainReport run_train(const WorkbenchConfig& cfg, const std::filesystem::path& dataset, const std::filesystem::path& out);

/// Evaluates a checkpoint on one split ("train", "val" or "test") and writes evaluation.json.
EvalReport run_eval(const WorkbenchConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset, const std::string& split, const std::filesystem::path& out);

/// Writes ablation.csv, arms/<variant>/{epochs.csv,report.json} and evaluation.json of the full model.
std::vector<AblationRow> run_ablate(const WorkbenchConfig& cfg, const std::filesystem::path& dataset,
                                    const std::vector<std::string>& variants, const std::filesystem::path& out);

/// Emits traces/<case_id>.csv (t_ms,y_true,y_pred) and summary.csv from a run's evaluation.json,
/// plus ablation.csv when the run has one.
void run_plot(const std::filesystem::path& run, const std::filesystem::path& out);

/// Full evaluation record including traces, as stored in evaluation.json.
nlohmann::json evaluation_json(const EvalReport& report, double frame_interval_ms);

}  // namespace fwdecg
