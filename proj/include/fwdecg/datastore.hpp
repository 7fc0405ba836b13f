#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "fwdecg/tensor_file.hpp"
#include "fwdecg/tissuegen.hpp"

namespace fwdecg {

/// T x H x W stack of scalar frames (single channel).
struct FrameStack {
  int t = 0;
  int h = 0;
  int w = 0;
  std::vector<double> values;

  std::size_t frame_size() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
};

/// Area-average pooling onto a th x tw grid. Output cell (i, j) averages the source over the
/// rectangle [i H/th, (i+1) H/th) x [j W/tw, (j+1) W/tw) with fractional cell overlap, so
/// block means are exact when the target divides the source and the overall mean is preserved.
FrameStack downsample_frames(const FrameStack& frames, int target_h, int target_w);

struct NormalizationConstants {
  double u_min = 0.0;
  double u_max = 1.0;
  double target_mean = 0.0;
  double target_std = 1.0;
  bool operator==(const NormalizationConstants&) const = default;
};

struct SampleMeta {
  std::string case_id;
  std::uint64_t grid_seed = 0;
  Interval d_range;
  double d_value = 0.0;
  NormalizationConstants normalization;
  bool normalized = false;
  bool operator==(const SampleMeta& o) const {
    return case_id == o.case_id && grid_seed == o.grid_seed && d_range.lo == o.d_range.lo &&
           d_range.hi == o.d_range.hi && d_value == o.d_value && normalization == o.normalization &&
           normalized == o.normalized;
  }
};

/// One training example. `input` is float32 with dims (T, 1, H, W); `target` float32 with dims (T).
struct Sample {
  Tensor input;
  Tensor target;
  TissueClass label = TissueClass::Healthy;
  SampleMeta meta;

  int frames() const { return static_cast<int>(input.dims.at(0)); }
  int height() const { return static_cast<int>(input.dims.at(2)); }
  int width() const { return static_cast<int>(input.dims.at(3)); }
  bool operator==(const Sample&) const = default;
};

Sample make_sample(const FrameStack& frames, std::span<const double> ecg, TissueClass label, SampleMeta meta);

/// Input range over every sample, target mean and (population) std over `train_indices`.
/// Throws ConfigError on an empty corpus, zero input range or zero target variance.
NormalizationConstants fit_normalization(std::span<const Sample> samples, std::span<const std::size_t> train_indices);
Sample apply_normalization(const Sample& sample, const NormalizationConstants& constants);
std::pair<std::vector<Sample>, NormalizationConstants> normalize_corpus(std::span<const Sample> samples,
                                                                        std::span<const std::size_t> train_indices);

struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Stratified split. val/test sizes are round(ratio * n), train takes the remainder; every
/// (class, split) count is the floor or ceiling of its exact share. Index lists are sorted.
CorpusSplit split_corpus(std::size_t n, std::array<double, 3> ratios, std::span<const TissueClass> labels,
                         std::uint64_t seed);

/// Writes `dir/input.ecgf`, `dir/target.ecgf` and `dir/meta.json`.
void save_sample(const std::filesystem::path& dir, const Sample& sample);
Sample load_sample(const std::filesystem::path& dir);

nlohmann::json to_json(const NormalizationConstants& c);
NormalizationConstants normalization_from_json(const nlohmann::json& j);

/// Simulator output for one tissue case, as stored by `simulate`.
struct SimulationCase {
  std::string case_id;
  TissueClass label = TissueClass::Healthy;
  std::uint64_t grid_seed = 0;
  Interval d_range;
  double d_value = 0.0;
  FrameStack frames;               // T x ny x nx membrane potential
  std::vector<double> ecg;         // T
  std::vector<double> timestamps;  // T, ms
};

void save_simulation_case(const std::filesystem::path& dir, const SimulationCase& c, const nlohmann::json& extra);
SimulationCase load_simulation_case(const std::filesystem::path& dir);

struct DatasetOptions {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  int input_h = 32;
  int input_w = 32;

  void validate() const;
};

/// A training-ready corpus held in memory.
struct Dataset {
  std::vector<Sample> samples;
  CorpusSplit split;
  NormalizationConstants normalization;
  DatasetOptions options;
};

Dataset build_dataset(std::span<const SimulationCase> cases, const DatasetOptions& options);

/// Dataset directory: `manifest.json` plus `samples/<case_id>/`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, const nlohmann::json& provenance);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const DatasetOptions& o);
DatasetOptions dataset_options_from_json(const nlohmann::json& j, DatasetOptions base = {});

}  // namespace fwdecg
