#include "fwdecg/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"

namespace fwdecg {

namespace {

struct BinWeight {
  int source;
  double weight;
};

// Fractional-overlap weights mapping `source` cells onto `target` bins along one axis.
std::vector<std::vector<BinWeight>> axis_weights(int source, int target) {
  std::vector<std::vector<BinWeight>> bins(static_cast<std::size_t>(target));
  const double width = static_cast<double>(source) / static_cast<double>(target);
  for (int i = 0; i < target; ++i) {
    const double lo = static_cast<double>(i) * source / target;
    const double hi = static_cast<double>(i + 1) * source / target;
    const int k0 = static_cast<int>(std::floor(lo));
    const int k1 = std::min(source - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int k = k0; k <= k1; ++k) {
      const double overlap = std::min<double>(k + 1, hi) - std::max<double>(k, lo);
      if (overlap > 0.0) bins[static_cast<std::size_t>(i)].push_back({k, overlap / width});
    }
  }
  return bins;
}

nlohmann::json meta_to_json(const Sample& s) {
  return {{"case_id", s.meta.case_id},
          {"label", std::string(to_string(s.label))},
          {"grid_seed", s.meta.grid_seed},
          {"d_range", {s.meta.d_range.lo, s.meta.d_range.hi}},
          {"d_value", s.meta.d_value},
          {"normalized", s.meta.normalized},
          {"normalization", to_json(s.meta.normalization)}};
}

std::vector<std::uint64_t> dims_of(const FrameStack& f) {
  return {static_cast<std::uint64_t>(f.t), 1, static_cast<std::uint64_t>(f.h), static_cast<std::uint64_t>(f.w)};
}

}  // namespace

FrameStack downsample_frames(const FrameStack& frames, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0) throw ConfigError("downsample target dimensions must be positive");
  if (frames.values.size() != static_cast<std::size_t>(frames.t) * frames.frame_size()) {
    throw ShapeError("frame stack size does not match its dimensions");
  }
  const auto rows = axis_weights(frames.h, target_h);
  const auto cols = axis_weights(frames.w, target_w);
  FrameStack out;
  out.t = frames.t;
  out.h = target_h;
  out.w = target_w;
  out.values.assign(static_cast<std::size_t>(frames.t) * out.frame_size(), 0.0);
  std::vector<double> row_pass(static_cast<std::size_t>(target_h) * static_cast<std::size_t>(frames.w));
  for (int t = 0; t < frames.t; ++t) {
    const double* src = frames.values.data() + static_cast<std::size_t>(t) * frames.frame_size();
    double* dst = out.values.data() + static_cast<std::size_t>(t) * out.frame_size();
    std::fill(row_pass.begin(), row_pass.end(), 0.0);
    for (int i = 0; i < target_h; ++i) {
      double* acc = row_pass.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(frames.w);
      for (const auto& [k, wk] : rows[static_cast<std::size_t>(i)]) {
        const double* line = src + static_cast<std::size_t>(k) * static_cast<std::size_t>(frames.w);
        for (int x = 0; x < frames.w; ++x) acc[x] += wk * line[x];
      }
    }
    for (int i = 0; i < target_h; ++i) {
      const double* acc = row_pass.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(frames.w);
      for (int j = 0; j < target_w; ++j) {
        double v = 0.0;
        for (const auto& [k, wk] : cols[static_cast<std::size_t>(j)]) v += wk * acc[k];
        dst[static_cast<std::size_t>(i) * static_cast<std::size_t>(target_w) + static_cast<std::size_t>(j)] = v;
      }
    }
  }
  return out;
}

Sample make_sample(const FrameStack& frames, std::span<const double> ecg, TissueClass label, SampleMeta meta) {
  if (static_cast<int>(ecg.size()) != frames.t) throw ShapeError("ECG length must equal the frame count");
  Sample s;
  s.input = Tensor::from_float(dims_of(frames), std::vector<float>(frames.values.begin(), frames.values.end()));
  s.target = Tensor::from_float({static_cast<std::uint64_t>(ecg.size())}, std::vector<float>(ecg.begin(), ecg.end()));
  s.label = label;
  s.meta = std::move(meta);
  for (float v : s.input.f32) {
    if (!std::isfinite(v)) throw NumericalError("non-finite input value in sample " + s.meta.case_id);
  }
  for (float v : s.target.f32) {
    if (!std::isfinite(v)) throw NumericalError("non-finite target value in sample " + s.meta.case_id);
  }
  return s;
}

NormalizationConstants fit_normalization(std::span<const Sample> samples, std::span<const std::size_t> train_indices) {
  if (samples.empty()) throw ConfigError("cannot normalize an empty corpus");
  if (train_indices.empty()) throw ConfigError("normalization needs a non-empty training split");
  NormalizationConstants c;
  c.u_min = std::numeric_limits<double>::infinity();
  c.u_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    for (float v : s.input.f32) {
      c.u_min = std::min(c.u_min, static_cast<double>(v));
      c.u_max = std::max(c.u_max, static_cast<double>(v));
    }
  }
  if (!(c.u_max > c.u_min)) throw ConfigError("input frames have zero range");
  double sum = 0.0;
  std::size_t count = 0;
  for (auto i : train_indices) {
    for (float v : samples[i].target.f32) sum += v;
    count += samples[i].target.f32.size();
  }
  c.target_mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (auto i : train_indices) {
    for (float v : samples[i].target.f32) ss += (v - c.target_mean) * (v - c.target_mean);
  }
  c.target_std = std::sqrt(ss / static_cast<double>(count));
  if (!(c.target_std > 0.0)) throw ConfigError("zero-variance targets cannot be z-scored");
  return c;
}

Sample apply_normalization(const Sample& sample, const NormalizationConstants& c) {
  Sample s = sample;
  const double range = c.u_max - c.u_min;
  for (auto& v : s.input.f32) v = static_cast<float>((static_cast<double>(v) - c.u_min) / range);
  for (auto& v : s.target.f32) v = static_cast<float>((static_cast<double>(v) - c.target_mean) / c.target_std);
  s.meta.normalization = c;
  s.meta.normalized = true;
  return s;
}

std::pair<std::vector<Sample>, NormalizationConstants> normalize_corpus(std::span<const Sample> samples,
                                                                        std::span<const std::size_t> train_indices) {
  const auto c = fit_normalization(samples, train_indices);
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(apply_normalization(s, c));
  return {std::move(out), c};
}

CorpusSplit split_corpus(std::size_t n, std::array<double, 3> ratios, std::span<const TissueClass> labels,
                         std::uint64_t seed) {
  if (labels.size() != n) throw ShapeError("label count does not match corpus size");
  double ratio_sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const auto nd = static_cast<double>(n);
  std::array<long, 3> sizes{};
  sizes[1] = std::lround(ratios[1] * nd);
  sizes[2] = std::lround(ratios[2] * nd);
  sizes[0] = static_cast<long>(n) - sizes[1] - sizes[2];
  if (sizes[0] < 0) throw ConfigError("split ratios leave no room for the training split");
  const int active_splits = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));

  std::array<std::vector<std::size_t>, 4> members;
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::string> too_small;
  for (auto cls : kAllTissueClasses) {
    const auto& m = members[static_cast<std::size_t>(cls)];
    if (!m.empty() && static_cast<int>(m.size()) < active_splits) too_small.emplace_back(to_string(cls));
  }
  if (!too_small.empty()) {
    std::string msg = "classes with fewer members than splits:";
    for (const auto& name : too_small) msg += " " + name;
    throw ConfigError(msg);
  }

  // Per-class (val, test) candidates whose counts stay within 1 of the exact share in every split.
  struct Choice {
    long val, test;
    double cost;
  };
  std::array<std::vector<Choice>, 4> choices;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto nc = static_cast<long>(members[c].size());
    const double ev = ratios[1] * static_cast<double>(nc);
    const double et = ratios[2] * static_cast<double>(nc);
    const double er = ratios[0] * static_cast<double>(nc);
    for (long v = std::max(0L, static_cast<long>(std::ceil(ev - 1.0))); v <= static_cast<long>(std::floor(ev + 1.0)); ++v) {
      for (long t = std::max(0L, static_cast<long>(std::ceil(et - 1.0))); t <= static_cast<long>(std::floor(et + 1.0)); ++t) {
        const long r = nc - v - t;
        if (r < 0 || std::abs(static_cast<double>(r) - er) > 1.0) continue;
        const double cost = (v - ev) * (v - ev) + (t - et) * (t - et) + (r - er) * (r - er);
        choices[c].push_back({v, t, cost});
      }
    }
  }
  std::array<std::size_t, 4> pick{};
  std::array<std::size_t, 4> best{};
  double best_cost = std::numeric_limits<double>::infinity();
  // Exhaustive search over at most 9^4 combinations; first minimum wins for determinism.
  auto search = [&](auto&& self, std::size_t c, long val, long test, double cost) -> void {
    if (c == 4) {
      if (val == sizes[1] && test == sizes[2] && cost < best_cost) {
        best_cost = cost;
        best = pick;
      }
      return;
    }
    for (std::size_t k = 0; k < choices[c].size(); ++k) {
      pick[c] = k;
      self(self, c + 1, val + choices[c][k].val, test + choices[c][k].test, cost + choices[c][k].cost);
    }
  };
  search(search, 0, 0, 0, 0.0);
  if (!std::isfinite(best_cost)) throw ConfigError("no stratified allocation satisfies the split sizes");

  CorpusSplit split;
  split.seed = seed;
  Rng rng(seed);
  for (std::size_t c = 0; c < 4; ++c) {
    auto m = members[c];
    rng.shuffle(std::span(m));
    const auto& ch = choices[c].empty() ? Choice{0, 0, 0.0} : choices[c][best[c]];
    std::size_t pos = 0;
    for (long k = 0; k < ch.val; ++k) split.val.push_back(m[pos++]);
    for (long k = 0; k < ch.test; ++k) split.test.push_back(m[pos++]);
    while (pos < m.size()) split.train.push_back(m[pos++]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

nlohmann::json to_json(const NormalizationConstants& c) {
  return {{"u_min", c.u_min}, {"u_max", c.u_max}, {"target_mean", c.target_mean}, {"target_std", c.target_std}};
}

NormalizationConstants normalization_from_json(const nlohmann::json& j) {
  NormalizationConstants c;
  c.u_min = j.at("u_min").get<double>();
  c.u_max = j.at("u_max").get<double>();
  c.target_mean = j.at("target_mean").get<double>();
  c.target_std = j.at("target_std").get<double>();
  return c;
}

void save_sample(const std::filesystem::path& dir, const Sample& sample) {
  write_tensor(dir / "input.ecgf", sample.input);
  write_tensor(dir / "target.ecgf", sample.target);
  write_text_atomic(dir / "meta.json", meta_to_json(sample).dump(2) + "\n");
}

Sample load_sample(const std::filesystem::path& dir) {
  Sample s;
  s.input = read_tensor(dir / "input.ecgf");
  s.target = read_tensor(dir / "target.ecgf");
  if (s.input.dims.size() != 4 || s.input.dims[1] != 1 || s.target.dims.size() != 1 ||
      s.target.dims[0] != s.input.dims[0]) {
    throw FormatError(dir.string() + ": sample tensors have inconsistent shapes");
  }
  const auto j = nlohmann::json::parse(read_text(dir / "meta.json"));
  s.label = tissue_class_from_string(j.at("label").get<std::string>());
  s.meta.case_id = j.at("case_id").get<std::string>();
  s.meta.grid_seed = j.at("grid_seed").get<std::uint64_t>();
  s.meta.d_range = {j.at("d_range").at(0).get<double>(), j.at("d_range").at(1).get<double>()};
  s.meta.d_value = j.at("d_value").get<double>();
  s.meta.normalized = j.at("normalized").get<bool>();
  s.meta.normalization = normalization_from_json(j.at("normalization"));
  return s;
}

void save_simulation_case(const std::filesystem::path& dir, const SimulationCase& c, const nlohmann::json& extra) {
  const auto& f = c.frames;
  write_tensor(dir / "frames.ecgf",
               Tensor::from_float({static_cast<std::uint64_t>(f.t), static_cast<std::uint64_t>(f.h),
                                   static_cast<std::uint64_t>(f.w)},
                                  std::vector<float>(f.values.begin(), f.values.end())));
  write_tensor(dir / "ecg.ecgf", Tensor::from_float({c.ecg.size()}, std::vector<float>(c.ecg.begin(), c.ecg.end())));
  write_tensor(dir / "timestamps.ecgf",
               Tensor::from_float({c.timestamps.size()}, std::vector<float>(c.timestamps.begin(), c.timestamps.end())));
  nlohmann::json meta = {{"case_id", c.case_id},
                         {"label", std::string(to_string(c.label))},
                         {"grid_seed", c.grid_seed},
                         {"d_range", {c.d_range.lo, c.d_range.hi}},
                         {"d_value", c.d_value}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

SimulationCase load_simulation_case(const std::filesystem::path& dir) {
  SimulationCase c;
  const auto meta = nlohmann::json::parse(read_text(dir / "meta.json"));
  c.case_id = meta.at("case_id").get<std::string>();
  c.label = tissue_class_from_string(meta.at("label").get<std::string>());
  c.grid_seed = meta.at("grid_seed").get<std::uint64_t>();
  c.d_range = {meta.at("d_range").at(0).get<double>(), meta.at("d_range").at(1).get<double>()};
  c.d_value = meta.at("d_value").get<double>();
  const auto frames = read_tensor(dir / "frames.ecgf");
  if (frames.dims.size() != 3) throw FormatError(dir.string() + ": frames tensor must be 3-D");
  c.frames.t = static_cast<int>(frames.dims[0]);
  c.frames.h = static_cast<int>(frames.dims[1]);
  c.frames.w = static_cast<int>(frames.dims[2]);
  c.frames.values = frames.to_double();
  c.ecg = read_tensor(dir / "ecg.ecgf").to_double();
  c.timestamps = read_tensor(dir / "timestamps.ecgf").to_double();
  if (static_cast<int>(c.ecg.size()) != c.frames.t || c.timestamps.size() != c.ecg.size()) {
    throw FormatError(dir.string() + ": ECG length does not match frame count");
  }
  return c;
}

void DatasetOptions::validate() const {
  if (input_h <= 0 || input_w <= 0) throw ConfigError("input resolution must be positive");
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

Dataset build_dataset(std::span<const SimulationCase> cases, const DatasetOptions& options) {
  options.validate();
  if (cases.empty()) throw ConfigError("cannot build a dataset from an empty simulation corpus");
  std::vector<Sample> raw;
  std::vector<TissueClass> labels;
  raw.reserve(cases.size());
  for (const auto& c : cases) {
    const auto pooled = downsample_frames(c.frames, options.input_h, options.input_w);
    SampleMeta meta;
    meta.case_id = c.case_id;
    meta.grid_seed = c.grid_seed;
    meta.d_range = c.d_range;
    meta.d_value = c.d_value;
    raw.push_back(make_sample(pooled, c.ecg, c.label, std::move(meta)));
    labels.push_back(c.label);
  }
  Dataset ds;
  ds.options = options;
  ds.split = split_corpus(raw.size(), options.ratios, labels, options.seed);
  auto [samples, constants] = normalize_corpus(raw, ds.split.train);
  ds.samples = std::move(samples);
  ds.normalization = constants;
  return ds;
}

nlohmann::json to_json(const DatasetOptions& o) {
  return {{"ratios", {o.ratios[0], o.ratios[1], o.ratios[2]}},
          {"seed", o.seed},
          {"input_h", o.input_h},
          {"input_w", o.input_w}};
}

DatasetOptions dataset_options_from_json(const nlohmann::json& j, DatasetOptions o) {
  if (j.contains("ratios")) {
    for (std::size_t i = 0; i < 3; ++i) o.ratios[i] = j.at("ratios").at(i).get<double>();
  }
  o.seed = j.value("seed", o.seed);
  o.input_h = j.value("input_h", o.input_h);
  o.input_w = j.value("input_w", o.input_w);
  return o;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const nlohmann::json& provenance) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const auto rel = std::filesystem::path("samples") / s.meta.case_id;
    save_sample(dir / rel, s);
    samples.push_back({{"case_id", s.meta.case_id}, {"label", std::string(to_string(s.label))},
                       {"path", rel.generic_string()}});
  }
  nlohmann::json manifest = {
      {"format", "fwdecg-dataset"},
      {"version", 1},
      {"options", to_json(ds.options)},
      {"normalization", to_json(ds.normalization)},
      {"split", {{"seed", ds.split.seed}, {"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}}},
      {"samples", samples},
      {"provenance", provenance}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  if (manifest.value("format", "") != "fwdecg-dataset") throw FormatError(dir.string() + ": not a dataset manifest");
  Dataset ds;
  ds.options = dataset_options_from_json(manifest.at("options"));
  ds.normalization = normalization_from_json(manifest.at("normalization"));
  const auto& sp = manifest.at("split");
  ds.split.seed = sp.at("seed").get<std::uint64_t>();
  ds.split.train = sp.at("train").get<std::vector<std::size_t>>();
  ds.split.val = sp.at("val").get<std::vector<std::size_t>>();
  ds.split.test = sp.at("test").get<std::vector<std::size_t>>();
  for (const auto& entry : manifest.at("samples")) {
    auto s = load_sample(dir / entry.at("path").get<std::string>());
    if (!(s.meta.normalization == ds.normalization)) {
      throw FormatError("sample " + s.meta.case_id + " was normalized with constants other than the training split's");
    }
    ds.samples.push_back(std::move(s));
  }
  for (const auto* list : {&ds.split.train, &ds.split.val, &ds.split.test}) {
    for (auto i : *list) {
      if (i >= ds.samples.size()) throw FormatError("split index out of range");
    }
  }
  return ds;
}

}  // namespace fwdecg
