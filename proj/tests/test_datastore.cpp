#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <unistd.h>

#include "fwdecg/datastore.hpp"
#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"

using namespace fwdecg;
namespace fs = std::filesystem;

namespace {

FrameStack random_stack(int t, int h, int w, std::uint64_t seed) {
  FrameStack f;
  f.t = t;
  f.h = h;
  f.w = w;
  Rng rng(seed);
  f.values.resize(static_cast<std::size_t>(t) * f.frame_size());
  for (auto& v : f.values) v = rng.uniform();
  return f;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t count) {
  return std::accumulate(v.begin() + static_cast<long>(begin), v.begin() + static_cast<long>(begin + count), 0.0) /
         static_cast<double>(count);
}

Sample toy_sample(std::vector<double> frame_values, std::vector<double> ecg, TissueClass label, std::string id) {
  FrameStack f;
  f.t = static_cast<int>(ecg.size());
  f.h = 1;
  f.w = static_cast<int>(frame_values.size()) / f.t;
  f.values = std::move(frame_values);
  SampleMeta meta;
  meta.case_id = std::move(id);
  return make_sample(f, ecg, label, meta);
}

std::vector<TissueClass> labels_with_counts(int healthy, int gap, int fibrotic, int combined) {
  std::vector<TissueClass> labels;
  labels.insert(labels.end(), healthy, TissueClass::Healthy);
  labels.insert(labels.end(), gap, TissueClass::GapJunction);
  labels.insert(labels.end(), fibrotic, TissueClass::Fibrotic);
  labels.insert(labels.end(), combined, TissueClass::Combined);
  return labels;
}

std::array<int, 4> class_counts(const std::vector<std::size_t>& idx, const std::vector<TissueClass>& labels) {
  std::array<int, 4> out{};
  for (auto i : idx) ++out[static_cast<std::size_t>(labels[i])];
  return out;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fwdecg_datastore_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Downsample, ConstantFieldStaysConstant) {
  FrameStack f;
  f.t = 1;
  f.h = 4;
  f.w = 4;
  f.values.assign(16, 0.42);
  const auto out = downsample_frames(f, 2, 2);
  ASSERT_EQ(out.values.size(), 4u);
  for (double v : out.values) EXPECT_DOUBLE_EQ(v, 0.42);
}

TEST(Downsample, SameDimsIsIdentity) {
  const auto f = random_stack(3, 7, 5, 1);
  EXPECT_EQ(downsample_frames(f, 7, 5).values, f.values);
}

TEST(Downsample, CornerBlockMean) {
  const auto f = random_stack(2, 200, 200, 3);
  const auto out = downsample_frames(f, 50, 50);
  for (int t = 0; t < 2; ++t) {
    double corner = 0.0;
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) corner += f.values[static_cast<std::size_t>(t) * 40000 + static_cast<std::size_t>(y * 200 + x)];
    }
    EXPECT_NEAR(out.values[static_cast<std::size_t>(t) * 2500], corner / 16.0, 1e-12);
  }
}

TEST(Downsample, MeanPreservedForNonDividingTarget) {
  const auto f = random_stack(2, 50, 50, 9);
  const auto out = downsample_frames(f, 32, 32);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_NEAR(mean_of(out.values, t * out.frame_size(), out.frame_size()), mean_of(f.values, t * 2500, 2500), 1e-12);
  }
}

TEST(Downsample, ZeroTargetThrows) {
  const auto f = random_stack(1, 4, 4, 1);
  EXPECT_THROW(downsample_frames(f, 0, 2), ConfigError);
  EXPECT_THROW(downsample_frames(f, 2, 0), ConfigError);
}

TEST(Normalize, InputEndpointsMapToUnitInterval) {
  std::vector<Sample> corpus{toy_sample({0.0, 0.5, 1.3, 0.2}, {1.0, 2.0}, TissueClass::Healthy, "a"),
                             toy_sample({0.7, 0.1, 0.9, 0.4}, {3.0, 5.0}, TissueClass::Healthy, "b")};
  const std::vector<std::size_t> train{0, 1};
  const auto [out, c] = normalize_corpus(corpus, train);
  EXPECT_EQ(c.u_min, 0.0);
  EXPECT_FLOAT_EQ(static_cast<float>(c.u_max), 1.3f);
  EXPECT_EQ(out[0].input.f32[0], 0.0f);
  EXPECT_EQ(out[0].input.f32[2], 1.0f);
  for (const auto& s : out) {
    for (float v : s.input.f32) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Normalize, RenormalizingIsIdentity) {
  std::vector<Sample> corpus{toy_sample({0.0, 0.25, 0.5, 1.0}, {1.0, -1.0}, TissueClass::Healthy, "a"),
                             toy_sample({0.75, 0.125, 1.0, 0.0}, {-1.0, 1.0}, TissueClass::Fibrotic, "b")};
  const std::vector<std::size_t> train{0, 1};
  const auto [once, c1] = normalize_corpus(corpus, train);
  const auto [twice, c2] = normalize_corpus(once, train);
  EXPECT_NEAR(c2.u_min, 0.0, 1e-12);
  EXPECT_NEAR(c2.u_max, 1.0, 1e-12);
  EXPECT_NEAR(c2.target_mean, 0.0, 1e-12);
  EXPECT_NEAR(c2.target_std, 1.0, 1e-12);
  for (std::size_t i = 0; i < once.size(); ++i) {
    for (std::size_t k = 0; k < once[i].input.f32.size(); ++k) {
      EXPECT_NEAR(twice[i].input.f32[k], once[i].input.f32[k], 1e-12);
    }
    for (std::size_t k = 0; k < once[i].target.f32.size(); ++k) {
      EXPECT_NEAR(twice[i].target.f32[k], once[i].target.f32[k], 1e-12);
    }
  }
}

TEST(Normalize, ValidationUsesTrainConstants) {
  // Two training samples with targets {1, 3} and {5, 7}; mean 4, population std sqrt(5).
  std::vector<Sample> corpus{toy_sample({0.0, 1.0}, {1.0, 3.0}, TissueClass::Healthy, "t0"),
                             toy_sample({2.0, 0.5}, {5.0, 7.0}, TissueClass::Healthy, "t1"),
                             toy_sample({4.0, 1.0}, {10.0, -2.0}, TissueClass::Healthy, "v0")};
  const std::vector<std::size_t> train{0, 1};
  const auto [out, c] = normalize_corpus(corpus, train);
  EXPECT_DOUBLE_EQ(c.target_mean, 4.0);
  EXPECT_DOUBLE_EQ(c.target_std, std::sqrt(5.0));
  EXPECT_EQ(c.u_min, 0.0);
  EXPECT_EQ(c.u_max, 4.0);
  const auto& v = out[2];
  EXPECT_FLOAT_EQ(v.target.f32[0], static_cast<float>(6.0 / std::sqrt(5.0)));
  EXPECT_FLOAT_EQ(v.target.f32[1], static_cast<float>(-6.0 / std::sqrt(5.0)));
  EXPECT_EQ(v.input.f32[0], 1.0f);
  EXPECT_EQ(v.input.f32[1], 0.25f);
  for (const auto& s : out) {
    EXPECT_TRUE(s.meta.normalized);
    EXPECT_EQ(s.meta.normalization, c);
  }
}

TEST(Normalize, ErrorCases) {
  std::vector<Sample> flat{toy_sample({0.0, 1.0}, {2.0, 2.0}, TissueClass::Healthy, "a")};
  const std::vector<std::size_t> train{0};
  EXPECT_THROW(normalize_corpus(flat, train), ConfigError);
  EXPECT_THROW(normalize_corpus(std::span<const Sample>{}, train), ConfigError);
  std::vector<Sample> constant_input{toy_sample({1.0, 1.0}, {2.0, 3.0}, TissueClass::Healthy, "a")};
  EXPECT_THROW(normalize_corpus(constant_input, train), ConfigError);
}

TEST(Split, FullCorpusSizesAndStratification) {
  const auto labels = labels_with_counts(60, 60, 120, 60);
  const auto s = split_corpus(300, {0.8, 0.1, 0.1}, labels, 1);
  EXPECT_EQ(s.train.size(), 240u);
  EXPECT_EQ(s.val.size(), 30u);
  EXPECT_EQ(s.test.size(), 30u);
  EXPECT_EQ(class_counts(s.test, labels), (std::array<int, 4>{6, 6, 12, 6}));
  EXPECT_EQ(class_counts(s.val, labels), (std::array<int, 4>{6, 6, 12, 6}));
  EXPECT_EQ(class_counts(s.train, labels), (std::array<int, 4>{48, 48, 96, 48}));
}

TEST(Split, DisjointAndExhaustive) {
  const auto labels = labels_with_counts(12, 12, 24, 12);
  const auto s = split_corpus(60, {0.8, 0.1, 0.1}, labels, 5);
  std::vector<std::size_t> all;
  all.insert(all.end(), s.train.begin(), s.train.end());
  all.insert(all.end(), s.val.begin(), s.val.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(60);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(s.test.size(), 6u);
}

TEST(Split, SmallCorpus) {
  // Four classes cannot all reach three members at n = 10, so only two are present.
  const auto labels = labels_with_counts(5, 0, 5, 0);
  const auto s = split_corpus(10, {0.8, 0.1, 0.1}, labels, 0);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, StratificationWithinOneOfExactShare) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int a = 3 + static_cast<int>(rng.uniform_int(0, 30));
    const int b = 3 + static_cast<int>(rng.uniform_int(0, 30));
    const int c = 3 + static_cast<int>(rng.uniform_int(0, 30));
    const int d = 3 + static_cast<int>(rng.uniform_int(0, 30));
    const auto labels = labels_with_counts(a, b, c, d);
    const std::array<double, 3> ratios{0.7, 0.2, 0.1};
    const auto s = split_corpus(labels.size(), ratios, labels, seed);
    const std::array<int, 4> totals{a, b, c, d};
    const std::array<const std::vector<std::size_t>*, 3> parts{&s.train, &s.val, &s.test};
    for (std::size_t p = 0; p < 3; ++p) {
      const auto counts = class_counts(*parts[p], labels);
      for (std::size_t k = 0; k < 4; ++k) EXPECT_LE(std::abs(counts[k] - ratios[p] * totals[k]), 1.0);
    }
  }
}

TEST(Split, DeterministicForSeed) {
  const auto labels = labels_with_counts(12, 12, 24, 12);
  const auto a = split_corpus(60, {0.8, 0.1, 0.1}, labels, 3);
  const auto b = split_corpus(60, {0.8, 0.1, 0.1}, labels, 3);
  const auto c = split_corpus(60, {0.8, 0.1, 0.1}, labels, 4);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.val, b.val);
  EXPECT_TRUE(a.test != c.test || a.val != c.val);
}

TEST(Split, TooSmallClassIsNamed) {
  const auto labels = labels_with_counts(10, 2, 10, 10);
  try {
    split_corpus(labels.size(), {0.8, 0.1, 0.1}, labels, 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("GapJunction"), std::string::npos) << e.what();
  }
  EXPECT_THROW(split_corpus(labels.size(), {0.8, 0.1, 0.2}, labels, 0), ConfigError);
}

TEST(SampleIo, RoundTripIsBitExact) {
  const auto dir = scratch("sample");
  auto frames = random_stack(5, 3, 4, 7);
  SampleMeta meta;
  meta.case_id = "fibrotic_0003";
  meta.grid_seed = 0xDEADBEEFCAFEULL;
  meta.d_range = {0.01, 0.1};
  meta.d_value = 0.0712345;
  meta.normalization = {0.1, 0.9, -0.3, 2.5};
  meta.normalized = true;
  const std::vector<double> ecg{0.1, -0.2, 1e-30, 3.5, -7.25};
  const auto s = make_sample(frames, ecg, TissueClass::Fibrotic, meta);
  save_sample(dir / "s", s);
  const auto back = load_sample(dir / "s");
  EXPECT_EQ(back, s);
  EXPECT_EQ(encode_tensor(back.input), encode_tensor(s.input));
  fs::remove_all(dir);
}

TEST(SampleIo, CorruptMagicIsReported) {
  const auto dir = scratch("corrupt");
  const auto s = make_sample(random_stack(2, 2, 2, 1), std::vector<double>{1.0, 2.0}, TissueClass::Healthy, {});
  save_sample(dir / "s", s);
  {
    std::fstream f(dir / "s" / "input.ecgf", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_sample(dir / "s"), BadMagicError);
  fs::remove_all(dir);
}

TEST(SampleIo, MismatchedEcgLengthThrows) {
  EXPECT_THROW(make_sample(random_stack(3, 2, 2, 1), std::vector<double>{1.0}, TissueClass::Healthy, {}), ShapeError);
}

TEST(DatasetIo, BuildSaveLoadRoundTrip) {
  const auto dir = scratch("dataset");
  std::vector<SimulationCase> cases;
  const auto labels = labels_with_counts(3, 3, 3, 3);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    SimulationCase c;
    c.case_id = "case_" + std::to_string(i);
    c.label = labels[i];
    c.grid_seed = i;
    c.d_range = {0.09, 0.1};
    c.d_value = 0.095;
    c.frames = random_stack(4, 10, 10, i);
    Rng rng(100 + i);
    for (int t = 0; t < 4; ++t) c.ecg.push_back(rng.uniform() - 0.5);
    c.timestamps = {0.0, 7.9, 15.8, 23.7};
    save_simulation_case(dir / "sims" / c.case_id, c, {{"extra", 1}});
    cases.push_back(load_simulation_case(dir / "sims" / c.case_id));
  }
  DatasetOptions opt;
  opt.input_h = 5;
  opt.input_w = 5;
  opt.ratios = {0.5, 0.25, 0.25};
  const auto ds = build_dataset(cases, opt);
  EXPECT_EQ(ds.split.train.size(), 6u);
  EXPECT_EQ(ds.samples[0].height(), 5);
  save_dataset(dir / "ds", ds, {{"note", "test"}});
  const auto back = load_dataset(dir / "ds");
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.split.train, ds.split.train);
  EXPECT_EQ(back.split.test, ds.split.test);
  EXPECT_EQ(back.normalization, ds.normalization);
  for (const auto& s : back.samples) EXPECT_EQ(s.meta.normalization, back.normalization);
  fs::remove_all(dir);
}

TEST(DatasetIo, EmptyCorpusThrows) {
  EXPECT_THROW(build_dataset(std::span<const SimulationCase>{}, DatasetOptions{}), ConfigError);
}
