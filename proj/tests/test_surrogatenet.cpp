#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"
#include "fwdecg/surrogatenet.hpp"
#include "support/gradcheck.hpp"

using namespace fwdecg;
using fwdecg::testing::check_gradients;
using fwdecg::testing::random_sequences;
using fwdecg::testing::tiny_model_config;

namespace {

constexpr double kTol = 1e-3;

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST(TimeEmbedding, IndexZeroIsSinZeroCosOne) {
  const auto e = time_embedding(0, {16, 10000.0});
  for (std::size_t j = 0; j < e.size(); j += 2) {
    EXPECT_EQ(e[j], 0.0);
    EXPECT_EQ(e[j + 1], 1.0);
  }
}

TEST(TimeEmbedding, TwoDimensionalIsUnitCircle) {
  for (int t = 0; t < 20; ++t) {
    const auto e = time_embedding(t, {2, 10000.0});
    EXPECT_DOUBLE_EQ(e[0], std::sin(static_cast<double>(t)));
    EXPECT_DOUBLE_EQ(e[1], std::cos(static_cast<double>(t)));
    EXPECT_NEAR(e[0] * e[0] + e[1] * e[1], 1.0, 1e-15);
  }
}

TEST(TimeEmbedding, FirstSixtyFourIndicesAreDistinct) {
  std::vector<std::vector<double>> all;
  for (int t = 0; t < 64; ++t) all.push_back(time_embedding(t, {16, 10000.0}));
  double min_dist = 1e300;
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < 16; ++j) d += (all[a][j] - all[b][j]) * (all[a][j] - all[b][j]);
      min_dist = std::min(min_dist, std::sqrt(d));
    }
  }
  EXPECT_GT(min_dist, 0.0);
}

TEST(Attention, ZeroVGivesZeroScores) {
  Rng rng(1);
  const int hidden = 4;
  const int emb = 2;
  const auto w = random_vector(rng, hidden * hidden);
  const auto u = random_vector(rng, hidden * (hidden + emb));
  const std::vector<double> v(hidden, 0.0);
  const auto h = random_vector(rng, hidden);
  const auto lat = random_vector(rng, 3 * hidden);
  const auto embs = random_vector(rng, 3 * emb);
  const auto s = attention_scores(h, lat, embs, {w, u, v, hidden, emb});
  for (double x : s) EXPECT_EQ(x, 0.0);
}

TEST(Attention, MatchesExplicitLoops) {
  Rng rng(2);
  const int hidden = 4;
  const int emb = 2;
  const int t_count = 3;
  const auto w = random_vector(rng, hidden * hidden);
  const auto u = random_vector(rng, hidden * (hidden + emb));
  const auto v = random_vector(rng, hidden);
  const auto h = random_vector(rng, hidden);
  const auto lat = random_vector(rng, t_count * hidden);
  const auto embs = random_vector(rng, t_count * emb);
  const auto s = attention_scores(h, lat, embs, {w, u, v, hidden, emb});
  ASSERT_EQ(s.size(), 3u);
  for (int i = 0; i < t_count; ++i) {
    double score = 0.0;
    for (int r = 0; r < hidden; ++r) {
      double pre = 0.0;
      for (int c = 0; c < hidden; ++c) pre += w[r * hidden + c] * h[c];
      for (int c = 0; c < hidden; ++c) pre += u[r * (hidden + emb) + c] * lat[i * hidden + c];
      for (int c = 0; c < emb; ++c) pre += u[r * (hidden + emb) + hidden + c] * embs[i * emb + c];
      score += v[r] * std::tanh(pre);
    }
    EXPECT_NEAR(s[i], score, 1e-12);
  }
}

TEST(Attention, ShapeMismatchThrows) {
  const std::vector<double> w(16), u(24), v(4), h(3), lat(12), embs(6);
  EXPECT_THROW(attention_scores(h, lat, embs, {w, u, v, 4, 2}), ShapeError);
}

TEST(AttentionWeights, SoftmaxContracts) {
  const auto eq = attention_weights(std::vector<double>{0.3, 0.3, 0.3, 0.3});
  for (double a : eq) EXPECT_DOUBLE_EQ(a, 0.25);
  EXPECT_EQ(attention_weights(std::vector<double>{-42.0})[0], 1.0);
  const std::vector<double> s{0.1, -2.0, 1.5, 0.7};
  std::vector<double> shifted(s);
  for (auto& x : shifted) x += 17.0;
  const auto a = attention_weights(s);
  const auto b = attention_weights(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
  const auto ext = attention_weights(std::vector<double>{1000.0, 0.0});
  EXPECT_EQ(ext[0], 1.0);
  EXPECT_EQ(ext[1], 0.0);
}

TEST(ContextVector, OneHotUniformAndLoop) {
  Rng rng(3);
  const int hidden = 5;
  const auto lat = random_vector(rng, 4 * hidden);
  const auto onehot = context_vector(std::vector<double>{0, 0, 1, 0}, lat, hidden);
  for (int j = 0; j < hidden; ++j) EXPECT_EQ(onehot[j], lat[2 * hidden + j]);
  const auto uni = context_vector(std::vector<double>(4, 0.25), lat, hidden);
  for (int j = 0; j < hidden; ++j) {
    const double mean = (lat[j] + lat[hidden + j] + lat[2 * hidden + j] + lat[3 * hidden + j]) / 4.0;
    EXPECT_NEAR(uni[j], mean, 1e-15);
  }
  const auto alpha = attention_weights(random_vector(rng, 4));
  const auto c = context_vector(alpha, lat, hidden);
  for (int j = 0; j < hidden; ++j) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += alpha[i] * lat[i * hidden + j];
    EXPECT_NEAR(c[j], s, 1e-12);
  }
  EXPECT_THROW(context_vector(std::vector<double>{1.0}, lat, hidden), ShapeError);
}

TEST(DecodeStep, ZeroWeightsCollapseToHeadBias) {
  const int hidden = 4;
  const int emb = 2;
  const int head = 3;
  const std::vector<double> w_ih(4 * hidden * (2 * hidden + emb), 0.0), w_hh(4 * hidden * hidden, 0.0),
      b(4 * hidden, 0.0), fc1_w(head * (hidden + 1), 0.0);
  const std::vector<double> fc1_b{0.5, -0.25, 2.0};
  const std::vector<double> fc2_w{1.0, 3.0, -1.5};
  const std::vector<double> fc2_b{0.125};
  DecoderState st{std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0), 0.0};
  const std::vector<double> zeros(hidden, 0.0), ez(emb, 0.0);
  const auto r = decode_step(st, zeros, zeros, ez, {w_ih, w_hh, b, fc1_w, fc1_b, fc2_w, fc2_b, hidden, emb, head});
  // ReLU(0.5) * 1 + ReLU(-0.25) * 3 + ReLU(2) * -1.5 + 0.125
  EXPECT_DOUBLE_EQ(r.y, 0.5 - 3.0 + 0.125);
  for (double x : r.state.h) EXPECT_EQ(x, 0.0);
  for (double x : r.state.cell) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(r.state.prev_pred, r.y);
}

TEST(DecodeStep, PureFunction) {
  SurrogateModel model(tiny_model_config(8, 4, 2), 5);
  Rng rng(4);
  DecoderState st{random_vector(rng, 4), random_vector(rng, 4), 0.3};
  const auto c = random_vector(rng, 4);
  const auto l = random_vector(rng, 4);
  const auto e = random_vector(rng, 2);
  const auto a = decode_step(st, c, l, e, model.decoder_view());
  const auto b = decode_step(st, c, l, e, model.decoder_view());
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.state.h, b.state.h);
  EXPECT_EQ(a.state.cell, b.state.cell);
}

TEST(SurrogateModel, PredictMatchesComposedFreeFunctions) {
  auto cfg = tiny_model_config(8, 5, 4);
  SurrogateModel model(cfg, 11);
  const auto seq = random_sequences(1, 4, 8, 3)[0];
  const auto y = model.predict(seq);
  ASSERT_EQ(y.size(), 4u);

  std::vector<double> lat;
  std::vector<double> embs;
  for (int t = 0; t < 4; ++t) {
    const std::span<const double> frame(seq.values.data() + t * 64, 64);
    const auto l = model.encode_frame(frame, Mode::Eval);
    lat.insert(lat.end(), l.begin(), l.end());
    const auto e = time_embedding(t, cfg.time);
    embs.insert(embs.end(), e.begin(), e.end());
  }
  DecoderState st{std::vector<double>(5, 0.0), std::vector<double>(5, 0.0), 0.0};
  for (int t = 0; t < 4; ++t) {
    const auto alpha = attention_weights(attention_scores(st.h, lat, embs, model.attention_view()));
    EXPECT_NEAR(std::accumulate(alpha.begin(), alpha.end(), 0.0), 1.0, 1e-6);
    const auto ctx = context_vector(alpha, lat, 5);
    const std::span<const double> l(lat.data() + t * 5, 5);
    const std::span<const double> e(embs.data() + t * 4, 4);
    const auto r = decode_step(st, ctx, l, e, model.decoder_view());
    EXPECT_NEAR(y[t], r.y, 1e-12);
    st = r.state;
  }
}

TEST(SurrogateModel, EvalModeIsDeterministicAndShaped) {
  SurrogateModel model(tiny_model_config(), 2);
  const auto seq = random_sequences(1, 6, 8, 9)[0];
  const auto a = model.predict(seq);
  const auto b = model.predict(seq);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  const std::span<const double> frame(seq.values.data(), 64);
  EXPECT_EQ(model.encode_frame(frame, Mode::Eval).size(), 6u);
  EXPECT_EQ(model.encode_frame(frame, Mode::Eval), model.encode_frame(frame, Mode::Eval));
}

TEST(SurrogateModel, WrongInputShapeThrows) {
  SurrogateModel model(tiny_model_config(), 2);
  auto seq = random_sequences(1, 3, 8, 9)[0];
  seq.values.pop_back();
  EXPECT_THROW(model.predict(seq), ShapeError);
  EXPECT_THROW(model.encode_frame(std::vector<double>(10, 0.0), Mode::Eval), ShapeError);
}

TEST(SurrogateModel, ParameterCountIsPureFunctionOfConfig) {
  Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    ModelConfig c;
    const int side = 8 * static_cast<int>(rng.uniform_int(1, 3));
    c.encoder.in_h = side;
    c.encoder.in_w = side;
    const int c1 = static_cast<int>(rng.uniform_int(1, 5));
    const int c2 = static_cast<int>(rng.uniform_int(1, 5));
    c.encoder.blocks = {{{c1, 3, 2, 0.1, trial % 2 == 0}, {c2, 3, 2, 0.1, true}}};
    c.encoder.adaptive_h = c.encoder.adaptive_w = 2;
    c.encoder.hidden_size = static_cast<int>(rng.uniform_int(1, 9));
    c.time.emb_dim = 2 * static_cast<int>(rng.uniform_int(1, 4));
    SurrogateModel a(c, 1);
    SurrogateModel b(c, 99);
    EXPECT_EQ(a.params().flat_size(), b.params().flat_size());
    const std::size_t h = static_cast<std::size_t>(c.hidden());
    const std::size_t e = static_cast<std::size_t>(c.time.emb_dim);
    const std::size_t conv1 = static_cast<std::size_t>(c1) * 9 + (trial % 2 == 0 ? 2u * c1 : c1);
    const std::size_t conv2 = static_cast<std::size_t>(c2) * c1 * 9 + 2u * c2;
    const std::size_t fc = h * c2 * 4 + h;
    const std::size_t att = h * h + h * (h + e) + h;
    const std::size_t lstm = 4 * h * (2 * h + e) + 4 * h * h + 4 * h;
    const std::size_t head = h * (h + 1) + h + h + 1;
    EXPECT_EQ(a.params().flat_size(), conv1 + conv2 + fc + att + lstm + head);
    const int t = static_cast<int>(rng.uniform_int(1, 7));
    EXPECT_EQ(a.predict(random_sequences(1, t, side, 5)[0]).size(), static_cast<std::size_t>(t));
  }
}

TEST(SurrogateModel, InvalidConfigRejected) {
  ModelConfig c;
  c.encoder.hidden_size = 0;
  EXPECT_THROW(SurrogateModel(c, 1), ConfigError);
  c = ModelConfig{};
  c.encoder.blocks[0].dropout = 1.0;
  EXPECT_THROW(SurrogateModel(c, 1), ConfigError);
  c = ModelConfig{};
  c.time.emb_dim = 3;
  EXPECT_THROW(SurrogateModel(c, 1), ConfigError);
}

TEST(SurrogateModel, ConfigJsonRoundTrip) {
  auto c = tiny_model_config();
  c.variant.no_attention = true;
  c.head_hidden = 7;
  const auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(GradientCheck, EncoderSumProbeEvalAndTrain) {
  for (Mode mode : {Mode::Eval, Mode::Train}) {
    auto cfg = tiny_model_config();
    cfg.encoder.blocks[0].dropout = 0.25;
    cfg.encoder.blocks[1].dropout = 0.25;
    SurrogateModel model(cfg, 3);
    const auto seqs = random_sequences(1, 3, 8, 17);
    auto loss = [&](bool grad) {
      Rng rng(123);
      const auto lat = model.encode_frames(seqs[0].values, 3, mode, &rng);
      if (grad) model.backward_encoder(std::vector<double>(lat.size(), 1.0));
      return std::accumulate(lat.begin(), lat.end(), 0.0);
    };
    const auto r = check_gradients(model, loss, {"encoder."}, 16);
    EXPECT_LE(r.max_rel_error, kTol) << r.worst;
    EXPECT_GT(r.checked, 50u);
  }
}

TEST(GradientCheck, EndToEndAllGroups) {
  auto cfg = tiny_model_config(8, 4, 4);
  cfg.encoder.blocks[0].dropout = 0.2;
  SurrogateModel model(cfg, 8);
  const auto seqs = random_sequences(2, 3, 8, 5);
  auto loss = [&](bool grad) {
    Rng rng(77);
    const auto out = model.forward(seqs, Mode::Train, &rng);
    double l = 0.0;
    SignalBatch g(out.size());
    for (std::size_t b = 0; b < out.size(); ++b) {
      g[b].resize(out[b].size());
      for (std::size_t t = 0; t < out[b].size(); ++t) {
        l += out[b][t] * out[b][t] / 6.0;
        g[b][t] = 2.0 * out[b][t] / 6.0;
      }
    }
    if (grad) model.backward(g);
    return l;
  };
  for (const char* group : {"encoder.", "attention.", "decoder.", "head."}) {
    const auto r = check_gradients(model, loss, {group}, 10);
    EXPECT_LE(r.max_rel_error, kTol) << group << " " << r.worst;
  }
}

TEST(GradientCheck, VariantsAndTeacherForcing) {
  for (int variant = 0; variant < 4; ++variant) {
    auto cfg = tiny_model_config(8, 4, 2);
    cfg.variant.no_cnn = variant == 0;
    cfg.variant.no_attention = variant == 1;
    cfg.variant.no_time_embedding = variant == 2;
    SurrogateModel model(cfg, 9);
    const auto seqs = random_sequences(2, 4, 8, 6);
    const SignalBatch teacher{{0.1, -0.2, 0.3, 0.0}, {0.5, 0.4, -0.1, 0.2}};
    auto loss = [&](bool grad) {
      Rng rng(1);
      const auto out = model.forward(seqs, Mode::Train, &rng, variant == 3 ? &teacher : nullptr);
      double l = 0.0;
      SignalBatch g(out.size(), Signal(4));
      for (std::size_t b = 0; b < out.size(); ++b) {
        for (std::size_t t = 0; t < 4; ++t) {
          const double w = 0.3 + 0.1 * static_cast<double>(t + b);
          l += w * out[b][t];
          g[b][t] = w;
        }
      }
      if (grad) model.backward(g);
      return l;
    };
    const auto r = check_gradients(model, loss, {"encoder.", "attention.", "decoder.", "head."}, 6);
    EXPECT_LE(r.max_rel_error, kTol) << "variant " << variant << " " << r.worst;
  }
}

TEST(Variants, NoCnnUsesFrameMean) {
  auto cfg = tiny_model_config(8, 4, 2);
  cfg.variant.no_cnn = true;
  SurrogateModel model(cfg, 1);
  // Two sequences with equal per-frame means but different layouts predict identically.
  SequenceInput a{2, 1, 8, 8, std::vector<double>(128, 0.0)};
  SequenceInput b = a;
  for (int i = 0; i < 64; ++i) {
    a.values[i] = i < 32 ? 1.0 : 0.0;
    b.values[i] = i % 2 == 0 ? 1.0 : 0.0;
  }
  EXPECT_EQ(model.predict(a), model.predict(b));
}

TEST(BatchNorm, RunningStatsMoveTowardBatchStats) {
  auto cfg = tiny_model_config();
  SurrogateModel model(cfg, 1);
  const auto seqs = random_sequences(1, 4, 8, 2);
  Rng rng(0);
  model.encode_frames(seqs[0].values, 4, Mode::Train, &rng);
  const auto* mean = model.params().find("encoder.block1.bn.running_mean");
  const auto* var = model.params().find("encoder.block1.bn.running_var");
  ASSERT_NE(mean, nullptr);
  ASSERT_NE(var, nullptr);
  bool moved = false;
  for (std::size_t c = 0; c < mean->value.size(); ++c) {
    moved = moved || mean->value[c] != 0.0;
    EXPECT_NE(var->value[c], 1.0);
  }
  EXPECT_TRUE(moved);
}
