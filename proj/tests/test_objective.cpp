#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "fwdecg/error.hpp"
#include "fwdecg/objective.hpp"
#include "fwdecg/rng.hpp"

using namespace fwdecg;

namespace {

constexpr double kEps = 1e-12;

Signal random_signal(std::size_t n, Rng& rng) {
  Signal s(n);
  for (auto& v : s) v = rng.uniform() * 2.0 - 1.0;
  return s;
}

std::vector<double> naive_power(const Signal& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
    }
    p[k] = std::norm(acc);
  }
  return p;
}

double naive_entropy(const Signal& x) {
  const auto p = naive_power(x);
  double total = 0.0;
  for (double v : p) total += v;
  double h = 0.0;
  for (double v : p) h -= (v / total) * std::log2(v / total + kEps);
  return h;
}

}  // namespace

TEST(Fft, MatchesNaiveDftForAwkwardLengths) {
  Rng rng(3);
  for (std::size_t n : {1u, 2u, 7u, 12u, 16u, 30u, 64u, 97u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.uniform() - 0.5, rng.uniform() - 0.5};
    const auto fx = fft(x);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
      }
      EXPECT_NEAR(std::abs(fx[k] - acc), 0.0, 1e-10) << "n=" << n << " k=" << k;
    }
    const auto back = fft(fx, true);
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(std::abs(back[t] / static_cast<double>(n) - x[t]), 0.0, 1e-12);
  }
}

TEST(PowerSpectrum, ExactBinCosine) {
  const std::size_t n = 64;
  for (std::size_t k : {1u, 5u, 17u, 31u}) {
    Signal s(n);
    for (std::size_t t = 0; t < n; ++t) s[t] = std::cos(2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
    const auto ps = power_spectrum(s);
    ASSERT_EQ(ps.normalized.size(), n / 2 + 1);
    double off = 0.0;
    for (std::size_t f = 0; f < ps.normalized.size(); ++f) {
      if (f != k) off += ps.normalized[f];
    }
    EXPECT_LE(off, 1e-10);
    EXPECT_NEAR(ps.normalized[k], 1.0, 1e-10);
  }
}

TEST(PowerSpectrum, ConstantSignalIsAllDc) {
  const auto ps = power_spectrum(Signal(20, -0.7));
  EXPECT_DOUBLE_EQ(ps.normalized[0], 1.0);
  for (std::size_t f = 1; f < ps.normalized.size(); ++f) EXPECT_LE(ps.normalized[f], 1e-20);
}

TEST(PowerSpectrum, MatchesNaiveDft) {
  Rng rng(11);
  const auto s = random_signal(16, rng);
  const auto ps = power_spectrum(s);
  const auto oracle = naive_power(s);
  ASSERT_EQ(ps.power.size(), oracle.size());
  for (std::size_t k = 0; k < oracle.size(); ++k) EXPECT_NEAR(ps.power[k], oracle[k], 1e-9);
}

TEST(PowerSpectrum, ErrorCases) {
  EXPECT_THROW(power_spectrum(Signal(8, 0.0)), NumericalError);
  EXPECT_THROW(power_spectrum(Signal{1.0}), ConfigError);
}

TEST(SpectralEntropy, SingleBinNearZero) {
  const std::size_t n = 32;
  Signal s(n);
  for (std::size_t t = 0; t < n; ++t) s[t] = std::cos(2.0 * std::numbers::pi * 3.0 * static_cast<double>(t) / n);
  EXPECT_LE(spectral_entropy(s, kEps), 1e-6);
}

TEST(SpectralEntropy, UniformSpectrumIsLog2N) {
  // A unit impulse has |X_k| = 1 in every bin.
  Signal s(64, 0.0);
  s[0] = 1.0;
  EXPECT_NEAR(spectral_entropy(s, kEps), std::log2(33.0), 1e-6);
}

TEST(SpectralEntropy, MatchesNaiveOracle) {
  Rng rng(2);
  for (std::size_t n : {16u, 31u, 64u}) {
    const auto s = random_signal(n, rng);
    EXPECT_NEAR(spectral_entropy(s, kEps), naive_entropy(s), 1e-9);
  }
}

TEST(SpectralEntropy, GradientMatchesFiniteDifference) {
  Rng rng(5);
  const auto s = random_signal(24, rng);
  Signal grad(s.size());
  const double e = spectral_entropy_with_grad(s, kEps, grad);
  EXPECT_DOUBLE_EQ(e, spectral_entropy(s, kEps));
  const double h = 1e-6;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto up = s;
    auto dn = s;
    up[i] += h;
    dn[i] -= h;
    const double fd = (spectral_entropy(up, kEps) - spectral_entropy(dn, kEps)) / (2.0 * h);
    EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(SpectralEntropyLoss, IdenticalAndScaledPredictions) {
  Rng rng(4);
  SignalBatch y{random_signal(32, rng), random_signal(32, rng)};
  EXPECT_EQ(spectral_entropy_loss(y, y, kEps), 0.0);
  SignalBatch doubled = y;
  for (auto& s : doubled) {
    for (auto& v : s) v *= 2.0;
  }
  EXPECT_NEAR(spectral_entropy_loss(y, doubled, kEps), 0.0, 1e-9);
}

TEST(SpectralEntropyLoss, TwoSignalBatchMatchesOracle) {
  Rng rng(9);
  SignalBatch y{random_signal(20, rng), random_signal(20, rng)};
  SignalBatch yhat{random_signal(20, rng), random_signal(20, rng)};
  const double d0 = naive_entropy(y[0]) - naive_entropy(yhat[0]);
  const double d1 = naive_entropy(y[1]) - naive_entropy(yhat[1]);
  EXPECT_NEAR(spectral_entropy_loss(y, yhat, kEps), (d0 * d0 + d1 * d1) / 2.0, 1e-9);
}

TEST(SpectralEntropyLoss, ShapeMismatchThrows) {
  SignalBatch y{Signal(8, 1.0)};
  SignalBatch yhat{Signal(9, 1.0)};
  EXPECT_THROW(spectral_entropy_loss(y, yhat, kEps), ShapeError);
  EXPECT_THROW(spectral_entropy_loss(y, SignalBatch{}, kEps), ShapeError);
}

TEST(Huber, BranchExamples) {
  const double delta = 0.7;
  EXPECT_EQ(huber_loss({{1.0, 2.0}}, {{1.0, 2.0}}, delta), 0.0);
  EXPECT_DOUBLE_EQ(huber_loss({{0.0}}, {{delta}}, delta), 0.5 * delta * delta);
  EXPECT_DOUBLE_EQ(huber_loss({{0.0}}, {{-3.0 * delta}}, delta), 2.5 * delta * delta);
  // Mean over every element of the batch.
  EXPECT_DOUBLE_EQ(huber_loss({{0.0, 0.0}, {0.0, 0.0}}, {{delta, 0.0}, {0.0, 0.0}}, delta), 0.125 * delta * delta);
}

TEST(Huber, GradientMatchesFiniteDifference) {
  Rng rng(6);
  SignalBatch y{random_signal(10, rng), random_signal(10, rng)};
  SignalBatch yhat{random_signal(10, rng), random_signal(10, rng)};
  for (auto& v : yhat[0]) v *= 3.0;
  SignalBatch grad;
  huber_loss(y, yhat, 0.5, &grad);
  const double h = 1e-6;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 10; ++t) {
      auto up = yhat;
      auto dn = yhat;
      up[b][t] += h;
      dn[b][t] -= h;
      const double fd = (huber_loss(y, up, 0.5) - huber_loss(y, dn, 0.5)) / (2.0 * h);
      EXPECT_NEAR(grad[b][t], fd, 1e-7);
    }
  }
}

TEST(SeWeight, CosineSchedule) {
  EXPECT_DOUBLE_EQ(se_weight(0, 200), 1.0);
  EXPECT_NEAR(se_weight(200, 200), 0.0, 1e-15);
  EXPECT_NEAR(se_weight(100, 200), 0.5, 1e-15);
  for (int n = 1; n <= 50; ++n) EXPECT_LE(se_weight(n, 50), se_weight(n - 1, 50));
  EXPECT_THROW(se_weight(-1, 10), ConfigError);
  EXPECT_THROW(se_weight(11, 10), ConfigError);
  EXPECT_THROW(se_weight(0, 0), ConfigError);
}

TEST(TotalLoss, Examples) {
  Rng rng(7);
  SignalBatch y{random_signal(16, rng), random_signal(16, rng), random_signal(16, rng)};
  SignalBatch yhat{random_signal(16, rng), random_signal(16, rng), random_signal(16, rng)};
  const LossConfig cfg;
  const auto end = total_loss(y, yhat, 40, 40, cfg);
  EXPECT_EQ(end.total, huber_loss(y, yhat, cfg.huber_delta));
  EXPECT_EQ(total_loss(y, y, 3, 40, cfg).total, 0.0);
  const auto start = total_loss(y, yhat, 0, 40, cfg);
  EXPECT_NEAR(start.total, huber_loss(y, yhat, 1.0) + spectral_entropy_loss(y, yhat, kEps), 1e-12);
  EXPECT_EQ(start.omega, 1.0);
  const auto forced = total_loss(y, yhat, 0, 40, cfg, nullptr, 0.0);
  EXPECT_EQ(forced.omega, 0.0);
  EXPECT_EQ(forced.total, forced.huber);
}

TEST(TotalLoss, GradientMatchesFiniteDifference) {
  Rng rng(8);
  SignalBatch y{random_signal(12, rng), random_signal(12, rng)};
  SignalBatch yhat{random_signal(12, rng), random_signal(12, rng)};
  const LossConfig cfg;
  SignalBatch grad;
  total_loss(y, yhat, 3, 10, cfg, &grad);
  const double h = 1e-6;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 12; ++t) {
      auto up = yhat;
      auto dn = yhat;
      up[b][t] += h;
      dn[b][t] -= h;
      const double fd = (total_loss(y, up, 3, 10, cfg).total - total_loss(y, dn, 3, 10, cfg).total) / (2.0 * h);
      EXPECT_NEAR(grad[b][t], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(LossConfig, ValidationAndJson) {
  LossConfig c;
  c.huber_delta = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.huber_delta = 2.0;
  c.epsilon = 1e-9;
  const auto back = loss_config_from_json(to_json(c));
  EXPECT_EQ(back.huber_delta, 2.0);
  EXPECT_EQ(back.epsilon, 1e-9);
}

TEST(Metrics, Examples) {
  const Signal y{0.0, 1.0, 2.0, 3.0};
  EXPECT_EQ(r2_score(y, y), 1.0);
  EXPECT_EQ(mae(y, y), 0.0);
  EXPECT_NEAR(r2_score(y, Signal(4, 1.5)), 0.0, 1e-15);
  const Signal yhat{0.0, 1.0, 2.0, 5.0};
  EXPECT_NEAR(r2_score(y, yhat), 0.2, 1e-15);
  EXPECT_NEAR(mae(y, yhat), 0.5, 1e-15);
  EXPECT_THROW(r2_score(Signal(4, 2.0), yhat), NumericalError);
  EXPECT_THROW(mae(y, Signal(3, 0.0)), ShapeError);
}

TEST(Metrics, BatchIsMeanOfPerSignal) {
  const SignalBatch y{{0.0, 1.0, 2.0, 3.0}, {1.0, -1.0, 1.0, -1.0}};
  const SignalBatch yhat{{0.0, 1.0, 2.0, 5.0}, {1.0, -1.0, 1.0, -1.0}};
  EXPECT_NEAR(r2_score(y, yhat), 0.6, 1e-15);
  EXPECT_NEAR(mae(y, yhat), 0.25, 1e-15);
}
