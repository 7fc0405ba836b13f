#include "fwdecg/objective.hpp"

#include <cmath>
#include <numbers>

#include "fwdecg/error.hpp"

namespace fwdecg {

namespace {

using cd = std::complex<double>;

std::size_t smallest_factor(std::size_t n) {
  for (std::size_t p = 2; p * p <= n; ++p) {
    if (n % p == 0) return p;
  }
  return n;
}

void fft_recursive(const cd* x, std::size_t stride, std::size_t n, double sign, cd* out) {
  if (n == 1) {
    out[0] = x[0];
    return;
  }
  const std::size_t p = smallest_factor(n);
  const std::size_t m = n / p;
  if (p == n) {
    for (std::size_t k = 0; k < n; ++k) {
      cd acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
        acc += x[t * stride] * cd(std::cos(angle), std::sin(angle));
      }
      out[k] = acc;
    }
    return;
  }
  // Sub-transforms of the p decimated sequences x[r + p j].
  std::vector<cd> sub(n);
  for (std::size_t r = 0; r < p; ++r) fft_recursive(x + r * stride, stride * p, m, sign, sub.data() + r * m);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc = 0.0;
    for (std::size_t r = 0; r < p; ++r) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((r * k) % n) / static_cast<double>(n);
      acc += sub[r * m + k % m] * cd(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
}

void check_batch(const SignalBatch& y, const SignalBatch& yhat) {
  if (y.size() != yhat.size() || y.empty()) throw ShapeError("batch sizes differ or are empty");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i].size() != yhat[i].size()) throw ShapeError("signal lengths differ within the batch");
  }
}

}  // namespace

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x, bool inverse) {
  std::vector<cd> out(x.size());
  if (!x.empty()) fft_recursive(x.data(), 1, x.size(), inverse ? 1.0 : -1.0, out.data());
  return out;
}

PowerSpectrum power_spectrum(std::span<const double> signal) {
  if (signal.size() < 2) throw ConfigError("power spectrum needs at least 2 samples");
  std::vector<cd> x(signal.begin(), signal.end());
  for (const auto& v : x) {
    if (!std::isfinite(v.real())) throw NumericalError("non-finite sample in power spectrum input");
  }
  const auto spectrum = fft(x);
  const std::size_t bins = signal.size() / 2 + 1;
  PowerSpectrum ps;
  ps.power.resize(bins);
  for (std::size_t f = 0; f < bins; ++f) {
    ps.power[f] = std::norm(spectrum[f]);
    ps.total += ps.power[f];
  }
  if (!(ps.total > 0.0)) throw NumericalError("zero total power: spectral entropy is undefined");
  ps.normalized.resize(bins);
  for (std::size_t f = 0; f < bins; ++f) ps.normalized[f] = ps.power[f] / ps.total;
  return ps;
}

double spectral_entropy(std::span<const double> signal, double eps) {
  const auto ps = power_spectrum(signal);
  double e = 0.0;
  for (double p : ps.normalized) e -= p * std::log2(p + eps);
  return e;
}

double spectral_entropy_with_grad(std::span<const double> signal, double eps, std::span<double> grad) {
  const std::size_t n = signal.size();
  if (grad.size() != n) throw ShapeError("gradient buffer length differs from signal");
  if (n < 2) throw ConfigError("power spectrum needs at least 2 samples");
  std::vector<cd> x(signal.begin(), signal.end());
  const auto spectrum = fft(x);
  const std::size_t bins = n / 2 + 1;
  std::vector<double> power(bins);
  double total = 0.0;
  for (std::size_t f = 0; f < bins; ++f) {
    power[f] = std::norm(spectrum[f]);
    total += power[f];
  }
  if (!(total > 0.0)) throw NumericalError("zero total power: spectral entropy is undefined");
  std::vector<double> dp(bins);
  double entropy = 0.0;
  double weighted = 0.0;
  for (std::size_t f = 0; f < bins; ++f) {
    const double p = power[f] / total;
    entropy -= p * std::log2(p + eps);
    dp[f] = -(std::log2(p + eps) + p / ((p + eps) * std::numbers::ln2));
    weighted += p * dp[f];
  }
  // dE/dP_f = (dE/dp_f - sum_g p_g dE/dp_g) / total; dP_f/ds_t = 2 Re(conj(X_f) e^{-i theta_ft}).
  std::vector<cd> z(n, cd(0.0));
  for (std::size_t f = 0; f < bins; ++f) z[f] = ((dp[f] - weighted) / total) * spectrum[f];
  const auto back = fft(z, true);
  for (std::size_t t = 0; t < n; ++t) grad[t] = 2.0 * back[t].real();
  return entropy;
}

double spectral_entropy_loss(const SignalBatch& y, const SignalBatch& yhat, double eps, SignalBatch* grad) {
  check_batch(y, yhat);
  const auto b = static_cast<double>(y.size());
  double loss = 0.0;
  if (grad) grad->assign(y.size(), {});
  std::vector<double> g;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double ey = spectral_entropy(y[i], eps);
    double ep = 0.0;
    if (grad) {
      g.assign(yhat[i].size(), 0.0);
      ep = spectral_entropy_with_grad(yhat[i], eps, g);
      auto& gi = (*grad)[i];
      gi.resize(g.size());
      for (std::size_t t = 0; t < g.size(); ++t) gi[t] = -2.0 * (ey - ep) / b * g[t];
    } else {
      ep = spectral_entropy(yhat[i], eps);
    }
    loss += (ey - ep) * (ey - ep);
  }
  return loss / b;
}

double huber_loss(const SignalBatch& y, const SignalBatch& yhat, double delta, SignalBatch* grad) {
  check_batch(y, yhat);
  if (!(delta > 0.0)) throw ConfigError("huber delta must be positive");
  std::size_t count = 0;
  for (const auto& s : y) count += s.size();
  const auto inv = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  if (grad) grad->assign(y.size(), {});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (grad) (*grad)[i].resize(y[i].size());
    for (std::size_t t = 0; t < y[i].size(); ++t) {
      const double e = yhat[i][t] - y[i][t];
      const double a = std::abs(e);
      if (a <= delta) {
        sum += 0.5 * e * e;
        if (grad) (*grad)[i][t] = e * inv;
      } else {
        sum += delta * (a - 0.5 * delta);
        if (grad) (*grad)[i][t] = (e > 0 ? delta : -delta) * inv;
      }
    }
  }
  return sum * inv;
}

double se_weight(int n, int total_epochs) {
  if (total_epochs < 1) throw ConfigError("total epochs must be >= 1");
  if (n < 0 || n > total_epochs) throw ConfigError("epoch index outside [0, E]");
  return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(n) / static_cast<double>(total_epochs)));
}

void LossConfig::validate() const {
  if (!(huber_delta > 0.0)) throw ConfigError("huber_delta must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

LossTerms total_loss(const SignalBatch& y, const SignalBatch& yhat, int epoch, int total_epochs, const LossConfig& cfg,
                     SignalBatch* grad, double weight_override) {
  cfg.validate();
  LossTerms terms;
  terms.omega = weight_override >= 0.0 ? weight_override : se_weight(epoch, total_epochs);
  SignalBatch g_h;
  SignalBatch g_se;
  terms.huber = huber_loss(y, yhat, cfg.huber_delta, grad ? &g_h : nullptr);
  if (terms.omega != 0.0 || !grad) {
    terms.spectral_entropy = spectral_entropy_loss(y, yhat, cfg.epsilon, grad ? &g_se : nullptr);
  } else {
    terms.spectral_entropy = spectral_entropy_loss(y, yhat, cfg.epsilon);
  }
  terms.total = terms.huber + terms.omega * terms.spectral_entropy;
  if (grad) {
    *grad = std::move(g_h);
    if (!g_se.empty()) {
      for (std::size_t i = 0; i < grad->size(); ++i) {
        for (std::size_t t = 0; t < (*grad)[i].size(); ++t) (*grad)[i][t] += terms.omega * g_se[i][t];
      }
    }
  }
  return terms;
}

double r2_score(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size() || y.empty()) throw ShapeError("R^2 operands differ in length");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    ss_res += (y[t] - yhat[t]) * (y[t] - yhat[t]);
    ss_tot += (y[t] - mean) * (y[t] - mean);
  }
  if (!(ss_tot > 0.0)) throw NumericalError("zero variance: R^2 undefined for a constant target");
  return 1.0 - ss_res / ss_tot;
}

double r2_score(const SignalBatch& y, const SignalBatch& yhat) {
  check_batch(y, yhat);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += r2_score(y[i], yhat[i]);
  return sum / static_cast<double>(y.size());
}

double mae(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size() || y.empty()) throw ShapeError("MAE operands differ in length");
  double sum = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) sum += std::abs(y[t] - yhat[t]);
  return sum / static_cast<double>(y.size());
}

double mae(const SignalBatch& y, const SignalBatch& yhat) {
  check_batch(y, yhat);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += mae(y[i], yhat[i]);
  return sum / static_cast<double>(y.size());
}

nlohmann::json to_json(const LossConfig& c) { return {{"huber_delta", c.huber_delta}, {"epsilon", c.epsilon}}; }

LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig c) {
  c.huber_delta = j.value("huber_delta", c.huber_delta);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

}  // namespace fwdecg
