#pragma once

#include <complex>
#include <span>
#include <vector>

#include "json.hpp"

namespace fwdecg {

using Signal = std::vector<double>;
using SignalBatch = std::vector<Signal>;

/// Mixed-radix DFT of any length: X_k = sum_t x_t exp(-2 pi i k t / n) (sign flipped when inverse).
/// The inverse is unnormalized.
std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x, bool inverse = false);

/// One-sided squared-magnitude DFT bins f = 0..floor(T/2), DC included, no window.
struct PowerSpectrum {
  std::vector<double> power;
  std::vector<double> normalized;  // power / total, sums to 1
  double total = 0.0;
};

/// Throws ConfigError for signals shorter than 2 and NumericalError for zero total power.
PowerSpectrum power_spectrum(std::span<const double> signal);

/// -sum_f p(f) log2(p(f) + eps), in bits.
double spectral_entropy(std::span<const double> signal, double eps);

/// Same value as spectral_entropy; also writes dE/ds into `grad` (same length as signal).
double spectral_entropy_with_grad(std::span<const double> signal, double eps, std::span<double> grad);

/// (1/B) sum_i (E(y_i) - E(yhat_i))^2. When `grad` is non-null it receives dL/dyhat.
double spectral_entropy_loss(const SignalBatch& y, const SignalBatch& yhat, double eps, SignalBatch* grad = nullptr);

/// Elementwise Huber, mean over batch and time.
double huber_loss(const SignalBatch& y, const SignalBatch& yhat, double delta, SignalBatch* grad = nullptr);

/// Cosine decay 0.5 (1 + cos(pi n / E)). Throws ConfigError unless 0 <= n <= E and E >= 1.
double se_weight(int n, int total_epochs);

struct LossConfig {
  double huber_delta = 1.0;
  double epsilon = 1e-12;
  void validate() const;
};

struct LossTerms {
  double huber = 0.0;
  double spectral_entropy = 0.0;
  double omega = 0.0;
  double total = 0.0;
};

/// L_H + omega(n) L_SE. With `weight_override` >= 0 that value replaces omega(n).
LossTerms total_loss(const SignalBatch& y, const SignalBatch& yhat, int epoch, int total_epochs, const LossConfig& cfg,
                     SignalBatch* grad = nullptr, double weight_override = -1.0);

/// Per-signal R^2; throws NumericalError("zero variance") for constant y.
double r2_score(std::span<const double> y, std::span<const double> yhat);
/// Mean of per-signal R^2 over the batch.
double r2_score(const SignalBatch& y, const SignalBatch& yhat);
double mae(std::span<const double> y, std::span<const double> yhat);
double mae(const SignalBatch& y, const SignalBatch& yhat);

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base = {});

}  // namespace fwdecg
