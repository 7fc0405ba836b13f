#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "fwdecg/objective.hpp"

namespace fwdecg {

class Rng;

struct ConvBlockConfig {
  int out_channels = 16;
  int kernel = 3;      // odd, "same" zero padding
  int pool = 2;        // max pooling window and stride
  double dropout = 0.2;
  bool batch_norm = true;
};

struct EncoderConfig {
  int in_channels = 1;
  int in_h = 32;
  int in_w = 32;
  std::array<ConvBlockConfig, 2> blocks{{{16, 3, 2, 0.2, true}, {32, 3, 2, 0.2, true}}};
  int adaptive_h = 4;
  int adaptive_w = 4;
  int hidden_size = 64;
};

struct TimeEmbeddingConfig {
  int emb_dim = 16;
  double base = 10000.0;
};

/// Architecture switches used by the ablation arms.
struct ModelVariant {
  bool no_cnn = false;             // latent = frame mean broadcast to hidden_size
  bool no_attention = false;       // context = current latent
  bool no_time_embedding = false;  // attention and decoder embeddings are zero
};

struct ModelConfig {
  EncoderConfig encoder;
  TimeEmbeddingConfig time;
  int head_hidden = 0;  // 0: same as hidden_size
  ModelVariant variant;

  int hidden() const { return encoder.hidden_size; }
  int head_width() const { return head_hidden > 0 ? head_hidden : encoder.hidden_size; }
  void validate() const;
};

enum class Mode { Train, Eval };

/// One named learnable tensor with its gradient accumulator.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// All learnable tensors plus non-learnable buffers (batch-norm running statistics).
class SurrogateParams {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape);
  std::size_t add_buffer(std::string name, std::vector<std::size_t> shape, double fill);

  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  std::vector<ParamTensor>& buffers() { return buffers_; }
  const std::vector<ParamTensor>& buffers() const { return buffers_; }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }
  const ParamTensor* find(const std::string& name) const;

  /// Flattened view over learnable values, in tensor order.
  std::size_t flat_size() const;
  double flat_value(std::size_t i) const;
  void set_flat_value(std::size_t i, double v);
  double flat_grad(std::size_t i) const;
  /// (tensor index, offset) of flat index i.
  std::pair<std::size_t, std::size_t> locate(std::size_t i) const;

  void zero_grad();

 private:
  std::vector<ParamTensor> tensors_;
  std::vector<ParamTensor> buffers_;
};

/// Sinusoidal encoding: e[2j] = sin(index / base^(2j/d)), e[2j+1] = cos(same).
std::vector<double> time_embedding(int index, const TimeEmbeddingConfig& cfg);

/// Row-major views of the attention parameters.
struct AttentionView {
  std::span<const double> w;  // hidden x hidden
  std::span<const double> u;  // hidden x (hidden + emb)
  std::span<const double> v;  // hidden
  int hidden = 0;
  int emb = 0;
};

/// a_i = v . tanh(W h + U (l_i || e_i)); `latents` is T x hidden, `embeddings` T x emb.
std::vector<double> attention_scores(std::span<const double> h, std::span<const double> latents,
                                     std::span<const double> embeddings, const AttentionView& att);

/// Max-subtracted softmax.
std::vector<double> attention_weights(std::span<const double> scores);

/// sum_i alpha_i l_i over the T x hidden latent matrix.
std::vector<double> context_vector(std::span<const double> alpha, std::span<const double> latents, int hidden);

struct DecoderState {
  std::vector<double> h;
  std::vector<double> cell;
  double prev_pred = 0.0;
};

struct DecoderView {
  std::span<const double> w_ih;  // 4H x (2H + emb), gate order i, f, g, o
  std::span<const double> w_hh;  // 4H x H
  std::span<const double> b;     // 4H
  std::span<const double> fc1_w; // head_hidden x (H + 1)
  std::span<const double> fc1_b;
  std::span<const double> fc2_w; // 1 x head_hidden
  std::span<const double> fc2_b; // 1
  int hidden = 0;
  int emb = 0;
  int head = 0;
};

struct DecodeResult {
  double y = 0.0;
  DecoderState state;
};

/// LSTM on [c || l || e], then linear -> ReLU -> linear on [h || prev_pred].
DecodeResult decode_step(const DecoderState& state, std::span<const double> context, std::span<const double> latent,
                         std::span<const double> embedding, const DecoderView& dec);

/// Frame sequence in double precision, dims T x C x H x W.
struct SequenceInput {
  int t = 0;
  int c = 1;
  int h = 0;
  int w = 0;
  std::vector<double> values;

  std::size_t frame_size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
};

/// The surrogate: CNN frame encoder, time-aware additive attention, autoregressive LSTM decoder.
class SurrogateModel {
 public:
  SurrogateModel(ModelConfig cfg, std::uint64_t init_seed);
  ~SurrogateModel();
  SurrogateModel(SurrogateModel&&) noexcept;
  SurrogateModel& operator=(SurrogateModel&&) noexcept;

  const ModelConfig& config() const { return cfg_; }
  SurrogateParams& params() { return params_; }
  const SurrogateParams& params() const { return params_; }

  /// Encodes a batch of frames (N x C x H x W, one batch-norm batch in Train mode) to N x hidden.
  /// Caches activations for backward_encoder. `dropout_rng` is required in Train mode.
  std::vector<double> encode_frames(std::span<const double> frames, std::size_t count, Mode mode, Rng* dropout_rng);
  /// Accumulates parameter gradients given dLoss/dlatent (N x hidden), for the last encode_frames call.
  void backward_encoder(std::span<const double> grad_latents);

  /// Single frame convenience (batch of one).
  std::vector<double> encode_frame(std::span<const double> frame, Mode mode, Rng* dropout_rng = nullptr);

  /// Batched forward over whole sequences; caches for backward(). When `teacher` is given
  /// the decoder is fed the previous ground-truth value instead of its own prediction.
  SignalBatch forward(std::span<const SequenceInput> batch, Mode mode, Rng* dropout_rng,
                      const SignalBatch* teacher = nullptr);
  /// Accumulates dLoss/dparams for the last forward() given dLoss/dprediction.
  void backward(const SignalBatch& grad_outputs);

  /// Eval-mode prediction without caching.
  Signal predict(const SequenceInput& input);

  AttentionView attention_view() const;
  DecoderView decoder_view() const;

  nlohmann::json config_json() const;

 private:
  struct EncoderCache;
  struct DecoderCache;

  struct BatchStats;

  void build_parameters(std::uint64_t seed);
  std::vector<double> encode_impl(std::span<const double> frames, std::size_t count, Mode mode, Rng* dropout_rng,
                                  EncoderCache* cache, BatchStats* stats) const;
  std::vector<double> mean_latents(std::span<const double> frames, std::size_t count) const;
  Signal decode_sequence(std::span<const double> latents, int steps, DecoderCache* cache, const Signal* teacher) const;
  void backward_decoder(const DecoderCache& cache, std::span<const double> grad_y, std::span<double> grad_latents);

  ModelConfig cfg_;
  SurrogateParams params_;
  // tensor indices
  std::size_t conv_w_[2]{}, conv_b_[2]{}, bn_gamma_[2]{}, bn_beta_[2]{}, bn_mean_[2]{}, bn_var_[2]{};
  std::size_t fc_w_{}, fc_b_{}, att_w_{}, att_u_{}, att_v_{}, lstm_ih_{}, lstm_hh_{}, lstm_b_{};
  std::size_t head1_w_{}, head1_b_{}, head2_w_{}, head2_b_{};

  std::unique_ptr<EncoderCache> enc_cache_;
  std::vector<DecoderCache> dec_caches_;
  std::vector<int> batch_lengths_;
  Mode last_mode_ = Mode::Eval;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

}  // namespace fwdecg
