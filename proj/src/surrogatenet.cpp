#include "fwdecg/surrogatenet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"
#include "nn_kernels.hpp"

namespace fwdecg {

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Spatial sizes through the two encoder blocks.
struct BlockShape {
  int cin, h, w;   // conv input
  int cout, k, pad;
  int pool, ph, pw;  // pooled output
  double dropout;
  bool bn;
  std::size_t in_size() const { return static_cast<std::size_t>(cin) * h * w; }
  std::size_t padded_size() const { return static_cast<std::size_t>(cin) * (h + 2 * pad) * (w + 2 * pad); }
  std::size_t conv_size() const { return static_cast<std::size_t>(cout) * h * w; }
  std::size_t pooled_size() const { return static_cast<std::size_t>(cout) * ph * pw; }
};

std::array<BlockShape, 2> block_shapes(const EncoderConfig& e) {
  std::array<BlockShape, 2> s{};
  int c = e.in_channels;
  int h = e.in_h;
  int w = e.in_w;
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& bc = e.blocks[b];
    s[b] = {c, h, w, bc.out_channels, bc.kernel, bc.kernel / 2, bc.pool, h / bc.pool, w / bc.pool, bc.dropout,
            bc.batch_norm};
    c = bc.out_channels;
    h /= bc.pool;
    w /= bc.pool;
  }
  return s;
}

// Scores from precomputed keys K_i = U (l_i || e_i): a_i = v . tanh(q + K_i). Writes tanh values to z if non-null.
void scores_from_keys(std::span<const double> q, std::span<const double> keys, std::span<const double> v, int hidden,
                      std::span<double> scores, double* z) {
  const std::size_t t_count = scores.size();
  for (std::size_t i = 0; i < t_count; ++i) {
    const double* k = keys.data() + i * static_cast<std::size_t>(hidden);
    double s = 0.0;
    for (int j = 0; j < hidden; ++j) {
      const double zz = std::tanh(q[static_cast<std::size_t>(j)] + k[j]);
      if (z) z[i * static_cast<std::size_t>(hidden) + static_cast<std::size_t>(j)] = zz;
      s += v[static_cast<std::size_t>(j)] * zz;
    }
    scores[i] = s;
  }
}

void softmax_inplace(std::span<double> a) {
  const double m = *std::max_element(a.begin(), a.end());
  double sum = 0.0;
  for (auto& x : a) {
    x = std::exp(x - m);
    sum += x;
  }
  for (auto& x : a) x /= sum;
}

// LSTM + head forward, optionally recording intermediates.
struct StepRecord {
  std::vector<double> x;      // LSTM input
  std::vector<double> gates;  // activated i, f, g, o
  std::vector<double> cell;
  std::vector<double> tanh_cell;
  std::vector<double> head_in;  // h || prev
  std::vector<double> a1;       // pre-ReLU head hidden
};

double lstm_head_forward(const DecoderView& d, std::span<const double> h_prev, std::span<const double> c_prev,
                         double prev_pred, std::span<const double> x, std::vector<double>& h_out,
                         std::vector<double>& c_out, StepRecord* rec) {
  const int hdim = d.hidden;
  const int in = static_cast<int>(x.size());
  std::vector<double> pre(static_cast<std::size_t>(4 * hdim));
  kernels::linear_forward(d.w_ih.data(), d.b.data(), x.data(), 4 * hdim, in, pre.data());
  for (int r = 0; r < 4 * hdim; ++r) {
    const double* wr = d.w_hh.data() + static_cast<std::size_t>(r) * hdim;
    double s = 0.0;
    for (int c = 0; c < hdim; ++c) s += wr[c] * h_prev[static_cast<std::size_t>(c)];
    pre[static_cast<std::size_t>(r)] += s;
  }
  h_out.resize(static_cast<std::size_t>(hdim));
  c_out.resize(static_cast<std::size_t>(hdim));
  std::vector<double> tc(static_cast<std::size_t>(hdim));
  for (int j = 0; j < hdim; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const double ig = sigmoid(pre[uj]);
    const double fg = sigmoid(pre[uj + hdim]);
    const double gg = std::tanh(pre[uj + 2 * hdim]);
    const double og = sigmoid(pre[uj + 3 * hdim]);
    pre[uj] = ig;
    pre[uj + hdim] = fg;
    pre[uj + 2 * hdim] = gg;
    pre[uj + 3 * hdim] = og;
    c_out[uj] = fg * c_prev[uj] + ig * gg;
    tc[uj] = std::tanh(c_out[uj]);
    h_out[uj] = og * tc[uj];
  }
  std::vector<double> head_in(h_out);
  head_in.push_back(prev_pred);
  std::vector<double> a1(static_cast<std::size_t>(d.head));
  kernels::linear_forward(d.fc1_w.data(), d.fc1_b.data(), head_in.data(), d.head, hdim + 1, a1.data());
  double y = d.fc2_b[0];
  for (int j = 0; j < d.head; ++j) y += d.fc2_w[static_cast<std::size_t>(j)] * std::max(0.0, a1[static_cast<std::size_t>(j)]);
  if (rec) {
    rec->x.assign(x.begin(), x.end());
    rec->gates = std::move(pre);
    rec->cell = c_out;
    rec->tanh_cell = std::move(tc);
    rec->head_in = std::move(head_in);
    rec->a1 = std::move(a1);
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  const auto& e = encoder;
  if (e.hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
  if (e.in_channels < 1 || e.in_h < 1 || e.in_w < 1) throw ConfigError("encoder input dims must be positive");
  int h = e.in_h;
  int w = e.in_w;
  for (const auto& b : e.blocks) {
    if (b.out_channels < 1) throw ConfigError("conv out_channels must be >= 1");
    if (b.kernel < 1 || b.kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
    if (b.pool < 1) throw ConfigError("pool factor must be >= 1");
    if (!(b.dropout >= 0.0 && b.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    h /= b.pool;
    w /= b.pool;
    if (h < 1 || w < 1) throw ConfigError("input too small for the pooling stack");
  }
  if (e.adaptive_h < 1 || e.adaptive_w < 1) throw ConfigError("adaptive pool size must be positive");
  if (time.emb_dim < 2 || time.emb_dim % 2 != 0) throw ConfigError("emb_dim must be even and >= 2");
  if (!(time.base > 0.0)) throw ConfigError("time embedding base must be positive");
  if (head_hidden < 0) throw ConfigError("head_hidden must be >= 0");
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t SurrogateParams::add(std::string name, std::vector<std::size_t> shape) {
  const std::size_t n = product(shape);
  tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  return tensors_.size() - 1;
}

std::size_t SurrogateParams::add_buffer(std::string name, std::vector<std::size_t> shape, double fill) {
  const std::size_t n = product(shape);
  buffers_.push_back({std::move(name), std::move(shape), std::vector<double>(n, fill), {}});
  return buffers_.size() - 1;
}

const ParamTensor* SurrogateParams::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  for (const auto& t : buffers_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t SurrogateParams::flat_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

std::pair<std::size_t, std::size_t> SurrogateParams::locate(std::size_t i) const {
  for (std::size_t k = 0; k < tensors_.size(); ++k) {
    if (i < tensors_[k].value.size()) return {k, i};
    i -= tensors_[k].value.size();
  }
  throw ShapeError("flat parameter index out of range");
}

double SurrogateParams::flat_value(std::size_t i) const {
  const auto [k, o] = locate(i);
  return tensors_[k].value[o];
}

void SurrogateParams::set_flat_value(std::size_t i, double v) {
  const auto [k, o] = locate(i);
  tensors_[k].value[o] = v;
}

double SurrogateParams::flat_grad(std::size_t i) const {
  const auto [k, o] = locate(i);
  return tensors_[k].grad[o];
}

void SurrogateParams::zero_grad() {
  for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Free-standing operations

std::vector<double> time_embedding(int index, const TimeEmbeddingConfig& cfg) {
  std::vector<double> e(static_cast<std::size_t>(cfg.emb_dim));
  for (int j = 0; j < cfg.emb_dim / 2; ++j) {
    const double freq = std::pow(cfg.base, 2.0 * j / static_cast<double>(cfg.emb_dim));
    const double angle = static_cast<double>(index) / freq;
    e[static_cast<std::size_t>(2 * j)] = std::sin(angle);
    e[static_cast<std::size_t>(2 * j + 1)] = std::cos(angle);
  }
  return e;
}

std::vector<double> attention_scores(std::span<const double> h, std::span<const double> latents,
                                     std::span<const double> embeddings, const AttentionView& att) {
  const auto hidden = static_cast<std::size_t>(att.hidden);
  const auto emb = static_cast<std::size_t>(att.emb);
  if (h.size() != hidden || latents.size() % hidden != 0) throw ShapeError("attention: hidden size mismatch");
  const std::size_t t_count = latents.size() / hidden;
  if (embeddings.size() != t_count * emb) throw ShapeError("attention: embedding count mismatch");
  if (att.w.size() != hidden * hidden || att.u.size() != hidden * (hidden + emb) || att.v.size() != hidden) {
    throw ShapeError("attention: parameter shape mismatch");
  }
  std::vector<double> q(hidden);
  kernels::linear_forward(att.w.data(), nullptr, h.data(), att.hidden, att.hidden, q.data());
  std::vector<double> keys(t_count * hidden);
  std::vector<double> joined(hidden + emb);
  for (std::size_t i = 0; i < t_count; ++i) {
    std::copy_n(latents.data() + i * hidden, hidden, joined.begin());
    std::copy_n(embeddings.data() + i * emb, emb, joined.begin() + static_cast<std::ptrdiff_t>(hidden));
    kernels::linear_forward(att.u.data(), nullptr, joined.data(), att.hidden, att.hidden + att.emb,
                            keys.data() + i * hidden);
  }
  std::vector<double> scores(t_count);
  scores_from_keys(q, keys, att.v, att.hidden, scores, nullptr);
  return scores;
}

std::vector<double> attention_weights(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("attention weights of an empty score vector");
  std::vector<double> a(scores.begin(), scores.end());
  softmax_inplace(a);
  return a;
}

std::vector<double> context_vector(std::span<const double> alpha, std::span<const double> latents, int hidden) {
  const auto hd = static_cast<std::size_t>(hidden);
  if (latents.size() != alpha.size() * hd) throw ShapeError("context: weight count does not match latent count");
  std::vector<double> c(hd, 0.0);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    for (std::size_t j = 0; j < hd; ++j) c[j] += alpha[i] * latents[i * hd + j];
  }
  return c;
}

DecodeResult decode_step(const DecoderState& state, std::span<const double> context, std::span<const double> latent,
                         std::span<const double> embedding, const DecoderView& dec) {
  const auto hd = static_cast<std::size_t>(dec.hidden);
  if (state.h.size() != hd || state.cell.size() != hd || context.size() != hd || latent.size() != hd ||
      embedding.size() != static_cast<std::size_t>(dec.emb)) {
    throw ShapeError("decode_step: operand shape mismatch");
  }
  std::vector<double> x;
  x.reserve(2 * hd + embedding.size());
  x.insert(x.end(), context.begin(), context.end());
  x.insert(x.end(), latent.begin(), latent.end());
  x.insert(x.end(), embedding.begin(), embedding.end());
  DecodeResult r;
  r.y = lstm_head_forward(dec, state.h, state.cell, state.prev_pred, x, r.state.h, r.state.cell, nullptr);
  r.state.prev_pred = r.y;
  return r;
}

// ---------------------------------------------------------------------------
// Model

struct SurrogateModel::BatchStats {
  std::array<std::vector<double>, 2> mean;
  std::array<std::vector<double>, 2> var;  // biased
  std::size_t per_channel = 0;
  std::array<std::size_t, 2> count{};
};

struct SurrogateModel::EncoderCache {
  struct Block {
    std::vector<double> padded;
    std::vector<double> xhat;
    std::vector<std::int32_t> argmax;
    std::vector<double> mask;
    std::vector<double> invstd;
  };
  std::size_t n = 0;
  Mode mode = Mode::Eval;
  std::array<Block, 2> blocks;
  std::vector<double> flat;
};

struct SurrogateModel::DecoderCache {
  struct Step {
    std::vector<double> h_prev;
    std::vector<double> c_prev;
    std::vector<double> z;  // T x H tanh activations
    std::vector<double> alpha;
    StepRecord rec;
  };
  std::vector<double> latents;  // T x H
  std::vector<double> joined;   // T x (H + emb), keys input
  std::vector<double> dec_emb;  // steps x emb
  std::vector<Step> steps;
  bool teacher = false;
};

SurrogateModel::SurrogateModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_parameters(init_seed);
}

SurrogateModel::~SurrogateModel() = default;
SurrogateModel::SurrogateModel(SurrogateModel&&) noexcept = default;
SurrogateModel& SurrogateModel::operator=(SurrogateModel&&) noexcept = default;

void SurrogateModel::build_parameters(std::uint64_t seed) {
  const auto shapes = block_shapes(cfg_.encoder);
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  const auto emb = static_cast<std::size_t>(cfg_.time.emb_dim);
  const auto head = static_cast<std::size_t>(cfg_.head_width());
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& s = shapes[b];
    const std::string prefix = "encoder.block" + std::to_string(b + 1);
    conv_w_[b] = params_.add(prefix + ".conv.weight", {static_cast<std::size_t>(s.cout), static_cast<std::size_t>(s.cin),
                                                        static_cast<std::size_t>(s.k), static_cast<std::size_t>(s.k)});
    if (s.bn) {
      bn_gamma_[b] = params_.add(prefix + ".bn.weight", {static_cast<std::size_t>(s.cout)});
      bn_beta_[b] = params_.add(prefix + ".bn.bias", {static_cast<std::size_t>(s.cout)});
      bn_mean_[b] = params_.add_buffer(prefix + ".bn.running_mean", {static_cast<std::size_t>(s.cout)}, 0.0);
      bn_var_[b] = params_.add_buffer(prefix + ".bn.running_var", {static_cast<std::size_t>(s.cout)}, 1.0);
    } else {
      conv_b_[b] = params_.add(prefix + ".conv.bias", {static_cast<std::size_t>(s.cout)});
    }
  }
  const std::size_t flat = static_cast<std::size_t>(shapes[1].cout) * static_cast<std::size_t>(cfg_.encoder.adaptive_h) *
                           static_cast<std::size_t>(cfg_.encoder.adaptive_w);
  fc_w_ = params_.add("encoder.fc.weight", {hd, flat});
  fc_b_ = params_.add("encoder.fc.bias", {hd});
  att_w_ = params_.add("attention.W_a", {hd, hd});
  att_u_ = params_.add("attention.U_a", {hd, hd + emb});
  att_v_ = params_.add("attention.V_a", {hd});
  lstm_ih_ = params_.add("decoder.lstm.weight_ih", {4 * hd, 2 * hd + emb});
  lstm_hh_ = params_.add("decoder.lstm.weight_hh", {4 * hd, hd});
  lstm_b_ = params_.add("decoder.lstm.bias", {4 * hd});
  head1_w_ = params_.add("head.fc1.weight", {head, hd + 1});
  head1_b_ = params_.add("head.fc1.bias", {head});
  head2_w_ = params_.add("head.fc2.weight", {1, head});
  head2_b_ = params_.add("head.fc2.bias", {1});

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); batch-norm affine starts at identity.
  Rng rng(seed);
  auto init = [&](std::size_t idx, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (auto& v : params_[idx].value) v = rng.uniform(-bound, bound);
  };
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& s = shapes[b];
    const double fan = static_cast<double>(s.cin * s.k * s.k);
    init(conv_w_[b], fan);
    if (s.bn) {
      std::fill(params_[bn_gamma_[b]].value.begin(), params_[bn_gamma_[b]].value.end(), 1.0);
    } else {
      init(conv_b_[b], fan);
    }
  }
  init(fc_w_, static_cast<double>(flat));
  init(fc_b_, static_cast<double>(flat));
  init(att_w_, static_cast<double>(hd));
  init(att_u_, static_cast<double>(hd + emb));
  init(att_v_, static_cast<double>(hd));
  init(lstm_ih_, static_cast<double>(hd));
  init(lstm_hh_, static_cast<double>(hd));
  init(lstm_b_, static_cast<double>(hd));
  init(head1_w_, static_cast<double>(hd + 1));
  init(head1_b_, static_cast<double>(hd + 1));
  init(head2_w_, static_cast<double>(head));
  init(head2_b_, static_cast<double>(head));
}

AttentionView SurrogateModel::attention_view() const {
  return {params_[att_w_].value, params_[att_u_].value, params_[att_v_].value, cfg_.hidden(), cfg_.time.emb_dim};
}

DecoderView SurrogateModel::decoder_view() const {
  return {params_[lstm_ih_].value, params_[lstm_hh_].value, params_[lstm_b_].value, params_[head1_w_].value,
          params_[head1_b_].value, params_[head2_w_].value, params_[head2_b_].value, cfg_.hidden(),
          cfg_.time.emb_dim, cfg_.head_width()};
}

std::vector<double> SurrogateModel::encode_impl(std::span<const double> frames, std::size_t count, Mode mode,
                                                Rng* dropout_rng, EncoderCache* cache, BatchStats* stats) const {
  const auto shapes = block_shapes(cfg_.encoder);
  if (frames.size() != count * shapes[0].in_size()) throw ShapeError("encoder input does not match C x H x W");
  if (mode == Mode::Train && !dropout_rng) throw ConfigError("train-mode encoding needs a dropout RNG");
  std::vector<double> act(frames.begin(), frames.end());  // current block input, count x in_size
  if (cache) {
    cache->n = count;
    cache->mode = mode;
  }
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& s = shapes[b];
    const std::size_t padded_size = s.padded_size();
    const std::size_t conv_size = s.conv_size();
    const std::size_t plane = static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w);
    std::vector<double> padded(count * padded_size);
    std::vector<double> conv(count * conv_size);
    std::vector<double> col(static_cast<std::size_t>(s.cin) * s.k * s.k * plane);
    const double* bias = s.bn ? nullptr : params_[conv_b_[b]].value.data();
    for (std::size_t n = 0; n < count; ++n) {
      kernels::pad_frame(act.data() + n * s.in_size(), s.cin, s.h, s.w, s.pad, padded.data() + n * padded_size);
      kernels::conv_forward(padded.data() + n * padded_size, s.cin, s.h, s.w, s.k, params_[conv_w_[b]].value.data(),
                            bias, s.cout, conv.data() + n * conv_size, col.data());
    }
    std::vector<double> invstd(static_cast<std::size_t>(s.cout), 1.0);
    if (s.bn) {
      std::vector<double> mean(static_cast<std::size_t>(s.cout), 0.0);
      std::vector<double> var(static_cast<std::size_t>(s.cout), 0.0);
      if (mode == Mode::Train) {
        const auto m = static_cast<double>(count * plane);
        for (int c = 0; c < s.cout; ++c) {
          double sum = 0.0;
          for (std::size_t n = 0; n < count; ++n) {
            const double* p = conv.data() + n * conv_size + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
          }
          const double mu = sum / m;
          double ss = 0.0;
          for (std::size_t n = 0; n < count; ++n) {
            const double* p = conv.data() + n * conv_size + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
          }
          mean[static_cast<std::size_t>(c)] = mu;
          var[static_cast<std::size_t>(c)] = ss / m;
        }
        if (stats) {
          stats->mean[b] = mean;
          stats->var[b] = var;
          stats->count[b] = count * plane;
        }
      } else {
        mean = params_.buffers()[bn_mean_[b]].value;
        var = params_.buffers()[bn_var_[b]].value;
      }
      for (int c = 0; c < s.cout; ++c) invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + kBatchNormEps);
      for (std::size_t n = 0; n < count; ++n) {
        for (int c = 0; c < s.cout; ++c) {
          double* p = conv.data() + n * conv_size + static_cast<std::size_t>(c) * plane;
          const double mu = mean[static_cast<std::size_t>(c)];
          const double is = invstd[static_cast<std::size_t>(c)];
          for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mu) * is;
        }
      }
    }
    // conv now holds xhat (normalized, or raw conv + bias without batch norm).
    const std::size_t pooled_size = s.pooled_size();
    std::vector<double> pooled(count * pooled_size);
    std::vector<std::int32_t> argmax(count * pooled_size);
    std::vector<double> relu(conv_size);
    std::vector<double> mask;
    const bool drop = mode == Mode::Train && s.dropout > 0.0;
    if (drop) mask.resize(count * pooled_size);
    for (std::size_t n = 0; n < count; ++n) {
      const double* xh = conv.data() + n * conv_size;
      for (int c = 0; c < s.cout; ++c) {
        const double g = s.bn ? params_[bn_gamma_[b]].value[static_cast<std::size_t>(c)] : 1.0;
        const double be = s.bn ? params_[bn_beta_[b]].value[static_cast<std::size_t>(c)] : 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
          relu[idx] = std::max(0.0, g * xh[idx] + be);
        }
      }
      kernels::maxpool_forward(relu.data(), s.cout, s.h, s.w, s.pool, pooled.data() + n * pooled_size,
                               argmax.data() + n * pooled_size);
      if (drop) {
        const double keep_scale = 1.0 / (1.0 - s.dropout);
        double* pm = mask.data() + n * pooled_size;
        double* po = pooled.data() + n * pooled_size;
        for (std::size_t i = 0; i < pooled_size; ++i) {
          pm[i] = dropout_rng->uniform() < s.dropout ? 0.0 : keep_scale;
          po[i] *= pm[i];
        }
      }
    }
    if (cache) {
      auto& cb = cache->blocks[b];
      cb.padded = std::move(padded);
      cb.xhat = std::move(conv);
      cb.argmax = std::move(argmax);
      cb.mask = std::move(mask);
      cb.invstd = std::move(invstd);
    }
    act = std::move(pooled);
  }
  const auto& last = shapes[1];
  const int ah = cfg_.encoder.adaptive_h;
  const int aw = cfg_.encoder.adaptive_w;
  const std::size_t flat_size = static_cast<std::size_t>(last.cout) * static_cast<std::size_t>(ah) * static_cast<std::size_t>(aw);
  std::vector<double> flat(count * flat_size);
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  std::vector<double> latents(count * hd);
  for (std::size_t n = 0; n < count; ++n) {
    kernels::adaptive_avgpool_forward(act.data() + n * last.pooled_size(), last.cout, last.ph, last.pw, ah, aw,
                                      flat.data() + n * flat_size);
    kernels::linear_forward(params_[fc_w_].value.data(), params_[fc_b_].value.data(), flat.data() + n * flat_size,
                            cfg_.hidden(), static_cast<int>(flat_size), latents.data() + n * hd);
  }
  if (cache) cache->flat = std::move(flat);
  return latents;
}

std::vector<double> SurrogateModel::encode_frames(std::span<const double> frames, std::size_t count, Mode mode,
                                                  Rng* dropout_rng) {
  if (!enc_cache_) enc_cache_ = std::make_unique<EncoderCache>();
  BatchStats stats;
  auto latents = encode_impl(frames, count, mode, dropout_rng, enc_cache_.get(), &stats);
  if (mode == Mode::Train) {
    const auto shapes = block_shapes(cfg_.encoder);
    for (std::size_t b = 0; b < 2; ++b) {
      if (!shapes[b].bn) continue;
      auto& rm = params_.buffers()[bn_mean_[b]].value;
      auto& rv = params_.buffers()[bn_var_[b]].value;
      const auto m = static_cast<double>(stats.count[b]);
      const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * stats.mean[b][c];
        rv[c] = (1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * stats.var[b][c] * unbias;
      }
    }
  }
  return latents;
}

std::vector<double> SurrogateModel::encode_frame(std::span<const double> frame, Mode mode, Rng* dropout_rng) {
  return encode_frames(frame, 1, mode, dropout_rng);
}

void SurrogateModel::backward_encoder(std::span<const double> grad_latents) {
  if (!enc_cache_) throw ConfigError("backward_encoder called before encode_frames");
  const auto& cache = *enc_cache_;
  const auto shapes = block_shapes(cfg_.encoder);
  const std::size_t count = cache.n;
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  if (grad_latents.size() != count * hd) throw ShapeError("latent gradient does not match the encoded batch");
  const auto& last = shapes[1];
  const int ah = cfg_.encoder.adaptive_h;
  const int aw = cfg_.encoder.adaptive_w;
  const std::size_t flat_size = static_cast<std::size_t>(last.cout) * static_cast<std::size_t>(ah) * static_cast<std::size_t>(aw);

  // Gradient w.r.t. the output of the current block (after dropout), count x pooled_size.
  std::vector<double> grad_act(count * last.pooled_size(), 0.0);
  std::vector<double> grad_flat(flat_size);
  for (std::size_t n = 0; n < count; ++n) {
    std::fill(grad_flat.begin(), grad_flat.end(), 0.0);
    kernels::linear_backward(params_[fc_w_].value.data(), cache.flat.data() + n * flat_size,
                             grad_latents.data() + n * hd, cfg_.hidden(), static_cast<int>(flat_size),
                             params_[fc_w_].grad.data(), params_[fc_b_].grad.data(), grad_flat.data());
    kernels::adaptive_avgpool_backward(grad_flat.data(), last.cout, last.ph, last.pw, ah, aw,
                                       grad_act.data() + n * last.pooled_size());
  }

  for (std::size_t bi = 2; bi-- > 0;) {
    const auto& s = shapes[bi];
    const auto& cb = cache.blocks[bi];
    const std::size_t pooled_size = s.pooled_size();
    const std::size_t conv_size = s.conv_size();
    const std::size_t plane = static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w);
    // Dropout, max-pool and ReLU back to the batch-norm output.
    std::vector<double> grad_bn(count * conv_size, 0.0);
    const double* gamma = s.bn ? params_[bn_gamma_[bi]].value.data() : nullptr;
    const double* beta = s.bn ? params_[bn_beta_[bi]].value.data() : nullptr;
    for (std::size_t n = 0; n < count; ++n) {
      const double* ga = grad_act.data() + n * pooled_size;
      const std::int32_t* am = cb.argmax.data() + n * pooled_size;
      const double* xh = cb.xhat.data() + n * conv_size;
      double* gb = grad_bn.data() + n * conv_size;
      for (std::size_t i = 0; i < pooled_size; ++i) {
        double g = ga[i];
        if (!cb.mask.empty()) g *= cb.mask[n * pooled_size + i];
        const auto idx = static_cast<std::size_t>(am[i]);
        const std::size_t c = idx / plane;
        const double y = s.bn ? gamma[c] * xh[idx] + beta[c] : xh[idx];
        if (y > 0.0) gb[idx] += g;
      }
    }
    // Batch norm backward: grad_bn becomes the gradient w.r.t. the conv output.
    if (s.bn) {
      auto& g_gamma = params_[bn_gamma_[bi]].grad;
      auto& g_beta = params_[bn_beta_[bi]].grad;
      const auto m = static_cast<double>(count * plane);
      for (int c = 0; c < s.cout; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t n = 0; n < count; ++n) {
          const double* g = grad_bn.data() + n * conv_size + uc * plane;
          const double* xh = cb.xhat.data() + n * conv_size + uc * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += g[i];
            sum_gx += g[i] * xh[i];
          }
        }
        g_gamma[uc] += sum_gx;
        g_beta[uc] += sum_g;
        const double scale = gamma[uc] * cb.invstd[uc];
        for (std::size_t n = 0; n < count; ++n) {
          double* g = grad_bn.data() + n * conv_size + uc * plane;
          const double* xh = cb.xhat.data() + n * conv_size + uc * plane;
          if (cache.mode == Mode::Train) {
            for (std::size_t i = 0; i < plane; ++i) g[i] = scale * (g[i] - (sum_g + xh[i] * sum_gx) / m);
          } else {
            for (std::size_t i = 0; i < plane; ++i) g[i] *= scale;
          }
        }
      }
    }
    const bool need_input = bi > 0;
    const std::size_t padded_size = s.padded_size();
    std::vector<double> grad_padded(need_input ? padded_size : 0);
    std::vector<double> grad_in(need_input ? count * s.in_size() : 0, 0.0);
    double* g_bias = s.bn ? nullptr : params_[conv_b_[bi]].grad.data();
    std::vector<double> col(static_cast<std::size_t>(s.cin) * s.k * s.k * plane);
    for (std::size_t n = 0; n < count; ++n) {
      if (need_input) std::fill(grad_padded.begin(), grad_padded.end(), 0.0);
      kernels::conv_backward(cb.padded.data() + n * padded_size, s.cin, s.h, s.w, s.k,
                             params_[conv_w_[bi]].value.data(), s.cout, grad_bn.data() + n * conv_size,
                             params_[conv_w_[bi]].grad.data(), g_bias, need_input ? grad_padded.data() : nullptr,
                             col.data());
      if (need_input) {
        const int pw = s.w + 2 * s.pad;
        const int ph = s.h + 2 * s.pad;
        double* gi = grad_in.data() + n * s.in_size();
        for (int c = 0; c < s.cin; ++c) {
          for (int y = 0; y < s.h; ++y) {
            const double* src = grad_padded.data() + (static_cast<std::size_t>(c) * ph + y + s.pad) * pw + s.pad;
            std::copy(src, src + s.w, gi + (static_cast<std::size_t>(c) * s.h + y) * s.w);
          }
        }
      }
    }
    grad_act = std::move(grad_in);
  }
}

std::vector<double> SurrogateModel::mean_latents(std::span<const double> frames, std::size_t count) const {
  const std::size_t fs = static_cast<std::size_t>(cfg_.encoder.in_channels) * cfg_.encoder.in_h * cfg_.encoder.in_w;
  if (frames.size() != count * fs) throw ShapeError("encoder input does not match C x H x W");
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  std::vector<double> latents(count * hd);
  for (std::size_t n = 0; n < count; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < fs; ++i) s += frames[n * fs + i];
    std::fill_n(latents.begin() + static_cast<std::ptrdiff_t>(n * hd), hd, s / static_cast<double>(fs));
  }
  return latents;
}

Signal SurrogateModel::decode_sequence(std::span<const double> latents, int steps, DecoderCache* cache,
                                       const Signal* teacher) const {
  const int hdim = cfg_.hidden();
  const auto hd = static_cast<std::size_t>(hdim);
  const auto emb = static_cast<std::size_t>(cfg_.time.emb_dim);
  const std::size_t t_count = latents.size() / hd;
  if (static_cast<std::size_t>(steps) > t_count) throw ShapeError("more decode steps than input frames");
  const auto att = attention_view();
  const auto dec = decoder_view();
  const bool use_emb = !cfg_.variant.no_time_embedding;

  std::vector<double> joined(t_count * (hd + emb), 0.0);
  std::vector<double> keys(t_count * hd, 0.0);
  if (!cfg_.variant.no_attention) {
    for (std::size_t i = 0; i < t_count; ++i) {
      double* row = joined.data() + i * (hd + emb);
      std::copy_n(latents.data() + i * hd, hd, row);
      if (use_emb) {
        const auto e = time_embedding(static_cast<int>(i), cfg_.time);
        std::copy(e.begin(), e.end(), row + hd);
      }
      kernels::linear_forward(att.u.data(), nullptr, row, hdim, static_cast<int>(hd + emb), keys.data() + i * hd);
    }
  }
  std::vector<double> dec_emb(static_cast<std::size_t>(steps) * emb, 0.0);
  if (use_emb) {
    for (int t = 0; t < steps; ++t) {
      const auto e = time_embedding(t, cfg_.time);
      std::copy(e.begin(), e.end(), dec_emb.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * emb));
    }
  }
  if (cache) {
    cache->latents.assign(latents.begin(), latents.end());
    cache->joined = joined;
    cache->dec_emb = dec_emb;
    cache->steps.assign(static_cast<std::size_t>(steps), {});
    cache->teacher = teacher != nullptr;
  }

  std::vector<double> h(hd, 0.0);
  std::vector<double> c(hd, 0.0);
  std::vector<double> q(hd);
  std::vector<double> scores(t_count);
  std::vector<double> z;
  std::vector<double> x(2 * hd + emb);
  std::vector<double> h_next;
  std::vector<double> c_next;
  double prev = 0.0;
  Signal out(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    DecoderCache::Step* sc = cache ? &cache->steps[ut] : nullptr;
    if (cfg_.variant.no_attention) {
      std::copy_n(latents.data() + ut * hd, hd, x.begin());
    } else {
      kernels::linear_forward(att.w.data(), nullptr, h.data(), hdim, hdim, q.data());
      z.resize(t_count * hd);
      scores_from_keys(q, keys, att.v, hdim, scores, z.data());
      softmax_inplace(scores);
      std::fill_n(x.begin(), hd, 0.0);
      for (std::size_t i = 0; i < t_count; ++i) {
        const double a = scores[i];
        const double* l = latents.data() + i * hd;
        for (std::size_t j = 0; j < hd; ++j) x[j] += a * l[j];
      }
      if (sc) {
        sc->z = z;
        sc->alpha = scores;
      }
    }
    std::copy_n(latents.data() + ut * hd, hd, x.begin() + static_cast<std::ptrdiff_t>(hd));
    std::copy_n(dec_emb.data() + ut * emb, emb, x.begin() + static_cast<std::ptrdiff_t>(2 * hd));
    if (sc) {
      sc->h_prev = h;
      sc->c_prev = c;
    }
    const double y = lstm_head_forward(dec, h, c, prev, x, h_next, c_next, sc ? &sc->rec : nullptr);
    if (!std::isfinite(y)) throw NumericalError("non-finite prediction at decode step " + std::to_string(t));
    out[ut] = y;
    h.swap(h_next);
    c.swap(c_next);
    prev = teacher ? (*teacher)[ut] : y;
  }
  return out;
}

void SurrogateModel::backward_decoder(const DecoderCache& cache, std::span<const double> grad_y,
                                      std::span<double> grad_latents) {
  const int hdim = cfg_.hidden();
  const auto hd = static_cast<std::size_t>(hdim);
  const auto emb = static_cast<std::size_t>(cfg_.time.emb_dim);
  const auto head = static_cast<std::size_t>(cfg_.head_width());
  const std::size_t t_count = cache.latents.size() / hd;
  const std::size_t steps = cache.steps.size();
  const std::size_t in = 2 * hd + emb;
  const auto dec = decoder_view();
  const auto att = attention_view();
  auto& g_ih = params_[lstm_ih_].grad;
  auto& g_hh = params_[lstm_hh_].grad;
  auto& g_b = params_[lstm_b_].grad;
  auto& g_w1 = params_[head1_w_].grad;
  auto& g_b1 = params_[head1_b_].grad;
  auto& g_w2 = params_[head2_w_].grad;
  auto& g_b2 = params_[head2_b_].grad;
  auto& g_aw = params_[att_w_].grad;
  auto& g_av = params_[att_v_].grad;

  std::vector<double> gh_next(hd, 0.0);
  std::vector<double> gc_next(hd, 0.0);
  std::vector<double> g_keys(t_count * hd, 0.0);
  std::vector<double> gh(hd);
  std::vector<double> gc(hd);
  std::vector<double> dgates(4 * hd);
  std::vector<double> gx(in);
  std::vector<double> ga1(head);
  std::vector<double> ghead_in(hd + 1);
  std::vector<double> g_alpha(t_count);
  std::vector<double> gpre(hd);
  std::vector<double> gq(hd);
  double g_prev_next = 0.0;

  for (std::size_t t = steps; t-- > 0;) {
    const auto& s = cache.steps[t];
    const auto& r = s.rec;
    const double gy = grad_y[t] + g_prev_next;
    // Output head.
    g_b2[0] += gy;
    for (std::size_t j = 0; j < head; ++j) {
      const double relu = std::max(0.0, r.a1[j]);
      g_w2[j] += gy * relu;
      ga1[j] = r.a1[j] > 0.0 ? gy * dec.fc2_w[j] : 0.0;
    }
    std::fill(ghead_in.begin(), ghead_in.end(), 0.0);
    kernels::linear_backward(dec.fc1_w.data(), r.head_in.data(), ga1.data(), static_cast<int>(head),
                             hdim + 1, g_w1.data(), g_b1.data(), ghead_in.data());
    g_prev_next = cache.teacher ? 0.0 : ghead_in[hd];
    for (std::size_t j = 0; j < hd; ++j) gh[j] = ghead_in[j] + gh_next[j];
    // LSTM cell.
    for (std::size_t j = 0; j < hd; ++j) {
      const double ig = r.gates[j];
      const double fg = r.gates[j + hd];
      const double gg = r.gates[j + 2 * hd];
      const double og = r.gates[j + 3 * hd];
      const double tc = r.tanh_cell[j];
      gc[j] = gh[j] * og * (1.0 - tc * tc) + gc_next[j];
      dgates[j] = gc[j] * gg * ig * (1.0 - ig);
      dgates[j + hd] = gc[j] * s.c_prev[j] * fg * (1.0 - fg);
      dgates[j + 2 * hd] = gc[j] * ig * (1.0 - gg * gg);
      dgates[j + 3 * hd] = gh[j] * tc * og * (1.0 - og);
      gc_next[j] = gc[j] * fg;
    }
    std::fill(gx.begin(), gx.end(), 0.0);
    kernels::linear_backward(dec.w_ih.data(), r.x.data(), dgates.data(), static_cast<int>(4 * hd),
                             static_cast<int>(in), g_ih.data(), g_b.data(), gx.data());
    std::fill(gh_next.begin(), gh_next.end(), 0.0);
    kernels::linear_backward(dec.w_hh.data(), s.h_prev.data(), dgates.data(), static_cast<int>(4 * hd), hdim,
                             g_hh.data(), nullptr, gh_next.data());
    // Current latent feeds the LSTM directly.
    for (std::size_t j = 0; j < hd; ++j) grad_latents[t * hd + j] += gx[hd + j];
    if (cfg_.variant.no_attention) {
      for (std::size_t j = 0; j < hd; ++j) grad_latents[t * hd + j] += gx[j];
      continue;
    }
    // Context and softmax.
    double dot = 0.0;
    for (std::size_t i = 0; i < t_count; ++i) {
      const double* l = cache.latents.data() + i * hd;
      double ga = 0.0;
      for (std::size_t j = 0; j < hd; ++j) {
        ga += gx[j] * l[j];
        grad_latents[i * hd + j] += s.alpha[i] * gx[j];
      }
      g_alpha[i] = ga;
      dot += s.alpha[i] * ga;
    }
    std::fill(gq.begin(), gq.end(), 0.0);
    for (std::size_t i = 0; i < t_count; ++i) {
      const double gs = s.alpha[i] * (g_alpha[i] - dot);
      const double* z = s.z.data() + i * hd;
      double* gk = g_keys.data() + i * hd;
      for (std::size_t j = 0; j < hd; ++j) {
        g_av[j] += gs * z[j];
        const double gp = gs * att.v[j] * (1.0 - z[j] * z[j]);
        gk[j] += gp;
        gq[j] += gp;
      }
    }
    kernels::linear_backward(att.w.data(), s.h_prev.data(), gq.data(), hdim, hdim, g_aw.data(), nullptr,
                             gh_next.data());
  }
  if (!cfg_.variant.no_attention) {
    auto& g_au = params_[att_u_].grad;
    std::vector<double> gj(hd + emb);
    for (std::size_t i = 0; i < t_count; ++i) {
      std::fill(gj.begin(), gj.end(), 0.0);
      kernels::linear_backward(att.u.data(), cache.joined.data() + i * (hd + emb), g_keys.data() + i * hd, hdim,
                               static_cast<int>(hd + emb), g_au.data(), nullptr, gj.data());
      for (std::size_t j = 0; j < hd; ++j) grad_latents[i * hd + j] += gj[j];
    }
  }
}

SignalBatch SurrogateModel::forward(std::span<const SequenceInput> batch, Mode mode, Rng* dropout_rng,
                                    const SignalBatch* teacher) {
  if (batch.empty()) throw ShapeError("empty batch");
  const auto& e = cfg_.encoder;
  std::size_t total = 0;
  for (const auto& s : batch) {
    if (s.c != e.in_channels || s.h != e.in_h || s.w != e.in_w || s.values.size() != s.frame_size() * static_cast<std::size_t>(s.t)) {
      throw ShapeError("sequence shape does not match the encoder configuration");
    }
    total += static_cast<std::size_t>(s.t);
  }
  if (teacher && teacher->size() != batch.size()) throw ShapeError("teacher batch size mismatch");
  std::vector<double> frames;
  frames.reserve(total * batch[0].frame_size());
  batch_lengths_.clear();
  for (const auto& s : batch) {
    frames.insert(frames.end(), s.values.begin(), s.values.end());
    batch_lengths_.push_back(s.t);
  }
  const auto latents = cfg_.variant.no_cnn ? mean_latents(frames, total) : encode_frames(frames, total, mode, dropout_rng);
  if (cfg_.variant.no_cnn) enc_cache_.reset();
  last_mode_ = mode;
  dec_caches_.assign(batch.size(), {});
  SignalBatch out;
  out.reserve(batch.size());
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  std::size_t offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto len = static_cast<std::size_t>(batch[b].t);
    const std::span<const double> seq(latents.data() + offset * hd, len * hd);
    out.push_back(decode_sequence(seq, batch[b].t, &dec_caches_[b], teacher ? &(*teacher)[b] : nullptr));
    offset += len;
  }
  return out;
}

void SurrogateModel::backward(const SignalBatch& grad_outputs) {
  if (grad_outputs.size() != dec_caches_.size()) throw ShapeError("gradient batch does not match the last forward");
  const auto hd = static_cast<std::size_t>(cfg_.hidden());
  std::size_t total = 0;
  for (int len : batch_lengths_) total += static_cast<std::size_t>(len);
  std::vector<double> grad_latents(total * hd, 0.0);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < dec_caches_.size(); ++b) {
    const auto len = static_cast<std::size_t>(batch_lengths_[b]);
    if (grad_outputs[b].size() != dec_caches_[b].steps.size()) throw ShapeError("gradient length mismatch");
    backward_decoder(dec_caches_[b], grad_outputs[b], std::span<double>(grad_latents.data() + offset * hd, len * hd));
    offset += len;
  }
  if (!cfg_.variant.no_cnn) backward_encoder(grad_latents);
}

Signal SurrogateModel::predict(const SequenceInput& input) {
  const auto& e = cfg_.encoder;
  if (input.c != e.in_channels || input.h != e.in_h || input.w != e.in_w ||
      input.values.size() != input.frame_size() * static_cast<std::size_t>(input.t)) {
    throw ShapeError("sequence shape does not match the encoder configuration");
  }
  const auto n = static_cast<std::size_t>(input.t);
  const auto latents = cfg_.variant.no_cnn ? mean_latents(input.values, n)
                                           : encode_impl(input.values, n, Mode::Eval, nullptr, nullptr, nullptr);
  return decode_sequence(latents, input.t, nullptr, nullptr);
}

nlohmann::json SurrogateModel::config_json() const { return to_json(cfg_); }

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.encoder.blocks) {
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"pool", b.pool},
                      {"dropout", b.dropout}, {"batch_norm", b.batch_norm}});
  }
  return {{"encoder",
           {{"in_channels", c.encoder.in_channels}, {"in_h", c.encoder.in_h}, {"in_w", c.encoder.in_w},
            {"blocks", blocks}, {"adaptive_h", c.encoder.adaptive_h}, {"adaptive_w", c.encoder.adaptive_w},
            {"hidden_size", c.encoder.hidden_size}}},
          {"time_embedding", {{"emb_dim", c.time.emb_dim}, {"base", c.time.base}}},
          {"head_hidden", c.head_hidden},
          {"variant",
           {{"no_cnn", c.variant.no_cnn}, {"no_attention", c.variant.no_attention},
            {"no_time_embedding", c.variant.no_time_embedding}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    c.encoder.in_channels = e.value("in_channels", c.encoder.in_channels);
    c.encoder.in_h = e.value("in_h", c.encoder.in_h);
    c.encoder.in_w = e.value("in_w", c.encoder.in_w);
    c.encoder.adaptive_h = e.value("adaptive_h", c.encoder.adaptive_h);
    c.encoder.adaptive_w = e.value("adaptive_w", c.encoder.adaptive_w);
    c.encoder.hidden_size = e.value("hidden_size", c.encoder.hidden_size);
    if (e.contains("blocks")) {
      for (std::size_t b = 0; b < 2 && b < e.at("blocks").size(); ++b) {
        const auto& bj = e.at("blocks").at(b);
        auto& bc = c.encoder.blocks[b];
        bc.out_channels = bj.value("out_channels", bc.out_channels);
        bc.kernel = bj.value("kernel", bc.kernel);
        bc.pool = bj.value("pool", bc.pool);
        bc.dropout = bj.value("dropout", bc.dropout);
        bc.batch_norm = bj.value("batch_norm", bc.batch_norm);
      }
    }
  }
  if (j.contains("time_embedding")) {
    c.time.emb_dim = j.at("time_embedding").value("emb_dim", c.time.emb_dim);
    c.time.base = j.at("time_embedding").value("base", c.time.base);
  }
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  if (j.contains("variant")) {
    const auto& v = j.at("variant");
    c.variant.no_cnn = v.value("no_cnn", c.variant.no_cnn);
    c.variant.no_attention = v.value("no_attention", c.variant.no_attention);
    c.variant.no_time_embedding = v.value("no_time_embedding", c.variant.no_time_embedding);
  }
  c.validate();
  return c;
}

}  // namespace fwdecg
