#include "fwdecg/trainpipe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fwdecg/error.hpp"
#include "fwdecg/rng.hpp"
#include "fwdecg/tensor_file.hpp"

namespace fwdecg {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

struct Snapshot {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> buffers;
};

Snapshot snapshot(const SurrogateModel& m) {
  Snapshot s;
  for (const auto& t : m.params().tensors()) s.values.push_back(t.value);
  for (const auto& t : m.params().buffers()) s.buffers.push_back(t.value);
  return s;
}

void restore(SurrogateModel& m, const Snapshot& s) {
  auto& p = m.params();
  for (std::size_t i = 0; i < s.values.size(); ++i) p.tensors()[i].value = s.values[i];
  for (std::size_t i = 0; i < s.buffers.size(); ++i) p.buffers()[i].value = s.buffers[i];
}

Signal target_signal(const Sample& s) {
  return Signal(s.target.f32.begin(), s.target.f32.end());
}

void check_shapes(const SurrogateModel& model, const Dataset& ds) {
  const auto& e = model.config().encoder;
  for (const auto& s : ds.samples) {
    if (s.input.dims.size() != 4 || static_cast<int>(s.input.dims[1]) != e.in_channels ||
        s.height() != e.in_h || s.width() != e.in_w) {
      throw ShapeError("sample " + s.meta.case_id + " does not match the model input " + std::to_string(e.in_channels) +
                       "x" + std::to_string(e.in_h) + "x" + std::to_string(e.in_w));
    }
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer and schedule

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, long step,
                 const AdamHyper& hyper, const std::string& name) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient size mismatch for " + name);
  if (step < 1) throw ConfigError("adam step counter starts at 1");
  if (moments.m.empty()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
  }
  if (moments.m.size() != params.size()) throw ShapeError("adam: moment size mismatch for " + name);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError("non-finite gradient in " + name + "[" + std::to_string(i) + "]");
    }
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
    moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = moments.m[i] / bc1;
    const double vhat = moments.v[i] / bc2;
    params[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

AdamOptimizer::AdamOptimizer(const SurrogateParams& params) : moments_(params.tensors().size()) {}

void AdamOptimizer::step(SurrogateParams& params, double lr) {
  // Validate every gradient before touching any parameter so a failure leaves the model intact.
  for (const auto& t : params.tensors()) {
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      if (!std::isfinite(t.grad[i])) {
        throw NumericalError("non-finite gradient in " + t.name + "[" + std::to_string(i) + "]");
      }
    }
  }
  ++step_;
  AdamHyper h;
  h.lr = lr;
  for (std::size_t k = 0; k < params.tensors().size(); ++k) {
    auto& t = params.tensors()[k];
    adam_update(t.value, t.grad, moments_[k], step_, h, t.name);
  }
}

double clip_grad_norm(SurrogateParams& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  double sq = 0.0;
  for (const auto& t : params.tensors()) {
    for (double g : t.grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& t : params.tensors()) {
      for (double& g : t.grad) g *= scale;
    }
  }
  return norm;
}

PlateauScheduler::PlateauScheduler(double lr, int patience, double factor, double min_delta)
    : lr_(lr), patience_(patience), factor_(factor), min_delta_(min_delta),
      best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("lr factor must lie in (0, 1)");
}

bool PlateauScheduler::observe(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    bad_ = 0;
    return false;
  }
  if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
    return true;
  }
  return false;
}

double lr_on_plateau(std::span<const double> history, double lr, int patience, double factor, double min_delta) {
  PlateauScheduler s(lr, patience, factor, min_delta);
  for (double v : history) s.observe(v);
  return s.lr();
}

std::vector<int> plateau_cut_epochs(std::span<const double> history, int patience, double factor, double min_delta) {
  PlateauScheduler s(1.0, patience, factor, min_delta);
  std::vector<int> cuts;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (s.observe(history[i])) cuts.push_back(static_cast<int>(i));
  }
  return cuts;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr factor must lie in (0, 1)");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm must be >= 0");
  loss.validate();
}

ModelConfig apply_ablation(ModelConfig cfg, const AblationFlags& flags) {
  cfg.variant.no_cnn = cfg.variant.no_cnn || flags.no_cnn;
  cfg.variant.no_attention = cfg.variant.no_attention || flags.no_attention;
  cfg.variant.no_time_embedding = cfg.variant.no_time_embedding || flags.no_time_embedding;
  return cfg;
}

SequenceInput to_sequence(const Sample& sample) {
  SequenceInput s;
  s.t = sample.frames();
  s.c = static_cast<int>(sample.input.dims.at(1));
  s.h = sample.height();
  s.w = sample.width();
  s.values.assign(sample.input.f32.begin(), sample.input.f32.end());
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_predictions(const SignalBatch& targets, const SignalBatch& predictions,
                                std::span<const TissueClass> labels) {
  if (targets.size() != predictions.size() || targets.size() != labels.size()) {
    throw ShapeError("evaluation: target, prediction and label counts differ");
  }
  EvalReport r;
  r.targets = targets;
  r.predictions = predictions;
  r.labels.assign(labels.begin(), labels.end());
  std::map<TissueClass, std::pair<double, double>> sums;
  double r2_sum = 0.0;
  double mae_sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double r2 = r2_score(targets[i], predictions[i]);
    const double m = mae(targets[i], predictions[i]);
    auto& s = sums[labels[i]];
    s.first += r2;
    s.second += m;
    ++r.per_class[labels[i]].count;
    r2_sum += r2;
    mae_sum += m;
  }
  for (auto& [cls, metrics] : r.per_class) {
    const auto n = static_cast<double>(metrics.count);
    metrics.r2 = sums[cls].first / n;
    metrics.mae = sums[cls].second / n;
  }
  r.overall.count = targets.size();
  if (!targets.empty()) {
    r.overall.r2 = r2_sum / static_cast<double>(targets.size());
    r.overall.mae = mae_sum / static_cast<double>(targets.size());
  }
  return r;
}

EvalReport evaluate(SurrogateModel& model, const Dataset& dataset, std::span<const std::size_t> indices) {
  check_shapes(model, dataset);
  const auto& nc = dataset.normalization;
  SignalBatch targets;
  SignalBatch preds;
  std::vector<TissueClass> labels;
  std::vector<std::string> ids;
  for (auto i : indices) {
    if (i >= dataset.samples.size()) throw ShapeError("evaluation index out of range");
    const auto& s = dataset.samples[i];
    auto y = target_signal(s);
    auto p = model.predict(to_sequence(s));
    for (auto& v : y) v = v * nc.target_std + nc.target_mean;
    for (auto& v : p) v = v * nc.target_std + nc.target_mean;
    targets.push_back(std::move(y));
    preds.push_back(std::move(p));
    labels.push_back(s.label);
    ids.push_back(s.meta.case_id);
  }
  auto r = evaluate_predictions(targets, preds, labels);
  r.case_ids = std::move(ids);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& dir, const SurrogateModel& model, const nlohmann::json& info) {
  std::filesystem::create_directories(dir);
  auto describe = [&](const std::vector<ParamTensor>& list, const std::string& kind) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : list) {
      const std::string file = kind + "/" + t.name + ".ecgf";
      std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
      write_tensor(dir / file, Tensor::from_double(dims, t.value));
      arr.push_back({{"name", t.name}, {"shape", t.shape}, {"file", file}});
    }
    return arr;
  };
  nlohmann::json manifest = {{"format", "fwdecg-checkpoint"},
                             {"version", 1},
                             {"model", model.config_json()},
                             {"info", info},
                             {"parameters", describe(model.params().tensors(), "params")},
                             {"buffers", describe(model.params().buffers(), "buffers")}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

SurrogateModel load_checkpoint(const std::filesystem::path& dir, nlohmann::json* info) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  if (manifest.value("format", "") != "fwdecg-checkpoint") {
    throw FormatError(dir.string() + ": not a checkpoint manifest");
  }
  SurrogateModel model(model_config_from_json(manifest.at("model")), 0);
  auto fill = [&](std::vector<ParamTensor>& list, const nlohmann::json& entries) {
    if (entries.size() != list.size()) throw FormatError(dir.string() + ": tensor count does not match the model");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& e = entries.at(i);
      if (e.at("name").get<std::string>() != list[i].name) {
        throw FormatError(dir.string() + ": unexpected tensor " + e.at("name").get<std::string>());
      }
      const auto t = read_tensor(dir / e.at("file").get<std::string>());
      if (t.element_count() != list[i].value.size()) {
        throw ShapeError(dir.string() + ": wrong element count for " + list[i].name);
      }
      list[i].value = t.to_double();
    }
  };
  fill(model.params().tensors(), manifest.at("parameters"));
  fill(model.params().buffers(), manifest.at("buffers"));
  if (info) *info = manifest.at("info");
  return model;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint_dir,
                  const std::function<void(const EpochRow&)>& progress) {
  cfg.validate();
  if (dataset.split.train.empty() || dataset.split.val.empty()) {
    throw ConfigError("training needs non-empty train and validation splits");
  }
  TrainResult result;
  result.report.status = "nothing trained";
  if (cfg.epochs == 0) return result;

  SurrogateModel model(apply_ablation(model_cfg, cfg.ablation), derive_seed(cfg.seed, kInitStream));
  check_shapes(model, dataset);
  AdamOptimizer opt(model.params());
  PlateauScheduler sched(cfg.lr, cfg.patience, cfg.lr_factor, cfg.min_delta);
  Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));

  std::vector<SequenceInput> train_inputs;
  SignalBatch train_targets;
  for (auto i : dataset.split.train) {
    train_inputs.push_back(to_sequence(dataset.samples[i]));
    train_targets.push_back(target_signal(dataset.samples[i]));
  }
  std::vector<SequenceInput> val_inputs;
  SignalBatch val_targets;
  for (auto i : dataset.split.val) {
    val_inputs.push_back(to_sequence(dataset.samples[i]));
    val_targets.push_back(target_signal(dataset.samples[i]));
  }

  Snapshot best;
  Snapshot last_good = snapshot(model);
  const double omega_override = cfg.ablation.no_se_loss ? 0.0 : -1.0;
  std::vector<std::size_t> order(train_inputs.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  auto save_last_good = [&](const std::string& why) {
    if (checkpoint_dir) {
      SurrogateModel m(model.config(), 0);
      restore(m, last_good);
      save_checkpoint(*checkpoint_dir / "last_good", m,
                      {{"status", "diverged"}, {"reason", why},
                       {"epoch", result.report.rows.empty() ? -1 : result.report.rows.back().epoch}});
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochRow row;
    row.epoch = epoch;
    row.lr = sched.lr();
    try {
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        std::vector<SequenceInput> batch;
        SignalBatch targets;
        for (std::size_t k = start; k < end; ++k) {
          batch.push_back(train_inputs[order[k]]);
          targets.push_back(train_targets[order[k]]);
        }
        model.params().zero_grad();
        const auto preds = model.forward(batch, Mode::Train, &dropout_rng, cfg.teacher_forcing ? &targets : nullptr);
        SignalBatch grad;
        const auto terms = total_loss(targets, preds, epoch, cfg.epochs, cfg.loss, &grad, omega_override);
        if (!std::isfinite(terms.total)) throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
        model.backward(grad);
        if (cfg.grad_clip_norm > 0.0) clip_grad_norm(model.params(), cfg.grad_clip_norm);
        opt.step(model.params(), sched.lr());
        const double w = static_cast<double>(end - start);
        row.huber += w * terms.huber;
        row.spectral_entropy += w * terms.spectral_entropy;
        row.total += w * terms.total;
        row.omega = terms.omega;
      }
      const auto n = static_cast<double>(order.size());
      row.huber /= n;
      row.spectral_entropy /= n;
      row.total /= n;

      SignalBatch val_preds;
      for (const auto& v : val_inputs) val_preds.push_back(model.predict(v));
      const auto val_terms = total_loss(val_targets, val_preds, epoch, cfg.epochs, cfg.loss, nullptr, omega_override);
      if (!std::isfinite(val_terms.total)) {
        throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
      }
      row.val_loss = val_terms.total;
      row.val_r2 = r2_score(val_targets, val_preds);
    } catch (const NumericalError& e) {
      result.report.status = "diverged";
      save_last_good(e.what());
      throw;
    }
    last_good = snapshot(model);
    if (result.report.best_epoch < 0 || row.val_r2 > result.report.best_val_r2) {
      result.report.best_epoch = epoch;
      result.report.best_val_r2 = row.val_r2;
      best = last_good;
    }
    sched.observe(row.val_loss);
    result.report.rows.push_back(row);
    if (progress) progress(row);
  }

  restore(model, best);
  result.report.status = "trained";
  if (!dataset.split.test.empty()) result.report.test = evaluate(model, dataset, dataset.split.test);
  if (checkpoint_dir) {
    save_checkpoint(*checkpoint_dir / "best", model,
                    {{"epoch", result.report.best_epoch}, {"val_r2", result.report.best_val_r2},
                     {"train_config", to_json(cfg)}});
  }
  result.best_model.emplace(std::move(model));
  return result;
}

std::vector<AblationRow> ablate(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& base,
                                const std::vector<std::string>& variants,
                                const std::function<void(const std::string&, const EpochRow&)>& progress) {
  for (const auto& v : variants) {
    if (std::find_if(std::begin(kAblationVariants), std::end(kAblationVariants),
                     [&](const char* k) { return v == k; }) == std::end(kAblationVariants)) {
      throw ConfigError("unknown ablation variant '" + v +
                        "' (expected no_cnn, no_attention, no_time_embedding or no_se_loss)");
    }
  }
  std::vector<std::string> arms{"full"};
  for (const char* k : kAblationVariants) {
    if (std::find(variants.begin(), variants.end(), k) != variants.end()) arms.emplace_back(k);
  }
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    TrainConfig cfg = base;
    cfg.ablation.no_cnn = base.ablation.no_cnn || arm == "no_cnn";
    cfg.ablation.no_attention = base.ablation.no_attention || arm == "no_attention";
    cfg.ablation.no_time_embedding = base.ablation.no_time_embedding || arm == "no_time_embedding";
    cfg.ablation.no_se_loss = base.ablation.no_se_loss || arm == "no_se_loss";
    std::function<void(const EpochRow&)> cb;
    if (progress) cb = [&](const EpochRow& r) { progress(arm, r); };
    auto result = train(dataset, model_cfg, cfg, std::nullopt, cb);
    rows.push_back({arm, std::move(result.report)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant";
  for (auto cls : kAllTissueClasses) os << ',' << to_string(cls) << "_r2," << to_string(cls) << "_mae";
  os << ",overall_r2,overall_mae\n";
  for (const auto& row : rows) {
    os << row.variant;
    for (auto cls : kAllTissueClasses) {
      if (row.report.test && row.report.test->per_class.count(cls)) {
        const auto& m = row.report.test->per_class.at(cls);
        os << ',' << fmt(m.r2) << ',' << fmt(m.mae);
      } else {
        os << ",,";
      }
    }
    if (row.report.test) {
      os << ',' << fmt(row.report.test->overall.r2) << ',' << fmt(row.report.test->overall.mae);
    } else {
      os << ",,";
    }
    os << '\n';
  }
  return os.str();
}

std::string epoch_csv(const std::vector<EpochRow>& rows) {
  std::ostringstream os;
  os << "epoch,huber,spectral_entropy,omega,total,val_loss,val_r2,lr\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << fmt(r.huber) << ',' << fmt(r.spectral_entropy) << ',' << fmt(r.omega) << ','
       << fmt(r.total) << ',' << fmt(r.val_loss) << ',' << fmt(r.val_r2) << ',' << fmt(r.lr) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"patience", c.patience},
          {"lr_factor", c.lr_factor},
          {"min_delta", c.min_delta},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm},
          {"seed", c.seed},
          {"teacher_forcing", c.teacher_forcing},
          {"loss", to_json(c.loss)},
          {"ablation",
           {{"no_cnn", c.ablation.no_cnn},
            {"no_attention", c.ablation.no_attention},
            {"no_time_embedding", c.ablation.no_time_embedding},
            {"no_se_loss", c.ablation.no_se_loss}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.patience = j.value("patience", c.patience);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.min_delta = j.value("min_delta", c.min_delta);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.seed = j.value("seed", c.seed);
  c.teacher_forcing = j.value("teacher_forcing", c.teacher_forcing);
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"), c.loss);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.no_cnn = a.value("no_cnn", c.ablation.no_cnn);
    c.ablation.no_attention = a.value("no_attention", c.ablation.no_attention);
    c.ablation.no_time_embedding = a.value("no_time_embedding", c.ablation.no_time_embedding);
    c.ablation.no_se_loss = a.value("no_se_loss", c.ablation.no_se_loss);
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cls, m] : r.per_class) {
    per[std::string(to_string(cls))] = {{"r2", m.r2}, {"mae", m.mae}, {"count", m.count}};
  }
  return {{"per_class", per}, {"overall", {{"r2", r.overall.r2}, {"mae", r.overall.mae}, {"count", r.overall.count}}}};
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j = {{"status", r.status}, {"epochs_run", r.rows.size()}, {"best_epoch", r.best_epoch},
                      {"best_val_r2", r.best_val_r2}};
  if (r.test) j["test"] = to_json(*r.test);
  return j;
}

}  // namespace fwdecg
