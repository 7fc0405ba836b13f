#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "fwdecg/datastore.hpp"
#include "fwdecg/objective.hpp"
#include "fwdecg/surrogatenet.hpp"

namespace fwdecg {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of `params` in place. `step` is 1-based.
/// Throws NumericalError naming `name` if any gradient is not finite.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, long step,
                 const AdamHyper& hyper, const std::string& name = "param");

/// Adam over every learnable tensor of a model.
/// Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(SurrogateParams& params, double max_norm);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const SurrogateParams& params);
  void step(SurrogateParams& params, double lr);
  long steps() const { return step_; }

 private:
  std::vector<AdamMoments> moments_;
  long step_ = 0;
};

/// Reduce-on-plateau bookkeeping on the validation loss. An epoch is an improvement when
/// its loss is below best - min_delta; after `patience` consecutive non-improving epochs the
/// rate is multiplied by `factor` and the counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience, double factor, double min_delta);
  /// Returns true when this observation triggered a cut.
  bool observe(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double min_delta_;
  double best_;
  int bad_ = 0;
};

/// Replays `history` through a PlateauScheduler starting at `lr`.
double lr_on_plateau(std::span<const double> history, double lr, int patience, double factor, double min_delta);
/// 0-based epochs at which the replay cuts the rate.
std::vector<int> plateau_cut_epochs(std::span<const double> history, int patience, double factor, double min_delta);

struct AblationFlags {
  bool no_cnn = false;
  bool no_attention = false;
  bool no_time_embedding = false;
  bool no_se_loss = false;
};

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  int patience = 5;
  double lr_factor = 0.5;
  double min_delta = 1e-5;
  int batch_size = 8;
  double grad_clip_norm = 0.1;  // 0 disables clipping
  std::uint64_t seed = 0;
  bool teacher_forcing = false;
  LossConfig loss;
  AblationFlags ablation;

  void validate() const;
};

struct EpochRow {
  int epoch = 0;
  double huber = 0.0;
  double spectral_entropy = 0.0;
  double omega = 0.0;
  double total = 0.0;
  double val_loss = 0.0;
  double val_r2 = 0.0;
  double lr = 0.0;
};

struct Metrics {
  double r2 = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

/// Per-class and overall means of per-sample R^2 and MAE. MAE is in physical target units.
struct EvalReport {
  std::map<TissueClass, Metrics> per_class;
  Metrics overall;
  std::vector<std::string> case_ids;
  std::vector<TissueClass> labels;
  SignalBatch targets;      // denormalized
  SignalBatch predictions;  // denormalized
};

struct TrainReport {
  std::string status;  // "trained", "nothing trained" or "diverged"
  std::vector<EpochRow> rows;
  int best_epoch = -1;
  double best_val_r2 = 0.0;
  std::optional<EvalReport> test;
};

struct TrainResult {
  TrainReport report;
  std::optional<SurrogateModel> best_model;
};

/// Applies the architecture ablation flags to a model config.
ModelConfig apply_ablation(ModelConfig cfg, const AblationFlags& flags);

/// Sample input as a double-precision sequence.
SequenceInput to_sequence(const Sample& sample);

/// Aggregates per-sample metrics given predictions. All signals are in the same units.
EvalReport evaluate_predictions(const SignalBatch& targets, const SignalBatch& predictions,
                                std::span<const TissueClass> labels);

/// Eval-mode predictions on `indices`, denormalized with the dataset constants.
EvalReport evaluate(SurrogateModel& model, const Dataset& dataset, std::span<const std::size_t> indices);

/// Runs the training protocol. When `checkpoint_dir` is given the best checkpoint is written
/// there (and `last_good` on divergence, after which NumericalError is thrown).
/// `progress` is called after each epoch.
TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                  const std::function<void(const EpochRow&)>& progress = {});

/// Checkpoint directory: `manifest.json` plus one float64 TensorFile per parameter and buffer.
void save_checkpoint(const std::filesystem::path& dir, const SurrogateModel& model, const nlohmann::json& info);
SurrogateModel load_checkpoint(const std::filesystem::path& dir, nlohmann::json* info = nullptr);

struct AblationRow {
  std::string variant;  // "full" or one flag name
  TrainReport report;
};

inline constexpr const char* kAblationVariants[] = {"no_cnn", "no_attention", "no_time_embedding", "no_se_loss"};

/// Trains the full model plus one arm per listed flag. Throws ConfigError on unknown names.
std::vector<AblationRow> ablate(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& base,
                                const std::vector<std::string>& variants,
                                const std::function<void(const std::string&, const EpochRow&)>& progress = {});

/// One line per variant: variant,<class>_r2,<class>_mae,...,overall_r2,overall_mae.
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string epoch_csv(const std::vector<EpochRow>& rows);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const TrainReport& r);

}  // namespace fwdecg
