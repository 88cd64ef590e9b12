#pragma once

// Training, evaluation, loss-weight sweeps and gradient checks.

#include <chrono>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "usev/config.hpp"
#include "usev/losses.hpp"
#include "usev/metrics.hpp"
#include "usev/mixsim.hpp"
#include "usev/model.hpp"

namespace usev {

enum class TrainStage { PretrainOverlapped, TrainGeneral };
enum class LossKind { Sdr, Uniform, Differentiated };

std::string_view to_string(TrainStage s);
std::string_view to_string(LossKind k);

struct TrainConfig {
  TrainStage stage = TrainStage::TrainGeneral;
  double lr0 = 1e-4;
  double lr_decay = 0.98;  // per epoch, multiplicative
  std::size_t max_epochs = 30;
  std::size_t patience = 8;
  std::size_t batch_size = 4;
  double clip_truncate_s = 6.0;
  LossKind loss = LossKind::Differentiated;
  LossWeights weights;
  std::uint64_t seed = 0;
  UsevConfig model;
  /// Optional starting point, e.g. a pretraining checkpoint.
  std::optional<std::filesystem::path> init_checkpoint;

  void validate() const;
  /// Stage defaults: pretraining uses lr 1e-3 and the SDR loss, general
  /// training lr 1e-4 and the differentiated loss.
  static TrainConfig for_stage(TrainStage stage);
  /// `train.*` and `model.*` keys; unknown keys are rejected.
  static TrainConfig from_config(const KeyValueConfig& kv);
  std::string to_text() const;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Tracks the best validation loss and counts non-improving epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Returns true when `loss` improves on the best seen so far.
  bool update(double loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }

 private:
  std::size_t patience_;
  std::size_t bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// A training example after cropping.
struct Example {
  std::vector<double> mixture;
  std::vector<double> target;
  VisemeMatrix visemes;
  ScenarioTrack track;
};

/// Whole clip when it fits `max_len`, else a random crop whose start lies on
/// a viseme frame boundary; the track and viseme stream are cropped along.
Example crop_example(const MixtureRecord& rec, std::size_t max_len, std::mt19937_64& rng);
Example whole_example(const MixtureRecord& rec);

ad::Tensor example_loss(const UsevModel& model, const Example& ex, LossKind loss,
                        const LossWeights& w);
/// Mean loss over full-length clips, no graph.
double mean_loss(const UsevModel& model, const std::vector<MixtureRecord>& clips, LossKind loss,
                 const LossWeights& w);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
  std::size_t steps = 0;  // cumulative optimizer steps
  double wall_s = 0.0;

  /// JSON line without wall time, so logs of identical runs compare equal.
  std::string json() const;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
  bool early_stopped = false;
};

struct TrainCallbacks {
  std::function<void(const EpochLog&)> on_epoch;
  /// Called with the model whenever validation improves.
  std::function<void(const UsevModel&, const EpochLog&)> on_best;
  /// Called with the final weights before the best ones are restored.
  std::function<void(const UsevModel&)> on_finish;
};

/// In-memory training loop. With an empty validation set the training loss
/// drives early stopping. On return `model` holds the best weights.
TrainResult train(const TrainConfig& cfg, const std::vector<MixtureRecord>& train_set,
                  const std::vector<MixtureRecord>& val_set, UsevModel& model,
                  const TrainCallbacks& cb = {});

/// File-based run: writes best.ckpt, last.ckpt, train_log.jsonl,
/// timing.jsonl and run_config.txt into out_dir.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& train_manifest,
                  const std::optional<std::filesystem::path>& val_manifest,
                  const std::filesystem::path& out_dir);

enum class ExtractorKind { Model, Oracle, Zero, Mixture };
ExtractorKind parse_extractor(const std::string& s);

/// Estimates for every clip, full length (no truncation).
std::vector<std::vector<double>> extract_all(const std::vector<MixtureRecord>& clips,
                                             ExtractorKind kind, const UsevModel* model);
ReportTables evaluate(const std::vector<MixtureRecord>& clips, ExtractorKind kind,
                      const UsevModel* model);
/// Writes report.txt and the CSV tables into out_dir.
ReportTables evaluate(const std::optional<std::filesystem::path>& checkpoint,
                      const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                      ExtractorKind kind = ExtractorKind::Model);

/// The six weight tuples compared for the loss-weight study.
std::vector<LossWeights> default_weight_grid();

struct SweepRow {
  LossWeights weights;
  TrainResult run;
  ReportTables report;
};

std::vector<SweepRow> sweep_weights(const TrainConfig& base, const std::vector<LossWeights>& grid,
                                    const std::vector<MixtureRecord>& train_set,
                                    const std::vector<MixtureRecord>& val_set);
/// One row per tuple: weights, QQ/QS power and SQ/SS SI-SDR.
std::string sweep_table_text(const std::vector<SweepRow>& rows);
std::string sweep_table_csv(const std::vector<SweepRow>& rows);

// Gradient checking.

inline constexpr double kFdStep = 1e-6;
/// Per-element error |a - n| / max(|a|, |n|, kGradScaleFloor).
inline constexpr double kGradScaleFloor = 1e-3;
inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

using GraphFn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

/// Compares autodiff gradients of sum(f(inputs) * R), R fixed random, with
/// central differences for every element of every grad-requiring input.
double max_grad_error(const GraphFn& f, std::vector<ad::Tensor> inputs, std::uint64_t seed);

struct GradcheckEntry {
  std::string name;
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
  std::string to_text() const;
};

/// scope: "ops", "model" or "all".
GradcheckReport gradcheck(const std::string& scope, std::size_t seeds = 20);
/// Gradient check of one named operator suite over `seeds` seeds.
GradcheckEntry gradcheck_op(const std::string& op, std::size_t seeds);
std::vector<std::string> gradcheck_op_names();
/// Micro-config model with differentiated loss.
GradcheckEntry gradcheck_model(std::size_t seeds);

/// `corpus.*` keys of a simulate config.
CorpusConfig corpus_config_from(const KeyValueConfig& kv);

}  // namespace usev
