#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeaug/dataio.hpp"
#include "rangeaug/policy.hpp"
#include "rangeaug/refmodel.hpp"
#include "rangeaug/schedule.hpp"
#include "rangeaug/simloss.hpp"

namespace rangeaug {

struct KdSettings {
  std::string teacher_checkpoint;
  double alpha = 0.5;
  double temperature = 4.0;
};

struct DataSettings {
  std::size_t n_train = 4000;
  std::size_t n_val = 1000;
  std::size_t num_classes = 4;
  std::size_t image_size = 32;
  std::uint64_t seed = 7;
  // Optional .ratf files replacing the generated splits.
  std::string train_path;
  std::string val_path;
  // When set, the validation split is evaluated under this photometric shift.
  std::optional<ShiftSpec> val_shift;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double model_lr = 0.05;
  double policy_lr = 0.05;
  double momentum = 0.9;
  double lambda = 0.0015;
  double beta = 1.0;
  PsnrReduction ra_reduction = PsnrReduction::PerImage;
  // total_steps is overwritten by train() to cover the whole run.
  Curriculum curriculum{CurriculumKind::Cosine, 40.0, 10.0, 1};
  double p_apply = 1.0;
  bool joint_mode = true;
  std::optional<KdSettings> kd;
  std::vector<std::size_t> hidden{32};
  std::uint64_t seed = 0;
  std::string out_dir;
  // Per step, measure dL_task/dphi and dL_ra/dphi with separate reverse passes.
  bool track_policy_grads = false;
  DataSettings data;

  void validate() const;
  LossWeights loss_weights() const;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrajectoryRecord {
  std::size_t epoch = 0;
  AugOpKind op = AugOpKind::Brightness;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;
  double mean_psnr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

// Largest |gradient| over the six policy parameters, split by loss term.
struct PolicyGradSplit {
  double task_max_abs = 0.0;
  double aug_max_abs = 0.0;
};

struct StepResult {
  double task_loss = 0.0;
  double aug_loss = 0.0;
  double total_loss = 0.0;
  double mean_psnr = 0.0;
  std::size_t correct = 0;
  std::array<double, 2 * kNumOps> policy_grad{};  // a0, b0, a1, b1, a2, b2
  std::optional<PolicyGradSplit> grad_split;
};

// Parameters plus optimizer state for one run.
struct TrainState {
  MlpClassifier model;
  RangePolicy policy;
  std::vector<nd::Array> weight_velocity;
  std::vector<nd::Array> bias_velocity;
  std::array<double, 2 * kNumOps> policy_velocity{};
  std::uint64_t step = 0;

  static TrainState fresh(MlpClassifier model, RangePolicy policy);
};

struct Batch {
  nd::Array images;                   // [n, 3, H, W]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> sample_ids;  // dataset indices, used as RNG counters
};

// One joint update: sample a sub-policy per image, augment, classify, backprop
// task + lambda * L_ra once, then SGD-momentum on model and policy and project
// the ranges. `epoch` keys the sampling RNG. `teacher` switches the task loss
// to distillation.
StepResult train_step(TrainState& state, const Batch& batch, double delta, const TrainConfig& cfg,
                      std::uint64_t epoch, const MlpClassifier* teacher = nullptr);

// Builds the same objective as train_step without updating anything.
StepResult evaluate_objective(const TrainState& state, const Batch& batch, double delta, const TrainConfig& cfg,
                              std::uint64_t epoch, const MlpClassifier* teacher = nullptr);

double evaluate(const MlpClassifier& model, const Dataset& dataset);

struct Splits {
  Dataset train;
  Dataset val;  // shifted when the config asks for it
  Dataset val_clean;
};

Splits load_splits(const DataSettings& data);

struct TrainResult {
  MlpClassifier model;
  RangePolicy policy;
  std::vector<TrajectoryRecord> trajectory;
  double val_acc = 0.0;        // on the (possibly shifted) validation split
  double clean_val_acc = 0.0;  // on the unshifted validation split
  double mean_psnr_final = 0.0;
  std::vector<PolicyGradSplit> grad_splits;  // filled when track_policy_grads
  std::vector<double> step_kd_loss;          // task loss per step in distillation runs
};

// Runs the configured number of epochs. Writes checkpoint.bin, policy.json,
// trajectory CSV and summary.json into cfg.out_dir when it is non-empty.
TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const Splits& splits, const MlpClassifier* teacher = nullptr);

// As train(), with the task loss replaced by kd_loss against the teacher
// checkpoint named in cfg.kd. Trajectory goes to trajectory_kd.csv.
TrainResult distill_train(const TrainConfig& cfg);
TrainResult distill_train(const TrainConfig& cfg, const Splits& splits);

struct SweepRow {
  std::string candidate;
  Curriculum curriculum;
  double val_acc = 0.0;
  double mean_psnr_final = 0.0;
};

// One train() per candidate with the same seed; rows sorted by val_acc
// descending, ties to the larger delta_end. Writes sweep.csv and one
// sub-directory per candidate under cfg.out_dir when set.
std::vector<SweepRow> sweep(const TrainConfig& cfg, const std::vector<Curriculum>& candidates);
std::vector<SweepRow> sweep(const TrainConfig& cfg, const std::vector<Curriculum>& candidates, const Splits& splits);

std::string trajectory_csv(const std::vector<TrajectoryRecord>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// L_ra-only fit on a fixed image batch with the classifier out of the loop.
struct PolicyFitConfig {
  double delta = 20.0;
  double beta = 1.0;
  PsnrReduction reduction = PsnrReduction::PerImage;
  double lr = 0.0001;
  double momentum = 0.9;
  std::size_t steps = 2500;
  std::uint64_t seed = 0;
};

struct PolicyFitResult {
  RangePolicy policy;
  std::vector<double> mean_psnr;  // batch mean achieved PSNR per step
};

PolicyFitResult fit_policy(const nd::Array& images, const RangePolicy& init, const PolicyFitConfig& cfg);

}  // namespace rangeaug
