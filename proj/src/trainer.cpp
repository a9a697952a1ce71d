#include "rangeaug/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"
#include "rangeaug/augops.hpp"
#include "rangeaug/rng.hpp"

namespace rangeaug {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(model_lr > 0.0)) throw std::invalid_argument("model_lr must be > 0");
  if (!(policy_lr > 0.0)) throw std::invalid_argument("policy_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(p_apply >= 0.0 && p_apply <= 1.0)) throw std::invalid_argument("p_apply must lie in [0, 1]");
  loss_weights().validate();
  curriculum.validate();
  if (data.num_classes < 1) throw std::invalid_argument("data.num_classes must be >= 1");
  if (data.val_shift) data.val_shift->validate();
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w;
  w.lambda = lambda;
  w.beta = beta;
  if (kd) {
    w.kd_alpha = kd->alpha;
    w.kd_temperature = kd->temperature;
  }
  return w;
}

TrainState TrainState::fresh(MlpClassifier model, RangePolicy policy) {
  TrainState s;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    s.weight_velocity.emplace_back(model.weights[l].shape(), 0.0);
    s.bias_velocity.emplace_back(model.biases[l].shape(), 0.0);
  }
  s.model = std::move(model);
  s.policy = project_ranges(policy);
  return s;
}

namespace {

struct StepGraph {
  nd::Graph g;
  PolicyLeaves policy;
  BoundModel model;
  nd::NodeId logits;
  nd::NodeId task;
  nd::NodeId aug;
  nd::NodeId total;
  std::vector<nd::NodeId> psnrs;
};

StepGraph build_step(const TrainState& state, const Batch& batch, double delta, const TrainConfig& cfg,
                     std::uint64_t epoch, const MlpClassifier* teacher) {
  const std::size_t n = batch.labels.size();
  if (n == 0 || batch.images.shape()[0] != n || batch.sample_ids.size() != n) {
    throw std::invalid_argument("train_step: malformed batch");
  }
  StepGraph s;
  nd::Graph& g = s.g;
  s.policy = bind_policy(g, state.policy);
  s.model = bind_model(g, state.model, true);

  const nd::Shape image_shape(batch.images.shape().begin() + 1, batch.images.shape().end());
  const std::size_t len = nd::shape_size(image_shape);
  std::vector<nd::NodeId> refs;
  std::vector<nd::NodeId> augmented;
  refs.reserve(n);
  augmented.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto v = batch.images.values().subspan(j * len, len);
    const nd::NodeId x = g.constant(nd::Array(image_shape, std::vector<double>(v.begin(), v.end())));
    const RngContext rng{cfg.seed, Stream::Sampling, epoch, batch.sample_ids[j], 0};
    const SubPolicySample sample = sample_subpolicy(state.policy, rng, image_shape);
    std::array<nd::NodeId, kNumOps> m{};
    for (std::size_t i = 0; i < kNumOps; ++i) {
      m[i] = sample.mask[i] ? reparameterized_magnitude(g, s.policy.a[i], s.policy.b[i], sample.u[i]) : s.policy.a[i];
    }
    refs.push_back(x);
    augmented.push_back(compose_subpolicy(g, x, m, sample.mask, sample.z));
  }

  const nd::NodeId stacked = g.reshape(g.stack(augmented), nd::Shape{n, len});
  const nd::NodeId input = cfg.joint_mode ? stacked : g.detach(stacked);
  s.logits = forward_classifier(g, state.model, s.model, input);
  if (teacher) {
    const nd::Array teacher_logits = predict_logits(*teacher, g.value(stacked));
    const LossWeights w = cfg.loss_weights();
    s.task = kd_loss(g, s.logits, teacher_logits, w.kd_temperature, w.kd_alpha, batch.labels);
  } else {
    s.task = cross_entropy(g, s.logits, batch.labels);
  }
  s.aug = augmentation_loss(g, refs, augmented, delta, cfg.beta, &s.psnrs, cfg.ra_reduction);
  s.total = total_loss(g, s.task, s.aug, cfg.lambda);
  return s;
}

StepResult summarize(const StepGraph& s, const Batch& batch) {
  StepResult r;
  r.task_loss = s.g.value(s.task).item();
  r.aug_loss = s.g.value(s.aug).item();
  r.total_loss = s.g.value(s.total).item();
  double psnr_sum = 0.0;
  for (auto id : s.psnrs) psnr_sum += s.g.value(id).item();
  r.mean_psnr = psnr_sum / static_cast<double>(s.psnrs.size());
  const auto pred = argmax_rows(s.g.value(s.logits));
  for (std::size_t i = 0; i < pred.size(); ++i) r.correct += pred[i] == batch.labels[i] ? 1 : 0;
  return r;
}

std::string format_policy(const RangePolicy& p) {
  std::ostringstream os;
  for (auto kind : kCanonicalOrder) {
    os << op_name(kind) << "=[" << p.range(kind).a << ", " << p.range(kind).b << "] ";
  }
  return os.str();
}

void sgd_momentum(nd::Array& param, nd::Array& velocity, const nd::Array& grad, double lr, double momentum) {
  auto p = param.values();
  auto v = velocity.values();
  const auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

std::vector<nd::NodeId> policy_ids(const PolicyLeaves& leaves) {
  std::vector<nd::NodeId> ids;
  for (std::size_t i = 0; i < kNumOps; ++i) {
    ids.push_back(leaves.a[i]);
    ids.push_back(leaves.b[i]);
  }
  return ids;
}

double max_abs_policy_grad(const nd::Gradients& grads, const PolicyLeaves& leaves) {
  double m = 0.0;
  for (auto id : policy_ids(leaves)) m = std::max(m, std::abs(grads.at(id).item()));
  return m;
}

}  // namespace

StepResult evaluate_objective(const TrainState& state, const Batch& batch, double delta, const TrainConfig& cfg,
                              std::uint64_t epoch, const MlpClassifier* teacher) {
  const StepGraph s = build_step(state, batch, delta, cfg, epoch, teacher);
  return summarize(s, batch);
}

StepResult train_step(TrainState& state, const Batch& batch, double delta, const TrainConfig& cfg,
                      std::uint64_t epoch, const MlpClassifier* teacher) {
  StepGraph s = build_step(state, batch, delta, cfg, epoch, teacher);
  StepResult r = summarize(s, batch);
  if (!std::isfinite(r.total_loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": delta=" << delta << " task=" << r.task_loss
       << " aug=" << r.aug_loss << " total=" << r.total_loss << " ranges: " << format_policy(state.policy);
    throw TrainingAborted(os.str());
  }

  const nd::Gradients grads = s.g.backward(s.total);

  if (cfg.track_policy_grads) {
    const auto ids = policy_ids(s.policy);
    PolicyGradSplit split;
    split.task_max_abs = max_abs_policy_grad(s.g.backward(s.task, ids), s.policy);
    split.aug_max_abs = max_abs_policy_grad(s.g.backward(s.aug, ids), s.policy);
    r.grad_split = split;
  }

  for (std::size_t l = 0; l < state.model.num_layers(); ++l) {
    sgd_momentum(state.model.weights[l], state.weight_velocity[l], grads.at(s.model.weights[l]), cfg.model_lr,
                 cfg.momentum);
    sgd_momentum(state.model.biases[l], state.bias_velocity[l], grads.at(s.model.biases[l]), cfg.model_lr,
                 cfg.momentum);
  }
  for (std::size_t i = 0; i < kNumOps; ++i) {
    const double ga = grads.at(s.policy.a[i]).item();
    const double gb = grads.at(s.policy.b[i]).item();
    r.policy_grad[2 * i] = ga;
    r.policy_grad[2 * i + 1] = gb;
    double& va = state.policy_velocity[2 * i];
    double& vb = state.policy_velocity[2 * i + 1];
    va = cfg.momentum * va + ga;
    vb = cfg.momentum * vb + gb;
    state.policy.ranges[i].a -= cfg.policy_lr * va;
    state.policy.ranges[i].b -= cfg.policy_lr * vb;
  }
  state.policy = project_ranges(state.policy);
  ++state.step;
  state.model.step = state.step;
  return r;
}

double evaluate(const MlpClassifier& model, const Dataset& dataset) {
  const std::size_t n = dataset.size();
  if (n == 0) return 0.0;
  constexpr std::size_t kChunk = 250;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = argmax_rows(predict_logits(model, dataset.gather(idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == dataset.labels[idx[i]] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

Splits load_splits(const DataSettings& data) {
  Splits s;
  s.train = data.train_path.empty()
                ? generate_synthetic(data.n_train, data.num_classes, data.seed, data.image_size, "train")
                : load_tensorfile(data.train_path);
  s.val_clean = data.val_path.empty()
                    ? generate_synthetic(data.n_val, data.num_classes, splitmix64(data.seed ^ 0x5eedULL),
                                         data.image_size, "val")
                    : load_tensorfile(data.val_path);
  s.val = data.val_shift ? apply_shift(s.val_clean, *data.val_shift, data.seed) : s.val_clean;
  if (s.train.images.rank() != 4 || s.val.images.rank() != 4 || s.train.image_shape() != s.val.image_shape()) {
    throw std::invalid_argument("train and validation images must share a [3, H, W] shape");
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV / artifacts

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const RngContext rng{seed, Stream::Data, epoch, 0, 0};
  for (std::size_t i = n; i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.uniform(i) * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  return order;
}

}  // namespace

std::string trajectory_csv(const std::vector<TrajectoryRecord>& rows) {
  std::string out = "epoch,op,a,b,delta,mean_psnr,train_loss,train_acc,val_acc\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::string(op_name(r.op)) + "," + fmt9(r.a) + "," + fmt9(r.b) + "," +
           fmt9(r.delta) + "," + fmt9(r.mean_psnr) + "," + fmt9(r.train_loss) + "," + fmt9(r.train_acc) + "," +
           fmt9(r.val_acc) + "\n";
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "candidate,delta_start,delta_end,kind,val_acc,mean_psnr_final\n";
  for (const auto& r : rows) {
    out += r.candidate + "," + fmt9(r.curriculum.delta_start) + "," + fmt9(r.curriculum.delta_end) + "," +
           std::string(curriculum_name(r.curriculum.kind)) + "," + fmt9(r.val_acc) + "," + fmt9(r.mean_psnr_final) +
           "\n";
  }
  return out;
}

namespace {

// Every step allocates and frees multi-megabyte arrays; glibc's default
// thresholds hand those straight back to the kernel and fault them in again.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

TrainResult run_training(const TrainConfig& cfg, const Splits& splits, const MlpClassifier* teacher,
                         const std::string& trajectory_name) {
  cfg.validate();
  keep_freed_memory();
  const Dataset& train_set = splits.train;
  if (train_set.size() == 0) throw std::invalid_argument("empty training set");

  std::vector<std::size_t> dims{train_set.image_numel()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(train_set.num_classes);
  if (teacher && (teacher->input_dim() != dims.front() || teacher->num_classes() != dims.back())) {
    throw std::invalid_argument("teacher checkpoint dims do not match the student task");
  }

  TrainState state = TrainState::fresh(init_params(dims, cfg.seed), RangePolicy::initial(cfg.p_apply));

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  Curriculum curriculum = cfg.curriculum;
  curriculum.total_steps = std::max<std::size_t>(1, total_steps > 0 ? total_steps - 1 : 1);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double loss_sum = 0.0;
    double psnr_sum = 0.0;
    std::size_t correct = 0;
    double delta = curriculum.delta_start;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t start = b * cfg.batch_size;
      const std::size_t end = std::min(n, start + cfg.batch_size);
      Batch batch;
      batch.sample_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
      batch.images = train_set.gather(batch.sample_ids);
      for (auto id : batch.sample_ids) batch.labels.push_back(train_set.labels[id]);

      delta = delta_at(curriculum, std::min<std::size_t>(state.step, curriculum.total_steps));
      const StepResult r = train_step(state, batch, delta, cfg, epoch, teacher);
      const double count = static_cast<double>(end - start);
      loss_sum += r.total_loss * count;
      psnr_sum += r.mean_psnr * count;
      correct += r.correct;
      if (r.grad_split) result.grad_splits.push_back(*r.grad_split);
      if (teacher) result.step_kd_loss.push_back(r.task_loss);
    }
    const double val_acc = evaluate(state.model, splits.val);
    for (auto kind : kCanonicalOrder) {
      TrajectoryRecord rec;
      rec.epoch = epoch;
      rec.op = kind;
      rec.a = state.policy.range(kind).a;
      rec.b = state.policy.range(kind).b;
      rec.delta = delta;
      rec.mean_psnr = psnr_sum / static_cast<double>(n);
      rec.train_loss = loss_sum / static_cast<double>(n);
      rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
      rec.val_acc = val_acc;
      result.trajectory.push_back(rec);
    }
    result.mean_psnr_final = psnr_sum / static_cast<double>(n);
  }

  result.model = state.model;
  result.policy = state.policy;
  result.val_acc = evaluate(state.model, splits.val);
  result.clean_val_acc = evaluate(state.model, splits.val_clean);

  if (!cfg.out_dir.empty()) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    save_checkpoint((dir / "checkpoint.bin").string(), result.model);
    save_policy((dir / "policy.json").string(), result.policy);
    write_text(dir / trajectory_name, trajectory_csv(result.trajectory));
    nlohmann::ordered_json summary;
    summary["epochs"] = cfg.epochs;
    summary["steps"] = state.step;
    summary["seed"] = cfg.seed;
    summary["curriculum"] = curriculum.label();
    summary["val_acc"] = result.val_acc;
    summary["clean_val_acc"] = result.clean_val_acc;
    summary["mean_psnr_final"] = result.mean_psnr_final;
    summary["parameter_count"] = result.model.parameter_count();
    write_text(dir / "summary.json", summary.dump(2) + "\n");
  }
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) { return train(cfg, load_splits(cfg.data)); }

TrainResult train(const TrainConfig& cfg, const Splits& splits, const MlpClassifier* teacher) {
  return run_training(cfg, splits, teacher, teacher ? "trajectory_kd.csv" : "trajectory.csv");
}

TrainResult distill_train(const TrainConfig& cfg) { return distill_train(cfg, load_splits(cfg.data)); }

TrainResult distill_train(const TrainConfig& cfg, const Splits& splits) {
  if (!cfg.kd) throw std::invalid_argument("distillation needs a kd section with a teacher checkpoint");
  if (cfg.kd->teacher_checkpoint.empty()) throw std::invalid_argument("kd.teacher_checkpoint is empty");
  if (!std::filesystem::exists(cfg.kd->teacher_checkpoint)) {
    throw std::invalid_argument("teacher checkpoint not found: " + cfg.kd->teacher_checkpoint);
  }
  const MlpClassifier teacher = load_checkpoint(cfg.kd->teacher_checkpoint);
  return run_training(cfg, splits, &teacher, "trajectory_kd.csv");
}

std::vector<SweepRow> sweep(const TrainConfig& cfg, const std::vector<Curriculum>& candidates) {
  return sweep(cfg, candidates, load_splits(cfg.data));
}

std::vector<SweepRow> sweep(const TrainConfig& cfg, const std::vector<Curriculum>& candidates, const Splits& splits) {
  if (candidates.empty()) throw std::invalid_argument("sweep needs at least one candidate");
  std::vector<SweepRow> rows;
  for (const auto& c : candidates) {
    TrainConfig run = cfg;
    run.curriculum = c;
    if (!cfg.out_dir.empty()) run.out_dir = (std::filesystem::path(cfg.out_dir) / c.label()).string();
    const TrainResult r = train(run, splits);
    rows.push_back({c.label(), c, r.val_acc, r.mean_psnr_final});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& x, const SweepRow& y) {
    if (x.val_acc != y.val_acc) return x.val_acc > y.val_acc;
    return x.curriculum.delta_end > y.curriculum.delta_end;
  });
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text(std::filesystem::path(cfg.out_dir) / "sweep.csv", sweep_csv(rows));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Policy-only fit

PolicyFitResult fit_policy(const nd::Array& images, const RangePolicy& init, const PolicyFitConfig& cfg) {
  if (images.rank() != 4) throw nd::ShapeError("fit_policy: expected [n, 3, H, W] images");
  keep_freed_memory();
  const std::size_t n = images.shape()[0];
  const nd::Shape image_shape(images.shape().begin() + 1, images.shape().end());
  const std::size_t len = nd::shape_size(image_shape);

  std::vector<nd::Array> refs;
  for (std::size_t j = 0; j < n; ++j) {
    const auto v = images.values().subspan(j * len, len);
    refs.emplace_back(image_shape, std::vector<double>(v.begin(), v.end()));
  }

  PolicyFitResult result;
  result.policy = project_ranges(init);
  std::array<double, 2 * kNumOps> velocity{};
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    nd::Graph g;
    const PolicyLeaves leaves = bind_policy(g, result.policy);
    std::vector<nd::NodeId> ref_ids;
    std::vector<nd::NodeId> aug_ids;
    for (std::size_t j = 0; j < n; ++j) {
      const nd::NodeId x = g.constant(refs[j]);
      const RngContext rng{cfg.seed, Stream::Sampling, step, j, 0};
      const SubPolicySample sample = sample_subpolicy(result.policy, rng, image_shape);
      std::array<nd::NodeId, kNumOps> m{};
      for (std::size_t i = 0; i < kNumOps; ++i) {
        m[i] = sample.mask[i] ? reparameterized_magnitude(g, leaves.a[i], leaves.b[i], sample.u[i]) : leaves.a[i];
      }
      ref_ids.push_back(x);
      aug_ids.push_back(compose_subpolicy(g, x, m, sample.mask, sample.z));
    }
    std::vector<nd::NodeId> psnrs;
    const nd::NodeId loss = augmentation_loss(g, ref_ids, aug_ids, cfg.delta, cfg.beta, &psnrs, cfg.reduction);
    double psnr_sum = 0.0;
    for (auto id : psnrs) psnr_sum += g.value(id).item();
    result.mean_psnr.push_back(psnr_sum / static_cast<double>(n));

    const nd::Gradients grads = g.backward(loss, policy_ids(leaves));
    for (std::size_t i = 0; i < kNumOps; ++i) {
      double& va = velocity[2 * i];
      double& vb = velocity[2 * i + 1];
      va = cfg.momentum * va + grads.at(leaves.a[i]).item();
      vb = cfg.momentum * vb + grads.at(leaves.b[i]).item();
      result.policy.ranges[i].a -= cfg.lr * va;
      result.policy.ranges[i].b -= cfg.lr * vb;
    }
    result.policy = project_ranges(result.policy);
  }
  return result;
}

}  // namespace rangeaug
