#include "rangeaug/simloss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rangeaug {

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be > 0");
  if (!(kd_alpha >= 0.0 && kd_alpha <= 1.0)) throw std::invalid_argument("kd alpha must lie in [0, 1]");
  if (!(kd_temperature > 0.0) || !std::isfinite(kd_temperature)) {
    throw std::invalid_argument("kd temperature must be > 0");
  }
}

nd::NodeId psnr(nd::Graph& g, nd::NodeId x, nd::NodeId y) {
  if (g.value(x).shape() != g.value(y).shape()) {
    throw nd::ShapeError("psnr: shapes " + nd::shape_str(g.value(x).shape()) + " and " +
                         nd::shape_str(g.value(y).shape()) + " differ");
  }
  const nd::NodeId mse = g.mean(g.square(g.sub(y, x)));
  return g.mul_scalar(g.log10(g.add_scalar(mse, kPsnrEpsilon)), -10.0);
}

double psnr_value(const nd::Array& x, const nd::Array& y) {
  if (x.shape() != y.shape()) throw nd::ShapeError("psnr: shapes differ");
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = y[i] - x[i];
    sq[i] = d * d;
  }
  const double mse = nd::pairwise_sum(sq) / static_cast<double>(sq.size());
  return -10.0 * std::log10(mse + kPsnrEpsilon);
}

nd::NodeId smooth_l1(nd::Graph& g, nd::NodeId diff, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be > 0");
  // With q = min(|d|, beta): 0.5 q^2 / beta + (|d| - q) reproduces both pieces.
  const nd::NodeId mag = g.abs(diff);
  const nd::NodeId q = g.min_const(mag, beta);
  const nd::NodeId quad = g.mul_scalar(g.square(q), 0.5 / beta);
  return g.add(quad, g.sub(mag, q));
}

double smooth_l1_value(double diff, double beta) {
  const double mag = std::abs(diff);
  return mag < beta ? 0.5 * diff * diff / beta : mag - 0.5 * beta;
}

std::string_view reduction_name(PsnrReduction r) {
  return r == PsnrReduction::PerImage ? "per_image" : "batch_mean";
}

std::optional<PsnrReduction> parse_reduction(std::string_view name) {
  if (name == "per_image") return PsnrReduction::PerImage;
  if (name == "batch_mean") return PsnrReduction::BatchMean;
  return std::nullopt;
}

nd::NodeId augmentation_loss(nd::Graph& g, std::span<const nd::NodeId> references,
                             std::span<const nd::NodeId> augmented, double delta, double beta,
                             std::vector<nd::NodeId>* psnr_out, PsnrReduction reduction) {
  if (references.size() != augmented.size() || references.empty()) {
    throw std::invalid_argument("augmentation_loss: need matching, non-empty image lists");
  }
  std::vector<nd::NodeId> psnrs;
  psnrs.reserve(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    psnrs.push_back(psnr(g, references[i], augmented[i]));
    if (psnr_out) psnr_out->push_back(psnrs.back());
  }
  if (reduction == PsnrReduction::BatchMean) {
    return smooth_l1(g, g.add_scalar(g.mean(g.stack(psnrs)), -delta), beta);
  }
  std::vector<nd::NodeId> per_image;
  per_image.reserve(psnrs.size());
  for (auto p : psnrs) per_image.push_back(smooth_l1(g, g.add_scalar(p, -delta), beta));
  return g.mean(g.stack(per_image));
}

nd::NodeId cross_entropy(nd::Graph& g, nd::NodeId logits, std::span<const std::size_t> labels) {
  return g.softmax_cross_entropy(logits, labels);
}

nd::Array softmax_rows(const nd::Array& logits, double temperature) {
  if (logits.rank() != 2) throw nd::ShapeError("softmax_rows: expected [n, K]");
  const std::size_t n = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  nd::Array out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) zmax = std::max(zmax, logits[i * k + j] / temperature);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(logits[i * k + j] / temperature - zmax);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = std::exp(logits[i * k + j] / temperature - zmax) / denom;
  }
  return out;
}

nd::NodeId kd_loss(nd::Graph& g, nd::NodeId student_logits, const nd::Array& teacher_logits, double temperature,
                   double alpha, std::span<const std::size_t> labels) {
  const nd::Array& s = g.value(student_logits);
  if (s.shape() != teacher_logits.shape()) {
    throw nd::ShapeError("kd_loss: student " + nd::shape_str(s.shape()) + " and teacher " +
                         nd::shape_str(teacher_logits.shape()) + " logits differ");
  }
  const nd::Array p_teacher = softmax_rows(teacher_logits, temperature);
  // KL(p_t || p_s) = CE(p_t, p_s) - H(p_t); the entropy term is a constant.
  double entropy = 0.0;
  const std::size_t rows = s.shape()[0];
  for (double p : p_teacher.values()) {
    if (p > 0.0) entropy -= p * std::log(p);
  }
  entropy /= static_cast<double>(rows);

  const nd::NodeId ce = cross_entropy(g, student_logits, labels);
  if (alpha == 0.0) return ce;
  const nd::NodeId soft = g.softmax_cross_entropy(g.mul_scalar(student_logits, 1.0 / temperature), p_teacher);
  const nd::NodeId kl = g.add_scalar(soft, -entropy);
  const nd::NodeId kd = g.mul_scalar(kl, alpha * temperature * temperature);
  return g.add(kd, g.mul_scalar(ce, 1.0 - alpha));
}

nd::NodeId total_loss(nd::Graph& g, nd::NodeId task, nd::NodeId aug, double lambda) {
  if (lambda == 0.0) return g.add_scalar(task, 0.0);
  return g.add(task, g.mul_scalar(aug, lambda));
}

}  // namespace rangeaug
