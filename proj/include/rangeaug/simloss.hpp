#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "rangeaug/ndgrad.hpp"

namespace rangeaug {

struct LossWeights {
  double lambda = 0.0015;
  double beta = 1.0;  // smooth-L1 transition, dB
  double kd_alpha = 0.5;
  double kd_temperature = 4.0;

  // Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

inline constexpr double kPsnrEpsilon = 1e-10;

// 10 log10(1 / (MSE(x, y) + eps)) with MAX = 1. Caps at 100 dB for y == x.
nd::NodeId psnr(nd::Graph& g, nd::NodeId x, nd::NodeId y);
double psnr_value(const nd::Array& x, const nd::Array& y);

// 0.5 d^2 / beta for |d| < beta, |d| - 0.5 beta otherwise.
nd::NodeId smooth_l1(nd::Graph& g, nd::NodeId diff, double beta);
double smooth_l1_value(double diff, double beta);

// PerImage: mean over images of smooth_l1(psnr_i - delta).
// BatchMean: smooth_l1(mean_i psnr_i - delta), the loss of the expected PSNR.
enum class PsnrReduction { PerImage, BatchMean };

std::string_view reduction_name(PsnrReduction r);
std::optional<PsnrReduction> parse_reduction(std::string_view name);

// References are expected to be constants. The per-image PSNR nodes are
// appended to `psnr_out` when it is non-null.
nd::NodeId augmentation_loss(nd::Graph& g, std::span<const nd::NodeId> references,
                             std::span<const nd::NodeId> augmented, double delta, double beta,
                             std::vector<nd::NodeId>* psnr_out = nullptr,
                             PsnrReduction reduction = PsnrReduction::PerImage);

// Batch-mean cross-entropy for logits [n, K].
nd::NodeId cross_entropy(nd::Graph& g, nd::NodeId logits, std::span<const std::size_t> labels);

// Distillation loss: alpha T^2 KL(softmax(t / T) || softmax(s / T)) plus
// (1 - alpha) times cross-entropy on the hard labels. Teacher logits are plain
// values and receive no gradient.
nd::NodeId kd_loss(nd::Graph& g, nd::NodeId student_logits, const nd::Array& teacher_logits, double temperature,
                   double alpha, std::span<const std::size_t> labels);

// task + lambda * aug
nd::NodeId total_loss(nd::Graph& g, nd::NodeId task, nd::NodeId aug, double lambda);

nd::Array softmax_rows(const nd::Array& logits, double temperature = 1.0);

}  // namespace rangeaug
