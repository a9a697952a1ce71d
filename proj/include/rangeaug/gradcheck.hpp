#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rangeaug/ndgrad.hpp"

namespace rangeaug {

struct GradcheckEntry {
  std::string pipeline;
  nd::FdReport report;
};

// Finite-difference checks of every differentiable pipeline in the toolkit at
// random points: the three ops, the composed sub-policy, PSNR, the
// augmentation loss, cross-entropy, distillation, the classifier and the full
// joint objective.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, double h = 1e-3);

// Full objective task + lambda * L_ra on one random image_side x image_side x 3
// image, differentiated with respect to the policy ranges, every classifier
// parameter and the input image. Ranges are drawn inside the op bounds.
nd::FdReport check_total_objective(std::uint64_t seed, std::size_t image_side = 8, double h = 1e-3);

}  // namespace rangeaug
