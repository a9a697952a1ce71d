#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace rangeaug {

enum class CurriculumKind { Fixed, Linear, Cosine };

std::string_view curriculum_name(CurriculumKind kind);
std::optional<CurriculumKind> parse_curriculum(std::string_view name);

// Target-PSNR schedule Delta(t) in dB over optimizer steps.
struct Curriculum {
  CurriculumKind kind = CurriculumKind::Cosine;
  double delta_start = 40.0;
  double delta_end = 10.0;
  std::size_t total_steps = 1;

  static Curriculum fixed(double delta, std::size_t total_steps = 1) {
    return {CurriculumKind::Fixed, delta, delta, total_steps};
  }

  void validate() const;
  // Short label such as "cosine_40_10" or "fixed_20".
  std::string label() const;
};

// Throws std::out_of_range when t > total_steps.
double delta_at(const Curriculum& c, std::size_t t);

}  // namespace rangeaug
