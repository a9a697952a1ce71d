#include "rangeaug/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rangeaug {

std::string_view curriculum_name(CurriculumKind kind) {
  switch (kind) {
    case CurriculumKind::Fixed: return "fixed";
    case CurriculumKind::Linear: return "linear";
    case CurriculumKind::Cosine: return "cosine";
  }
  return "unknown";
}

std::optional<CurriculumKind> parse_curriculum(std::string_view name) {
  for (auto k : {CurriculumKind::Fixed, CurriculumKind::Linear, CurriculumKind::Cosine}) {
    if (curriculum_name(k) == name) return k;
  }
  return std::nullopt;
}

void Curriculum::validate() const {
  if (total_steps < 1) throw std::invalid_argument("curriculum total_steps must be >= 1");
  if (!std::isfinite(delta_start) || !std::isfinite(delta_end)) {
    throw std::invalid_argument("curriculum deltas must be finite");
  }
  if (kind == CurriculumKind::Fixed && delta_start != delta_end) {
    throw std::invalid_argument("fixed curriculum needs delta_start == delta_end");
  }
}

std::string Curriculum::label() const {
  std::ostringstream os;
  os << curriculum_name(kind);
  if (kind != CurriculumKind::Fixed) os << '_' << delta_start;
  os << '_' << delta_end;
  return os.str();
}

double delta_at(const Curriculum& c, std::size_t t) {
  if (t > c.total_steps) {
    throw std::out_of_range("delta_at: step " + std::to_string(t) + " beyond total_steps " +
                            std::to_string(c.total_steps));
  }
  const double frac = static_cast<double>(t) / static_cast<double>(c.total_steps);
  switch (c.kind) {
    case CurriculumKind::Fixed:
      return c.delta_end;
    case CurriculumKind::Linear:
      if (t == c.total_steps) return c.delta_end;
      return c.delta_start + (c.delta_end - c.delta_start) * frac;
    case CurriculumKind::Cosine:
      return c.delta_end + 0.5 * (c.delta_start - c.delta_end) * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return c.delta_end;
}

}  // namespace rangeaug
