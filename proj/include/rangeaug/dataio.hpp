#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeaug/ndgrad.hpp"

namespace rangeaug {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// images: [n, 3, H, W] in [0, 1]; labels in [0, num_classes).
struct Dataset {
  nd::Array images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return images.size() / std::max<std::size_t>(1, labels.size()); }
  nd::Shape image_shape() const;
  nd::Array image(std::size_t i) const;

  // Rows `indices` as a new [k, 3, H, W] array.
  nd::Array gather(const std::vector<std::size_t>& indices) const;
};

// Photometric shift lists; each image gets one (brightness, contrast, noise)
// triple drawn uniformly from them.
struct ShiftSpec {
  std::vector<double> brightness_factors{1.0};
  std::vector<double> contrast_factors{1.0};
  std::vector<double> noise_stds{0.0};

  void validate() const;
};

enum class Shape2D : std::size_t { Square = 0, Circle = 1, Cross = 2, Triangle = 3 };

// Round-robin labels; shape, placement and colours from the counter RNG.
Dataset generate_synthetic(std::size_t n, std::size_t num_classes, std::uint64_t seed, std::size_t image_size = 32,
                           const std::string& split = "train");

Dataset apply_shift(const Dataset& dataset, const ShiftSpec& spec, std::uint64_t seed);

// Binary P6 PPM, maxval 255, as a [3, H, W] array.
nd::Array load_ppm(const std::string& path);
void save_ppm(const std::string& path, const nd::Array& image);
nd::Array decode_ppm(const std::string& bytes);
std::string encode_ppm(const nd::Array& image);

// RATF: "RATF", version byte (1), axis-count byte, axis lengths (u64 LE),
// float64 LE payload, then label count (u64 LE), class count (u64 LE) and one
// u64 LE per label.
void save_tensorfile(const std::string& path, const Dataset& dataset);
Dataset load_tensorfile(const std::string& path);
std::string encode_tensorfile(const Dataset& dataset);
Dataset decode_tensorfile(const std::string& bytes);

// Dispatches on extension: .ratf datasets, .ppm single images (label 0).
Dataset load_dataset(const std::string& path);

}  // namespace rangeaug
