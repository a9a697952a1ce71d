#include "rangeaug/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rangeaug/augops.hpp"
#include "rangeaug/policy.hpp"
#include "rangeaug/rng.hpp"

namespace rangeaug {

nd::Shape Dataset::image_shape() const {
  const auto& s = images.shape();
  return nd::Shape(s.begin() + 1, s.end());
}

nd::Array Dataset::image(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("image index " + std::to_string(i) + " >= dataset size " + std::to_string(size()));
  const std::size_t len = image_numel();
  const auto v = images.values().subspan(i * len, len);
  return nd::Array(image_shape(), std::vector<double>(v.begin(), v.end()));
}

nd::Array Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t len = image_numel();
  nd::Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<double> data;
  data.reserve(indices.size() * len);
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("image index " + std::to_string(i) + " >= dataset size " + std::to_string(size()));
    const auto v = images.values().subspan(i * len, len);
    data.insert(data.end(), v.begin(), v.end());
  }
  return nd::Array(std::move(shape), std::move(data));
}

void ShiftSpec::validate() const {
  auto check = [](const std::vector<double>& values, AugOpKind kind, const char* what) {
    if (values.empty()) throw std::invalid_argument(std::string("shift ") + what + " list is empty");
    const OpBounds b = op_bounds(kind);
    for (double v : values) {
      if (!(v >= b.lo && v <= b.hi)) {
        throw std::invalid_argument(std::string("shift ") + what + " value " + std::to_string(v) +
                                    " outside op bounds");
      }
    }
  };
  check(brightness_factors, AugOpKind::Brightness, "brightness");
  check(contrast_factors, AugOpKind::Contrast, "contrast");
  check(noise_stds, AugOpKind::Noise, "noise");
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

bool inside(Shape2D shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape2D::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case Shape2D::Circle: return dx * dx + dy * dy <= r * r;
    case Shape2D::Cross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case Shape2D::Triangle: return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
  }
  return false;
}

}  // namespace

Dataset generate_synthetic(std::size_t n, std::size_t num_classes, std::uint64_t seed, std::size_t image_size,
                           const std::string& split) {
  if (num_classes < 1 || num_classes > 4) throw std::invalid_argument("synthetic data supports 1 to 4 classes");
  if (n < num_classes) throw std::invalid_argument("synthetic data needs n >= number of classes");
  if (image_size < 8) throw std::invalid_argument("synthetic images must be at least 8 pixels wide");

  const std::size_t plane = image_size * image_size;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.images = nd::Array(nd::Shape{n, 3, image_size, image_size});
  ds.labels.resize(n);
  const double size = static_cast<double>(image_size);

  for (std::size_t i = 0; i < n; ++i) {
    const RngContext rng{seed, Stream::Data, 0, i, 0};
    const std::size_t label = i % num_classes;
    ds.labels[i] = label;
    std::array<double, 3> bg{};
    std::array<double, 3> fg{};
    for (std::size_t c = 0; c < 3; ++c) {
      bg[c] = rng.uniform(c);
      // Offset in [0.3, 0.7] modulo 1 keeps the shape visible in every channel.
      fg[c] = std::fmod(bg[c] + 0.3 + 0.4 * rng.uniform(3 + c), 1.0);
    }
    const double radius = size * (0.2 + 0.15 * rng.uniform(6));
    const double cx = radius + (size - 2.0 * radius) * rng.uniform(7);
    const double cy = radius + (size - 2.0 * radius) * rng.uniform(8);
    const auto shape = static_cast<Shape2D>(label);

    double* img = ds.images.values().data() + i * 3 * plane;
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const bool in = inside(shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, radius);
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * image_size + x] = in ? fg[c] : bg[c];
      }
    }
  }
  return ds;
}

Dataset apply_shift(const Dataset& dataset, const ShiftSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset out = dataset;
  out.split = dataset.split + "_shifted";
  const nd::Shape shape = dataset.image_shape();
  const std::size_t len = dataset.image_numel();
  auto pick = [](const std::vector<double>& values, double u) {
    const auto idx = std::min(values.size() - 1, static_cast<std::size_t>(u * static_cast<double>(values.size())));
    return values[idx];
  };
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const RngContext rng{seed, Stream::Data, 1, i, 0};
    RangePolicy fixed = RangePolicy::identity();
    fixed.range(AugOpKind::Brightness).a = fixed.range(AugOpKind::Brightness).b = pick(spec.brightness_factors, rng.uniform(0));
    fixed.range(AugOpKind::Contrast).a = fixed.range(AugOpKind::Contrast).b = pick(spec.contrast_factors, rng.uniform(1));
    fixed.range(AugOpKind::Noise).a = fixed.range(AugOpKind::Noise).b = pick(spec.noise_stds, rng.uniform(2));

    nd::Array z(shape);
    RngContext noise{seed, Stream::Noise, 1, i, op_index(AugOpKind::Noise)};
    noise.fill_normal(z.values());

    nd::Graph g;
    const nd::NodeId x = g.constant(dataset.image(i));
    std::array<nd::NodeId, kNumOps> m{};
    for (auto kind : kCanonicalOrder) m[op_index(kind)] = g.constant(nd::Array::scalar(fixed.range(kind).a));
    const nd::NodeId y = compose_subpolicy(g, x, m, {true, true, true}, z);
    const auto v = g.value(y).values();
    std::copy(v.begin(), v.end(), out.images.values().begin() + static_cast<std::ptrdiff_t>(i * len));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPM

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
  if (start == pos) throw FormatError("PPM: truncated header");
  return bytes.substr(start, pos - start);
}

std::size_t ppm_number(const std::string& token, const char* what) {
  if (token.empty() || token.size() > 9 || !std::all_of(token.begin(), token.end(), ::isdigit)) {
    throw FormatError(std::string("PPM: bad ") + what + " \"" + token + "\"");
  }
  return static_cast<std::size_t>(std::stoul(token));
}

}  // namespace

nd::Array decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = ppm_token(bytes, pos);
  if (magic != "P6") throw FormatError("PPM: expected magic P6, got \"" + magic + "\"");
  const std::size_t width = ppm_number(ppm_token(bytes, pos), "width");
  const std::size_t height = ppm_number(ppm_token(bytes, pos), "height");
  const std::size_t maxval = ppm_number(ppm_token(bytes, pos), "maxval");
  if (width == 0 || height == 0) throw FormatError("PPM: zero-sized image");
  if (maxval != 255) throw FormatError("PPM: only maxval 255 is supported, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PPM: missing whitespace after header");
  }
  ++pos;
  const std::size_t plane = width * height;
  if (bytes.size() - pos < 3 * plane) {
    throw FormatError("PPM: truncated payload, expected " + std::to_string(3 * plane) + " bytes, found " +
                      std::to_string(bytes.size() - pos));
  }
  nd::Array img(nd::Shape{3, height, width});
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * plane + p] = static_cast<unsigned char>(bytes[pos + 3 * p + c]) / 255.0;
    }
  }
  return img;
}

std::string encode_ppm(const nd::Array& image) {
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw nd::ShapeError("PPM: expected a [3, H, W] image, got " + nd::shape_str(image.shape()));
  }
  const std::size_t height = image.shape()[1];
  const std::size_t width = image.shape()[2];
  const std::size_t plane = width * height;
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      out[header + 3 * p + c] = static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5)));
    }
  }
  return out;
}

nd::Array load_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

void save_ppm(const std::string& path, const nd::Array& image) { write_file(path, encode_ppm(image)); }

// ---------------------------------------------------------------------------
// RATF tensor files

namespace {

constexpr char kMagic[4] = {'R', 'A', 'T', 'F'};
constexpr unsigned char kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(static_cast<unsigned char>(v >> (8 * i))));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("RATF: length mismatch reading ") + what + " (need " + std::to_string(n) +
                        " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }
  unsigned char byte(const char* what) {
    need(1, what);
    return static_cast<unsigned char>(bytes_[pos_++]);
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensorfile(const Dataset& dataset) {
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  const auto& shape = dataset.images.shape();
  out.push_back(static_cast<char>(shape.size()));
  for (auto d : shape) put_u64(out, d);
  for (double v : dataset.images.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  put_u64(out, dataset.labels.size());
  put_u64(out, dataset.num_classes);
  for (auto l : dataset.labels) put_u64(out, l);
  return out;
}

Dataset decode_tensorfile(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("RATF: bad magic");
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.byte("magic");
  const unsigned char version = r.byte("version");
  if (version != kVersion) throw FormatError("RATF: unsupported version " + std::to_string(version));
  const unsigned char axes = r.byte("axis count");
  if (axes < 1) throw FormatError("RATF: zero axes");
  nd::Shape shape;
  std::size_t count = 1;
  for (unsigned char a = 0; a < axes; ++a) {
    const std::uint64_t d = r.u64("axis length");
    if (d == 0) throw FormatError("RATF: zero-length axis");
    if (count > (std::uint64_t{1} << 40) / d) throw FormatError("RATF: shape too large");
    shape.push_back(d);
    count *= d;
  }
  r.need(count * 8, "payload");
  std::vector<double> data(count);
  for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
  const std::uint64_t n_labels = r.u64("label count");
  const std::uint64_t n_classes = r.u64("class count");
  if (n_labels != shape[0]) {
    throw FormatError("RATF: length mismatch, " + std::to_string(n_labels) + " labels for " +
                      std::to_string(shape[0]) + " images");
  }
  r.need(n_labels * 8, "labels");
  Dataset ds;
  ds.images = nd::Array(std::move(shape), std::move(data));
  ds.num_classes = n_classes;
  ds.labels.resize(n_labels);
  for (auto& l : ds.labels) {
    l = r.u64("labels");
    if (l >= n_classes) throw FormatError("RATF: label " + std::to_string(l) + " out of range");
  }
  if (r.remaining() != 0) throw FormatError("RATF: length mismatch, trailing bytes after labels");
  ds.split = "file";
  return ds;
}

void save_tensorfile(const std::string& path, const Dataset& dataset) { write_file(path, encode_tensorfile(dataset)); }

Dataset load_tensorfile(const std::string& path) { return decode_tensorfile(read_file(path)); }

Dataset load_dataset(const std::string& path) {
  auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".ratf")) return load_tensorfile(path);
  if (ends_with(".ppm")) {
    const nd::Array img = load_ppm(path);
    Dataset ds;
    nd::Shape shape{1};
    shape.insert(shape.end(), img.shape().begin(), img.shape().end());
    ds.images = img.reshaped(shape);
    ds.labels = {0};
    ds.num_classes = 1;
    ds.split = "file";
    return ds;
  }
  throw std::invalid_argument("unsupported dataset extension (expected .ratf or .ppm): " + path);
}

}  // namespace rangeaug
