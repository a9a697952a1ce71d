#include "rangeaug/refmodel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "rangeaug/rng.hpp"

namespace rangeaug {

std::size_t MlpClassifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

MlpClassifier init_params(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw std::invalid_argument("MLP needs at least input and output dims");
  for (auto d : layer_dims) {
    if (d == 0) throw std::invalid_argument("MLP layer dims must be positive");
  }
  MlpClassifier m;
  m.layer_dims = layer_dims;
  m.seed = seed;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l];
    const std::size_t fan_out = layer_dims[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    nd::Array w(nd::Shape{fan_in, fan_out});
    const RngContext rng{seed, Stream::Init, 0, l, 0};
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (2.0 * rng.uniform(i) - 1.0) * s;
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(nd::Shape{fan_out}, 0.0);
  }
  return m;
}

std::vector<nd::NodeId> BoundModel::all() const {
  std::vector<nd::NodeId> ids;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ids.push_back(weights[l]);
    ids.push_back(biases[l]);
  }
  return ids;
}

BoundModel bind_model(nd::Graph& g, const MlpClassifier& model, bool trainable) {
  BoundModel b;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    b.weights.push_back(trainable ? g.leaf(model.weights[l]) : g.constant(model.weights[l]));
    b.biases.push_back(trainable ? g.leaf(model.biases[l]) : g.constant(model.biases[l]));
  }
  return b;
}

nd::NodeId forward_classifier(nd::Graph& g, const MlpClassifier& model, const BoundModel& bound, nd::NodeId images) {
  const nd::Array& x = g.value(images);
  if (x.rank() != 2 || x.shape()[1] != model.input_dim()) {
    throw nd::ShapeError("forward_classifier: expected [n, " + std::to_string(model.input_dim()) + "] input, got " +
                         nd::shape_str(x.shape()));
  }
  // Pixels live in [0, 1]; centring them keeps first-layer activations small.
  nd::NodeId h = g.add_scalar(images, -0.5);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    h = g.add_row_vector(g.matmul(h, bound.weights[l]), bound.biases[l]);
    if (l + 1 < model.num_layers()) h = g.relu(h);
  }
  return h;
}

nd::Array predict_logits(const MlpClassifier& model, const nd::Array& images) {
  const std::size_t n = images.shape()[0];
  if (images.size() != n * model.input_dim()) {
    throw nd::ShapeError("predict_logits: images " + nd::shape_str(images.shape()) + " do not flatten to width " +
                         std::to_string(model.input_dim()));
  }
  nd::Graph g;
  const BoundModel bound = bind_model(g, model, false);
  const nd::NodeId x = g.constant(images.reshaped(nd::Shape{n, model.input_dim()}));
  return g.value(forward_classifier(g, model, bound, x));
}

std::vector<std::size_t> argmax_rows(const nd::Array& logits) {
  const std::size_t n = logits.shape()[0];
  const std::size_t k = logits.size() / n;
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + out[i]]) out[i] = j;
    }
  }
  return out;
}

namespace {

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

bool read_f64(std::istream& in, double& v) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) return false;
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  v = std::bit_cast<double>(bits);
  return true;
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpClassifier& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  nlohmann::ordered_json header;
  header["format"] = "rangeaug-mlp";
  header["version"] = 1;
  header["layer_dims"] = model.layer_dims;
  header["seed"] = model.seed;
  header["step"] = model.step;
  out << header.dump() << '\n';
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    for (double v : model.weights[l].values()) write_f64(out, v);
    for (double v : model.biases[l].values()) write_f64(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

MlpClassifier load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("checkpoint " + path + ": missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw std::invalid_argument("checkpoint " + path + ": header is not JSON");
  }
  if (header.value("format", std::string{}) != "rangeaug-mlp" || header.value("version", 0) != 1 ||
      !header.contains("layer_dims") || !header["layer_dims"].is_array()) {
    throw std::invalid_argument("checkpoint " + path + ": unsupported header");
  }
  const auto dims = header["layer_dims"].get<std::vector<std::size_t>>();
  MlpClassifier m = init_params(dims, header.value("seed", std::uint64_t{0}));
  m.step = header.value("step", std::uint64_t{0});
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (double& v : m.weights[l].values()) {
      if (!read_f64(in, v)) throw std::invalid_argument("checkpoint " + path + ": truncated payload");
    }
    for (double& v : m.biases[l].values()) {
      if (!read_f64(in, v)) throw std::invalid_argument("checkpoint " + path + ": truncated payload");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::invalid_argument("checkpoint " + path + ": trailing bytes after payload");
  }
  return m;
}

}  // namespace rangeaug
