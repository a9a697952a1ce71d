#include "rangeaug/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "rangeaug/parallel.hpp"

namespace rangeaug::nd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("array shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("array axis of length 0 in shape " + shape_str(shape));
  }
}

}  // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Array Array::from(std::initializer_list<double> values) {
  return Array(Shape{values.size()}, std::vector<double>(values));
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar array of shape " + shape_str(shape_));
  return data_[0];
}

Array Array::reshaped(Shape shape) const {
  Array out(std::move(shape), data_);
  return out;
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 8;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  // Split at a multiple of the block size so the tree shape depends only on n.
  std::size_t half = values.size() / 2;
  half = std::max(kBlock, half - half % kBlock);
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::Square: return "square";
    case OpKind::Log: return "log";
    case OpKind::Log10: return "log10";
    case OpKind::MaxConst: return "max_const";
    case OpKind::MinConst: return "min_const";
    case OpKind::Relu: return "relu";
    case OpKind::Clamp: return "clamp";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRowVector: return "add_row_vector";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Detach: return "detach";
    case OpKind::Stack: return "stack";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

const Array& Gradients::at(NodeId id) const {
  auto it = grads_.find(id.index);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(id.index));
  return it->second;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

[[noreturn]] void mismatch(OpKind op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

// Output shape for scalar-vs-array broadcasting.
Shape broadcast_shape(OpKind op, const Array& x, const Array& y) {
  if (x.shape() == y.shape()) return x.shape();
  if (x.is_scalar()) return y.shape();
  if (y.is_scalar()) return x.shape();
  mismatch(op, x.shape(), y.shape());
}

template <typename F>
Array elementwise(const Shape& out_shape, const Array& x, const Array& y, F f) {
  Array out(out_shape);
  auto o = out.values();
  const auto xs = x.values();
  const auto ys = y.values();
  const bool xb = x.size() == 1 && o.size() != 1;
  const bool yb = y.size() == 1 && o.size() != 1;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xb ? xs[0] : xs[i], yb ? ys[0] : ys[i]);
  return out;
}

template <typename F>
Array map(const Array& x, F f) {
  Array out(x.shape());
  auto o = out.values();
  const auto xs = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xs[i]);
  return out;
}

// C[n,d] = A[n,k] B[k,d]; rows are independent so any row partition gives the
// same bits.
void matmul_kernel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t n,
                   std::size_t k, std::size_t d) {
  parallel_for(
      n,
      [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
          double* crow = c.data() + i * d;
          std::fill(crow, crow + d, 0.0);
          const double* arow = a.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data() + p * d;
            for (std::size_t j = 0; j < d; ++j) crow[j] += av * brow[j];
          }
        }
      },
      4);
}

// dA[n,k] += dC[n,d] B[k,d]^T
void matmul_grad_a(std::span<const double> dc, std::span<const double> b, std::span<double> da, std::size_t n,
                   std::size_t k, std::size_t d) {
  parallel_for(
      n,
      [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
          const double* grow = dc.data() + i * d;
          double* out = da.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b.data() + p * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += grow[j] * brow[j];
            out[p] += s;
          }
        }
      },
      4);
}

// dB[k,d] += A[n,k]^T dC[n,d]; partitioned over rows of dB, batch order fixed.
void matmul_grad_b(std::span<const double> a, std::span<const double> dc, std::span<double> db, std::size_t n,
                   std::size_t k, std::size_t d) {
  parallel_for(
      k,
      [&](std::size_t p0, std::size_t p1) {
        std::vector<double> acc((p1 - p0) * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = a.data() + i * k;
          const double* grow = dc.data() + i * d;
          for (std::size_t p = p0; p < p1; ++p) {
            const double av = arow[p];
            double* out = acc.data() + (p - p0) * d;
            for (std::size_t j = 0; j < d; ++j) out[j] += av * grow[j];
          }
        }
        for (std::size_t p = p0; p < p1; ++p) {
          double* out = db.data() + p * d;
          const double* src = acc.data() + (p - p0) * d;
          for (std::size_t j = 0; j < d; ++j) out[j] += src[j];
        }
      },
      16);
}

// Accumulates g into an input's gradient, reducing when the input was a
// broadcast scalar.
void accumulate(Array& target, std::span<const double> g) {
  auto t = target.values();
  if (t.size() == g.size()) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i];
  } else {
    t[0] += pairwise_sum(g);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph construction

void Graph::check(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("node id " + std::to_string(id.index) + " out of range");
}

const Node& Graph::node(NodeId id) const {
  check(id);
  return nodes_[id.index];
}

const Array& Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.has_grad) throw ContractError("node " + std::to_string(id.index) + " has no gradient");
  return n.grad;
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::leaf(Array value) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  const NodeId id = push(std::move(n));
  leaf_ids_.push_back(id);
  return id;
}

NodeId Graph::constant(Array value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::unary(OpKind op, NodeId x) {
  const NodeId in[] = {x};
  return apply(op, in);
}

NodeId Graph::binary(OpKind op, NodeId x, NodeId y) {
  const NodeId in[] = {x, y};
  return apply(op, in);
}

NodeId Graph::with_const(OpKind op, NodeId x, double c) {
  const NodeId in[] = {x};
  Attrs attrs;
  attrs.c = c;
  return apply(op, in, attrs);
}

NodeId Graph::clamp(NodeId x, double lo, double hi) {
  const NodeId in[] = {x};
  Attrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return apply(OpKind::Clamp, in, attrs);
}

NodeId Graph::stack(std::span<const NodeId> parts) { return apply(OpKind::Stack, parts); }

NodeId Graph::reshape(NodeId x, Shape shape) {
  const NodeId in[] = {x};
  Attrs attrs;
  attrs.shape = std::move(shape);
  return apply(OpKind::Reshape, in, attrs);
}

NodeId Graph::abs(NodeId x) { return add(relu(x), relu(mul_scalar(x, -1.0))); }

NodeId Graph::softmax_cross_entropy(NodeId logits, const Array& targets) {
  const NodeId in[] = {logits};
  Attrs attrs;
  attrs.targets = &targets;
  return apply(OpKind::SoftmaxCrossEntropy, in, attrs);
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels) {
  const Array& z = value(logits);
  if (z.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [n, K], got " + shape_str(z.shape()));
  const std::size_t n = z.shape()[0];
  const std::size_t k = z.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  Array onehot(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                              std::to_string(k) + " classes");
    }
    onehot[i * k + labels[i]] = 1.0;
  }
  return softmax_cross_entropy(logits, onehot);
}

NodeId Graph::apply(OpKind op, std::span<const NodeId> inputs, const Attrs& attrs) {
  for (auto id : inputs) check(id);
  auto arity = [&](std::size_t want) {
    if (inputs.size() != want) {
      throw ContractError(std::string(op_name(op)) + ": expected " + std::to_string(want) + " inputs, got " +
                          std::to_string(inputs.size()));
    }
  };

  Node n;
  n.op = op;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.c = attrs.c;
  n.lo = attrs.lo;
  n.hi = attrs.hi;
  for (auto id : inputs) n.requires_grad = n.requires_grad || nodes_[id.index].requires_grad;

  switch (op) {
    case OpKind::Leaf:
    case OpKind::Constant:
      throw ContractError("use Graph::leaf or Graph::constant to create source nodes");

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      arity(2);
      const Array& x = nodes_[inputs[0].index].value;
      const Array& y = nodes_[inputs[1].index].value;
      const Shape shape = broadcast_shape(op, x, y);
      if (op == OpKind::Add) n.value = elementwise(shape, x, y, [](double a, double b) { return a + b; });
      if (op == OpKind::Sub) n.value = elementwise(shape, x, y, [](double a, double b) { return a - b; });
      if (op == OpKind::Mul) n.value = elementwise(shape, x, y, [](double a, double b) { return a * b; });
      break;
    }

    case OpKind::AddScalar: {
      arity(1);
      const double c = attrs.c;
      n.value = map(nodes_[inputs[0].index].value, [c](double v) { return v + c; });
      break;
    }
    case OpKind::MulScalar: {
      arity(1);
      const double c = attrs.c;
      n.value = map(nodes_[inputs[0].index].value, [c](double v) { return v * c; });
      break;
    }
    case OpKind::Square:
      arity(1);
      n.value = map(nodes_[inputs[0].index].value, [](double v) { return v * v; });
      break;
    case OpKind::Log:
    case OpKind::Log10: {
      arity(1);
      const Array& x = nodes_[inputs[0].index].value;
      for (double v : x.values()) {
        if (!(v > 0.0)) {
          throw std::domain_error(std::string(op_name(op)) + ": argument must be > 0, got " + std::to_string(v));
        }
      }
      n.value = op == OpKind::Log ? map(x, [](double v) { return std::log(v); })
                                  : map(x, [](double v) { return std::log10(v); });
      break;
    }
    case OpKind::MaxConst: {
      arity(1);
      const double c = attrs.c;
      n.value = map(nodes_[inputs[0].index].value, [c](double v) { return v > c ? v : c; });
      break;
    }
    case OpKind::MinConst: {
      arity(1);
      const double c = attrs.c;
      n.value = map(nodes_[inputs[0].index].value, [c](double v) { return v < c ? v : c; });
      break;
    }
    case OpKind::Relu:
      arity(1);
      n.value = map(nodes_[inputs[0].index].value, [](double v) { return v > 0.0 ? v : 0.0; });
      break;
    case OpKind::Clamp: {
      arity(1);
      if (!(attrs.lo <= attrs.hi)) throw ContractError("clamp: lo must not exceed hi");
      const double lo = attrs.lo;
      const double hi = attrs.hi;
      n.value = map(nodes_[inputs[0].index].value, [lo, hi](double v) { return std::clamp(v, lo, hi); });
      break;
    }
    case OpKind::Sum:
      arity(1);
      n.value = Array::scalar(pairwise_sum(nodes_[inputs[0].index].value.values()));
      break;
    case OpKind::Mean: {
      arity(1);
      const Array& x = nodes_[inputs[0].index].value;
      n.value = Array::scalar(pairwise_sum(x.values()) / static_cast<double>(x.size()));
      break;
    }
    case OpKind::MatMul: {
      arity(2);
      const Array& a = nodes_[inputs[0].index].value;
      const Array& b = nodes_[inputs[1].index].value;
      if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) mismatch(op, a.shape(), b.shape());
      const std::size_t rows = a.shape()[0];
      const std::size_t inner = a.shape()[1];
      const std::size_t cols = b.shape()[1];
      n.value = Array(Shape{rows, cols});
      matmul_kernel(a.values(), b.values(), n.value.values(), rows, inner, cols);
      break;
    }
    case OpKind::AddRowVector: {
      arity(2);
      const Array& x = nodes_[inputs[0].index].value;
      const Array& r = nodes_[inputs[1].index].value;
      if (x.rank() != 2 || r.size() != x.shape()[1]) mismatch(op, x.shape(), r.shape());
      n.value = x;
      const std::size_t cols = x.shape()[1];
      auto o = n.value.values();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += r[i % cols];
      break;
    }
    case OpKind::SoftmaxCrossEntropy: {
      arity(1);
      const Array& z = nodes_[inputs[0].index].value;
      if (attrs.targets == nullptr) throw ContractError("softmax_cross_entropy: missing targets");
      const Array& t = *attrs.targets;
      if (z.rank() != 2 || t.shape() != z.shape()) mismatch(op, z.shape(), t.shape());
      const std::size_t rows = z.shape()[0];
      const std::size_t k = z.shape()[1];
      Array probs(z.shape());
      std::vector<double> row_loss(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* zr = z.values().data() + i * k;
        const double* tr = t.values().data() + i * k;
        double* pr = probs.values().data() + i * k;
        const double zmax = *std::max_element(zr, zr + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(zr[j] - zmax);
        const double log_denom = std::log(denom);
        double loss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double log_p = zr[j] - zmax - log_denom;
          pr[j] = std::exp(log_p);
          if (tr[j] != 0.0) loss -= tr[j] * log_p;
        }
        row_loss[i] = loss;
      }
      n.value = Array::scalar(pairwise_sum(row_loss) / static_cast<double>(rows));
      n.aux = std::move(probs);
      n.aux2 = t;
      break;
    }
    case OpKind::Detach:
      arity(1);
      n.value = nodes_[inputs[0].index].value;
      n.requires_grad = false;
      break;
    case OpKind::Stack: {
      if (inputs.empty()) throw ContractError("stack: needs at least one input");
      const Shape& part = nodes_[inputs[0].index].value.shape();
      for (auto id : inputs) {
        if (nodes_[id.index].value.shape() != part) mismatch(op, part, nodes_[id.index].value.shape());
      }
      Shape shape{inputs.size()};
      shape.insert(shape.end(), part.begin(), part.end());
      std::vector<double> data;
      data.reserve(shape_size(shape));
      for (auto id : inputs) {
        const auto v = nodes_[id.index].value.values();
        data.insert(data.end(), v.begin(), v.end());
      }
      n.value = Array(std::move(shape), std::move(data));
      break;
    }
    case OpKind::Reshape: {
      arity(1);
      const Array& x = nodes_[inputs[0].index].value;
      if (attrs.shape.empty() || shape_size(attrs.shape) != x.size()) mismatch(op, x.shape(), attrs.shape);
      n.value = x.reshaped(attrs.shape);
      break;
    }
  }
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse pass

void Graph::propagate(std::uint32_t index, const std::vector<char>& relevant) {
  Node& n = nodes_[index];
  const auto g = n.grad.values();

  auto input_grad = [&](std::size_t slot) -> Array* {
    const std::uint32_t in = n.inputs[slot].index;
    Node& src = nodes_[in];
    if (!src.requires_grad || !relevant[in]) return nullptr;
    if (!src.has_grad) {
      src.grad = Array(src.value.shape(), 0.0);
      src.has_grad = true;
    }
    return &src.grad;
  };
  auto in_value = [&](std::size_t slot) -> const Array& { return nodes_[n.inputs[slot].index].value; };

  switch (n.op) {
    case OpKind::Leaf:
    case OpKind::Constant:
    case OpKind::Detach:
      return;

    case OpKind::Add:
    case OpKind::Sub: {
      if (Array* gx = input_grad(0)) accumulate(*gx, g);
      if (Array* gy = input_grad(1)) {
        if (n.op == OpKind::Add) {
          accumulate(*gy, g);
        } else if (gy->size() == g.size()) {
          auto t = gy->values();
          for (std::size_t i = 0; i < t.size(); ++i) t[i] -= g[i];
        } else {
          (*gy)[0] -= pairwise_sum(g);
        }
      }
      return;
    }
    case OpKind::Mul: {
      const Array& x = in_value(0);
      const Array& y = in_value(1);
      auto add_scaled = [&](Array& target, const Array& other) {
        const bool ob = other.size() == 1 && g.size() != 1;
        auto t = target.values();
        if (t.size() == g.size()) {
          // no temporary when the shapes agree
          if (ob) {
            const double c = other[0];
            for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * c;
          } else {
            const auto o = other.values();
            for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * o[i];
          }
          return;
        }
        std::vector<double> out(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * (ob ? other[0] : other[i]);
        accumulate(target, out);
      };
      if (Array* gx = input_grad(0)) add_scaled(*gx, y);
      if (Array* gy = input_grad(1)) add_scaled(*gy, x);
      return;
    }
    case OpKind::AddScalar:
      if (Array* gx = input_grad(0)) accumulate(*gx, g);
      return;
    case OpKind::MulScalar:
      if (Array* gx = input_grad(0)) {
        auto t = gx->values();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i] * n.c;
      }
      return;
    case OpKind::Square:
      if (Array* gx = input_grad(0)) {
        const auto x = in_value(0).values();
        auto t = gx->values();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += 2.0 * x[i] * g[i];
      }
      return;
    case OpKind::Log:
    case OpKind::Log10:
      if (Array* gx = input_grad(0)) {
        const double scale = n.op == OpKind::Log ? 1.0 : 1.0 / std::numbers::ln10;
        const auto x = in_value(0).values();
        auto t = gx->values();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i] * scale / x[i];
      }
      return;
    case OpKind::MaxConst:
    case OpKind::MinConst:
    case OpKind::Relu:
    case OpKind::Clamp:
      if (Array* gx = input_grad(0)) {
        const auto x = in_value(0).values();
        auto t = gx->values();
        for (std::size_t i = 0; i < t.size(); ++i) {
          bool pass = false;
          switch (n.op) {
            case OpKind::MaxConst: pass = x[i] > n.c; break;
            case OpKind::MinConst: pass = x[i] < n.c; break;
            case OpKind::Relu: pass = x[i] > 0.0; break;
            default: pass = x[i] > n.lo && x[i] < n.hi; break;
          }
          if (pass) t[i] += g[i];
        }
      }
      return;
    case OpKind::Sum:
    case OpKind::Mean:
      if (Array* gx = input_grad(0)) {
        auto t = gx->values();
        const double v = n.op == OpKind::Sum ? g[0] : g[0] / static_cast<double>(t.size());
        for (double& e : t) e += v;
      }
      return;
    case OpKind::MatMul: {
      const Array& a = in_value(0);
      const Array& b = in_value(1);
      const std::size_t rows = a.shape()[0];
      const std::size_t inner = a.shape()[1];
      const std::size_t cols = b.shape()[1];
      if (Array* ga = input_grad(0)) matmul_grad_a(g, b.values(), ga->values(), rows, inner, cols);
      if (Array* gb = input_grad(1)) matmul_grad_b(a.values(), g, gb->values(), rows, inner, cols);
      return;
    }
    case OpKind::AddRowVector: {
      if (Array* gx = input_grad(0)) accumulate(*gx, g);
      if (Array* gr = input_grad(1)) {
        const std::size_t cols = gr->size();
        const std::size_t rows = g.size() / cols;
        auto t = gr->values();
        for (std::size_t j = 0; j < cols; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < rows; ++i) s += g[i * cols + j];
          t[j] += s;
        }
      }
      return;
    }
    case OpKind::SoftmaxCrossEntropy:
      if (Array* gx = input_grad(0)) {
        const std::size_t rows = n.aux.shape()[0];
        const std::size_t k = n.aux.shape()[1];
        const double scale = g[0] / static_cast<double>(rows);
        auto t = gx->values();
        const auto p = n.aux.values();
        const auto tg = n.aux2.values();
        for (std::size_t i = 0; i < rows; ++i) {
          double mass = 0.0;
          for (std::size_t j = 0; j < k; ++j) mass += tg[i * k + j];
          for (std::size_t j = 0; j < k; ++j) t[i * k + j] += scale * (mass * p[i * k + j] - tg[i * k + j]);
        }
      }
      return;
    case OpKind::Stack: {
      std::size_t offset = 0;
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        const std::size_t len = in_value(s).size();
        if (Array* gx = input_grad(s)) {
          auto t = gx->values();
          for (std::size_t i = 0; i < len; ++i) t[i] += g[offset + i];
        }
        offset += len;
      }
      return;
    }
    case OpKind::Reshape:
      if (Array* gx = input_grad(0)) accumulate(*gx, g);
      return;
  }
}

Gradients Graph::backward(NodeId loss, std::span<const NodeId> wrt) {
  check(loss);
  if (nodes_[loss.index].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.index].value.shape()));
  }
  std::vector<NodeId> targets(wrt.begin(), wrt.end());
  if (targets.empty()) targets = leaf_ids_;
  for (auto id : targets) {
    check(id);
    if (nodes_[id.index].op != OpKind::Leaf) throw ContractError("backward: gradients requested for a non-leaf node");
  }

  // relevant[i]: node i lies on some path from a requested leaf.
  std::vector<char> relevant(loss.index + 1, 0);
  for (auto id : targets) {
    if (id.index <= loss.index) relevant[id.index] = 1;
  }
  for (std::uint32_t i = 0; i <= loss.index; ++i) {
    if (relevant[i] || !nodes_[i].requires_grad) continue;
    for (auto in : nodes_[i].inputs) {
      if (relevant[in.index]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Array();
  }

  Node& root = nodes_[loss.index];
  root.grad = Array(root.value.shape(), 1.0);
  root.has_grad = true;
  if (relevant[loss.index] && root.requires_grad) {
    for (std::uint32_t i = loss.index + 1; i-- > 0;) {
      if (relevant[i] && nodes_[i].has_grad) propagate(i, relevant);
    }
  }

  Gradients out;
  for (auto id : targets) {
    const Node& n = nodes_[id.index];
    out.set(id, n.has_grad ? n.grad : Array(n.value.shape(), 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

std::vector<std::uint8_t> Graph::branch_pattern() const {
  std::vector<std::uint8_t> pattern;
  for (const Node& n : nodes_) {
    if (n.op != OpKind::Relu && n.op != OpKind::Clamp && n.op != OpKind::MaxConst && n.op != OpKind::MinConst) {
      continue;
    }
    const auto x = nodes_[n.inputs[0].index].value.values();
    for (double v : x) {
      switch (n.op) {
        case OpKind::Relu: pattern.push_back(v > 0.0); break;
        case OpKind::MaxConst: pattern.push_back(v > n.c); break;
        case OpKind::MinConst: pattern.push_back(v < n.c); break;
        default: pattern.push_back(v <= n.lo ? 0 : (v >= n.hi ? 2 : 1)); break;
      }
    }
  }
  return pattern;
}

FdReport finite_difference_check(const GraphBuilder& build, std::span<const Array> point, double h, double floor,
                                 bool skip_branch_changes) {
  if (!(h > 0.0)) throw ContractError("finite_difference_check: step must be positive");

  struct Eval {
    double value;
    std::vector<std::uint8_t> pattern;
  };
  auto evaluate = [&](const std::vector<Array>& values) {
    Graph g;
    std::vector<NodeId> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(g.leaf(v));
    const double out = g.value(build(g, leaves)).item();
    return Eval{out, skip_branch_changes ? g.branch_pattern() : std::vector<std::uint8_t>{}};
  };

  Graph g;
  std::vector<NodeId> leaves;
  for (const auto& v : point) leaves.push_back(g.leaf(v));
  const NodeId out = build(g, leaves);
  const Gradients grads = g.backward(out, leaves);
  const std::vector<std::uint8_t> base_pattern = skip_branch_changes ? g.branch_pattern() : std::vector<std::uint8_t>{};

  FdReport report;
  std::vector<Array> probe(point.begin(), point.end());
  for (std::size_t l = 0; l < probe.size(); ++l) {
    const Array& analytic = grads.at(leaves[l]);
    for (std::size_t i = 0; i < probe[l].size(); ++i) {
      const double saved = probe[l][i];
      probe[l][i] = saved + h;
      const Eval fp = evaluate(probe);
      probe[l][i] = saved - h;
      const Eval fm = evaluate(probe);
      probe[l][i] = saved;
      ++report.coordinates;
      if (skip_branch_changes && (fp.pattern != base_pattern || fm.pattern != base_pattern)) {
        ++report.excluded;
        continue;
      }
      const double numeric = (fp.value - fm.value) / (2.0 * h);
      const double rel = relative_error(analytic[i], numeric, floor);
      report.max_abs_err = std::max(report.max_abs_err, std::abs(analytic[i] - numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = l;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace rangeaug::nd
