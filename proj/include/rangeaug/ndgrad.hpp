#pragma once

// Minimal dense-array engine with reverse-mode gradients.
//
// A Graph is an append-only tape of nodes. Every primitive evaluates eagerly
// when appended, so values are available immediately; backward() then walks
// the tape in reverse insertion order. Only scalar-vs-array broadcasting is
// supported, plus a dedicated row-vector add for affine layers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rangeaug::nd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Row-major block of 64-bit floats. Every axis has length >= 1; a scalar is
// shape {1}.
class Array {
 public:
  Array() : shape_{1}, data_(1, 0.0) {}
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array(Shape{1}, v); }
  static Array from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  double item() const;
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  // Same data, new shape with an equal element count.
  Array reshaped(Shape shape) const;

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Fixed-order pairwise summation; the result does not depend on how callers
// partition work.
double pairwise_sum(std::span<const double> values);

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  AddScalar,
  MulScalar,
  Square,
  Log,
  Log10,
  MaxConst,
  MinConst,
  Relu,
  Clamp,
  Sum,
  Mean,
  MatMul,
  AddRowVector,
  SoftmaxCrossEntropy,
  Detach,
  Stack,
  Reshape,
};

std::string_view op_name(OpKind kind);

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

// Scalar attributes for primitives that take constants (c for *Const and
// *Scalar ops, lo/hi for Clamp). Shape is used by Reshape; targets by the
// fused softmax cross-entropy.
struct Attrs {
  double c = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  Shape shape;
  const Array* targets = nullptr;
};

struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<NodeId> inputs;
  Array value;
  Array grad;
  bool requires_grad = false;
  bool has_grad = false;
  double c = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  Array aux;  // softmax probabilities or cross-entropy targets
  Array aux2;
};

class Gradients {
 public:
  const Array& at(NodeId id) const;
  bool contains(NodeId id) const { return grads_.count(id.index) != 0; }
  std::size_t size() const { return grads_.size(); }
  void set(NodeId id, Array g) { grads_[id.index] = std::move(g); }

 private:
  std::unordered_map<std::uint32_t, Array> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId leaf(Array value);
  NodeId constant(Array value);

  // Generic entry point: appends a node of the given primitive, evaluates it
  // and returns its handle. Throws ShapeError on non-conforming inputs.
  NodeId apply(OpKind op, std::span<const NodeId> inputs, const Attrs& attrs = {});

  NodeId add(NodeId x, NodeId y) { return binary(OpKind::Add, x, y); }
  NodeId sub(NodeId x, NodeId y) { return binary(OpKind::Sub, x, y); }
  NodeId mul(NodeId x, NodeId y) { return binary(OpKind::Mul, x, y); }
  NodeId add_scalar(NodeId x, double c) { return with_const(OpKind::AddScalar, x, c); }
  NodeId mul_scalar(NodeId x, double c) { return with_const(OpKind::MulScalar, x, c); }
  NodeId square(NodeId x) { return unary(OpKind::Square, x); }
  NodeId log(NodeId x) { return unary(OpKind::Log, x); }
  NodeId log10(NodeId x) { return unary(OpKind::Log10, x); }
  NodeId max_const(NodeId x, double c) { return with_const(OpKind::MaxConst, x, c); }
  NodeId min_const(NodeId x, double c) { return with_const(OpKind::MinConst, x, c); }
  NodeId relu(NodeId x) { return unary(OpKind::Relu, x); }
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId sum(NodeId x) { return unary(OpKind::Sum, x); }
  NodeId mean(NodeId x) { return unary(OpKind::Mean, x); }
  NodeId matmul(NodeId a, NodeId b) { return binary(OpKind::MatMul, a, b); }
  NodeId add_row_vector(NodeId x, NodeId row) { return binary(OpKind::AddRowVector, x, row); }
  NodeId detach(NodeId x) { return unary(OpKind::Detach, x); }
  NodeId stack(std::span<const NodeId> parts);
  NodeId reshape(NodeId x, Shape shape);

  // |x| built from rectifiers.
  NodeId abs(NodeId x);

  // Mean over rows of -sum_k t_k log softmax(logits)_k for logits [n, K] and
  // a constant target distribution per row.
  NodeId softmax_cross_entropy(NodeId logits, const Array& targets);
  // Hard-label form; throws std::out_of_range for a label >= K.
  NodeId softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels);

  const Array& value(NodeId id) const { return node(id).value; }
  const Array& grad(NodeId id) const;
  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaves() const { return leaf_ids_; }

  // Which piece of every piecewise primitive (rectifier, clamp, max/min with a
  // constant) each element currently sits on, concatenated in node order.
  std::vector<std::uint8_t> branch_pattern() const;

  // Reverse pass from a scalar loss. Gradients are returned for every leaf in
  // `wrt`, or for every leaf when `wrt` is empty. Only nodes on a path to a
  // requested leaf are visited.
  Gradients backward(NodeId loss, std::span<const NodeId> wrt = {});

 private:
  NodeId unary(OpKind op, NodeId x);
  NodeId binary(OpKind op, NodeId x, NodeId y);
  NodeId with_const(OpKind op, NodeId x, double c);
  NodeId push(Node n);
  void check(NodeId id) const;
  void propagate(std::uint32_t index, const std::vector<char>& relevant);

  std::vector<Node> nodes_;
  std::vector<NodeId> leaf_ids_;
};

// Central-difference gradient check. `build` must construct the function on
// the graph from the given leaves and return the scalar output; it is invoked
// once for the analytic pass and twice per coordinate.
//
// A coordinate whose +h or -h probe lands on a different branch of some
// piecewise primitive than the base point is counted in `excluded` and left
// out of the error maxima when skip_branch_changes is set.
struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coordinates = 0;
  std::size_t excluded = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
};

using GraphBuilder = std::function<NodeId(Graph&, std::span<const NodeId>)>;

// Relative error per coordinate is |g - fd| / max(|g|, |fd|, floor).
FdReport finite_difference_check(const GraphBuilder& build, std::span<const Array> point, double h,
                                 double floor = 1e-8, bool skip_branch_changes = true);

double relative_error(double analytic, double numeric, double floor = 1e-8);

}  // namespace rangeaug::nd
