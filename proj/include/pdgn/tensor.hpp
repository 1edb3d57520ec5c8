#pragma once

// Dense rank-2 tensors with a reverse-mode gradient tape.
//
// Every tensor is a row-major Eigen matrix. Batches of point clouds are
// stacked along the row axis (B*N rows), features run along columns, and
// scalars are 1x1. Ops record themselves on the thread's active Tape only
// when at least one input requires a gradient, so forward-only evaluation
// (metrics, generation) carries no bookkeeping.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdgn::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first contribution arrives
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_leaf = true;

  void accumulate(const Matrix& g);
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor zeros(Index rows, Index cols);
  /// A trainable leaf.
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }

  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers and running statistics. Not recorded.
  Matrix& mutable_value() { return node_->value; }

  /// Accumulated gradient; a zero matrix of the value's shape when none arrived.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  double item() const;
  double operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Same value, cut from the tape.
  Tensor detach() const { return Tensor(node_->value, false); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward);
};

/// Records op nodes in execution order. Constructing a Tape makes it the
/// active tape of the calling thread until it is destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse sweep from a scalar loss; gradients accumulate into leaves.
  void backward(const Tensor& loss);

  /// Zeroes the given parameters, runs backward, and returns one gradient
  /// per parameter (zero for parameters the loss does not reach).
  std::vector<Matrix> gradients(const Tensor& loss, std::span<const Tensor> params);

  std::size_t size() const { return nodes_.size(); }
  static Tape* active();

 private:
  friend Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward);
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_;
};

/// Builds an op result and records it when any input requires a gradient.
/// Throws NonFiniteError when the result is not finite.
Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs,
              std::function<void(detail::Node&)> backward);

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops require identical shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a (r x c) plus a row vector b (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
/// Elementwise max; ties pick `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---------------------------------------------------------------------------
// Nonlinearities. Subgradient at exactly zero is 0 for relu/leaky_relu.

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(1 + exp(a)), evaluated without overflow.
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
/// Per-row Euclidean norm (r x 1). The gradient of a zero row is zero.
Tensor row_norm(const Tensor& a);

// ---------------------------------------------------------------------------
// Reductions.

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// axis 0 reduces rows (1 x c); axis 1 reduces columns (r x 1).
Tensor sum_axis(const Tensor& a, int axis);
/// Max along an axis. The gradient goes to the argmax; ties pick the lowest index.
Tensor reduce_max(const Tensor& a, int axis);
Tensor reduce_min(const Tensor& a, int axis);
/// Rows are grouped into consecutive segments of `segment` rows; each
/// segment collapses to one row.
Tensor segment_max(const Tensor& a, Index segment);
Tensor segment_sum(const Tensor& a, Index segment);
Tensor segment_mean(const Tensor& a, Index segment);

// ---------------------------------------------------------------------------
// Structural ops.

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
/// Row-major reinterpretation.
Tensor reshape(const Tensor& a, Index rows, Index cols);
/// out.row(i) = a.row(index[i]); the backward pass scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const Index> index);
Tensor gather_cols(const Tensor& a, std::span<const Index> index);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);

/// Squared Euclidean distances between the rows of a (n x d) and b (m x d).
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

struct BatchNormState {
  Tensor running_mean;  // 1 x c
  Tensor running_var;   // 1 x c
};

/// Per-column normalisation over all rows. In training mode the running
/// statistics are blended as running = momentum*running + (1-momentum)*batch.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum = 0.9,
                  double eps = 1e-5);

bool all_finite(const Matrix& m);

}  // namespace pdgn::ad
