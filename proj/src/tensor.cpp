#include "pdgn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pdgn::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << '(' << m.rows() << 'x' << m.cols() << ')';
  return os.str();
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(op, "shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

// Op outputs are checked when recorded, so only leaves need a scan here.
void require_finite(const char* op, const Tensor& t) {
  if (t.node()->is_leaf && !all_finite(t.value())) {
    throw NonFiniteError(std::string(op) + ": non-finite input");
  }
}

void require_finite(const char* op, std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) require_finite(op, *t);
}

inline bool wants(const detail::Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }

void detail::Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is not a scalar " + shape_str(value()));
  return node_->value(0, 0);
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.value()));
  }
  const auto& root = loss.node();
  if (root->is_leaf) {
    if (root->requires_grad) root->accumulate(Matrix::Ones(1, 1));
    return;
  }
  auto it = std::find(nodes_.rbegin(), nodes_.rend(), root);
  if (it == nodes_.rend()) throw std::logic_error("backward: loss was not recorded on this tape");
  for (auto& n : nodes_) n->grad.resize(0, 0);
  root->grad = Matrix::Ones(1, 1);
  for (; it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.grad.size() == 0) continue;
    n.backward(n);
  }
}

std::vector<Matrix> Tape::gradients(const Tensor& loss, std::span<const Tensor> params) {
  for (const auto& p : params) p.node()->grad.resize(0, 0);
  backward(loss);
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.grad());
  return out;
}

Tensor record(const char* op, Matrix value, std::vector<Tensor> inputs,
              std::function<void(detail::Node&)> backward) {
  if (!value.allFinite()) throw NonFiniteError(std::string(op) + ": non-finite result");
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  Tape* tape = Tape::active();
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
    tape->nodes_.push_back(node);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  require_finite("add", {&a, &b});
  return record("add", a.value() + b.value(), {a, b}, [](detail::Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
    if (wants(n, 1)) n.inputs[1]->accumulate(n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  require_finite("sub", {&a, &b});
  return record("sub", a.value() - b.value(), {a, b}, [](detail::Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
    if (wants(n, 1)) n.inputs[1]->accumulate(-n.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  require_finite("mul", {&a, &b});
  return record("mul", a.value().cwiseProduct(b.value()), {a, b}, [](detail::Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad.cwiseProduct(n.inputs[1]->value));
    if (wants(n, 1)) n.inputs[1]->accumulate(n.grad.cwiseProduct(n.inputs[0]->value));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  require_finite("div", {&a, &b});
  return record("div", a.value().cwiseQuotient(b.value()), {a, b}, [](detail::Node& n) {
    const Matrix& bv = n.inputs[1]->value;
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad.cwiseQuotient(bv));
    if (wants(n, 1)) {
      n.inputs[1]->accumulate(
          -(n.grad.cwiseProduct(n.value)).cwiseQuotient(bv));
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  require_finite("scale", a);
  return record("scale", a.value() * s, {a},
                [s](detail::Node& n) { n.inputs[0]->accumulate(n.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_finite("add_scalar", a);
  Matrix v = a.value().array() + s;
  return record("add_scalar", std::move(v), {a},
                [](detail::Node& n) { n.inputs[0]->accumulate(n.grad); });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    shape_fail("add_row", "row vector " + shape_str(b.value()) + " does not broadcast over " +
                              shape_str(a.value()));
  }
  require_finite("add_row", {&a, &b});
  Matrix v = a.value().rowwise() + b.value().row(0);
  return record("add_row", std::move(v), {a, b}, [](detail::Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
    if (wants(n, 1)) n.inputs[1]->accumulate(n.grad.colwise().sum());
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape("maximum", a, b);
  require_finite("maximum", {&a, &b});
  Matrix v = a.value().cwiseMax(b.value());
  return record("maximum", std::move(v), {a, b}, [](detail::Node& n) {
    const Matrix& av = n.inputs[0]->value;
    const Matrix& bv = n.inputs[1]->value;
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    Matrix gb = Matrix::Zero(av.rows(), av.cols());
    for (Index i = 0; i < av.size(); ++i) {
      if (av.data()[i] >= bv.data()[i]) {
        ga.data()[i] = n.grad.data()[i];
      } else {
        gb.data()[i] = n.grad.data()[i];
      }
    }
    if (wants(n, 0)) n.inputs[0]->accumulate(ga);
    if (wants(n, 1)) n.inputs[1]->accumulate(gb);
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    shape_fail("matmul", "inner extents differ " + shape_str(a.value()) + " * " +
                             shape_str(b.value()));
  }
  require_finite("matmul", {&a, &b});
  Matrix v = a.value() * b.value();
  return record("matmul", std::move(v), {a, b}, [](detail::Node& n) {
    if (wants(n, 0)) n.inputs[0]->accumulate(n.grad * n.inputs[1]->value.transpose());
    if (wants(n, 1)) n.inputs[1]->accumulate(n.inputs[0]->value.transpose() * n.grad);
  });
}

Tensor transpose(const Tensor& a) {
  require_finite("transpose", a);
  Matrix v = a.value().transpose();
  return record("transpose", std::move(v), {a},
                [](detail::Node& n) { n.inputs[0]->accumulate(n.grad.transpose()); });
}

// ---------------------------------------------------------------------------

Tensor exp(const Tensor& a) {
  require_finite("exp", a);
  Matrix v = a.value().array().exp();
  return record("exp", std::move(v), {a},
                [](detail::Node& n) { n.inputs[0]->accumulate(n.grad.cwiseProduct(n.value)); });
}

Tensor log(const Tensor& a) {
  require_finite("log", a);
  if ((a.value().array() <= 0.0).any()) throw NonFiniteError("log: non-positive input");
  Matrix v = a.value().array().log();
  return record("log", std::move(v), {a}, [](detail::Node& n) {
    n.inputs[0]->accumulate(n.grad.cwiseQuotient(n.inputs[0]->value));
  });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  require_finite("leaky_relu", a);
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return record("leaky_relu", std::move(v), {a}, [slope](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      const double xi = x.data()[i];
      const double d = xi > 0.0 ? 1.0 : (xi < 0.0 ? slope : 0.0);
      g.data()[i] = n.grad.data()[i] * d;
    }
    n.inputs[0]->accumulate(g);
  });
}

Tensor tanh(const Tensor& a) {
  require_finite("tanh", a);
  Matrix v = a.value().array().tanh();
  return record("tanh", std::move(v), {a}, [](detail::Node& n) {
    Matrix d = 1.0 - n.value.array().square();
    n.inputs[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  require_finite("sigmoid", a);
  Matrix v = a.value().unaryExpr(&stable_sigmoid);
  return record("sigmoid", std::move(v), {a}, [](detail::Node& n) {
    Matrix d = n.value.array() * (1.0 - n.value.array());
    n.inputs[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Tensor softplus(const Tensor& a) {
  require_finite("softplus", a);
  Matrix v = a.value().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return record("softplus", std::move(v), {a}, [](detail::Node& n) {
    Matrix d = n.inputs[0]->value.unaryExpr(&stable_sigmoid);
    n.inputs[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Tensor square(const Tensor& a) {
  require_finite("square", a);
  Matrix v = a.value().array().square();
  return record("square", std::move(v), {a}, [](detail::Node& n) {
    n.inputs[0]->accumulate(2.0 * n.grad.cwiseProduct(n.inputs[0]->value));
  });
}

Tensor row_norm(const Tensor& a) {
  require_finite("row_norm", a);
  Matrix v = a.value().rowwise().norm();
  return record("row_norm", std::move(v), {a}, [](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      const double norm = n.value(r, 0);
      if (norm > 0.0) g.row(r) = x.row(r) * (n.grad(r, 0) / norm);
    }
    n.inputs[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_finite("sum", a);
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return record("sum", std::move(v), {a}, [](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(Matrix::Constant(x.rows(), x.cols(), n.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) shape_fail("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis(const Tensor& a, int axis) {
  require_finite("sum_axis", a);
  if (axis != 0 && axis != 1) shape_fail("sum_axis", "axis must be 0 or 1");
  Matrix v = axis == 0 ? Matrix(a.value().colwise().sum()) : Matrix(a.value().rowwise().sum());
  return record("sum_axis", std::move(v), {a}, [axis](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    if (axis == 0) {
      g.rowwise() = n.grad.row(0);
    } else {
      g.colwise() = n.grad.col(0);
    }
    n.inputs[0]->accumulate(g);
  });
}

namespace {

// Shared body of reduce_max / reduce_min: `better(x, best)` must be strict so
// that the first (lowest-index) extremum wins.
template <typename Better>
Tensor reduce_extreme(const char* op, const Tensor& a, int axis, Better better) {
  require_finite(op, a);
  if (axis != 0 && axis != 1) shape_fail(op, "axis must be 0 or 1");
  if (a.size() == 0) shape_fail(op, "empty tensor");
  const Matrix& x = a.value();
  const Index outer = axis == 0 ? x.cols() : x.rows();
  const Index inner = axis == 0 ? x.rows() : x.cols();
  Matrix v = axis == 0 ? Matrix(1, outer) : Matrix(outer, 1);
  IndexList arg(static_cast<std::size_t>(outer));
  for (Index o = 0; o < outer; ++o) {
    Index best = 0;
    double bv = axis == 0 ? x(0, o) : x(o, 0);
    for (Index i = 1; i < inner; ++i) {
      const double xi = axis == 0 ? x(i, o) : x(o, i);
      if (better(xi, bv)) {
        bv = xi;
        best = i;
      }
    }
    v.data()[o] = bv;
    arg[static_cast<std::size_t>(o)] = best;
  }
  return record(op, std::move(v), {a}, [axis, arg = std::move(arg)](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t o = 0; o < arg.size(); ++o) {
      const Index oi = static_cast<Index>(o);
      if (axis == 0) {
        g(arg[o], oi) = n.grad.data()[o];
      } else {
        g(oi, arg[o]) = n.grad.data()[o];
      }
    }
    n.inputs[0]->accumulate(g);
  });
}

void require_segment(const char* op, const Tensor& a, Index segment) {
  if (segment <= 0 || a.rows() % segment != 0) {
    shape_fail(op, "segment " + std::to_string(segment) + " does not divide " +
                       std::to_string(a.rows()) + " rows");
  }
}

}  // namespace

Tensor reduce_max(const Tensor& a, int axis) {
  return reduce_extreme("reduce_max", a, axis, [](double x, double b) { return x > b; });
}

Tensor reduce_min(const Tensor& a, int axis) {
  return reduce_extreme("reduce_min", a, axis, [](double x, double b) { return x < b; });
}

Tensor segment_max(const Tensor& a, Index segment) {
  require_segment("segment_max", a, segment);
  require_finite("segment_max", a);
  const Matrix& x = a.value();
  const Index groups = x.rows() / segment;
  const Index c = x.cols();
  Matrix v(groups, c);
  IndexList arg(static_cast<std::size_t>(groups * c));
  for (Index g = 0; g < groups; ++g) {
    const Index base = g * segment;
    for (Index j = 0; j < c; ++j) {
      Index best = base;
      double bv = x(base, j);
      for (Index r = base + 1; r < base + segment; ++r) {
        if (x(r, j) > bv) {
          bv = x(r, j);
          best = r;
        }
      }
      v(g, j) = bv;
      arg[static_cast<std::size_t>(g * c + j)] = best;
    }
  }
  return record("segment_max", std::move(v), {a}, [arg = std::move(arg)](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    const Index c = x.cols();
    Matrix g = Matrix::Zero(x.rows(), c);
    for (Index q = 0; q < n.grad.size(); ++q) {
      g(arg[static_cast<std::size_t>(q)], q % c) += n.grad.data()[q];
    }
    n.inputs[0]->accumulate(g);
  });
}

Tensor segment_sum(const Tensor& a, Index segment) {
  require_segment("segment_sum", a, segment);
  require_finite("segment_sum", a);
  const Matrix& x = a.value();
  const Index groups = x.rows() / segment;
  Matrix v = Matrix::Zero(groups, x.cols());
  for (Index g = 0; g < groups; ++g) {
    for (Index r = 0; r < segment; ++r) v.row(g) += x.row(g * segment + r);
  }
  return record("segment_sum", std::move(v), {a}, [segment](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) g.row(r) = n.grad.row(r / segment);
    n.inputs[0]->accumulate(g);
  });
}

Tensor segment_mean(const Tensor& a, Index segment) {
  return scale(segment_sum(a, segment), 1.0 / static_cast<double>(segment));
}

// ---------------------------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) shape_fail("concat_cols", "no inputs");
  const Index r = parts.front().rows();
  Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_fail("concat_cols", "row counts differ");
    require_finite("concat_cols", p);
    c += p.cols();
  }
  Matrix v(r, c);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return record("concat_cols", std::move(v), {parts.begin(), parts.end()},
                [offsets = std::move(offsets)](detail::Node& n) {
                  for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    if (!n.inputs[i]->requires_grad) continue;
                    n.inputs[i]->accumulate(
                        n.grad.middleCols(offsets[i], n.inputs[i]->value.cols()));
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) shape_fail("concat_rows", "no inputs");
  const Index c = parts.front().cols();
  Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_fail("concat_rows", "column counts differ");
    require_finite("concat_rows", p);
    r += p.rows();
  }
  Matrix v(r, c);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return record("concat_rows", std::move(v), {parts.begin(), parts.end()},
                [offsets = std::move(offsets)](detail::Node& n) {
                  for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    if (!n.inputs[i]->requires_grad) continue;
                    n.inputs[i]->accumulate(
                        n.grad.middleRows(offsets[i], n.inputs[i]->value.rows()));
                  }
                });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    shape_fail("reshape", "cannot view " + shape_str(a.value()) + " as (" + std::to_string(rows) +
                              "x" + std::to_string(cols) + ")");
  }
  require_finite("reshape", a);
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return record("reshape", std::move(v), {a}, [](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->accumulate(Eigen::Map<const Matrix>(n.grad.data(), x.rows(), x.cols()));
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> index) {
  require_finite("gather_rows", a);
  const Index r = a.rows();
  Matrix v(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= r) shape_fail("gather_rows", "row index out of range");
    v.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return record("gather_rows", std::move(v), {a},
                [idx = IndexList(index.begin(), index.end())](detail::Node& n) {
                  const Matrix& x = n.inputs[0]->value;
                  Matrix g = Matrix::Zero(x.rows(), x.cols());
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    g.row(idx[i]) += n.grad.row(static_cast<Index>(i));
                  }
                  n.inputs[0]->accumulate(g);
                });
}

Tensor gather_cols(const Tensor& a, std::span<const Index> index) {
  require_finite("gather_cols", a);
  const Index c = a.cols();
  Matrix v(a.rows(), static_cast<Index>(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= c) shape_fail("gather_cols", "column index out of range");
    v.col(static_cast<Index>(i)) = a.value().col(index[i]);
  }
  return record("gather_cols", std::move(v), {a},
                [idx = IndexList(index.begin(), index.end())](detail::Node& n) {
                  const Matrix& x = n.inputs[0]->value;
                  Matrix g = Matrix::Zero(x.rows(), x.cols());
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    g.col(idx[i]) += n.grad.col(static_cast<Index>(i));
                  }
                  n.inputs[0]->accumulate(g);
                });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) shape_fail("slice_rows", "out of range");
  require_finite("slice_rows", a);
  Matrix v = a.value().middleRows(begin, count);
  return record("slice_rows", std::move(v), {a}, [begin, count](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(begin, count) = n.grad;
    n.inputs[0]->accumulate(g);
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) shape_fail("slice_cols", "out of range");
  require_finite("slice_cols", a);
  Matrix v = a.value().middleCols(begin, count);
  return record("slice_cols", std::move(v), {a}, [begin, count](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(begin, count) = n.grad;
    n.inputs[0]->accumulate(g);
  });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    shape_fail("pairwise_sqdist", "dimension mismatch " + shape_str(a.value()) + " vs " +
                                      shape_str(b.value()));
  }
  require_finite("pairwise_sqdist", {&a, &b});
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix v(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < y.rows(); ++j) v(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  }
  return record("pairwise_sqdist", std::move(v), {a, b}, [](detail::Node& n) {
    const Matrix& x = n.inputs[0]->value;
    const Matrix& y = n.inputs[1]->value;
    const Matrix& g = n.grad;
    if (wants(n, 0)) {
      Matrix ga = 2.0 * (x.array().colwise() * g.rowwise().sum().array()).matrix() - 2.0 * g * y;
      n.inputs[0]->accumulate(ga);
    }
    if (wants(n, 1)) {
      Matrix gb = 2.0 * (y.array().colwise() * g.colwise().sum().transpose().array()).matrix() -
                  2.0 * g.transpose() * x;
      n.inputs[1]->accumulate(gb);
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double momentum, double eps) {
  const Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    shape_fail("batch_norm", "scale/shift must be (1x" + std::to_string(c) + ")");
  }
  if (x.rows() == 0) shape_fail("batch_norm", "empty batch");
  require_finite("batch_norm", {&x, &gamma, &beta});
  const Matrix& xv = x.value();
  const double n = static_cast<double>(xv.rows());
  Eigen::RowVectorXd mu(c);
  Eigen::RowVectorXd var(c);
  if (training) {
    mu = xv.colwise().mean();
    var = (xv.rowwise() - mu).array().square().colwise().sum().matrix() / n;
    const double unbias = xv.rows() > 1 ? n / (n - 1.0) : 1.0;
    state.running_mean.mutable_value() =
        momentum * state.running_mean.value() + (1.0 - momentum) * Matrix(mu);
    state.running_var.mutable_value() =
        momentum * state.running_var.value() + (1.0 - momentum) * Matrix(var * unbias);
  } else {
    mu = state.running_mean.value().row(0);
    var = state.running_var.value().row(0);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = (xv.rowwise() - mu).array().rowwise() * inv_std.array();
  Matrix v = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
             beta.value().row(0).array();
  return record("batch_norm", std::move(v), {x, gamma, beta},
                [training, inv_std, xhat = std::move(xhat)](detail::Node& nd) {
                  const Matrix& g = nd.grad;
                  const Eigen::RowVectorXd gam = nd.inputs[1]->value.row(0);
                  if (wants(nd, 1)) nd.inputs[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
                  if (wants(nd, 2)) nd.inputs[2]->accumulate(g.colwise().sum());
                  if (!wants(nd, 0)) return;
                  Matrix dxhat = g.array().rowwise() * gam.array();
                  if (!training) {
                    nd.inputs[0]->accumulate(dxhat.array().rowwise() * inv_std.array());
                    return;
                  }
                  const double rows = static_cast<double>(g.rows());
                  const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
                  const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                  Matrix dx = ((dxhat * rows).rowwise() - s1).array() -
                              xhat.array().rowwise() * s2.array();
                  dx = (dx.array().rowwise() * (inv_std.array() / rows)).matrix();
                  nd.inputs[0]->accumulate(dx);
                });
}

}  // namespace pdgn::ad
