#include "cteg/tensor.hpp"

#include "cteg/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace cteg {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix&)> backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

void accumulate(detail::Node* node, const Matrix& delta) {
  if (!node->requires_grad) return;
  if (node->grad.size() == 0) {
    node->grad = delta;
  } else {
    node->grad += delta;
  }
}

}  // namespace

struct TensorAccess {
  static detail::Node* raw(const Tensor& t) { return t.node_.get(); }
  static const std::shared_ptr<detail::Node>& ptr(const Tensor& t) { return t.node_; }

  /// Records a new node. `fn` receives the output gradient and must push
  /// contributions into the parents through accumulate().
  template <typename Fn>
  static Tensor make(Matrix value, std::initializer_list<const Tensor*> parents, Fn&& fn) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->leaf = false;
    if (g_grad_enabled) {
      for (const Tensor* p : parents) {
        if (p->requires_grad()) node->requires_grad = true;
      }
    }
    if (node->requires_grad) {
      for (const Tensor* p : parents) node->parents.push_back(p->node_);
      node->backward = std::forward<Fn>(fn);
    }
    return Tensor(std::move(node));
  }

  static Tensor make_variadic(Matrix value, std::span<const Tensor> parents,
                              std::function<void(const Matrix&)> fn) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->leaf = false;
    if (g_grad_enabled) {
      for (const Tensor& p : parents) {
        if (p.requires_grad()) node->requires_grad = true;
      }
    }
    if (node->requires_grad) {
      for (const Tensor& p : parents) node->parents.push_back(p.node_);
      node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
  }
};

namespace {
detail::Node* raw(const Tensor& t) { return TensorAccess::raw(t); }
}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
  return Tensor(std::move(node));
}

Index Tensor::rows() const { return node_->value.rows(); }
Index Tensor::cols() const { return node_->value.cols(); }
const Matrix& Tensor::value() const { return node_->value; }

Matrix& Tensor::leaf_value() {
  if (!node_->leaf) throw ContractError("leaf_value: tensor is not a leaf");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) {
    node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols()); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor is " + shape_str(*this) + ", expected 1x1");
  return node_->value(0, 0);
}

Tensor Tensor::detach() const { return constant(node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss, bool accumulate_leaves) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss));
  }
  detail::Node* root = raw(loss);
  if (!root->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (!node->leaf || !accumulate_leaves) {
      node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    } else if (node->grad.size() != node->value.size()) {
      node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    }
  }
  root->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward) node->backward(node->grad);
  }
  // Intermediate buffers are not needed once the leaves are filled.
  for (detail::Node* node : order) {
    if (!node->leaf) node->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------
// elementwise

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto* na = raw(a);
  auto* nb = raw(b);
  return TensorAccess::make(a.value() + b.value(), {&a, &b}, [na, nb](const Matrix& g) {
    accumulate(na, g);
    accumulate(nb, g);
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto* na = raw(a);
  auto* nb = raw(b);
  return TensorAccess::make(a.value() - b.value(), {&a, &b}, [na, nb](const Matrix& g) {
    accumulate(na, g);
    accumulate(nb, -g);
  });
}

Tensor operator-(const Tensor& a) { return -1.0 * a; }

Tensor operator*(double s, const Tensor& a) {
  auto* na = raw(a);
  return TensorAccess::make(s * a.value(), {&a}, [na, s](const Matrix& g) { accumulate(na, s * g); });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  auto* na = raw(a);
  auto* nb = raw(b);
  return TensorAccess::make(a.value().cwiseProduct(b.value()), {&a, &b}, [na, nb](const Matrix& g) {
    accumulate(na, g.cwiseProduct(nb->value));
    accumulate(nb, g.cwiseProduct(na->value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + shape_str(row) + " does not fit " + shape_str(a));
  }
  auto* na = raw(a);
  auto* nr = raw(row);
  Matrix out = a.value().rowwise() + row.value().row(0);
  return TensorAccess::make(std::move(out), {&a, &row}, [na, nr](const Matrix& g) {
    accumulate(na, g);
    if (nr->requires_grad) accumulate(nr, g.colwise().sum());
  });
}

Tensor exp(const Tensor& a) {
  auto* na = raw(a);
  Matrix out = a.value().array().exp().matrix();
  Matrix saved = out;
  return TensorAccess::make(std::move(out), {&a}, [na, saved = std::move(saved)](const Matrix& g) {
    accumulate(na, g.cwiseProduct(saved));
  });
}

Tensor square(const Tensor& a) {
  auto* na = raw(a);
  return TensorAccess::make(a.value().array().square().matrix(), {&a}, [na](const Matrix& g) {
    accumulate(na, 2.0 * g.cwiseProduct(na->value));
  });
}

Tensor gelu(const Tensor& a) {
  auto* na = raw(a);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Matrix out = a.value().unaryExpr([inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return TensorAccess::make(std::move(out), {&a}, [na, inv_sqrt2, inv_sqrt_2pi](const Matrix& g) {
    Matrix d = na->value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    accumulate(na, g.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a) + " * " + shape_str(b));
  }
  auto* na = raw(a);
  auto* nb = raw(b);
  Matrix out = a.value() * b.value();
  return TensorAccess::make(std::move(out), {&a, &b}, [na, nb](const Matrix& g) {
    if (na->requires_grad) accumulate(na, g * nb->value.transpose());
    if (nb->requires_grad) accumulate(nb, na->value.transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  auto* na = raw(a);
  return TensorAccess::make(Matrix(a.value().transpose()), {&a},
                            [na](const Matrix& g) { accumulate(na, g.transpose()); });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  auto* na = raw(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return TensorAccess::make(std::move(out), {&a}, [na](const Matrix& g) {
    accumulate(na, Matrix::Constant(na->value.rows(), na->value.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return (1.0 / static_cast<double>(a.size())) * sum(a);
}

Tensor row_sum(const Tensor& a) {
  auto* na = raw(a);
  Matrix out = a.value().rowwise().sum();
  return TensorAccess::make(std::move(out), {&a}, [na](const Matrix& g) {
    accumulate(na, g.col(0).replicate(1, na->value.cols()));
  });
}

// ---------------------------------------------------------------------------
// softmax / layer norm

Tensor softmax_rows(const Tensor& x, const Mask* mask) {
  if (x.cols() < 1) throw ContractError("softmax_rows: last dimension must be >= 1");
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw DimensionError("softmax_rows: mask shape does not match " + shape_str(x));
  }
  const Matrix& v = x.value();
  Matrix p(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < v.cols(); ++c) {
      if (!mask || (*mask)(r, c)) mx = std::max(mx, v(r, c));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ContractError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (Index c = 0; c < v.cols(); ++c) {
      const double e = (!mask || (*mask)(r, c)) ? std::exp(v(r, c) - mx) : 0.0;
      p(r, c) = e;
      total += e;
    }
    p.row(r) /= total;
  }
  auto* nx = raw(x);
  Matrix saved = p;
  return TensorAccess::make(std::move(p), {&x}, [nx, saved = std::move(saved)](const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(saved).rowwise().sum();
    Matrix dx = saved.cwiseProduct(g.colwise() - dot);
    accumulate(nx, dx);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Matrix& v = x.value();
  Matrix xhat(v.rows(), d);
  Eigen::VectorXd inv_std(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);

  auto* nx = raw(x);
  auto* ng = raw(gain);
  auto* nb = raw(bias);
  return TensorAccess::make(
      std::move(out), {&x, &gain, &bias},
      [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
        if (ng->requires_grad) accumulate(ng, g.cwiseProduct(xhat).colwise().sum());
        if (nb->requires_grad) accumulate(nb, g.colwise().sum());
        if (!nx->requires_grad) return;
        const Index d = xhat.cols();
        Matrix gx = (g.array().rowwise() * ng->value.row(0).array()).matrix();
        Matrix dx(gx.rows(), d);
        for (Index r = 0; r < gx.rows(); ++r) {
          const double m1 = gx.row(r).mean();
          const double m2 = gx.row(r).dot(xhat.row(r)) / static_cast<double>(d);
          dx.row(r) = inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        accumulate(nx, dx);
      });
}

// ---------------------------------------------------------------------------
// structural

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<detail::Node*> nodes;
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    nodes.push_back(raw(p));
  }
  return TensorAccess::make_variadic(std::move(out), parts, [nodes](const Matrix& g) {
    Index off = 0;
    for (detail::Node* n : nodes) {
      if (n->requires_grad) accumulate(n, g.middleCols(off, n->value.cols()));
      off += n->value.cols();
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<detail::Node*> nodes;
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    nodes.push_back(raw(p));
  }
  return TensorAccess::make_variadic(std::move(out), parts, [nodes](const Matrix& g) {
    Index off = 0;
    for (detail::Node* n : nodes) {
      if (n->requires_grad) accumulate(n, g.middleRows(off, n->value.rows()));
      off += n->value.rows();
    }
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_str(a));
  }
  auto* na = raw(a);
  return TensorAccess::make(Matrix(a.value().middleCols(start, count)), {&a},
                            [na, start, count](const Matrix& g) {
                              Matrix d = Matrix::Zero(na->value.rows(), na->value.cols());
                              d.middleCols(start, count) = g;
                              accumulate(na, d);
                            });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_str(a));
  }
  auto* na = raw(a);
  return TensorAccess::make(Matrix(a.value().middleRows(start, count)), {&a},
                            [na, start, count](const Matrix& g) {
                              Matrix d = Matrix::Zero(na->value.rows(), na->value.cols());
                              d.middleRows(start, count) = g;
                              accumulate(na, d);
                            });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a) + " as (" + std::to_string(rows) + "x" +
                         std::to_string(cols) + ")");
  }
  auto* na = raw(a);
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return TensorAccess::make(std::move(out), {&a}, [na](const Matrix& g) {
    accumulate(na, Eigen::Map<const Matrix>(g.data(), na->value.rows(), na->value.cols()));
  });
}

Tensor shift_down(const Tensor& a, const Tensor& first) {
  if (first.rows() != 1 || first.cols() != a.cols()) {
    throw DimensionError("shift_down: first row " + shape_str(first) + " does not fit " + shape_str(a));
  }
  if (a.rows() == 1) return first;
  const Tensor parts[] = {first, slice_rows(a, 0, a.rows() - 1)};
  return concat_rows(parts);
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  return mean(square(pred - target));
}

Tensor coefficient_tokens(const Tensor& values, const Tensor& direction, const Tensor& offset) {
  const Index groups = values.rows();
  const Index n = values.cols();
  const Index d = direction.cols();
  if (direction.rows() != n || offset.rows() != n || offset.cols() != d) {
    throw DimensionError("coefficient_tokens: values " + shape_str(values) + ", direction " +
                         shape_str(direction) + ", offset " + shape_str(offset));
  }
  Matrix out(groups * n, d);
  for (Index g = 0; g < groups; ++g) {
    for (Index k = 0; k < n; ++k) {
      out.row(g * n + k) = values.value()(g, k) * direction.value().row(k) + offset.value().row(k);
    }
  }
  auto* nv = raw(values);
  auto* nd = raw(direction);
  auto* no = raw(offset);
  return TensorAccess::make(std::move(out), {&values, &direction, &offset},
                            [nv, nd, no, groups, n, d](const Matrix& g) {
                              Matrix dv(groups, n);
                              Matrix ddir = Matrix::Zero(n, d);
                              Matrix doff = Matrix::Zero(n, d);
                              for (Index gi = 0; gi < groups; ++gi) {
                                for (Index k = 0; k < n; ++k) {
                                  const auto grow = g.row(gi * n + k);
                                  dv(gi, k) = grow.dot(nd->value.row(k));
                                  ddir.row(k) += nv->value(gi, k) * grow;
                                  doff.row(k) += grow;
                                }
                              }
                              accumulate(nv, dv);
                              accumulate(nd, ddir);
                              accumulate(no, doff);
                            });
}

Tensor grouped_matmul_nt(const Tensor& a, const Tensor& b, Index groups) {
  if (groups < 1 || a.rows() % groups != 0 || b.rows() % groups != 0 || a.cols() != b.cols()) {
    throw DimensionError("grouped_matmul_nt: " + shape_str(a) + " and " + shape_str(b) + " in " +
                         std::to_string(groups) + " groups");
  }
  const Index m = a.rows() / groups;
  const Index n = b.rows() / groups;
  Matrix out(groups * m, n);
  for (Index g = 0; g < groups; ++g) {
    out.middleRows(g * m, m).noalias() =
        a.value().middleRows(g * m, m) * b.value().middleRows(g * n, n).transpose();
  }
  auto* na = raw(a);
  auto* nb = raw(b);
  return TensorAccess::make(std::move(out), {&a, &b}, [na, nb, groups, m, n](const Matrix& g) {
    if (na->requires_grad) {
      Matrix da(na->value.rows(), na->value.cols());
      for (Index gi = 0; gi < groups; ++gi) {
        da.middleRows(gi * m, m).noalias() = g.middleRows(gi * m, m) * nb->value.middleRows(gi * n, n);
      }
      accumulate(na, da);
    }
    if (nb->requires_grad) {
      Matrix db(nb->value.rows(), nb->value.cols());
      for (Index gi = 0; gi < groups; ++gi) {
        db.middleRows(gi * n, n).noalias() =
            g.middleRows(gi * m, m).transpose() * na->value.middleRows(gi * m, m);
      }
      accumulate(nb, db);
    }
  });
}

Tensor grouped_matmul_nn(const Tensor& p, const Tensor& v, Index groups) {
  if (groups < 1 || p.rows() % groups != 0 || v.rows() != groups * p.cols()) {
    throw DimensionError("grouped_matmul_nn: " + shape_str(p) + " and " + shape_str(v) + " in " +
                         std::to_string(groups) + " groups");
  }
  const Index m = p.rows() / groups;
  const Index n = p.cols();
  Matrix out(groups * m, v.cols());
  for (Index g = 0; g < groups; ++g) {
    out.middleRows(g * m, m).noalias() = p.value().middleRows(g * m, m) * v.value().middleRows(g * n, n);
  }
  auto* np = raw(p);
  auto* nv = raw(v);
  return TensorAccess::make(std::move(out), {&p, &v}, [np, nv, groups, m, n](const Matrix& g) {
    if (np->requires_grad) {
      Matrix dp(np->value.rows(), np->value.cols());
      for (Index gi = 0; gi < groups; ++gi) {
        dp.middleRows(gi * m, m).noalias() =
            g.middleRows(gi * m, m) * nv->value.middleRows(gi * n, n).transpose();
      }
      accumulate(np, dp);
    }
    if (nv->requires_grad) {
      Matrix dv(nv->value.rows(), nv->value.cols());
      for (Index gi = 0; gi < groups; ++gi) {
        dv.middleRows(gi * n, n).noalias() =
            np->value.middleRows(gi * m, m).transpose() * g.middleRows(gi * m, m);
      }
      accumulate(nv, dv);
    }
  });
}

// ---------------------------------------------------------------------------
// gradient verification

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<const NamedTensor> params,
                           double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  for (const NamedTensor& p : params) {
    if (!p.tensor.is_leaf()) throw ContractError("grad_check: '" + p.name + "' is not a leaf tensor");
  }

  Tensor loss = f();
  const double base = loss.item();
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: loss is not finite at the base point");
  {
    NoGradGuard guard;
    const double again = f().item();
    if (again != base) {
      std::ostringstream os;
      os.precision(17);
      os << "grad_check: objective is not deterministic (" << base << " vs " << again
         << "); fix the random stream inside the objective";
      throw ContractError(os.str());
    }
  }
  backward(loss);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const NamedTensor& p : params) analytic.push_back(p.tensor.grad());

  GradCheckResult result;
  NoGradGuard guard;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    Matrix& data = t.leaf_value();
    for (Index k = 0; k < data.size(); ++k) {
      double& entry = data.data()[k];
      const double saved = entry;
      entry = saved + eps;
      const double plus = f().item();
      entry = saved - eps;
      const double minus = f().item();
      entry = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw std::runtime_error("grad_check: non-finite objective while perturbing '" + params[i].name +
                                 "' entry " + std::to_string(k));
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i].data()[k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = err;
        result.worst_parameter = params[i].name;
        result.worst_index = k;
      }
    }
  }
  return result;
}

}  // namespace cteg
