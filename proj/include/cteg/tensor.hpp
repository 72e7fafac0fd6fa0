#pragma once

// Dense 2-D tensors with a dynamic reverse-mode tape.
//
// Every model quantity is a matrix (rows = time steps or tokens, cols =
// features); scalars are 1x1. Storage is row-major so that reshaping a
// (G*m x k) block stack into (G x m*k) is a reinterpretation of the buffer.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cteg {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Mask = MatrixX<bool>;
using Index = Eigen::Index;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  /// Leaf that never receives gradients.
  static Tensor constant(Matrix value);
  /// Leaf whose gradient is filled by backward().
  static Tensor parameter(Matrix value);

  bool defined() const noexcept { return node_ != nullptr; }
  Index rows() const;
  Index cols() const;
  Index size() const { return rows() * cols(); }

  const Matrix& value() const;
  /// Mutable access to a leaf's data (optimizers, perturbation in grad checks).
  Matrix& leaf_value();

  /// Gradient buffer; zeros until a backward pass reaches this tensor.
  const Matrix& grad() const;
  void zero_grad();

  bool requires_grad() const;
  bool is_leaf() const;

  /// Value of a 1x1 tensor.
  double item() const;

  /// Constant copy of the current value, cut from the tape.
  Tensor detach() const;

  const detail::Node* node() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Populates grad() of every tensor reachable from a scalar loss.
///
/// Each graph node is visited once, in reverse topological order. Gradients
/// of intermediate nodes are always recomputed. Leaf gradients are reset
/// before filling unless `accumulate` is true, in which case they add onto
/// whatever the previous call left behind.
void backward(const Tensor& loss, bool accumulate = false);

// Elementwise and structural operations. Shape mismatches throw DimensionError.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// a + row broadcast over every row of a; `row` is 1 x a.cols().
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over each row, result is rows x 1.
Tensor row_sum(const Tensor& a);

/// Row-wise softmax. Entries where `mask` is false get probability 0.
/// Every row must keep at least one allowed entry.
Tensor softmax_rows(const Tensor& x, const Mask* mask = nullptr);

/// Normalizes every row to zero mean / unit variance, then gain * x + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor slice_rows(const Tensor& a, Index start, Index count);
/// Row-major reinterpretation; rows*cols must be preserved.
Tensor reshape(const Tensor& a, Index rows, Index cols);

/// Drops the last row and prepends `first` (1 x cols): row t of the result
/// is row t-1 of `a`.
Tensor shift_down(const Tensor& a, const Tensor& first);

/// Mean over all elements of (pred - target)^2.
Tensor mse(const Tensor& pred, const Tensor& target);

/// Per-coefficient embedding tokens. values is (G x n), direction and offset
/// are (n x d). Row g*n + k of the result is values(g,k) * direction.row(k) +
/// offset.row(k).
Tensor coefficient_tokens(const Tensor& values, const Tensor& direction, const Tensor& offset);

/// Block-wise a_g * b_g^T for G groups: a is (G*m x k), b is (G*n x k),
/// result is (G*m x n).
Tensor grouped_matmul_nt(const Tensor& a, const Tensor& b, Index groups);
/// Block-wise p_g * v_g: p is (G*m x n), v is (G*n x d), result (G*m x d).
Tensor grouped_matmul_nn(const Tensor& p, const Tensor& v, Index groups);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  Index entries_checked = 0;
};

/// Compares backward() against central differences for every entry of
/// `params`. The error for one entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// `f` must be deterministic: it is evaluated twice at the base point and a
/// mismatch throws ContractError. A non-finite value throws
/// std::runtime_error naming the perturbed parameter.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<const NamedTensor> params,
                           double eps = 1e-5);

}  // namespace cteg
