#include "cteg/errors.hpp"
#include "cteg/tensor.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cteg;
using cteg::testing::max_rel_diff;
using cteg::testing::numeric_gradient;
using cteg::testing::random_matrix;

namespace {

// Checks d(sum(w .* op(x)))/dx against central differences.
void expect_op_gradient(const std::function<Tensor(const Tensor&)>& op, const Matrix& x0, std::uint64_t seed = 3) {
  Tensor x = Tensor::parameter(x0);
  const Tensor probe = op(x);
  const Matrix w = random_matrix(seed, probe.rows(), probe.cols());
  auto objective = [&] { return sum(hadamard(op(x), Tensor::constant(w))); };
  backward(objective());
  const Matrix analytic = x.grad();
  NoGradGuard guard;
  const Matrix numeric = numeric_gradient([&] { return objective().item(); }, x);
  EXPECT_LT(max_rel_diff(analytic, numeric), 1e-7);
}

}  // namespace

TEST(Tensor, ArithmeticValues) {
  const Tensor a = Tensor::constant((Matrix(2, 2) << 1, 2, 3, 4).finished());
  const Tensor b = Tensor::constant((Matrix(2, 2) << 5, 6, 7, 8).finished());
  EXPECT_EQ((a + b).value(), (Matrix(2, 2) << 6, 8, 10, 12).finished());
  EXPECT_EQ((a - b).value(), Matrix::Constant(2, 2, -4));
  EXPECT_EQ(hadamard(a, b).value(), (Matrix(2, 2) << 5, 12, 21, 32).finished());
  EXPECT_EQ(matmul(a, b).value(), (Matrix(2, 2) << 19, 22, 43, 50).finished());
  EXPECT_DOUBLE_EQ(sum(a).item(), 10.0);
  EXPECT_DOUBLE_EQ(mean(a).item(), 2.5);
  EXPECT_EQ(row_sum(a).value(), (Matrix(2, 1) << 3, 7).finished());
}

TEST(Tensor, ShapeMismatchThrows) {
  const Tensor a = Tensor::constant(Matrix::Zero(2, 3));
  const Tensor b = Tensor::constant(Matrix::Zero(3, 2));
  EXPECT_THROW(a + b, DimensionError);
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(reshape(a, 4, 2), DimensionError);
}

TEST(Tensor, SoftmaxRowsSumToOneAndRespectMask) {
  const Matrix x = random_matrix(1, 3, 4);
  Mask m = Mask::Constant(3, 4, true);
  m(0, 1) = false;
  m(2, 0) = false;
  m(2, 3) = false;
  const Matrix p = softmax_rows(Tensor::constant(x), &m).value();
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-15);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_EQ(p(2, 0), 0.0);
  // Oracle: normalized exponentials over allowed entries of row 2.
  const double e1 = std::exp(x(2, 1)), e2 = std::exp(x(2, 2));
  EXPECT_NEAR(p(2, 1), e1 / (e1 + e2), 1e-15);
}

TEST(Tensor, SoftmaxFullyMaskedRowThrows) {
  Mask m = Mask::Constant(2, 2, true);
  m.row(1).setConstant(false);
  EXPECT_THROW(softmax_rows(Tensor::constant(Matrix::Zero(2, 2)), &m), ContractError);
}

TEST(Tensor, LayerNormMatchesManualComputation) {
  const Matrix x = random_matrix(2, 3, 5);
  const Matrix gain = random_matrix(3, 1, 5), bias = random_matrix(4, 1, 5);
  const Matrix y = layer_norm(Tensor::constant(x), Tensor::constant(gain), Tensor::constant(bias)).value();
  for (Index i = 0; i < 3; ++i) {
    double mu = 0.0, var = 0.0;
    for (Index j = 0; j < 5; ++j) mu += x(i, j) / 5.0;
    for (Index j = 0; j < 5; ++j) var += (x(i, j) - mu) * (x(i, j) - mu) / 5.0;
    for (Index j = 0; j < 5; ++j) {
      EXPECT_NEAR(y(i, j), gain(0, j) * (x(i, j) - mu) / std::sqrt(var + 1e-5) + bias(0, j), 1e-12);
    }
  }
}

TEST(Tensor, GeluMatchesErfForm) {
  const Matrix x = (Matrix(1, 4) << -3.0, -0.5, 0.0, 2.0).finished();
  const Matrix y = gelu(Tensor::constant(x)).value();
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(y(0, j), 0.5 * x(0, j) * (1.0 + std::erf(x(0, j) / std::sqrt(2.0))), 1e-15);
}

TEST(Tensor, StructuralOps) {
  const Matrix x = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  const Tensor t = Tensor::constant(x);
  EXPECT_EQ(reshape(t, 3, 2).value(), (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished());
  EXPECT_EQ(transpose(t).value(), x.transpose());
  EXPECT_EQ(slice_cols(t, 1, 2).value(), (Matrix(2, 2) << 2, 3, 5, 6).finished());
  EXPECT_EQ(slice_rows(t, 1, 1).value(), (Matrix(1, 3) << 4, 5, 6).finished());
  const Tensor first = Tensor::constant((Matrix(1, 3) << 9, 9, 9).finished());
  EXPECT_EQ(shift_down(t, first).value(), (Matrix(2, 3) << 9, 9, 9, 1, 2, 3).finished());
  const Tensor parts[] = {t, t};
  EXPECT_EQ(concat_cols(parts).value().cols(), 6);
  EXPECT_EQ(concat_rows(parts).value().rows(), 4);
  EXPECT_DOUBLE_EQ(mse(t, Tensor::constant(Matrix::Zero(2, 3))).item(), 91.0 / 6.0);
}

TEST(Tensor, CoefficientTokensLayout) {
  const Matrix values = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  const Matrix dir = (Matrix(2, 3) << 1, 0, 0, 0, 1, 0).finished();
  const Matrix off = Matrix::Constant(2, 3, 0.5);
  const Matrix y = coefficient_tokens(Tensor::constant(values), Tensor::constant(dir), Tensor::constant(off)).value();
  ASSERT_EQ(y.rows(), 4);
  EXPECT_EQ(y.row(3), (Matrix(1, 3) << 0.5, 4.5, 0.5).finished());
  EXPECT_EQ(y.row(0), (Matrix(1, 3) << 1.5, 0.5, 0.5).finished());
}

TEST(Tensor, GroupedMatmulsMatchPerBlockProducts) {
  const Index groups = 3, m = 2, n = 4, k = 5;
  const Matrix a = random_matrix(5, groups * m, k), b = random_matrix(6, groups * n, k);
  const Matrix nt = grouped_matmul_nt(Tensor::constant(a), Tensor::constant(b), groups).value();
  const Matrix v = random_matrix(7, groups * n, 3);
  const Matrix nn = grouped_matmul_nn(Tensor::constant(nt), Tensor::constant(v), groups).value();
  for (Index g = 0; g < groups; ++g) {
    const Matrix want = a.middleRows(g * m, m) * b.middleRows(g * n, n).transpose();
    EXPECT_LT((nt.middleRows(g * m, m) - want).cwiseAbs().maxCoeff(), 1e-12);
    const Matrix want_nn = want * v.middleRows(g * n, n);
    EXPECT_LT((nn.middleRows(g * m, m) - want_nn).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TensorGradient, ElementwiseOps) {
  const Matrix x = random_matrix(10, 3, 4);
  expect_op_gradient([](const Tensor& t) { return exp(t); }, x);
  expect_op_gradient([](const Tensor& t) { return square(t); }, x);
  expect_op_gradient([](const Tensor& t) { return gelu(t); }, x);
  expect_op_gradient([](const Tensor& t) { return -t; }, x);
  expect_op_gradient([](const Tensor& t) { return 2.5 * t; }, x);
  expect_op_gradient([](const Tensor& t) { return hadamard(t, t); }, x);
}

TEST(TensorGradient, ReductionsAndStructure) {
  const Matrix x = random_matrix(11, 4, 6);
  expect_op_gradient([](const Tensor& t) { return mean(t); }, x);
  expect_op_gradient([](const Tensor& t) { return row_sum(t); }, x);
  expect_op_gradient([](const Tensor& t) { return transpose(t); }, x);
  expect_op_gradient([](const Tensor& t) { return reshape(t, 3, 8); }, x);
  expect_op_gradient([](const Tensor& t) { return slice_cols(t, 2, 3); }, x);
  expect_op_gradient([](const Tensor& t) { return slice_rows(t, 1, 2); }, x);
  expect_op_gradient([](const Tensor& t) { return shift_down(t, slice_rows(t, 3, 1)); }, x);
  expect_op_gradient(
      [](const Tensor& t) {
        const Tensor parts[] = {t, square(t)};
        return concat_cols(parts);
      },
      x);
  expect_op_gradient(
      [](const Tensor& t) {
        const Tensor parts[] = {t, t};
        return concat_rows(parts);
      },
      x);
  expect_op_gradient([](const Tensor& t) { return add_row(t, slice_rows(t, 0, 1)); }, x);
}

TEST(TensorGradient, MatmulSoftmaxLayerNorm) {
  const Matrix x = random_matrix(12, 3, 5);
  const Matrix w = random_matrix(13, 5, 4);
  expect_op_gradient([&](const Tensor& t) { return matmul(t, Tensor::constant(w)); }, x);
  expect_op_gradient([&](const Tensor& t) { return matmul(Tensor::constant(w.transpose()), transpose(t)); }, x);
  Mask m = Mask::Constant(3, 5, true);
  m(0, 0) = false;
  m(1, 4) = false;
  expect_op_gradient([&](const Tensor& t) { return softmax_rows(t, &m); }, x);
  const Tensor gain = Tensor::constant(random_matrix(14, 1, 5));
  const Tensor bias = Tensor::constant(random_matrix(15, 1, 5));
  expect_op_gradient([&](const Tensor& t) { return layer_norm(t, gain, bias); }, x);
  expect_op_gradient([&](const Tensor& t) { return layer_norm(Tensor::constant(x), t, bias); }, random_matrix(16, 1, 5));
  expect_op_gradient([&](const Tensor& t) { return mse(t, Tensor::constant(w.topRows(3))); }, x.leftCols(4));
}

TEST(TensorGradient, TokensAndGroupedProducts) {
  const Matrix values = random_matrix(20, 3, 2);
  const Matrix dir = random_matrix(21, 2, 4), off = random_matrix(22, 2, 4);
  expect_op_gradient(
      [&](const Tensor& t) { return coefficient_tokens(t, Tensor::constant(dir), Tensor::constant(off)); }, values);
  expect_op_gradient(
      [&](const Tensor& t) { return coefficient_tokens(Tensor::constant(values), t, Tensor::constant(off)); }, dir);
  const Matrix b = random_matrix(23, 6, 4);
  expect_op_gradient([&](const Tensor& t) { return grouped_matmul_nt(t, Tensor::constant(b), 2); },
                     random_matrix(24, 4, 4));
  expect_op_gradient([&](const Tensor& t) { return grouped_matmul_nt(Tensor::constant(b), t, 2); },
                     random_matrix(25, 4, 4));
  expect_op_gradient([&](const Tensor& t) { return grouped_matmul_nn(t, Tensor::constant(b), 2); },
                     random_matrix(26, 4, 3));
  expect_op_gradient([&](const Tensor& t) { return grouped_matmul_nn(Tensor::constant(random_matrix(27, 4, 3)), t, 2); },
                     b);
}

TEST(TensorBackward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
  const Tensor y = hadamard(x, x);  // used twice below
  backward(sum(y + y));             // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(TensorBackward, ResetAndAccumulate) {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
  backward(2.0 * x);
  backward(2.0 * x);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 2.0);
  backward(2.0 * x, true);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 4.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.0);
}

TEST(TensorBackward, ConstantsAndNoGradGuard) {
  Tensor c = Tensor::constant(Matrix::Ones(2, 2));
  EXPECT_FALSE(c.requires_grad());
  Tensor p = Tensor::parameter(Matrix::Ones(2, 2));
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE((p + c).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE((p + c).requires_grad());
  EXPECT_FALSE(p.detach().requires_grad());
}

TEST(TensorBackward, NonScalarLossRejected) {
  Tensor p = Tensor::parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(backward(p + p), ContractError);
}

TEST(GradCheck, AgreesOnSmoothObjectiveAndRejectsNondeterminism) {
  Tensor w = Tensor::parameter(random_matrix(30, 3, 3));
  const Tensor x = Tensor::constant(random_matrix(31, 2, 3));
  const NamedTensor params[] = {{"w", w}};
  const GradCheckResult r = grad_check([&] { return sum(gelu(matmul(x, w))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.entries_checked, 9);
  int calls = 0;
  EXPECT_THROW(grad_check([&] { return (static_cast<double>(++calls)) * sum(w); }, params), ContractError);
}
