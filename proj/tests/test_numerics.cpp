#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "speechflow/conv.hpp"
#include "speechflow/error.hpp"
#include "speechflow/linalg.hpp"
#include "speechflow/rng.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {
namespace {

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const Tensor a = randn(rng, {3, 4});
  EXPECT_EQ(matmul(Tensor::identity(3), a), a);
}

TEST(Matmul, HandArithmetic) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{0}, {1}}));
  EXPECT_EQ(c, Tensor::matrix({{2}, {4}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  const Tensor a = randn(rng, {5, 7});
  const Tensor b = randn(rng, {7, 3});
  EXPECT_LE(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Lu, DiagonalLogDet) {
  EXPECT_NEAR(lu_decompose(Tensor::matrix({{2, 0}, {0, 3}})).log_abs_det(), std::log(6.0), 1e-15);
  EXPECT_EQ(lu_decompose(Tensor::identity(5)).log_abs_det(), 0.0);
}

TEST(Lu, MatchesCofactorDeterminant) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = randn(rng, {3, 3});
    const auto f = lu_decompose(a);
    const double det = f.det_sign() * std::exp(f.log_abs_det());
    EXPECT_LE(oracle::relative_error(det, oracle::cofactor_det(a)), 1e-10);
  }
}

TEST(Lu, ReconstructsPermutedInput) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const Tensor a = randn(rng, {n, n});
    const auto f = lu_decompose(a);
    const Tensor residual = f.permuted(a) - matmul(f.lower, f.upper);
    EXPECT_LE(residual.max_abs(), 1e-10 * a.max_abs() * n);
  }
}

TEST(Lu, SingularThrows) {
  EXPECT_THROW(lu_decompose(Tensor::matrix({{1, 2}, {2, 4}})), SingularMatrixError);
  EXPECT_THROW(lu_decompose(Tensor({2, 3})), DimensionError);
}

TEST(Lu, SolveRecoversRhs) {
  Rng rng(5);
  const Tensor a = randn(rng, {4, 4});
  const std::vector<double> x{1, -2, 0.5, 3};
  const Tensor b = matmul(a, Tensor({4, 1}, x));
  const auto solved = lu_decompose(a).solve(b.data());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(solved[i], x[i], 1e-10);
}

TEST(Inverse, ClosedForms) {
  EXPECT_EQ(mat_inverse(Tensor::identity(3)), Tensor::identity(3));
  EXPECT_LE(max_abs_diff(mat_inverse(Tensor::matrix({{2, 0}, {0, 4}})),
                         Tensor::matrix({{0.5, 0}, {0, 0.25}})),
            1e-15);
}

TEST(Inverse, ResidualIsSmall) {
  Rng rng(9);
  Tensor a = randn(rng, {4, 4});
  for (std::size_t i = 0; i < 4; ++i) a.at(i, i) += 4.0;  // well conditioned
  EXPECT_LE((matmul(a, mat_inverse(a)) - Tensor::identity(4)).max_abs(), 1e-8);
  EXPECT_THROW(mat_inverse(Tensor({2, 2})), SingularMatrixError);
}

TEST(Orthonormalize, ProducesOrthogonalMatrix) {
  Rng rng(2);
  const Tensor q = orthonormalize(randn(rng, {6, 6}));
  EXPECT_LE((matmul(transpose(q), q) - Tensor::identity(6)).max_abs(), 1e-12);
  EXPECT_NEAR(log_abs_det(q), 0.0, 1e-12);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(4);
  const Tensor x = randn(rng, {1, 5, 6});
  EXPECT_EQ(conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1})), x);
}

TEST(Conv2d, BiasOnly) {
  Rng rng(4);
  const Tensor x = randn(rng, {2, 4, 4});
  const Tensor y = conv2d(x, Tensor({3, 2, 3, 3}), Tensor({3}, 1.5));
  EXPECT_EQ(y, Tensor({3, 4, 4}, 1.5));
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(8);
  const Tensor x = randn(rng, {2, 4, 4});
  const Tensor k = randn(rng, {3, 2, 3, 3});
  const Tensor b = randn(rng, {3});
  EXPECT_LE(max_abs_diff(conv2d(x, k, b), oracle::direct_conv(x, k, b)), 1e-12);
  const Tensor k5 = randn(rng, {2, 2, 5, 3});
  EXPECT_LE(max_abs_diff(conv2d(x, k5, Tensor({2})), oracle::direct_conv(x, k5, Tensor({2}))), 1e-12);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(12);
  const Tensor x1 = randn(rng, {2, 5, 5}), x2 = randn(rng, {2, 5, 5});
  const Tensor k = randn(rng, {3, 2, 3, 3});
  const Tensor zero_bias({3});
  const double alpha = -1.7;
  const Tensor lhs = conv2d(alpha * x1 + x2, k, zero_bias);
  const Tensor rhs = alpha * conv2d(x1, k, zero_bias) + conv2d(x2, k, zero_bias);
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(Conv2d, RejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1})), DimensionError);
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 2, 2, 2}), Tensor({1})), DimensionError);
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 2, 3, 3}), Tensor({2})), DimensionError);
}

TEST(Conv2dBackward, ZeroCotangent) {
  Rng rng(6);
  const Tensor x = randn(rng, {2, 4, 4}), k = randn(rng, {3, 2, 3, 3});
  const auto g = conv2d_backward(Tensor({3, 4, 4}), x, k);
  EXPECT_EQ(g.x.max_abs(), 0.0);
  EXPECT_EQ(g.kernel.max_abs(), 0.0);
  EXPECT_EQ(g.bias.max_abs(), 0.0);
}

TEST(Conv2dBackward, IdentityKernelPassesGradient) {
  Rng rng(6);
  const Tensor x = randn(rng, {1, 4, 4}), go = randn(rng, {1, 4, 4});
  EXPECT_EQ(conv2d_backward(go, x, Tensor({1, 1, 1, 1}, 1.0)).x, go);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(10);
  Tensor x = randn(rng, {2, 4, 5});
  Tensor k = randn(rng, {3, 2, 3, 3});
  Tensor b = randn(rng, {3});
  const Tensor weights = randn(rng, {3, 4, 5});
  // Scalar objective <weights, conv(x)>, so grad_out == weights.
  auto objective = [&] { return dot(weights, conv2d(x, k, b)); };
  const auto g = conv2d_backward(weights, x, k);
  const double h = 1e-5;
  const Tensor fx = oracle::finite_difference(x, objective, h);
  const Tensor fk = oracle::finite_difference(k, objective, h);
  const Tensor fb = oracle::finite_difference(b, objective, h);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(oracle::relative_error(g.x[i], fx[i], 1e-4), 1e-6);
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_LE(oracle::relative_error(g.kernel[i], fk[i], 1e-4), 1e-6);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_LE(oracle::relative_error(g.bias[i], fb[i], 1e-4), 1e-6);
}

TEST(Randn, DeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  const Tensor ta = randn(a, {100});
  EXPECT_EQ(ta, randn(b, {100}));
  EXPECT_NE(ta, randn(c, {100}));
}

TEST(Randn, MomentsWithinTolerance) {
  Rng rng(123);
  const Tensor t = randn(rng, {100000});
  double mean = sum(t) / t.size();
  double var = 0.0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  var /= t.size();
  EXPECT_LT(std::abs(mean), 0.02);
  EXPECT_LT(std::abs(var - 1.0), 0.02);
}

TEST(Rng, DerivedStreamsAreIndependentOfParentState) {
  Rng a(5);
  const Rng d1 = a.derive(3);
  a.next_u64();
  EXPECT_EQ(a.derive(3), d1);
  EXPECT_NE(a.derive(4).seed(), d1.seed());
}

TEST(TensorIo, RoundTripAndHeaderLayout) {
  Rng rng(1);
  const Tensor t = randn(rng, {2, 3, 4});
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), tensor_record_bytes(t));
  EXPECT_EQ(bytes.substr(0, 4), "FSTN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kTensorFormatVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);   // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);  // first extent
  EXPECT_EQ(read_tensor(ss), t);
}

TEST(TensorIo, RejectsCorruptStreams) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor(bad), FormatError);
  std::stringstream truncated(std::string("FSTN\x01\x00\x00\x00", 8));
  EXPECT_THROW(read_tensor(truncated), FormatError);
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({0, 2}), DimensionError);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
}

}  // namespace
}  // namespace speechflow
