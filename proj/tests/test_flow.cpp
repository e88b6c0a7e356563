#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "speechflow/error.hpp"
#include "speechflow/flow.hpp"
#include "speechflow/linalg.hpp"

namespace speechflow {
namespace {

std::vector<double> as_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// ln|det| of the numerically assembled Jacobian of a tensor map.
double numerical_logdet(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
  const Shape shape = x.shape();
  const Tensor jac = oracle::numerical_jacobian(
      [&](const std::vector<double>& v) { return as_vector(f(Tensor(shape, v))); }, as_vector(x), h);
  return log_abs_det(jac);
}

CouplingParams random_coupling(std::size_t channels, std::size_t width, Rng& rng, double scale = 0.3) {
  CouplingParams p = CouplingParams::zero_output(channels, width, rng);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3})
    for (auto& v : t->data()) v += scale * rng.normal();
  return p;
}

TEST(ActNorm, IdentityParameters) {
  Rng rng(1);
  const Tensor x = randn(rng, {2, 3, 3});
  const auto out = actnorm_forward(ActNormParams::identity(2), x);
  EXPECT_EQ(out.y, x);
  EXPECT_EQ(out.logdet, 0.0);
}

TEST(ActNorm, ClosedFormLogdet) {
  ActNormParams p = ActNormParams::identity(2);
  p.log_scale.fill(std::log(2.0));
  Rng rng(2);
  const auto out = actnorm_forward(p, randn(rng, {2, 3, 3}));
  EXPECT_NEAR(out.logdet, 9 * 2 * std::log(2.0), 1e-12);
}

TEST(ActNorm, DataInitGivesUnitMoments) {
  Rng rng(3);
  std::vector<Tensor> batch;
  for (int i = 0; i < 8; ++i) {
    Tensor x = randn(rng, {3, 4, 4});
    for (std::size_t j = 0; j < 16; ++j) x[j] = 5.0 + 3.0 * x[j];  // shift channel 0
    batch.push_back(x);
  }
  ActNormParams p = ActNormParams::identity(3);
  p.initialized = false;
  EXPECT_THROW(actnorm_forward(p, batch[0]), InvalidArgument);
  actnorm_initialize(p, batch);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (const auto& x : batch) {
      const Tensor y = actnorm_forward(p, x).y;
      for (std::size_t i = 0; i < 16; ++i) {
        mean += y[c * 16 + i];
        sq += y[c * 16 + i] * y[c * 16 + i];
      }
    }
    mean /= 128;
    EXPECT_LT(std::abs(mean), 1e-8);
    EXPECT_LT(std::abs(sq / 128 - mean * mean - 1.0), 1e-8);
  }
}

TEST(ActNorm, InverseRecoversInput) {
  Rng rng(4);
  ActNormParams p{randn(rng, {3}), randn(rng, {3}), true};
  const Tensor x = randn(rng, {3, 5, 5});
  EXPECT_LE(max_abs_diff(actnorm_inverse(p, actnorm_forward(p, x).y), x), 1e-10);
}

TEST(InvConv, IdentityAndDiagonal) {
  Rng rng(5);
  const Tensor x = randn(rng, {2, 2, 2});
  const auto id = invconv_forward(InvConvParams::identity(2), x);
  EXPECT_EQ(id.y, x);
  EXPECT_EQ(id.logdet, 0.0);
  const auto diag = invconv_forward(InvConvParams{Tensor::matrix({{2, 0}, {0, 3}})}, x);
  EXPECT_NEAR(diag.logdet, 4 * std::log(6.0), 1e-12);
}

TEST(InvConv, LogdetMatchesNumericalJacobian) {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    InvConvParams p = InvConvParams::random_orthogonal(4, rng);
    for (auto& v : p.weight.data()) v += 0.3 * rng.normal();
    const Tensor x = randn(rng, {4, 2, 2});
    const double analytic = invconv_forward(p, x).logdet;
    const double numeric = numerical_logdet([&](const Tensor& t) { return invconv_forward(p, t).y; }, x);
    EXPECT_NEAR(analytic, numeric, 1e-6);
    EXPECT_LE(max_abs_diff(invconv_inverse(p, invconv_forward(p, x).y), x), 1e-10);
  }
}

TEST(InvConv, OrthogonalInitHasZeroLogdet) {
  Rng rng(7);
  const auto p = InvConvParams::random_orthogonal(8, rng);
  EXPECT_NEAR(log_abs_det(p.weight), 0.0, 1e-12);
}

TEST(InvConv, SingularWeightThrows) {
  const InvConvParams p{Tensor({2, 2}, 1.0)};
  EXPECT_THROW(invconv_forward(p, Tensor({2, 2, 2})), SingularMatrixError);
}

TEST(Coupling, ZeroOutputIsIdentity) {
  Rng rng(8);
  const auto p = CouplingParams::zero_output(4, 8, rng);
  const Tensor x = randn(rng, {4, 4, 4});
  const auto out = coupling_forward(p, x);
  EXPECT_EQ(out.y, x);
  EXPECT_EQ(out.logdet, 0.0);
}

TEST(Coupling, InverseRecoversInput) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_coupling(4, 6, rng);
    const Tensor x = randn(rng, {4, 4, 4});
    EXPECT_LE(max_abs_diff(coupling_inverse(p, coupling_forward(p, x).y), x), 1e-10);
  }
}

TEST(Coupling, LogdetMatchesNumericalJacobian) {
  Rng rng(10);
  const auto p = random_coupling(2, 6, rng);
  const Tensor x = randn(rng, {2, 4, 4});
  const double analytic = coupling_forward(p, x).logdet;
  EXPECT_NE(analytic, 0.0);
  const double numeric = numerical_logdet([&](const Tensor& t) { return coupling_forward(p, t).y; }, x);
  EXPECT_NEAR(analytic, numeric, 1e-6);
}

TEST(Coupling, OddChannelsRejected) {
  Rng rng(1);
  EXPECT_THROW(CouplingParams::zero_output(3, 4, rng), DimensionError);
}

TEST(Squeeze, ShapesAndInverse) {
  Rng rng(11);
  const Tensor x = randn(rng, {1, 4, 4});
  const Tensor y = squeeze(x);
  EXPECT_EQ(y.shape(), (Shape{4, 2, 2}));
  EXPECT_EQ(unsqueeze(y), x);
  auto a = as_vector(x), b = as_vector(y);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(y.at(1, 0, 0), x.at(0, 0, 1));  // block order (di, dj) -> 2 di + dj
  EXPECT_EQ(y.at(2, 1, 0), x.at(0, 3, 0));
  EXPECT_THROW(squeeze(Tensor({1, 3, 4})), DimensionError);
}

// Per-layer reverse passes against central differences of a scalar probe.
template <typename Forward, typename Backward>
void check_layer_gradients(const Tensor& x0, Forward forward, Backward backward, std::vector<Tensor*> params,
                           std::function<std::vector<Tensor*>()> grad_tensors, Rng& rng) {
  Tensor x = x0;
  const Tensor weights = randn(rng, x.shape());
  const double ld_weight = 0.7;
  auto objective = [&] {
    const LayerOutput out = forward(x);
    return dot(weights, out.y) + ld_weight * out.logdet;
  };
  const Tensor gx = backward(x, weights, ld_weight);
  const Tensor fx = oracle::finite_difference(x, objective, 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(oracle::relative_error(gx[i], fx[i], 1e-3), 1e-6) << i;
  const auto grads = grad_tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor fp = oracle::finite_difference(*params[k], objective, 1e-5);
    for (std::size_t i = 0; i < fp.size(); ++i)
      EXPECT_LE(oracle::relative_error((*grads[k])[i], fp[i], 1e-3), 1e-6) << "param " << k << " entry " << i;
  }
}

TEST(LayerGradients, ActNorm) {
  Rng rng(12);
  ActNormParams p{randn(rng, {3}), randn(rng, {3}), true};
  ActNormParams g{Tensor({3}), Tensor({3}), true};
  check_layer_gradients(
      randn(rng, {3, 3, 3}), [&](const Tensor& x) { return actnorm_forward(p, x); },
      [&](const Tensor& x, const Tensor& gy, double gl) { return actnorm_backward(p, x, gy, gl, g); },
      {&p.log_scale, &p.bias}, [&] { return std::vector<Tensor*>{&g.log_scale, &g.bias}; }, rng);
}

TEST(LayerGradients, InvConv) {
  Rng rng(13);
  InvConvParams p = InvConvParams::random_orthogonal(4, rng);
  for (auto& v : p.weight.data()) v += 0.2 * rng.normal();
  InvConvParams g{Tensor({4, 4})};
  check_layer_gradients(
      randn(rng, {4, 2, 3}), [&](const Tensor& x) { return invconv_forward(p, x); },
      [&](const Tensor& x, const Tensor& gy, double gl) { return invconv_backward(p, x, gy, gl, g); },
      {&p.weight}, [&] { return std::vector<Tensor*>{&g.weight}; }, rng);
}

TEST(LayerGradients, Coupling) {
  Rng rng(14);
  CouplingParams p = random_coupling(4, 5, rng);
  CouplingParams g{Tensor(p.w1.shape()), Tensor(p.b1.shape()), Tensor(p.w2.shape()),
                   Tensor(p.b2.shape()), Tensor(p.w3.shape()), Tensor(p.b3.shape())};
  check_layer_gradients(
      randn(rng, {4, 4, 4}), [&](const Tensor& x) { return coupling_forward(p, x); },
      [&](const Tensor& x, const Tensor& gy, double gl) {
        CouplingCache cache;
        coupling_forward(p, x, &cache);
        return coupling_backward(p, x, cache, gy, gl, g);
      },
      {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3},
      [&] { return std::vector<Tensor*>{&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3}; }, rng);
}

TEST(Layout, DeskConfigPartsCoverAllDimensions) {
  const auto layout = LatentLayout::for_config(FlowConfig::desk());
  ASSERT_EQ(layout.parts.size(), 3u);
  EXPECT_EQ(layout.parts[0].shape, (Shape{2, 16, 16}));
  EXPECT_EQ(layout.parts[1].shape, (Shape{4, 8, 8}));
  EXPECT_EQ(layout.parts[2].shape, (Shape{16, 4, 4}));
  EXPECT_EQ(layout.dims, 1024u);
  std::size_t total = 0;
  for (const auto& p : layout.parts) {
    EXPECT_EQ(p.offset, total);
    total += p.size();
  }
  EXPECT_EQ(total, layout.dims);
  EXPECT_EQ(layout, LatentLayout::for_config(FlowConfig::desk()));
  EXPECT_EQ(LatentLayout::for_config(FlowConfig::full()).dims, 288u * 288u);
}

TEST(Layout, ConfigValidation) {
  EXPECT_THROW((FlowConfig{3, 2, 8, 20}.validate()), InvalidArgument);
  EXPECT_THROW((FlowConfig{0, 2, 8, 16}.validate()), InvalidArgument);
}

TEST(Model, IdentityParametersPermuteInput) {
  const FlowConfig config{2, 2, 4, 8};
  const FlowModel m = FlowModel::identity(config);
  Rng rng(15);
  const Tensor x = randn(rng, {1, 8, 8});
  const Encoded e = m.forward(x);
  EXPECT_EQ(e.logdet, 0.0);
  auto a = as_vector(x), b = as_vector(e.code.flat);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(m.inverse(e.code), x);
}

TEST(Model, RoundTripWithRandomParameters) {
  Rng rng(16);
  FlowModel m(FlowConfig{3, 2, 8, 16}, rng);
  perturb_parameters(m, rng, 0.1);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = randn(rng, {1, 16, 16});
    EXPECT_LE(max_abs_diff(m.inverse(m.forward(x).code), x), 1e-8);
  }
  // Codes drawn from the prior re-encode to themselves.
  const LatentCode z{randn(rng, {m.layout().dims}), m.layout()};
  EXPECT_LE(max_abs_diff(m.forward(m.inverse(z)).code.flat, z.flat), 1e-8);
  EXPECT_TRUE(m.inverse(LatentCode{Tensor({m.layout().dims}), m.layout()}).all_finite());
}

TEST(Model, LogdetMatchesFullJacobian) {
  Rng rng(17);
  const FlowConfig config{1, 1, 4, 4};
  for (int trial = 0; trial < 5; ++trial) {
    FlowModel m(config, rng);
    perturb_parameters(m, rng, 0.3);
    const Tensor x = randn(rng, {1, 4, 4});
    const double analytic = m.forward(x).logdet;
    const double numeric = numerical_logdet([&](const Tensor& t) { return m.forward(t).code.flat; }, x);
    EXPECT_LE(oracle::relative_error(analytic, numeric, 1.0), 1e-6);
  }
}

TEST(Model, LogdetIndependentOfInputWithoutCoupling) {
  Rng rng(18);
  FlowModel m(FlowConfig{2, 2, 4, 8}, rng);
  perturb_parameters(m, rng, 0.2);
  for (auto& s : m.params()) {
    s.coupling.w3.fill(0.0);
    s.coupling.b3.fill(0.0);
  }
  const double a = m.forward(randn(rng, {1, 8, 8})).logdet;
  const double b = m.forward(randn(rng, {1, 8, 8})).logdet;
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Model, ErrorPaths) {
  Rng rng(19);
  FlowModel m(FlowConfig{2, 1, 4, 8}, rng);
  EXPECT_FALSE(m.initialized());
  EXPECT_THROW(m.forward(Tensor({1, 8, 8})), InvalidArgument);
  std::vector<Tensor> batch{randn(rng, {1, 8, 8}), randn(rng, {1, 8, 8})};
  m.initialize(batch);
  EXPECT_TRUE(m.initialized());
  EXPECT_THROW(m.forward(Tensor({1, 4, 4})), DimensionError);
  EXPECT_THROW(m.inverse(LatentCode{Tensor({10}), m.layout()}), DimensionError);
  m.step(0, 0).invconv.weight.fill(0.0);
  EXPECT_THROW(m.validate_params(), SingularMatrixError);
}

TEST(Model, NonFiniteActivationsNameTheLayer) {
  Rng rng(20);
  FlowModel m(FlowConfig{2, 1, 4, 8}, rng);
  perturb_parameters(m, rng, 0.1);
  m.step(1, 0).actnorm.log_scale[0] = 800.0;  // overflows exp
  try {
    m.forward(randn(rng, {1, 8, 8}));
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.layer(), 1);
  }
}

TEST(Model, DataInitThenForwardIsNormalizedAtFirstActnorm) {
  Rng rng(21);
  FlowModel m(FlowConfig{1, 1, 4, 4}, rng);
  std::vector<Tensor> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(3.0 * randn(rng, {1, 4, 4}) + Tensor({1, 4, 4}, 2.0));
  m.initialize(batch);
  double mean = 0.0;
  for (const auto& x : batch) mean += sum(actnorm_forward(m.step(0, 0).actnorm, squeeze(x)).y);
  EXPECT_NEAR(mean / (16 * 16), 0.0, 1e-10);
}

TEST(Prior, ClosedForms) {
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(prior_logprob(Tensor({4})), -2 * std::log(2 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(prior_logprob(Tensor({4})), -3.67575, 1e-5);
  EXPECT_NEAR(prior_logprob(Tensor({5})) - prior_logprob(Tensor({4})), -half_log_2pi, 1e-12);
  Rng rng(22);
  const Tensor z = randn(rng, {37});
  double ref = 0.0;
  for (double v : z.data()) ref += std::log(std::exp(-0.5 * v * v) / std::sqrt(2 * std::numbers::pi));
  EXPECT_NEAR(prior_logprob(z), ref, 1e-12);
}

TEST(LatentCode, LinearArithmetic) {
  const auto layout = LatentLayout::for_config(FlowConfig{1, 1, 2, 2});
  const LatentCode a{Tensor({4}, std::vector<double>{1, 2, 3, 4}), layout};
  const LatentCode b{Tensor({4}, std::vector<double>{4, 3, 2, 1}), layout};
  EXPECT_EQ((a + b).flat, Tensor({4}, 5.0));
  EXPECT_EQ((a - a).flat, Tensor({4}));
  EXPECT_EQ((2.0 * a).flat, Tensor({4}, std::vector<double>{2, 4, 6, 8}));
}

}  // namespace
}  // namespace speechflow
