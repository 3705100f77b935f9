#include <gtest/gtest.h>

#include <cmath>

#include "mgcnn/recurrent.hpp"

using namespace mgcnn;

namespace {

void randomize(LstmParams& p, Rng& rng, double scale = 0.5) {
  for (Matrix* w : {&p.wi, &p.wf, &p.wg, &p.wo})
    for (double& v : w->a) v = rng.uniform(-scale, scale);
  for (auto* b : {&p.bi, &p.bf, &p.bg, &p.bo})
    for (double& v : *b) v = rng.uniform(-scale, scale);
}

// Independent scalar transcription of the gate equations for hidden_size 1.
double scalar_lstm_step(double x0, double x1, double h, double c, double w, double b, double* c_out) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double pre = w * x0 + w * x1 + w * h + b;
  const double i = sig(pre);
  const double f = sig(pre);
  const double g = std::tanh(pre);
  const double o = sig(pre);
  const double cn = f * c + i * g;
  if (c_out) *c_out = cn;
  return o * std::tanh(cn);
}

}  // namespace

TEST(LstmStep, ZeroParamsFromZeroState) {
  auto p = make_lstm(3, 2);
  const auto next = lstm_step(zero_state(2), {1.0, -2.0, 0.5}, p);
  for (double v : next.h) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : next.c) EXPECT_DOUBLE_EQ(v, 0.0);
}

// Saturated forget gate with zero input weights preserves the cell state.
TEST(LstmStep, ForgetGateSaturationPreservesCell) {
  auto p = make_lstm(2, 2);
  p.bf = {20.0, 20.0};
  LstmState st{{0.0, 0.0}, {0.7, -1.3}};
  const auto next = lstm_step(st, {0.4, -0.9}, p);
  EXPECT_NEAR(next.c[0], 0.7, 1e-6);
  EXPECT_NEAR(next.c[1], -1.3, 1e-6);
}

TEST(LstmStep, HandComputedScalarCase) {
  auto p = make_lstm(2, 1);
  for (Matrix* w : {&p.wi, &p.wf, &p.wg, &p.wo})
    for (double& v : w->a) v = 0.5;
  const std::vector<double> x{1.0, 0.1};
  const auto next = lstm_step(zero_state(1), x, p);
  double c_ref = 0.0;
  const double h_ref = scalar_lstm_step(1.0, 0.1, 0.0, 0.0, 0.5, 0.0, &c_ref);
  EXPECT_NEAR(next.h[0], h_ref, 1e-14);
  EXPECT_NEAR(next.c[0], c_ref, 1e-14);
}

TEST(LstmStep, RejectsNonFiniteInput) {
  auto p = make_lstm(2, 1);
  EXPECT_THROW(lstm_step(zero_state(1), {1.0, std::nan("")}, p), numerical_error);
}

TEST(Unroll, SingleStepMatchesLstmStep) {
  Rng rng(61);
  auto p = make_lstm(4, 3);
  randomize(p, rng);
  const std::vector<double> feat{0.2, -0.4, 0.9};
  const auto hidden = unroll(feat, {0.35}, p);
  ASSERT_EQ(hidden.size(), 1u);
  const auto ref = lstm_step(zero_state(3), {0.2, -0.4, 0.9, 0.35}, p);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(hidden[0][j], ref.h[j]);
}

TEST(Unroll, ZeroParamsGiveZeroSeries) {
  auto p = make_lstm(2, 2);
  const auto hidden = unroll({0.5}, {0.0, 0.1, 0.2}, p);
  for (const auto& h : hidden)
    for (double v : h) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Unroll, EmptyStrainRejected) {
  auto p = make_lstm(2, 2);
  EXPECT_THROW(unroll({0.5}, {}, p), shape_error);
}

// Truncating the strain series reproduces the first k outputs exactly.
TEST(Unroll, Causality) {
  Rng rng(67);
  auto p = make_lstm(3, 4);
  randomize(p, rng);
  const std::vector<double> feat{0.3, -0.7};
  std::vector<double> strain;
  for (int t = 0; t < 12; ++t) strain.push_back(0.01 * t);
  const auto full = unroll(feat, strain, p);
  for (int k = 1; k <= 12; ++k) {
    const auto part = unroll(feat, std::vector<double>(strain.begin(), strain.begin() + k), p);
    for (int t = 0; t < k; ++t)
      for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(part[t][j], full[t][j]);
  }
}

TEST(Unroll, Deterministic) {
  Rng rng(71);
  auto p = make_lstm(3, 4);
  randomize(p, rng);
  const std::vector<double> feat{0.3, -0.7};
  const std::vector<double> strain{0.0, 0.1, 0.2, 0.3};
  const auto a = unroll(feat, strain, p);
  const auto b = unroll(feat, strain, p);
  for (size_t t = 0; t < a.size(); ++t)
    for (size_t j = 0; j < a[t].size(); ++j) EXPECT_EQ(a[t][j], b[t][j]);
}

// Full BPTT gradient against central finite differences, every gate matrix
// and bias plus the feature input path.
TEST(Unroll, GateJacobiansMatchFiniteDifferences) {
  Rng rng(73);
  auto p = make_lstm(3, 2);
  randomize(p, rng);
  const std::vector<double> feat{0.4, -0.2};
  const std::vector<double> strain{0.0, 0.05, 0.1, 0.15, 0.2};
  auto head = make_dense(2, 1, Activation::linear);
  head.w(0, 0) = 0.8;
  head.w(1, 0) = -0.5;
  head.b = {0.1};

  auto loss_of = [&](const LstmParams& q, const std::vector<double>& f) {
    const auto hidden = unroll(f, strain, q);
    const auto y = linear_head(hidden, head);
    double l = 0.0;
    for (double v : y) l += v * v;
    return 0.5 * l;
  };

  std::vector<LstmStepCache> caches;
  const auto hidden = unroll(feat, strain, p, &caches);
  const auto y = linear_head(hidden, head);
  std::vector<std::vector<double>> dh(strain.size(), std::vector<double>(2, 0.0));
  for (size_t t = 0; t < strain.size(); ++t)
    for (int j = 0; j < 2; ++j) dh[t][j] = y[t] * head.w(j, 0);
  auto grad = make_lstm(3, 2);
  const auto dfeat = unroll_backward(caches, dh, p, grad);

  const double h = 1e-5;
  auto check_matrix = [&](Matrix LstmParams::* member, const char* name) {
    for (size_t k = 0; k < (p.*member).a.size(); ++k) {
      auto q = p;
      (q.*member).a[k] += h;
      const double up = loss_of(q, feat);
      (q.*member).a[k] -= 2 * h;
      const double dn = loss_of(q, feat);
      const double fd = (up - dn) / (2 * h);
      const double an = (grad.*member).a[k];
      const double rel = std::abs(fd - an) / std::max(1e-8, std::abs(fd));
      EXPECT_LT(rel, 1e-5) << name << "[" << k << "]";
    }
  };
  check_matrix(&LstmParams::wi, "wi");
  check_matrix(&LstmParams::wf, "wf");
  check_matrix(&LstmParams::wg, "wg");
  check_matrix(&LstmParams::wo, "wo");
  for (size_t k = 0; k < feat.size(); ++k) {
    auto f = feat;
    f[k] += h;
    const double up = loss_of(p, f);
    f[k] -= 2 * h;
    const double dn = loss_of(p, f);
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(dfeat[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(LinearHead, Cases) {
  auto head = make_dense(1, 1, Activation::linear);
  head.b = {0.25};
  const std::vector<std::vector<double>> hidden{{1.0}, {2.0}, {-3.0}};
  // W = 0: constant bias
  const auto yb = linear_head(hidden, head);
  for (double v : yb) EXPECT_DOUBLE_EQ(v, 0.25);
  // identity on hidden_size 1
  head.w(0, 0) = 1.0;
  head.b = {0.0};
  const auto yi = linear_head(hidden, head);
  EXPECT_DOUBLE_EQ(yi[0], 1.0);
  EXPECT_DOUBLE_EQ(yi[2], -3.0);
  // hand 2-step case with hidden_size 2
  auto h2 = make_dense(2, 1, Activation::linear);
  h2.w(0, 0) = 2.0;
  h2.w(1, 0) = -1.0;
  h2.b = {0.5};
  const auto y2 = linear_head({{1.0, 1.0}, {0.5, -0.5}}, h2);
  EXPECT_DOUBLE_EQ(y2[0], 2.0 - 1.0 + 0.5);
  EXPECT_DOUBLE_EQ(y2[1], 1.0 + 0.5 + 0.5);
}

TEST(Trajectory, Validation) {
  Trajectory t;
  t.strain = {0.0, 0.1, 0.2};
  t.stress = {0.0, 5.0, 9.0};
  t.validate();
  t.strain = {0.0};
  t.stress = {0.0};
  EXPECT_THROW(t.validate(), shape_error);
  t.strain = {0.0, 0.2, 0.1};
  t.stress = {0.0, 5.0, 9.0};
  EXPECT_THROW(t.validate(), shape_error);
}
