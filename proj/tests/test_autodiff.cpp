#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "gradcheck.hpp"
#include "prwm/autodiff.hpp"
#include "prwm/rng.hpp"
#include "prwm/tensor.hpp"
#include "prwm/world_model.hpp"

using namespace prwm;
using gradcheck::Builder;
using gradcheck::random_positive;
using gradcheck::random_tensor;

namespace {

void expect_grads_ok(const gradcheck::Result& r, double tol = 1e-6) {
  CHECK(r.checked > 0);
  CHECK(r.max_rel < tol);
}

}  // namespace

TEST_CASE("gradcheck: binary elementwise ops") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto w = random_tensor({3, 4}, rng);  // fixed cotangent mix-in

  for (int which = 0; which < 3; ++which) {
    Builder build = [which, w](const std::vector<ag::Var>& l) {
      ag::Var y;
      if (which == 0) y = ag::add(l[0], l[1]);
      if (which == 1) y = ag::sub(l[0], l[1]);
      if (which == 2) y = ag::mul(l[0], l[1]);
      return ag::sum(ag::mul(y, ag::Var::leaf(w)));
    };
    expect_grads_ok(gradcheck::check({a, b}, build));
  }
}

TEST_CASE("gradcheck: unary elementwise ops") {
  Rng rng(2);
  auto w = random_tensor({2, 5}, rng);

  auto weighted = [w](ag::Var y) { return ag::sum(ag::mul(y, ag::Var::leaf(w))); };

  SUBCASE("scale, add_const, square") {
    auto a = random_tensor({2, 5}, rng);
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::scale(l[0], -1.7)); }));
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::add_const(l[0], 2.5)); }));
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::square(l[0])); }));
  }
  SUBCASE("sigmoid, tanh, exp") {
    auto a = random_tensor({2, 5}, rng);
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::sigmoid(l[0])); }));
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::tanh_op(l[0])); }));
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::exp_op(l[0])); }));
  }
  SUBCASE("log on positive inputs") {
    auto a = random_positive({2, 5}, rng);
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::log_op(l[0])); }));
  }
  SUBCASE("relu away from the kink") {
    auto a = random_tensor({2, 5}, rng);
    for (auto& v : a.data)
      if (std::fabs(v) < 0.05) v = 0.1;
    expect_grads_ok(gradcheck::check(
        {a}, [&](const std::vector<ag::Var>& l) { return weighted(ag::relu(l[0])); }));
  }
}

TEST_CASE("relu forward clamps negatives") {
  auto x = ag::Var::leaf(Tensor::from({4}, {-1.0, 0.0, 0.5, -0.2}));
  Tensor y = ag::relu(x).value();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 0.0);
}

TEST_CASE("gradcheck: matmul and add_rowvec") {
  Rng rng(3);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto bias = random_tensor({2}, rng);
  auto w = random_tensor({3, 2}, rng);

  Builder build = [w](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::add_rowvec(ag::matmul(l[0], l[1]), l[2]), ag::Var::leaf(w)));
  };
  expect_grads_ok(gradcheck::check({a, b, bias}, build));
}

TEST_CASE("matmul value matches naive product") {
  auto a = ag::Var::leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = ag::Var::leaf(Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12}));
  Tensor c = ag::matmul(a, b).value();
  CHECK(c.dim(0) == 2);
  CHECK(c.dim(1) == 2);
  CHECK(c[0] == 58.0);
  CHECK(c[1] == 64.0);
  CHECK(c[2] == 139.0);
  CHECK(c[3] == 154.0);
}

TEST_CASE("gradcheck: concat, slice, reshape") {
  Rng rng(4);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 2}, rng);
  auto w = random_tensor({2, 5}, rng);
  Builder build_cat = [w](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::concat_cols(l[0], l[1]), ag::Var::leaf(w)));
  };
  expect_grads_ok(gradcheck::check({a, b}, build_cat));

  auto w2 = random_tensor({2, 2}, rng);
  Builder build_slice = [w2](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::slice_cols(l[0], 1, 2), ag::Var::leaf(w2)));
  };
  expect_grads_ok(gradcheck::check({a}, build_slice));

  auto w3 = random_tensor({6}, rng);
  Builder build_reshape = [w3](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::reshape(l[0], {6}), ag::Var::leaf(w3)));
  };
  expect_grads_ok(gradcheck::check({a}, build_reshape));
}

TEST_CASE("concat/slice values round-trip") {
  auto a = ag::Var::leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto b = ag::Var::leaf(Tensor::from({2, 1}, {9, 8}));
  ag::Var cat = ag::concat_cols(a, b);
  CHECK(cat.value().dim(1) == 3);
  CHECK(cat.value()[2] == 9.0);
  CHECK(cat.value()[5] == 8.0);
  Tensor back = ag::slice_cols(cat, 0, 2).value();
  for (int64_t i = 0; i < 4; ++i) CHECK(back[i] == a.value()[i]);
}

TEST_CASE("gradcheck: sum and mean") {
  Rng rng(5);
  auto a = random_tensor({3, 3}, rng);
  expect_grads_ok(gradcheck::check(
      {a}, [](const std::vector<ag::Var>& l) { return ag::sum(l[0]); }));
  expect_grads_ok(gradcheck::check(
      {a}, [](const std::vector<ag::Var>& l) { return ag::mean(ag::square(l[0])); }));
}

TEST_CASE("gradcheck: softmax and log_softmax rows") {
  Rng rng(6);
  auto a = random_tensor({3, 5}, rng, 2.0);
  auto w = random_tensor({3, 5}, rng);
  expect_grads_ok(gradcheck::check({a}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::softmax_rows(l[0]), ag::Var::leaf(w)));
  }));
  expect_grads_ok(gradcheck::check({a}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::log_softmax_rows(l[0]), ag::Var::leaf(w)));
  }));
}

TEST_CASE("softmax rows sum to one and shift-invariance holds") {
  Rng rng(7);
  auto a = random_tensor({4, 6}, rng, 3.0);
  Tensor sm = ag::softmax_rows(ag::Var::leaf(a)).value();
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += sm[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor shifted = a;
  for (auto& v : shifted.data) v += 123.0;  // per-row constant shift
  Tensor sm2 = ag::softmax_rows(ag::Var::leaf(shifted)).value();
  for (int64_t i = 0; i < sm.numel(); ++i)
    CHECK(sm2[i] == doctest::Approx(sm[i]).epsilon(1e-12));
}

TEST_CASE("gradcheck: pick_cols and rows_dot") {
  Rng rng(8);
  auto a = random_tensor({4, 3}, rng);
  std::vector<int> cols{2, 0, 1, 1};
  auto w = random_tensor({4}, rng);
  expect_grads_ok(gradcheck::check({a}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::pick_cols(l[0], cols), ag::Var::leaf(w)));
  }));
  auto wt = random_tensor({4, 3}, rng);
  expect_grads_ok(gradcheck::check({a}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::rows_dot(l[0], wt));
  }));
}

TEST_CASE("pick_cols selects the right entries") {
  auto a = ag::Var::leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  Tensor p = ag::pick_cols(a, {2, 0}).value();
  CHECK(p.numel() == 2);
  CHECK(p[0] == 3.0);
  CHECK(p[1] == 4.0);
}

TEST_CASE("gradcheck: losses against constant targets") {
  Rng rng(9);
  auto pred = random_tensor({3, 2}, rng);
  auto target = random_tensor({3, 2}, rng);
  expect_grads_ok(gradcheck::check({pred}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mse_vs(l[0], target));
  }));

  auto logits = random_tensor({4}, rng, 2.0);
  Tensor labels({4});
  labels[0] = 1.0;
  labels[2] = 1.0;
  expect_grads_ok(gradcheck::check({logits}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::bce_with_logits(l[0], labels));
  }));
}

TEST_CASE("bce_with_logits closed forms") {
  auto zero = ag::Var::leaf(Tensor::from({1}, {0.0}));
  Tensor one({1});
  one[0] = 1.0;
  CHECK(ag::bce_with_logits(zero, one).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Tensor zt({1});
  CHECK(ag::bce_with_logits(zero, zt).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Large logits stay finite.
  auto big = ag::Var::leaf(Tensor::from({2}, {50.0, -50.0}));
  Tensor tgt({2});
  tgt[0] = 1.0;
  Tensor v = ag::bce_with_logits(big, tgt).value();
  CHECK(v.all_finite());
  CHECK(v[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("gradcheck: conv2d and conv2d_transpose") {
  Rng rng(10);
  auto x = random_tensor({2, 2, 6, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto mix = random_tensor({2, 3, 2, 2}, rng);  // output of 6x5, k=3, stride=2 is 2x2
  expect_grads_ok(gradcheck::check({x, w, b}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::conv2d(l[0], l[1], l[2], 2), ag::Var::leaf(mix)));
  }));

  auto xt = random_tensor({2, 3, 3, 3}, rng);
  auto wt = random_tensor({3, 2, 4, 4}, rng);
  auto bt = random_tensor({2}, rng);
  // output H = (3-1)*2 + 4 + 1 = 9, W = (3-1)*2 + 4 + 0 = 8
  auto mixt = random_tensor({2, 2, 9, 8}, rng);
  expect_grads_ok(gradcheck::check({xt, wt, bt}, [&](const std::vector<ag::Var>& l) {
    return ag::sum(ag::mul(ag::conv2d_transpose(l[0], l[1], l[2], 2, 1, 0), ag::Var::leaf(mixt)));
  }));
}

TEST_CASE("conv2d value matches a hand-rolled window sum") {
  // 1x1x3x3 input, single 2x2 filter, stride 1: four overlapping windows.
  auto x = ag::Var::leaf(Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  auto w = ag::Var::leaf(Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1}));
  auto b = ag::Var::leaf(Tensor::from({1}, {0.5}));
  Tensor y = ag::conv2d(x, w, b, 1).value();
  REQUIRE(y.numel() == 4);
  CHECK(y[0] == 1 + 5 + 0.5);
  CHECK(y[1] == 2 + 6 + 0.5);
  CHECK(y[2] == 4 + 8 + 0.5);
  CHECK(y[3] == 5 + 9 + 0.5);
}

TEST_CASE("conv2d_transpose inverts conv2d shapes") {
  Rng rng(11);
  auto x = random_tensor({1, 4, 7, 6}, rng);
  auto w = random_tensor({4, 2, 4, 4}, rng);
  auto b = random_tensor({2}, rng);
  Tensor y = ag::conv2d_transpose(ag::Var::leaf(x), ag::Var::leaf(w), ag::Var::leaf(b), 2, 0, 1).value();
  CHECK(y.dim(0) == 1);
  CHECK(y.dim(1) == 2);
  CHECK(y.dim(2) == (7 - 1) * 2 + 4);
  CHECK(y.dim(3) == (6 - 1) * 2 + 4 + 1);
}

// ---------------------------------------------------------------------------
// Mixture-density likelihood
// ---------------------------------------------------------------------------

namespace {

// Direct-summation density oracle: softmax weights per dimension, Gaussian
// densities evaluated in direct (non-log) space, summed, then logged.
double mdn_row_oracle(const double* pi_raw, const double* mu, const double* log_sigma,
                      const double* target, int G, int L) {
  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    double mx = -1e300;
    for (int g = 0; g < G; ++g) mx = std::max(mx, pi_raw[g * L + i]);
    double denom = 0.0;
    for (int g = 0; g < G; ++g) denom += std::exp(pi_raw[g * L + i] - mx);
    double density = 0.0;
    for (int g = 0; g < G; ++g) {
      double weight = std::exp(pi_raw[g * L + i] - mx) / denom;
      double sigma = std::exp(log_sigma[g * L + i]);
      double d = (target[i] - mu[g * L + i]) / sigma;
      density += weight * std::exp(-0.5 * d * d) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    }
    total += -std::log(density);
  }
  return total / L;
}

}  // namespace

TEST_CASE("mdn_loss closed form: one component centered at the target") {
  const int G = 1, L = 3;
  MdnSingle out;
  out.mixtures = G;
  out.latent_dim = L;
  out.pi_logits.assign(size_t(G) * L, 0.7);  // any constant: softmax gives weight 1
  out.mu = {0.3, -1.2, 2.0};
  out.log_sigma.assign(size_t(G) * L, 0.0);
  std::vector<double> z = out.mu;
  double loss = mdn_loss(out, z, G, L);
  CHECK(loss == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
}

TEST_CASE("mdn_loss matches direct-summation oracle on random instances") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    int G = 1 + int(rng.uniform_int(0, 2));
    int L = 1 + int(rng.uniform_int(0, 3));
    MdnSingle out;
    out.mixtures = G;
    out.latent_dim = L;
    out.pi_logits.resize(size_t(G) * L);
    out.mu.resize(size_t(G) * L);
    out.log_sigma.resize(size_t(G) * L);
    std::vector<double> z(static_cast<size_t>(L));
    for (auto& v : out.pi_logits) v = rng.normal();
    for (auto& v : out.mu) v = 2.0 * rng.normal();
    for (auto& v : out.log_sigma) v = 0.5 * rng.normal();
    for (auto& v : z) v = 2.0 * rng.normal();

    double got = mdn_loss(out, z, G, L);
    double want = mdn_row_oracle(out.pi_logits.data(), out.mu.data(), out.log_sigma.data(),
                                 z.data(), G, L);
    CHECK(std::fabs(got - want) < 1e-9);
  }
}

TEST_CASE("duplicating a mixture component at half weight leaves the loss unchanged") {
  Rng rng(13);
  const int L = 3;
  MdnSingle base;
  base.mixtures = 2;
  base.latent_dim = L;
  base.pi_logits.resize(2 * L);
  base.mu.resize(2 * L);
  base.log_sigma.resize(2 * L);
  std::vector<double> z(L);
  for (auto& v : base.pi_logits) v = rng.normal();
  for (auto& v : base.mu) v = rng.normal();
  for (auto& v : base.log_sigma) v = 0.3 * rng.normal();
  for (auto& v : z) v = rng.normal();

  // Copy component 1 twice with logits shifted down by ln 2: the two copies
  // carry half the original weight each, so the mixture is unchanged.
  MdnSingle dup;
  dup.mixtures = 3;
  dup.latent_dim = L;
  dup.pi_logits.resize(3 * L);
  dup.mu.resize(3 * L);
  dup.log_sigma.resize(3 * L);
  for (int i = 0; i < L; ++i) {
    dup.pi_logits[0 * L + i] = base.pi_logits[0 * L + i];
    dup.mu[0 * L + i] = base.mu[0 * L + i];
    dup.log_sigma[0 * L + i] = base.log_sigma[0 * L + i];
    for (int copy = 1; copy <= 2; ++copy) {
      dup.pi_logits[copy * L + i] = base.pi_logits[1 * L + i] - std::log(2.0);
      dup.mu[copy * L + i] = base.mu[1 * L + i];
      dup.log_sigma[copy * L + i] = base.log_sigma[1 * L + i];
    }
  }
  double a = mdn_loss(base, z, 2, L);
  double b = mdn_loss(dup, z, 3, L);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("graph mdn_nll agrees with the scalar path row by row") {
  Rng rng(14);
  const int B = 4, G = 3, L = 4;
  auto pi = random_tensor({B, G * L}, rng);
  auto mu = random_tensor({B, G * L}, rng);
  auto ls = random_tensor({B, G * L}, rng, 0.4);
  auto z = random_tensor({B, L}, rng);
  Tensor nll = ag::mdn_nll(ag::Var::leaf(pi), ag::Var::leaf(mu), ag::Var::leaf(ls), z, G, L).value();
  REQUIRE(nll.numel() == B);
  for (int r = 0; r < B; ++r) {
    MdnSingle out;
    out.mixtures = G;
    out.latent_dim = L;
    out.pi_logits.assign(pi.data.begin() + r * G * L, pi.data.begin() + (r + 1) * G * L);
    out.mu.assign(mu.data.begin() + r * G * L, mu.data.begin() + (r + 1) * G * L);
    out.log_sigma.assign(ls.data.begin() + r * G * L, ls.data.begin() + (r + 1) * G * L);
    std::vector<double> zr(z.data.begin() + r * L, z.data.begin() + (r + 1) * L);
    CHECK(nll[r] == doctest::Approx(mdn_loss(out, zr, G, L)).epsilon(1e-12));
  }
}

TEST_CASE("mdn_nll stays finite fifty sigmas from the mean") {
  const int G = 2, L = 2;
  Tensor pi({1, G * L}, 0.0), mu({1, G * L}, 0.0), ls({1, G * L}, 0.0);
  Tensor z({1, L});
  z[0] = 50.0;
  z[1] = -50.0;
  Tensor v = ag::mdn_nll(ag::Var::leaf(pi), ag::Var::leaf(mu), ag::Var::leaf(ls), z, G, L).value();
  CHECK(v.all_finite());
  CHECK(v[0] > 100.0);  // ~ 0.5 * 50^2
}

TEST_CASE("gradcheck: mdn_nll") {
  Rng rng(15);
  const int B = 3, G = 2, L = 3;
  auto pi = random_tensor({B, G * L}, rng);
  auto mu = random_tensor({B, G * L}, rng);
  auto ls = random_tensor({B, G * L}, rng, 0.3);
  auto z = random_tensor({B, L}, rng);
  expect_grads_ok(gradcheck::check({pi, mu, ls}, [&](const std::vector<ag::Var>& l) {
    return ag::mean(ag::mdn_nll(l[0], l[1], l[2], z, G, L));
  }), 1e-5);
}

// ---------------------------------------------------------------------------
// Tempered cross entropy
// ---------------------------------------------------------------------------

TEST_CASE("tempered_xent value matches a naive softmax computation") {
  Rng rng(16);
  const int B = 3, A = 6;
  auto student = random_tensor({B, A}, rng, 2.0);
  auto teacher = random_tensor({B, A}, rng, 2.0);
  const double tau = 0.37;
  Tensor got = ag::tempered_xent(ag::Var::leaf(student), teacher, tau).value();
  REQUIRE(got.numel() == B);
  for (int r = 0; r < B; ++r) {
    auto soft = [&](const Tensor& t, int a) {
      double mx = -1e300;
      for (int j = 0; j < A; ++j) mx = std::max(mx, t[r * A + j] / tau);
      double denom = 0.0;
      for (int j = 0; j < A; ++j) denom += std::exp(t[r * A + j] / tau - mx);
      return std::exp(t[r * A + a] / tau - mx) / denom;
    };
    double want = 0.0;
    for (int a = 0; a < A; ++a) want -= soft(teacher, a) * std::log(soft(student, a));
    CHECK(got[r] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("gradcheck: tempered_xent") {
  Rng rng(17);
  const int B = 2, A = 5;
  auto student = random_tensor({B, A}, rng);
  auto teacher = random_tensor({B, A}, rng);
  for (double tau : {1.0, 0.25}) {
    expect_grads_ok(gradcheck::check({student}, [&, tau](const std::vector<ag::Var>& l) {
      return ag::mean(ag::tempered_xent(l[0], teacher, tau));
    }), 1e-5);
  }
}

TEST_CASE("tempered_xent gradient is exactly zero at the fixed point") {
  Rng rng(18);
  const int B = 8, A = 6;
  auto logits = random_tensor({B, A}, rng, 3.0);
  ag::Var student = ag::Var::leaf(logits, true);
  // Teacher is a bitwise copy of the student values.
  ag::Var loss = ag::sum(ag::tempered_xent(student, logits, 0.01));
  ag::backward(loss);
  const Tensor& g = student.grad();
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

// ---------------------------------------------------------------------------
// Composed recurrent model loss
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: composed recurrent mixture loss over a 4-step sequence") {
  // Exercises the full training graph: LSTM recurrence, head, mixture NLL,
  // reward MSE and done BCE, averaged across steps.
  ModelConfig cfg;
  cfg.latent_dim = 2;
  cfg.mixtures = 2;
  cfg.hidden = 6;
  cfg.action_count = 4;
  const int T = 4, B = 2;

  for (uint64_t seed : {101ull, 202ull, 303ull}) {
    WorldModel m(cfg, seed);
    Rng rng(derive_seed(seed, "gradcheck-data"));
    std::vector<Tensor> zs, z_next, rewards, dones, onehots;
    for (int t = 0; t < T; ++t) {
      zs.push_back(random_tensor({B, cfg.latent_dim}, rng));
      z_next.push_back(random_tensor({B, cfg.latent_dim}, rng));
      Tensor r({B}), d({B}), oh({B, cfg.action_count});
      for (int bi = 0; bi < B; ++bi) {
        r[bi] = double(rng.uniform_int(-1, 1));
        d[bi] = double(rng.uniform_int(0, 1));
        oh[bi * cfg.action_count + int(rng.uniform_int(0, cfg.action_count - 1))] = 1.0;
      }
      rewards.push_back(r);
      dones.push_back(d);
      onehots.push_back(oh);
    }

    auto build = [&]() {
      ag::Var h = ag::Var::leaf(Tensor({B, cfg.hidden}));
      ag::Var c = ag::Var::leaf(Tensor({B, cfg.hidden}));
      ag::Var total;
      for (int t = 0; t < T; ++t) {
        auto [h2, c2] = m.advance_graph(ag::Var::leaf(zs[size_t(t)]), h, c);
        h = h2;
        c = c2;
        auto hg = m.head_graph(h, onehots[size_t(t)]);
        ag::Var gmm = ag::mdn_nll(hg.pi_logits, hg.mu, hg.log_sigma, z_next[size_t(t)],
                                  cfg.mixtures, cfg.latent_dim);
        ag::Var rm = ag::mse_vs(hg.reward, rewards[size_t(t)]);
        ag::Var db = ag::bce_with_logits(hg.done_logit, dones[size_t(t)]);
        ag::Var step = ag::scale(ag::add(ag::add(gmm, rm), db), 1.0 / 3.0);
        total = total.defined() ? ag::add(total, step) : step;
      }
      return ag::scale(ag::mean(total), 1.0 / T);
    };

    m.params().zero_grad();
    ag::Var loss = build();
    ag::backward(loss);

    double max_rel = 0.0;
    int64_t checked = 0;
    const double eps = 1e-5;
    for (auto& [name, p] : m.params().items) {
      Tensor& value = p.value();
      const Tensor& grad = p.grad();
      for (int64_t i = 0; i < value.numel(); ++i) {
        double keep = value[i];
        value[i] = keep + eps;
        double fp = build().value()[0];
        value[i] = keep - eps;
        double fm = build().value()[0];
        value[i] = keep;
        double numeric = (fp - fm) / (2 * eps);
        max_rel = std::max(max_rel, gradcheck::rel_err(grad[i], numeric));
        ++checked;
      }
    }
    CHECK(checked == m.params().scalar_count());
    CHECK(max_rel < 1e-4);
  }
}
