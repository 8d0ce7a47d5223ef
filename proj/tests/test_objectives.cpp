#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "grad_check.hpp"
#include "tndvga/errors.hpp"
#include "tndvga/objectives.hpp"
#include "tndvga/synthgen.hpp"

using namespace tndvga;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

// Direct O(n^4) evaluation of the unbiased estimator, one index tuple at a time.
double naive_hsic(const Tensor& u, const Tensor& v, double su, double sv) {
  const std::size_t n = u.rows();
  auto kern = [](const Tensor& x, std::size_t i, std::size_t j, double s) {
    if (i == j) return 0.0;
    double d = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) d += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
    return std::exp(-d / (2 * s * s));
  };
  double t1 = 0.0, skk = 0.0, sll = 0.0, t3 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      t1 += kern(u, i, j, su) * kern(v, i, j, sv);
      skk += kern(u, i, j, su);
      sll += kern(v, i, j, sv);
      for (std::size_t q = 0; q < n; ++q) t3 += kern(u, i, j, su) * kern(v, j, q, sv);
    }
  }
  const double nn = static_cast<double>(n);
  return (t1 + skk * sll / ((nn - 1) * (nn - 2)) - 2.0 / (nn - 2) * t3) / (nn * (nn - 3));
}

double brute_force_w1(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) d += (a(i, k) - b(p[i], k)) * (a(i, k) - b(p[i], k));
      c += std::sqrt(d);
    }
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST_CASE("KL of a standard normal is zero and matches the closed form") {
  Tape tape;
  const GaussianPosterior std_normal{tape.constant(Tensor::matrix(3, 2)), tape.constant(Tensor::matrix(3, 2))};
  CHECK(kl_diag_gaussian(std_normal).value().item() == 0.0);
  const GaussianPosterior q{tape.constant(Tensor::from_rows({{1.0, 0.0}, {0.0, 0.0}})),
                            tape.constant(Tensor::from_rows({{0.0, std::log(2.0)}, {0.0, 0.0}}))};
  // row 0: 0.5*(1) + 0.5*(2 - log 2 - 1); row 1: 0
  const double expected = 0.5 * (0.5 + 0.5 * (1.0 - std::log(2.0)));
  CHECK(kl_diag_gaussian(q).value().item() == doctest::Approx(expected));
}

TEST_CASE("KL matches a Monte Carlo oracle") {
  const double mu = 0.6, lv = -0.4;
  Tape tape;
  const GaussianPosterior q{tape.constant(Tensor::from_rows({{mu}})), tape.constant(Tensor::from_rows({{lv}}))};
  const double kl = kl_diag_gaussian(q).value().item();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t draws = 200000;
  const double sd = std::exp(0.5 * lv);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double z = mu + sd * nd(rng);
    const double e = (z - mu) / sd;
    const double log_ratio = -0.5 * e * e - std::log(sd) + 0.5 * z * z;
    s += log_ratio;
    s2 += log_ratio * log_ratio;
  }
  const double m = s / draws;
  const double se = std::sqrt((s2 / draws - m * m) / draws);
  CHECK(std::abs(m - kl) < 3 * se);
}

TEST_CASE("Gaussian and Bernoulli likelihoods") {
  Tape tape;
  const GaussianHead h{tape.constant(Tensor::from_rows({{0.5}, {-1.0}})),
                       tape.constant(Tensor::from_rows({{0.0}, {std::log(4.0)}}))};
  const Var v = tape.constant(Tensor::from_rows({{1.5}, {-1.0}}));
  const double l2pi = std::log(2 * M_PI);
  const double expected = 0.5 * ((0.5 * (l2pi + 1.0)) + 0.5 * (l2pi + std::log(4.0)));
  CHECK(gaussian_nll(v, h).value().item() == doctest::Approx(expected));

  const Var t = tape.constant(Tensor::from_rows({{1.0}, {0.0}, {1.0}}));
  const Var l = tape.constant(Tensor::from_rows({{0.0}, {2.0}, {-30.0}}));
  const double b = (std::log(2.0) + std::log1p(std::exp(2.0)) + 30.0 + std::log1p(std::exp(-30.0))) / 3.0;
  CHECK(bernoulli_nll(t, l).value().item() == doctest::Approx(b));
  const Var big = tape.constant(Tensor::from_rows({{800.0}}));
  CHECK(std::isfinite(bernoulli_nll(tape.constant(Tensor::from_rows({{0.0}})), big).value().item()));
}

TEST_CASE("median bandwidth") {
  // pairwise distances 1, 2, 3 -> median 2
  CHECK(median_bandwidth(Tensor::from_rows({{0.0}, {1.0}, {3.0}})) == doctest::Approx(2.0));
  // four points on a line: distances 1,1,1,2,2,3 -> (1 + 2) / 2
  CHECK(median_bandwidth(Tensor::from_rows({{0.0}, {1.0}, {2.0}, {3.0}})) == doctest::Approx(1.5));
  CHECK(median_bandwidth(Tensor::matrix(5, 2)) == doctest::Approx(1e-8));
}

TEST_CASE("rbf gram") {
  const auto k = rbf_gram(Tensor::from_rows({{0.0}, {1.0}}), 1.0);
  CHECK(k(0, 0) == 0.0);
  CHECK(k(0, 1) == doctest::Approx(std::exp(-0.5)));
  CHECK(k(1, 0) == k(0, 1));
}

TEST_CASE("HSIC equals the naive estimator") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> nd(5, 9), dd(1, 3);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = nd(rng);
    const Tensor u = random_matrix(rng, n, dd(rng));
    const Tensor v = random_matrix(rng, n, dd(rng));
    const double su = median_bandwidth(u), sv = median_bandwidth(v);
    Tape tape;
    const double h = hsic_unbiased(tape.constant(u), tape.constant(v)).value().item();
    CHECK(h == doctest::Approx(naive_hsic(u, v, su, sv)).epsilon(1e-10));
    CHECK(hsic_from_grams(rbf_gram(u, su), rbf_gram(v, sv)) == doctest::Approx(h).epsilon(1e-10));
  }
}

TEST_CASE("HSIC separates dependence from independence") {
  std::mt19937_64 rng(4);
  const Tensor u = random_matrix(rng, 200, 2);
  const Tensor indep = random_matrix(rng, 200, 2);
  Tensor dep = u;
  for (double& x : dep.values()) x = x * x;
  Tape tape;
  const double h_ind = hsic_unbiased(tape.constant(u), tape.constant(indep)).value().item();
  const double h_dep = hsic_unbiased(tape.constant(u), tape.constant(dep)).value().item();
  CHECK(h_dep > 10 * std::abs(h_ind));
  CHECK_THROWS_AS(hsic_unbiased(tape.constant(Tensor::matrix(3, 1)), tape.constant(Tensor::matrix(3, 1))), InputError);
}

TEST_CASE("HSIC gradient with fixed bandwidths") {
  std::mt19937_64 rng(5);
  ParamStore store;
  store.add("u", random_matrix(rng, 7, 2));
  store.add("v", random_matrix(rng, 7, 1));
  auto res = testing::check_gradients(
      store,
      [](Tape& tape, ParamStore& s) { return hsic_unbiased(tape.param(s, "u"), tape.param(s, "v"), 1.3, 0.8); },
      1e-5, 1e-4, 1e-9);
  INFO(res.worst_entry);
  CHECK(res.ok());
}

TEST_CASE("indep_loss sums channel pairs and skips empty channels") {
  std::mt19937_64 rng(6);
  Tape tape;
  std::array<Var, 4> z;
  for (std::size_t c = 0; c < 3; ++c) z[c] = tape.constant(random_matrix(rng, 10, 2));
  z[3] = tape.constant(Tensor::matrix(10, 0));
  double expected = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) expected += hsic_unbiased(z[a], z[b]).value().item();
  }
  CHECK(indep_loss(z).value().item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sinkhorn approximates exact transport") {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rep % 4;
    const Tensor a = random_matrix(rng, n, 2), b = random_matrix(rng, n, 2);
    double cmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < 2; ++k) d += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
        cmax = std::max(cmax, std::sqrt(d));
      }
    }
    Tape tape;
    const double w = sinkhorn_w1(tape.constant(a), tape.constant(b), 0.01 * cmax, 500).value().item();
    const double exact = brute_force_w1(a, b);
    CHECK(std::abs(w - exact) <= 0.05 * exact);
  }
}

TEST_CASE("sinkhorn of identical sets is small and gradient is finite") {
  std::mt19937_64 rng(10);
  const Tensor a = random_matrix(rng, 6, 3);
  Tape tape;
  const Var va = tape.constant(a);
  CHECK(sinkhorn_w1(va, va, 0.001, 500).value().item() < 1e-2);

  ParamStore store;
  store.add("a", random_matrix(rng, 5, 2));
  const Tensor b = random_matrix(rng, 4, 2);
  auto res = testing::check_gradients(
      store, [&](Tape& t, ParamStore& s) { return sinkhorn_w1(t.param(s, "a"), t.constant(b), 0.3, 5); }, 1e-6, 1e-4,
      1e-8);
  INFO(res.worst_entry);
  CHECK(res.ok());
}

TEST_CASE("sinkhorn gradient with automatic epsilon") {
  std::mt19937_64 rng(13);
  ParamStore store;
  store.add("a", random_matrix(rng, 4, 2));
  const Tensor b = random_matrix(rng, 5, 2);
  auto res = testing::check_gradients(
      store, [&](Tape& t, ParamStore& s) { return sinkhorn_w1(t.param(s, "a"), t.constant(b), 0.0, 5); }, 1e-6, 1e-4,
      1e-8);
  INFO(res.worst_entry);
  CHECK(res.ok());
}

TEST_CASE("disc_loss") {
  std::mt19937_64 rng(12);
  Tape tape;
  const Var z = tape.constant(random_matrix(rng, 6, 2));
  const std::vector<int> t{1, 0, 1, 0, 0, 1};
  CHECK(disc_loss(z, t).value().item() > 0.0);
  CHECK(disc_loss(tape.constant(Tensor::matrix(6, 0)), t).value().item() == 0.0);
  CHECK_THROWS_AS(disc_loss(z, std::vector<int>(6, 1)), InputError);
  CHECK_THROWS_AS(disc_loss(z, std::vector<int>(5, 1)), InputError);
}

TEST_CASE("total_loss assembly") {
  GenConfig g;
  g.n = 40;
  g.m_t = g.m_c = g.m_y = g.m_o = 2;
  const auto d = generate(g);
  ModelConfig mc;
  mc.layout = {2, 2, 2, 2};
  mc.hidden_dim = mc.head_hidden_dim = 8;
  const TndvgaModel m(mc, 8);
  auto store = m.init_params();
  const auto adj = normalize_adjacency(d.adjacency);
  const auto& rows = d.splits->train;

  auto run = [&](const LossWeights& w) {
    std::mt19937_64 rng(1);
    Tape tape;
    const auto out = m.forward(tape, store, d, adj, rows, rng);
    return total_loss(out, store, w).breakdown;
  };
  const LossWeights w{2.0, 3.0, 0.5, 0.25, 1e-3};
  const auto b = run(w);
  CHECK(b.l2 == doctest::Approx(1e-3 * store.squared_norm()));
  CHECK(b.total == doctest::Approx(b.elbo + 2.0 * b.treat + 3.0 * b.pred + 0.5 * b.indep + 0.25 * b.disc + b.l2));
  CHECK(b.disc > 0.0);

  const auto z = run({2.0, 3.0, 0.0, 0.0, 1e-3});
  CHECK(z.indep == 0.0);
  CHECK(z.disc == 0.0);
  CHECK(z.elbo == doctest::Approx(b.elbo));

  // elbo equals the reconstruction terms plus the four KLs
  std::mt19937_64 rng(1);
  Tape tape;
  const auto out = m.forward(tape, store, d, adj, rows, rng);
  const auto rec = recon_losses(out);
  double kl = 0.0;
  for (const auto& q : out.posteriors) kl += kl_diag_gaussian(q).value().item();
  const double elbo = rec.nll_x.value().item() + rec.nll_t.value().item() + rec.nll_y.value().item() + kl;
  CHECK(b.elbo == doctest::Approx(elbo));
  const auto aux = aux_losses(out);
  CHECK(b.treat == doctest::Approx(aux.treat.value().item()));
  CHECK(b.pred == doctest::Approx(aux.pred.value().item()));

  CHECK_THROWS_AS(validate(LossWeights{-1.0, 1, 1, 1, 0}), InputError);
}
