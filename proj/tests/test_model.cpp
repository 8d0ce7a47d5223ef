#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "grad_check.hpp"
#include "tndvga/errors.hpp"
#include "tndvga/model.hpp"
#include "tndvga/synthgen.hpp"

using namespace tndvga;
using ad::Tape;
using ad::Var;

namespace {

ModelConfig small_config(std::size_t d = 2) {
  ModelConfig c;
  c.layout = {d, d, d, d};
  c.hidden_dim = 8;
  c.head_hidden_dim = 8;
  c.seed = 3;
  return c;
}

Dataset toy(std::size_t n = 30, std::uint64_t seed = 1) {
  GenConfig g;
  g.n = n;
  g.m_t = g.m_c = g.m_y = g.m_o = 2;
  g.seed = seed;
  return generate(g);
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

void zero_all(ParamStore& store) {
  for (auto& [name, p] : store) p.value.fill(0.0);
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(validate(c));
  c.layout.d_zc = 0;
  c.layout.d_zy = 0;
  CHECK_THROWS_AS(validate(c), InputError);
  c = small_config();
  c.gcn_layers = 4;
  CHECK_THROWS_AS(validate(c), InputError);
  c.gcn_layers = 0;
  CHECK_THROWS_AS(validate(c), InputError);
  c = small_config();
  c.gcn_layers = 2;
  const auto back = model_config_from_json(to_json(c));
  CHECK(back.layout == c.layout);
  CHECK(back.gcn_layers == 2);
  CHECK(back.hidden_dim == 8);
}

TEST_CASE("parameter initialisation is seeded") {
  const TndvgaModel m(small_config(), 8);
  const auto a = m.init_params();
  const auto b = m.init_params();
  CHECK(a.same_values(b));
  auto other = small_config();
  other.seed = 4;
  CHECK_FALSE(TndvgaModel(other, 8).init_params().same_values(a));
  CHECK(a.contains("enc.t.gcn0.W"));
  CHECK(a.contains("dec.y1.mean.W1"));
  CHECK(a.contains("aux.y0.logvar.b2"));
}

TEST_CASE("zero-width channel has no parameters and empty posterior") {
  auto c = small_config();
  c.layout.d_zo = 0;
  const TndvgaModel m(c, 8);
  auto store = m.init_params();
  CHECK_FALSE(store.contains("enc.o.gcn0.W"));
  const auto d = toy();
  Tape tape;
  const auto q = m.encode(tape, store, d.features, normalize_adjacency(d.adjacency));
  CHECK(q[3].mean.rows() == d.num_nodes());
  CHECK(q[3].mean.cols() == 0);
  CHECK(q[0].mean.cols() == 2);
}

TEST_CASE("zero weights give zero means and log variances") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  zero_all(store);
  const auto d = toy();
  Tape tape;
  const auto q = m.encode(tape, store, d.features, normalize_adjacency(d.adjacency));
  for (const auto& p : q) {
    for (double v : p.mean.value().values()) CHECK(v == 0.0);
    for (double v : p.log_var.value().values()) CHECK(v == 0.0);
  }
  const std::array<Var, 4> z{q[0].mean, q[1].mean, q[2].mean, q[3].mean};
  const auto x = m.decode_x(tape, store, z);
  CHECK(x.mean.rows() == d.num_nodes());
  CHECK(x.mean.cols() == 8);
  for (double v : x.log_var.value().values()) CHECK(v == 0.0);
  const auto t = m.decode_t(tape, store, q[0].mean, q[1].mean);
  CHECK(t.cols() == 1);
  for (double v : ad::sigmoid(t).value().values()) CHECK(v == 0.5);
}

TEST_CASE("isolated nodes are encoded independently") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  auto d = toy(30);
  const auto empty = normalize_adjacency(adjacency_from_edges(30, {}));
  Tape tape;
  const auto q = m.encode(tape, store, d.features, empty);
  Tensor x = d.features;
  for (std::size_t j = 0; j < 8; ++j) x(5, j) += 1.0;
  const auto q2 = m.encode(tape, store, x, empty);
  for (std::size_t i = 0; i < 30; ++i) {
    const bool changed = q[1].mean.value()(i, 0) != q2[1].mean.value()(i, 0) ||
                         q[1].mean.value()(i, 1) != q2[1].mean.value()(i, 1);
    if (i != 5) CHECK_FALSE(changed);
  }
}

TEST_CASE("encoding is permutation equivariant") {
  // Oracle: encode the permuted graph, undo the permutation, compare.
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  const auto d = toy(25, 4);
  const std::size_t n = d.num_nodes();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(2);
  std::shuffle(perm.begin(), perm.end(), rng);  // new index i holds old node perm[i]
  std::vector<std::size_t> inv(n);
  for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
  Tensor x = Tensor::matrix(n, 8);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 8; ++j) x(i, j) = d.features(perm[i], j);
  }
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (auto [a, b] : edge_list(d.adjacency)) edges.emplace_back(std::min(inv[a], inv[b]), std::max(inv[a], inv[b]));
  std::sort(edges.begin(), edges.end());
  Tape tape;
  const auto q = m.encode(tape, store, d.features, normalize_adjacency(d.adjacency));
  const auto qp = m.encode(tape, store, x, normalize_adjacency(adjacency_from_edges(n, edges)));
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(qp[c].mean.value()(inv[i], j) == doctest::Approx(q[c].mean.value()(i, j)).epsilon(1e-10));
        CHECK(qp[c].log_var.value()(inv[i], j) == doctest::Approx(q[c].log_var.value()(i, j)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("encode rejects shape mismatches") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  const auto d = toy();
  Tape tape;
  CHECK_THROWS_AS(m.encode(tape, store, Tensor::matrix(30, 7), normalize_adjacency(d.adjacency)), InputError);
  CHECK_THROWS_AS(m.encode(tape, store, d.features, SparseMatrix::identity(29)), InputError);
}

TEST_CASE("reparameterised sampling") {
  Tape tape;
  const GaussianPosterior q{tape.constant(Tensor::from_rows({{1.0, -2.0}})),
                            tape.constant(Tensor::from_rows({{-10.0, 0.0}}))};
  const auto z0 = TndvgaModel::sample(q, tape.constant(Tensor::matrix(1, 2)));
  CHECK(z0.value()(0, 0) == 1.0);
  CHECK(z0.value()(0, 1) == -2.0);
  const auto z1 = TndvgaModel::sample(q, tape.constant(Tensor::from_rows({{3.0, 0.0}})));
  CHECK(std::abs(z1.value()(0, 0) - 1.0) < 0.05);

  // Monte Carlo: sample variance matches exp(log_var).
  const double lv = 0.7;
  const std::size_t draws = 100000;
  std::mt19937_64 rng(5);
  Tape t2;
  const GaussianPosterior q2{t2.constant(Tensor::matrix(draws, 1, 0.3)), t2.constant(Tensor::matrix(draws, 1, lv))};
  const auto z = TndvgaModel::sample(q2, t2.constant(random_matrix(rng, draws, 1)));
  double m = 0.0, s2 = 0.0;
  for (double v : z.value().values()) m += v;
  m /= draws;
  for (double v : z.value().values()) s2 += (v - m) * (v - m);
  s2 /= draws - 1;
  const double var = std::exp(lv);
  CHECK(std::abs(s2 - var) < 3.0 * var * std::sqrt(2.0 / (draws - 1)));
  CHECK_THROWS_AS(TndvgaModel::sample(q, tape.constant(Tensor::matrix(2, 2))), InputError);
}

TEST_CASE("sampling gradients") {
  std::mt19937_64 rng(8);
  ParamStore store;
  store.add("m", random_matrix(rng, 3, 2));
  store.add("lv", random_matrix(rng, 3, 2));
  const Tensor noise = random_matrix(rng, 3, 2);
  auto res = testing::check_gradients(
      store,
      [&](Tape& tape, ParamStore& s) {
        const GaussianPosterior q{tape.param(s, "m"), tape.param(s, "lv")};
        return ad::sum(ad::square(TndvgaModel::sample(q, tape.constant(noise))));
      },
      1e-5, 1e-5, 1e-8);
  CHECK(res.ok());
}

TEST_CASE("two-headed outcome decoder selects by treatment") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  std::mt19937_64 rng(1);
  Tape tape;
  const Var zc = tape.constant(random_matrix(rng, 6, 2));
  const Var zy = tape.constant(random_matrix(rng, 6, 2));
  const Var in = ad::concat_cols({zc, zy});
  const auto f4 = m.head("dec.y1.mean").forward(tape, store, in).value();
  const auto f5 = m.head("dec.y0.mean").forward(tape, store, in).value();
  const auto f6 = m.head("dec.y1.logvar").forward(tape, store, in).value();

  const auto ones = m.decode_y(tape, store, tape.constant(Tensor::matrix(6, 1, 1.0)), zc, zy);
  const auto zeros = m.decode_y(tape, store, tape.constant(Tensor::matrix(6, 1, 0.0)), zc, zy);
  CHECK(ones.mean.value() == f4);
  CHECK(zeros.mean.value() == f5);
  for (std::size_t i = 0; i < 6; ++i) CHECK(ones.log_var.value()[i] == doctest::Approx(f6[i]));

  Tensor mixed = Tensor::matrix(6, 1, 0.0);
  mixed[2] = 1.0;
  const auto mix = m.decode_y(tape, store, tape.constant(mixed), zc, zy);
  for (std::size_t i = 0; i < 6; ++i) CHECK(mix.mean.value()[i] == (i == 2 ? f4[i] : f5[i]));

  // auxiliary heads have their own parameters
  const auto aux = m.aux_y(tape, store, tape.constant(Tensor::matrix(6, 1, 1.0)), zc, zy);
  CHECK_FALSE(aux.mean.value() == f4);
}

TEST_CASE("decoder log variance is clamped for extreme latents") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  Tape tape;
  std::array<Var, 4> z;
  for (auto& v : z) v = tape.constant(Tensor::matrix(3, 2, 100.0));
  const auto x = m.decode_x(tape, store, z);
  CHECK(x.mean.value().all_finite());
  for (double v : x.log_var.value().values()) {
    CHECK(v >= kLogVarMin);
    CHECK(v <= kLogVarMax);
  }
}

TEST_CASE("forward produces outputs over the requested rows") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  const auto d = toy();
  const auto adj = normalize_adjacency(d.adjacency);
  const std::vector<std::size_t> rows{0, 3, 7, 9};
  std::mt19937_64 rng(0);
  Tape tape;
  const auto out = m.forward(tape, store, d, adj, rows, rng);
  CHECK(out.rows == rows);
  CHECK(out.full_posteriors[0].mean.rows() == d.num_nodes());
  CHECK(out.posteriors[0].mean.rows() == 4);
  CHECK(out.latents[2].rows() == 4);
  CHECK(out.x.mean.cols() == 8);
  CHECK(out.treatment.value()[1] == d.treatment[3]);
  CHECK(out.outcome.value()[2] == d.outcome[7]);
}

TEST_CASE("predict_ite") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  const auto d = toy(40);
  const auto adj = normalize_adjacency(d.adjacency);
  const auto rows = all_rows(40);

  SUBCASE("deterministic given the sampling seed") {
    PredictOptions o{5, 7, false};
    const auto a = m.predict_ite(store, d.features, adj, rows, o);
    const auto b = m.predict_ite(store, d.features, adj, rows, o);
    CHECK(a.tau_hat == b.tau_hat);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(a.tau_hat[i] == doctest::Approx(a.y1_hat[i] - a.y0_hat[i]));
    o.seed = 8;
    CHECK_FALSE(m.predict_ite(store, d.features, adj, rows, o).tau_hat == a.tau_hat);
  }
  SUBCASE("zero noise matches posterior means") {
    const auto a = m.predict_ite(store, d.features, adj, rows, {1, 0, true});
    const auto b = m.predict_ite(store, d.features, adj, rows, {3, 9, true});
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(a.tau_hat[i] == doctest::Approx(b.tau_hat[i]));
  }
  SUBCASE("swapping outcome heads negates the effect") {
    const auto a = m.predict_ite(store, d.features, adj, rows, {4, 1, false});
    auto swapped = store;
    for (const char* leaf : {".W1", ".b1", ".W2", ".b2"}) {
      std::swap(swapped.at(std::string("dec.y1.mean") + leaf).value, swapped.at(std::string("dec.y0.mean") + leaf).value);
    }
    const auto b = m.predict_ite(swapped, d.features, adj, rows, {4, 1, false});
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(b.tau_hat[i] == doctest::Approx(-a.tau_hat[i]));
  }
  SUBCASE("invariant to instrument and noise channels") {
    const auto a = m.predict_ite(store, d.features, adj, rows, {6, 2, false});
    auto perturbed = store;
    for (auto& [name, p] : perturbed) {
      if (name.rfind("enc.t.", 0) == 0 || name.rfind("enc.o.", 0) == 0) {
        for (double& v : p.value.values()) v += 0.37;
      }
    }
    const auto b = m.predict_ite(perturbed, d.features, adj, rows, {6, 2, false});
    CHECK(a.tau_hat == b.tau_hat);
  }
  SUBCASE("variance across reseeds shrinks with more samples") {
    auto spread = [&](std::size_t l) {
      std::vector<double> first;
      for (std::uint64_t s = 0; s < 50; ++s) first.push_back(m.predict_ite(store, d.features, adj, {rows.data(), 1}, {l, s, false}).tau_hat[0]);
      const double mean = std::accumulate(first.begin(), first.end(), 0.0) / 50.0;
      double v = 0.0;
      for (double x : first) v += (x - mean) * (x - mean);
      return v / 49.0;
    };
    const double v1 = spread(1), v10 = spread(10), v100 = spread(100);
    CHECK(v10 < v1);
    CHECK(v100 < v10);
    CHECK(v1 / v100 > 20.0);
  }
  SUBCASE("rejects zero samples") {
    CHECK_THROWS_AS(m.predict_ite(store, d.features, adj, rows, {0, 0, false}), InputError);
  }
}

TEST_CASE("gradient check through encoder and heads") {
  const TndvgaModel m(small_config(), 8);
  auto store = m.init_params();
  const auto d = toy(30, 2);
  const auto adj = normalize_adjacency(d.adjacency);
  const std::vector<std::size_t> rows{0, 2, 4, 6, 8};
  auto res = testing::check_gradients(
      store,
      [&](Tape& tape, ParamStore& s) {
        std::mt19937_64 rng(1);
        const auto out = m.forward(tape, s, d, adj, rows, rng);
        return ad::sum(ad::square(out.x.mean)) + ad::sum(out.y.log_var) + ad::sum(out.aux_t_logits) +
               ad::sum(ad::square(out.aux_y.mean)) + ad::sum(out.t_logits) + ad::sum(ad::square(out.latents[0]));
      },
      1e-5, 1e-4, 1e-7);
  INFO(res.worst_entry);
  CHECK(res.ok());
}
