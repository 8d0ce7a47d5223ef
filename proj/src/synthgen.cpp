#include "tndvga/synthgen.hpp"

#include <cmath>
#include <random>

#include "tndvga/errors.hpp"

namespace tndvga {
namespace {

enum class Stream : std::uint64_t { kLatent = 1, kEdges, kTheta, kAssign, kOutcomeCoef, kNoise, kSplit };

std::mt19937_64 stream(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

}  // namespace

void validate(const GenConfig& c) {
  if (c.n < 10) throw InputError("generator needs n >= 10");
  if (!(c.zeta >= 0.0) || !std::isfinite(c.zeta)) throw InputError("zeta must be finite and >= 0");
  if (c.m_c + c.m_y == 0) throw InputError("m_c + m_y must be positive (outcomes depend on them)");
}

nlohmann::json to_json(const GenConfig& c) {
  return {{"n", c.n},     {"m_t", c.m_t},   {"m_c", c.m_c},  {"m_y", c.m_y},
          {"m_o", c.m_o}, {"zeta", c.zeta}, {"seed", c.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("generator config must be a JSON object");
  GenConfig c;
  try {
    c.n = j.value("n", c.n);
    c.m_t = j.value("m_t", c.m_t);
    c.m_c = j.value("m_c", c.m_c);
    c.m_y = j.value("m_y", c.m_y);
    c.m_o = j.value("m_o", c.m_o);
    c.zeta = j.value("zeta", c.zeta);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed generator config: ") + e.what());
  }
  validate(c);
  return c;
}

double edge_probability(std::span<const double> h_i, std::span<const double> h_j) {
  double dot = 0.0;
  for (std::size_t k = 0; k < h_i.size(); ++k) dot += h_i[k] * h_j[k];
  return 0.01 * logistic(dot + 1.0);
}

Dataset generate(const GenConfig& config) {
  validate(config);
  const std::size_t n = config.n;
  const std::size_t k = config.feature_dim();
  const std::size_t psi_dim = config.m_t + config.m_c;
  const std::size_t phi_dim = config.m_c + config.m_y;

  Dataset d;
  // x = concat(z_t, z_c, z_y, z_o); every block is i.i.d. standard normal.
  {
    auto rng = stream(config.seed, Stream::kLatent);
    d.features = Tensor(Shape{n, k}, normal_vector(rng, n * k));
  }

  {
    auto rng = stream(config.seed, Stream::kEdges);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const double> hi(d.features.data() + i * k, k);
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::span<const double> hj(d.features.data() + j * k, k);
        if (u(rng) < edge_probability(hi, hj)) {
          t.push_back({i, j, 1.0});
          t.push_back({j, i, 1.0});
        }
      }
    }
    d.adjacency = SparseMatrix(n, n, std::move(t));
  }

  // Treatment: s_i = Psi_i . theta + 1, t_i ~ Bernoulli(sigmoid(zeta * s_i)).
  std::vector<double> theta;
  {
    auto theta_rng = stream(config.seed, Stream::kTheta);
    auto assign_rng = stream(config.seed, Stream::kAssign);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> uniforms(n);
    for (double& x : uniforms) x = u(assign_rng);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      theta = normal_vector(theta_rng, psi_dim);
      d.treatment.assign(n, 0);
      std::size_t treated = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 1.0;
        for (std::size_t j = 0; j < psi_dim; ++j) s += d.features(i, j) * theta[j];
        d.treatment[i] = uniforms[i] < logistic(config.zeta * s) ? 1 : 0;
        treated += static_cast<std::size_t>(d.treatment[i]);
      }
      ok = treated > 0 && treated < n;
    }
    if (!ok) throw NumericalError("treatment assignment degenerate after 100 coefficient draws");
  }

  // Outcomes over Phi = concat(z_c, z_y), which starts at column m_t.
  std::vector<double> nu0, nu1;
  {
    auto rng = stream(config.seed, Stream::kOutcomeCoef);
    nu0 = normal_vector(rng, phi_dim);
    nu1 = normal_vector(rng, phi_dim);
  }
  auto noise_rng = stream(config.seed, Stream::kNoise);
  std::normal_distribution<double> normal(0.0, 1.0);
  GroundTruth truth;
  truth.mu0.resize(n);
  truth.mu1.resize(n);
  d.outcome.resize(n);
  const auto denom = static_cast<double>(phi_dim);
  for (std::size_t i = 0; i < n; ++i) {
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t j = 0; j < phi_dim; ++j) {
      const double p = d.features(i, config.m_t + j);
      m0 += (p * p * p + 0.5) * nu0[j];
      m1 += p * p * nu1[j];
    }
    truth.mu0[i] = m0 / denom;
    truth.mu1[i] = m1 / denom;
    const double eps = normal(noise_rng);
    d.outcome[i] = (d.treatment[i] ? truth.mu1[i] : truth.mu0[i]) + eps;
  }
  d.truth = std::move(truth);

  d.splits = split(d.treatment, kSyntheticSplit, stream(config.seed, Stream::kSplit)());
  d.meta = {{"generator", "tndvga-synth"},
            {"generator_version", 1},
            {"n", n},
            {"k", k},
            {"m_t", config.m_t},
            {"m_c", config.m_c},
            {"m_y", config.m_y},
            {"m_o", config.m_o},
            {"zeta", config.zeta},
            {"seed", config.seed},
            {"theta", theta},
            {"nu0", nu0},
            {"nu1", nu1}};
  return d;
}

std::vector<GenConfig> scenario_dims(const GenConfig& base) {
  std::vector<GenConfig> out;
  for (std::size_t mt : {4u, 8u}) {
    for (std::size_t mc : {4u, 8u}) {
      for (std::size_t my : {4u, 8u}) {
        for (std::size_t mo : {4u, 8u}) {
          GenConfig c = base;
          c.m_t = mt;
          c.m_c = mc;
          c.m_y = my;
          c.m_o = mo;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

std::vector<GenConfig> scenario_grid(std::uint64_t base_seed, std::size_t seeds_per_scenario, const GenConfig& base) {
  std::vector<GenConfig> out;
  for (const auto& scenario : scenario_dims(base)) {
    for (std::size_t s = 0; s < seeds_per_scenario; ++s) {
      GenConfig c = scenario;
      c.seed = base_seed + s;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace tndvga
