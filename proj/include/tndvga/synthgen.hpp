#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tndvga/graphdata.hpp"

namespace tndvga {

/// Synthetic benchmark configuration: latent block sizes for the instrumental
/// (t), confounding (c), adjustment (y) and noise (o) factors, and the
/// logistic slope `zeta` controlling selection bias.
struct GenConfig {
  std::size_t n = 7000;
  std::size_t m_t = 8;
  std::size_t m_c = 8;
  std::size_t m_y = 8;
  std::size_t m_o = 8;
  double zeta = 1.0;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return m_t + m_c + m_y + m_o; }
  bool operator==(const GenConfig&) const = default;
};

/// 5000/1000/1000 of 7000, applied proportionally for other n.
inline constexpr SplitFractions kSyntheticSplit{5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0};

void validate(const GenConfig& c);
nlohmann::json to_json(const GenConfig& c);
/// Missing keys keep their defaults.
GenConfig gen_config_from_json(const nlohmann::json& j);

/// Draws one dataset. Each random component (latents, edges, treatment
/// coefficients, assignment uniforms, outcome coefficients, outcome noise)
/// has its own stream derived from `seed`, so changing `zeta` alone changes
/// only the realized treatments.
Dataset generate(const GenConfig& config);

/// Closed-form edge probability for a pair of latent rows.
double edge_probability(std::span<const double> h_i, std::span<const double> h_j);

/// The 16 latent-dimension combinations from {4, 8}^4 (n, zeta, seed from `base`).
std::vector<GenConfig> scenario_dims(const GenConfig& base = {});
/// Every scenario crossed with `seeds_per_scenario` seeds base_seed, base_seed+1, ...
std::vector<GenConfig> scenario_grid(std::uint64_t base_seed, std::size_t seeds_per_scenario = 5,
                                     const GenConfig& base = {});

}  // namespace tndvga
