#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tndvga/graphdata.hpp"
#include "tndvga/ops.hpp"
#include "tndvga/params.hpp"

namespace tndvga {

/// Latent channels, in concatenation order.
enum class Channel : std::size_t { kInstrument = 0, kConfounder = 1, kAdjustment = 2, kNoise = 3 };
inline constexpr std::size_t kNumChannels = 4;
/// Short names used in parameter keys: "t", "c", "y", "o".
const char* channel_name(Channel c);

struct LatentLayout {
  std::size_t d_zt = 8;
  std::size_t d_zc = 8;
  std::size_t d_zy = 8;
  std::size_t d_zo = 8;

  std::size_t dim(Channel c) const;
  std::size_t total() const { return d_zt + d_zc + d_zy + d_zo; }
  bool operator==(const LatentLayout&) const = default;
};

struct ModelConfig {
  LatentLayout layout;
  int gcn_layers = 1;
  std::size_t hidden_dim = 64;
  std::size_t head_hidden_dim = 64;
  std::uint64_t seed = 0;
};

void validate(const ModelConfig& c);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian over n rows; log_var is clamped to [-10, 10].
struct GaussianPosterior {
  ad::Var mean;
  ad::Var log_var;
  std::size_t dim() const { return mean.cols(); }
};

/// Per-row Gaussian emitted by a decoder head (same clamp contract).
using GaussianHead = GaussianPosterior;

/// One-hidden-layer ReLU network: relu(x W1 + b1) W2 + b2.
struct Mlp {
  std::string name;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;

  void init(ParamStore& store, std::mt19937_64& rng) const;
  ad::Var forward(ad::Tape& tape, ParamStore& store, ad::Var x) const;
};

/// Everything the objective needs from one forward pass over a row subset.
struct ModelOutputs {
  std::vector<std::size_t> rows;
  /// Posteriors over every node of the graph.
  std::array<GaussianPosterior, kNumChannels> full_posteriors;
  /// The same, restricted to `rows`.
  std::array<GaussianPosterior, kNumChannels> posteriors;
  std::array<ad::Var, kNumChannels> latents;
  ad::Var treatment;  // rows x 1 constant
  ad::Var outcome;    // rows x 1 constant
  ad::Var features;   // rows x k constant
  GaussianHead x;
  ad::Var t_logits;
  GaussianHead y;
  ad::Var aux_t_logits;
  GaussianHead aux_y;
};

struct PredictOptions {
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  /// Use posterior means instead of sampling (all noise forced to zero).
  bool zero_noise = false;
};

struct ItePrediction {
  std::vector<double> tau_hat;
  std::vector<double> y1_hat;
  std::vector<double> y0_hat;
};

/// Disentangled variational graph autoencoder with four GCN encoder
/// channels. The outcome heads read only (z_c, z_y) and the treatment heads
/// only (z_t, z_c).
class TndvgaModel {
 public:
  TndvgaModel(ModelConfig config, std::size_t num_features);

  const ModelConfig& config() const { return config_; }
  const LatentLayout& layout() const { return config_.layout; }
  std::size_t num_features() const { return num_features_; }

  /// Glorot-uniform weights and zero biases, seeded by config().seed.
  ParamStore init_params() const;

  /// Posterior per channel over all n nodes. Zero-width channels yield n x 0.
  /// `propagated`, when given, must equal normalized_adjacency * features.
  std::array<GaussianPosterior, kNumChannels> encode(ad::Tape& tape, ParamStore& store, const Tensor& features,
                                                     const SparseMatrix& normalized_adjacency,
                                                     const Tensor* propagated = nullptr) const;

  /// z = mean + exp(log_var / 2) * noise.
  static ad::Var sample(const GaussianPosterior& q, ad::Var noise);

  GaussianHead decode_x(ad::Tape& tape, ParamStore& store, std::span<const ad::Var, kNumChannels> z) const;
  ad::Var decode_t(ad::Tape& tape, ParamStore& store, ad::Var z_t, ad::Var z_c) const;
  /// Two-headed: mean = t*f4 + (1-t)*f5, log_var = clamp(t*f6 + (1-t)*f7).
  GaussianHead decode_y(ad::Tape& tape, ParamStore& store, ad::Var t, ad::Var z_c, ad::Var z_y) const;
  ad::Var aux_t(ad::Tape& tape, ParamStore& store, ad::Var z_t, ad::Var z_c) const;
  GaussianHead aux_y(ad::Tape& tape, ParamStore& store, ad::Var t, ad::Var z_c, ad::Var z_y) const;

  /// Encodes the full graph, keeps `rows`, draws one reparameterized sample
  /// per channel from `rng` and runs every decoder and auxiliary head.
  ModelOutputs forward(ad::Tape& tape, ParamStore& store, const Dataset& data, const SparseMatrix& normalized_adjacency,
                       std::span<const std::size_t> rows, std::mt19937_64& rng,
                       const Tensor* propagated = nullptr) const;

  /// Averages the outcome-decoder means under t=1 and t=0 over `samples`
  /// draws of (z_c, z_y). Throws InputError when samples < 1.
  ItePrediction predict_ite(ParamStore& store, const Tensor& features, const SparseMatrix& normalized_adjacency,
                            std::span<const std::size_t> rows, const PredictOptions& options) const;

  const Mlp& head(const std::string& name) const;

 private:
  GaussianHead two_headed(ad::Tape& tape, ParamStore& store, const char* prefix, ad::Var t, ad::Var z_c,
                          ad::Var z_y) const;

  ModelConfig config_;
  std::size_t num_features_;
  std::vector<Mlp> heads_;
};

}  // namespace tndvga
