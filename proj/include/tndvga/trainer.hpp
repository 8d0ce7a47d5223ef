#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tndvga/checkpoint.hpp"
#include "tndvga/eval.hpp"
#include "tndvga/objectives.hpp"

namespace tndvga {

enum class Variant { kFull, kNoHsic, kNoBp, kSingleFactor, kZeroZt, kZeroZc, kZeroZy, kZeroZo };

std::string variant_name(Variant v);
/// Throws InputError for an unknown name.
Variant parse_variant(const std::string& name);

inline constexpr std::size_t kNoPatience = std::numeric_limits<std::size_t>::max();

struct TrainConfig {
  double learning_rate = 3e-4;
  double alpha_t = 100.0;
  double alpha_y = 100.0;
  double alpha_1 = 1.0;
  double alpha_2 = 1.0;
  double lambda_l2 = 5e-5;
  std::size_t epochs = 500;
  /// Epochs without validation improvement before stopping; kNoPatience disables.
  std::size_t patience = 100;
  std::size_t eval_samples = 100;
  std::uint64_t seed = 0;
  /// Training rows drawn per epoch for the HSIC and balancing terms; 0 uses all.
  std::size_t reg_batch = 256;
  std::size_t sinkhorn_iters = 20;
  Variant variant = Variant::kFull;
};

void validate(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; "patience": null disables early stopping.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Model layout and loss weights after applying the variant.
ModelConfig effective_model_config(const ModelConfig& base, const TrainConfig& c);
LossWeights effective_weights(const TrainConfig& c);

struct TrainResult {
  ModelConfig model_config;
  ParamStore params;
  AdamState optimizer;
  std::vector<LossBreakdown> log;
  std::vector<double> val_nll_y;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

/// Transductive training on the dataset's train split with validation-based
/// model selection. The model seed is taken from `config.seed`.
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config);

Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& config, std::size_t num_features);
/// Rebuilds the model described by a checkpoint's metadata.
TndvgaModel model_from_checkpoint(const Checkpoint& ckpt);

/// Predictions for `split` use config.eval_samples draws seeded from config.seed.
PredictOptions predict_options(const TrainConfig& config);

struct RunReport {
  nlohmann::json config;
  std::vector<LossBreakdown> losses;
  std::vector<double> val_nll_y;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<Metrics> metrics;
};

nlohmann::json to_json(const RunReport& r);
RunReport make_report(const Dataset& data, const TrainResult& result, const TrainConfig& config);

/// Trains and writes config.json, train_log.csv, checkpoint.json and
/// report.json into `out_dir`.
RunReport run_training(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                       const std::filesystem::path& out_dir);

std::string train_log_csv(const std::vector<LossBreakdown>& log);

struct SweepCell {
  double alpha_1 = 0.0;
  double alpha_2 = 0.0;
  Metrics test;
};

inline constexpr std::array<double, 5> kSweepValues{1e-2, 1e-1, 1.0, 10.0, 100.0};

/// One run per (alpha_1, alpha_2) pair, all with `config.seed`, spread over
/// `jobs` worker threads. Rows follow the grid order (alpha_1 major).
std::vector<SweepCell> sweep(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                             std::span<const double> alpha_1_values, std::span<const double> alpha_2_values,
                             std::size_t jobs = 1);

/// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace tndvga
