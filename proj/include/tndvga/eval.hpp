#pragma once

#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "tndvga/model.hpp"

namespace tndvga {

struct Metrics {
  std::string split;
  std::size_t n_evaluated = 0;
  /// Absent when the dataset carries no potential-outcome truth.
  std::optional<double> pehe_root;
  std::optional<double> ate_error;
  /// Factual outcome NLL of the auxiliary outcome head at posterior means.
  double nll_y = 0.0;
};

nlohmann::json to_json(const Metrics& m);

/// sqrt(mean((tau_hat - tau)^2)).
double pehe_root(std::span<const double> tau_hat, std::span<const double> tau);
/// |mean(tau_hat) - mean(tau)|.
double ate_error(std::span<const double> tau_hat, std::span<const double> tau);

/// Mean Gaussian NLL of observed outcomes under aux_y evaluated at the
/// posterior means of z_c and z_y.
double factual_nll_y(const TndvgaModel& model, ParamStore& store, const Dataset& data, const SparseMatrix& norm_adj,
                     std::span<const std::size_t> rows);
/// Same, reusing posteriors already encoded on `tape`.
double factual_nll_y(const TndvgaModel& model, ad::Tape& tape, ParamStore& store, const Dataset& data,
                     const std::array<GaussianPosterior, kNumChannels>& posteriors, std::span<const std::size_t> rows);

Metrics evaluate(const TndvgaModel& model, ParamStore& store, const Dataset& data, const SparseMatrix& norm_adj,
                 const std::string& split, const PredictOptions& options);

}  // namespace tndvga
