#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tndvga/model.hpp"

namespace tndvga {

struct LossWeights {
  double alpha_t = 100.0;
  double alpha_y = 100.0;
  double alpha_1 = 1.0;
  double alpha_2 = 1.0;
  double lambda_l2 = 5e-5;
};

void validate(const LossWeights& w);

struct LossBreakdown {
  double elbo = 0.0;
  double treat = 0.0;
  double pred = 0.0;
  double indep = 0.0;
  double disc = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

struct RegularizerOptions {
  std::size_t sinkhorn_iters = 20;
  /// epsilon = scale * mean(C) unless `sinkhorn_epsilon` is set.
  double sinkhorn_eps_scale = 0.1;
  std::optional<double> sinkhorn_epsilon;
  /// Fixed RBF bandwidths per channel; the median heuristic otherwise.
  std::optional<std::array<double, kNumChannels>> hsic_bandwidths;
  /// Positions (into the output rows) used for the HSIC and balancing terms.
  /// Empty means every row.
  std::vector<std::size_t> subsample;
};

/// Mean over rows of 0.5 * sum_j (mu^2 + sigma^2 - log sigma^2 - 1).
ad::Var kl_diag_gaussian(const GaussianPosterior& q);
/// Mean over rows of sum_j 0.5 * (log 2pi + log_var + (v - mean)^2 / exp(log_var)).
ad::Var gaussian_nll(ad::Var v, const GaussianHead& head);
/// Mean over rows of softplus(l) - t * l.
ad::Var bernoulli_nll(ad::Var t, ad::Var logits);

struct ReconLosses {
  ad::Var nll_x, nll_t, nll_y;
};
ReconLosses recon_losses(const ModelOutputs& out);

struct AuxLosses {
  ad::Var treat, pred;
};
AuxLosses aux_losses(const ModelOutputs& out);

/// Median of pairwise Euclidean row distances, floored at 1e-8.
double median_bandwidth(const Tensor& x);
/// exp(-||x_i - x_j||^2 / (2 sigma^2)) with the diagonal set to zero.
Tensor rbf_gram(const Tensor& x, double sigma);
/// Unbiased HSIC from two zero-diagonal Gram matrices.
double hsic_from_grams(const Tensor& k, const Tensor& l);

/// Unbiased HSIC with RBF kernels. Bandwidths default to the median
/// heuristic and are held constant for gradients. Requires n >= 4.
ad::Var hsic_unbiased(ad::Var u, ad::Var v, std::optional<double> sigma_u = {}, std::optional<double> sigma_v = {});

/// Sum of hsic_unbiased over channel pairs, skipping zero-width channels.
ad::Var indep_loss(std::span<const ad::Var, kNumChannels> z,
                   const std::optional<std::array<double, kNumChannels>>& bandwidths = {});

/// Entropic optimal transport cost <P, C> with C the Euclidean distance
/// matrix, uniform marginals and `iters` unrolled log-domain Sinkhorn sweeps.
/// A non-positive epsilon selects scale * mean(C), which is part of the
/// differentiated graph.
ad::Var sinkhorn_w1(ad::Var a, ad::Var b, double epsilon, std::size_t iters, double eps_scale = 0.1);

/// sinkhorn_w1 between treated and control rows of z_y. Zero when z_y has
/// no columns; throws InputError when an arm is empty.
ad::Var disc_loss(ad::Var z_y, const std::vector<int>& treatment, const RegularizerOptions& opts = {});

struct LossTerms {
  LossBreakdown breakdown;
  ad::Var total;
};

/// Assembles the objective over the rows of `out`. Terms whose weight is zero
/// are not evaluated and reported as 0. The L2 penalty is reported only; the
/// optimizer applies it. Throws NumericalError naming a non-finite term.
LossTerms total_loss(const ModelOutputs& out, const ParamStore& store, const LossWeights& w,
                     const RegularizerOptions& opts = {});

}  // namespace tndvga
