#include "tndvga/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tndvga/errors.hpp"

namespace tndvga {

using ad::Var;

namespace {

constexpr double kBandwidthFloor = 1e-8;

double checked(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss term: ") + term);
  return v;
}

Var row_mean(Var per_entry) {
  const auto n = static_cast<double>(per_entry.rows());
  if (n == 0) throw InputError("loss over zero rows");
  return ad::scale(ad::sum(per_entry), 1.0 / n);
}

Tensor off_diagonal_ones(std::size_t n) {
  Tensor m = Tensor::matrix(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  return m;
}

Var gram(Var x, double sigma) {
  const Var d2 = ad::sqdist(x, x);
  const Var k = ad::exp(ad::scale(d2, -1.0 / (2.0 * sigma * sigma)));
  return k * x.tape().constant(off_diagonal_ones(x.rows()));
}

}  // namespace

void validate(const LossWeights& w) {
  for (double v : {w.alpha_t, w.alpha_y, w.alpha_1, w.alpha_2, w.lambda_l2}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("loss weights must be finite and >= 0");
  }
}

Var kl_diag_gaussian(const GaussianPosterior& q) {
  const Var per = ad::square(q.mean) + ad::exp(q.log_var) - q.log_var - 1.0;
  return ad::scale(row_mean(per), 0.5);
}

Var gaussian_nll(Var v, const GaussianHead& head) {
  const Var r = v - head.mean;
  const Var per = ad::add_scalar(head.log_var + ad::square(r) * ad::exp(-head.log_var), std::log(2.0 * std::numbers::pi));
  return ad::scale(row_mean(per), 0.5);
}

Var bernoulli_nll(Var t, Var logits) { return row_mean(ad::softplus(logits) - t * logits); }

ReconLosses recon_losses(const ModelOutputs& out) {
  return {gaussian_nll(out.features, out.x), bernoulli_nll(out.treatment, out.t_logits),
          gaussian_nll(out.outcome, out.y)};
}

AuxLosses aux_losses(const ModelOutputs& out) {
  return {bernoulli_nll(out.treatment, out.aux_t_logits), gaussian_nll(out.outcome, out.aux_y)};
}

double median_bandwidth(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  if (dist.empty()) return kBandwidthFloor;
  const std::size_t m = dist.size();
  std::nth_element(dist.begin(), dist.begin() + m / 2, dist.end());
  double med = dist[m / 2];
  if (m % 2 == 0) {
    med = 0.5 * (med + *std::max_element(dist.begin(), dist.begin() + m / 2));
  }
  return std::max(med, kBandwidthFloor);
}

Tensor rbf_gram(const Tensor& x, double sigma) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor k = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x(i, c) - x(j, c);
        s += diff * diff;
      }
      k(i, j) = k(j, i) = std::exp(-s / (2.0 * sigma * sigma));
    }
  }
  return k;
}

double hsic_from_grams(const Tensor& k, const Tensor& l) {
  const std::size_t n = k.rows();
  if (n < 4) throw InputError("HSIC needs at least 4 samples");
  double trace = 0.0, sum_k = 0.0, sum_l = 0.0, cross = 0.0;
  std::vector<double> col_k(n, 0.0), col_l(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      trace += k(i, j) * l(i, j);
      col_k[j] += k(i, j);
      col_l[j] += l(i, j);
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    sum_k += col_k[j];
    sum_l += col_l[j];
    cross += col_k[j] * col_l[j];
  }
  const auto nd = static_cast<double>(n);
  return (trace + sum_k * sum_l / ((nd - 1) * (nd - 2)) - 2.0 / (nd - 2) * cross) / (nd * (nd - 3));
}

namespace {

Var hsic_from_gram_vars(Var k, Var l) {
  const auto nd = static_cast<double>(k.rows());
  const Var trace = ad::sum(k * l);
  const Var totals = ad::sum(k) * ad::sum(l);
  const Var cross = ad::sum(ad::sum_rows(k) * ad::sum_rows(l));
  const Var inner = trace + ad::scale(totals, 1.0 / ((nd - 1) * (nd - 2))) - ad::scale(cross, 2.0 / (nd - 2));
  return ad::scale(inner, 1.0 / (nd * (nd - 3)));
}

double bandwidth_for(Var x, std::optional<double> sigma) {
  return std::max(sigma.value_or(median_bandwidth(x.value())), kBandwidthFloor);
}

}  // namespace

Var hsic_unbiased(Var u, Var v, std::optional<double> sigma_u, std::optional<double> sigma_v) {
  const std::size_t n = u.rows();
  if (v.rows() != n) throw InputError("hsic_unbiased: row counts differ");
  if (n < 4) throw InputError("HSIC needs at least 4 samples");
  return hsic_from_gram_vars(gram(u, bandwidth_for(u, sigma_u)), gram(v, bandwidth_for(v, sigma_v)));
}

Var indep_loss(std::span<const Var, kNumChannels> z, const std::optional<std::array<double, kNumChannels>>& bandwidths) {
  std::array<Var, kNumChannels> grams;
  for (std::size_t i = 0; i < kNumChannels; ++i) {
    if (z[i].cols() == 0) continue;
    if (z[i].rows() < 4) throw InputError("HSIC needs at least 4 samples");
    std::optional<double> sigma;
    if (bandwidths) sigma = (*bandwidths)[i];
    grams[i] = gram(z[i], bandwidth_for(z[i], sigma));
  }
  Var total;
  for (std::size_t i = 0; i < kNumChannels; ++i) {
    for (std::size_t j = i + 1; j < kNumChannels; ++j) {
      if (!grams[i].valid() || !grams[j].valid()) continue;
      const Var h = hsic_from_gram_vars(grams[i], grams[j]);
      total = total.valid() ? total + h : h;
    }
  }
  if (!total.valid()) return z[0].tape().constant(Tensor::scalar(0.0));
  return total;
}

Var sinkhorn_w1(Var a, Var b, double epsilon, std::size_t iters, double eps_scale) {
  const std::size_t n0 = a.rows(), n1 = b.rows();
  if (n0 == 0 || n1 == 0) throw InputError("sinkhorn_w1 needs non-empty point sets");
  auto& tape = a.tape();
  const Var cost = ad::sqrt(ad::sqdist(a, b));
  // The automatic epsilon depends on the points and is differentiated through.
  const Var eps = epsilon > 0.0
                      ? tape.constant(Tensor::scalar(epsilon))
                      : ad::clamp(ad::scale(ad::mean(cost), eps_scale), kBandwidthFloor,
                                  std::numeric_limits<double>::infinity());
  const Var inv = ad::exp(-ad::log(eps));
  const double log_a = -std::log(static_cast<double>(n0));
  const double log_b = -std::log(static_cast<double>(n1));
  const Var neg_c = -(cost * inv);

  Var f = tape.constant(Tensor::matrix(n0, 1));
  Var g = tape.constant(Tensor::matrix(1, n1));
  for (std::size_t it = 0; it < iters; ++it) {
    f = eps * (-ad::logsumexp_cols(g * inv + neg_c) + log_a);
    g = eps * (-ad::logsumexp_rows(f * inv + neg_c) + log_b);
  }
  const Var plan = ad::exp(f * inv + g * inv + neg_c);
  return ad::sum(plan * cost);
}

Var disc_loss(Var z_y, const std::vector<int>& treatment, const RegularizerOptions& opts) {
  if (treatment.size() != z_y.rows()) throw InputError("disc_loss: treatment length does not match rows");
  if (z_y.cols() == 0) return z_y.tape().constant(Tensor::scalar(0.0));
  std::vector<std::size_t> treated, control;
  for (std::size_t i = 0; i < treatment.size(); ++i) (treatment[i] ? treated : control).push_back(i);
  if (treated.empty() || control.empty()) throw InputError("disc_loss: a treatment arm is empty");
  return sinkhorn_w1(ad::select_rows(z_y, control), ad::select_rows(z_y, treated), opts.sinkhorn_epsilon.value_or(0.0),
                     opts.sinkhorn_iters, opts.sinkhorn_eps_scale);
}

LossTerms total_loss(const ModelOutputs& out, const ParamStore& store, const LossWeights& w,
                     const RegularizerOptions& opts) {
  validate(w);
  const auto recon = recon_losses(out);
  Var elbo = recon.nll_x + recon.nll_t + recon.nll_y;
  for (const auto& q : out.posteriors) {
    if (q.dim() > 0) elbo = elbo + kl_diag_gaussian(q);
  }
  const auto aux = aux_losses(out);

  LossTerms r;
  auto& b = r.breakdown;
  b.elbo = checked(elbo.value().item(), "elbo");
  b.treat = checked(aux.treat.value().item(), "treat");
  b.pred = checked(aux.pred.value().item(), "pred");
  Var total = elbo;
  if (w.alpha_t > 0.0) total = total + ad::scale(aux.treat, w.alpha_t);
  if (w.alpha_y > 0.0) total = total + ad::scale(aux.pred, w.alpha_y);

  std::array<Var, kNumChannels> z = out.latents;
  std::vector<int> t(out.treatment.rows());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(out.treatment.value()[i]);
  if (!opts.subsample.empty()) {
    for (auto& zi : z) zi = ad::select_rows(zi, opts.subsample);
    std::vector<int> ts(opts.subsample.size());
    for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = t.at(opts.subsample[i]);
    t = std::move(ts);
  }
  if (w.alpha_1 > 0.0) {
    const Var indep = indep_loss(std::span<const Var, kNumChannels>(z), opts.hsic_bandwidths);
    b.indep = checked(indep.value().item(), "indep");
    total = total + ad::scale(indep, w.alpha_1);
  }
  if (w.alpha_2 > 0.0) {
    const Var disc = disc_loss(z[static_cast<std::size_t>(Channel::kAdjustment)], t, opts);
    b.disc = checked(disc.value().item(), "disc");
    total = total + ad::scale(disc, w.alpha_2);
  }
  b.l2 = w.lambda_l2 * store.squared_norm();
  r.total = total;
  b.total = checked(total.value().item() + b.l2, "total");
  return r;
}

}  // namespace tndvga
