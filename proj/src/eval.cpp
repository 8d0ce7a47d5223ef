#include "tndvga/eval.hpp"

#include <cmath>

#include "tndvga/errors.hpp"
#include "tndvga/objectives.hpp"

namespace tndvga {

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j = {{"split", m.split}, {"n", m.n_evaluated}, {"nll_y", m.nll_y}};
  j["pehe_root"] = m.pehe_root ? nlohmann::json(*m.pehe_root) : nlohmann::json(nullptr);
  j["ate_error"] = m.ate_error ? nlohmann::json(*m.ate_error) : nlohmann::json(nullptr);
  return j;
}

namespace {
void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("effect vectors differ in length");
  if (a.empty()) throw InputError("effect vectors are empty");
}
}  // namespace

double pehe_root(std::span<const double> tau_hat, std::span<const double> tau) {
  check_lengths(tau_hat, tau);
  double s = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) s += (tau_hat[i] - tau[i]) * (tau_hat[i] - tau[i]);
  return std::sqrt(s / static_cast<double>(tau.size()));
}

double ate_error(std::span<const double> tau_hat, std::span<const double> tau) {
  check_lengths(tau_hat, tau);
  double s = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) s += tau_hat[i] - tau[i];
  return std::abs(s / static_cast<double>(tau.size()));
}

double factual_nll_y(const TndvgaModel& model, ad::Tape& tape, ParamStore& store, const Dataset& data,
                     const std::array<GaussianPosterior, kNumChannels>& q, std::span<const std::size_t> rows) {
  Tensor t = Tensor::matrix(rows.size(), 1);
  Tensor y = Tensor::matrix(rows.size(), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    t[r] = data.treatment.at(rows[r]);
    y[r] = data.outcome.at(rows[r]);
  }
  const auto zc = ad::select_rows(q[static_cast<std::size_t>(Channel::kConfounder)].mean, rows);
  const auto zy = ad::select_rows(q[static_cast<std::size_t>(Channel::kAdjustment)].mean, rows);
  const auto head = model.aux_y(tape, store, tape.constant(std::move(t)), zc, zy);
  return gaussian_nll(tape.constant(std::move(y)), head).value().item();
}

double factual_nll_y(const TndvgaModel& model, ParamStore& store, const Dataset& data, const SparseMatrix& norm_adj,
                     std::span<const std::size_t> rows) {
  ad::Tape tape;
  const auto q = model.encode(tape, store, data.features, norm_adj);
  return factual_nll_y(model, tape, store, data, q, rows);
}

Metrics evaluate(const TndvgaModel& model, ParamStore& store, const Dataset& data, const SparseMatrix& norm_adj,
                 const std::string& split, const PredictOptions& options) {
  if (!data.splits) throw InputError("dataset has no split assignment");
  const auto& rows = data.splits->by_name(split);
  if (rows.empty()) throw InputError("split '" + split + "' is empty");
  Metrics m;
  m.split = split;
  m.n_evaluated = rows.size();
  m.nll_y = factual_nll_y(model, store, data, norm_adj, rows);
  if (data.truth) {
    const auto pred = model.predict_ite(store, data.features, norm_adj, rows, options);
    std::vector<double> tau(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) tau[i] = data.truth->mu1[rows[i]] - data.truth->mu0[rows[i]];
    m.pehe_root = pehe_root(pred.tau_hat, tau);
    m.ate_error = ate_error(pred.tau_hat, tau);
  }
  return m;
}

}  // namespace tndvga
