#include "tndvga/model.hpp"

#include <cmath>

#include "tndvga/errors.hpp"

namespace tndvga {

using ad::Tape;
using ad::Var;

namespace {

constexpr std::array<Channel, kNumChannels> kChannels{Channel::kInstrument, Channel::kConfounder,
                                                      Channel::kAdjustment, Channel::kNoise};

Tensor glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  Tensor w = Tensor::matrix(fan_in, fan_out);
  if (w.size() == 0) return w;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : w.values()) v = u(rng);
  return w;
}

std::string enc_key(Channel c, const std::string& leaf) { return std::string("enc.") + channel_name(c) + "." + leaf; }

Tensor normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

Var one_minus(Var t) { return ad::add_scalar(ad::scale(t, -1.0), 1.0); }

}  // namespace

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::kInstrument: return "t";
    case Channel::kConfounder: return "c";
    case Channel::kAdjustment: return "y";
    case Channel::kNoise: return "o";
  }
  return "?";
}

std::size_t LatentLayout::dim(Channel c) const {
  switch (c) {
    case Channel::kInstrument: return d_zt;
    case Channel::kConfounder: return d_zc;
    case Channel::kAdjustment: return d_zy;
    case Channel::kNoise: return d_zo;
  }
  return 0;
}

void validate(const ModelConfig& c) {
  if (c.layout.d_zc + c.layout.d_zy == 0) throw InputError("d_zc + d_zy must be at least 1");
  if (c.gcn_layers < 1 || c.gcn_layers > 3) throw InputError("gcn_layers must be 1, 2 or 3");
  if (c.hidden_dim == 0 || c.head_hidden_dim == 0) throw InputError("hidden dimensions must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_zt", c.layout.d_zt},       {"d_zc", c.layout.d_zc},
          {"d_zy", c.layout.d_zy},       {"d_zo", c.layout.d_zo},
          {"gcn_layers", c.gcn_layers},  {"hidden_dim", c.hidden_dim},
          {"head_hidden_dim", c.head_hidden_dim}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layout.d_zt = j.value("d_zt", c.layout.d_zt);
    c.layout.d_zc = j.value("d_zc", c.layout.d_zc);
    c.layout.d_zy = j.value("d_zy", c.layout.d_zy);
    c.layout.d_zo = j.value("d_zo", c.layout.d_zo);
    c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.head_hidden_dim = j.value("head_hidden_dim", c.head_hidden_dim);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model config: ") + e.what());
  }
  validate(c);
  return c;
}

void Mlp::init(ParamStore& store, std::mt19937_64& rng) const {
  store.add(name + ".W1", glorot(rng, in, hidden));
  store.add(name + ".b1", Tensor::matrix(1, hidden));
  store.add(name + ".W2", glorot(rng, hidden, out));
  store.add(name + ".b2", Tensor::matrix(1, out));
}

Var Mlp::forward(Tape& tape, ParamStore& store, Var x) const {
  if (x.cols() != in) throw InputError(name + ": expected " + std::to_string(in) + " input columns, got " +
                                       std::to_string(x.cols()));
  Var h = ad::relu(ad::matmul(x, tape.param(store, name + ".W1")) + tape.param(store, name + ".b1"));
  return ad::matmul(h, tape.param(store, name + ".W2")) + tape.param(store, name + ".b2");
}

TndvgaModel::TndvgaModel(ModelConfig config, std::size_t num_features)
    : config_(config), num_features_(num_features) {
  validate(config_);
  const auto& L = config_.layout;
  const std::size_t hh = config_.head_hidden_dim;
  const std::size_t tc = L.d_zt + L.d_zc;
  const std::size_t cy = L.d_zc + L.d_zy;
  heads_ = {
      {"dec.x.mean", L.total(), hh, num_features},  // f1
      {"dec.x.logvar", L.total(), hh, num_features},  // f2
      {"dec.t", tc, hh, 1},                          // f3
      {"dec.y1.mean", cy, hh, 1},                    // f4
      {"dec.y0.mean", cy, hh, 1},                    // f5
      {"dec.y1.logvar", cy, hh, 1},                  // f6
      {"dec.y0.logvar", cy, hh, 1},                  // f7
      {"aux.t", tc, hh, 1},                          // h1
      {"aux.y1.mean", cy, hh, 1},                    // h2
      {"aux.y0.mean", cy, hh, 1},                    // h3
      {"aux.y1.logvar", cy, hh, 1},                  // h4
      {"aux.y0.logvar", cy, hh, 1},                  // h5
  };
}

const Mlp& TndvgaModel::head(const std::string& name) const {
  for (const auto& h : heads_) {
    if (h.name == name) return h;
  }
  throw InputError("unknown head " + name);
}

ParamStore TndvgaModel::init_params() const {
  ParamStore store;
  std::mt19937_64 rng(config_.seed);
  const std::size_t hid = config_.hidden_dim;
  for (Channel c : kChannels) {
    const std::size_t d = layout().dim(c);
    if (d == 0) continue;
    for (int l = 0; l < config_.gcn_layers; ++l) {
      store.add(enc_key(c, "gcn" + std::to_string(l) + ".W"), glorot(rng, l == 0 ? num_features_ : hid, hid));
    }
    store.add(enc_key(c, "mean.W"), glorot(rng, hid, d));
    store.add(enc_key(c, "logvar.W"), glorot(rng, hid, d));
  }
  for (const auto& h : heads_) h.init(store, rng);
  return store;
}

std::array<GaussianPosterior, kNumChannels> TndvgaModel::encode(Tape& tape, ParamStore& store, const Tensor& features,
                                                                const SparseMatrix& adj,
                                                                const Tensor* propagated_features) const {
  const std::size_t n = features.rows();
  if (features.cols() != num_features_) {
    throw InputError("encode: expected " + std::to_string(num_features_) + " feature columns, got " +
                     std::to_string(features.cols()));
  }
  if (adj.rows() != n || adj.cols() != n) throw InputError("encode: adjacency does not match feature rows");

  // (A_hat X) is shared by the first layer of every channel.
  if (propagated_features && (propagated_features->rows() != n || propagated_features->cols() != num_features_)) {
    throw InputError("encode: propagated features have the wrong shape");
  }
  const Var propagated = propagated_features ? tape.constant(*propagated_features)
                                             : ad::spmm(adj, tape.constant(features));
  std::array<GaussianPosterior, kNumChannels> out;
  // Mean and log-variance projections of every channel share one propagation.
  std::vector<Var> projected;
  for (Channel c : kChannels) {
    if (layout().dim(c) == 0) continue;
    Var h = ad::relu(ad::matmul(propagated, tape.param(store, enc_key(c, "gcn0.W"))));
    for (int l = 1; l < config_.gcn_layers; ++l) {
      h = ad::relu(ad::spmm(adj, ad::matmul(h, tape.param(store, enc_key(c, "gcn" + std::to_string(l) + ".W")))));
    }
    projected.push_back(ad::matmul(h, tape.param(store, enc_key(c, "mean.W"))));
    projected.push_back(ad::matmul(h, tape.param(store, enc_key(c, "logvar.W"))));
  }
  const Var heads = ad::spmm(adj, ad::concat_cols(projected));
  std::size_t offset = 0;
  for (Channel c : kChannels) {
    const std::size_t d = layout().dim(c);
    auto& q = out[static_cast<std::size_t>(c)];
    if (d == 0) {
      q.mean = tape.constant(Tensor::matrix(n, 0));
      q.log_var = tape.constant(Tensor::matrix(n, 0));
      continue;
    }
    q.mean = ad::slice_cols(heads, offset, d);
    q.log_var = ad::clamp(ad::slice_cols(heads, offset + d, d), kLogVarMin, kLogVarMax);
    offset += 2 * d;
  }
  return out;
}

Var TndvgaModel::sample(const GaussianPosterior& q, Var noise) {
  if (noise.rows() != q.mean.rows() || noise.cols() != q.mean.cols()) {
    throw InputError("sample: noise shape does not match posterior");
  }
  return q.mean + ad::exp(ad::scale(q.log_var, 0.5)) * noise;
}

GaussianHead TndvgaModel::decode_x(Tape& tape, ParamStore& store, std::span<const Var, kNumChannels> z) const {
  const Var all = ad::concat_cols(std::span<const Var>(z.data(), z.size()));
  return {head("dec.x.mean").forward(tape, store, all),
          ad::clamp(head("dec.x.logvar").forward(tape, store, all), kLogVarMin, kLogVarMax)};
}

Var TndvgaModel::decode_t(Tape& tape, ParamStore& store, Var z_t, Var z_c) const {
  return head("dec.t").forward(tape, store, ad::concat_cols({z_t, z_c}));
}

GaussianHead TndvgaModel::two_headed(Tape& tape, ParamStore& store, const char* prefix, Var t, Var z_c, Var z_y) const {
  const std::string p(prefix);
  const Var in = ad::concat_cols({z_c, z_y});
  const Var not_t = one_minus(t);
  const Var mean1 = head(p + ".y1.mean").forward(tape, store, in);
  const Var mean0 = head(p + ".y0.mean").forward(tape, store, in);
  const Var lv1 = head(p + ".y1.logvar").forward(tape, store, in);
  const Var lv0 = head(p + ".y0.logvar").forward(tape, store, in);
  return {t * mean1 + not_t * mean0, ad::clamp(t * lv1 + not_t * lv0, kLogVarMin, kLogVarMax)};
}

GaussianHead TndvgaModel::decode_y(Tape& tape, ParamStore& store, Var t, Var z_c, Var z_y) const {
  return two_headed(tape, store, "dec", t, z_c, z_y);
}

Var TndvgaModel::aux_t(Tape& tape, ParamStore& store, Var z_t, Var z_c) const {
  return head("aux.t").forward(tape, store, ad::concat_cols({z_t, z_c}));
}

GaussianHead TndvgaModel::aux_y(Tape& tape, ParamStore& store, Var t, Var z_c, Var z_y) const {
  return two_headed(tape, store, "aux", t, z_c, z_y);
}

ModelOutputs TndvgaModel::forward(Tape& tape, ParamStore& store, const Dataset& data, const SparseMatrix& adj,
                                  std::span<const std::size_t> rows, std::mt19937_64& rng,
                                  const Tensor* propagated) const {
  ModelOutputs out;
  out.rows.assign(rows.begin(), rows.end());
  out.full_posteriors = encode(tape, store, data.features, adj, propagated);
  const auto& full = out.full_posteriors;
  for (Channel c : kChannels) {
    const auto i = static_cast<std::size_t>(c);
    out.posteriors[i] = {ad::select_rows(full[i].mean, rows), ad::select_rows(full[i].log_var, rows)};
    const Tensor noise = normal_matrix(rng, rows.size(), layout().dim(c));
    out.latents[i] = sample(out.posteriors[i], tape.constant(noise));
  }
  Tensor t = Tensor::matrix(rows.size(), 1);
  Tensor y = Tensor::matrix(rows.size(), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    t[r] = data.treatment[rows[r]];
    y[r] = data.outcome[rows[r]];
  }
  out.treatment = tape.constant(std::move(t));
  out.outcome = tape.constant(std::move(y));
  out.features = ad::select_rows(tape.constant(data.features), rows);

  const auto& z = out.latents;
  const Var z_t = z[0], z_c = z[1], z_y = z[2];
  out.x = decode_x(tape, store, std::span<const Var, kNumChannels>(z));
  out.t_logits = decode_t(tape, store, z_t, z_c);
  out.y = decode_y(tape, store, out.treatment, z_c, z_y);
  out.aux_t_logits = aux_t(tape, store, z_t, z_c);
  out.aux_y = aux_y(tape, store, out.treatment, z_c, z_y);
  return out;
}

ItePrediction TndvgaModel::predict_ite(ParamStore& store, const Tensor& features, const SparseMatrix& adj,
                                       std::span<const std::size_t> rows, const PredictOptions& options) const {
  if (options.samples < 1) throw InputError("predict_ite needs at least one sample");
  Tensor mean_c, mean_y, sd_c, sd_y;
  {
    Tape tape;
    const auto q = encode(tape, store, features, adj);
    const auto c = static_cast<std::size_t>(Channel::kConfounder);
    const auto y = static_cast<std::size_t>(Channel::kAdjustment);
    mean_c = ad::select_rows(q[c].mean, rows).value();
    mean_y = ad::select_rows(q[y].mean, rows).value();
    sd_c = ad::exp(ad::scale(ad::select_rows(q[c].log_var, rows), 0.5)).value();
    sd_y = ad::exp(ad::scale(ad::select_rows(q[y].log_var, rows), 0.5)).value();
  }

  const std::size_t m = rows.size();
  ItePrediction pred;
  pred.y1_hat.assign(m, 0.0);
  pred.y0_hat.assign(m, 0.0);
  std::mt19937_64 rng(options.seed);
  const std::size_t draws = options.zero_noise ? 1 : options.samples;
  for (std::size_t s = 0; s < draws; ++s) {
    Tensor zc = mean_c;
    Tensor zy = mean_y;
    if (!options.zero_noise) {
      const Tensor ec = normal_matrix(rng, m, zc.cols());
      const Tensor ey = normal_matrix(rng, m, zy.cols());
      for (std::size_t k = 0; k < zc.size(); ++k) zc[k] += sd_c[k] * ec[k];
      for (std::size_t k = 0; k < zy.size(); ++k) zy[k] += sd_y[k] * ey[k];
    }
    Tape tape;
    const Var in = ad::concat_cols({tape.constant(std::move(zc)), tape.constant(std::move(zy))});
    const Tensor& y1 = head("dec.y1.mean").forward(tape, store, in).value();
    const Tensor& y0 = head("dec.y0.mean").forward(tape, store, in).value();
    for (std::size_t i = 0; i < m; ++i) {
      pred.y1_hat[i] += y1[i];
      pred.y0_hat[i] += y0[i];
    }
  }
  pred.tau_hat.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    pred.y1_hat[i] /= static_cast<double>(draws);
    pred.y0_hat[i] /= static_cast<double>(draws);
    pred.tau_hat[i] = pred.y1_hat[i] - pred.y0_hat[i];
  }
  return pred;
}

}  // namespace tndvga
