#include "tndvga/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "tndvga/errors.hpp"

namespace tndvga {

namespace {

constexpr std::array<std::pair<Variant, const char*>, 8> kVariantNames{{
    {Variant::kFull, "full"},
    {Variant::kNoHsic, "no_hsic"},
    {Variant::kNoBp, "no_bp"},
    {Variant::kSingleFactor, "single_factor"},
    {Variant::kZeroZt, "zero_zt"},
    {Variant::kZeroZc, "zero_zc"},
    {Variant::kZeroZy, "zero_zy"},
    {Variant::kZeroZo, "zero_zo"},
}};

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kTrainStream = 101;
constexpr std::uint32_t kPredictStream = 102;

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"elbo", b.elbo}, {"treat", b.treat}, {"pred", b.pred}, {"indep", b.indep},
          {"disc", b.disc}, {"l2", b.l2},       {"total", b.total}};
}

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [k, name] : kVariantNames) {
    if (k == v) return name;
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [k, n] : kVariantNames) {
    if (name == n) return k;
  }
  throw InputError("unknown variant '" + name + "'");
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw InputError("learning_rate must be > 0");
  if (c.epochs < 1) throw InputError("epochs must be >= 1");
  if (c.patience < 1) throw InputError("patience must be >= 1");
  if (c.eval_samples < 1) throw InputError("eval_samples must be >= 1");
  validate(effective_weights(c));
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"learning_rate", c.learning_rate},
                      {"alpha_t", c.alpha_t},
                      {"alpha_y", c.alpha_y},
                      {"alpha_1", c.alpha_1},
                      {"alpha_2", c.alpha_2},
                      {"lambda_l2", c.lambda_l2},
                      {"epochs", c.epochs},
                      {"eval_samples", c.eval_samples},
                      {"seed", c.seed},
                      {"reg_batch", c.reg_batch},
                      {"sinkhorn_iters", c.sinkhorn_iters},
                      {"variant", variant_name(c.variant)}};
  j["patience"] = c.patience == kNoPatience ? nlohmann::json(nullptr) : nlohmann::json(c.patience);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.alpha_t = j.value("alpha_t", c.alpha_t);
    c.alpha_y = j.value("alpha_y", c.alpha_y);
    c.alpha_1 = j.value("alpha_1", c.alpha_1);
    c.alpha_2 = j.value("alpha_2", c.alpha_2);
    c.lambda_l2 = j.value("lambda_l2", c.lambda_l2);
    c.epochs = j.value("epochs", c.epochs);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.seed = j.value("seed", c.seed);
    c.reg_batch = j.value("reg_batch", c.reg_batch);
    c.sinkhorn_iters = j.value("sinkhorn_iters", c.sinkhorn_iters);
    if (j.contains("patience")) c.patience = j["patience"].is_null() ? kNoPatience : j["patience"].get<std::size_t>();
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed train config: ") + e.what());
  }
  validate(c);
  return c;
}

ModelConfig effective_model_config(const ModelConfig& base, const TrainConfig& c) {
  ModelConfig m = base;
  m.seed = c.seed;
  auto& L = m.layout;
  switch (c.variant) {
    case Variant::kSingleFactor: L = {0, L.total(), 0, 0}; break;
    case Variant::kZeroZt: L.d_zt = 0; break;
    case Variant::kZeroZc: L.d_zc = 0; break;
    case Variant::kZeroZy: L.d_zy = 0; break;
    case Variant::kZeroZo: L.d_zo = 0; break;
    default: break;
  }
  validate(m);
  return m;
}

LossWeights effective_weights(const TrainConfig& c) {
  LossWeights w{c.alpha_t, c.alpha_y, c.alpha_1, c.alpha_2, c.lambda_l2};
  if (c.variant == Variant::kNoHsic) w.alpha_1 = 0.0;
  if (c.variant == Variant::kNoBp) w.alpha_2 = 0.0;
  return w;
}

PredictOptions predict_options(const TrainConfig& config) {
  PredictOptions o;
  o.samples = config.eval_samples;
  o.seed = derived_rng(config.seed, kPredictStream)();
  return o;
}

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config) {
  validate(config);
  validate(data);
  if (!data.splits) throw InputError("dataset has no split assignment");
  const auto& train_rows = data.splits->train;
  const auto& val_rows = data.splits->val;
  if (train_rows.empty() || val_rows.empty()) throw InputError("train and val splits must be non-empty");
  std::size_t treated = 0;
  for (auto r : train_rows) treated += static_cast<std::size_t>(data.treatment[r] != 0);
  if (treated == 0 || treated == train_rows.size()) throw InputError("train split lacks one treatment arm");

  TrainResult result;
  result.model_config = effective_model_config(model_config, config);
  const TndvgaModel model(result.model_config, data.num_features());
  const LossWeights weights = effective_weights(config);
  const SparseMatrix adj = normalize_adjacency(data.adjacency);
  const Tensor propagated = adj.multiply(data.features);

  ParamStore store = model.init_params();
  AdamOptions adam_opts;
  adam_opts.learning_rate = config.learning_rate;
  adam_opts.weight_decay = weights.lambda_l2;
  AdamState adam = make_adam_state(store, adam_opts);

  RegularizerOptions reg;
  reg.sinkhorn_iters = config.sinkhorn_iters;
  const bool subsample = config.reg_batch > 0 && config.reg_batch < train_rows.size();
  std::vector<std::size_t> positions(train_rows.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  auto rng = derived_rng(config.seed, kTrainStream);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  result.params = store;
  result.optimizer = adam;
  // Records the validation loss of the parameters after `steps` updates;
  // returns true when patience is exhausted.
  auto track = [&](double val, std::size_t steps) {
    if (!std::isfinite(val)) throw NumericalError("non-finite validation loss after epoch " + std::to_string(steps));
    result.val_nll_y.push_back(val);
    if (val < best_val) {
      best_val = val;
      since_best = 0;
      result.best_epoch = steps;
      result.params = store;
      result.optimizer = adam;
      return false;
    }
    return ++since_best >= config.patience;
  };

  bool stopped = false;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (subsample) {
      // Partial Fisher-Yates; the first reg_batch slots form the draw.
      for (std::size_t i = 0; i < config.reg_batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, positions.size() - 1);
        std::swap(positions[i], positions[pick(rng)]);
      }
      reg.subsample.assign(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(config.reg_batch));
      std::sort(reg.subsample.begin(), reg.subsample.end());
    }
    ad::Tape tape;
    // Each loss term is checked by name in total_loss.
    tape.set_check_finite(false);
    const auto out = model.forward(tape, store, data, adj, train_rows, rng, &propagated);
    // The encoder pass doubles as validation of the previous update.
    if (epoch > 0 && track(factual_nll_y(model, tape, store, data, out.full_posteriors, val_rows), epoch)) {
      stopped = true;
      break;
    }
    const auto terms = total_loss(out, store, weights, reg);
    result.log.push_back(terms.breakdown);
    tape.backward(terms.total);
    adam_step(store, adam);
    result.epochs_run = epoch + 1;
  }
  if (!stopped) {
    ad::Tape tape;
    const auto q = model.encode(tape, store, data.features, adj, &propagated);
    track(factual_nll_y(model, tape, store, data, q, val_rows), result.epochs_run);
  }
  return result;
}

Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& config, std::size_t num_features) {
  Checkpoint c;
  c.params = result.params;
  c.optimizer = result.optimizer;
  c.meta = {{"model", to_json(result.model_config)},
            {"train", to_json(config)},
            {"num_features", num_features},
            {"best_epoch", result.best_epoch},
            {"epochs_run", result.epochs_run}};
  return c;
}

TndvgaModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model") || !ckpt.meta.contains("num_features")) {
    throw InputError("checkpoint metadata lacks the model description");
  }
  TndvgaModel model(model_config_from_json(ckpt.meta["model"]), ckpt.meta["num_features"].get<std::size_t>());
  const ParamStore fresh = model.init_params();
  for (const auto& [name, p] : fresh) {
    if (!ckpt.params.contains(name) || ckpt.params.at(name).value.shape() != p.value.shape()) {
      throw InputError("checkpoint parameter '" + name + "' missing or mis-shaped");
    }
  }
  if (ckpt.params.count() != fresh.count()) throw InputError("checkpoint has unexpected parameters");
  return model;
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    auto row = breakdown_json(r.losses[i]);
    row["epoch"] = i + 1;
    row["val_nll_y"] = r.val_nll_y.at(i);
    losses.push_back(row);
  }
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& m : r.metrics) metrics[m.split] = to_json(m);
  return {{"config", r.config},  {"seed", r.config["train"]["seed"]},
          {"best_epoch", r.best_epoch}, {"epochs_run", r.epochs_run},
          {"metrics", metrics},  {"losses", losses}};
}

RunReport make_report(const Dataset& data, const TrainResult& result, const TrainConfig& config) {
  RunReport r;
  r.config = {{"model", to_json(result.model_config)}, {"train", to_json(config)}};
  r.losses = result.log;
  r.val_nll_y = result.val_nll_y;
  r.best_epoch = result.best_epoch;
  r.epochs_run = result.epochs_run;
  const TndvgaModel model(result.model_config, data.num_features());
  const SparseMatrix adj = normalize_adjacency(data.adjacency);
  ParamStore params = result.params;
  for (const char* split : {"train", "val", "test"}) {
    r.metrics.push_back(evaluate(model, params, data, adj, split, predict_options(config)));
  }
  return r;
}

std::string train_log_csv(const std::vector<LossBreakdown>& log) {
  std::string s = "epoch,elbo,treat,pred,indep,disc,l2,total\n";
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& b = log[i];
    s += std::to_string(i + 1);
    for (double v : {b.elbo, b.treat, b.pred, b.indep, b.disc, b.l2, b.total}) s += "," + format_double(v);
    s += "\n";
  }
  return s;
}

RunReport run_training(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto result = train(data, model_config, config);
  const auto report = make_report(data, result, config);
  write_text(out_dir / "config.json", report.config.dump(2) + "\n");
  write_text(out_dir / "train_log.csv", train_log_csv(result.log));
  save_checkpoint(out_dir / "checkpoint.json", make_checkpoint(result, config, data.num_features()));
  write_text(out_dir / "report.json", to_json(report).dump(2) + "\n");
  return report;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<SweepCell> sweep(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                             std::span<const double> alpha_1_values, std::span<const double> alpha_2_values,
                             std::size_t jobs) {
  std::vector<SweepCell> cells;
  for (double a1 : alpha_1_values) {
    for (double a2 : alpha_2_values) cells.push_back({a1, a2, {}});
  }
  const SparseMatrix adj = normalize_adjacency(data.adjacency);
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    TrainConfig c = config;
    c.alpha_1 = cells[i].alpha_1;
    c.alpha_2 = cells[i].alpha_2;
    auto result = train(data, model_config, c);
    const TndvgaModel model(result.model_config, data.num_features());
    cells[i].test = evaluate(model, result.params, data, adj, "test", predict_options(c));
  });
  return cells;
}

}  // namespace tndvga
