#include "tndvga/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tndvga/checkpoint.hpp"
#include "tndvga/errors.hpp"

namespace tndvga {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("DVGA_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const std::string_view s(v);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("DVGA_SEED must be a non-negative integer, got '" + std::string(s) + "'");
  }
  return seed;
}

/// Flags shared by every command that trains.
struct TrainFlags {
  std::string config;
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> alpha_t, alpha_y, alpha_1, alpha_2, lambda;
  std::optional<std::size_t> patience;
  bool no_patience = false;
  std::optional<std::size_t> eval_samples;
  std::optional<std::size_t> reg_batch;
  std::optional<std::size_t> hidden;
  std::optional<int> gcn_layers;
  std::optional<std::size_t> d_zt, d_zc, d_zy, d_zo;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--config", config, "JSON with optional \"model\" and \"train\" objects");
    cmd.add_option("--variant", variant, "full|no_hsic|no_bp|single_factor|zero_zt|zero_zc|zero_zy|zero_zo");
    cmd.add_option("--epochs", epochs);
    cmd.add_option("--lr", lr, "Adam learning rate");
    cmd.add_option("--alpha-t", alpha_t);
    cmd.add_option("--alpha-y", alpha_y);
    cmd.add_option("--alpha-1", alpha_1, "HSIC weight");
    cmd.add_option("--alpha-2", alpha_2, "balancing weight");
    cmd.add_option("--lambda", lambda, "L2 coefficient");
    cmd.add_option("--patience", patience);
    cmd.add_flag("--no-early-stop", no_patience);
    cmd.add_option("--eval-samples", eval_samples, "posterior draws per prediction");
    cmd.add_option("--reg-batch", reg_batch, "rows per epoch for HSIC and balancing (0 = all)");
    cmd.add_option("--hidden", hidden, "encoder and head hidden width");
    cmd.add_option("--gcn-layers", gcn_layers, "GCN layers per encoder channel (1-3)");
    cmd.add_option("--d-zt", d_zt);
    cmd.add_option("--d-zc", d_zc);
    cmd.add_option("--d-zy", d_zy);
    cmd.add_option("--d-zo", d_zo);
  }

  /// Precedence: flag, then config file, then DVGA_SEED, then defaults.
  std::pair<ModelConfig, TrainConfig> resolve(std::optional<std::uint64_t> seed_flag) const {
    nlohmann::json model_j = nlohmann::json::object();
    nlohmann::json train_j = nlohmann::json::object();
    if (!config.empty()) {
      const auto j = read_json(config);
      if (!j.is_object()) throw InputError(config + ": expected a JSON object");
      if (j.contains("model")) model_j = j["model"];
      if (j.contains("train")) train_j = j["train"];
    }
    if (!train_j.contains("seed")) {
      if (auto s = env_seed()) train_j["seed"] = *s;
    }
    if (seed_flag) train_j["seed"] = *seed_flag;
    if (variant) train_j["variant"] = *variant;
    if (epochs) train_j["epochs"] = *epochs;
    if (lr) train_j["learning_rate"] = *lr;
    if (alpha_t) train_j["alpha_t"] = *alpha_t;
    if (alpha_y) train_j["alpha_y"] = *alpha_y;
    if (alpha_1) train_j["alpha_1"] = *alpha_1;
    if (alpha_2) train_j["alpha_2"] = *alpha_2;
    if (lambda) train_j["lambda_l2"] = *lambda;
    if (patience) train_j["patience"] = *patience;
    if (no_patience) train_j["patience"] = nullptr;
    if (eval_samples) train_j["eval_samples"] = *eval_samples;
    if (reg_batch) train_j["reg_batch"] = *reg_batch;
    if (hidden) {
      model_j["hidden_dim"] = *hidden;
      model_j["head_hidden_dim"] = *hidden;
    }
    if (gcn_layers) model_j["gcn_layers"] = *gcn_layers;
    if (d_zt) model_j["d_zt"] = *d_zt;
    if (d_zc) model_j["d_zc"] = *d_zc;
    if (d_zy) model_j["d_zy"] = *d_zy;
    if (d_zo) model_j["d_zo"] = *d_zo;
    return {model_config_from_json(model_j), train_config_from_json(train_j)};
  }
};

std::string scenario_dir_name(const GenConfig& c) {
  return "t" + std::to_string(c.m_t) + "c" + std::to_string(c.m_c) + "y" + std::to_string(c.m_y) + "o" +
         std::to_string(c.m_o) + "_s" + std::to_string(c.seed);
}

std::vector<std::uint64_t> seed_list(const StudyOptions& o) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < o.seeds; ++i) s.push_back(o.base_seed + i);
  return s;
}

GenConfig base_scenario(const StudyOptions& o, double zeta, std::uint64_t seed) {
  GenConfig g;
  g.n = o.n;
  g.zeta = zeta;
  g.seed = seed;
  return g;
}

}  // namespace

Metrics run_spec(const RunSpec& spec, const ModelConfig& model, const TrainConfig& train) {
  const Dataset data = generate(spec.data);
  TrainConfig c = train;
  c.seed = spec.data.seed;
  c.variant = spec.variant;
  c.alpha_1 = spec.alpha_1;
  c.alpha_2 = spec.alpha_2;
  auto result = tndvga::train(data, model, c);
  const TndvgaModel m(result.model_config, data.num_features());
  const SparseMatrix adj = normalize_adjacency(data.adjacency);
  return evaluate(m, result.params, data, adj, "test", predict_options(c));
}

std::vector<Metrics> run_specs(const std::vector<RunSpec>& specs, const ModelConfig& model, const TrainConfig& train,
                               std::size_t jobs) {
  std::vector<Metrics> out(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) { out[i] = run_spec(specs[i], model, train); });
  return out;
}

std::vector<RunSpec> bias_study_specs(const StudyOptions& o) {
  std::vector<RunSpec> specs;
  for (double zeta : o.zetas) {
    for (auto seed : seed_list(o)) {
      for (Variant v : {Variant::kFull, Variant::kNoHsic, Variant::kNoBp, Variant::kSingleFactor}) {
        specs.push_back({base_scenario(o, zeta, seed), v, o.train.alpha_1, o.train.alpha_2});
      }
    }
  }
  return specs;
}

std::vector<RunSpec> radar_study_specs(const StudyOptions& o) {
  std::vector<GenConfig> scenarios;
  if (o.all_scenarios) {
    scenarios = scenario_dims(base_scenario(o, 1.0, 0));
  } else {
    scenarios.push_back(base_scenario(o, 1.0, 0));
  }
  std::vector<RunSpec> specs;
  for (const auto& sc : scenarios) {
    for (auto seed : seed_list(o)) {
      GenConfig g = sc;
      g.seed = seed;
      for (Variant v : {Variant::kFull, Variant::kZeroZt, Variant::kZeroZc, Variant::kZeroZy, Variant::kZeroZo}) {
        specs.push_back({g, v, o.train.alpha_1, o.train.alpha_2});
      }
    }
  }
  return specs;
}

std::vector<RunSpec> sweep_study_specs(const StudyOptions& o) {
  std::vector<RunSpec> specs;
  for (auto seed : seed_list(o)) {
    for (double a1 : kSweepValues) {
      for (double a2 : kSweepValues) specs.push_back({base_scenario(o, 1.0, seed), Variant::kFull, a1, a2});
    }
  }
  return specs;
}

std::vector<StudyRow> run_study(const std::string& study, const StudyOptions& o) {
  std::vector<RunSpec> specs;
  if (study == "bias") {
    specs = bias_study_specs(o);
  } else if (study == "radar") {
    specs = radar_study_specs(o);
  } else if (study == "sweep") {
    specs = sweep_study_specs(o);
  } else {
    throw InputError("unknown study '" + study + "' (expected bias, radar or sweep)");
  }
  const auto metrics = run_specs(specs, o.model, o.train, o.jobs);
  std::vector<StudyRow> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) rows.push_back({study, specs[i], metrics[i]});
  return rows;
}

std::string study_csv(const std::vector<StudyRow>& rows) {
  std::string s = "study,variant,n,m_t,m_c,m_y,m_o,zeta,seed,alpha_1,alpha_2,pehe_root,ate_error,n_test\n";
  for (const auto& r : rows) {
    const auto& g = r.spec.data;
    s += r.study + "," + variant_name(r.spec.variant) + "," + std::to_string(g.n) + "," + std::to_string(g.m_t) + "," +
         std::to_string(g.m_c) + "," + std::to_string(g.m_y) + "," + std::to_string(g.m_o) + "," + fmt(g.zeta) + "," +
         std::to_string(g.seed) + "," + fmt(r.spec.alpha_1) + "," + fmt(r.spec.alpha_2) + "," +
         fmt(r.test.pehe_root) + "," + fmt(r.test.ate_error) + "," + std::to_string(r.test.n_evaluated) + "\n";
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled variational graph autoencoder for individual treatment effects", "tndvga"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write synthetic dataset directories");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_n;
  std::optional<double> gen_zeta;
  bool gen_grid = false;
  std::size_t gen_seeds = 5;
  gen->add_option("--config", gen_config, "JSON generator config");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "seed (grid mode: base seed)");
  gen->add_option("--n", gen_n, "number of nodes");
  gen->add_option("--zeta", gen_zeta, "selection-bias slope");
  gen->add_flag("--grid", gen_grid, "all 16 scenarios x --seeds seeds, one subdirectory each");
  gen->add_option("--seeds", gen_seeds, "seeds per scenario in grid mode")->check(CLI::PositiveNumber);

  // train
  auto* tr = app.add_subcommand("train", "Train one model and write a run directory");
  std::string tr_data, tr_out;
  std::optional<std::uint64_t> tr_seed;
  TrainFlags tr_flags;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--seed", tr_seed);
  tr_flags.add_to(*tr);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained run on a dataset split");
  std::string ev_run, ev_data, ev_split = "test", ev_out;
  std::optional<std::size_t> ev_samples;
  ev->add_option("--run", ev_run, "run directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--samples", ev_samples, "posterior draws (default: the run's eval_samples)");
  ev->add_option("--out", ev_out, "report path (default: <run>/eval_<split>.json)");

  // figure
  auto* fig = app.add_subcommand("figure", "Run a study and emit its plot data as CSV");
  std::string fig_study, fig_out;
  std::optional<std::uint64_t> fig_seed;
  StudyOptions fig_opts;
  bool fig_base_only = false;
  std::size_t fig_jobs = 1;
  TrainFlags fig_flags;
  fig->add_option("--study", fig_study, "bias|radar|sweep")->required()->check(CLI::IsMember({"bias", "radar", "sweep"}));
  fig->add_option("--out", fig_out, "CSV path")->required();
  fig->add_option("--seed", fig_seed, "base seed");
  fig->add_option("--seeds", fig_opts.seeds, "seeds per configuration")->check(CLI::PositiveNumber);
  fig->add_option("--n", fig_opts.n, "nodes per dataset");
  fig->add_option("--zetas", fig_opts.zetas, "selection-bias sweep");
  fig->add_flag("--base-scenario-only", fig_base_only, "radar study on (8,8,8,8) only");
  fig->add_option("--jobs", fig_jobs, "parallel runs")->check(CLI::PositiveNumber);
  fig_flags.add_to(*fig);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Train a 5x5 (alpha_1, alpha_2) grid on one dataset");
  std::string sw_data, sw_out;
  std::optional<std::uint64_t> sw_seed;
  std::size_t sw_jobs = 1;
  TrainFlags sw_flags;
  sw->add_option("--data", sw_data, "dataset directory")->required();
  sw->add_option("--out", sw_out, "CSV path")->required();
  sw->add_option("--seed", sw_seed);
  sw->add_option("--jobs", sw_jobs, "parallel runs")->check(CLI::PositiveNumber);
  sw_flags.add_to(*sw);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      GenConfig base = gen_config.empty() ? GenConfig{} : gen_config_from_json(read_json(gen_config));
      if (gen_config.empty() || !read_json(gen_config).contains("seed")) {
        if (auto s = env_seed()) base.seed = *s;
      }
      if (gen_seed) base.seed = *gen_seed;
      if (gen_n) base.n = *gen_n;
      if (gen_zeta) base.zeta = *gen_zeta;
      validate(base);
      if (gen_grid) {
        const auto grid = scenario_grid(base.seed, gen_seeds, base);
        for (const auto& c : grid) save(generate(c), fs::path(gen_out) / scenario_dir_name(c));
        out << "wrote " << grid.size() << " datasets under " << gen_out << "\n";
      } else {
        save(generate(base), gen_out);
        out << "wrote " << gen_out << "\n";
      }
    } else if (*tr) {
      if (!fs::is_directory(tr_data)) throw InputError("data directory not found: " + tr_data);
      const Dataset data = load(tr_data);
      const auto [model, train] = tr_flags.resolve(tr_seed);
      const auto report = run_training(data, model, train, tr_out);
      out << "trained " << report.epochs_run << " epochs (best " << report.best_epoch << ") -> " << tr_out << "\n";
      for (const auto& m : report.metrics) {
        out << "  " << m.split << ": pehe_root=" << fmt(m.pehe_root) << " ate_error=" << fmt(m.ate_error)
            << " nll_y=" << fmt(m.nll_y) << "\n";
      }
    } else if (*ev) {
      if (!fs::is_directory(ev_data)) throw InputError("data directory not found: " + ev_data);
      const fs::path run(ev_run);
      if (!fs::exists(run / "checkpoint.json")) throw InputError("no checkpoint.json in " + ev_run);
      Checkpoint ckpt = load_checkpoint(run / "checkpoint.json");
      const TndvgaModel model = model_from_checkpoint(ckpt);
      const TrainConfig train = train_config_from_json(ckpt.meta.value("train", nlohmann::json::object()));
      const Dataset data = load(ev_data);
      if (data.num_features() != model.num_features()) throw InputError("dataset feature count does not match the run");
      PredictOptions opts = predict_options(train);
      if (ev_samples) opts.samples = *ev_samples;
      const SparseMatrix adj = normalize_adjacency(data.adjacency);
      const Metrics m = evaluate(model, ckpt.params, data, adj, ev_split, opts);
      nlohmann::json report = {{ev_split, to_json(m)},
                               {"config", {{"model", ckpt.meta["model"]}, {"train", ckpt.meta["train"]}}},
                               {"seed", train.seed}};
      const fs::path dest = ev_out.empty() ? run / ("eval_" + ev_split + ".json") : fs::path(ev_out);
      write_file(dest, report.dump(2) + "\n");
      out << ev_split << ": pehe_root=" << fmt(m.pehe_root) << " ate_error=" << fmt(m.ate_error)
          << " nll_y=" << fmt(m.nll_y) << " -> " << dest.string() << "\n";
    } else if (*fig) {
      std::tie(fig_opts.model, fig_opts.train) = fig_flags.resolve(fig_seed);
      fig_opts.base_seed = fig_opts.train.seed;
      fig_opts.all_scenarios = !fig_base_only;
      fig_opts.jobs = fig_jobs;
      const auto rows = run_study(fig_study, fig_opts);
      write_file(fig_out, study_csv(rows));
      out << "wrote " << rows.size() << " rows to " << fig_out << "\n";
    } else if (*sw) {
      if (!fs::is_directory(sw_data)) throw InputError("data directory not found: " + sw_data);
      const Dataset data = load(sw_data);
      const auto [model, train] = sw_flags.resolve(sw_seed);
      const auto cells = sweep(data, model, train, kSweepValues, kSweepValues, sw_jobs);
      std::string csv = "alpha_1,alpha_2,pehe_root,ate_error,nll_y,n_test\n";
      for (const auto& c : cells) {
        csv += fmt(c.alpha_1) + "," + fmt(c.alpha_2) + "," + fmt(c.test.pehe_root) + "," + fmt(c.test.ate_error) +
               "," + fmt(c.test.nll_y) + "," + std::to_string(c.test.n_evaluated) + "\n";
      }
      write_file(sw_out, csv);
      out << "wrote " << cells.size() << " rows to " << sw_out << "\n";
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace tndvga
