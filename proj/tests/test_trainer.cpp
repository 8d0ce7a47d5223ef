#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tndvga/errors.hpp"
#include "tndvga/synthgen.hpp"
#include "tndvga/trainer.hpp"

using namespace tndvga;
namespace fs = std::filesystem;

namespace {

Dataset toy(std::uint64_t seed = 1, std::size_t n = 120) {
  GenConfig g;
  g.n = n;
  g.m_t = g.m_c = g.m_y = g.m_o = 2;
  g.seed = seed;
  return generate(g);
}

ModelConfig small_model() {
  ModelConfig m;
  m.layout = {2, 2, 2, 2};
  m.hidden_dim = m.head_hidden_dim = 8;
  return m;
}

TrainConfig quick(std::size_t epochs = 5) {
  TrainConfig c;
  c.epochs = epochs;
  c.eval_samples = 4;
  c.reg_batch = 32;
  c.learning_rate = 1e-3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::kFull, Variant::kNoHsic, Variant::kNoBp, Variant::kSingleFactor, Variant::kZeroZt,
                 Variant::kZeroZc, Variant::kZeroZy, Variant::kZeroZo}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK(variant_name(Variant::kNoHsic) == "no_hsic");
  CHECK_THROWS_AS(parse_variant("nope"), InputError);
}

TEST_CASE("config validation and json") {
  TrainConfig c;
  CHECK(c.learning_rate == 3e-4);
  CHECK(c.alpha_t == 100.0);
  CHECK(c.lambda_l2 == 5e-5);
  CHECK(c.epochs == 500);
  CHECK(c.patience == 100);
  CHECK(c.eval_samples == 100);
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(c), InputError);
  c = {};
  c.epochs = 0;
  CHECK_THROWS_AS(validate(c), InputError);

  c = quick();
  c.variant = Variant::kNoBp;
  c.patience = kNoPatience;
  const auto j = to_json(c);
  CHECK(j["patience"].is_null());
  CHECK(j["variant"] == "no_bp");
  const auto back = train_config_from_json(j);
  CHECK(back.variant == Variant::kNoBp);
  CHECK(back.patience == kNoPatience);
  CHECK(back.reg_batch == 32);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"variant", "bogus"}}), InputError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochs", "ten"}}), InputError);
}

TEST_CASE("variant mapping") {
  const auto base = small_model();
  TrainConfig c;
  c.variant = Variant::kNoHsic;
  CHECK(effective_weights(c).alpha_1 == 0.0);
  CHECK(effective_weights(c).alpha_2 == 1.0);
  c.variant = Variant::kNoBp;
  CHECK(effective_weights(c).alpha_2 == 0.0);
  c.variant = Variant::kSingleFactor;
  CHECK(effective_model_config(base, c).layout == LatentLayout{0, 8, 0, 0});
  c.variant = Variant::kZeroZy;
  CHECK(effective_model_config(base, c).layout == LatentLayout{2, 2, 0, 2});
  c.variant = Variant::kZeroZt;
  CHECK(effective_model_config(base, c).layout == LatentLayout{0, 2, 2, 2});
}

TEST_CASE("one epoch takes one step") {
  const auto d = toy();
  const auto r = train(d, small_model(), quick(1));
  CHECK(r.epochs_run == 1);
  CHECK(r.log.size() == 1);
  CHECK(r.val_nll_y.size() == 1);
  CHECK(r.optimizer.step == 1);
}

TEST_CASE("training is deterministic and seed dependent") {
  const auto d = toy();
  const auto a = train(d, small_model(), quick());
  const auto b = train(d, small_model(), quick());
  CHECK(a.params.same_values(b.params));
  CHECK(a.val_nll_y == b.val_nll_y);
  auto c = quick();
  c.seed = 9;
  CHECK_FALSE(train(d, small_model(), c).params.same_values(a.params));
}

TEST_CASE("early stopping keeps the best epoch") {
  const auto d = toy();
  auto c = quick(60);
  c.patience = 3;
  c.learning_rate = 5e-2;
  const auto r = train(d, small_model(), c);
  CHECK(r.epochs_run <= 60);
  const auto best = std::min_element(r.val_nll_y.begin(), r.val_nll_y.end());
  CHECK(r.best_epoch == static_cast<std::size_t>(best - r.val_nll_y.begin()) + 1);
  if (r.epochs_run < 60) CHECK(r.epochs_run == r.best_epoch + 3);
}

TEST_CASE("optimization sanity on a linear toy") {
  // Linear outcomes, all alphas zero; outcome loss should fall.
  auto d = toy(3, 150);
  for (std::size_t i = 0; i < d.num_nodes(); ++i) {
    d.truth->mu0[i] = d.features(i, 2);
    d.truth->mu1[i] = d.features(i, 2) + 1.0;
    d.outcome[i] = d.treatment[i] ? d.truth->mu1[i] : d.truth->mu0[i];
  }
  auto c = quick(50);
  c.alpha_t = c.alpha_y = c.alpha_1 = c.alpha_2 = c.lambda_l2 = 0.0;
  c.patience = kNoPatience;
  c.learning_rate = 1e-2;
  const auto r = train(d, small_model(), c);
  CHECK(r.log.back().elbo < r.log.front().elbo);
}

TEST_CASE("train rejects unusable splits") {
  auto d = toy();
  d.splits.reset();
  CHECK_THROWS_AS(train(d, small_model(), quick()), InputError);
  d = toy();
  d.splits->val.clear();
  CHECK_THROWS_AS(train(d, small_model(), quick()), InputError);
}

TEST_CASE("checkpoint round trip rebuilds the model") {
  const auto d = toy();
  const auto c = quick();
  const auto r = train(d, small_model(), c);
  const auto ckpt = make_checkpoint(r, c, d.num_features());
  const auto m = model_from_checkpoint(ckpt);
  CHECK(m.layout() == r.model_config.layout);
  CHECK(m.num_features() == d.num_features());

  auto bad = ckpt;
  bad.params.at("dec.t.W1").value = Tensor::matrix(1, 1);
  CHECK_THROWS_AS(model_from_checkpoint(bad), InputError);
  bad = ckpt;
  bad.meta.erase("model");
  CHECK_THROWS_AS(model_from_checkpoint(bad), InputError);
}

TEST_CASE("run directory contents") {
  const auto d = toy();
  auto c = quick(3);
  c.variant = Variant::kNoHsic;
  const auto dir = fs::temp_directory_path() / "tndvga_trainer_run";
  fs::remove_all(dir);
  const auto report = run_training(d, small_model(), c, dir);
  for (const char* f : {"config.json", "train_log.csv", "checkpoint.json", "report.json"}) CHECK(fs::exists(dir / f));
  const auto log = slurp(dir / "train_log.csv");
  CHECK(log.rfind("epoch,elbo,treat,pred,indep,disc,l2,total\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  const auto cfg = nlohmann::json::parse(slurp(dir / "config.json"));
  CHECK(cfg["train"]["variant"] == "no_hsic");
  const auto rep = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(rep.contains("seed"));
  CHECK(rep["metrics"]["test"]["pehe_root"].is_number());
  CHECK(report.metrics.size() == 3);

  const auto dir2 = fs::temp_directory_path() / "tndvga_trainer_run2";
  fs::remove_all(dir2);
  run_training(d, small_model(), c, dir2);
  for (const char* f : {"config.json", "train_log.csv", "checkpoint.json", "report.json"}) {
    CHECK(slurp(dir / f) == slurp(dir2 / f));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("sweep grid order and parallel determinism") {
  const auto d = toy();
  const std::vector<double> a1{0.1, 10.0}, a2{1.0, 100.0};
  const auto serial = sweep(d, small_model(), quick(2), a1, a2, 1);
  const auto parallel = sweep(d, small_model(), quick(2), a1, a2, 3);
  REQUIRE(serial.size() == 4);
  CHECK(serial[1].alpha_1 == 0.1);
  CHECK(serial[1].alpha_2 == 100.0);
  CHECK(serial[2].alpha_1 == 10.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(serial[i].test.pehe_root == parallel[i].test.pehe_root);
}

TEST_CASE("parallel_for propagates failures") {
  std::vector<int> hit(10, 0);
  parallel_for(10, 4, [&](std::size_t i) { hit[i] = 1; });
  CHECK(std::count(hit.begin(), hit.end(), 1) == 10);
  CHECK_THROWS_AS(parallel_for(5, 2, [](std::size_t i) { if (i == 3) throw InputError("boom"); }), InputError);
}
