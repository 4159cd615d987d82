#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "mmsn/checkpoint.hpp"
#include "mmsn/common.hpp"
#include "mmsn/optimizer.hpp"
#include "mmsn/trainer.hpp"
#include "test_util.hpp"

using namespace mmsn;

namespace {

// Small geometry: 64-px images, 16-px patches, 3 anchor views.
EngineConfig tiny_config(const std::string& features, std::uint64_t seed) {
  EngineConfig cfg;
  cfg.view.image_size = 64;
  cfg.view.patch_size = 16;
  cfg.view.focal_size = 32;
  cfg.view.n_anchor_views = 3;
  cfg.view.n_random_masked = 1;
  cfg.vit = nn::VitConfig::preset("vit-test");
  cfg.n_proj = 16;
  cfg.head_hidden = 32;
  cfg.loss.prototypes = 8;
  cfg.pretrain.batch_size = 4;
  cfg.pretrain.max_epochs = 100;
  cfg.pretrain.learning_rate = 1e-3;
  cfg.features = parse_features_field(features);
  cfg.seed = seed;
  return cfg;
}

TrainingSet tiny_data(int n_patients, int per_patient, std::uint64_t seed,
                      const std::optional<FeatureGroupSpec>& features) {
  const auto samples =
      generate_synthetic_dataset(n_patients, per_patient, 96, LabelModel::ehr_coupled, seed);
  return training_set_from_samples(samples, features);
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  CHECK(nn::cosine_lr(1e-4, 0, 100) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(nn::cosine_lr(1e-4, 100, 100) <= 1e-3 * 1e-4);
  CHECK(nn::cosine_lr(1e-4, 50, 100) == doctest::Approx(0.5e-4).epsilon(1e-9));
}

TEST_CASE("early stopper arithmetic: baseline plus patience stagnant epochs") {
  EarlyStopper stop;
  stop.patience = 5;
  stop.min_delta = 1e-5;
  int epochs = 0;
  for (int i = 0; i < 100; ++i) {
    ++epochs;
    if (stop.observe(1.0)) break;  // constant loss stream
  }
  CHECK(epochs == 6);

  EarlyStopper improving;
  improving.patience = 2;
  improving.min_delta = 1e-5;
  CHECK_FALSE(improving.observe(1.0));
  CHECK_FALSE(improving.observe(0.5));
  CHECK_FALSE(improving.observe(0.51));
  CHECK(improving.observe(0.52));
}

TEST_CASE("adamw minimizes a quadratic and applies decoupled decay") {
  nn::Parameter p("p", Eigen::MatrixXd::Constant(1, 1, 3.0));
  nn::AdamW opt(nn::AdamW::Hyper{0.9, 0.999, 1e-8, 0.0});
  opt.register_param(p);
  for (int i = 0; i < 500; ++i) {
    p.zero_grad();
    p.grad(0, 0) = 2.0 * p.value(0, 0);
    opt.step(0.05);
  }
  CHECK(std::abs(p.value(0, 0)) < 1e-2);

  nn::Parameter q("q", Eigen::MatrixXd::Constant(1, 1, 1.0));
  nn::AdamW decay(nn::AdamW::Hyper{0.9, 0.999, 1e-8, 0.1});
  decay.register_param(q);
  q.zero_grad();
  decay.step(0.1);  // zero gradient: only the decay term moves q
  CHECK(q.value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.1).epsilon(1e-12));
}

TEST_CASE("train_step without features never allocates the ehr branch") {
  EngineConfig cfg = tiny_config("none", 11);
  PretrainEngine engine(cfg, {});
  CHECK_FALSE(engine.state().has_ehr());

  EngineConfig with = tiny_config("icu", 11);
  PretrainEngine engine2(with, {});
  CHECK(engine2.state().has_ehr());
  CHECK(engine2.state().trainable_parameter_count() >
        engine.state().trainable_parameter_count());
}

TEST_CASE("one train step returns a finite loss and moves only the right branches") {
  EngineConfig cfg = tiny_config("icu", 13);
  PretrainEngine engine(cfg, {});
  const TrainingSet data = tiny_data(3, 2, 5, cfg.features);

  std::vector<Eigen::MatrixXd> target_before;
  engine.state().visit_ema([&](nn::Parameter& p) { target_before.push_back(p.value); });
  const Eigen::MatrixXd anchor_before = engine.state().anchor.patch_w.value;

  std::vector<const TrainingExample*> batch;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 4; ++i) {
    batch.push_back(&data.examples[i % data.examples.size()]);
    seeds.push_back(derive_seed(1, "views", 0, i));
  }
  const LossBreakdown lb = engine.train_step(batch, seeds, 1e-3);
  CHECK(std::isfinite(lb.total));
  CHECK(lb.total == doctest::Approx(lb.ce_term - lb.lambda * lb.entropy_term).epsilon(1e-12));
  CHECK(std::abs(lb.p_bar.sum() - 1.0) < 1e-6);

  // Anchor moved by the optimizer.
  CHECK((engine.state().anchor.patch_w.value - anchor_before).cwiseAbs().maxCoeff() > 0.0);

  // Target moved only by EMA: t' = m t + (1-m) a_new exactly.
  const double m = cfg.pretrain.ema_momentum;
  const Eigen::MatrixXd expect =
      m * target_before[0] + (1 - m) * engine.state().anchor.patch_w.value;
  CHECK((engine.state().target.patch_w.value - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("target branch gradients stay zero and have no optimizer slots") {
  EngineConfig cfg = tiny_config("sex", 17);
  PretrainEngine engine(cfg, {});
  const TrainingSet data = tiny_data(2, 2, 7, cfg.features);

  std::vector<const TrainingExample*> batch{&data.examples[0], &data.examples[1]};
  engine.train_step(batch, {derive_seed(2, "v", 0), derive_seed(2, "v", 1)}, 1e-3);

  engine.state().visit_ema([](nn::Parameter& p) {
    CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
  });

  std::set<std::string> slot_names;
  for (const auto& slot : const_cast<nn::AdamW&>(engine.optimizer()).slots()) {
    slot_names.insert(slot.param->name);
  }
  engine.state().visit_ema([&](nn::Parameter& p) { CHECK(slot_names.count(p.name) == 0); });
}

TEST_CASE("short optimization run reduces the loss") {
  EngineConfig cfg = tiny_config("icu", 23);
  PretrainEngine engine(cfg, {});
  const TrainingSet data = tiny_data(6, 2, 9, cfg.features);

  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    std::vector<const TrainingExample*> batch;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < 4; ++i) {
      const std::size_t idx = static_cast<std::size_t>((step * 4 + i) % data.examples.size());
      batch.push_back(&data.examples[idx]);
      seeds.push_back(derive_seed(3, "views", static_cast<std::uint64_t>(step), idx));
    }
    losses.push_back(engine.train_step(batch, seeds, 1e-3).total);
  }
  const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10.0;
  const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10.0;
  CHECK(last < first);
}

TEST_CASE("training loop writes the step log with the documented fields") {
  testutil::TempDir tmp("trainlog");
  EngineConfig cfg = tiny_config("none", 29);
  cfg.pretrain.max_epochs = 2;
  PretrainEngine engine(cfg, {{"note", "test"}});
  const TrainingSet data = tiny_data(3, 2, 11, cfg.features);
  const TrainResult result = engine.train(data, tmp.path());

  CHECK(result.epochs_run == 2);
  CHECK(std::filesystem::exists(result.checkpoint_path));

  std::ifstream log(tmp.path() / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "epoch", "lr", "ce_term", "entropy_term", "total"}) {
      CHECK(j.contains(key));
    }
    ++lines;
  }
  CHECK(lines == static_cast<int>(result.step_losses.size()));
}

TEST_CASE("same seed reproduces training bit for bit") {
  testutil::TempDir tmp("det");
  auto run = [&](const std::filesystem::path& dir) {
    EngineConfig cfg = tiny_config("icu", 31);
    cfg.pretrain.max_epochs = 2;
    PretrainEngine engine(cfg, {});
    const TrainingSet data = tiny_data(4, 2, 13, cfg.features);
    return engine.train(data, dir);
  };
  const TrainResult a = run(tmp.path() / "a");
  const TrainResult b = run(tmp.path() / "b");
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  for (std::size_t i = 0; i < a.step_losses.size(); ++i) {
    CHECK(a.step_losses[i] == b.step_losses[i]);  // bitwise equality
  }
  CHECK(testutil::files_identical(a.checkpoint_path, b.checkpoint_path));
}

TEST_CASE("resume from a mid-run checkpoint matches the uninterrupted run") {
  testutil::TempDir tmp("resume");
  const TrainingSet data = tiny_data(4, 2, 17, parse_features_field("sex"));

  EngineConfig cfg = tiny_config("sex", 37);
  cfg.pretrain.max_epochs = 4;

  PretrainEngine full(cfg, mmsn::to_json(RunConfig{}));
  const TrainResult full_result = full.train(data, tmp.path() / "full");

  PretrainEngine half(cfg, mmsn::to_json(RunConfig{}));
  half.train(data, tmp.path() / "half", 2);
  auto resumed = PretrainEngine::from_checkpoint(tmp.path() / "half" / "checkpoint.ckpt");
  const TrainResult rest = resumed->train(data, tmp.path() / "resumed");

  CHECK(full_result.epochs_run == 4);
  CHECK(resumed->completed_epochs() == 4);
  CHECK(testutil::files_identical(full_result.checkpoint_path, rest.checkpoint_path));
}

TEST_CASE("max_steps caps the run") {
  testutil::TempDir tmp("cap");
  EngineConfig cfg = tiny_config("none", 41);
  cfg.pretrain.max_epochs = 50;
  cfg.pretrain.max_steps = 5;
  PretrainEngine engine(cfg, {});
  const TrainingSet data = tiny_data(4, 2, 19, cfg.features);
  const TrainResult result = engine.train(data, tmp.path());
  CHECK(result.steps_run == 5);
}

TEST_CASE("non-finite loss aborts with its own code and a diagnostic dump") {
  testutil::TempDir tmp("nan");
  EngineConfig cfg = tiny_config("none", 43);
  cfg.pretrain.max_epochs = 1;
  PretrainEngine engine(cfg, {});
  engine.state().anchor.patch_w.value.setConstant(1e308);  // overflows to inf downstream
  const TrainingSet data = tiny_data(3, 1, 21, cfg.features);
  CHECK_THROWS_WITH_AS(engine.train(data, tmp.path()), doctest::Contains("NonFiniteLoss"), Error);
  CHECK(std::filesystem::exists(tmp.path() / "nonfinite_loss.json"));
}

TEST_CASE("checkpoint archive round trip preserves every array bit for bit") {
  testutil::TempDir tmp("archive");
  Prng rng(47);
  ArrayArchive a;
  a.put("x/w", testutil::random_matrix(7, 3, rng));
  a.put("y/b", testutil::random_matrix(1, 9, rng));
  a.put_bytes("meta.json", "{\"k\":1}");
  a.save(tmp.path() / "t.ckpt");
  CHECK_FALSE(std::filesystem::exists(tmp.path() / "t.ckpt.tmp"));

  const ArrayArchive b = ArrayArchive::load(tmp.path() / "t.ckpt");
  CHECK((a.get("x/w") - b.get("x/w")).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.get("y/b") - b.get("y/b")).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.get_bytes("meta.json") == "{\"k\":1}");
  CHECK_THROWS_WITH_AS(b.get("missing"), doctest::Contains("CheckpointMismatch"), Error);
}

TEST_CASE("checkpoint meta records the feature group dimension") {
  testutil::TempDir tmp("meta");
  EngineConfig cfg = tiny_config("D+SM+SI", 53);
  cfg.pretrain.max_epochs = 1;
  PretrainEngine engine(cfg, {});
  const TrainingSet data = tiny_data(3, 1, 23, cfg.features);
  const TrainResult result = engine.train(data, tmp.path());

  const ArrayArchive a = ArrayArchive::load(result.checkpoint_path);
  const auto meta = nlohmann::json::parse(a.get_bytes("meta.json"));
  CHECK(meta["engine"]["n_ehr"] == 13);
  CHECK(meta["engine"]["features"] == "age+sex+view+pos+icu+mort");
}
