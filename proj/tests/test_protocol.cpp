#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "mmsn/checkpoint.hpp"
#include "mmsn/common.hpp"
#include "mmsn/png_io.hpp"
#include "mmsn/probe.hpp"
#include "mmsn/run_config.hpp"
#include "mmsn/trainer.hpp"
#include "test_util.hpp"

using namespace mmsn;

namespace {

struct Fixture {
  testutil::TempDir tmp{"protocol"};
  std::filesystem::path data_dir;
  std::filesystem::path ckpt;

  Fixture() {
    data_dir = tmp.path() / "data";
    std::filesystem::create_directories(data_dir / "images");
    const auto samples = generate_synthetic_dataset(20, 3, 96, LabelModel::ehr_coupled, 5);
    const auto splits = split_by_patient(samples, {0.5, 0.2, 0.3}, 5);
    for (const auto& s : samples) {
      write_png_gray8(data_dir / default_image_relpath(s.sample_id), s.image);
    }
    save_manifest(splits.train, data_dir / "train.csv");
    save_manifest(splits.val, data_dir / "val.csv");
    save_manifest(splits.test, data_dir / "test.csv");

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
    cfg.pretrain.batch_size = 6;
    cfg.pretrain.max_epochs = 1;
    cfg.features = parse_features_field("icu");
    cfg.seed = 9;

    const DatasetManifest train = load_manifest(data_dir / "train.csv");
    const TrainingSet set = load_training_set(train, cfg.features);
    PretrainEngine engine(cfg, {});
    ckpt = engine.train(set, tmp.path() / "run").checkpoint_path;
  }
};

}  // namespace

TEST_CASE("embeddings come from the frozen target encoder deterministically") {
  Fixture fx;
  const LoadedModel model = load_model(fx.ckpt);
  const DatasetManifest test = load_manifest(fx.data_dir / "test.csv");

  const EmbeddingSet a = extract_embeddings(test, model);
  CHECK(a.x.rows() == static_cast<long>(test.entries.size()));
  CHECK(a.x.cols() == 32);
  CHECK(a.y.cols() == kNumLabels);
  CHECK(a.x.allFinite());

  const EmbeddingSet b = extract_embeddings(test, model);
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);

  // A different checkpoint (perturbed weights) must give different rows.
  LoadedModel perturbed = load_model(fx.ckpt);
  perturbed.state->target.patch_w.value.array() += 0.05;
  const EmbeddingSet c = extract_embeddings(test, perturbed);
  CHECK((a.x - c.x).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("linear protocol runs the full grid and evaluates the winner once") {
  Fixture fx;
  const LoadedModel model = load_model(fx.ckpt);
  const DatasetManifest train = load_manifest(fx.data_dir / "train.csv");
  const DatasetManifest val = load_manifest(fx.data_dir / "val.csv");
  const DatasetManifest test = load_manifest(fx.data_dir / "test.csv");

  EvalSection eval;
  eval.max_epochs = 3;
  eval.n_bootstrap = 150;

  // Frozen contract: encoder bytes identical before and after.
  std::vector<Eigen::MatrixXd> before;
  model.state->target.visit([&](nn::Parameter& p) { before.push_back(p.value); });

  std::vector<nlohmann::json> log;
  const ProtocolResult result = run_protocol("linear", model, train, val, test, eval, 3,
                                             [&log](const nlohmann::json& j) { log.push_back(j); });

  CHECK(result.runs.size() == 10);
  CHECK(log.size() == 10);
  for (const auto& line : log) {
    CHECK(line.at("kind") == "grid");
    CHECK(line.contains("val_auroc"));
  }
  CHECK(result.best_index >= 0);
  CHECK(result.test_report.n_samples == static_cast<int>(test.entries.size()));
  CHECK(result.test_report.scores.rows() == result.test_report.labels.rows());

  std::size_t i = 0;
  model.state->target.visit([&](nn::Parameter& p) {
    CHECK((p.value - before[i++]).cwiseAbs().maxCoeff() == 0.0);
  });
}

TEST_CASE("parallel grid execution reproduces the sequential result") {
  Fixture fx;
  const LoadedModel model = load_model(fx.ckpt);
  const DatasetManifest train = load_manifest(fx.data_dir / "train.csv");
  const DatasetManifest val = load_manifest(fx.data_dir / "val.csv");
  const DatasetManifest test = load_manifest(fx.data_dir / "test.csv");

  EvalSection eval;
  eval.max_epochs = 2;
  eval.n_bootstrap = 120;
  const ProtocolResult seq = run_protocol("linear", model, train, val, test, eval, 4, nullptr);
  eval.jobs = 4;
  const ProtocolResult par = run_protocol("linear", model, train, val, test, eval, 4, nullptr);

  REQUIRE(seq.runs.size() == par.runs.size());
  for (std::size_t i = 0; i < seq.runs.size(); ++i) {
    CHECK(seq.runs[i].val_auroc == par.runs[i].val_auroc);
  }
  CHECK(seq.best_index == par.best_index);
  CHECK(seq.test_report.auroc == par.test_report.auroc);
}

TEST_CASE("finetuning updates the encoder copy but not the checkpoint model") {
  Fixture fx;
  const LoadedModel model = load_model(fx.ckpt);
  const DatasetManifest train = load_manifest(fx.data_dir / "train.csv");
  const DatasetManifest val = load_manifest(fx.data_dir / "val.csv");

  const ImageSet img_train = load_image_set(train);
  const ImageSet img_val = load_image_set(val);

  GridRun run;
  run.lr = 1e-3;
  run.probe_seed = 7;
  EvalSection eval;
  eval.max_epochs = 1;
  eval.batch_size = 8;

  const Eigen::MatrixXd pretrained = model.state->target.patch_w.value;
  const TrainedProbe probe = train_finetune_probe(model, img_train, img_val, run, eval);
  REQUIRE(probe.encoder != nullptr);
  CHECK((probe.encoder->patch_w.value - pretrained).cwiseAbs().maxCoeff() > 0.0);
  CHECK((model.state->target.patch_w.value - pretrained).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("low-data protocol launches 5 seeded runs per fraction") {
  Fixture fx;
  const LoadedModel model = load_model(fx.ckpt);
  const DatasetManifest train = load_manifest(fx.data_dir / "train.csv");
  const DatasetManifest val = load_manifest(fx.data_dir / "val.csv");
  const DatasetManifest test = load_manifest(fx.data_dir / "test.csv");

  GridRun best;
  best.lr = 1e-3;
  EvalSection eval;
  eval.max_epochs = 1;
  eval.batch_size = 8;
  eval.n_bootstrap = 120;

  std::vector<nlohmann::json> log;
  const auto records = low_data_protocol(model, train, val, test, {0.3, 0.6}, best, eval, 11,
                                         [&log](const nlohmann::json& j) { log.push_back(j); });
  REQUIRE(records.size() == 10);  // 2 fractions x 5 subsets
  CHECK(log.size() == 10);

  for (double fraction : {0.3, 0.6}) {
    int count = 0, selected = 0;
    for (const auto& r : records) {
      if (r.fraction == fraction) {
        ++count;
        selected += r.selected ? 1 : 0;
        CHECK(r.test_report.n_samples == static_cast<int>(test.entries.size()));
      }
    }
    CHECK(count == 5);
    CHECK(selected == 1);
  }
}

TEST_CASE("run config parsing is strict and stable") {
  const nlohmann::json good = {
      {"seed", 7},
      {"view", {{"image_size", 64}, {"patch_size", 16}, {"focal_size", 32},
                {"n_anchor_views", 3}, {"n_random_masked", 1}}},
      {"model", {{"preset", "vit-test"}, {"n_proj", 16}, {"head_hidden", 32}}},
      {"loss", {{"prototypes", 8}}},
      {"pretrain", {{"batch_size", 4}, {"features", "icu"}}},
      {"eval", {{"max_epochs", 5}}}};
  const RunConfig rc = parse_run_config(good);
  CHECK(rc.seed == 7);
  CHECK(rc.view.image_size == 64);
  CHECK(rc.model.vit.hidden == 32);
  CHECK(rc.model.vit.patch_size == 16);
  CHECK(rc.pretrain.features == "icu");

  nlohmann::json bad = good;
  bad["pretrain"]["typo_key"] = 1;
  CHECK_THROWS_WITH_AS(parse_run_config(bad), doctest::Contains("ConfigError"), Error);

  nlohmann::json bad_top = good;
  bad_top["extra_section"] = nlohmann::json::object();
  CHECK_THROWS_WITH_AS(parse_run_config(bad_top), doctest::Contains("ConfigError"), Error);

  CHECK(config_hash(good) == config_hash(good));
  CHECK(config_hash(good) != config_hash(bad));

  CHECK_FALSE(parse_features_field("none").has_value());
  CHECK(parse_features_field("D+SM+SI")->dimension() == 13);
}
