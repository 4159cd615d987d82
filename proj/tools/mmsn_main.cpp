#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mmsn/checkpoint.hpp"
#include "mmsn/common.hpp"
#include "mmsn/dataset.hpp"
#include "mmsn/metrics.hpp"
#include "mmsn/png_io.hpp"
#include "mmsn/probe.hpp"
#include "mmsn/report.hpp"
#include "mmsn/rng.hpp"
#include "mmsn/run_config.hpp"
#include "mmsn/trainer.hpp"
#include "mmsn/tsne.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t resolve_seed(bool seed_given, std::uint64_t flag_seed, const mmsn::RunConfig* cfg) {
  if (seed_given) return flag_seed;
  if (cfg && cfg->seed != 0) return cfg->seed;
  if (const char* env = std::getenv("MMSN_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return cfg ? cfg->seed : 0;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  mmsn::require(out.good(), "IoError", "cannot write " + path.string());
  out << text;
}

int cmd_synth_data(int patients, int per_patient, int image_size, const std::string& label_model,
                   std::uint64_t seed, const std::string& out_dir, const std::string& fractions) {
  mmsn::LabelModel model;
  if (label_model == "independent") model = mmsn::LabelModel::independent;
  else if (label_model == "ehr_coupled") model = mmsn::LabelModel::ehr_coupled;
  else mmsn::fail("ConfigError", "label model must be independent or ehr_coupled");

  const auto parts = split_list(fractions);
  mmsn::require(parts.size() == 3, "ConfigError", "--fractions needs train,val,test");
  const std::array<double, 3> fr = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};

  const auto samples = mmsn::generate_synthetic_dataset(patients, per_patient, image_size, model, seed);
  const auto splits = mmsn::split_by_patient(samples, fr, seed);

  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  for (const auto& s : samples) {
    mmsn::write_png_gray8(root / mmsn::default_image_relpath(s.sample_id), s.image);
  }
  mmsn::save_manifest(splits.train, root / "train.csv");
  mmsn::save_manifest(splits.val, root / "val.csv");
  mmsn::save_manifest(splits.test, root / "test.csv");

  const json summary = {{"samples", samples.size()},
                        {"patients", patients},
                        {"per_patient", per_patient},
                        {"image_size", image_size},
                        {"label_model", label_model},
                        {"seed", seed},
                        {"train", splits.train.entries.size()},
                        {"val", splits.val.entries.size()},
                        {"test", splits.test.entries.size()}};
  write_text(root / "dataset.json", summary.dump(2) + "\n");
  std::cout << "samples=" << samples.size() << " train=" << splits.train.entries.size()
            << " val=" << splits.val.entries.size() << " test=" << splits.test.entries.size()
            << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& features_flag,
                 bool seed_given, std::uint64_t flag_seed, long max_steps_flag,
                 const std::string& out_dir, const std::string& run_dir_flag,
                 const std::string& resume) {
  if (!resume.empty()) {
    auto engine = mmsn::PretrainEngine::from_checkpoint(resume);
    const fs::path run_dir = run_dir_flag.empty()
                                 ? fs::path(resume).parent_path()
                                 : fs::path(run_dir_flag);
    const auto& cfgj = engine->config();
    const json snapshot = json::parse(
        mmsn::ArrayArchive::load(resume).get_bytes("meta.json"))["config"];
    mmsn::RunConfig rc = mmsn::parse_run_config(snapshot);
    const mmsn::DatasetManifest train = mmsn::load_manifest(rc.data.train_manifest);
    const mmsn::TrainingSet set = mmsn::load_training_set(train, cfgj.features);
    const mmsn::TrainResult result = engine->train(set, run_dir);
    std::cout << "checkpoint=" << result.checkpoint_path.string() << "\n";
    return 0;
  }

  mmsn::RunConfig rc = mmsn::load_run_config(config_path);
  if (!features_flag.empty()) rc.pretrain.features = features_flag;
  rc.seed = resolve_seed(seed_given, flag_seed, &rc);
  if (max_steps_flag >= 0) rc.pretrain.max_steps = max_steps_flag;
  const auto features = mmsn::parse_features_field(rc.pretrain.features);

  const json snapshot = mmsn::to_json(rc);
  const fs::path run_dir = run_dir_flag.empty()
                               ? fs::path(out_dir) / ("run-" + mmsn::config_hash(snapshot) + "-s" +
                                                      std::to_string(rc.seed))
                               : fs::path(run_dir_flag);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", snapshot.dump(2) + "\n");

  mmsn::require(!rc.data.train_manifest.empty(), "ConfigError",
                "data.train_manifest is required for pretraining");
  const mmsn::DatasetManifest train = mmsn::load_manifest(rc.data.train_manifest);

  mmsn::EngineConfig ec;
  ec.view = rc.view;
  ec.vit = rc.model.vit;
  ec.n_proj = rc.model.n_proj;
  ec.head_hidden = rc.model.head_hidden;
  ec.ehr_out = rc.model.ehr_out;
  ec.loss = rc.loss;
  ec.pretrain = rc.pretrain;
  ec.features = features;
  ec.seed = rc.seed;

  const mmsn::TrainingSet set = mmsn::load_training_set(train, features);
  mmsn::PretrainEngine engine(ec, snapshot);
  const mmsn::TrainResult result = engine.train(set, run_dir);
  std::cout << "epochs=" << result.epochs_run << " steps=" << result.steps_run
            << (result.early_stopped ? " early_stopped" : "") << "\n";
  std::cout << "checkpoint=" << result.checkpoint_path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string mode;
  std::string config_path;
  std::string checkpoint;
  std::string train_manifest, val_manifest, test_manifest;
  std::string out_dir = "out";
  std::string run_dir;
  std::string low_data;
  std::string compare;
  bool seed_given = false;
  std::uint64_t seed = 0;
  int jobs = 0;
};

int cmd_eval(const EvalArgs& args) {
  mmsn::RunConfig rc;
  if (!args.config_path.empty()) rc = mmsn::load_run_config(args.config_path);
  rc.eval.mode = args.mode;
  if (args.jobs > 0) rc.eval.jobs = args.jobs;
  const std::uint64_t seed = resolve_seed(args.seed_given, args.seed, &rc);

  const std::string train_path =
      args.train_manifest.empty() ? rc.data.train_manifest : args.train_manifest;
  const std::string val_path = args.val_manifest.empty() ? rc.data.val_manifest : args.val_manifest;
  const std::string test_path =
      args.test_manifest.empty() ? rc.data.test_manifest : args.test_manifest;
  mmsn::require(!train_path.empty() && !val_path.empty() && !test_path.empty(), "ConfigError",
                "train/val/test manifests are required (config data section or flags)");

  const mmsn::LoadedModel model = mmsn::load_model(args.checkpoint);
  const mmsn::DatasetManifest train = mmsn::load_manifest(train_path, mmsn::Split::train);
  const mmsn::DatasetManifest val = mmsn::load_manifest(val_path, mmsn::Split::val);
  const mmsn::DatasetManifest test = mmsn::load_manifest(test_path, mmsn::Split::test);

  json eval_cfg_json = mmsn::to_json(rc.eval);
  eval_cfg_json["checkpoint"] = args.checkpoint;
  eval_cfg_json["seed"] = seed;
  const fs::path run_dir =
      args.run_dir.empty()
          ? fs::path(args.out_dir) / ("eval-" + mmsn::config_hash(eval_cfg_json) + "-s" +
                                      std::to_string(seed))
          : fs::path(args.run_dir);
  fs::create_directories(run_dir);

  std::ofstream log(run_dir / "eval_log.jsonl", std::ios::trunc);
  mmsn::require(log.good(), "IoError", "cannot write eval_log.jsonl");
  auto log_fn = [&log](const json& j) { log << j.dump() << "\n"; };

  const mmsn::ProtocolResult result =
      mmsn::run_protocol(args.mode, model, train, val, test, rc.eval, seed, log_fn);

  mmsn::MetricReport report = result.test_report;
  if (!args.compare.empty()) {
    std::ifstream in(args.compare);
    mmsn::require(in.good(), "IoError", "cannot open reference report: " + args.compare);
    json refj;
    in >> refj;
    const mmsn::MetricReport ref = mmsn::MetricReport::from_json(refj);
    report.p_value_vs_reference =
        mmsn::report_significance(report, ref, 1000, mmsn::derive_seed(seed, "compare"));
  }

  write_text(run_dir / "report.json", report.to_json().dump(2) + "\n");
  const std::string table =
      mmsn::render_report_table({{std::string(args.mode) + " eval", report}});
  write_text(run_dir / "report.md", table);

  json runs = json::array();
  for (const auto& r : result.runs) {
    runs.push_back({{"lr", r.cfg.lr},
                    {"scheduler", mmsn::to_string(r.cfg.scheduler)},
                    {"replicate", r.cfg.replicate},
                    {"val_auroc", r.val_auroc},
                    {"best_epoch", r.best_epoch}});
  }
  json runs_doc = {{"mode", args.mode},
                   {"runs", runs},
                   {"best_index", result.best_index},
                   {"test_auroc", report.auroc},
                   {"test_auprc", report.auprc}};

  if (!args.low_data.empty()) {
    std::vector<double> fractions;
    for (const auto& tok : split_list(args.low_data)) fractions.push_back(std::stod(tok));
    mmsn::require(!fractions.empty(), "ConfigError", "--low-data needs fractions");
    // Low-data fine-tuning reuses the best full-data configuration.
    mmsn::EvalSection ft_eval = rc.eval;
    ft_eval.mode = "finetune";
    mmsn::ProtocolResult ft = result;
    if (args.mode != "finetune") {
      ft = mmsn::run_protocol("finetune", model, train, val, test, ft_eval, seed, log_fn);
    }
    const mmsn::GridRun best_cfg = ft.runs[static_cast<std::size_t>(ft.best_index)].cfg;
    const auto records = mmsn::low_data_protocol(model, train, val, test, fractions, best_cfg,
                                                 ft_eval, seed, log_fn);
    json lowdata = json::array();
    for (const auto& rec : records) {
      lowdata.push_back({{"fraction", rec.fraction},
                         {"subset", rec.subset_index},
                         {"val_auroc", rec.val_auroc},
                         {"selected", rec.selected},
                         {"report", rec.test_report.to_json()}});
    }
    write_text(run_dir / "lowdata_report.json", lowdata.dump(2) + "\n");
    runs_doc["lowdata_runs"] = records.size();
  }

  write_text(run_dir / "runs.json", runs_doc.dump(2) + "\n");
  std::cout << "report=" << (run_dir / "report.json").string() << "\n";
  std::cout << "test_auroc=" << report.auroc << " test_auprc=" << report.auprc << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& manifest_path, bool tsne,
              bool seed_given, std::uint64_t flag_seed, const std::string& out_dir) {
  const std::uint64_t seed = resolve_seed(seed_given, flag_seed, nullptr);
  const mmsn::LoadedModel model = mmsn::load_model(checkpoint);
  mmsn::DatasetManifest manifest = mmsn::load_manifest(manifest_path);

  // Downstream visualization is restricted to single-label samples.
  mmsn::DatasetManifest single;
  single.split = manifest.split;
  single.base_dir = manifest.base_dir;
  for (const auto& e : manifest.entries) {
    if (e.labels.count() == 1) single.entries.push_back(e);
  }
  mmsn::require(!single.entries.empty(), "TooFewSamples",
                "manifest has no single-label samples");

  const fs::path root(out_dir);
  fs::create_directories(root);
  const mmsn::EmbeddingSet set = mmsn::extract_embeddings(single, model);

  std::vector<int> labels(single.entries.size());
  for (std::size_t i = 0; i < single.entries.size(); ++i) {
    for (int c = 0; c < mmsn::kNumLabels; ++c) {
      if (single.entries[i].labels.values[static_cast<std::size_t>(c)]) labels[i] = c;
    }
  }

  {
    std::ofstream out(root / "embeddings.csv");
    mmsn::require(out.good(), "IoError", "cannot write embeddings.csv");
    out << "sample_id,label";
    for (long c = 0; c < set.x.cols(); ++c) out << ",e" << c;
    out << "\n";
    for (long r = 0; r < set.x.rows(); ++r) {
      out << set.sample_ids[static_cast<std::size_t>(r)] << ","
          << labels[static_cast<std::size_t>(r)];
      for (long c = 0; c < set.x.cols(); ++c) out << "," << set.x(r, c);
      out << "\n";
    }
  }
  std::cout << "embeddings=" << (root / "embeddings.csv").string() << " rows=" << set.x.rows()
            << "\n";

  if (tsne) {
    mmsn::TsneConfig tc;
    tc.seed = seed;
    const mmsn::EmbeddingPlot plot =
        mmsn::export_2d_embedding(set.x, labels, tc, root / "tsne.svg");
    std::ofstream out(root / "tsne_coords.csv");
    mmsn::require(out.good(), "IoError", "cannot write tsne_coords.csv");
    out << "sample_id,label,x,y\n";
    for (long r = 0; r < plot.coords.rows(); ++r) {
      out << set.sample_ids[static_cast<std::size_t>(r)] << ","
          << labels[static_cast<std::size_t>(r)] << "," << plot.coords(r, 0) << ","
          << plot.coords(r, 1) << "\n";
    }
    std::cout << "tsne=" << (root / "tsne.svg").string() << "\n";
  }
  return 0;
}

int cmd_report(const std::string& inputs, const std::string& names, int reference,
               const std::string& out_path) {
  const auto files = split_list(inputs);
  mmsn::require(!files.empty(), "ConfigError", "--inputs needs at least one report");
  auto name_list = split_list(names);

  std::vector<mmsn::ReportRow> rows;
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ifstream in(files[i]);
    mmsn::require(in.good(), "IoError", "cannot open report: " + files[i]);
    json j;
    in >> j;
    mmsn::ReportRow row;
    row.name = i < name_list.size() ? name_list[i] : fs::path(files[i]).stem().string();
    row.report = mmsn::MetricReport::from_json(j);
    rows.push_back(std::move(row));
  }
  const std::string table = mmsn::render_report_table(rows, reference);
  if (out_path.empty()) {
    std::cout << table;
  } else {
    write_text(out_path, table);
    std::cout << "table=" << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal masked-siamese pretraining and evaluation"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic dataset with manifests");
  int patients = 50, per_patient = 4, image_size = 224;
  std::string label_model = "ehr_coupled", fractions = "0.80,0.05,0.15", out_dir = "data";
  std::uint64_t seed = 0;
  synth->add_option("--patients", patients, "Number of patients");
  synth->add_option("--per-patient", per_patient, "Images per patient");
  synth->add_option("--image-size", image_size, "Square image size in pixels");
  synth->add_option("--label-model", label_model, "independent|ehr_coupled");
  synth->add_option("--fractions", fractions, "train,val,test split fractions");
  auto* synth_seed = synth->add_option("--seed", seed, "Seed");
  synth->add_option("--out", out_dir, "Output directory");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Run self-supervised pretraining");
  std::string config_path, features_flag, run_dir_flag, resume;
  std::string pre_out = "out";
  long max_steps_flag = -1;
  std::uint64_t pre_seed = 0;
  pre->add_option("--config", config_path, "Run config JSON");
  pre->add_option("--features", features_flag,
                  "Feature group (sex,age,view,pos,mort,icu,D,SM,SI and + unions) or none");
  auto* pre_seed_opt = pre->add_option("--seed", pre_seed, "Seed override");
  pre->add_option("--max-steps", max_steps_flag, "Stop after this many optimizer steps");
  pre->add_option("--out", pre_out, "Base output directory");
  pre->add_option("--run-dir", run_dir_flag, "Explicit run directory");
  pre->add_option("--resume", resume, "Resume from a checkpoint");

  // linear-eval / finetune
  EvalArgs eval_args;
  auto add_eval_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", eval_args.config_path, "Run config JSON");
    cmd->add_option("--checkpoint", eval_args.checkpoint, "Pretrained checkpoint")->required();
    cmd->add_option("--train", eval_args.train_manifest, "Train manifest CSV");
    cmd->add_option("--val", eval_args.val_manifest, "Validation manifest CSV");
    cmd->add_option("--test", eval_args.test_manifest, "Test manifest CSV");
    cmd->add_option("--out", eval_args.out_dir, "Base output directory");
    cmd->add_option("--run-dir", eval_args.run_dir, "Explicit run directory");
    cmd->add_option("--low-data", eval_args.low_data, "Fractions, e.g. 0.01,0.05,0.10");
    cmd->add_option("--compare", eval_args.compare, "Reference report.json for significance");
    cmd->add_option("--jobs", eval_args.jobs, "Parallel grid workers");
    return cmd->add_option("--seed", eval_args.seed, "Seed override");
  };
  auto* linear_cmd = app.add_subcommand("linear-eval", "Frozen-encoder linear evaluation");
  auto* linear_seed_opt = add_eval_opts(linear_cmd);
  auto* ft_cmd = app.add_subcommand("finetune", "End-to-end fine-tuning evaluation");
  auto* ft_seed_opt = add_eval_opts(ft_cmd);

  // embed
  auto* embed = app.add_subcommand("embed", "Export embeddings (and t-SNE plot)");
  std::string embed_ckpt, embed_manifest, embed_out = "out";
  bool tsne_flag = false;
  std::uint64_t embed_seed = 0;
  embed->add_option("--checkpoint", embed_ckpt, "Pretrained checkpoint")->required();
  embed->add_option("--manifest", embed_manifest, "Manifest CSV")->required();
  embed->add_flag("--tsne", tsne_flag, "Also run t-SNE and write the 3-panel plot");
  auto* embed_seed_opt = embed->add_option("--seed", embed_seed, "Seed");
  embed->add_option("--out", embed_out, "Output directory");

  // report
  auto* rep = app.add_subcommand("report", "Render a metrics table from report JSONs");
  std::string rep_inputs, rep_names, rep_out;
  int rep_reference = 0;
  rep->add_option("--inputs", rep_inputs, "Comma-separated report.json paths")->required();
  rep->add_option("--names", rep_names, "Comma-separated row names");
  rep->add_option("--reference", rep_reference, "Reference row index");
  rep->add_option("--out", rep_out, "Output file (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return cmd_synth_data(patients, per_patient, image_size, label_model,
                            resolve_seed(synth_seed->count() > 0, seed, nullptr), out_dir,
                            fractions);
    }
    if (pre->parsed()) {
      return cmd_pretrain(config_path, features_flag, pre_seed_opt->count() > 0, pre_seed,
                          max_steps_flag, pre_out, run_dir_flag, resume);
    }
    if (linear_cmd->parsed() || ft_cmd->parsed()) {
      eval_args.mode = linear_cmd->parsed() ? "linear" : "finetune";
      eval_args.seed_given =
          linear_cmd->parsed() ? linear_seed_opt->count() > 0 : ft_seed_opt->count() > 0;
      return cmd_eval(eval_args);
    }
    if (embed->parsed()) {
      return cmd_embed(embed_ckpt, embed_manifest, tsne_flag, embed_seed_opt->count() > 0,
                       embed_seed, embed_out);
    }
    if (rep->parsed()) {
      return cmd_report(rep_inputs, rep_names, rep_reference, rep_out);
    }
  } catch (const mmsn::Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
