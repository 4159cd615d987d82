#include "mmsn/trainer.hpp"

#include <cmath>
#include <fstream>

#include "mmsn/checkpoint.hpp"
#include "mmsn/common.hpp"
#include "mmsn/png_io.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

TrainingSet load_training_set(const DatasetManifest& manifest,
                              const std::optional<FeatureGroupSpec>& features) {
  TrainingSet set;
  set.examples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    TrainingExample ex;
    ex.image = read_png_gray8(manifest.resolve_image(e));
    if (features) ex.x_ehr = assemble(e.ehr, *features);
    set.examples.push_back(std::move(ex));
  }
  return set;
}

TrainingSet training_set_from_samples(const std::vector<Sample>& samples,
                                      const std::optional<FeatureGroupSpec>& features) {
  TrainingSet set;
  set.examples.reserve(samples.size());
  for (const auto& s : samples) {
    TrainingExample ex;
    ex.image = s.image;
    if (features) ex.x_ehr = assemble(s.ehr, *features);
    set.examples.push_back(std::move(ex));
  }
  return set;
}

namespace {

nn::ModelConfig model_config_from(const EngineConfig& cfg) {
  nn::ModelConfig mc;
  mc.vit = cfg.vit;
  mc.vit.patch_size = cfg.view.patch_size;
  mc.patch_dim = cfg.view.patch_dim();
  mc.max_tokens = cfg.view.max_tokens();
  mc.n_proj = cfg.n_proj;
  mc.head_hidden = cfg.head_hidden;
  mc.ehr_out = cfg.ehr_out;
  mc.prototypes = cfg.loss.prototypes;
  if (cfg.features) mc.n_ehr = cfg.features->dimension();
  return mc;
}

}  // namespace

PretrainEngine::PretrainEngine(const EngineConfig& cfg, nlohmann::json config_snapshot)
    : cfg_(cfg), snapshot_(std::move(config_snapshot)) {
  cfg_.view.validate();
  require(!cfg_.compiled_vanilla || !cfg_.features, "InvalidArgument",
          "the compiled-out codepath cannot carry EHR features");
  state_ = std::make_unique<nn::ModelState>(model_config_from(cfg_), cfg_.seed);
  state_->ema_momentum = cfg_.pretrain.ema_momentum;

  nn::AdamW::Hyper h;
  h.weight_decay = cfg_.pretrain.weight_decay;
  opt_ = nn::AdamW(h);
  state_->visit_trainable([this](nn::Parameter& p) { opt_.register_param(p); });
  stopper_.patience = cfg_.pretrain.early_stop_patience;
  stopper_.min_delta = cfg_.pretrain.early_stop_min_delta;
}

StepInputs build_step_inputs(const std::vector<const TrainingExample*>& batch,
                             const std::vector<std::uint64_t>& view_seeds,
                             const ViewConfig& view) {
  require(!batch.empty(), "EmptyBatch", "train_step on an empty batch");
  require(view_seeds.size() == batch.size(), "InvalidArgument",
          "one view seed required per example");
  StepInputs inputs;
  inputs.bundles.reserve(batch.size());
  inputs.x_ehr.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Prng rng(view_seeds[i]);
    inputs.bundles.push_back(build_view_bundle(batch[i]->image, view, rng));
    inputs.x_ehr.push_back(batch[i]->x_ehr);
  }
  return inputs;
}

Eigen::MatrixXd compute_target_assignments(nn::ModelState& state, const StepInputs& inputs,
                                           double tau_plus) {
  const int b = static_cast<int>(inputs.bundles.size());
  Eigen::MatrixXd p_target(b, state.prototypes.value.rows());
  nn::Tape tape;
  for (int i = 0; i < b; ++i) {
    const EncodedView& target = inputs.bundles[static_cast<std::size_t>(i)].target;
    nn::Var vt = nn::vit_forward_frozen(tape, target.patches, target.grid_indices, state.target);
    nn::Var zt = nn::mlp_head(tape, vt, state.head_target, false);
    p_target.row(i) =
        assign(zt.val().row(0).transpose(), state.prototypes.value, tau_plus).transpose();
  }
  return p_target;
}

namespace {

template <bool WithEhr>
nn::LossGraph anchor_branch_loss_impl(nn::Tape& tape, nn::ModelState& state,
                                      const StepInputs& inputs, const Eigen::MatrixXd& p_target,
                                      const LossConfig& loss, bool trainable) {
  const int b = static_cast<int>(inputs.bundles.size());
  require(b >= 1, "EmptyBatch", "loss over an empty batch");
  const int m = static_cast<int>(inputs.bundles.front().anchors.size());
  const Temperatures temps{loss.tau, loss.tau_plus};

  std::vector<nn::Var> anchor_zs;
  anchor_zs.reserve(static_cast<std::size_t>(b) * m);
  for (int i = 0; i < b; ++i) {
    const ViewBundle& bundle = inputs.bundles[static_cast<std::size_t>(i)];
    for (const EncodedView& view : bundle.anchors) {
      nn::Var va = nn::vit_forward(tape, view.patches, view.grid_indices, state.anchor, trainable);
      nn::Var head_in = va;
      if constexpr (WithEhr) {
        if (state.has_ehr()) {
          const Eigen::VectorXd& x = inputs.x_ehr[static_cast<std::size_t>(i)];
          require(x.size() > 0, "ShapeMismatch", "missing tabular vector for an EHR run");
          nn::Var ve = nn::linear(tape, tape.constant(x.transpose()), *state.ehr, trainable);
          head_in = nn::fuse(tape, ve, va, *state.fusion, trainable);
        }
      }
      anchor_zs.push_back(nn::mlp_head(tape, head_in, state.head_anchor, trainable));
    }
  }

  nn::Var z_all = tape.concat_rows(anchor_zs);
  nn::Var protos = trainable ? tape.leaf(state.prototypes) : tape.frozen(state.prototypes);
  return nn::total_loss_graph(tape, z_all, p_target, b, m, protos, temps, loss.lambda);
}

}  // namespace

nn::LossGraph anchor_branch_loss(nn::Tape& tape, nn::ModelState& state, const StepInputs& inputs,
                                 const Eigen::MatrixXd& p_target, const LossConfig& loss,
                                 bool trainable) {
  return anchor_branch_loss_impl<true>(tape, state, inputs, p_target, loss, trainable);
}

template <bool WithEhr>
LossBreakdown PretrainEngine::step_impl(const std::vector<const TrainingExample*>& batch,
                                        const std::vector<std::uint64_t>& view_seeds, double lr) {
  const StepInputs inputs = build_step_inputs(batch, view_seeds, cfg_.view);
  nn::Tape tape;
  const Eigen::MatrixXd p_target =
      compute_target_assignments(*state_, inputs, cfg_.loss.tau_plus);
  const nn::LossGraph g =
      anchor_branch_loss_impl<WithEhr>(tape, *state_, inputs, p_target, cfg_.loss, true);

  LossBreakdown out;
  out.ce_term = g.ce.scalar();
  out.entropy_term = g.entropy.scalar();
  out.lambda = cfg_.loss.lambda;
  out.total = g.total.scalar();
  out.p_bar = g.p_anchor.val().colwise().mean().transpose();
  require(std::isfinite(out.total), "NonFiniteLoss",
          "non-finite loss at step " + std::to_string(step_ + 1));

  opt_.zero_grad();
  tape.backward(g.total);
  if (cfg_.pretrain.grad_clip > 0.0) {
    std::vector<nn::Parameter*> ps;
    state_->visit_trainable([&ps](nn::Parameter& p) { ps.push_back(&p); });
    nn::clip_grad_norm(ps, cfg_.pretrain.grad_clip);
  }
  opt_.step(lr);
  state_->ema_step();
  return out;
}

LossBreakdown PretrainEngine::train_step(const std::vector<const TrainingExample*>& batch,
                                         const std::vector<std::uint64_t>& view_seeds, double lr) {
  return cfg_.compiled_vanilla ? step_impl<false>(batch, view_seeds, lr)
                               : step_impl<true>(batch, view_seeds, lr);
}

TrainResult PretrainEngine::train(const TrainingSet& data, const std::filesystem::path& run_dir,
                                  int stop_after_epochs) {
  const int n = static_cast<int>(data.examples.size());
  require(n >= 1, "EmptyBatch", "training set is empty");
  if (cfg_.features) {
    require(data.examples.front().x_ehr.size() == cfg_.features->dimension(), "ShapeMismatch",
            "training set was built for a different feature group");
  }
  std::filesystem::create_directories(run_dir);

  // A fresh run truncates the log; a resumed one appends to its own copy.
  std::ofstream log(run_dir / "train_log.jsonl",
                    epoch_ == 0 && step_ == 0 ? std::ios::trunc : std::ios::app);
  require(log.good(), "IoError", "cannot write train_log.jsonl");

  TrainResult result;
  const auto& pt = cfg_.pretrain;
  int epochs_this_call = 0;

  while (epoch_ < pt.max_epochs && !stop_requested_) {
    const double lr = nn::cosine_lr(pt.learning_rate, epoch_, pt.max_epochs);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Prng shuffle_rng(derive_seed(cfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch_)));
    shuffle_rng.shuffle(order);

    double epoch_sum = 0.0;
    long epoch_steps = 0;
    for (int start = 0; start < n; start += pt.batch_size) {
      const int stop = std::min(n, start + pt.batch_size);
      std::vector<const TrainingExample*> batch;
      std::vector<std::uint64_t> seeds;
      batch.reserve(static_cast<std::size_t>(stop - start));
      for (int i = start; i < stop; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        batch.push_back(&data.examples[static_cast<std::size_t>(idx)]);
        seeds.push_back(derive_seed(cfg_.seed, "views", static_cast<std::uint64_t>(epoch_),
                                    static_cast<std::uint64_t>(idx)));
      }

      LossBreakdown lb;
      try {
        lb = train_step(batch, seeds, lr);
      } catch (const Error& e) {
        if (e.code() == "NonFiniteLoss") {
          const nlohmann::json dump = {{"step", step_ + 1}, {"epoch", epoch_}, {"lr", lr}};
          std::ofstream diag(run_dir / "nonfinite_loss.json");
          diag << dump.dump(2) << "\n";
        }
        throw;
      }
      ++step_;
      ++epoch_steps;
      epoch_sum += lb.total;
      result.step_losses.push_back(lb.total);

      const nlohmann::json line = {{"step", step_},         {"epoch", epoch_},
                                   {"lr", lr},              {"ce_term", lb.ce_term},
                                   {"entropy_term", lb.entropy_term}, {"total", lb.total}};
      log << line.dump() << "\n";

      if (pt.max_steps > 0 && step_ >= pt.max_steps) {
        stop_requested_ = true;
        break;
      }
    }
    log.flush();

    if (stop_requested_ && epoch_steps < (n + pt.batch_size - 1) / pt.batch_size) {
      break;  // step cap hit mid-epoch; skip early-stop bookkeeping
    }

    ++epoch_;
    ++epochs_this_call;
    const double epoch_mean = epoch_sum / static_cast<double>(epoch_steps);
    result.epoch_losses.push_back(epoch_mean);

    if (stopper_.observe(epoch_mean)) {
      result.early_stopped = true;
      break;
    }
    if (stop_after_epochs > 0 && epochs_this_call >= stop_after_epochs) break;
  }

  result.epochs_run = epochs_this_call;
  result.steps_run = step_;
  result.checkpoint_path = run_dir / "checkpoint.ckpt";
  save_checkpoint(result.checkpoint_path);
  return result;
}

void PretrainEngine::save_checkpoint(const std::filesystem::path& path) const {
  ArrayArchive a;
  const_cast<nn::ModelState&>(*state_).visit_all(
      [&a](nn::Parameter& p) { a.put(p.name, p.value); });
  for (const auto& slot : const_cast<nn::AdamW&>(opt_).slots()) {
    a.put("opt/m/" + slot.param->name, slot.m);
    a.put("opt/v/" + slot.param->name, slot.v);
  }

  nlohmann::json meta;
  meta["format"] = 1;
  meta["seed"] = cfg_.seed;
  meta["epoch"] = epoch_;
  meta["step"] = step_;
  meta["opt_steps"] = opt_.step_count();
  meta["early_stop"] = {{"best", stopper_.best},
                        {"has_best", stopper_.has_best},
                        {"stagnant", stopper_.stagnant},
                        {"stopped", stop_requested_}};
  meta["engine"] = {{"view", to_json(cfg_.view)},
                    {"vit", to_json(cfg_.vit)},
                    {"n_proj", cfg_.n_proj},
                    {"head_hidden", cfg_.head_hidden},
                    {"ehr_out", cfg_.ehr_out},
                    {"loss", to_json(cfg_.loss)},
                    {"pretrain", to_json(cfg_.pretrain)},
                    {"features", cfg_.features ? cfg_.features->name() : "none"},
                    {"n_ehr", cfg_.features ? cfg_.features->dimension() : 0}};
  meta["config"] = snapshot_;
  meta["arrays"] = archive_descriptors(a);
  a.put_bytes("meta.json", meta.dump(2));
  a.save(path);
}

namespace {

EngineConfig engine_config_from_meta(const nlohmann::json& meta) {
  const auto& e = meta.at("engine");
  EngineConfig cfg;
  cfg.view = view_from_json(e.at("view"));
  cfg.vit = vit_from_json(e.at("vit"));
  cfg.vit.patch_size = cfg.view.patch_size;
  cfg.n_proj = e.at("n_proj").get<int>();
  cfg.head_hidden = e.at("head_hidden").get<int>();
  cfg.ehr_out = e.at("ehr_out").get<int>();
  cfg.loss = loss_from_json(e.at("loss"));
  cfg.pretrain = pretrain_from_json(e.at("pretrain"));
  cfg.features = parse_features_field(e.at("features").get<std::string>());
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

std::unique_ptr<PretrainEngine> PretrainEngine::from_checkpoint(
    const std::filesystem::path& path) {
  const ArrayArchive a = ArrayArchive::load(path);
  const nlohmann::json meta = nlohmann::json::parse(a.get_bytes("meta.json"));
  EngineConfig cfg = engine_config_from_meta(meta);

  auto engine = std::make_unique<PretrainEngine>(cfg, meta.at("config"));
  engine->state_->visit_all([&a](nn::Parameter& p) {
    const Eigen::MatrixXd& v = a.get(p.name);
    require(v.rows() == p.value.rows() && v.cols() == p.value.cols(), "CheckpointMismatch",
            "array '" + p.name + "' has the wrong shape");
    p.value = v;
  });
  for (auto& slot : engine->opt_.slots()) {
    slot.m = a.get("opt/m/" + slot.param->name);
    slot.v = a.get("opt/v/" + slot.param->name);
  }
  engine->opt_.set_step_count(meta.at("opt_steps").get<long>());
  engine->epoch_ = meta.at("epoch").get<int>();
  engine->step_ = meta.at("step").get<long>();
  const auto& es = meta.at("early_stop");
  engine->stopper_.best = es.at("best").get<double>();
  engine->stopper_.has_best = es.at("has_best").get<bool>();
  engine->stopper_.stagnant = es.at("stagnant").get<int>();
  engine->stop_requested_ = es.at("stopped").get<bool>();
  return engine;
}

LoadedModel load_model(const std::filesystem::path& checkpoint_path) {
  const ArrayArchive a = ArrayArchive::load(checkpoint_path);
  const nlohmann::json meta = nlohmann::json::parse(a.get_bytes("meta.json"));
  LoadedModel lm;
  lm.cfg = engine_config_from_meta(meta);
  lm.meta = meta;
  lm.state = std::make_unique<nn::ModelState>(model_config_from(lm.cfg), lm.cfg.seed);
  lm.state->visit_all([&a](nn::Parameter& p) {
    const Eigen::MatrixXd& v = a.get(p.name);
    require(v.rows() == p.value.rows() && v.cols() == p.value.cols(), "CheckpointMismatch",
            "array '" + p.name + "' has the wrong shape");
    p.value = v;
  });
  return lm;
}

}  // namespace mmsn
