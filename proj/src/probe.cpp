#include "mmsn/probe.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "mmsn/common.hpp"
#include "mmsn/png_io.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

namespace {

Eigen::MatrixXd labels_matrix(const DatasetManifest& manifest) {
  Eigen::MatrixXd y(static_cast<long>(manifest.entries.size()), kNumLabels);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    for (int c = 0; c < kNumLabels; ++c) {
      y(static_cast<long>(i), c) = manifest.entries[i].labels.values[static_cast<std::size_t>(c)];
    }
  }
  return y;
}

Eigen::RowVectorXd encode_cls(const Image& image, const ViewConfig& view,
                              const nn::VitParams& encoder) {
  const EncodedView ev = build_eval_view(image, view);
  nn::Tape tape;
  const nn::Var cls = nn::vit_forward_frozen(tape, ev.patches, ev.grid_indices, encoder);
  return cls.val().row(0);
}

std::vector<int> find_degenerate(const Eigen::MatrixXd& y) {
  std::vector<int> out;
  for (int c = 0; c < y.cols(); ++c) {
    const double first = y(0, c);
    bool constant = true;
    for (long r = 1; r < y.rows(); ++r) {
      if (y(r, c) != first) {
        constant = false;
        break;
      }
    }
    if (constant) out.push_back(c);
  }
  return out;
}

double selection_metric(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& y,
                        const std::vector<int>& degenerate) {
  double m = std::numeric_limits<double>::quiet_NaN();
  {
    double sum = 0.0;
    int count = 0;
    for (int c = 0; c < y.cols(); ++c) {
      if (std::find(degenerate.begin(), degenerate.end(), c) != degenerate.end()) continue;
      bool pos = false, neg = false;
      for (long r = 0; r < y.rows(); ++r) (y(r, c) > 0.5 ? pos : neg) = true;
      if (!pos || !neg) continue;
      std::vector<double> s(static_cast<std::size_t>(y.rows()));
      std::vector<int> l(static_cast<std::size_t>(y.rows()));
      for (long r = 0; r < y.rows(); ++r) {
        s[static_cast<std::size_t>(r)] = scores(r, c);
        l[static_cast<std::size_t>(r)] = y(r, c) > 0.5 ? 1 : 0;
      }
      sum += auroc(s, l);
      ++count;
    }
    if (count > 0) m = sum / count;
  }
  return m;
}

struct ProbeAdam {
  Eigen::MatrixXd mw, vw;
  Eigen::RowVectorXd mb, vb;
  long t = 0;

  explicit ProbeAdam(const LinearProbe& p)
      : mw(Eigen::MatrixXd::Zero(p.w.rows(), p.w.cols())),
        vw(Eigen::MatrixXd::Zero(p.w.rows(), p.w.cols())),
        mb(Eigen::RowVectorXd::Zero(p.b.cols())),
        vb(Eigen::RowVectorXd::Zero(p.b.cols())) {}

  void step(LinearProbe& p, const Eigen::MatrixXd& gw, const Eigen::RowVectorXd& gb, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    mw = b1 * mw + (1 - b1) * gw;
    vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
    p.w -= lr * ((mw / c1).array() / ((vw / c2).array().sqrt() + eps)).matrix();
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
    p.b -= lr * ((mb / c1).array() / ((vb / c2).array().sqrt() + eps)).matrix();
  }
};

/// Reduce-on-plateau on a maximized metric: halve lr after `patience`
/// epochs without min_delta improvement.
struct PlateauLr {
  double lr;
  double best = -1.0;
  int stagnant = 0;
  int patience = 2;
  double min_delta;

  void observe(double metric) {
    if (metric > best + min_delta) {
      best = metric;
      stagnant = 0;
    } else if (++stagnant >= patience) {
      lr *= 0.5;
      stagnant = 0;
    }
  }
};

}  // namespace

EmbeddingSet extract_embeddings(const DatasetManifest& manifest, const LoadedModel& model) {
  require(!manifest.entries.empty(), "MisalignedInputs", "empty manifest");
  const int d = model.cfg.vit.hidden;
  EmbeddingSet set;
  set.x.resize(static_cast<long>(manifest.entries.size()), d);
  set.y = labels_matrix(manifest);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const Image img = read_png_gray8(manifest.resolve_image(manifest.entries[i]));
    set.x.row(static_cast<long>(i)) = encode_cls(img, model.cfg.view, model.state->target);
    set.sample_ids.push_back(manifest.entries[i].sample_id);
  }
  return set;
}

ImageSet load_image_set(const DatasetManifest& manifest) {
  ImageSet set;
  set.images.reserve(manifest.entries.size());
  set.y = labels_matrix(manifest);
  for (const auto& e : manifest.entries) {
    set.images.push_back(read_png_gray8(manifest.resolve_image(e)));
    set.sample_ids.push_back(e.sample_id);
  }
  return set;
}

Eigen::MatrixXd probe_logits(const LinearProbe& p, const Eigen::MatrixXd& x) {
  require(x.cols() == p.w.rows(), "ShapeMismatch", "probe input width mismatch");
  return (x * p.w).rowwise() + p.b;
}

const char* to_string(ProbeScheduler s) {
  return s == ProbeScheduler::cosine_earlystop ? "cosine_earlystop" : "reduce_on_plateau";
}

std::vector<GridRun> build_grid(const EvalSection& eval, std::uint64_t seed) {
  std::vector<GridRun> grid;
  for (int rep = 0; rep < eval.replicates; ++rep) {
    for (double lr : eval.cosine_lrs) {
      GridRun g;
      g.scheduler = ProbeScheduler::cosine_earlystop;
      g.lr = lr;
      g.replicate = rep;
      grid.push_back(g);
    }
    for (double lr : eval.rop_lrs) {
      GridRun g;
      g.scheduler = ProbeScheduler::reduce_on_plateau;
      g.lr = lr;
      g.replicate = rep;
      grid.push_back(g);
    }
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i].probe_seed = derive_seed(seed, "probe_run", static_cast<std::uint64_t>(i));
  }
  return grid;
}

namespace {

LinearProbe init_probe(int in_dim, int out_dim, std::uint64_t seed) {
  LinearProbe p;
  p.w.resize(in_dim, out_dim);
  p.b = Eigen::RowVectorXd::Zero(out_dim);
  Prng rng(derive_seed(seed, "probe_init"));
  const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (long c = 0; c < p.w.cols(); ++c) {
    for (long r = 0; r < p.w.rows(); ++r) p.w(r, c) = rng.normal(0.0, s);
  }
  return p;
}

}  // namespace

TrainedProbe train_linear_probe(const EmbeddingSet& train, const EmbeddingSet& val,
                                const GridRun& run, const EvalSection& eval) {
  require(train.x.rows() >= 2, "MisalignedInputs", "not enough training embeddings");
  require(train.x.cols() == val.x.cols(), "ShapeMismatch", "train/val embedding widths differ");
  const int n = static_cast<int>(train.x.rows());
  const int d = static_cast<int>(train.x.cols());
  const int L = static_cast<int>(train.y.cols());

  TrainedProbe out;
  out.degenerate_labels = find_degenerate(train.y);
  LinearProbe probe = init_probe(d, L, run.probe_seed);
  ProbeAdam adam(probe);

  LinearProbe best_probe = probe;
  double best_metric = -1.0;
  int stagnant = 0;
  PlateauLr plateau{run.lr, -1.0, 0, 2, eval.min_delta};

  const double denom = static_cast<double>(n) * L;
  for (int epoch = 0; epoch < eval.max_epochs; ++epoch) {
    double lr = run.lr;
    if (run.scheduler == ProbeScheduler::cosine_earlystop) {
      lr = nn::cosine_lr(run.lr, epoch, eval.max_epochs);
    } else {
      lr = plateau.lr;
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Prng rng(derive_seed(run.probe_seed, "probe_shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    for (int start = 0; start < n; start += eval.batch_size) {
      const int stop = std::min(n, start + eval.batch_size);
      Eigen::MatrixXd xb(stop - start, d), yb(stop - start, L);
      for (int i = start; i < stop; ++i) {
        xb.row(i - start) = train.x.row(order[static_cast<std::size_t>(i)]);
        yb.row(i - start) = train.y.row(order[static_cast<std::size_t>(i)]);
      }
      const Eigen::MatrixXd z = probe_logits(probe, xb);
      const Eigen::MatrixXd s = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      const Eigen::MatrixXd gz = (s - yb) / denom;
      const Eigen::MatrixXd gw = xb.transpose() * gz;
      const Eigen::RowVectorXd gb = gz.colwise().sum();
      adam.step(probe, gw, gb, lr);
    }

    double metric = selection_metric(probe_logits(probe, val.x), val.y, out.degenerate_labels);
    if (!std::isfinite(metric)) {
      metric = selection_metric(probe_logits(probe, train.x), train.y, out.degenerate_labels);
    }
    if (run.scheduler == ProbeScheduler::reduce_on_plateau) plateau.observe(metric);

    if (metric > best_metric + eval.min_delta) {
      best_metric = metric;
      best_probe = probe;
      out.best_epoch = epoch;
      stagnant = 0;
    } else {
      ++stagnant;
      if (run.scheduler == ProbeScheduler::cosine_earlystop && stagnant >= eval.patience) break;
    }
  }

  out.fc = best_probe;
  out.val_auroc = best_metric;
  return out;
}

namespace {

Image augment_finetune(const Image& img, Prng& rng) {
  Image out = img;
  if (rng.bernoulli(0.5)) out = hflip(out);
  const double rot = rng.uniform(-10.0, 10.0);
  const double tx = rng.uniform(-0.05, 0.05);
  const double ty = rng.uniform(-0.05, 0.05);
  const double sc = rng.uniform(0.95, 1.05);
  return affine(out, rot, tx, ty, sc);
}

struct EncoderSnapshot {
  std::vector<Eigen::MatrixXd> values;

  static EncoderSnapshot take(nn::VitParams& enc, const LinearProbe& fc) {
    EncoderSnapshot s;
    enc.visit([&s](nn::Parameter& p) { s.values.push_back(p.value); });
    s.values.push_back(fc.w);
    s.values.push_back(fc.b);
    return s;
  }

  void restore(nn::VitParams& enc, LinearProbe& fc) const {
    std::size_t i = 0;
    enc.visit([&](nn::Parameter& p) { p.value = values[i++]; });
    fc.w = values[i++];
    fc.b = values[i++];
  }
};

}  // namespace

TrainedProbe train_finetune_probe(const LoadedModel& model, const ImageSet& train,
                                  const ImageSet& val, const GridRun& run,
                                  const EvalSection& eval) {
  require(!train.images.empty(), "MisalignedInputs", "empty fine-tuning set");
  const ViewConfig& view = model.cfg.view;
  const int d = model.cfg.vit.hidden;
  const int L = static_cast<int>(train.y.cols());
  const int n = static_cast<int>(train.images.size());

  TrainedProbe out;
  out.degenerate_labels = find_degenerate(train.y);

  // The pretrained target encoder is copied and unfrozen.
  auto encoder = std::make_shared<nn::VitParams>(model.state->target);
  LinearProbe fc = init_probe(d, L, run.probe_seed);
  nn::Parameter fc_w("fc/w", fc.w), fc_b("fc/b", fc.b);

  nn::AdamW opt;  // Adam: no weight decay downstream
  encoder->visit([&opt](nn::Parameter& p) { opt.register_param(p); });
  opt.register_param(fc_w);
  opt.register_param(fc_b);

  // Deterministic eval views, reused every epoch.
  std::vector<EncodedView> val_views;
  val_views.reserve(val.images.size());
  for (const Image& img : val.images) val_views.push_back(build_eval_view(img, view));

  auto val_scores = [&]() {
    Eigen::MatrixXd scores(static_cast<long>(val_views.size()), L);
    for (std::size_t i = 0; i < val_views.size(); ++i) {
      nn::Tape tape;
      const nn::Var cls =
          nn::vit_forward_frozen(tape, val_views[i].patches, val_views[i].grid_indices, *encoder);
      scores.row(static_cast<long>(i)) =
          (cls.val().row(0) * fc_w.value).rowwise() + fc_b.value.row(0);
    }
    return scores;
  };

  EncoderSnapshot best;
  double best_metric = -1.0;
  int stagnant = 0;
  PlateauLr plateau{run.lr, -1.0, 0, 2, eval.min_delta};
  const double denom_l = static_cast<double>(L);

  for (int epoch = 0; epoch < eval.max_epochs; ++epoch) {
    const double lr = run.scheduler == ProbeScheduler::cosine_earlystop
                          ? nn::cosine_lr(run.lr, epoch, eval.max_epochs)
                          : plateau.lr;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Prng shuffle_rng(derive_seed(run.probe_seed, "ft_shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n; start += eval.batch_size) {
      const int stop = std::min(n, start + eval.batch_size);
      nn::Tape tape;
      std::vector<nn::Var> cls_rows;
      Eigen::MatrixXd yb(stop - start, L);
      for (int i = start; i < stop; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        Prng aug_rng(derive_seed(run.probe_seed, "ft_aug", static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(idx)));
        const Image img =
            eval_transform(augment_finetune(train.images[static_cast<std::size_t>(idx)], aug_rng),
                           view.image_size);
        EncodedView ev = build_eval_view(img, view);
        cls_rows.push_back(nn::vit_forward(tape, ev.patches, ev.grid_indices, *encoder, true));
        yb.row(i - start) = train.y.row(idx);
      }
      nn::Var x = tape.concat_rows(cls_rows);
      nn::Var logits = tape.add_rowvec(tape.matmul(x, tape.leaf(fc_w)), tape.leaf(fc_b));
      // Mean binary cross-entropy over samples and labels:
      // softplus(z) - y*z averaged.
      nn::Var yz = tape.hadamard(tape.constant(yb), logits);
      nn::Var loss = tape.scale(tape.sum_all(tape.sub(tape.softplus(logits), yz)),
                                1.0 / (static_cast<double>(stop - start) * denom_l));
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr);
    }

    double metric = selection_metric(val_scores(), val.y, out.degenerate_labels);
    if (!std::isfinite(metric)) {
      metric = best_metric < 0 ? 0.0 : best_metric;
    }
    if (run.scheduler == ProbeScheduler::reduce_on_plateau) plateau.observe(metric);

    fc.w = fc_w.value;
    fc.b = fc_b.value.row(0);
    if (metric > best_metric + eval.min_delta) {
      best_metric = metric;
      best = EncoderSnapshot::take(*encoder, fc);
      out.best_epoch = epoch;
      stagnant = 0;
    } else {
      ++stagnant;
      if (run.scheduler == ProbeScheduler::cosine_earlystop && stagnant >= eval.patience) break;
    }
  }

  if (out.best_epoch >= 0) best.restore(*encoder, fc);
  out.fc = fc;
  out.encoder = encoder;
  out.val_auroc = best_metric;
  return out;
}

namespace {

Eigen::MatrixXd test_scores_linear(const TrainedProbe& probe, const EmbeddingSet& test) {
  return probe_logits(probe.fc, test.x);
}

Eigen::MatrixXd test_scores_finetune(const TrainedProbe& probe, const ImageSet& test,
                                     const ViewConfig& view) {
  Eigen::MatrixXd scores(static_cast<long>(test.images.size()), probe.fc.w.cols());
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const Eigen::RowVectorXd cls = encode_cls(test.images[i], view, *probe.encoder);
    scores.row(static_cast<long>(i)) = cls * probe.fc.w + probe.fc.b;
  }
  return scores;
}

void run_indexed(int total, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1) {
    for (int i = 0; i < total; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(jobs, total);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= total) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

ProtocolResult run_protocol(const std::string& mode, const LoadedModel& model,
                            const DatasetManifest& train, const DatasetManifest& val,
                            const DatasetManifest& test, const EvalSection& eval,
                            std::uint64_t seed, const EvalLogFn& log) {
  require(mode == "linear" || mode == "finetune", "ConfigError",
          "mode must be linear or finetune");
  const std::vector<GridRun> grid = build_grid(eval, seed);
  const bool linear = mode == "linear";

  EmbeddingSet emb_train, emb_val, emb_test;
  ImageSet img_train, img_val, img_test;
  if (linear) {
    emb_train = extract_embeddings(train, model);
    emb_val = extract_embeddings(val, model);
    emb_test = extract_embeddings(test, model);
  } else {
    img_train = load_image_set(train);
    img_val = load_image_set(val);
    img_test = load_image_set(test);
  }

  std::vector<TrainedProbe> probes(grid.size());
  run_indexed(static_cast<int>(grid.size()), eval.jobs, [&](int i) {
    const GridRun& g = grid[static_cast<std::size_t>(i)];
    probes[static_cast<std::size_t>(i)] =
        linear ? train_linear_probe(emb_train, emb_val, g, eval)
               : train_finetune_probe(model, img_train, img_val, g, eval);
  });

  ProtocolResult result;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ProbeRunRecord rec;
    rec.cfg = grid[i];
    rec.val_auroc = probes[i].val_auroc;
    rec.best_epoch = probes[i].best_epoch;
    result.runs.push_back(rec);
    if (result.best_index < 0 ||
        rec.val_auroc > result.runs[static_cast<std::size_t>(result.best_index)].val_auroc) {
      result.best_index = static_cast<int>(i);
    }
    if (log) {
      log({{"kind", "grid"},
           {"mode", mode},
           {"run", i},
           {"lr", grid[i].lr},
           {"scheduler", to_string(grid[i].scheduler)},
           {"replicate", grid[i].replicate},
           {"val_auroc", rec.val_auroc},
           {"best_epoch", rec.best_epoch}});
    }
  }

  // Test metrics exactly once: only the validation winner.
  const TrainedProbe& winner = probes[static_cast<std::size_t>(result.best_index)];
  const Eigen::MatrixXd scores = linear
                                     ? test_scores_linear(winner, emb_test)
                                     : test_scores_finetune(winner, img_test, model.cfg.view);
  const auto& ids = linear ? emb_test.sample_ids : img_test.sample_ids;
  const auto& y = linear ? emb_test.y : img_test.y;
  result.test_report = build_metric_report(scores, y, ids, eval.n_bootstrap,
                                           derive_seed(seed, "test_report"),
                                           winner.degenerate_labels);
  return result;
}

std::vector<LowDataRunRecord> low_data_protocol(const LoadedModel& model,
                                                const DatasetManifest& train,
                                                const DatasetManifest& val,
                                                const DatasetManifest& test,
                                                const std::vector<double>& fractions,
                                                const GridRun& best_cfg, const EvalSection& eval,
                                                std::uint64_t seed, const EvalLogFn& log) {
  constexpr int kSubsets = 5;
  const ImageSet img_val = load_image_set(val);
  const ImageSet img_test = load_image_set(test);

  std::vector<LowDataRunRecord> records;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double fraction = fractions[fi];
    std::vector<LowDataRunRecord> frac_records(kSubsets);
    std::vector<TrainedProbe> probes(kSubsets);

    run_indexed(kSubsets, eval.jobs, [&](int s) {
      const DatasetManifest subset = subsample_fraction(
          train, fraction, derive_seed(seed, "lowdata", fi, static_cast<std::uint64_t>(s)));
      const ImageSet img_sub = load_image_set(subset);
      GridRun cfg = best_cfg;
      cfg.probe_seed = derive_seed(seed, "lowdata_probe", fi, static_cast<std::uint64_t>(s));
      probes[static_cast<std::size_t>(s)] =
          train_finetune_probe(model, img_sub, img_val, cfg, eval);

      LowDataRunRecord rec;
      rec.fraction = fraction;
      rec.subset_index = s;
      rec.val_auroc = probes[static_cast<std::size_t>(s)].val_auroc;
      const Eigen::MatrixXd scores =
          test_scores_finetune(probes[static_cast<std::size_t>(s)], img_test, model.cfg.view);
      rec.test_report = build_metric_report(
          scores, img_test.y, img_test.sample_ids, eval.n_bootstrap,
          derive_seed(seed, "lowdata_report", fi, static_cast<std::uint64_t>(s)),
          probes[static_cast<std::size_t>(s)].degenerate_labels);
      frac_records[static_cast<std::size_t>(s)] = std::move(rec);
    });

    int best = 0;
    for (int s = 1; s < kSubsets; ++s) {
      if (frac_records[static_cast<std::size_t>(s)].val_auroc >
          frac_records[static_cast<std::size_t>(best)].val_auroc) {
        best = s;
      }
    }
    frac_records[static_cast<std::size_t>(best)].selected = true;
    for (auto& rec : frac_records) {
      if (log) {
        log({{"kind", "lowdata"},
             {"fraction", rec.fraction},
             {"subset", rec.subset_index},
             {"val_auroc", rec.val_auroc},
             {"selected", rec.selected},
             {"test_auroc", rec.test_report.auroc}});
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace mmsn
