#include "mmsn/views.hpp"

#include <algorithm>
#include <cmath>

#include "mmsn/common.hpp"

namespace mmsn {

void ViewConfig::validate() const {
  require(image_size > 0 && patch_size > 0 && focal_size > 0, "InvalidArgument",
          "view sizes must be positive");
  require(image_size % patch_size == 0, "NonDivisibleSize",
          "image_size must be divisible by patch_size");
  require(focal_size % patch_size == 0, "NonDivisibleSize",
          "focal_size must be divisible by patch_size");
  require(focal_size <= image_size, "InvalidArgument", "focal_size must be <= image_size");
  require(n_anchor_views >= 1 && n_random_masked >= 0 && n_random_masked <= n_anchor_views,
          "InvalidArgument", "need n_random_masked + n_focal = n_anchor_views");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "InvalidArgument", "mask_ratio must be in [0,1)");
  require(hflip_prob >= 0.0 && hflip_prob <= 1.0, "InvalidArgument", "hflip_prob in [0,1]");
  require(global_scale_min > 0 && global_scale_min <= global_scale_max && global_scale_max <= 1.0,
          "InvalidArgument", "bad global crop scale range");
  require(focal_scale_min > 0 && focal_scale_min <= focal_scale_max && focal_scale_max <= 1.0,
          "InvalidArgument", "bad focal crop scale range");
  for (double s : norm_std) require(s > 0, "InvalidArgument", "normalization std must be > 0");
}

bool MaskPattern::is_contiguous_rect(int grid_w) const {
  if (kept_indices.empty()) return false;
  int rmin = INT32_MAX, rmax = -1, cmin = INT32_MAX, cmax = -1;
  for (int idx : kept_indices) {
    const int r = idx / grid_w, c = idx % grid_w;
    rmin = std::min(rmin, r); rmax = std::max(rmax, r);
    cmin = std::min(cmin, c); cmax = std::max(cmax, c);
  }
  const long expect = static_cast<long>(rmax - rmin + 1) * (cmax - cmin + 1);
  if (expect != static_cast<long>(kept_indices.size())) return false;
  for (int idx : kept_indices) {
    const int r = idx / grid_w, c = idx % grid_w;
    if (r < rmin || r > rmax || c < cmin || c > cmax) return false;
  }
  return true;
}

Image apply_transforms(const Image& image, ViewKind kind, const ViewConfig& cfg, Prng& rng,
                       TransformRecord* record) {
  cfg.validate();
  require(image.h >= cfg.focal_size && image.w >= cfg.focal_size, "ImageTooSmall",
          "image smaller than the focal crop size");

  const int out_size = kind == ViewKind::global ? cfg.image_size : cfg.focal_size;
  const double smin = kind == ViewKind::global ? cfg.global_scale_min : cfg.focal_scale_min;
  const double smax = kind == ViewKind::global ? cfg.global_scale_max : cfg.focal_scale_max;

  const double area = static_cast<double>(image.h) * image.w;
  int ch = 0, cw = 0;
  bool ok = false;
  for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
    const double target_area = area * rng.uniform(smin, smax);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    cw = static_cast<int>(std::lround(std::sqrt(target_area * ratio)));
    ch = static_cast<int>(std::lround(std::sqrt(target_area / ratio)));
    ok = cw >= 1 && ch >= 1 && cw <= image.w && ch <= image.h;
  }
  if (!ok) {  // fall back to the largest centered square
    ch = cw = std::min(image.h, image.w);
  }
  const int y0 = ok ? rng.uniform_int(0, image.h - ch) : (image.h - ch) / 2;
  const int x0 = ok ? rng.uniform_int(0, image.w - cw) : (image.w - cw) / 2;

  Image out = crop_resize(image, y0, x0, ch, cw, out_size);
  const bool flip = rng.bernoulli(cfg.hflip_prob);
  if (flip) out = hflip(out);

  if (record) {
    record->kind = kind;
    record->crop_y = y0;
    record->crop_x = x0;
    record->crop_h = ch;
    record->crop_w = cw;
    record->hflip = flip;
    record->out_size = out_size;
  }
  return out;
}

Eigen::MatrixXd patchify(const Image& image, int patch_size) {
  require(patch_size > 0, "NonDivisibleSize", "patch_size must be positive");
  require(image.h % patch_size == 0 && image.w % patch_size == 0, "NonDivisibleSize",
          "image dimensions must be divisible by patch_size");
  const int gh = image.h / patch_size, gw = image.w / patch_size;
  Eigen::MatrixXd out(gh * gw, patch_size * patch_size);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      for (int py = 0; py < patch_size; ++py) {
        for (int px = 0; px < patch_size; ++px) {
          out(row, py * patch_size + px) = image.px(gy * patch_size + py, gx * patch_size + px);
        }
      }
    }
  }
  return out;
}

Image un_patchify(const Eigen::MatrixXd& patches, int h, int w, int patch_size) {
  require(h % patch_size == 0 && w % patch_size == 0, "NonDivisibleSize",
          "image dimensions must be divisible by patch_size");
  const int gh = h / patch_size, gw = w / patch_size;
  require(patches.rows() == gh * gw && patches.cols() == patch_size * patch_size, "ShapeMismatch",
          "patch matrix does not match target image shape");
  Image img(h, w);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      for (int py = 0; py < patch_size; ++py) {
        for (int px = 0; px < patch_size; ++px) {
          img.px(gy * patch_size + py, gx * patch_size + px) = patches(row, py * patch_size + px);
        }
      }
    }
  }
  return img;
}

Eigen::MatrixXd encode_patches(const Eigen::MatrixXd& raw_patches,
                               const std::array<double, 3>& mean,
                               const std::array<double, 3>& std) {
  const int n = static_cast<int>(raw_patches.rows());
  const int pp = static_cast<int>(raw_patches.cols());
  Eigen::MatrixXd out(n, 3 * pp);
  for (int c = 0; c < 3; ++c) {
    out.block(0, c * pp, n, pp) =
        (raw_patches.array() - mean[static_cast<std::size_t>(c)]) / std[static_cast<std::size_t>(c)];
  }
  return out;
}

MaskPattern random_mask(int total_patches, double ratio, Prng& rng) {
  require(total_patches >= 1, "InvalidArgument", "total_patches must be >= 1");
  require(ratio >= 0.0 && ratio < 1.0, "InvalidArgument", "mask ratio must be in [0,1)");
  const int dropped = static_cast<int>(std::lround(ratio * total_patches));
  const int kept = total_patches - dropped;

  MaskPattern m;
  m.total_patches = total_patches;
  if (dropped == 0) {
    m.kept_indices.resize(static_cast<std::size_t>(total_patches));
    for (int i = 0; i < total_patches; ++i) m.kept_indices[static_cast<std::size_t>(i)] = i;
    return m;
  }
  m.kept_indices = rng.sample_without_replacement(total_patches, kept);
  return m;
}

MaskPattern focal_mask(int focal_grid) {
  require(focal_grid >= 1, "InvalidArgument", "focal grid must be >= 1");
  MaskPattern m;
  m.total_patches = focal_grid * focal_grid;
  m.kept_indices.resize(static_cast<std::size_t>(m.total_patches));
  for (int i = 0; i < m.total_patches; ++i) m.kept_indices[static_cast<std::size_t>(i)] = i;
  return m;
}

namespace {

EncodedView encode_view(const Image& transformed, const ViewConfig& cfg, const MaskPattern& mask,
                        ViewKind kind, const TransformRecord& record) {
  const Eigen::MatrixXd raw = patchify(transformed, cfg.patch_size);
  const Eigen::MatrixXd enc = encode_patches(raw, cfg.norm_mean, cfg.norm_std);

  EncodedView view;
  view.mask = mask;
  view.transform = record;
  view.patches.resize(mask.kept_count(), enc.cols());
  view.grid_indices.resize(static_cast<std::size_t>(mask.kept_count()));

  const int own_grid = transformed.w / cfg.patch_size;
  for (int i = 0; i < mask.kept_count(); ++i) {
    const int idx = mask.kept_indices[static_cast<std::size_t>(i)];
    view.patches.row(i) = enc.row(idx);
    if (kind == ViewKind::global) {
      view.grid_indices[static_cast<std::size_t>(i)] = idx;
    } else {
      // Focal patches map to the same (row, col) of the full grid, i.e. the
      // crop is treated as the top-left block for positional lookup.
      const int r = idx / own_grid, c = idx % own_grid;
      view.grid_indices[static_cast<std::size_t>(i)] = r * cfg.grid() + c;
    }
  }
  return view;
}

}  // namespace

ViewBundle build_view_bundle(const Image& image, const ViewConfig& cfg, Prng& rng) {
  cfg.validate();
  ViewBundle bundle;

  {
    TransformRecord rec;
    const Image t = apply_transforms(image, ViewKind::global, cfg, rng, &rec);
    MaskPattern full;
    full.total_patches = cfg.total_patches();
    full.kept_indices.resize(static_cast<std::size_t>(full.total_patches));
    for (int i = 0; i < full.total_patches; ++i) full.kept_indices[static_cast<std::size_t>(i)] = i;
    bundle.target = encode_view(t, cfg, full, ViewKind::global, rec);
  }

  bundle.anchors.reserve(static_cast<std::size_t>(cfg.n_anchor_views));
  for (int v = 0; v < cfg.n_random_masked; ++v) {
    TransformRecord rec;
    const Image t = apply_transforms(image, ViewKind::global, cfg, rng, &rec);
    const MaskPattern mask = random_mask(cfg.total_patches(), cfg.mask_ratio, rng);
    bundle.anchors.push_back(encode_view(t, cfg, mask, ViewKind::global, rec));
  }
  for (int v = 0; v < cfg.n_focal(); ++v) {
    TransformRecord rec;
    const Image t = apply_transforms(image, ViewKind::focal, cfg, rng, &rec);
    MaskPattern mask = focal_mask(cfg.focal_grid());
    if (cfg.extra_focal_drop) {
      const MaskPattern extra = random_mask(mask.total_patches, cfg.mask_ratio, rng);
      mask.kept_indices = extra.kept_indices;
    }
    bundle.anchors.push_back(encode_view(t, cfg, mask, ViewKind::focal, rec));
  }
  return bundle;
}

EncodedView build_eval_view(const Image& image, const ViewConfig& cfg) {
  cfg.validate();
  const Image t = eval_transform(image, cfg.image_size);
  MaskPattern full;
  full.total_patches = cfg.total_patches();
  full.kept_indices.resize(static_cast<std::size_t>(full.total_patches));
  for (int i = 0; i < full.total_patches; ++i) full.kept_indices[static_cast<std::size_t>(i)] = i;
  TransformRecord rec;
  rec.kind = ViewKind::global;
  rec.out_size = cfg.image_size;
  rec.crop_h = image.h;
  rec.crop_w = image.w;
  return encode_view(t, cfg, full, ViewKind::global, rec);
}

}  // namespace mmsn
