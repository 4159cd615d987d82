#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "mmsn/image.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

struct ViewConfig {
  int image_size = 224;
  int patch_size = 16;
  int focal_size = 96;
  int n_anchor_views = 11;   // M
  int n_random_masked = 1;
  double mask_ratio = 0.15;  // r, random masking only
  double hflip_prob = 0.5;
  double global_scale_min = 0.30;
  double global_scale_max = 1.00;
  double focal_scale_min = 0.05;
  double focal_scale_max = 0.30;
  // Grayscale input is replicated to 3 channels and normalized per channel.
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};
  // Optional extra random patch-dropping on focal views, off by default:
  // cropping itself is the focal mask.
  bool extra_focal_drop = false;

  int n_focal() const { return n_anchor_views - n_random_masked; }
  int grid() const { return image_size / patch_size; }
  int total_patches() const { return grid() * grid(); }
  int focal_grid() const { return focal_size / patch_size; }
  int focal_patches() const { return focal_grid() * focal_grid(); }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  int max_tokens() const { return total_patches() + 1; }

  void validate() const;
};

/// Patch indices kept by a mask, within a grid of total_patches.
struct MaskPattern {
  std::vector<int> kept_indices;  // sorted, unique
  int total_patches = 0;

  int kept_count() const { return static_cast<int>(kept_indices.size()); }
  /// True iff the kept set is an axis-aligned contiguous rectangle of the
  /// grid_w-wide patch grid.
  bool is_contiguous_rect(int grid_w) const;
};

enum class ViewKind { global, focal };

/// Applied transform parameters, sufficient to replay a view exactly.
struct TransformRecord {
  ViewKind kind = ViewKind::global;
  int crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
  bool hflip = false;
  int out_size = 0;
};

/// One encoder-ready view: normalized patch rows plus their positions in the
/// full patch grid (for positional-embedding lookup).
struct EncodedView {
  Eigen::MatrixXd patches;        // kept x (3 * p * p)
  std::vector<int> grid_indices;  // full-grid index per kept patch
  MaskPattern mask;
  TransformRecord transform;
};

struct ViewBundle {
  EncodedView target;               // global, unmasked
  std::vector<EncodedView> anchors; // 1 random-masked global + (M-1) focal
};

/// Random resized crop + horizontal flip; `global` yields image_size^2,
/// `focal` yields focal_size^2. Color jitter and blur are never applied.
Image apply_transforms(const Image& image, ViewKind kind, const ViewConfig& cfg, Prng& rng,
                       TransformRecord* record = nullptr);

/// Row-major p x p patches of a raw grayscale image; lossless.
Eigen::MatrixXd patchify(const Image& image, int patch_size);
Image un_patchify(const Eigen::MatrixXd& patches, int h, int w, int patch_size);

/// Replicates gray patches to 3 channels and normalizes each channel;
/// output column layout is channel-major: [c * p * p + offset].
Eigen::MatrixXd encode_patches(const Eigen::MatrixXd& raw_patches,
                               const std::array<double, 3>& mean,
                               const std::array<double, 3>& std);

/// Drops round(ratio * total) patches uniformly without replacement.
MaskPattern random_mask(int total_patches, double ratio, Prng& rng);

/// Mask pattern of a focal view within its own grid: all patches kept, as a
/// full contiguous block.
MaskPattern focal_mask(int focal_grid);

/// 1 target + M anchors, all independently transformed from the same image.
ViewBundle build_view_bundle(const Image& image, const ViewConfig& cfg, Prng& rng);

/// Deterministic inference-time view: resize + center crop, full grid kept.
EncodedView build_eval_view(const Image& image, const ViewConfig& cfg);

}  // namespace mmsn
