#pragma once

#include <Eigen/Dense>

namespace mmsn {

/// Grayscale image with intensities in [0, 1]. Row-major indexing:
/// px(y, x) with y in [0, h) and x in [0, w).
struct Image {
  int h = 0;
  int w = 0;
  Eigen::MatrixXd px;

  Image() = default;
  Image(int height, int width)
      : h(height), w(width), px(Eigen::MatrixXd::Zero(height, width)) {}

  bool same_size(const Image& o) const { return h == o.h && w == o.w; }
};

/// Bilinear sample with half-pixel centers; coordinates outside the image
/// clamp to the border.
double sample_bilinear(const Image& img, double y, double x);

Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Crop rectangle (must lie inside the image) then resize to out_size.
Image crop_resize(const Image& img, int y0, int x0, int ch, int cw, int out_size);

Image center_crop(const Image& img, int size);

Image hflip(const Image& img);

/// Rotation (degrees, about the center) + translation (fractions of the
/// size) + isotropic scale, sampled bilinearly from the source.
Image affine(const Image& img, double rot_deg, double tx_frac, double ty_frac, double scale);

/// Resize the shorter side to `size`, then center-crop a size x size square.
Image eval_transform(const Image& img, int size);

}  // namespace mmsn
