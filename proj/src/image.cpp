#include "mmsn/image.hpp"

#include <algorithm>
#include <cmath>

#include "mmsn/common.hpp"

namespace mmsn {

double sample_bilinear(const Image& img, double y, double x) {
  const int h = img.h, w = img.w;
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = img.px(y0, x0) * (1.0 - fx) + img.px(y0, x1) * fx;
  const double bot = img.px(y1, x0) * (1.0 - fx) + img.px(y1, x1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require(img.h > 0 && img.w > 0, "InvalidArgument", "resize of empty image");
  require(out_h > 0 && out_w > 0, "InvalidArgument", "resize to empty size");
  if (out_h == img.h && out_w == img.w) return img;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      out.px(y, x) = sample_bilinear(img, src_y, src_x);
    }
  }
  return out;
}

Image crop_resize(const Image& img, int y0, int x0, int ch, int cw, int out_size) {
  require(y0 >= 0 && x0 >= 0 && ch > 0 && cw > 0 && y0 + ch <= img.h && x0 + cw <= img.w,
          "InvalidArgument", "crop rectangle outside image");
  Image crop(ch, cw);
  crop.px = img.px.block(y0, x0, ch, cw);
  return resize_bilinear(crop, out_size, out_size);
}

Image center_crop(const Image& img, int size) {
  require(img.h >= size && img.w >= size, "ImageTooSmall", "center_crop larger than image");
  const int y0 = (img.h - size) / 2;
  const int x0 = (img.w - size) / 2;
  Image out(size, size);
  out.px = img.px.block(y0, x0, size, size);
  return out;
}

Image hflip(const Image& img) {
  Image out(img.h, img.w);
  out.px = img.px.rowwise().reverse();
  return out;
}

Image affine(const Image& img, double rot_deg, double tx_frac, double ty_frac, double scale) {
  Image out(img.h, img.w);
  const double theta = rot_deg * M_PI / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
  const double tx = tx_frac * img.w, ty = ty_frac * img.h;
  // Inverse mapping: for each output pixel find its source location.
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double dy = y - cy - ty;
      const double dx = x - cx - tx;
      const double sx = (c * dx + s * dy) / scale + cx;
      const double sy = (-s * dx + c * dy) / scale + cy;
      out.px(y, x) = sample_bilinear(img, sy, sx);
    }
  }
  return out;
}

Image eval_transform(const Image& img, int size) {
  require(img.h >= 1 && img.w >= 1, "InvalidArgument", "empty image");
  int rh, rw;
  if (img.h <= img.w) {
    rh = size;
    rw = std::max(size, static_cast<int>(std::lround(static_cast<double>(img.w) * size / img.h)));
  } else {
    rw = size;
    rh = std::max(size, static_cast<int>(std::lround(static_cast<double>(img.h) * size / img.w)));
  }
  return center_crop(resize_bilinear(img, rh, rw), size);
}

}  // namespace mmsn
