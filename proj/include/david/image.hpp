#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace david {

struct ImageError : std::runtime_error {
  explicit ImageError(const std::string& m) : std::runtime_error(m) {}
};

// Planar float raster, channel-major (data[c*H*W + y*W + x]). RGB and alpha
// live in [0,1]; depth is unbounded; normal maps hold unit 3-vectors.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w), data(size_t(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }
  size_t plane() const { return size_t(height) * width; }
  bool empty() const { return data.empty(); }
};

using Mask = std::vector<uint8_t>;  // row-major H*W, 0 or 1

inline Mask mask_from_alpha(const Image& alpha, float thresh = 0.5f) {
  Mask m(alpha.plane());
  for (size_t i = 0; i < m.size(); ++i) m[i] = alpha.data[i] > thresh ? 1 : 0;
  return m;
}

struct PadRecord {
  int left = 0, top = 0;
  int orig_height = 0, orig_width = 0;
  int target = 0;
  bool empty() const { return left == 0 && top == 0 && orig_height == target && orig_width == target; }
};

// Center the content and replicate edge pixels outward.
inline Image pad_replicate_to_square(const Image& img, int target, PadRecord* rec) {
  if (target < img.height || target < img.width)
    throw ImageError("pad_replicate_to_square: target " + std::to_string(target) +
                     " smaller than input " + std::to_string(img.height) + "x" +
                     std::to_string(img.width));
  PadRecord r;
  r.left = (target - img.width) / 2;
  r.top = (target - img.height) / 2;
  r.orig_height = img.height;
  r.orig_width = img.width;
  r.target = target;
  if (rec) *rec = r;

  Image out(img.channels, target, target);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < target; ++y) {
      int sy = std::clamp(y - r.top, 0, img.height - 1);
      for (int x = 0; x < target; ++x) {
        int sx = std::clamp(x - r.left, 0, img.width - 1);
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  return out;
}

inline Image crop_by_pad_record(const Image& img, const PadRecord& r) {
  Image out(img.channels, r.orig_height, r.orig_width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < r.orig_height; ++y)
      for (int x = 0; x < r.orig_width; ++x)
        out.at(c, y, x) = img.at(c, y + r.top, x + r.left);
  return out;
}

// Bilinear resize with half-pixel centers.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ImageError("resize_bilinear: empty output");
  Image out(img.channels, out_h, out_w);
  for (int c = 0; c < img.channels; ++c)
    for (int oy = 0; oy < out_h; ++oy) {
      double sy = (oy + 0.5) * double(img.height) / out_h - 0.5;
      int y0 = int(std::floor(sy));
      double wy = sy - y0;
      int ya = std::clamp(y0, 0, img.height - 1);
      int yb = std::clamp(y0 + 1, 0, img.height - 1);
      for (int ox = 0; ox < out_w; ++ox) {
        double sx = (ox + 0.5) * double(img.width) / out_w - 0.5;
        int x0 = int(std::floor(sx));
        double wx = sx - x0;
        int xa = std::clamp(x0, 0, img.width - 1);
        int xb = std::clamp(x0 + 1, 0, img.width - 1);
        double top = img.at(c, ya, xa) * (1 - wx) + img.at(c, ya, xb) * wx;
        double bot = img.at(c, yb, xa) * (1 - wx) + img.at(c, yb, xb) * wx;
        out.at(c, oy, ox) = float(top * (1 - wy) + bot * wy);
      }
    }
  return out;
}

namespace detail {

// 5-tap binomial blur [1,4,6,4,1]/16, separable, replicate borders.
inline Image binomial_blur5(const Image& img) {
  static const float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
  Image tmp(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0;
        for (int t = -2; t <= 2; ++t)
          acc += k[t + 2] * img.at(c, y, std::clamp(x + t, 0, img.width - 1));
        tmp.at(c, y, x) = acc;
      }
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0;
        for (int t = -2; t <= 2; ++t)
          acc += k[t + 2] * tmp.at(c, std::clamp(y + t, 0, img.height - 1), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

}  // namespace detail

// Blur then keep even-indexed pixels; odd extents keep the trailing sample.
inline Image pyramid_downsample(const Image& img) {
  Image blurred = detail::binomial_blur5(img);
  int oh = (img.height + 1) / 2, ow = (img.width + 1) / 2;
  Image out(img.channels, oh, ow);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) out.at(c, y, x) = blurred.at(c, 2 * y, 2 * x);
  return out;
}

struct LaplacianPyramid {
  // levels[0..n-2] are band-pass residuals, levels[n-1] is the low-pass base.
  std::vector<Image> levels;
};

inline LaplacianPyramid build_laplacian_pyramid(const Image& img, int levels) {
  if (levels < 1) throw ImageError("build_laplacian_pyramid: levels must be >= 1");
  int min_extent = 1 << (levels - 1);
  if (img.height < min_extent || img.width < min_extent)
    throw ImageError("build_laplacian_pyramid: " + std::to_string(levels) +
                     " levels need extents >= " + std::to_string(min_extent));
  LaplacianPyramid pyr;
  Image cur = img;
  for (int l = 0; l + 1 < levels; ++l) {
    Image down = pyramid_downsample(cur);
    Image up = resize_bilinear(down, cur.height, cur.width);
    Image residual(cur.channels, cur.height, cur.width);
    for (size_t i = 0; i < cur.data.size(); ++i)
      residual.data[i] = cur.data[i] - up.data[i];
    pyr.levels.push_back(std::move(residual));
    cur = std::move(down);
  }
  pyr.levels.push_back(std::move(cur));
  return pyr;
}

inline Image reconstruct_laplacian_pyramid(const LaplacianPyramid& pyr) {
  if (pyr.levels.empty()) throw ImageError("reconstruct: empty pyramid");
  Image cur = pyr.levels.back();
  for (size_t l = pyr.levels.size() - 1; l-- > 0;) {
    const Image& res = pyr.levels[l];
    Image up = resize_bilinear(cur, res.height, res.width);
    for (size_t i = 0; i < up.data.size(); ++i) up.data[i] += res.data[i];
    cur = std::move(up);
  }
  return cur;
}

// ---- color utilities ----

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r)
    h = 60.f * std::fmod((g - b) / d, 6.f);
  else if (mx == g)
    h = 60.f * ((b - r) / d + 2.f);
  else
    h = 60.f * ((r - g) / d + 4.f);
  if (h < 0.f) h += 360.f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = std::fmod(h, 360.f);
  if (h < 0) h += 360.f;
  float c = v * s;
  float x = c * (1.f - std::abs(std::fmod(h / 60.f, 2.f) - 1.f));
  float m = v - c;
  float rr = 0, gg = 0, bb = 0;
  if (h < 60) { rr = c; gg = x; }
  else if (h < 120) { rr = x; gg = c; }
  else if (h < 180) { gg = c; bb = x; }
  else if (h < 240) { gg = x; bb = c; }
  else if (h < 300) { rr = x; bb = c; }
  else { rr = c; bb = x; }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

}  // namespace david
