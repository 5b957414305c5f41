#pragma once

#include <cmath>

#include "david/image.hpp"
#include "david/rng.hpp"
#include "david/scene.hpp"

namespace david {

struct AugmentError : std::runtime_error {
  explicit AugmentError(const std::string& m) : std::runtime_error(m) {}
};

struct Range {
  double lo = 0, hi = 0;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct AugmentConfig {
  double p_geometric = 0.5;
  Range scale{0.8, 1.25};       // zoom factor; >1 zooms in
  Range shift_frac{-0.08, 0.08};  // of the image extent, per axis

  double p_blur = 0.5;
  Range blur_sigma_frac{0.0005, 0.004};  // of the image diagonal

  double p_brightness = 0.5;
  Range brightness{-0.15, 0.15};
  double p_contrast = 0.5;
  Range contrast{-0.3, 0.3};
  double p_hue_sat = 0.5;
  Range hue_deg{-25.0, 25.0};
  Range sat_scale{0.7, 1.3};
  double p_grayscale = 0.1;

  double p_noise = 0.5;
  Range poisson_scale{0.0, 0.06};
  Range gauss_sigma{0.0, 0.03};

  double p_dct = 0.3;
  Range dct_step{0.02, 0.12};

  uint64_t seed = 0;

  void validate() const {
    for (double p : {p_geometric, p_blur, p_brightness, p_contrast, p_hue_sat,
                     p_grayscale, p_noise, p_dct})
      if (p < 0 || p > 1) throw AugmentError("AugmentConfig: probability outside [0,1]");
    for (const Range* r : {&scale, &shift_frac, &blur_sigma_frac, &brightness, &contrast,
                           &hue_deg, &sat_scale, &poisson_scale, &gauss_sigma, &dct_step})
      if (r->lo > r->hi) throw AugmentError("AugmentConfig: range bounds out of order");
  }
};

// ---- geometric ----

namespace detail {

// Output pixel -> source pixel: centered zoom by `scale` then shift.
struct AffineMap {
  double scale = 1.0;
  double shift_x = 0.0, shift_y = 0.0;  // in output pixels
  double cx, cy;

  void source_of(double ox, double oy, double& sx, double& sy) const {
    sx = (ox - shift_x - cx) / scale + cx;
    sy = (oy - shift_y - cy) / scale + cy;
  }
};

inline Image warp_bilinear(const Image& img, const AffineMap& map, float fill) {
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int oy = 0; oy < img.height; ++oy)
      for (int ox = 0; ox < img.width; ++ox) {
        double sx, sy;
        map.source_of(ox + 0.5, oy + 0.5, sx, sy);
        sx -= 0.5;
        sy -= 0.5;
        if (sx < -0.5 || sy < -0.5 || sx > img.width - 0.5 || sy > img.height - 0.5) {
          out.at(c, oy, ox) = fill;
          continue;
        }
        int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        double fx = sx - x0, fy = sy - y0;
        auto sample = [&](int y, int x) {
          y = std::clamp(y, 0, img.height - 1);
          x = std::clamp(x, 0, img.width - 1);
          return double(img.at(c, y, x));
        };
        double top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
        double bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
        out.at(c, oy, ox) = float(top * (1 - fy) + bot * fy);
      }
  return out;
}

}  // namespace detail

// Same crop/zoom applied to the image and every ground-truth raster. Depth
// values are left untouched (relative depth is normalized downstream) and
// normal vectors keep their values; only the pixel mapping changes.
inline LabeledFrame random_scale_shift(const LabeledFrame& frame, double scale,
                                       double shift_x_frac, double shift_y_frac) {
  if (scale <= 0) throw AugmentError("random_scale_shift: degenerate scale");
  if (scale < 0.5) throw AugmentError("random_scale_shift: scale keeps under half the frame in view");
  detail::AffineMap map;
  map.scale = scale;
  map.cx = frame.rgb.width / 2.0;
  map.cy = frame.rgb.height / 2.0;
  map.shift_x = shift_x_frac * frame.rgb.width;
  map.shift_y = shift_y_frac * frame.rgb.height;

  LabeledFrame out;
  out.rgb = detail::warp_bilinear(frame.rgb, map, 0.f);
  out.depth = detail::warp_bilinear(frame.depth, map, 0.f);
  out.normals = detail::warp_bilinear(frame.normals, map, 0.f);
  out.alpha = detail::warp_bilinear(frame.alpha, map, 0.f);
  out.fg_mask = mask_from_alpha(out.alpha);
  // interpolation denormalizes normals slightly; restore unit length on the mask
  const int W = out.normals.width;
  for (int y = 0; y < out.normals.height; ++y)
    for (int x = 0; x < W; ++x) {
      if (!out.fg_mask[size_t(y) * W + x]) continue;
      double nx = out.normals.at(0, y, x), ny = out.normals.at(1, y, x),
             nz = out.normals.at(2, y, x);
      double n = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (n > 1e-6) {
        out.normals.at(0, y, x) = float(nx / n);
        out.normals.at(1, y, x) = float(ny / n);
        out.normals.at(2, y, x) = float(nz / n);
      }
    }
  return out;
}

// ---- photometric (rgb only) ----

inline Image adjust_contrast(const Image& img, double contrast) {
  if (contrast <= -1) throw AugmentError("adjust_contrast: contrast must be > -1");
  Image out = img;
  for (auto& v : out.data)
    v = std::clamp(float((v - 0.5) * (1.0 + contrast) + 0.5), 0.f, 1.f);
  return out;
}

inline Image adjust_brightness(const Image& img, double offset) {
  Image out = img;
  for (auto& v : out.data) v = std::clamp(float(v + offset), 0.f, 1.f);
  return out;
}

// Intensity-dependent (Poissonian, Gaussian-approximated) plus
// intensity-independent Gaussian camera noise.
inline Image iso_noise(const Image& img, double poisson_scale, double gauss_sigma,
                       Rng& rng) {
  if (poisson_scale < 0 || gauss_sigma < 0)
    throw AugmentError("iso_noise: scales must be non-negative");
  Image out = img;
  for (auto& v : out.data) {
    double n = std::sqrt(std::max(0.f, v)) * poisson_scale * rng.normal() +
               gauss_sigma * rng.normal();
    v = std::clamp(float(v + n), 0.f, 1.f);
  }
  return out;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  int radius = std::max(1, int(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;

  Image tmp(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int t = -radius; t <= radius; ++t)
          acc += k[t + radius] * img.at(c, y, std::clamp(x + t, 0, img.width - 1));
        tmp.at(c, y, x) = float(acc);
      }
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int t = -radius; t <= radius; ++t)
          acc += k[t + radius] * tmp.at(c, std::clamp(y + t, 0, img.height - 1), x);
        out.at(c, y, x) = float(acc);
      }
  return out;
}

// sigma proportional to the image diagonal (poor-MTF lens model)
inline Image blur_mtf(const Image& img, double sigma_frac) {
  double diag = std::sqrt(double(img.width) * img.width + double(img.height) * img.height);
  return gaussian_blur(img, sigma_frac * diag);
}

inline Image hue_saturation(const Image& img, double hue_shift_deg, double sat_scale) {
  if (img.channels != 3) throw AugmentError("hue_saturation: needs rgb");
  Image out = img;
  const size_t plane = img.plane();
  for (size_t i = 0; i < plane; ++i) {
    float h, s, v, r, g, b;
    rgb_to_hsv(img.data[i], img.data[i + plane], img.data[i + 2 * plane], h, s, v);
    h += float(hue_shift_deg);
    s = std::clamp(s * float(sat_scale), 0.f, 1.f);
    hsv_to_rgb(h, s, v, r, g, b);
    out.data[i] = std::clamp(r, 0.f, 1.f);
    out.data[i + plane] = std::clamp(g, 0.f, 1.f);
    out.data[i + 2 * plane] = std::clamp(b, 0.f, 1.f);
  }
  return out;
}

inline Image to_grayscale(const Image& img) {
  if (img.channels != 3) throw AugmentError("to_grayscale: needs rgb");
  Image out = img;
  const size_t plane = img.plane();
  for (size_t i = 0; i < plane; ++i) {
    float g = luma(img.data[i], img.data[i + plane], img.data[i + 2 * plane]);
    out.data[i] = out.data[i + plane] = out.data[i + 2 * plane] = g;
  }
  return out;
}

namespace detail {

// Orthonormal 8x8 DCT-II basis.
inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n) {
        double s = k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
        b[k][n] = s * std::cos(M_PI * (n + 0.5) * k / 8.0);
      }
    return b;
  }();
  return basis;
}

}  // namespace detail

// JPEG-like degradation without a codec: per-8x8-block DCT, uniform
// quantization with the given step, inverse DCT. step -> 0 is the identity.
inline Image dct_quantize(const Image& img, double step) {
  if (step < 0) throw AugmentError("dct_quantize: negative step");
  const auto& B = detail::dct8_basis();
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int by = 0; by < img.height; by += 8)
      for (int bx = 0; bx < img.width; bx += 8) {
        double block[8][8], coef[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block[y][x] = img.at(c, std::min(by + y, img.height - 1),
                                 std::min(bx + x, img.width - 1)) - 0.5;
        // C = B * X * B^T
        double tmp[8][8];
        for (int k = 0; k < 8; ++k)
          for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int n = 0; n < 8; ++n) acc += B[k][n] * block[n][x];
            tmp[k][x] = acc;
          }
        for (int k = 0; k < 8; ++k)
          for (int l = 0; l < 8; ++l) {
            double acc = 0;
            for (int n = 0; n < 8; ++n) acc += tmp[k][n] * B[l][n];
            coef[k][l] = step > 0 ? std::round(acc / step) * step : acc;
          }
        // X' = B^T * C * B
        for (int n = 0; n < 8; ++n)
          for (int l = 0; l < 8; ++l) {
            double acc = 0;
            for (int k = 0; k < 8; ++k) acc += B[k][n] * coef[k][l];
            tmp[n][l] = acc;
          }
        for (int y = 0; y < 8 && by + y < img.height; ++y)
          for (int x = 0; x < 8 && bx + x < img.width; ++x) {
            double acc = 0;
            for (int l = 0; l < 8; ++l) acc += tmp[y][l] * B[l][x];
            out.at(c, by + y, bx + x) = std::clamp(float(acc + 0.5), 0.f, 1.f);
          }
      }
  return out;
}

// Camera-pipeline order: geometry, optics, color, sensor noise, compression.
inline LabeledFrame apply_augmentations(const LabeledFrame& frame,
                                        const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  LabeledFrame out = frame;
  if (rng.uniform() < cfg.p_geometric) {
    double scale = cfg.scale.sample(rng);
    double sx = cfg.shift_frac.sample(rng);
    double sy = cfg.shift_frac.sample(rng);
    out = random_scale_shift(out, scale, sx, sy);
  }
  if (rng.uniform() < cfg.p_blur) out.rgb = blur_mtf(out.rgb, cfg.blur_sigma_frac.sample(rng));
  if (rng.uniform() < cfg.p_brightness)
    out.rgb = adjust_brightness(out.rgb, cfg.brightness.sample(rng));
  if (rng.uniform() < cfg.p_contrast)
    out.rgb = adjust_contrast(out.rgb, cfg.contrast.sample(rng));
  if (rng.uniform() < cfg.p_hue_sat)
    out.rgb = hue_saturation(out.rgb, cfg.hue_deg.sample(rng), cfg.sat_scale.sample(rng));
  if (rng.uniform() < cfg.p_grayscale) out.rgb = to_grayscale(out.rgb);
  if (rng.uniform() < cfg.p_noise)
    out.rgb = iso_noise(out.rgb, cfg.poisson_scale.sample(rng), cfg.gauss_sigma.sample(rng), rng);
  if (rng.uniform() < cfg.p_dct) out.rgb = dct_quantize(out.rgb, cfg.dct_step.sample(rng));
  return out;
}

}  // namespace david
