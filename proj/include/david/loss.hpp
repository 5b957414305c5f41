#pragma once

#include "david/image.hpp"
#include "david/nn.hpp"

namespace david {

struct LossError : std::runtime_error {
  explicit LossError(const std::string& m) : std::runtime_error(m) {}
};

struct ScaleShift {
  double s = 1.0;
  double t = 0.0;
};

struct LossWeights {
  double w_bce = 1.0, w_l1 = 1.0, w_dice = 1.0;
  double omega_lap = 0.5;   // must stay < 1
  double omega_grad = 2.0;
  int grad_scales = 4;
  int lap_levels = 4;

  void validate() const {
    if (!(omega_lap > 0.0 && omega_lap < 1.0))
      throw LossError("LossWeights: omega_lap must lie in (0,1)");
    if (omega_grad <= 0.0) throw LossError("LossWeights: omega_grad must be positive");
    if (grad_scales < 1 || lap_levels < 1)
      throw LossError("LossWeights: scale counts must be >= 1");
  }
};

// ---- scale/shift alignment (shared with evaluation) ----

// argmin_{s,t} sum_mask (s*pred + t - gt)^2, closed form.
template <class T>
ScaleShift solve_scale_shift(const std::vector<T>& pred, const std::vector<T>& gt,
                             const Mask& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw LossError("solve_scale_shift: size mismatch");
  double n = 0, mean_p = 0, mean_g = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    n += 1;
    mean_p += double(pred[i]);
    mean_g += double(gt[i]);
  }
  if (n == 0) throw LossError("solve_scale_shift: empty mask");
  mean_p /= n;
  mean_g /= n;
  double var_p = 0, cov = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    double dp = double(pred[i]) - mean_p;
    cov += dp * (double(gt[i]) - mean_g);
    var_p += dp * dp;
  }
  var_p /= n;
  cov /= n;
  if (var_p <= 1e-12)
    throw LossError("solve_scale_shift: prediction variance over the mask is degenerate");
  ScaleShift out;
  out.s = cov / var_p;
  out.t = mean_g - out.s * mean_p;
  return out;
}

inline ScaleShift solve_scale_shift(const Image& pred, const Image& gt, const Mask& mask) {
  return solve_scale_shift(pred.data, gt.data, mask);
}

// ---- ground-truth depth normalization ----

// (d* - min) / (max - min), statistics over the foreground mask only.
inline Image normalize_depth_gt(const Image& metric_depth, const Mask& fg_mask) {
  if (metric_depth.channels != 1) throw LossError("normalize_depth_gt: expects 1 channel");
  if (metric_depth.plane() != fg_mask.size())
    throw LossError("normalize_depth_gt: mask size mismatch");
  float mn = 0, mx = 0;
  bool any = false;
  for (size_t i = 0; i < fg_mask.size(); ++i) {
    if (!fg_mask[i]) continue;
    float v = metric_depth.data[i];
    if (!any) {
      mn = mx = v;
      any = true;
    } else {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
  }
  if (!any) throw LossError("normalize_depth_gt: empty mask");
  if (!(mx - mn > 1e-12f))
    throw LossError("normalize_depth_gt: constant depth over the mask (degenerate frame)");
  Image out(1, metric_depth.height, metric_depth.width);
  float inv = 1.f / (mx - mn);
  for (size_t i = 0; i < fg_mask.size(); ++i)
    out.data[i] = fg_mask[i] ? (metric_depth.data[i] - mn) * inv : 0.f;
  return out;
}

// ---- helpers on the graph ----

namespace detail {

template <class T>
Tensor<T> mask_tensor(const Mask& mask, size_t h, size_t w) {
  std::vector<T> m(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) m[i] = T(mask[i]);
  return Tensor<T>::from_data({1, 1, h, w}, std::move(m));
}

// Binomial 5-tap blur as two separable graph convs with replicate borders.
template <class T>
Tensor<T> pyr_blur(const Tensor<T>& x) {
  static const std::vector<T> k = {T(1) / 16, T(4) / 16, T(6) / 16, T(4) / 16, T(1) / 16};
  size_t C = x.dim(1);
  // depthwise via per-channel loop is wasteful; our pyramids are 1-channel
  if (C != 1) throw LossError("pyr_blur: expects a single channel");
  Tensor<T> kx = Tensor<T>::from_data({1, 1, 1, 5}, k);
  Tensor<T> ky = Tensor<T>::from_data({1, 1, 5, 1}, k);
  Tensor<T> h = conv2d(replicate_pad2d(x, 0, 0, 2, 2), kx, Tensor<T>());
  return conv2d(replicate_pad2d(h, 2, 2, 0, 0), ky, Tensor<T>());
}

template <class T>
std::vector<Tensor<T>> laplacian_pyramid_graph(const Tensor<T>& img, int levels) {
  std::vector<Tensor<T>> out;
  Tensor<T> cur = img;
  for (int l = 0; l + 1 < levels; ++l) {
    Tensor<T> down = decimate2d(pyr_blur(cur), 2);
    Tensor<T> up = interpolate_bilinear(down, cur.dim(2), cur.dim(3));
    out.push_back(sub(cur, up));
    cur = down;
  }
  out.push_back(cur);
  return out;
}

template <class T>
void check_unit_range(const Tensor<T>& t, const char* what) {
  for (T v : t.data())
    if (v < T(-1e-6) || v > T(1) + T(1e-6))
      throw LossError(std::string(what) + ": value " + std::to_string(double(v)) +
                      " outside [0,1]");
}

}  // namespace detail

// ---- matting loss: BCE + L1 + Dice + omega_lap * Laplacian L1 ----

template <class T>
struct MattingLossParts {
  Tensor<T> bce, l1, dice, lap, total;
};

template <class T>
MattingLossParts<T> matting_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                                 const LossWeights& w = {}) {
  w.validate();
  if (pred.shape() != gt.shape())
    throw LossError("matting_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                    shape_str(gt.shape()));
  detail::check_unit_range(pred, "matting_loss prediction");
  detail::check_unit_range(gt, "matting_loss ground truth");

  const T eps = T(1e-6);
  Tensor<T> p = clamp(pred, eps, T(1) - eps);
  Tensor<T> one = Tensor<T>::scalar(T(1));
  Tensor<T> bce = neg(mean_all(add(mul(gt, log(p)), mul(sub(one, gt), log(sub(one, p))))));
  Tensor<T> l1 = mean_all(abs(sub(pred, gt)));

  Tensor<T> inter = sum_all(mul(pred, gt));
  Tensor<T> denom = add(add(sum_all(pred), sum_all(gt)), T(1e-6));
  Tensor<T> dice = sub(T(1), divide(mul(inter, T(2)), denom));

  auto pyr_p = detail::laplacian_pyramid_graph(pred, w.lap_levels);
  auto pyr_g = detail::laplacian_pyramid_graph(gt, w.lap_levels);
  Tensor<T> lap = Tensor<T>::scalar(T(0));
  for (size_t l = 0; l < pyr_p.size(); ++l)
    lap = add(lap, mean_all(abs(sub(pyr_p[l], pyr_g[l]))));

  MattingLossParts<T> parts;
  parts.bce = bce;
  parts.l1 = l1;
  parts.dice = dice;
  parts.lap = lap;
  parts.total = add(add(mul(bce, T(w.w_bce)), mul(l1, T(w.w_l1))),
                    add(mul(dice, T(w.w_dice)), mul(lap, T(w.omega_lap))));
  return parts;
}

// ---- cosine alignment loss for normals, foreground only ----

template <class T>
Tensor<T> normal_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Mask& fg_mask) {
  if (pred.ndim() != 4 || pred.dim(1) != 3)
    throw LossError("normal_loss: expects [1,3,H,W]");
  if (pred.shape() != gt.shape()) throw LossError("normal_loss: shape mismatch");
  size_t H = pred.dim(2), W = pred.dim(3);
  double count = 0;
  for (uint8_t m : fg_mask) count += m;
  if (count == 0) throw LossError("normal_loss: empty mask");
  Tensor<T> mask = detail::mask_tensor<T>(fg_mask, H, W);
  Tensor<T> dot = sum_axis(mul(pred, gt), 1);  // [1,1,H,W]
  Tensor<T> per_px = mul(mask, sub(T(1), dot));
  return divide(sum_all(per_px), T(count));
}

// ---- scale/shift-invariant depth loss with multi-scale gradient term ----

template <class T>
struct DepthLossParts {
  Tensor<T> mse, grad, total;
  ScaleShift align;
};

// Loss at a fixed alignment; (s,t) enter as constants, so this is exactly the
// function the backward pass differentiates.
template <class T>
DepthLossParts<T> depth_loss_with_alignment(const Tensor<T>& pred, const Tensor<T>& gt,
                                            const Mask& fg_mask, ScaleShift ss,
                                            const LossWeights& w = {}) {
  w.validate();
  if (pred.ndim() != 4 || pred.dim(1) != 1)
    throw LossError("depth_loss: expects [1,1,H,W]");
  if (pred.shape() != gt.shape()) throw LossError("depth_loss: shape mismatch");
  size_t H = pred.dim(2), W = pred.dim(3);

  double count = 0;
  for (uint8_t m : fg_mask) count += m;
  Tensor<T> mask = detail::mask_tensor<T>(fg_mask, H, W);
  Tensor<T> aligned = add(mul(pred, T(ss.s)), T(ss.t));
  Tensor<T> resid = sub(aligned, gt);
  Tensor<T> mse = divide(sum_all(mul(mask, square(resid))), T(count));

  Tensor<T> grad_term = Tensor<T>::scalar(T(0));
  for (int k = 0; k < w.grad_scales; ++k) {
    size_t step = size_t(1) << k;
    if (step >= H || step >= W) break;
    Tensor<T> rk = decimate2d(resid, step);
    Tensor<T> mk = decimate2d(mask, step);
    size_t h = rk.dim(2), wd = rk.dim(3);

    Tensor<T> dx = sub(crop2d(rk, 0, 1, h, wd - 1), crop2d(rk, 0, 0, h, wd - 1));
    Tensor<T> mx = mul(crop2d(mk, 0, 1, h, wd - 1), crop2d(mk, 0, 0, h, wd - 1));
    Tensor<T> dy = sub(crop2d(rk, 1, 0, h - 1, wd), crop2d(rk, 0, 0, h - 1, wd));
    Tensor<T> my = mul(crop2d(mk, 1, 0, h - 1, wd), crop2d(mk, 0, 0, h - 1, wd));

    double valid = 0;
    for (T v : mx.data()) valid += double(v);
    for (T v : my.data()) valid += double(v);
    if (valid == 0) continue;
    Tensor<T> num = add(sum_all(mul(mx, abs(dx))), sum_all(mul(my, abs(dy))));
    grad_term = add(grad_term, divide(num, T(valid)));
  }

  DepthLossParts<T> parts;
  parts.mse = mse;
  parts.grad = grad_term;
  parts.total = add(mse, mul(grad_term, T(w.omega_grad)));
  parts.align = ss;
  return parts;
}

// (s,t) solved on the current values, then treated as constants.
template <class T>
DepthLossParts<T> depth_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                             const Mask& fg_mask, const LossWeights& w = {}) {
  ScaleShift ss = solve_scale_shift(pred.data(), gt.data(), fg_mask);
  return depth_loss_with_alignment(pred, gt, fg_mask, ss, w);
}

}  // namespace david
