#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <queue>
#include <sstream>

#include "david/image.hpp"
#include "david/loss.hpp"

namespace david {

struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& m) : std::runtime_error(m) {}
};

struct DepthMetrics {
  double rmse = 0, absrel = 0, delta1 = 0;
};

struct NormalMetrics {
  double mean_deg = 0, median_deg = 0;
  std::map<double, double> pct_within;  // threshold deg -> fraction
};

struct MattingMetrics {
  double sad = 0, mse = 0, mad = 0, conn = 0;
};

// All aggregates are means over per-image values.
struct MetricReport {
  std::optional<DepthMetrics> depth;
  std::optional<NormalMetrics> normals;
  std::optional<MattingMetrics> matting;
  size_t n_samples = 0;
};

// ---- depth ----

// Metrics on an already-aligned prediction.
inline DepthMetrics depth_metrics_on_aligned(const Image& aligned, const Image& gt,
                                             const Mask& mask) {
  double n = 0, se = 0, rel = 0, d1 = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    double g = gt.data[i];
    if (g <= 0) throw MetricError("depth_metrics: non-positive ground truth on the mask");
    double p = aligned.data[i];
    n += 1;
    se += (p - g) * (p - g);
    rel += std::abs(p - g) / g;
    double ratio = p > 0 ? std::max(p / g, g / p) : 1e30;
    if (ratio < 1.25) d1 += 1;
  }
  if (n == 0) throw MetricError("depth_metrics: empty mask");
  DepthMetrics m;
  m.rmse = std::sqrt(se / n);
  m.absrel = rel / n;
  m.delta1 = d1 / n;
  return m;
}

// Least-squares scale/shift alignment against the metric ground truth on the
// foreground, then RMSE / AbsRel / delta1. Degenerate prediction variance
// propagates as an error.
inline DepthMetrics depth_metrics(const Image& pred, const Image& gt, const Mask& mask) {
  ScaleShift ss = solve_scale_shift(pred, gt, mask);
  Image aligned(1, pred.height, pred.width);
  for (size_t i = 0; i < aligned.data.size(); ++i)
    aligned.data[i] = float(ss.s * pred.data[i] + ss.t);
  return depth_metrics_on_aligned(aligned, gt, mask);
}

// ---- surface normals ----

inline NormalMetrics normal_metrics(const Image& pred, const Image& gt, const Mask& mask,
                                    const std::vector<double>& thresholds = {11.25, 22.5, 30.0}) {
  if (pred.channels != 3 || gt.channels != 3)
    throw MetricError("normal_metrics: expects 3-channel normal maps");
  const size_t plane = pred.plane();
  std::vector<double> errs;
  errs.reserve(plane);
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    double dot = 0;
    for (int c = 0; c < 3; ++c)
      dot += double(pred.data[c * plane + i]) * gt.data[c * plane + i];
    dot = std::clamp(dot, -1.0, 1.0);
    errs.push_back(std::acos(dot) * 180.0 / M_PI);
  }
  if (errs.empty()) throw MetricError("normal_metrics: empty mask");

  NormalMetrics m;
  for (double e : errs) m.mean_deg += e;
  m.mean_deg /= double(errs.size());
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  size_t n = sorted.size();
  m.median_deg = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (double t : thresholds) {
    double c = 0;
    for (double e : errs)
      if (e < t) c += 1;
    m.pct_within[t] = c / double(errs.size());
  }
  return m;
}

// ---- matting ----

namespace detail {

// Largest 4-connected component of a binary raster; all-zero when empty.
inline std::vector<uint8_t> largest_component(const std::vector<uint8_t>& bin, int h, int w) {
  std::vector<int> label(bin.size(), -1);
  int best_label = -1;
  size_t best_size = 0;
  int next = 0;
  for (size_t start = 0; start < bin.size(); ++start) {
    if (!bin[start] || label[start] >= 0) continue;
    size_t size = 0;
    std::queue<size_t> q;
    q.push(start);
    label[start] = next;
    while (!q.empty()) {
      size_t i = q.front();
      q.pop();
      ++size;
      int y = int(i) / w, x = int(i) % w;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        size_t j = size_t(ny) * w + nx;
        if (bin[j] && label[j] < 0) {
          label[j] = next;
          q.push(j);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    ++next;
  }
  std::vector<uint8_t> out(bin.size(), 0);
  if (best_label >= 0)
    for (size_t i = 0; i < bin.size(); ++i) out[i] = label[i] == best_label ? 1 : 0;
  return out;
}

}  // namespace detail

// Connectivity error of the standard matting benchmark: per-pixel
// disconnection level against the largest jointly-opaque region, thresholds
// 0.1..0.9, distance coefficient 0.15, scaled by 1/1000.
inline double connectivity_error(const Image& pred, const Image& gt) {
  const int h = pred.height, w = pred.width;
  const size_t n = pred.plane();
  std::vector<float> round_down(n, -1.f);
  for (int step = 1; step <= 9; ++step) {
    float theta = 0.1f * float(step);
    std::vector<uint8_t> inter(n);
    for (size_t i = 0; i < n; ++i)
      inter[i] = (pred.data[i] >= theta && gt.data[i] >= theta) ? 1 : 0;
    auto omega = detail::largest_component(inter, h, w);
    for (size_t i = 0; i < n; ++i)
      if (round_down[i] < 0 && !omega[i]) round_down[i] = theta - 0.1f;
  }
  for (auto& v : round_down)
    if (v < 0) v = 1.f;

  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    double dg = double(gt.data[i]) - round_down[i];
    double dp = double(pred.data[i]) - round_down[i];
    double phi_g = 1.0 - (dg >= 0.15 ? dg : 0.0);
    double phi_p = 1.0 - (dp >= 0.15 ? dp : 0.0);
    loss += std::abs(phi_g - phi_p);
  }
  return loss / 1000.0;
}

inline MattingMetrics matting_metrics(const Image& pred, const Image& gt) {
  if (pred.plane() != gt.plane()) throw MetricError("matting_metrics: size mismatch");
  for (float v : pred.data)
    if (v < -1e-6f || v > 1.f + 1e-6f)
      throw MetricError("matting_metrics: prediction outside [0,1]");
  for (float v : gt.data)
    if (v < -1e-6f || v > 1.f + 1e-6f)
      throw MetricError("matting_metrics: ground truth outside [0,1]");

  MattingMetrics m;
  double sad = 0, se = 0;
  for (size_t i = 0; i < pred.plane(); ++i) {
    double d = std::abs(double(pred.data[i]) - gt.data[i]);
    sad += d;
    se += d * d;
  }
  m.sad = sad / 1000.0;
  m.mad = sad / double(pred.plane());
  m.mse = se / double(pred.plane());
  m.conn = connectivity_error(pred, gt);
  return m;
}

// ---- aggregation and report formatting ----

struct MetricAccumulator {
  MetricReport sum;

  void add(const MetricReport& r) {
    sum.n_samples += 1;
    if (r.depth) {
      if (!sum.depth) sum.depth = DepthMetrics{};
      sum.depth->rmse += r.depth->rmse;
      sum.depth->absrel += r.depth->absrel;
      sum.depth->delta1 += r.depth->delta1;
    }
    if (r.normals) {
      if (!sum.normals) sum.normals = NormalMetrics{};
      sum.normals->mean_deg += r.normals->mean_deg;
      sum.normals->median_deg += r.normals->median_deg;
      for (const auto& [t, f] : r.normals->pct_within) sum.normals->pct_within[t] += f;
    }
    if (r.matting) {
      if (!sum.matting) sum.matting = MattingMetrics{};
      sum.matting->sad += r.matting->sad;
      sum.matting->mse += r.matting->mse;
      sum.matting->mad += r.matting->mad;
      sum.matting->conn += r.matting->conn;
    }
  }

  MetricReport mean() const {
    MetricReport out = sum;
    double n = double(std::max<size_t>(1, sum.n_samples));
    if (out.depth) {
      out.depth->rmse /= n;
      out.depth->absrel /= n;
      out.depth->delta1 /= n;
    }
    if (out.normals) {
      out.normals->mean_deg /= n;
      out.normals->median_deg /= n;
      for (auto& [t, f] : out.normals->pct_within) f /= n;
    }
    if (out.matting) {
      out.matting->sad /= n;
      out.matting->mse /= n;
      out.matting->mad /= n;
      out.matting->conn /= n;
    }
    return out;
  }
};

// Flat key=value block. SAD and Conn carry the 1/1000 scale; MSE/MAD are raw.
inline std::string report_kv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "n_samples=" << r.n_samples << "\n";
  if (r.depth) {
    os << "depth.rmse=" << r.depth->rmse << "\n";
    os << "depth.absrel=" << r.depth->absrel << "\n";
    os << "depth.delta1=" << r.depth->delta1 << "\n";
  }
  if (r.normals) {
    os << "normal.mean_deg=" << r.normals->mean_deg << "\n";
    os << "normal.median_deg=" << r.normals->median_deg << "\n";
    for (const auto& [t, f] : r.normals->pct_within)
      os << "normal.within_" << t << "=" << f << "\n";
  }
  if (r.matting) {
    os << "matting.sad=" << r.matting->sad << "\n";
    os << "matting.mse=" << r.matting->mse << "\n";
    os << "matting.mad=" << r.matting->mad << "\n";
    os << "matting.conn=" << r.matting->conn << "\n";
  }
  return os.str();
}

inline std::string report_csv_header(const MetricReport& r) {
  std::ostringstream os;
  os << "n_samples";
  if (r.depth) os << ",rmse,absrel,delta1";
  if (r.normals) {
    os << ",mean_deg,median_deg";
    for (const auto& [t, f] : r.normals->pct_within) os << ",within_" << t;
  }
  if (r.matting) os << ",sad,mse,mad,conn";
  return os.str();
}

inline std::string report_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.n_samples;
  if (r.depth) os << "," << r.depth->rmse << "," << r.depth->absrel << "," << r.depth->delta1;
  if (r.normals) {
    os << "," << r.normals->mean_deg << "," << r.normals->median_deg;
    for (const auto& [t, f] : r.normals->pct_within) os << "," << f;
  }
  if (r.matting)
    os << "," << r.matting->sad << "," << r.matting->mse << "," << r.matting->mad << ","
       << r.matting->conn;
  return os.str();
}

}  // namespace david
