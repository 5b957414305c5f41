#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "david/image.hpp"
#include "david/io.hpp"
#include "david/mc_tables.hpp"
#include "david/rng.hpp"

namespace david {

struct SceneError : std::runtime_error {
  explicit SceneError(const std::string& m) : std::runtime_error(m) {}
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline Vec3 operator*(double s, Vec3 a) { return a * s; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) {
  double n = norm(a);
  return n > 0 ? a * (1.0 / n) : Vec3{0, 0, 0};
}

struct Mat3 {
  // rows
  Vec3 r0, r1, r2;
  Vec3 apply(Vec3 v) const { return {dot(r0, v), dot(r1, v), dot(r2, v)}; }
  Vec3 apply_transposed(Vec3 v) const {
    return {r0.x * v.x + r1.x * v.y + r2.x * v.z,
            r0.y * v.x + r1.y * v.y + r2.y * v.z,
            r0.z * v.x + r1.z * v.y + r2.z * v.z};
  }
};

// ---- scene description ----

enum class PrimitiveKind { Sphere, Box, Capsule };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 a;              // sphere/box center, capsule endpoint
  Vec3 b;              // capsule second endpoint
  double radius = 1.0; // sphere/capsule
  Vec3 half_extents;   // box
  Vec3 albedo{0.8, 0.8, 0.8};
};

struct StrandBundle {
  std::vector<std::vector<Vec3>> strands;  // polylines
  double radius = 0.01;
  Vec3 albedo{0.35, 0.25, 0.15};
};

struct TranslucentPanel {
  Vec3 center;
  Vec3 normal{0, 0, 1};
  double radius = 1.0;
  double opacity = 0.5;  // in (0,1)
  Vec3 albedo{0.9, 0.9, 1.0};
};

struct DirectionalLight {
  Vec3 direction{0, 0, -1};  // direction the light travels
  double intensity = 1.0;
};

enum class TranslucencyPolicy { Ignore, Render };

struct CameraSpec {
  double fov_deg = 60.0;  // vertical
  int width = 96, height = 128;
  Vec3 position{0, 0, 0};
  Vec3 look_at{0, 0, -1};
  Vec3 up{0, 1, 0};
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<StrandBundle> strand_bundles;
  std::vector<TranslucentPanel> translucent_panels;
  std::vector<DirectionalLight> lights;
  double ambient = 0.2;
  CameraSpec camera;
  TranslucencyPolicy policy = TranslucencyPolicy::Ignore;
  uint64_t seed = 0;
  Vec3 bg_top{0.35, 0.4, 0.5};
  Vec3 bg_bottom{0.12, 0.12, 0.16};

  void validate() const {
    if (primitives.empty() && strand_bundles.empty())
      throw SceneError("SceneSpec: needs at least one primitive or strand bundle");
    if (camera.fov_deg <= 10.0 || camera.fov_deg >= 120.0)
      throw SceneError("SceneSpec: fov must lie in (10,120) degrees");
    for (const auto& p : translucent_panels)
      if (p.opacity <= 0.0 || p.opacity >= 1.0)
        throw SceneError("SceneSpec: panel opacity must lie in (0,1)");
  }
};

struct LabeledFrame {
  Image rgb;      // 3 channels
  Image depth;    // 1 channel, camera-axis z distance
  Image normals;  // 3 channels, camera space, unit on fg
  Image alpha;    // 1 channel in [0,1]
  Mask fg_mask;   // alpha > 0.5
};

// ---- ray intersection ----

namespace detail {

struct Hit {
  double t = 0;
  Vec3 normal;  // world space, unit, oriented toward the ray origin side
  Vec3 albedo;
  int kind = 0;  // 0 opaque primitive, 1 strand, 2 translucent panel
  double opacity = 1.0;
};

inline bool ray_sphere(Vec3 o, Vec3 d, Vec3 c, double r, double& t) {
  Vec3 oc = o - c;
  double b = dot(oc, d);
  double q = dot(oc, oc) - r * r;
  double disc = b * b - q;
  if (disc < 0) return false;
  double s = std::sqrt(disc);
  double t0 = -b - s, t1 = -b + s;
  if (t0 > 1e-9) { t = t0; return true; }
  if (t1 > 1e-9) { t = t1; return true; }
  return false;
}

inline bool ray_box(Vec3 o, Vec3 d, Vec3 c, Vec3 h, double& t, Vec3& n) {
  double tmin = -1e300, tmax = 1e300;
  int axis = 0;
  double sign = 1.0;
  const double od[3] = {o.x - c.x, o.y - c.y, o.z - c.z};
  const double dd[3] = {d.x, d.y, d.z};
  const double hh[3] = {h.x, h.y, h.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dd[i]) < 1e-12) {
      if (std::abs(od[i]) > hh[i]) return false;
      continue;
    }
    double inv = 1.0 / dd[i];
    double t0 = (-hh[i] - od[i]) * inv;
    double t1 = (hh[i] - od[i]) * inv;
    double s = t0 < t1 ? -1.0 : 1.0;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = i;
      sign = s;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  double thit = tmin > 1e-9 ? tmin : tmax;
  if (thit <= 1e-9 || tmin > tmax) return false;
  t = thit;
  n = {0, 0, 0};
  double* np = axis == 0 ? &n.x : (axis == 1 ? &n.y : &n.z);
  *np = sign * (tmin > 1e-9 ? 1.0 : -1.0);
  // orient against the ray
  if (dot(n, d) > 0) n = n * -1.0;
  return true;
}

inline bool ray_capsule(Vec3 o, Vec3 d, Vec3 a, Vec3 b, double r, double& t, Vec3& n) {
  Vec3 ab = b - a;
  double len = norm(ab);
  bool best = false;
  double best_t = 1e300;
  Vec3 best_n;
  if (len > 1e-12) {
    Vec3 u = ab * (1.0 / len);
    Vec3 oa = o - a;
    Vec3 dp = d - u * dot(d, u);
    Vec3 op = oa - u * dot(oa, u);
    double A = dot(dp, dp);
    if (A > 1e-14) {
      double B = 2 * dot(dp, op);
      double C = dot(op, op) - r * r;
      double disc = B * B - 4 * A * C;
      if (disc >= 0) {
        double s = std::sqrt(disc);
        for (double tc : {(-B - s) / (2 * A), (-B + s) / (2 * A)}) {
          if (tc <= 1e-9 || tc >= best_t) continue;
          double proj = dot(oa + d * tc, u);
          if (proj >= 0 && proj <= len) {
            Vec3 p = o + d * tc;
            best_t = tc;
            best_n = normalize(p - (a + u * proj));
            best = true;
          }
        }
      }
    }
  }
  for (Vec3 cc : {a, b}) {
    double tc;
    if (ray_sphere(o, d, cc, r, tc) && tc < best_t) {
      Vec3 p = o + d * tc;
      best_t = tc;
      best_n = normalize(p - cc);
      best = true;
    }
  }
  if (!best) return false;
  t = best_t;
  n = best_n;
  return true;
}

inline bool ray_disc(Vec3 o, Vec3 d, Vec3 c, Vec3 n_in, double r, double& t, Vec3& n) {
  Vec3 pn = normalize(n_in);
  double denom = dot(d, pn);
  if (std::abs(denom) < 1e-12) return false;
  double tc = dot(c - o, pn) / denom;
  if (tc <= 1e-9) return false;
  Vec3 p = o + d * tc;
  if (dot(p - c, p - c) > r * r) return false;
  t = tc;
  n = denom < 0 ? pn : pn * -1.0;
  return true;
}

struct BundleBound {
  Vec3 center;
  double radius = 0;
};

inline BundleBound bundle_bound(const StrandBundle& b) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& s : b.strands)
    for (const auto& p : s) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
  BundleBound bb;
  bb.center = (lo + hi) * 0.5;
  bb.radius = 0.5 * norm(hi - lo) + b.radius + 1e-6;
  return bb;
}

inline bool ray_hits_bound(Vec3 o, Vec3 d, const BundleBound& b) {
  Vec3 oc = o - b.center;
  double bq = dot(oc, d);
  return bq * bq - (dot(oc, oc) - b.radius * b.radius) >= 0;
}

}  // namespace detail

// ---- density volume / marching cubes / proxy normals ----

struct DensityVolume {
  int nx = 0, ny = 0, nz = 0;  // lattice node counts
  double voxel_size = 0;
  Vec3 origin;  // position of node (0,0,0)
  std::vector<double> rho;

  double at(int i, int j, int k) const {
    return rho[(size_t(k) * ny + j) * nx + i];
  }
  double& at(int i, int j, int k) { return rho[(size_t(k) * ny + j) * nx + i]; }
};

inline DensityVolume strands_to_density(const std::vector<StrandBundle>& bundles,
                                        int grid_res, double voxel_size) {
  DensityVolume vol;
  vol.nx = vol.ny = vol.nz = grid_res;
  vol.voxel_size = voxel_size;
  vol.rho.assign(size_t(grid_res) * grid_res * grid_res, 0.0);

  bool any = false;
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& b : bundles)
    for (const auto& s : b.strands)
      for (const auto& p : s) {
        any = true;
        lo = {std::min(lo.x, p.x - b.radius), std::min(lo.y, p.y - b.radius),
              std::min(lo.z, p.z - b.radius)};
        hi = {std::max(hi.x, p.x + b.radius), std::max(hi.y, p.y + b.radius),
              std::max(hi.z, p.z + b.radius)};
      }
  if (!any) {
    vol.origin = {0, 0, 0};
    return vol;  // empty bundle list: all-zero volume
  }

  double span = (grid_res - 1) * voxel_size;
  Vec3 extent = hi - lo;
  if (extent.x > span || extent.y > span || extent.z > span)
    throw SceneError("strands_to_density: grid does not contain bundles");
  Vec3 center = (lo + hi) * 0.5;
  vol.origin = center - Vec3{span / 2, span / 2, span / 2};

  // trilinear splat: mass ds * radius^2 spread over the 8 surrounding nodes
  auto deposit = [&](Vec3 m, double mass) {
    double gx = (m.x - vol.origin.x) / voxel_size;
    double gy = (m.y - vol.origin.y) / voxel_size;
    double gz = (m.z - vol.origin.z) / voxel_size;
    int ix = int(std::floor(gx)), iy = int(std::floor(gy)), iz = int(std::floor(gz));
    double fx = gx - ix, fy = gy - iy, fz = gz - iz;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int a = ix + dx, b = iy + dy, c = iz + dz;
          if (a < 0 || a >= vol.nx || b < 0 || b >= vol.ny || c < 0 || c >= vol.nz)
            continue;
          double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
          vol.at(a, b, c) += mass * w;
        }
  };
  for (const auto& b : bundles) {
    double w = b.radius * b.radius;
    for (const auto& s : b.strands)
      for (size_t i = 0; i + 1 < s.size(); ++i) {
        Vec3 p = s[i], q = s[i + 1];
        double len = norm(q - p);
        int steps = std::max(1, int(std::ceil(len / (voxel_size * 0.25))));
        double ds = len / steps;
        for (int k = 0; k < steps; ++k)
          deposit(p + (q - p) * ((k + 0.5) / steps), ds * w);
      }
  }
  return vol;
}

// Separable 3-tap box-binomial blur; widens sparse strand deposits into a
// coherent clump so the extracted proxy is coarse rather than per-strand.
inline void smooth_density(DensityVolume& vol, int iterations = 2) {
  if (vol.rho.empty()) return;
  std::vector<double> tmp(vol.rho.size());
  auto pass = [&](int axis) {
    for (int k = 0; k < vol.nz; ++k)
      for (int j = 0; j < vol.ny; ++j)
        for (int i = 0; i < vol.nx; ++i) {
          auto sample = [&](int d) {
            int a = i + (axis == 0 ? d : 0);
            int b = j + (axis == 1 ? d : 0);
            int c = k + (axis == 2 ? d : 0);
            a = std::clamp(a, 0, vol.nx - 1);
            b = std::clamp(b, 0, vol.ny - 1);
            c = std::clamp(c, 0, vol.nz - 1);
            return vol.at(a, b, c);
          };
          tmp[(size_t(k) * vol.ny + j) * vol.nx + i] =
              0.25 * sample(-1) + 0.5 * sample(0) + 0.25 * sample(1);
        }
    vol.rho.swap(tmp);
  };
  for (int it = 0; it < iterations; ++it)
    for (int axis = 0; axis < 3; ++axis) pass(axis);
}

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;  // unit, pointing away from high density
  std::vector<std::array<int, 3>> triangles;
  bool empty() const { return triangles.empty(); }
};

inline TriMesh marching_cubes(const DensityVolume& vol, double iso) {
  TriMesh mesh;
  if (vol.rho.empty()) return mesh;
  double mn = vol.rho[0], mx = vol.rho[0];
  for (double v : vol.rho) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (!(iso > mn && iso < mx)) return mesh;  // no crossing: empty, not fatal

  const auto& table = mc::tri_table();
  auto grad = [&](int i, int j, int k) {
    auto sample = [&](int a, int b, int c) {
      a = std::clamp(a, 0, vol.nx - 1);
      b = std::clamp(b, 0, vol.ny - 1);
      c = std::clamp(c, 0, vol.nz - 1);
      return vol.at(a, b, c);
    };
    return Vec3{(sample(i + 1, j, k) - sample(i - 1, j, k)) / 2,
                (sample(i, j + 1, k) - sample(i, j - 1, k)) / 2,
                (sample(i, j, k + 1) - sample(i, j, k - 1)) / 2};
  };

  std::unordered_map<uint64_t, int> edge_vertex;
  auto edge_key = [&](int i, int j, int k, int axis) {
    return (uint64_t(size_t(k) * vol.ny + j) * vol.nx + i) * 3 + axis;
  };

  auto vertex_on_edge = [&](int ci, int cj, int ck, int e) {
    const int* ca = mc::kCorner[mc::kEdge[e][0]];
    const int* cb = mc::kCorner[mc::kEdge[e][1]];
    int ai = ci + ca[0], aj = cj + ca[1], ak = ck + ca[2];
    int bi = ci + cb[0], bj = cj + cb[1], bk = ck + cb[2];
    int axis = (ai != bi) ? 0 : (aj != bj ? 1 : 2);
    // canonical base node: the lower corner along the axis
    int gi = std::min(ai, bi), gj = std::min(aj, bj), gk = std::min(ak, bk);
    uint64_t key = edge_key(gi, gj, gk, axis);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    double va = vol.at(ai, aj, ak), vb = vol.at(bi, bj, bk);
    double t = (iso - va) / (vb - va);
    t = std::clamp(t, 0.0, 1.0);
    Vec3 pa = vol.origin + Vec3{double(ai), double(aj), double(ak)} * vol.voxel_size;
    Vec3 pb = vol.origin + Vec3{double(bi), double(bj), double(bk)} * vol.voxel_size;
    Vec3 pos = pa + (pb - pa) * t;
    Vec3 ga = grad(ai, aj, ak), gb = grad(bi, bj, bk);
    Vec3 g = ga + (gb - ga) * t;
    Vec3 n = normalize(g * -1.0);  // outward, away from high density
    if (norm(n) == 0) n = {0, 0, 1};
    int idx = int(mesh.vertices.size());
    mesh.vertices.push_back(pos);
    mesh.normals.push_back(n);
    edge_vertex.emplace(key, idx);
    return idx;
  };

  for (int k = 0; k + 1 < vol.nz; ++k)
    for (int j = 0; j + 1 < vol.ny; ++j)
      for (int i = 0; i + 1 < vol.nx; ++i) {
        int c = 0;
        for (int v = 0; v < 8; ++v) {
          const int* cc = mc::kCorner[v];
          if (vol.at(i + cc[0], j + cc[1], k + cc[2]) >= iso) c |= 1 << v;
        }
        if (c == 0 || c == 255) continue;
        const auto& row = table.tri[c];
        for (int e = 0; row[e] >= 0; e += 3) {
          int v0 = vertex_on_edge(i, j, k, row[e]);
          int v1 = vertex_on_edge(i, j, k, row[e + 1]);
          int v2 = vertex_on_edge(i, j, k, row[e + 2]);
          if (v0 == v1 || v1 == v2 || v0 == v2) continue;
          mesh.triangles.push_back({v0, v1, v2});
        }
      }
  return mesh;
}

namespace detail {

// Ericson: closest point on triangle abc to p.
inline Vec3 closest_point_triangle(Vec3 p, Vec3 a, Vec3 b, Vec3 c, double bary[3]) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) { bary[0] = 1; bary[1] = 0; bary[2] = 0; return a; }
  Vec3 bp = p - b;
  double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) { bary[0] = 0; bary[1] = 1; bary[2] = 0; return b; }
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    bary[0] = 1 - v; bary[1] = v; bary[2] = 0;
    return a + ab * v;
  }
  Vec3 cp = p - c;
  double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) { bary[0] = 0; bary[1] = 0; bary[2] = 1; return c; }
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    bary[0] = 1 - w; bary[1] = 0; bary[2] = w;
    return a + ac * w;
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    bary[0] = 0; bary[1] = 1 - w; bary[2] = w;
    return b + (c - b) * w;
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  bary[0] = 1 - v - w; bary[1] = v; bary[2] = w;
  return a + ab * v + ac * w;
}

}  // namespace detail

// World-space smooth normal of the nearest mesh surface point (brute force).
inline Vec3 nearest_proxy_normal(const TriMesh& mesh, Vec3 p) {
  double best_d2 = 1e300;
  Vec3 best_n{0, 0, 1};
  for (const auto& tr : mesh.triangles) {
    double bary[3];
    Vec3 q = detail::closest_point_triangle(p, mesh.vertices[tr[0]], mesh.vertices[tr[1]],
                                            mesh.vertices[tr[2]], bary);
    double d2 = dot(p - q, p - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_n = normalize(mesh.normals[tr[0]] * bary[0] + mesh.normals[tr[1]] * bary[1] +
                         mesh.normals[tr[2]] * bary[2]);
    }
  }
  return best_n;
}

struct StrandPixel {
  int x = 0, y = 0;
  Vec3 world;  // hit point on the strand
};

// Overwrites normals at strand-covered pixels with the smooth proxy normal,
// expressed in camera space with z oriented toward the camera.
inline void transfer_proxy_normals(const TriMesh& mesh,
                                   const std::vector<StrandPixel>& pixels,
                                   const Mat3& world_to_cam, Image& normals) {
  if (mesh.empty())
    throw SceneError("transfer_proxy_normals: empty proxy mesh; lower the iso value");
  for (const auto& sp : pixels) {
    Vec3 n_world = nearest_proxy_normal(mesh, sp.world);
    Vec3 n = world_to_cam.apply(n_world);
    if (n.z < 0) n = n * -1.0;
    n = normalize(n);
    normals.at(0, sp.y, sp.x) = float(n.x);
    normals.at(1, sp.y, sp.x) = float(n.y);
    normals.at(2, sp.y, sp.x) = float(n.z);
  }
}

// ---- rendering ----

namespace detail {

struct CameraFrame {
  Mat3 world_to_cam;  // rows: right, up, back (z toward the viewer)
  Vec3 position;
  double focal = 0;  // pixels
  double cx = 0, cy = 0;
};

inline CameraFrame make_camera_frame(const CameraSpec& cam) {
  CameraFrame f;
  Vec3 back = normalize(cam.position - cam.look_at);
  Vec3 right = normalize(cross(cam.up, back));
  if (norm(right) == 0) right = {1, 0, 0};
  Vec3 up = cross(back, right);
  f.world_to_cam = {right, up, back};
  f.position = cam.position;
  f.focal = (cam.height / 2.0) / std::tan(cam.fov_deg * M_PI / 360.0);
  f.cx = cam.width / 2.0;
  f.cy = cam.height / 2.0;
  return f;
}

inline Vec3 pixel_ray(const CameraFrame& f, double px, double py) {
  Vec3 dir_cam{(px - f.cx) / f.focal, -(py - f.cy) / f.focal, -1.0};
  return normalize(f.world_to_cam.apply_transposed(dir_cam));
}

struct TraceResult {
  std::optional<Hit> opaque;       // nearest primitive or strand
  std::optional<Hit> translucent;  // nearest panel
  double translucent_coverage = 0; // 1 - prod(1 - opacity) over panels in front of opaque
};

inline TraceResult trace(const SceneSpec& spec,
                         const std::vector<BundleBound>& bounds, Vec3 o, Vec3 d) {
  TraceResult res;
  double t;
  Vec3 n;
  for (const auto& p : spec.primitives) {
    bool hit = false;
    switch (p.kind) {
      case PrimitiveKind::Sphere:
        hit = ray_sphere(o, d, p.a, p.radius, t);
        if (hit) n = normalize(o + d * t - p.a);
        break;
      case PrimitiveKind::Box:
        hit = ray_box(o, d, p.a, p.half_extents, t, n);
        break;
      case PrimitiveKind::Capsule:
        hit = ray_capsule(o, d, p.a, p.b, p.radius, t, n);
        break;
    }
    if (hit && (!res.opaque || t < res.opaque->t))
      res.opaque = Hit{t, n, p.albedo, 0, 1.0};
  }
  for (size_t bi = 0; bi < spec.strand_bundles.size(); ++bi) {
    if (!ray_hits_bound(o, d, bounds[bi])) continue;
    const auto& bundle = spec.strand_bundles[bi];
    for (const auto& s : bundle.strands)
      for (size_t i = 0; i + 1 < s.size(); ++i)
        if (ray_capsule(o, d, s[i], s[i + 1], bundle.radius, t, n))
          if (!res.opaque || t < res.opaque->t)
            res.opaque = Hit{t, n, bundle.albedo, 1, 1.0};
  }
  double transparency = 1.0;
  for (const auto& p : spec.translucent_panels) {
    if (!ray_disc(o, d, p.center, p.normal, p.radius, t, n)) continue;
    if (res.opaque && t >= res.opaque->t) continue;
    transparency *= 1.0 - p.opacity;
    if (!res.translucent || t < res.translucent->t)
      res.translucent = Hit{t, n, p.albedo, 2, p.opacity};
  }
  res.translucent_coverage = 1.0 - transparency;
  return res;
}

inline Vec3 shade(const SceneSpec& spec, Vec3 n, Vec3 albedo) {
  double light = spec.ambient;
  for (const auto& l : spec.lights)
    light += l.intensity * std::max(0.0, dot(n, l.direction * -1.0));
  return {std::clamp(albedo.x * light, 0.0, 1.0),
          std::clamp(albedo.y * light, 0.0, 1.0),
          std::clamp(albedo.z * light, 0.0, 1.0)};
}

}  // namespace detail

inline LabeledFrame render_frame(const SceneSpec& spec) {
  spec.validate();
  const int W = spec.camera.width, H = spec.camera.height;
  LabeledFrame frame;
  frame.rgb = Image(3, H, W);
  frame.depth = Image(1, H, W);
  frame.normals = Image(3, H, W);
  frame.alpha = Image(1, H, W);

  detail::CameraFrame cam = detail::make_camera_frame(spec.camera);
  std::vector<detail::BundleBound> bounds;
  for (const auto& b : spec.strand_bundles) bounds.push_back(detail::bundle_bound(b));

  std::vector<StrandPixel> strand_pixels;

  for (int py = 0; py < H; ++py) {
    double bg_t = (py + 0.5) / H;
    Vec3 bg = spec.bg_top * (1 - bg_t) + spec.bg_bottom * bg_t;
    for (int px = 0; px < W; ++px) {
      Vec3 dir = detail::pixel_ray(cam, px + 0.5, py + 0.5);
      auto res = detail::trace(spec, bounds, cam.position, dir);

      // shading: opaque surface (or background) seen through any panels
      Vec3 base = bg;
      if (res.opaque) base = detail::shade(spec, res.opaque->normal, res.opaque->albedo);
      Vec3 color = base;
      if (res.translucent) {
        Vec3 panel = detail::shade(spec, res.translucent->normal, res.translucent->albedo);
        double k = res.translucent_coverage;
        color = base * (1 - k) + panel * k;
      }
      frame.rgb.at(0, py, px) = float(color.x);
      frame.rgb.at(1, py, px) = float(color.y);
      frame.rgb.at(2, py, px) = float(color.z);

      // ground-truth depth/normals per translucency policy
      const detail::Hit* gt = nullptr;
      if (spec.policy == TranslucencyPolicy::Render && res.translucent &&
          (!res.opaque || res.translucent->t < res.opaque->t))
        gt = &*res.translucent;
      else if (res.opaque)
        gt = &*res.opaque;

      if (gt) {
        Vec3 p_cam = cam.world_to_cam.apply(cam.position + dir * gt->t - cam.position);
        double depth = -p_cam.z;
        Vec3 n_cam = cam.world_to_cam.apply(gt->normal);
        if (n_cam.z < 0) n_cam = n_cam * -1.0;
        n_cam = normalize(n_cam);
        frame.depth.at(0, py, px) = float(depth);
        frame.normals.at(0, py, px) = float(n_cam.x);
        frame.normals.at(1, py, px) = float(n_cam.y);
        frame.normals.at(2, py, px) = float(n_cam.z);
        if (gt->kind == 1)
          strand_pixels.push_back({px, py, cam.position + dir * gt->t});
      }

      // alpha: 4x4 supersampled coverage
      double cov = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          Vec3 sdir = detail::pixel_ray(cam, px + (sx + 0.5) / 4.0, py + (sy + 0.5) / 4.0);
          auto sres = detail::trace(spec, bounds, cam.position, sdir);
          if (sres.opaque)
            cov += 1.0;
          else
            cov += sres.translucent_coverage;
        }
      frame.alpha.at(0, py, px) = float(cov / 16.0);
    }
  }
  frame.fg_mask = mask_from_alpha(frame.alpha);

  // Appendix pipeline: replace per-strand normals with smooth proxy normals.
  if (!strand_pixels.empty()) {
    DensityVolume vol = strands_to_density(spec.strand_bundles, 40, [&] {
      Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
      for (const auto& b : spec.strand_bundles)
        for (const auto& s : b.strands)
          for (const auto& p : s) {
            lo = {std::min(lo.x, p.x - b.radius), std::min(lo.y, p.y - b.radius),
                  std::min(lo.z, p.z - b.radius)};
            hi = {std::max(hi.x, p.x + b.radius), std::max(hi.y, p.y + b.radius),
                  std::max(hi.z, p.z + b.radius)};
          }
      Vec3 e = hi - lo;
      double span = std::max({e.x, e.y, e.z, 1e-6});
      return span / 35.0;
    }());
    smooth_density(vol, 2);
    double mx = 0;
    for (double v : vol.rho) mx = std::max(mx, v);
    if (mx > 0) {
      for (double& v : vol.rho) v /= mx;
      TriMesh mesh = marching_cubes(vol, 0.5);
      if (!mesh.empty())
        transfer_proxy_normals(mesh, strand_pixels, cam.world_to_cam, frame.normals);
    }
  }
  return frame;
}

// ---- toy scene families / dataset generation ----

enum class SceneFamily { CloseUp = 0, HalfFrame = 1, FullFrame = 2 };

inline SceneSpec make_toy_scene(uint64_t seed, SceneFamily family, int width, int height) {
  Rng rng(hash_combine(seed, 0x5ce9e5));
  SceneSpec spec;
  spec.seed = seed;
  spec.camera.width = width;
  spec.camera.height = height;
  spec.camera.fov_deg = 55.0;

  auto rand_albedo = [&]() {
    return Vec3{0.25 + 0.7 * rng.uniform(), 0.25 + 0.7 * rng.uniform(),
                0.25 + 0.7 * rng.uniform()};
  };

  int n_prims;
  double dist_lo, dist_hi, size_lo, size_hi, spread;
  switch (family) {
    case SceneFamily::CloseUp:
      n_prims = 1 + int(rng.uniform_int(0, 1));
      dist_lo = 2.2; dist_hi = 2.9; size_lo = 0.85; size_hi = 1.2; spread = 0.35;
      break;
    case SceneFamily::HalfFrame:
      n_prims = 2 + int(rng.uniform_int(0, 1));
      dist_lo = 3.6; dist_hi = 5.0; size_lo = 0.55; size_hi = 0.95; spread = 1.0;
      break;
    default:
      n_prims = 3 + int(rng.uniform_int(0, 2));
      dist_lo = 6.0; dist_hi = 9.0; size_lo = 0.45; size_hi = 0.85; spread = 2.2;
      break;
  }

  for (int i = 0; i < n_prims; ++i) {
    Primitive p;
    double kind = rng.uniform();
    double dist = rng.uniform(dist_lo, dist_hi);
    Vec3 center{rng.uniform(-spread, spread), rng.uniform(-spread, spread), -dist};
    if (i == 0) center.x *= 0.3, center.y *= 0.3;  // keep the main subject framed
    double size = rng.uniform(size_lo, size_hi);
    p.albedo = rand_albedo();
    if (kind < 0.45) {
      p.kind = PrimitiveKind::Sphere;
      p.a = center;
      p.radius = size;
    } else if (kind < 0.75) {
      p.kind = PrimitiveKind::Box;
      p.a = center;
      p.half_extents = {size * rng.uniform(0.6, 1.0), size * rng.uniform(0.6, 1.0),
                        size * rng.uniform(0.6, 1.0)};
    } else {
      p.kind = PrimitiveKind::Capsule;
      Vec3 axis = normalize(Vec3{rng.normal(), rng.normal(), 0.3 * rng.normal()});
      p.a = center - axis * (size * 0.7);
      p.b = center + axis * (size * 0.7);
      p.radius = size * rng.uniform(0.35, 0.55);
    }
    spec.primitives.push_back(p);
  }

  // a strand cap on the main subject for a quarter of close-up scenes
  if (family == SceneFamily::CloseUp && rng.uniform() < 0.25 &&
      spec.primitives[0].kind == PrimitiveKind::Sphere) {
    const Primitive& head = spec.primitives[0];
    StrandBundle bundle;
    bundle.radius = head.radius * rng.uniform(0.01, 0.02);
    bundle.albedo = {0.2 + 0.3 * rng.uniform(), 0.12 + 0.2 * rng.uniform(),
                     0.05 + 0.12 * rng.uniform()};
    int n_strands = 14 + int(rng.uniform_int(0, 6));
    for (int s = 0; s < n_strands; ++s) {
      double theta = rng.uniform(0, 2 * M_PI);
      double phi = rng.uniform(0.05, 0.9);  // polar angle from +y
      Vec3 dir0{std::sin(phi) * std::cos(theta), std::cos(phi),
                std::sin(phi) * std::sin(theta)};
      std::vector<Vec3> pts;
      double shell = 1.04;
      Vec3 p = head.a + dir0 * (head.radius * shell);
      pts.push_back(p);
      Vec3 tangent = normalize(cross(dir0, Vec3{0, 1, 0}) + Vec3{0, -0.6, 0});
      for (int seg = 0; seg < 6; ++seg) {
        tangent = normalize(tangent + Vec3{0.25 * rng.normal(), -0.25, 0.25 * rng.normal()});
        p = p + tangent * (head.radius * 0.18);
        // keep the strand hugging the sphere shell
        Vec3 radial = p - head.a;
        p = head.a + normalize(radial) * std::max(norm(radial), head.radius * shell);
        pts.push_back(p);
      }
      bundle.strands.push_back(std::move(pts));
    }
    spec.strand_bundles.push_back(std::move(bundle));
  }

  if (rng.uniform() < 0.12) {
    const Primitive& subject = spec.primitives[0];
    TranslucentPanel panel;
    panel.center = subject.a + Vec3{0, 0, subject.radius + 0.4};
    panel.normal = {0, 0, 1};
    panel.radius = subject.radius * rng.uniform(0.4, 0.8);
    panel.opacity = rng.uniform(0.25, 0.7);
    panel.albedo = {0.85, 0.9, 1.0};
    spec.translucent_panels.push_back(panel);
    spec.policy = rng.uniform() < 0.85 ? TranslucencyPolicy::Ignore
                                       : TranslucencyPolicy::Render;
  }

  int n_lights = 1 + int(rng.uniform_int(0, 1));
  for (int i = 0; i < n_lights; ++i) {
    DirectionalLight l;
    l.direction = normalize(Vec3{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.4),
                                 -rng.uniform(0.5, 1.0)});
    l.intensity = rng.uniform(0.5, 0.9) / n_lights;
    spec.lights.push_back(l);
  }
  spec.ambient = rng.uniform(0.15, 0.35);
  spec.bg_top = rand_albedo() * 0.6;
  spec.bg_bottom = rand_albedo() * 0.3;
  return spec;
}

inline void save_labeled_frame(const std::string& dir, const std::string& stem,
                               const LabeledFrame& frame) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(dir) / stem;
  write_pfm(base.string() + ".rgb.pfm", frame.rgb);
  write_pfm(base.string() + ".depth.pfm", frame.depth);
  write_pfm(base.string() + ".normal.pfm", frame.normals);
  write_pfm(base.string() + ".alpha.pfm", frame.alpha);
}

inline LabeledFrame load_labeled_frame(const std::string& dir, const std::string& stem) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(dir) / stem;
  LabeledFrame frame;
  frame.rgb = read_pfm(base.string() + ".rgb.pfm");
  frame.depth = read_pfm(base.string() + ".depth.pfm");
  frame.normals = read_pfm(base.string() + ".normal.pfm");
  frame.alpha = read_pfm(base.string() + ".alpha.pfm");
  frame.fg_mask = mask_from_alpha(frame.alpha);
  return frame;
}

struct DatasetManifest {
  std::vector<std::string> stems;
};

inline DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream f(std::filesystem::path(dir) / "manifest.txt");
  if (!f) throw IoError("manifest: cannot open " + dir + "/manifest.txt");
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) m.stems.push_back(line);
  return m;
}

// Scene families appear in equal proportion (count split round-robin).
inline DatasetManifest generate_dataset(int count, double val_fraction, uint64_t seed,
                                        const std::string& out_dir, int width = 96,
                                        int height = 128) {
  namespace fs = std::filesystem;
  if (count < 1) throw SceneError("generate_dataset: count must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw IoError("generate_dataset: cannot create directory " + out_dir);

  DatasetManifest manifest;
  for (int i = 0; i < count; ++i) {
    SceneFamily family = SceneFamily(i % 3);
    uint64_t frame_seed = hash_combine(seed, uint64_t(i));
    SceneSpec spec = make_toy_scene(frame_seed, family, width, height);
    LabeledFrame frame = render_frame(spec);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%05d", i);
    save_labeled_frame(out_dir, stem, frame);
    manifest.stems.push_back(stem);
  }

  std::ofstream mf(fs::path(out_dir) / "manifest.txt");
  for (const auto& s : manifest.stems) mf << s << "\n";

  // deterministic split listing, validation picked by the seed
  Rng split_rng(hash_combine(seed, 0x5b717));
  std::vector<size_t> order(manifest.stems.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[size_t(split_rng.uniform_int(0, int64_t(i) - 1))]);
  size_t n_val = size_t(std::llround(val_fraction * double(manifest.stems.size())));
  std::ofstream tf(fs::path(out_dir) / "manifest_train.txt");
  std::ofstream vf(fs::path(out_dir) / "manifest_val.txt");
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_val ? vf : tf) << manifest.stems[order[i]] << "\n";
  return manifest;
}

}  // namespace david
