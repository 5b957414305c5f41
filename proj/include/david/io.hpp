#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "david/image.hpp"
#include "david/tensor.hpp"

namespace david {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

inline void put_u64le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u32le(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16le(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
inline void put_f32le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(out, bits);
}
inline void put_f64le(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(out, bits);
}

// Cursor over an in-memory blob; every read checks remaining length.
struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const char* what;

  Reader(const std::string& b, const char* w) : buf(b), what(w) {}

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw IoError(std::string(what) + ": truncated payload at byte " +
                    std::to_string(pos));
  }
  uint8_t u8() {
    need(1);
    return uint8_t(buf[pos++]);
  }
  uint16_t u16le() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32le() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64le() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32le() {
    uint32_t bits = u32le();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64le() {
    uint64_t bits = u64le();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string read_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(std::string(what) + ": cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& data, const char* what) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(std::string(what) + ": cannot open " + path + " for writing");
  f.write(data.data(), std::streamsize(data.size()));
  if (!f) throw IoError(std::string(what) + ": short write to " + path);
}

template <class T>
constexpr uint8_t dvt_dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

}  // namespace detail

// ---- DVT: "DVT1" | dtype u8 (0=f32,1=f64) | ndim u8 | ndim x u64le | payload ----

template <class T>
std::string dvt_encode(const Tensor<T>& t) {
  std::string out = "DVT1";
  out.push_back(char(detail::dvt_dtype_code<T>()));
  out.push_back(char(t.ndim()));
  for (size_t d : t.shape()) detail::put_u64le(out, d);
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>)
      detail::put_f32le(out, v);
    else
      detail::put_f64le(out, double(v));
  }
  return out;
}

template <class T>
Tensor<T> dvt_decode(detail::Reader& r) {
  if (r.bytes(4) != "DVT1") throw IoError("DVT: malformed magic");
  uint8_t dtype = r.u8();
  if (dtype > 1) throw IoError("DVT: unknown dtype code " + std::to_string(dtype));
  uint8_t ndim = r.u8();
  Shape shape(ndim);
  size_t total = 1;
  for (auto& d : shape) {
    uint64_t e = r.u64le();
    if (e != 0 && total > SIZE_MAX / e) throw IoError("DVT: extent overflow");
    d = size_t(e);
    total *= d;
  }
  size_t elem = dtype == 0 ? 4 : 8;
  if (total > (SIZE_MAX - r.pos) / elem) throw IoError("DVT: extent overflow");
  std::vector<T> data(total);
  if (dtype == 0)
    for (auto& v : data) v = T(r.f32le());
  else
    for (auto& v : data) v = T(r.f64le());
  return Tensor<T>::from_data(shape, std::move(data));
}

template <class T>
void write_dvt(const std::string& path, const Tensor<T>& t) {
  detail::write_file(path, dvt_encode(t), "DVT");
}

template <class T>
Tensor<T> read_dvt(const std::string& path) {
  std::string buf = detail::read_file(path, "DVT");
  detail::Reader r(buf, "DVT");
  return dvt_decode<T>(r);
}

// ---- DVCK checkpoint: "DVCK" | u32 count | per tensor: u16 name len, name, DVT blob ----

template <class T>
void write_dvck(const std::string& path, const std::map<std::string, Tensor<T>>& tensors) {
  std::string out = "DVCK";
  detail::put_u32le(out, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u16le(out, uint16_t(name.size()));
    out += name;
    out += dvt_encode(t);
  }
  detail::write_file(path, out, "DVCK");
}

template <class T>
std::map<std::string, Tensor<T>> read_dvck(const std::string& path) {
  std::string buf = detail::read_file(path, "DVCK");
  detail::Reader r(buf, "DVCK");
  if (r.bytes(4) != "DVCK") throw IoError("DVCK: malformed magic");
  uint32_t count = r.u32le();
  std::map<std::string, Tensor<T>> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = r.u16le();
    std::string name = r.bytes(len);
    out.emplace(name, dvt_decode<T>(r));
  }
  return out;
}

// ---- PFM: "PF" (3 channel) / "Pf" (1 channel); negative scale = little-endian;
// rows stored bottom-to-top per the format definition ----

inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("PFM: only 1 or 3 channels supported");
  std::string out = img.channels == 3 ? "PF\n" : "Pf\n";
  out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) detail::put_f32le(out, img.at(c, y, x));
  detail::write_file(path, out, "PFM");
}

inline Image read_pfm(const std::string& path) {
  std::string buf = detail::read_file(path, "PFM");
  detail::Reader r(buf, "PFM");
  std::string magic = r.bytes(2);
  int channels;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else throw IoError("PFM: malformed magic");

  auto token = [&]() {
    // skip single whitespace runs between header tokens
    std::string t;
    while (r.pos < buf.size() && std::isspace(uint8_t(buf[r.pos]))) ++r.pos;
    while (r.pos < buf.size() && !std::isspace(uint8_t(buf[r.pos]))) t.push_back(buf[r.pos++]);
    if (t.empty()) throw IoError("PFM: truncated header");
    return t;
  };
  long w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    throw IoError("PFM: malformed header");
  }
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20))
    throw IoError("PFM: extent overflow");
  if (scale == 0) throw IoError("PFM: zero scale");
  ++r.pos;  // the single whitespace after the scale line
  bool little = scale < 0;

  Image img(channels, int(h), int(w));
  r.need(size_t(w) * size_t(h) * channels * 4);
  for (int y = int(h) - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        uint32_t bits = 0;
        if (little) {
          bits = r.u32le();
        } else {
          for (int i = 3; i >= 0; --i) bits |= uint32_t(uint8_t(buf[r.pos + i])) << (8 * (3 - i));
          r.pos += 4;
        }
        float v;
        std::memcpy(&v, &bits, 4);
        img.at(c, y, x) = v;
      }
  return img;
}

// ---- PPM (P6, 8-bit) ----

inline void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw IoError("PPM: needs 3 channels");
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        out.push_back(char(uint8_t(std::lround(v * 255.f))));
      }
  detail::write_file(path, out, "PPM");
}

inline Image read_ppm(const std::string& path) {
  std::string buf = detail::read_file(path, "PPM");
  detail::Reader r(buf, "PPM");
  if (r.bytes(2) != "P6") throw IoError("PPM: malformed magic");
  auto token = [&]() {
    std::string t;
    while (r.pos < buf.size() && std::isspace(uint8_t(buf[r.pos]))) ++r.pos;
    while (r.pos < buf.size() && !std::isspace(uint8_t(buf[r.pos]))) t.push_back(buf[r.pos++]);
    if (t.empty()) throw IoError("PPM: truncated header");
    return t;
  };
  long w, h, maxval;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw IoError("PPM: malformed header");
  }
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) throw IoError("PPM: extent overflow");
  if (maxval != 255) throw IoError("PPM: unsupported maxval");
  ++r.pos;
  Image img(3, int(h), int(w));
  r.need(size_t(w) * size_t(h) * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = float(r.u8()) / 255.f;
  return img;
}

// ---- PLY (ASCII): x y z [r g b] ----

struct PlyPoint {
  float x, y, z;
  uint8_t r = 255, g = 255, b = 255;
};

inline void write_ply(const std::string& path, const std::vector<PlyPoint>& pts,
                      bool with_color = true) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (with_color)
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  for (const auto& p : pts) {
    os << p.x << " " << p.y << " " << p.z;
    if (with_color) os << " " << int(p.r) << " " << int(p.g) << " " << int(p.b);
    os << "\n";
  }
  detail::write_file(path, os.str(), "PLY");
}

inline std::vector<PlyPoint> read_ply(const std::string& path) {
  std::string buf = detail::read_file(path, "PLY");
  std::istringstream is(buf);
  std::string line;
  if (!std::getline(is, line) || line != "ply") throw IoError("PLY: malformed magic");
  size_t count = 0;
  bool with_color = false;
  while (std::getline(is, line)) {
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
    if (line.rfind("property uchar red", 0) == 0) with_color = true;
    if (line == "end_header") break;
  }
  if (line != "end_header") throw IoError("PLY: truncated header");
  std::vector<PlyPoint> pts;
  pts.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    PlyPoint p;
    int r, g, b;
    if (!(is >> p.x >> p.y >> p.z)) throw IoError("PLY: truncated payload");
    if (with_color) {
      if (!(is >> r >> g >> b)) throw IoError("PLY: truncated payload");
      p.r = uint8_t(r);
      p.g = uint8_t(g);
      p.b = uint8_t(b);
    }
    pts.push_back(p);
  }
  return pts;
}

// ---- OBJ: v / vn / f v//vn records ----

struct ObjMesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<float, 3>> normals;
  std::vector<std::array<int, 3>> faces;  // 0-based vertex indices (shared with vn)
};

inline void write_obj(const std::string& path, const ObjMesh& mesh) {
  std::ostringstream os;
  for (const auto& v : mesh.vertices) os << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
  for (const auto& n : mesh.normals) os << "vn " << n[0] << " " << n[1] << " " << n[2] << "\n";
  for (const auto& f : mesh.faces)
    os << "f " << f[0] + 1 << "//" << f[0] + 1 << " " << f[1] + 1 << "//" << f[1] + 1
       << " " << f[2] + 1 << "//" << f[2] + 1 << "\n";
  detail::write_file(path, os.str(), "OBJ");
}

inline ObjMesh read_obj(const std::string& path) {
  std::string buf = detail::read_file(path, "OBJ");
  std::istringstream is(buf);
  ObjMesh mesh;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      std::array<float, 3> v;
      if (!(ls >> v[0] >> v[1] >> v[2])) throw IoError("OBJ: malformed vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "vn") {
      std::array<float, 3> n;
      if (!(ls >> n[0] >> n[1] >> n[2])) throw IoError("OBJ: malformed normal");
      mesh.normals.push_back(n);
    } else if (tag == "f") {
      std::array<int, 3> f;
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        if (!(ls >> tok)) throw IoError("OBJ: malformed face");
        f[i] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        if (f[i] < 0 || size_t(f[i]) >= mesh.vertices.size())
          throw IoError("OBJ: face index out of range");
      }
      mesh.faces.push_back(f);
    }
  }
  return mesh;
}

}  // namespace david
