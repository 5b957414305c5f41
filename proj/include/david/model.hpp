#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include "david/image.hpp"
#include "david/io.hpp"
#include "david/nn.hpp"
#include "david/rng.hpp"

namespace david {

struct ModelError : std::runtime_error {
  explicit ModelError(const std::string& m) : std::runtime_error(m) {}
};

enum class Task { Depth, Normals, Alpha, Multi };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Depth: return "depth";
    case Task::Normals: return "normals";
    case Task::Alpha: return "alpha";
    default: return "multi";
  }
}

inline Task task_from_name(const std::string& s) {
  if (s == "depth") return Task::Depth;
  if (s == "normals") return Task::Normals;
  if (s == "alpha") return Task::Alpha;
  if (s == "multi") return Task::Multi;
  throw ModelError("unknown task '" + s + "'");
}

struct ModelConfig {
  int encoder_input = 64;   // square ViT input; 384 at paper scale
  int patch_size = 8;       // 16 at paper scale
  int embed_dim = 48;
  int depth = 4;            // transformer layers
  int heads = 4;
  std::array<int, 4> tap_layers = {1, 2, 3, 4};  // 1-based, last == depth
  int read_hidden = 48;
  int decoder_channels = 12;
  std::array<int, 4> resizer_channels = {6, 8, 12, 16};  // strides 2,4,8,16
  int head_mid_channels = 8;
  int mlp_ratio = 4;
  Task task = Task::Multi;

  int token_grid() const { return encoder_input / patch_size; }
  int tokens() const { return token_grid() * token_grid(); }

  void validate() const {
    if (encoder_input % patch_size != 0)
      throw ModelError("ModelConfig: encoder_input must be divisible by patch_size");
    if (embed_dim % heads != 0)
      throw ModelError("ModelConfig: embed_dim must be divisible by heads");
    for (int i = 1; i < 4; ++i)
      if (tap_layers[i] <= tap_layers[i - 1])
        throw ModelError("ModelConfig: tap_layers must be strictly increasing");
    if (tap_layers[3] != depth)
      throw ModelError("ModelConfig: last tap layer must equal encoder depth");
    if (tap_layers[0] < 1) throw ModelError("ModelConfig: tap layers are 1-based");
  }

  static ModelConfig paper_default(Task t = Task::Multi) {
    ModelConfig c;
    c.encoder_input = 384;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.depth = 12;
    c.heads = 12;
    c.tap_layers = {3, 6, 9, 12};
    c.read_hidden = 768;
    c.decoder_channels = 256;
    c.resizer_channels = {32, 64, 128, 256};
    c.head_mid_channels = 128;
    c.task = t;
    return c;
  }
};

inline int head_out_channels(Task t) {
  switch (t) {
    case Task::Depth: return 1;
    case Task::Normals: return 3;
    case Task::Alpha: return 1;
    default: throw ModelError("head_out_channels: MULTI has one head per task");
  }
}

// ---- canonical weight manifest ----

inline std::vector<std::pair<std::string, Shape>> weight_manifest(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> m;
  size_t D = size_t(cfg.embed_dim);
  size_t P = size_t(cfg.patch_size);
  size_t S = size_t(cfg.token_grid());
  size_t dec = size_t(cfg.decoder_channels);
  size_t H = size_t(cfg.read_hidden);
  size_t mlp = D * size_t(cfg.mlp_ratio);

  m.push_back({"enc.patch.weight", {D, 3, P, P}});
  m.push_back({"enc.patch.bias", {D}});
  m.push_back({"enc.cls", {1, D}});
  m.push_back({"enc.pos", {S * S + 1, D}});
  for (int i = 0; i < cfg.depth; ++i) {
    std::string b = "enc.block" + std::to_string(i) + ".";
    m.push_back({b + "ln1.gamma", {D}});
    m.push_back({b + "ln1.beta", {D}});
    m.push_back({b + "attn.qkv.weight", {3 * D, D}});
    m.push_back({b + "attn.qkv.bias", {3 * D}});
    m.push_back({b + "attn.proj.weight", {D, D}});
    m.push_back({b + "attn.proj.bias", {D}});
    m.push_back({b + "ln2.gamma", {D}});
    m.push_back({b + "ln2.beta", {D}});
    m.push_back({b + "mlp.fc1.weight", {mlp, D}});
    m.push_back({b + "mlp.fc1.bias", {mlp}});
    m.push_back({b + "mlp.fc2.weight", {D, mlp}});
    m.push_back({b + "mlp.fc2.bias", {D}});
  }
  for (int t = 0; t < 4; ++t) {
    std::string r = "read" + std::to_string(t) + ".";
    m.push_back({r + "fc1.weight", {H, 2 * D}});
    m.push_back({r + "fc1.bias", {H}});
    m.push_back({r + "fc2.weight", {dec, H}});
    m.push_back({r + "fc2.bias", {dec}});
  }
  size_t prev = 3;
  for (int s = 0; s < 4; ++s) {
    std::string r = "resizer" + std::to_string(s) + ".";
    size_t rc = size_t(cfg.resizer_channels[s]);
    m.push_back({r + "weight", {rc, prev, 3, 3}});
    m.push_back({r + "bias", {rc}});
    prev = rc;
  }
  for (int l = 1; l <= 4; ++l) {
    std::string d = "dec" + std::to_string(l) + ".";
    for (const char* unit : {"erc", "drc"}) {
      m.push_back({d + unit + ".c1.weight", {dec, dec, 3, 3}});
      m.push_back({d + unit + ".c1.bias", {dec}});
      m.push_back({d + unit + ".c2.weight", {dec, dec, 3, 3}});
      m.push_back({d + unit + ".c2.bias", {dec}});
    }
    size_t rc = size_t(cfg.resizer_channels[l - 1]);
    m.push_back({d + "fuse.weight", {dec, rc + dec, 3, 3}});
    m.push_back({d + "fuse.bias", {dec}});
  }
  auto add_head = [&](Task t) {
    std::string h = std::string("head.") + task_name(t) + ".";
    size_t mid = size_t(cfg.head_mid_channels);
    m.push_back({h + "c1.weight", {mid, dec, 3, 3}});
    m.push_back({h + "c1.bias", {mid}});
    m.push_back({h + "c2.weight", {size_t(head_out_channels(t)), mid, 3, 3}});
    m.push_back({h + "c2.bias", {size_t(head_out_channels(t))}});
  };
  if (cfg.task == Task::Multi) {
    add_head(Task::Depth);
    add_head(Task::Normals);
    add_head(Task::Alpha);
  } else {
    add_head(cfg.task);
  }
  return m;
}

inline size_t parameter_count(const ModelConfig& cfg) {
  size_t total = 0;
  for (const auto& [name, shape] : weight_manifest(cfg)) total += shape_numel(shape);
  return total;
}

template <class T>
using ModelWeights = std::map<std::string, Tensor<T>>;

namespace detail {

inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= uint64_t(uint8_t(c));
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, uint64_t seed) {
  ModelWeights<T> w;
  for (const auto& [name, shape] : weight_manifest(cfg)) {
    Rng rng(hash_combine(seed, detail::name_hash(name)));
    std::vector<T> data(shape_numel(shape), T(0));
    bool is_bias = name.ends_with(".bias") || name.ends_with(".beta");
    bool is_gamma = name.ends_with(".gamma");
    bool is_conv = shape.size() == 4;
    if (is_gamma) {
      std::fill(data.begin(), data.end(), T(1));
    } else if (!is_bias) {
      if (is_conv) {
        size_t fan_in = shape[1] * shape[2] * shape[3];
        double std = std::sqrt(2.0 / double(fan_in));
        for (auto& v : data) v = T(rng.normal(0.0, std));
      } else {
        for (auto& v : data) {
          double x;
          do x = rng.normal(0.0, 0.02);
          while (std::abs(x) > 0.04);  // truncated at 2 sigma
          v = T(x);
        }
      }
    }
    w.emplace(name, Tensor<T>::from_data(shape, std::move(data), /*requires_grad=*/true));
  }
  return w;
}

template <class T>
void validate_weights(const ModelConfig& cfg, const ModelWeights<T>& w) {
  auto manifest = weight_manifest(cfg);
  if (w.size() != manifest.size())
    throw ModelError("weights: expected " + std::to_string(manifest.size()) +
                     " tensors, got " + std::to_string(w.size()));
  for (const auto& [name, shape] : manifest) {
    auto it = w.find(name);
    if (it == w.end()) throw ModelError("weights: missing tensor '" + name + "'");
    if (it->second.shape() != shape)
      throw ModelError("weights: tensor '" + name + "' has shape " +
                       shape_str(it->second.shape()) + ", expected " + shape_str(shape));
  }
}

// ---- image/tensor bridges ----

template <class T>
Tensor<T> image_to_tensor(const Image& img, bool requires_grad = false) {
  std::vector<T> data(img.data.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = T(img.data[i]);
  return Tensor<T>::from_data({1, size_t(img.channels), size_t(img.height), size_t(img.width)},
                              std::move(data), requires_grad);
}

template <class T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.ndim() != 4 || t.dim(0) != 1) throw ModelError("tensor_to_image: expects [1,C,H,W]");
  Image img(int(t.dim(1)), int(t.dim(2)), int(t.dim(3)));
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(t.data()[i]);
  return img;
}

// ---- forward pieces ----

template <class T>
struct EncoderFeatures {
  std::array<Tensor<T>, 4> taps;  // each [1, decoder_channels, S, S]
};

template <class T>
struct ResizerFeatures {
  std::array<Tensor<T>, 4> levels;  // r^1..r^4 at input / 2,4,8,16
};

namespace detail {

template <class T>
const Tensor<T>& P(const ModelWeights<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw ModelError("weights: missing tensor '" + name + "'");
  return it->second;
}

}  // namespace detail

// Read projection of Eq-style CLS readout: every visual token is concatenated
// with the layer's CLS state and mapped by a 2-layer MLP to decoder channels.
template <class T>
Tensor<T> read_projection(const Tensor<T>& tokens, const Tensor<T>& cls_state,
                          const ModelConfig& cfg, const ModelWeights<T>& w, int tap_index) {
  using detail::P;
  size_t n = tokens.dim(0);
  Tensor<T> ones = Tensor<T>::full({n, 1}, T(1));
  Tensor<T> cls_rows = mul(ones, cls_state);  // broadcast [n, D]
  Tensor<T> cat = concat<T>({cls_rows, tokens}, 1);  // CLS first
  std::string r = "read" + std::to_string(tap_index) + ".";
  Tensor<T> h = gelu(linear(cat, P(w, r + "fc1.weight"), P(w, r + "fc1.bias")));
  Tensor<T> e = linear(h, P(w, r + "fc2.weight"), P(w, r + "fc2.bias"));  // [n, dec]
  size_t S = size_t(cfg.token_grid());
  return reshape(permute(reshape(e, {S, S, size_t(cfg.decoder_channels)}), {2, 0, 1}),
                 {1, size_t(cfg.decoder_channels), S, S});
}

// ViT encoder on the fixed-size resampled input; emits the per-tap grids.
template <class T>
EncoderFeatures<T> encode(const Image& padded_square, const ModelConfig& cfg,
                          const ModelWeights<T>& w) {
  using detail::P;
  cfg.validate();
  Image resampled = (padded_square.height == cfg.encoder_input &&
                     padded_square.width == cfg.encoder_input)
                        ? padded_square
                        : resize_bilinear(padded_square, cfg.encoder_input, cfg.encoder_input);
  Tensor<T> x4 = image_to_tensor<T>(resampled);

  Tensor<T> grid = conv2d(x4, P(w, "enc.patch.weight"), P(w, "enc.patch.bias"),
                          size_t(cfg.patch_size), 0);  // [1, D, S, S]
  size_t S = size_t(cfg.token_grid());
  size_t D = size_t(cfg.embed_dim);
  Tensor<T> tokens = reshape(permute(reshape(grid, {D, S, S}), {1, 2, 0}), {S * S, D});
  Tensor<T> x = concat<T>({P(w, "enc.cls"), tokens}, 0);  // [S*S+1, D]
  x = add(x, P(w, "enc.pos"));

  EncoderFeatures<T> feats;
  int next_tap = 0;
  for (int layer = 1; layer <= cfg.depth; ++layer) {
    std::string b = "enc.block" + std::to_string(layer - 1) + ".";
    Tensor<T> h = layernorm(x, P(w, b + "ln1.gamma"), P(w, b + "ln1.beta"));
    Tensor<T> a = multihead_attention(h, P(w, b + "attn.qkv.weight"), P(w, b + "attn.qkv.bias"),
                                      P(w, b + "attn.proj.weight"), P(w, b + "attn.proj.bias"),
                                      size_t(cfg.heads));
    x = add(x, a);
    Tensor<T> h2 = layernorm(x, P(w, b + "ln2.gamma"), P(w, b + "ln2.beta"));
    Tensor<T> m = linear(gelu(linear(h2, P(w, b + "mlp.fc1.weight"), P(w, b + "mlp.fc1.bias"))),
                         P(w, b + "mlp.fc2.weight"), P(w, b + "mlp.fc2.bias"));
    x = add(x, m);

    if (next_tap < 4 && cfg.tap_layers[next_tap] == layer) {
      Tensor<T> cls_state = slice(x, 0, 0, 1);
      Tensor<T> vis = slice(x, 0, 1, S * S);
      feats.taps[next_tap] = read_projection(vis, cls_state, cfg, w, next_tap);
      ++next_tap;
    }
  }
  return feats;
}

// Four chained stride-2 conv stages on the full-resolution padded input.
template <class T>
ResizerFeatures<T> resize_features(const Image& padded_square, const ModelConfig& cfg,
                                   const ModelWeights<T>& w) {
  using detail::P;
  if (padded_square.height < 16 || padded_square.width < 16)
    throw ModelError("resize_features: input smaller than 16 px");
  ResizerFeatures<T> out;
  Tensor<T> x = image_to_tensor<T>(padded_square);
  for (int s = 0; s < 4; ++s) {
    std::string r = "resizer" + std::to_string(s) + ".";
    x = relu(conv2d(x, P(w, r + "weight"), P(w, r + "bias"), 2, 1));
    out.levels[s] = x;
  }
  return out;
}

namespace detail {

// residual conv unit: x + c2(relu(c1(relu(x))))
template <class T>
Tensor<T> rconv(const Tensor<T>& x, const ModelWeights<T>& w, const std::string& prefix) {
  Tensor<T> h = relu(x);
  h = conv2d(h, P(w, prefix + ".c1.weight"), P(w, prefix + ".c1.bias"), 1, 1);
  h = relu(h);
  h = conv2d(h, P(w, prefix + ".c2.weight"), P(w, prefix + ".c2.bias"), 1, 1);
  return add(x, h);
}

}  // namespace detail

// One fusion block: d_int = RConv(d_prev + Interp(RConv(e))); output
// Conv([r, Interp(d_int)]) at r's resolution.
template <class T>
Tensor<T> decode_block(const Tensor<T>& d_prev, const Tensor<T>& e, const Tensor<T>& r,
                       const ModelWeights<T>& w, int level) {
  using detail::P;
  std::string d = "dec" + std::to_string(level) + ".";
  Tensor<T> ep = detail::rconv(e, w, d + "erc");
  Tensor<T> ei = interpolate_bilinear(ep, d_prev.dim(2), d_prev.dim(3));
  Tensor<T> d_int = detail::rconv(add(d_prev, ei), w, d + "drc");
  Tensor<T> up = interpolate_bilinear(d_int, r.dim(2), r.dim(3));
  Tensor<T> fused = concat<T>({r, up}, 1);
  return relu(conv2d(fused, P(w, d + "fuse.weight"), P(w, d + "fuse.bias"), 1, 1));
}

// Deep-to-shallow fusion; the deepest block's previous-decoder input is a
// zero tensor at half the deepest resizer resolution.
template <class T>
Tensor<T> decode(const EncoderFeatures<T>& enc, const ResizerFeatures<T>& res,
                 const ModelConfig& cfg, const ModelWeights<T>& w) {
  size_t h4 = res.levels[3].dim(2), w4 = res.levels[3].dim(3);
  Tensor<T> d = Tensor<T>::zeros({1, size_t(cfg.decoder_channels),
                                  std::max<size_t>(1, h4 / 2), std::max<size_t>(1, w4 / 2)});
  for (int level = 4; level >= 1; --level)
    d = decode_block(d, enc.taps[level - 1], res.levels[level - 1], w, level);
  return d;  // at input/2 resolution
}

// conv -> 2x bilinear upsample -> conv -> task activation
template <class T>
Tensor<T> head(const Tensor<T>& d, Task task, const ModelWeights<T>& w) {
  using detail::P;
  if (task == Task::Multi) throw ModelError("head: MULTI resolves to per-task heads");
  std::string h = std::string("head.") + task_name(task) + ".";
  Tensor<T> x = relu(conv2d(d, P(w, h + "c1.weight"), P(w, h + "c1.bias"), 1, 1));
  x = interpolate_bilinear(x, d.dim(2) * 2, d.dim(3) * 2);
  x = conv2d(x, P(w, h + "c2.weight"), P(w, h + "c2.bias"), 1, 1);
  switch (task) {
    case Task::Alpha:
    case Task::Depth:
      return sigmoid(x);
    case Task::Normals: {
      Tensor<T> n2 = sum_axis(square(x), 1);  // [1,1,H,W]
      Tensor<T> inv = divide(Tensor<T>::scalar(T(1)),
                             sqrt(clamp(n2, T(1e-12), T(1e30))));
      return mul(x, inv);
    }
    default:
      throw ModelError("head: unknown task");
  }
}

template <class T>
struct TaskPrediction {
  std::optional<Tensor<T>> depth;    // [1,1,H,W] in [0,1]
  std::optional<Tensor<T>> normals;  // [1,3,H,W] unit
  std::optional<Tensor<T>> alpha;    // [1,1,H,W] in [0,1]
};

inline int forward_pad_target(int h, int w) {
  int m = std::max({h, w, 32});
  return (m + 31) / 32 * 32;
}

// pad -> encode(resampled) + resize(full) -> decode -> head(s) -> crop back.
template <class T>
TaskPrediction<T> forward(const Image& rgb, const ModelConfig& cfg, const ModelWeights<T>& w) {
  if (rgb.height < 32 || rgb.width < 32)
    throw ModelError("forward: input extents must be at least 32 px");
  PadRecord rec;
  Image padded = pad_replicate_to_square(rgb, forward_pad_target(rgb.height, rgb.width), &rec);
  EncoderFeatures<T> enc_feats = encode(padded, cfg, w);
  ResizerFeatures<T> res_feats = resize_features(padded, cfg, w);
  Tensor<T> d = decode(enc_feats, res_feats, cfg, w);

  auto crop = [&](Tensor<T> t) {
    return crop2d(t, size_t(rec.top), size_t(rec.left), size_t(rec.orig_height),
                  size_t(rec.orig_width));
  };
  TaskPrediction<T> out;
  if (cfg.task == Task::Multi || cfg.task == Task::Depth)
    out.depth = crop(head(d, Task::Depth, w));
  if (cfg.task == Task::Multi || cfg.task == Task::Normals)
    out.normals = crop(head(d, Task::Normals, w));
  if (cfg.task == Task::Multi || cfg.task == Task::Alpha)
    out.alpha = crop(head(d, Task::Alpha, w));
  return out;
}

// ---- analytic MAC audit (multiplies only, conv/linear/attention terms) ----

struct MacReport {
  size_t encoder = 0;  // patch embed + transformer + read projections
  size_t resizer = 0;
  size_t decoder = 0;
  size_t heads = 0;
  size_t total() const { return encoder + resizer + decoder + heads; }
};

inline MacReport estimate_macs(const ModelConfig& cfg, int input_h, int input_w) {
  cfg.validate();
  MacReport r;
  size_t S = size_t(cfg.token_grid());
  size_t D = size_t(cfg.embed_dim);
  size_t Tk = S * S + 1;
  size_t mlp = D * size_t(cfg.mlp_ratio);
  size_t dec = size_t(cfg.decoder_channels);
  size_t H = size_t(cfg.read_hidden);

  // the ViT consumes the fixed-size resample: no dependence on input_h/w
  r.encoder += S * S * D * 3 * size_t(cfg.patch_size) * cfg.patch_size;
  size_t per_layer = Tk * D * 3 * D        // qkv
                     + 2 * Tk * Tk * D     // scores and apply
                     + Tk * D * D          // out projection
                     + 2 * Tk * D * mlp;   // mlp
  r.encoder += size_t(cfg.depth) * per_layer;
  r.encoder += 4 * (S * S) * (2 * D * H + H * dec);  // read projections

  int F = forward_pad_target(input_h, input_w);
  size_t prev = 3;
  for (int s = 0; s < 4; ++s) {
    size_t ext = size_t(F) >> (s + 1);
    size_t rc = size_t(cfg.resizer_channels[s]);
    r.resizer += ext * ext * rc * prev * 9;
    prev = rc;
  }
  for (int level = 4; level >= 1; --level) {
    size_t e_ext = S;
    size_t dprev_ext = size_t(F) >> (level + 1);
    size_t out_ext = size_t(F) >> level;
    size_t rc = size_t(cfg.resizer_channels[level - 1]);
    r.decoder += 2 * e_ext * e_ext * dec * dec * 9;        // RConv on e
    r.decoder += 2 * dprev_ext * dprev_ext * dec * dec * 9;  // RConv on fused d
    r.decoder += out_ext * out_ext * dec * (rc + dec) * 9;   // fuse conv
  }
  size_t half = size_t(F) / 2;
  size_t mid = size_t(cfg.head_mid_channels);
  int n_heads = cfg.task == Task::Multi ? 3 : 1;
  auto head_cost = [&](Task t) {
    return half * half * mid * dec * 9 +
           size_t(F) * F * size_t(head_out_channels(t)) * mid * 9;
  };
  if (cfg.task == Task::Multi)
    r.heads = head_cost(Task::Depth) + head_cost(Task::Normals) + head_cost(Task::Alpha);
  else
    r.heads = head_cost(cfg.task);
  (void)n_heads;
  return r;
}

// ---- checkpoint helpers ----

template <class T>
void save_weights(const std::string& path, const ModelWeights<T>& w) {
  write_dvck(path, w);
}

template <class T>
ModelWeights<T> load_weights(const std::string& path, const ModelConfig& cfg,
                             bool trainable = false) {
  ModelWeights<T> w = read_dvck<T>(path);
  if (trainable)
    for (auto& [name, t] : w) t.node()->requires_grad = true;
  validate_weights(cfg, w);
  return w;
}

}  // namespace david
