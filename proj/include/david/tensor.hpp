#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace david {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& m) : std::runtime_error(m) {}
};

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantic handle onto a graph node. Ops are free functions that build
// new nodes; backward() walks the graph in reverse topological order.
template <class T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false) {
    return filled(s, T(0), requires_grad);
  }
  static Tensor full(const Shape& s, T v, bool requires_grad = false) {
    return filled(s, v, requires_grad);
  }
  static Tensor scalar(T v) { return filled({1}, v, false); }
  static Tensor from_data(const Shape& s, std::vector<T> data,
                          bool requires_grad = false) {
    if (shape_numel(s) != data.size())
      throw TensorError("from_data: shape " + shape_str(s) + " does not match " +
                        std::to_string(data.size()) + " elements");
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  size_t ndim() const { return n_->shape.size(); }
  size_t dim(size_t i) const { return n_->shape[i]; }
  size_t numel() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }

  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }
  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const { return n_->grad; }

  T item() const {
    if (numel() != 1) throw TensorError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  static Tensor filled(const Shape& s, T v, bool rg) {
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->value.assign(shape_numel(s), v);
    n->requires_grad = rg;
    return Tensor(n);
  }

  std::shared_ptr<Node> n_;
};

namespace detail {

// Right-aligned broadcast: dims must match or be 1. Scalars broadcast freely.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t nd = std::max(a.size(), b.size());
  Shape r(nd);
  for (size_t i = 0; i < nd; ++i) {
    size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw TensorError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                        shape_str(b) + " are not broadcast-compatible");
    r[nd - 1 - i] = std::max(da, db);
  }
  return r;
}

// Element strides for iterating `shape` as broadcast to `out`; 0 on broadcast dims.
inline std::vector<size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<size_t> natural(shape.size());
  size_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    natural[i] = acc;
    acc *= shape[i];
  }
  std::vector<size_t> s(out.size(), 0);
  for (size_t i = 0; i < shape.size(); ++i) {
    size_t oi = out.size() - shape.size() + i;
    s[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : natural[i];
  }
  return s;
}

template <class T>
std::shared_ptr<TensorNode<T>> make_node(Shape shape,
                                         std::vector<std::shared_ptr<TensorNode<T>>> parents) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value.resize(shape_numel(n->shape));
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// Elementwise binary op with broadcasting. FwdF: T(T,T); DaF/DbF: local
// derivative given (a, b, y): T(T,T,T).
template <class T, class FwdF, class DaF, class DbF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    FwdF fwd, DaF da, DbF db) {
  Shape rs = detail::broadcast_shape(a.shape(), b.shape(), name);
  auto n = detail::make_node<T>(rs, {a.node(), b.node()});

  const auto& av = a.data();
  const auto& bv = b.data();
  auto& out = n->value;
  const size_t total = out.size();

  const bool same = a.shape() == b.shape();
  if (same) {
    for (size_t i = 0; i < total; ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    auto sa = detail::broadcast_strides(a.shape(), rs);
    auto sb = detail::broadcast_strides(b.shape(), rs);
    std::vector<size_t> idx(rs.size(), 0);
    size_t oa = 0, ob = 0;
    for (size_t i = 0; i < total; ++i) {
      out[i] = fwd(av[oa], bv[ob]);
      for (size_t d = rs.size(); d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < rs[d]) break;
        idx[d] = 0;
        oa -= sa[d] * rs[d];
        ob -= sb[d] * rs[d];
      }
    }
  }

  if (n->requires_grad) {
    auto pa = a.node();
    auto pb = b.node();
    Shape rshape = rs;
    n->backward_fn = [pa, pb, da, db, rshape, same](TensorNode<T>& self) {
      const size_t total = self.value.size();
      if (same) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < total; ++i)
            pa->grad[i] += self.grad[i] * da(pa->value[i], pb->value[i], self.value[i]);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < total; ++i)
            pb->grad[i] += self.grad[i] * db(pa->value[i], pb->value[i], self.value[i]);
        }
        return;
      }
      auto sa = detail::broadcast_strides(pa->shape, rshape);
      auto sb = detail::broadcast_strides(pb->shape, rshape);
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      std::vector<size_t> idx(rshape.size(), 0);
      size_t oa = 0, ob = 0;
      for (size_t i = 0; i < total; ++i) {
        if (pa->requires_grad)
          pa->grad[oa] += self.grad[i] * da(pa->value[oa], pb->value[ob], self.value[i]);
        if (pb->requires_grad)
          pb->grad[ob] += self.grad[i] * db(pa->value[oa], pb->value[ob], self.value[i]);
        for (size_t d = rshape.size(); d-- > 0;) {
          ++idx[d];
          oa += sa[d];
          ob += sb[d];
          if (idx[d] < rshape[d]) break;
          idx[d] = 0;
          oa -= sa[d] * rshape[d];
          ob -= sb[d] * rshape[d];
        }
      }
    };
  }
  return Tensor<T>(n);
}

template <class T, class FwdF, class DxF>
Tensor<T> unary_op(const Tensor<T>& x, FwdF fwd, DxF dx) {
  auto n = detail::make_node<T>(x.shape(), {x.node()});
  const auto& xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) n->value[i] = fwd(xv[i]);
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, dx](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.value.size(); ++i)
        px->grad[i] += self.grad[i] * dx(px->value[i], self.value[i]);
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, T s) { return add(a, Tensor<T>::scalar(s)); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, T s) { return sub(a, Tensor<T>::scalar(s)); }
template <class T>
Tensor<T> sub(T s, const Tensor<T>& a) { return sub(Tensor<T>::scalar(s), a); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, T s) { return mul(a, Tensor<T>::scalar(s)); }
template <class T>
Tensor<T> divide(const Tensor<T>& a, T s) { return divide(a, Tensor<T>::scalar(s)); }

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::sqrt(v); },
                  [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::abs(v); },
                  [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(0.7071067811865475);
  const T inv_sqrt2pi = T(0.3989422804014327);
  return unary_op(
      x,
      [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T v, T) {
        T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

// Gradient passes through the un-clamped interior only.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary_op(
      x, [=](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [=](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---- movement ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& s) {
  if (shape_numel(s) != x.numel())
    throw TensorError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  auto n = detail::make_node<T>(s, {x.node()});
  n->value = x.data();
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& axes) {
  const Shape& xs = x.shape();
  if (axes.size() != xs.size()) throw TensorError("permute: axes rank mismatch");
  Shape rs(xs.size());
  for (size_t i = 0; i < axes.size(); ++i) rs[i] = xs[axes[i]];
  auto n = detail::make_node<T>(rs, {x.node()});

  std::vector<size_t> xstr(xs.size());
  {
    size_t acc = 1;
    for (size_t i = xs.size(); i-- > 0;) {
      xstr[i] = acc;
      acc *= xs[i];
    }
  }
  std::vector<size_t> pstr(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) pstr[i] = xstr[axes[i]];

  const auto& xv = x.data();
  auto& out = n->value;
  std::vector<size_t> idx(rs.size(), 0);
  size_t off = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[off];
    for (size_t d = rs.size(); d-- > 0;) {
      ++idx[d];
      off += pstr[d];
      if (idx[d] < rs[d]) break;
      idx[d] = 0;
      off -= pstr[d] * rs[d];
    }
  }
  if (n->requires_grad) {
    auto px = x.node();
    Shape rshape = rs;
    n->backward_fn = [px, pstr, rshape](TensorNode<T>& self) {
      px->ensure_grad();
      std::vector<size_t> idx(rshape.size(), 0);
      size_t off = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) {
        px->grad[off] += self.grad[i];
        for (size_t d = rshape.size(); d-- > 0;) {
          ++idx[d];
          off += pstr[d];
          if (idx[d] < rshape[d]) break;
          idx[d] = 0;
          off -= pstr[d] * rshape[d];
        }
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, size_t axis, size_t start, size_t len) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || start + len > xs[axis])
    throw TensorError("slice: out of range on axis " + std::to_string(axis) +
                      " of " + shape_str(xs));
  Shape rs = xs;
  rs[axis] = len;
  auto n = detail::make_node<T>(rs, {x.node()});

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];

  const auto& xv = x.data();
  auto& out = n->value;
  for (size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * xs[axis] + start) * inner, len * inner,
                out.data() + o * len * inner);

  if (n->requires_grad) {
    auto px = x.node();
    size_t xa = xs[axis];
    n->backward_fn = [px, outer, inner, xa, start, len](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * len * inner;
        T* pg = px->grad.data() + (o * xa + start) * inner;
        for (size_t i = 0; i < len * inner; ++i) pg[i] += g[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, size_t axis) {
  if (xs.empty()) throw TensorError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  size_t total_axis = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size()) throw TensorError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i])
        throw TensorError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    total_axis += s[axis];
  }
  Shape rs = s0;
  rs[axis] = total_axis;

  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  for (const auto& x : xs) parents.push_back(x.node());
  auto n = detail::make_node<T>(rs, parents);

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= rs[i];
  for (size_t i = axis + 1; i < rs.size(); ++i) inner *= rs[i];

  size_t off_axis = 0;
  for (const auto& x : xs) {
    size_t la = x.shape()[axis];
    const auto& xv = x.data();
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(xv.data() + o * la * inner, la * inner,
                  n->value.data() + (o * total_axis + off_axis) * inner);
    off_axis += la;
  }

  if (n->requires_grad) {
    std::vector<size_t> lens;
    for (const auto& x : xs) lens.push_back(x.shape()[axis]);
    auto ps = parents;
    n->backward_fn = [ps, lens, outer, inner, total_axis](TensorNode<T>& self) {
      size_t off_axis = 0;
      for (size_t k = 0; k < ps.size(); ++k) {
        if (ps[k]->requires_grad) {
          ps[k]->ensure_grad();
          for (size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + (o * total_axis + off_axis) * inner;
            T* pg = ps[k]->grad.data() + o * lens[k] * inner;
            for (size_t i = 0; i < lens[k] * inner; ++i) pg[i] += g[i];
          }
        }
        off_axis += lens[k];
      }
    };
  }
  return Tensor<T>(n);
}

// ---- reductions ----

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto n = detail::make_node<T>({1}, {x.node()});
  T acc = T(0);
  for (T v : x.data()) acc += v;
  n->value[0] = acc;
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px](TensorNode<T>& self) {
      px->ensure_grad();
      T g = self.grad[0];
      for (auto& pg : px->grad) pg += g;
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul(sum_all(x), T(1) / T(x.numel()));
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw TensorError("sum_axis: bad axis");
  Shape rs = xs;
  rs[axis] = 1;
  auto n = detail::make_node<T>(rs, {x.node()});

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  size_t na = xs[axis];

  const auto& xv = x.data();
  std::fill(n->value.begin(), n->value.end(), T(0));
  for (size_t o = 0; o < outer; ++o)
    for (size_t a = 0; a < na; ++a) {
      const T* src = xv.data() + (o * na + a) * inner;
      T* dst = n->value.data() + o * inner;
      for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }

  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, outer, inner, na](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t o = 0; o < outer; ++o)
        for (size_t a = 0; a < na; ++a) {
          T* dst = px->grad.data() + (o * na + a) * inner;
          const T* g = self.grad.data() + o * inner;
          for (size_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
    };
  }
  return Tensor<T>(n);
}

// ---- backward pass ----

template <class T>
void backward(const Tensor<T>& root) {
  auto r = root.node();
  if (!r->requires_grad)
    throw TensorError("backward: root does not require gradient");

  // Iterative post-order DFS; each node visited exactly once.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  struct Frame {
    TensorNode<T>* n;
    size_t next;
  };
  std::vector<Frame> stack{{r.get(), 0}};
  visited.insert(r.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode<T>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  r->ensure_grad();
  std::fill(r->grad.begin(), r->grad.end(), T(1));
  for (size_t i = order.size(); i-- > 0;) {
    TensorNode<T>* n = order[i];
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace david
