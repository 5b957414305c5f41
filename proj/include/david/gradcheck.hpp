#pragma once

#include <functional>
#include <string>
#include <vector>

#include "david/rng.hpp"
#include "david/tensor.hpp"

namespace david {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  size_t checked = 0;
  bool pass = false;
};

template <class T>
struct GradCheckOptions {
  T step = std::is_same_v<T, double> ? T(1e-5) : T(2e-2);
  // Relative-error denominator floor. Grads below the floor are held to an
  // absolute tolerance of tol*floor, which sits above the finite-difference
  // noise for the chosen step.
  T denom_floor = std::is_same_v<T, double> ? T(1e-2) : T(0.25);
  T tol = std::is_same_v<T, double> ? T(1e-6) : T(1e-3);
  size_t max_samples_per_tensor = 6;
};

// Central finite differences against the reverse-mode gradient of a scalar
// loss. `make_loss` must rebuild the graph from the current contents of
// `inputs` on every call; elements of `inputs` are perturbed in place.
// Reliable for double; for float prefer dual_gradcheck, which uses a 64-bit
// finite-difference oracle (a float-sized step straddles ReLU kinks).
template <class T>
GradCheckReport gradcheck(const std::string& name,
                          const std::function<Tensor<T>()>& make_loss,
                          std::vector<Tensor<T>> inputs, Rng& rng,
                          GradCheckOptions<T> opt = {}) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<T> loss = make_loss();
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad());

  GradCheckReport rep;
  rep.name = name;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].data();
    std::vector<size_t> idxs;
    if (vals.size() <= opt.max_samples_per_tensor) {
      idxs.resize(vals.size());
      for (size_t i = 0; i < vals.size(); ++i) idxs[i] = i;
    } else {
      for (size_t s = 0; s < opt.max_samples_per_tensor; ++s)
        idxs.push_back(size_t(rng.uniform_int(0, int64_t(vals.size()) - 1)));
    }
    for (size_t i : idxs) {
      T saved = vals[i];
      T h = opt.step * std::max(T(1), std::abs(saved));
      vals[i] = saved + h;
      T lp = make_loss().item();
      vals[i] = saved - h;
      T lm = make_loss().item();
      vals[i] = saved;
      T fd = (lp - lm) / (T(2) * h);
      T an = analytic[ti][i];
      T denom = std::max({std::abs(an), std::abs(fd), opt.denom_floor});
      double rel = double(std::abs(an - fd)) / double(denom);
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  rep.pass = rep.max_rel_err < double(opt.tol);
  return rep;
}

struct DualGradCheckReport {
  std::string name;
  GradCheckReport f64;   // analytic f64 vs f64 central differences
  GradCheckReport f32;   // analytic f32 vs the same f64 oracle
  bool pass() const { return f64.pass && f32.pass; }
};

// Check protocol: a struct with `template <class T> Built<T> make() const`
// that rebuilds the same seeded computation at either precision.
template <class T>
struct BuiltCheck {
  std::function<Tensor<T>()> loss;   // rebuilds the graph from current inputs
  std::vector<Tensor<T>> inputs;
};

// Validates both precisions of a check against one 64-bit central-difference
// oracle. The float gradient is held to 1e-3 and the double to 1e-6; element
// sampling is seeded so both precisions probe identical positions.
template <class Check>
DualGradCheckReport dual_gradcheck(const std::string& name, const Check& check,
                                   uint64_t sample_seed, size_t samples_per_tensor = 5) {
  DualGradCheckReport rep;
  rep.name = name;

  BuiltCheck<double> c64 = check.template make<double>();
  BuiltCheck<float> c32 = check.template make<float>();

  for (auto& t : c64.inputs) t.zero_grad();
  for (auto& t : c32.inputs) t.zero_grad();
  backward(c64.loss());
  backward(c32.loss());

  rep.f64.name = name + "/f64";
  rep.f32.name = name + "/f32";
  const double h_rel = 1e-5;
  for (size_t ti = 0; ti < c64.inputs.size(); ++ti) {
    auto& vals = c64.inputs[ti].data();
    Rng srng(hash_combine(sample_seed, ti));
    std::vector<size_t> idxs;
    if (vals.size() <= samples_per_tensor) {
      idxs.resize(vals.size());
      for (size_t i = 0; i < vals.size(); ++i) idxs[i] = i;
    } else {
      for (size_t s = 0; s < samples_per_tensor; ++s)
        idxs.push_back(size_t(srng.uniform_int(0, int64_t(vals.size()) - 1)));
    }
    for (size_t i : idxs) {
      double saved = vals[i];
      double h = h_rel * std::max(1.0, std::abs(saved));
      vals[i] = saved + h;
      double lp = c64.loss().item();
      vals[i] = saved - h;
      double lm = c64.loss().item();
      vals[i] = saved;
      double fd = (lp - lm) / (2 * h);

      double an64 = c64.inputs[ti].grad()[i];
      double rel64 = std::abs(an64 - fd) / std::max({std::abs(an64), std::abs(fd), 1e-2});
      rep.f64.max_rel_err = std::max(rep.f64.max_rel_err, rel64);
      ++rep.f64.checked;

      double an32 = double(c32.inputs[ti].grad()[i]);
      double rel32 = std::abs(an32 - fd) / std::max({std::abs(an32), std::abs(fd), 5e-2});
      rep.f32.max_rel_err = std::max(rep.f32.max_rel_err, rel32);
      ++rep.f32.checked;
    }
  }
  rep.f64.pass = rep.f64.max_rel_err < 1e-6;
  rep.f32.pass = rep.f32.max_rel_err < 1e-3;
  return rep;
}

}  // namespace david
