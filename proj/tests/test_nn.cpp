#include <catch2/catch_amalgamated.hpp>

#include "david/gradcheck.hpp"
#include "david/nn.hpp"
#include "david/rng.hpp"

using namespace david;

namespace {

template <class T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, bool rg = true) {
  std::vector<T> d(shape_numel(s));
  for (auto& v : d) v = T(rng.normal());
  return Tensor<T>::from_data(s, std::move(d), rg);
}

template <class T>
Tensor<T> probe(const Tensor<T>& y, uint64_t seed) {
  Rng pr(seed);
  std::vector<T> r(y.numel());
  for (auto& v : r) v = T(pr.normal());
  return sum_all(mul(y, Tensor<T>::from_data(y.shape(), std::move(r))));
}

// Scalar reference for bilinear resize with half-pixel centers.
double bilinear_ref(const std::vector<double>& src, size_t h, size_t w, size_t oh,
                    size_t ow, size_t oy, size_t ox) {
  auto sample = [&](ptrdiff_t y, ptrdiff_t x) {
    y = std::clamp<ptrdiff_t>(y, 0, ptrdiff_t(h) - 1);
    x = std::clamp<ptrdiff_t>(x, 0, ptrdiff_t(w) - 1);
    return src[size_t(y) * w + size_t(x)];
  };
  double sy = (oy + 0.5) * double(h) / double(oh) - 0.5;
  double sx = (ox + 0.5) * double(w) / double(ow) - 0.5;
  double fy = std::floor(sy), fx = std::floor(sx);
  double wy = sy - fy, wx = sx - fx;
  ptrdiff_t y0 = ptrdiff_t(fy), x0 = ptrdiff_t(fx);
  double top = sample(y0, x0) * (1 - wx) + sample(y0, x0 + 1) * wx;
  double bot = sample(y0 + 1, x0) * (1 - wx) + sample(y0 + 1, x0 + 1) * wx;
  return top * (1 - wy) + bot * wy;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel") {
  Rng rng(3);
  auto x = random_tensor<float>({1, 1, 4, 4}, rng, false);
  auto w = Tensor<float>::from_data({1, 1, 1, 1}, {1.f});
  auto y = conv2d(x, w, Tensor<float>(), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  for (size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 5x5, pad 1") {
  auto x = Tensor<float>::full({1, 1, 5, 5}, 1.f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.f);
  auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 5, 5});
  // direct-summation oracle: interior counts 9 taps, corner 4
  CHECK(y.data()[2 * 5 + 2] == 9.f);
  CHECK(y.data()[0] == 4.f);
  CHECK(y.data()[4] == 4.f);
  CHECK(y.data()[1] == 6.f);
}

TEST_CASE("conv2d stride-2 shape arithmetic") {
  auto x = Tensor<float>::zeros({1, 2, 8, 8});
  auto w = Tensor<float>::zeros({3, 2, 3, 3});
  auto y = conv2d(x, w, Tensor<float>(), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(Tensor<float>::zeros({1, 1, 2, 2}),
                         Tensor<float>::zeros({1, 1, 5, 5}), Tensor<float>(), 1, 0),
                  TensorError);
}

TEST_CASE("conv2d gradcheck") {
  Rng rng(29);
  auto x = random_tensor<float>({1, 2, 5, 5}, rng);
  auto w = random_tensor<float>({3, 2, 3, 3}, rng);
  auto b = random_tensor<float>({3}, rng);
  auto rep = gradcheck<float>(
      "conv2d",
      [&]() { return probe(conv2d(x, w, b, 2, 1), 77); },
      {x, w, b}, rng);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("softmax symmetric case and rows sum to one") {
  auto x = Tensor<float>::from_data({3}, {0.f, 0.f, 0.f});
  auto y = softmax(x);
  for (float v : y.data()) CHECK(v == Catch::Approx(1.f / 3.f));

  Rng rng(31);
  auto z = random_tensor<float>({5, 7}, rng, false);
  auto s = softmax(z);
  for (size_t r = 0; r < 5; ++r) {
    float sum = 0;
    for (size_t i = 0; i < 7; ++i) sum += s.data()[r * 7 + i];
    CHECK(sum == Catch::Approx(1.f).margin(1e-6));
  }
}

TEST_CASE("layernorm of constant vector is zero before affine") {
  auto x = Tensor<float>::full({4}, 3.25f);
  auto g = Tensor<float>::full({4}, 1.f);
  auto b = Tensor<float>::zeros({4});
  auto y = layernorm(x, g, b);
  for (float v : y.data()) CHECK(v == Catch::Approx(0.f).margin(1e-6));
}

TEST_CASE("layernorm output statistics") {
  Rng rng(37);
  auto x = random_tensor<float>({6, 16}, rng, false);
  auto g = Tensor<float>::full({16}, 1.f);
  auto b = Tensor<float>::zeros({16});
  auto y = layernorm(x, g, b);
  for (size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (size_t i = 0; i < 16; ++i) mean += y.data()[r * 16 + i];
    mean /= 16;
    for (size_t i = 0; i < 16; ++i) {
      double d = y.data()[r * 16 + i] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("layernorm and softmax gradcheck") {
  Rng rng(41);
  auto x = random_tensor<double>({3, 8}, rng);
  auto g = random_tensor<double>({8}, rng);
  auto b = random_tensor<double>({8}, rng);
  auto rep = gradcheck<double>(
      "layernorm",
      [&]() { return probe(layernorm(x, g, b), 91); }, {x, g, b}, rng);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);

  auto rep2 = gradcheck<double>(
      "softmax", [&]() { return probe(softmax(x), 92); }, {x}, rng);
  CHECK(rep2.pass);
}

TEST_CASE("attention requires divisible embed dim") {
  Rng rng(43);
  auto x = random_tensor<float>({2, 6}, rng);
  auto wqkv = random_tensor<float>({18, 6}, rng);
  auto bqkv = random_tensor<float>({18}, rng);
  auto wp = random_tensor<float>({6, 6}, rng);
  auto bp = random_tensor<float>({6}, rng);
  CHECK_THROWS_AS(multihead_attention(x, wqkv, bqkv, wp, bp, 4), TensorError);
  CHECK_NOTHROW(multihead_attention(x, wqkv, bqkv, wp, bp, 2));
}

TEST_CASE("attention gradcheck: 1 head, 2 tokens, dim 4") {
  Rng rng(47);
  auto x = random_tensor<float>({2, 4}, rng);
  auto wqkv = random_tensor<float>({12, 4}, rng);
  auto bqkv = random_tensor<float>({12}, rng);
  auto wp = random_tensor<float>({4, 4}, rng);
  auto bp = random_tensor<float>({4}, rng);
  auto rep = gradcheck<float>(
      "attention",
      [&]() { return probe(multihead_attention(x, wqkv, bqkv, wp, bp, 1), 93); },
      {x, wqkv, bqkv, wp, bp}, rng);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("interpolate constant and identity") {
  auto one = Tensor<float>::full({1, 1, 1, 1}, 2.5f);
  auto up = interpolate_bilinear(one, 4, 4);
  for (float v : up.data()) CHECK(v == 2.5f);

  Rng rng(53);
  auto x = random_tensor<float>({1, 2, 5, 7}, rng, false);
  auto same = interpolate_bilinear(x, 5, 7);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);
}

TEST_CASE("interpolate 2x2 to 4x4 matches scalar reference") {
  std::vector<double> src = {0, 1, 2, 3};
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, src);
  auto y = interpolate_bilinear(x, 4, 4);
  for (size_t oy = 0; oy < 4; ++oy)
    for (size_t ox = 0; ox < 4; ++ox) {
      double want = bilinear_ref(src, 2, 2, 4, 4, oy, ox);
      CHECK(y.data()[oy * 4 + ox] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("interpolate gradcheck both directions") {
  Rng rng(59);
  auto x = random_tensor<double>({1, 1, 3, 4}, rng);
  auto rep_up = gradcheck<double>(
      "interp_up", [&]() { return probe(interpolate_bilinear(x, 6, 8), 94); }, {x}, rng);
  CHECK(rep_up.pass);
  auto rep_dn = gradcheck<double>(
      "interp_down", [&]() { return probe(interpolate_bilinear(x, 2, 2), 95); }, {x}, rng);
  CHECK(rep_dn.pass);
}

TEST_CASE("pads, crops and decimation gradcheck") {
  Rng rng(61);
  auto x = random_tensor<double>({1, 2, 4, 5}, rng);
  auto rep = gradcheck<double>(
      "spatial",
      [&]() {
        auto y = replicate_pad2d(x, 1, 2, 1, 0);
        auto z = crop2d(y, 0, 1, 4, 4);
        return probe(decimate2d(z, 2), 96);
      },
      {x}, rng);
  CHECK(rep.pass);
}

TEST_CASE("gelu matches erf formula and gradchecks") {
  auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0}, true);
  auto y = gelu(x);
  CHECK(y.data()[0] == Catch::Approx(-1.0 * 0.5 * (1 + std::erf(-1 / std::sqrt(2.0)))));
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == Catch::Approx(2.0 * 0.5 * (1 + std::erf(2 / std::sqrt(2.0)))));

  Rng rng(67);
  auto rep = gradcheck<double>(
      "gelu", [&]() { return probe(gelu(x), 97); }, {x}, rng);
  CHECK(rep.pass);
}
