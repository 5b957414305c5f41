#include <catch2/catch_amalgamated.hpp>

#include "david/gradcheck.hpp"
#include "david/nn.hpp"
#include "david/rng.hpp"
#include "david/tensor.hpp"

using namespace david;

namespace {

template <class T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, bool rg = true) {
  std::vector<T> d(shape_numel(s));
  for (auto& v : d) v = T(rng.normal());
  return Tensor<T>::from_data(s, std::move(d), rg);
}

// Scalar probe: loss = sum(y * R) with a fixed random R, so every output
// element contributes to the gradient.
template <class T>
Tensor<T> probe(const Tensor<T>& y, Rng& rng) {
  std::vector<T> r(y.numel());
  for (auto& v : r) v = T(rng.normal());
  return sum_all(mul(y, Tensor<T>::from_data(y.shape(), std::move(r))));
}

}  // namespace

TEST_CASE("elementwise add and mul basics") {
  auto a = Tensor<float>::from_data({2}, {1.f, 2.f});
  auto b = Tensor<float>::from_data({2}, {3.f, 4.f});
  auto c = add(a, b);
  CHECK(c.data()[0] == 4.f);
  CHECK(c.data()[1] == 6.f);

  auto x = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = mul(x, 1.0f);
  for (size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("broadcast rejects incompatible shapes naming both") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4});
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const TensorError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("grad of sum(a*b) wrt a equals b") {
  Rng rng(7);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({3, 4}, rng, /*rg=*/false);
  auto loss = sum_all(mul(a, b));
  backward(loss);
  for (size_t i = 0; i < a.numel(); ++i)
    CHECK(a.grad()[i] == Catch::Approx(b.data()[i]).margin(1e-12));
  // constant b never accumulates gradient
  CHECK(b.grad().size() == b.numel());  // allocated on access but all zero
  for (double g : b.grad()) CHECK(g == 0.0);
}

TEST_CASE("elementwise gradcheck vs central finite differences (f32)") {
  Rng rng(11);
  for (int inst = 0; inst < 3; ++inst) {
    auto a = random_tensor<float>({2, 5}, rng);
    auto b = random_tensor<float>({2, 5}, rng);
    Rng probe_rng(100 + inst);
    auto rep = gradcheck<float>(
        "elemwise",
        [&]() {
          Rng pr(100 + inst);
          auto y = add(mul(a, b), sigmoid(sub(a, b)));
          return probe(y, pr);
        },
        {a, b}, rng);
    INFO(rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("broadcast backward conserves gradient mass") {
  Rng rng(13);
  auto a = random_tensor<double>({4, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y = add(a, b);
  auto loss = sum_all(y);
  backward(loss);
  // Upstream grad of y is all ones. Each b element receives one unit per
  // broadcast row: total mass 4*3 routed, 12 into a and 12 into b.
  double mass_a = 0, mass_b = 0;
  for (double g : a.grad()) mass_a += g;
  for (double g : b.grad()) mass_b += g;
  CHECK(mass_a == Catch::Approx(12.0));
  CHECK(mass_b == Catch::Approx(12.0));
}

TEST_CASE("matmul oracle cases") {
  // identity
  auto I = Tensor<float>::from_data({2, 2}, {1, 0, 0, 1});
  auto M = Tensor<float>::from_data({2, 2}, {3, -2, 7, 0.5f});
  auto P = matmul(I, M);
  for (size_t i = 0; i < 4; ++i) CHECK(P.data()[i] == M.data()[i]);

  // hand arithmetic
  auto A = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  auto B = Tensor<float>::from_data({2, 1}, {5, 6});
  auto C = matmul(A, B);
  CHECK(C.data()[0] == 17.f);
  CHECK(C.data()[1] == 39.f);

  CHECK_THROWS_AS(matmul(A, Tensor<float>::zeros({3, 2})), TensorError);
}

TEST_CASE("matmul gradcheck 4x5 * 5x3") {
  Rng rng(17);
  for (int inst = 0; inst < 3; ++inst) {
    auto a = random_tensor<float>({4, 5}, rng);
    auto b = random_tensor<float>({5, 3}, rng);
    auto rep = gradcheck<float>(
        "matmul",
        [&]() {
          Rng pr(31 + inst);
          return probe(matmul(a, b), pr);
        },
        {a, b}, rng);
    INFO(rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("matmul gradcheck is tighter in f64") {
  Rng rng(19);
  auto a = random_tensor<double>({4, 5}, rng);
  auto b = random_tensor<double>({5, 3}, rng);
  auto rep = gradcheck<double>(
      "matmul64",
      [&]() {
        Rng pr(47);
        return probe(matmul(a, b), pr);
      },
      {a, b}, rng);
  INFO(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("backward deterministic across runs") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor<double>({6, 6}, rng);
    auto b = random_tensor<double>({6, 6}, rng);
    auto loss = sum_all(mul(matmul(a, b), sigmoid(a)));
    backward(loss);
    return a.grad();
  };
  auto g1 = run(123), g2 = run(123);
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("movement ops roundtrip gradients") {
  Rng rng(23);
  auto x = random_tensor<float>({2, 3, 4}, rng);
  auto rep = gradcheck<float>(
      "movement",
      [&]() {
        Rng pr(59);
        auto y = permute(reshape(x, {6, 4}), {1, 0});
        auto z = concat<float>({slice(y, 0, 0, 2), slice(y, 0, 2, 2)}, 0);
        return probe(z, pr);
      },
      {x}, rng);
  CHECK(rep.pass);
}

TEST_CASE("sum_axis keeps dim and routes gradient") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto s = sum_axis(x, 0);
  REQUIRE(s.shape() == Shape{1, 3});
  CHECK(s.data()[0] == 5.0);
  CHECK(s.data()[2] == 9.0);
  backward(sum_all(s));
  for (double g : x.grad()) CHECK(g == 1.0);
}
