#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "david/image.hpp"
#include "david/io.hpp"
#include "david/rng.hpp"

using namespace david;
namespace fs = std::filesystem;

namespace {

Image random_image(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(c, h, w);
  for (auto& v : img.data) v = float(rng.uniform());
  return img;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("david_test_" + std::to_string(::getpid()) +
                                        "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
  static int& counter() { static int c = 0; return c; }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("pad_replicate_to_square centers and replicates") {
  // 384x512 -> 512x512 with 64-pixel bands left and right
  Image img(1, 512, 384);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 384; ++x) img.at(0, y, x) = float(x);
  PadRecord rec;
  Image padded = pad_replicate_to_square(img, 512, &rec);
  CHECK(rec.left == 64);
  CHECK(rec.top == 0);
  CHECK(padded.width == 512);
  CHECK(padded.height == 512);
  CHECK(padded.at(0, 100, 0) == 0.f);           // replicated left edge
  CHECK(padded.at(0, 100, 63) == 0.f);
  CHECK(padded.at(0, 100, 64) == 0.f);          // first content column
  CHECK(padded.at(0, 100, 65) == 1.f);
  CHECK(padded.at(0, 100, 511) == 383.f);       // replicated right edge

  Image cropped = crop_by_pad_record(padded, rec);
  REQUIRE(cropped.width == 384);
  bool all_equal = true;
  for (size_t i = 0; i < img.data.size(); ++i)
    all_equal = all_equal && cropped.data[i] == img.data[i];
  CHECK(all_equal);
}

TEST_CASE("pad_replicate identity on square input") {
  Image img = random_image(3, 8, 8, 5);
  PadRecord rec;
  Image padded = pad_replicate_to_square(img, 8, &rec);
  CHECK(rec.empty());
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(padded.data[i] == img.data[i]);
  CHECK_THROWS_AS(pad_replicate_to_square(img, 4, nullptr), ImageError);
}

TEST_CASE("pad_replicate 1x3 row to 3x3") {
  Image img(1, 1, 3);
  img.at(0, 0, 0) = 1;
  img.at(0, 0, 1) = 2;
  img.at(0, 0, 2) = 3;
  Image p = pad_replicate_to_square(img, 3, nullptr);
  for (int y = 0; y < 3; ++y) {
    CHECK(p.at(0, y, 0) == 1);
    CHECK(p.at(0, y, 1) == 2);
    CHECK(p.at(0, y, 2) == 3);
  }
}

TEST_CASE("laplacian pyramid of constant image has zero residuals") {
  Image img(1, 16, 16, 0.7f);
  auto pyr = build_laplacian_pyramid(img, 3);
  REQUIRE(pyr.levels.size() == 3);
  for (size_t l = 0; l + 1 < pyr.levels.size(); ++l)
    for (float v : pyr.levels[l].data) CHECK(std::abs(v) < 1e-6f);
  for (float v : pyr.levels.back().data) CHECK(v == Catch::Approx(0.7f).margin(1e-6));
}

TEST_CASE("laplacian pyramid reconstruction round-trip") {
  Image img = random_image(1, 24, 17, 11);
  auto pyr = build_laplacian_pyramid(img, 4);
  Image rec = reconstruct_laplacian_pyramid(pyr);
  REQUIRE(rec.height == img.height);
  REQUIRE(rec.width == img.width);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(rec.data[i] - img.data[i]) < 1e-5f);
}

TEST_CASE("pyramid self-distance is zero and level limit enforced") {
  Image img = random_image(1, 8, 8, 13);
  auto a = build_laplacian_pyramid(img, 3);
  auto b = build_laplacian_pyramid(img, 3);
  double dist = 0;
  for (size_t l = 0; l < a.levels.size(); ++l)
    for (size_t i = 0; i < a.levels[l].data.size(); ++i)
      dist += std::abs(a.levels[l].data[i] - b.levels[l].data[i]);
  CHECK(dist == 0.0);
  CHECK_THROWS_AS(build_laplacian_pyramid(Image(1, 4, 4), 8), ImageError);
}

TEST_CASE("DVT round-trip is bit-identical") {
  TempDir tmp;
  Rng rng(17);
  std::vector<float> data(3 * 4 * 5);
  for (auto& v : data) v = float(rng.normal());
  auto t = Tensor<float>::from_data({3, 4, 5}, data);
  write_dvt(tmp.file("t.dvt"), t);
  auto u = read_dvt<float>(tmp.file("t.dvt"));
  REQUIRE(u.shape() == Shape{3, 4, 5});
  for (size_t i = 0; i < data.size(); ++i) {
    uint32_t a, b;
    std::memcpy(&a, &t.data()[i], 4);
    std::memcpy(&b, &u.data()[i], 4);
    CHECK(a == b);
  }
}

TEST_CASE("DVT f64 round-trip and malformed input") {
  TempDir tmp;
  auto t = Tensor<double>::from_data({2, 2}, {1.5, -2.25, 3.0, 0.125});
  write_dvt(tmp.file("t64.dvt"), t);
  auto u = read_dvt<double>(tmp.file("t64.dvt"));
  for (size_t i = 0; i < 4; ++i) CHECK(u.data()[i] == t.data()[i]);

  detail::write_file(tmp.file("bad.dvt"), "NOPE", "test");
  CHECK_THROWS_AS(read_dvt<float>(tmp.file("bad.dvt")), IoError);

  std::string good = dvt_encode(t);
  detail::write_file(tmp.file("trunc.dvt"), good.substr(0, good.size() - 3), "test");
  CHECK_THROWS_AS(read_dvt<double>(tmp.file("trunc.dvt")), IoError);
}

TEST_CASE("PFM conformance: header layout and little-endian scale sign") {
  TempDir tmp;
  Image img(1, 2, 2);
  img.at(0, 0, 0) = 1.f;  // top-left
  img.at(0, 0, 1) = 2.f;
  img.at(0, 1, 0) = 3.f;  // bottom-left
  img.at(0, 1, 1) = 4.f;
  write_pfm(tmp.file("g.pfm"), img);

  std::string raw = detail::read_file(tmp.file("g.pfm"), "test");
  const std::string header = "Pf\n2 2\n-1.0\n";
  REQUIRE(raw.substr(0, header.size()) == header);
  REQUIRE(raw.size() == header.size() + 16);
  // bottom row first, little-endian floats
  float v[4];
  std::memcpy(v, raw.data() + header.size(), 16);
  CHECK(v[0] == 3.f);
  CHECK(v[1] == 4.f);
  CHECK(v[2] == 1.f);
  CHECK(v[3] == 2.f);
}

TEST_CASE("PFM round-trip gray and color") {
  TempDir tmp;
  Image g = random_image(1, 5, 7, 23);
  write_pfm(tmp.file("g.pfm"), g);
  Image g2 = read_pfm(tmp.file("g.pfm"));
  REQUIRE(g2.channels == 1);
  REQUIRE(g2.height == 5);
  REQUIRE(g2.width == 7);
  for (size_t i = 0; i < g.data.size(); ++i) CHECK(g2.data[i] == g.data[i]);

  Image c = random_image(3, 4, 6, 29);
  write_pfm(tmp.file("c.pfm"), c);
  Image c2 = read_pfm(tmp.file("c.pfm"));
  REQUIRE(c2.channels == 3);
  for (size_t i = 0; i < c.data.size(); ++i) CHECK(c2.data[i] == c.data[i]);
}

TEST_CASE("PFM malformed inputs raise distinct errors") {
  TempDir tmp;
  detail::write_file(tmp.file("bad.pfm"), "XX\n1 1\n-1.0\n....", "test");
  CHECK_THROWS_WITH(read_pfm(tmp.file("bad.pfm")), Catch::Matchers::ContainsSubstring("magic"));
  detail::write_file(tmp.file("trunc.pfm"), "Pf\n4 4\n-1.0\nzz", "test");
  CHECK_THROWS_WITH(read_pfm(tmp.file("trunc.pfm")), Catch::Matchers::ContainsSubstring("truncated"));
  detail::write_file(tmp.file("huge.pfm"), "Pf\n9999999 9999999\n-1.0\n", "test");
  CHECK_THROWS_WITH(read_pfm(tmp.file("huge.pfm")), Catch::Matchers::ContainsSubstring("overflow"));
}

TEST_CASE("PPM round-trip quantized") {
  TempDir tmp;
  Image img = random_image(3, 3, 3, 31);
  write_ppm(tmp.file("i.ppm"), img);
  Image back = read_ppm(tmp.file("i.ppm"));
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255.f + 1e-6f);
}

TEST_CASE("PLY header count matches emitted points") {
  TempDir tmp;
  std::vector<PlyPoint> pts = {{0, 0, 1, 255, 0, 0}, {1, 2, 3, 0, 255, 0}, {4, 5, 6, 0, 0, 255}};
  write_ply(tmp.file("p.ply"), pts);
  std::string raw = detail::read_file(tmp.file("p.ply"), "test");
  CHECK(raw.find("element vertex 3") != std::string::npos);
  auto back = read_ply(tmp.file("p.ply"));
  REQUIRE(back.size() == 3);
  CHECK(back[1].x == 1.f);
  CHECK(back[2].b == 255);

  detail::write_file(tmp.file("bad.ply"), "plz\n", "test");
  CHECK_THROWS_AS(read_ply(tmp.file("bad.ply")), IoError);
}

TEST_CASE("OBJ round-trip with normals and faces") {
  TempDir tmp;
  ObjMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.normals = {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}};
  m.faces = {{0, 1, 2}};
  write_obj(tmp.file("m.obj"), m);
  ObjMesh back = read_obj(tmp.file("m.obj"));
  REQUIRE(back.vertices.size() == 3);
  REQUIRE(back.faces.size() == 1);
  CHECK(back.faces[0][2] == 2);
  CHECK(back.normals[0][2] == 1.f);
}

TEST_CASE("checkpoint DVCK round-trip") {
  TempDir tmp;
  std::map<std::string, Tensor<float>> w;
  w.emplace("layer.weight", Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
  w.emplace("layer.bias", Tensor<float>::from_data({3}, {-1, 0, 1}));
  write_dvck(tmp.file("w.dvck"), w);
  auto back = read_dvck<float>(tmp.file("w.dvck"));
  REQUIRE(back.size() == 2);
  REQUIRE(back.count("layer.weight") == 1);
  CHECK(back.at("layer.bias").data()[0] == -1.f);
  CHECK(back.at("layer.weight").shape() == Shape{2, 3});

  detail::write_file(tmp.file("bad.dvck"), "DVXK\x01\x00\x00\x00", "test");
  CHECK_THROWS_AS(read_dvck<float>(tmp.file("bad.dvck")), IoError);
}

TEST_CASE("hsv round trip") {
  Rng rng(37);
  for (int i = 0; i < 50; ++i) {
    float r = float(rng.uniform()), g = float(rng.uniform()), b = float(rng.uniform());
    float h, s, v, r2, g2, b2;
    rgb_to_hsv(r, g, b, h, s, v);
    hsv_to_rgb(h, s, v, r2, g2, b2);
    CHECK(r2 == Catch::Approx(r).margin(1e-5));
    CHECK(g2 == Catch::Approx(g).margin(1e-5));
    CHECK(b2 == Catch::Approx(b).margin(1e-5));
  }
}
