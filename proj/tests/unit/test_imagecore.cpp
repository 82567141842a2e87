#include <doctest.h>

#include <cmath>
#include <set>

#include "hquic/image.hpp"
#include "hquic/rng.hpp"
#include "testutil.hpp"

using namespace hquic;

TEST_CASE("save/load round trip preserves 8-bit-representable images") {
  testutil::TempDir tmp("imgio");
  Rng rng(42);
  Tensor img({3, 17, 23});
  for (std::size_t i = 0; i < img.numel(); ++i)
    img[i] = std::floor(rng.uniform() * 256.0) / 255.0;  // exact 8-bit grid
  for (std::size_t i = 0; i < img.numel(); ++i)
    img[i] = std::min(img[i], 1.0);
  std::string p = tmp.file("x.png");
  save_image(p, img);
  Tensor back = load_image(p);
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.numel(); ++i)
    CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("load normalizes 8-bit values by 255") {
  testutil::TempDir tmp("imgnorm");
  Tensor img({3, 2, 2});
  img.fill(128.0 / 255.0);
  std::string p = tmp.file("g.png");
  save_image(p, img);
  Tensor back = load_image(p);
  CHECK(back[0] == doctest::Approx(128.0 / 255.0).epsilon(1e-12));
}

TEST_CASE("saturated red PNG loads as R=1, G=B=0") {
  testutil::TempDir tmp("imgsat");
  Tensor img({3, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      img.at3(0, y, x) = 1.0;
      img.at3(1, y, x) = 0.0;
      img.at3(2, y, x) = 0.0;
    }
  std::string p = tmp.file("r.png");
  save_image(p, img);
  Tensor back = load_image(p);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      CHECK(back.at3(0, y, x) == 1.0);
      CHECK(back.at3(1, y, x) == 0.0);
      CHECK(back.at3(2, y, x) == 0.0);
    }
}

TEST_CASE("random_crop is deterministic and degenerate when sizes match") {
  Tensor img = testutil::random_image(256, 256, 7);
  Tensor c1 = random_crop(img, 256, 123);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(c1[i] == img[i]);

  Tensor big = testutil::random_image(300, 300, 8);
  Tensor a = random_crop(big, 128, 55);
  Tensor b = random_crop(big, 128, 55);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("random_crop covers all offsets on a 258x258 image") {
  Tensor img({3, 258, 258});
  // encode the (y,x) offset into the top-left pixel so crops identify it
  for (int y = 0; y < 258; ++y)
    for (int x = 0; x < 258; ++x) img.at3(0, y, x) = (y * 258 + x) / 70000.0;
  std::set<std::pair<int, int>> seen;
  for (std::uint64_t s = 0; s < 10000 && seen.size() < 9; ++s) {
    Tensor c = random_crop(img, 256, s);
    int code = static_cast<int>(std::lround(c.at3(0, 0, 0) * 70000.0));
    seen.insert({code / 258, code % 258});
  }
  CHECK(seen.size() == 9);
  for (const auto& [oy, ox] : seen) {
    CHECK(oy >= 0);
    CHECK(oy <= 2);
    CHECK(ox >= 0);
    CHECK(ox <= 2);
  }
}

TEST_CASE("pad_to_multiple reflects and unpad restores") {
  SUBCASE("aligned input unchanged") {
    Tensor img = testutil::random_image(256, 256, 1);
    PaddedImage p = pad_to_multiple(img, 64);
    CHECK(p.img.same_shape(img));
    CHECK(p.orig_h == 256);
    CHECK(p.orig_w == 256);
  }
  SUBCASE("250x256 pads to 256x256") {
    Tensor img = testutil::random_image(250, 256, 2);
    PaddedImage p = pad_to_multiple(img, 64);
    CHECK(p.img.dim(1) == 256);
    CHECK(p.img.dim(2) == 256);
    CHECK(p.orig_h == 250);
    Tensor back = unpad(p.img, p.orig_h, p.orig_w);
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
    // reflected row: index 250 mirrors 248 (reflect without edge repeat)
    for (int x = 0; x < 256; ++x)
      CHECK(p.img.at3(1, 250, x) == img.at3(1, 248, x));
  }
  SUBCASE("round trip over random sizes") {
    Rng rng(99);
    for (int it = 0; it < 20; ++it) {
      int h = 1 + static_cast<int>(rng.uniform_int(200));
      int w = 1 + static_cast<int>(rng.uniform_int(200));
      Tensor img = testutil::random_image(h, w, 100 + static_cast<std::uint64_t>(it));
      PaddedImage p = pad_to_multiple(img, 16);
      CHECK(p.img.dim(1) % 16 == 0);
      CHECK(p.img.dim(2) % 16 == 0);
      Tensor back = unpad(p.img, h, w);
      REQUIRE(back.same_shape(img));
      for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
    }
  }
}

TEST_CASE("clamp01 and quantize_8bit") {
  Tensor img({3, 1, 2}, {-0.5, 0.3, 1.7, 0.5, 0.999, 0.0});
  Tensor c = clamp01(img);
  CHECK(c[0] == 0.0);
  CHECK(c[2] == 1.0);
  Tensor q = quantize_8bit(c);
  for (std::size_t i = 0; i < q.numel(); ++i) {
    double steps = q[i] * 255.0;
    CHECK(std::abs(steps - std::lround(steps)) < 1e-9);
  }
}
