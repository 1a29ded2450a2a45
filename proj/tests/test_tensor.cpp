#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doconv/rng.hpp"
#include "doconv/tensor.hpp"
#include "oracles.hpp"

using namespace doconv;

TEST_CASE("shape rejects zero extents and counts elements") {
  CHECK_THROWS_AS(Shape({2, 0, 3}), ShapeError);
  CHECK(Shape({2, 3, 4}).elem_count() == 24);
  CHECK(Shape().elem_count() == 1);
  CHECK(Shape({2, 3}).str() == "[2,3]");
}

TEST_CASE("reshape keeps flat order") {
  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);

  const Tensor r = reshape(t, Shape{2, 12});
  // element (i,j,k) lands at (i, j*4+k)
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(r.at(i, j * 4 + k) == t.at(i, j, k));
      }
    }
  }

  const Tensor flat = Tensor::of(Shape{6}, {0, 1, 2, 3, 4, 5});
  const Tensor two = reshape(flat, Shape{2, 3});
  CHECK(two.at(1, 0) == 3);

  CHECK_THROWS_AS(reshape(Tensor({2, 3}), Shape{4, 2}), ShapeError);
}

TEST_CASE("reshape round trip is the identity") {
  Rng g(1);
  Tensor t = oracle::random_tensor({3, 4, 5}, g);
  const Tensor back = reshape(reshape(t, Shape{60}), Shape{3, 4, 5});
  CHECK(max_abs_diff(t, back) == 0.0);
}

TEST_CASE("transpose_first_two moves elements as stated") {
  Tensor t({2, 3, 1});
  t.at(0, 1, 0) = 5;
  const Tensor r = transpose_first_two(t);
  CHECK(r.shape() == Shape({3, 2, 1}));
  CHECK(r.at(1, 0, 0) == 5);

  CHECK_THROWS_AS(transpose_first_two(Tensor({2, 2})), ShapeError);
}

TEST_CASE("transpose_first_two leaves per-channel identity stacks unchanged") {
  Tensor t({3, 3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 2; ++c) t.at(i, i, c) = 1.0;
  }
  CHECK(max_abs_diff(transpose_first_two(t), t) == 0.0);
}

TEST_CASE("transpose_first_two is an involution") {
  Rng g(2);
  const Tensor t = oracle::random_tensor({4, 9, 16}, g);
  CHECK(max_abs_diff(transpose_first_two(transpose_first_two(t)), t) == 0.0);
}

TEST_CASE("extract_patches: degenerate single patch equals the input") {
  Rng g(3);
  ConvGeometry geom{.m = 2, .n = 2, .c_in = 3};
  const Tensor x = oracle::random_tensor({2, 2, 3}, g);
  const PatchBatch pb = extract_patches(x, geom);
  CHECK(pb.out_h == 1);
  CHECK(pb.out_w == 1);
  CHECK(max_abs_diff(pb.values, reshape(x, Shape{1, 4, 3})) == 0.0);
}

TEST_CASE("extract_patches: 3x3 input, 2x2 kernel gives four patches") {
  Tensor x({3, 3, 1});
  for (std::size_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i);
  ConvGeometry geom{.m = 2, .n = 2, .c_in = 1};
  const PatchBatch pb = extract_patches(x, geom);
  CHECK(pb.out_h == 2);
  CHECK(pb.out_w == 2);
  // patch at (0,0) is the top-left 2x2 block: 0 1 3 4
  CHECK(pb.values.at(0, 0, 0) == 0);
  CHECK(pb.values.at(0, 1, 0) == 1);
  CHECK(pb.values.at(0, 2, 0) == 3);
  CHECK(pb.values.at(0, 3, 0) == 4);
}

TEST_CASE("extract_patches: padded corners carry the right zero count") {
  // 4x4 input, 3x3 kernel, pad 1 -> 4x4 output grid; each corner patch covers
  // one padded row and one padded column: 3 + 3 - 1 = 5 zero cells per channel.
  Rng g(4);
  ConvGeometry geom{.m = 3, .n = 3, .c_in = 2, .pad = 1};
  Tensor x = oracle::random_tensor({4, 4, 2}, g, 0.5, 1.5);  // strictly nonzero
  const PatchBatch pb = extract_patches(x, geom);
  CHECK(pb.out_h == 4);
  CHECK(pb.out_w == 4);
  const std::size_t corners[4] = {0, 3, 12, 15};
  for (std::size_t p : corners) {
    for (std::size_t c = 0; c < 2; ++c) {
      std::size_t zeros = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        if (pb.values.at(p, j, c) == 0.0) ++zeros;
      }
      CHECK(zeros == 5);
    }
  }
  // and the specific pattern for the top-left corner: first row and first column
  for (std::size_t j : {0, 1, 2, 3, 6}) CHECK(pb.values.at(0, j, 0) == 0.0);
  CHECK(pb.values.at(0, 4, 0) == x.at(0, 0, 0));
}

TEST_CASE("extract_patches: unpadded stride-1 patch values index back exactly") {
  Rng g(5);
  for (std::size_t h = 2; h <= 4; ++h) {
    for (std::size_t w = 2; w <= 4; ++w) {
      ConvGeometry geom{.m = 2, .n = 2, .c_in = 2};
      const Tensor x = oracle::random_tensor({h, w, 2}, g);
      const PatchBatch pb = extract_patches(x, geom);
      CHECK(pb.out_h * pb.out_w == (h - 1) * (w - 1));
      for (std::size_t oy = 0; oy + 1 < h; ++oy) {
        for (std::size_t ox = 0; ox + 1 < w; ++ox) {
          for (std::size_t m = 0; m < 2; ++m) {
            for (std::size_t n = 0; n < 2; ++n) {
              for (std::size_t c = 0; c < 2; ++c) {
                CHECK(pb.values.at(oy * pb.out_w + ox, m * 2 + n, c) ==
                      x.at(oy + m, ox + n, c));
              }
            }
          }
        }
      }
    }
  }
}

TEST_CASE("extract_patches rejects kernels larger than the padded input") {
  ConvGeometry geom{.m = 4, .n = 4, .c_in = 1};
  CHECK_THROWS_AS(extract_patches(Tensor({3, 3, 1}), geom), GeometryError);
}
