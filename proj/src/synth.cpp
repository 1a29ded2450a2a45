#include "doconv/synth.hpp"

#include <array>
#include <cmath>

#include "doconv/rng.hpp"

namespace doconv {

namespace {

// 5x7 dot-matrix digit glyphs, one row per string.
constexpr std::array<std::array<const char*, 7>, 10> kGlyphs = {{
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},  // 2
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
}};

// Bilinear sample of a glyph treated as a continuous [0,5]x[0,7] intensity
// field (1 inside set dots, 0 elsewhere), clamped at the border.
double glyph_sample(int digit, double gx, double gy) {
  const auto& rows = kGlyphs[static_cast<std::size_t>(digit)];
  const double fx = gx - 0.5, fy = gy - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double tx = fx - x0, ty = fy - y0;
  auto dot = [&rows](int x, int y) -> double {
    if (x < 0 || x >= 5 || y < 0 || y >= 7) return 0.0;
    return rows[static_cast<std::size_t>(y)][x] == '1' ? 1.0 : 0.0;
  };
  const double top = dot(x0, y0) * (1 - tx) + dot(x0 + 1, y0) * tx;
  const double bot = dot(x0, y0 + 1) * (1 - tx) + dot(x0 + 1, y0 + 1) * tx;
  return top * (1 - ty) + bot * ty;
}

}  // namespace

DatasetHandle make_digit_dataset(std::size_t count, std::uint64_t seed, std::size_t size) {
  if (count == 0 || size < 8) throw ShapeError("dataset needs count >= 1 and size >= 8");
  DatasetHandle data;
  data.images = Tensor({count, size, size, 1});
  data.labels.resize(count);

  Rng g(derive_seed(seed, 11));
  const double canvas = static_cast<double>(size);
  double* img = data.images.data();

  for (std::size_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(i % 10);
    data.labels[i] = digit;

    const double angle = uniform(g, -0.28, 0.28);
    const double scale = uniform(g, 0.85, 1.2);
    const double shift_x = uniform(g, -2.5, 2.5);
    const double shift_y = uniform(g, -2.5, 2.5);
    const double noise = uniform(g, 0.04, 0.10);
    const double ca = std::cos(angle), sa = std::sin(angle);
    // glyph box mapped to roughly 60% of the canvas
    const double px = canvas * 0.60 * scale / 5.0;
    const double py = canvas * 0.72 * scale / 7.0;
    const double cx = canvas / 2.0 + shift_x, cy = canvas / 2.0 + shift_y;

    double* pix = img + i * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5) - cx;
        const double dy = (static_cast<double>(y) + 0.5) - cy;
        // inverse rotation back into glyph coordinates
        const double ux = (ca * dx + sa * dy) / px + 2.5;
        const double uy = (-sa * dx + ca * dy) / py + 3.5;
        double v = glyph_sample(digit, ux, uy);
        v += noise * randn(g);
        pix[y * size + x] = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return data;
}

}  // namespace doconv
