// Test-only reference implementations: direct nested-loop evaluation of the
// convolution definitions, independent of the patch machinery and of the
// library's summation layout. Slow and obvious on purpose.
#pragma once

#include <cstddef>

#include "doconv/rng.hpp"
#include "doconv/tensor.hpp"

namespace oracle {

using doconv::ConvGeometry;
using doconv::Tensor;

// O[oy,ox,co] = sum_{m,n,ci} W[co, m*N+n, ci] * x[oy*s+m-p, ox*s+n-p, ci],
// zero outside the input. Plain (ungrouped) convolution.
inline Tensor conv_ref(const Tensor& x, const Tensor& w, const ConvGeometry& g,
                       const Tensor* bias = nullptr) {
  const std::size_t h = x.shape()[0], iw = x.shape()[1];
  const std::size_t oh = g.out_h(h), ow = g.out_w(iw);
  Tensor out({oh, ow, g.c_out});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        double s = bias ? (*bias)[co] : 0.0;
        for (std::size_t m = 0; m < g.m; ++m) {
          for (std::size_t n = 0; n < g.n; ++n) {
            const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + m) -
                           static_cast<std::ptrdiff_t>(g.pad);
            const auto xx = static_cast<std::ptrdiff_t>(ox * g.stride + n) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                xx >= static_cast<std::ptrdiff_t>(iw)) {
              continue;
            }
            for (std::size_t ci = 0; ci < g.c_in; ++ci) {
              s += w.at(co, m * g.n + n, ci) *
                   x.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), ci);
            }
          }
        }
        out.at(oy, ox, co) = s;
      }
    }
  }
  return out;
}

// O[oy,ox,c*D+d] = sum_{m,n} W[m*N+n, d, c] * x[...]
inline Tensor depthwise_ref(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  const std::size_t h = x.shape()[0], iw = x.shape()[1];
  const std::size_t oh = g.out_h(h), ow = g.out_w(iw);
  Tensor out({oh, ow, g.c_in * g.d_mul});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t d = 0; d < g.d_mul; ++d) {
          double s = 0;
          for (std::size_t m = 0; m < g.m; ++m) {
            for (std::size_t n = 0; n < g.n; ++n) {
              const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + m) -
                             static_cast<std::ptrdiff_t>(g.pad);
              const auto xx = static_cast<std::ptrdiff_t>(ox * g.stride + n) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                  xx >= static_cast<std::ptrdiff_t>(iw)) {
                continue;
              }
              s += w.at(m * g.n + n, d, c) *
                   x.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c);
            }
          }
          out.at(oy, ox, c * g.d_mul + d) = s;
        }
      }
    }
  }
  return out;
}

inline Tensor random_tensor(doconv::Shape s, doconv::Rng& g, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = doconv::uniform(g, lo, hi);
  return t;
}

inline Tensor random_int_tensor(doconv::Shape s, doconv::Rng& g, int lo = -3, int hi = 3) {
  Tensor t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(lo + static_cast<int>(doconv::randint(
                                        g, static_cast<std::size_t>(hi - lo + 1))));
  }
  return t;
}

}  // namespace oracle
