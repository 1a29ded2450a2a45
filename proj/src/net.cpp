#include "doconv/net.hpp"

#include <cmath>
#include <sstream>

#include "doconv/grad.hpp"
#include "doconv/rng.hpp"

namespace doconv {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DoConv: return "doconv";
    case LayerKind::DoDConv: return "dodconv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::SoftmaxCE: return "softmax_ce";
  }
  return "?";
}

namespace {

bool is_conv_family(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::DoConv || k == LayerKind::DoDConv;
}

ShapeHWC chain_layer(const LayerSpec& ls, const ShapeHWC& in, std::size_t index) {
  const auto fail = [&](const std::string& msg) {
    throw GeometryError("layer " + std::to_string(index) + " (" +
                        layer_kind_name(ls.kind) + "): " + msg);
  };
  switch (ls.kind) {
    case LayerKind::Conv:
    case LayerKind::DoConv:
    case LayerKind::DoDConv: {
      if (in.h == 0) fail("needs a spatial input, got a flat one");
      ConvGeometry g = ls.geom;
      g.validate();
      if (g.c_in != in.c) fail("expects c_in=" + std::to_string(g.c_in) + ", input has " +
                               std::to_string(in.c));
      if (ls.kind == LayerKind::DoDConv && g.c_out % g.c_in != 0) {
        fail("depthwise output channels must be a multiple of c_in");
      }
      return {g.out_h(in.h), g.out_w(in.w), g.c_out};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::MaxPool:
      if (in.h < 2 || in.w < 2) fail("input too small for a 2x2 pool");
      return {in.h / 2, in.w / 2, in.c};
    case LayerKind::Flatten:
      if (in.h == 0) fail("input already flat");
      return {0, 0, in.h * in.w * in.c};
    case LayerKind::Dense:
      if (in.h != 0) fail("needs a flat input; add a flatten layer");
      if (ls.units == 0) fail("units must be >= 1");
      return {0, 0, ls.units};
    case LayerKind::SoftmaxCE:
      if (in.h != 0) fail("needs flat logits");
      return in;
  }
  fail("unknown layer kind");
  return in;
}

}  // namespace

void NetworkSpec::validate() const {
  if (in_h == 0 || in_w == 0 || in_c == 0) throw GeometryError("input dimensions must be >= 1");
  if (layers.empty()) throw GeometryError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool is_head = layers[i].kind == LayerKind::SoftmaxCE;
    if (is_head != (i + 1 == layers.size())) {
      throw GeometryError("exactly one softmax_ce head is required, as the last layer");
    }
  }
  layer_shapes();  // chains or throws
}

std::vector<ShapeHWC> NetworkSpec::layer_shapes() const {
  std::vector<ShapeHWC> shapes;
  ShapeHWC cur{in_h, in_w, in_c};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cur = chain_layer(layers[i], cur, i);
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t NetworkSpec::num_classes() const {
  const auto shapes = layer_shapes();
  return shapes.empty() ? 0 : shapes.back().c;
}

NetworkSpec NetworkSpec::doconv_variant() const {
  NetworkSpec out = *this;
  for (LayerSpec& ls : out.layers) {
    if (ls.kind == LayerKind::Conv && ls.geom.spatial() > 1) {
      ls.kind = LayerKind::DoConv;
      ls.geom.d_mul = ls.geom.spatial();
    }
  }
  return out;
}

NetworkSpec reference_net(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                          std::size_t classes) {
  NetworkSpec spec;
  spec.in_h = in_h;
  spec.in_w = in_w;
  spec.in_c = in_c;
  auto conv = [](std::size_t cin, std::size_t cout) {
    LayerSpec ls;
    ls.kind = LayerKind::Conv;
    ls.geom = ConvGeometry{.m = 3, .n = 3, .c_in = cin, .c_out = cout, .stride = 1, .pad = 1};
    return ls;
  };
  spec.layers.push_back(conv(in_c, 8));
  spec.layers.push_back({.kind = LayerKind::Relu});
  spec.layers.push_back({.kind = LayerKind::MaxPool});
  spec.layers.push_back(conv(8, 16));
  spec.layers.push_back({.kind = LayerKind::Relu});
  spec.layers.push_back({.kind = LayerKind::MaxPool});
  spec.layers.push_back({.kind = LayerKind::Flatten});
  spec.layers.push_back({.kind = LayerKind::Dense, .units = classes});
  spec.layers.push_back({.kind = LayerKind::SoftmaxCE});
  return spec;
}

DoConvParams Layer::do_params() const {
  if (!has_d || folded) throw UnsupportedError("layer holds no unfolded DO parameters");
  const DoKind kind = spec.kind == LayerKind::DoDConv
                          ? DoKind::DConv
                          : (spec.geom.groups > 1 ? DoKind::GConv : DoKind::Conv);
  DoConvParams p = DoConvParams::create(kind, spec.geom, d_res, w);
  if (has_bias) p = p.with_bias(bias);
  return p;
}

namespace {

void fill_randn(Tensor& t, Rng& g, double stddev) {
  double* v = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = randn(g) * stddev;
}

Layer build_layer(const LayerSpec& ls, const ShapeHWC& in, std::uint64_t seed, std::size_t index) {
  Layer layer;
  layer.spec = ls;
  Rng wstream(derive_seed(seed, 1, index));
  switch (ls.kind) {
    case LayerKind::Conv: {
      const ConvGeometry& g = ls.geom;
      layer.w = Tensor({g.c_out, g.spatial(), g.in_per_group()});
      fill_randn(layer.w, wstream, std::sqrt(2.0 / double(g.spatial() * g.in_per_group())));
      if (ls.bias) {
        layer.bias = Tensor({g.c_out});
        layer.has_bias = true;
      }
      break;
    }
    case LayerKind::DoConv: {
      ConvGeometry g = ls.geom;
      if (g.spatial() == 1) {
        // Pointwise: no spatial patch to over-parameterize; fall back to a
        // plain convolution drawn from the same stream.
        layer.spec.kind = LayerKind::Conv;
        layer.do_skipped = true;
        layer.w = Tensor({g.c_out, 1, g.in_per_group()});
        fill_randn(layer.w, wstream, std::sqrt(2.0 / double(g.in_per_group())));
      } else {
        layer.w = Tensor({g.c_out, g.d_mul, g.in_per_group()});
        fill_randn(layer.w, wstream, std::sqrt(2.0 / double(g.d_mul * g.in_per_group())));
        layer.d_res = Tensor({g.spatial(), g.d_mul, g.c_in});
        layer.has_d = true;
        if (ls.d_init == DInit::Random) {
          // He-drawn effective D, stored as the residual against the identity fill.
          Rng dstream(derive_seed(seed, 2, index));
          fill_randn(layer.d_res, dstream, std::sqrt(2.0 / double(g.spatial())));
          const Tensor fill = identity_fill(g.spatial(), g.d_mul, g.c_in);
          for (std::size_t i = 0; i < layer.d_res.size(); ++i) layer.d_res[i] -= fill[i];
        }
      }
      if (ls.bias) {
        layer.bias = Tensor({ls.geom.c_out});
        layer.has_bias = true;
      }
      break;
    }
    case LayerKind::DoDConv: {
      const ConvGeometry& g = ls.geom;
      const std::size_t dw = g.c_out / g.c_in;
      layer.w = Tensor({g.d_mul, dw, g.c_in});
      fill_randn(layer.w, wstream, std::sqrt(2.0 / double(g.d_mul)));
      layer.d_res = Tensor({g.spatial(), g.d_mul, g.c_in});
      layer.has_d = true;
      if (ls.d_init == DInit::Random) {
        Rng dstream(derive_seed(seed, 2, index));
        fill_randn(layer.d_res, dstream, std::sqrt(2.0 / double(g.spatial())));
        const Tensor fill = identity_fill(g.spatial(), g.d_mul, g.c_in);
        for (std::size_t i = 0; i < layer.d_res.size(); ++i) layer.d_res[i] -= fill[i];
      }
      if (ls.bias) {
        layer.bias = Tensor({g.c_out});
        layer.has_bias = true;
      }
      break;
    }
    case LayerKind::Dense: {
      layer.w = Tensor({ls.units, in.c});
      fill_randn(layer.w, wstream, std::sqrt(2.0 / double(in.c)));
      if (ls.bias) {
        layer.bias = Tensor({ls.units});
        layer.has_bias = true;
      }
      break;
    }
    default:
      break;
  }
  return layer;
}

}  // namespace

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  ShapeHWC cur{spec.in_h, spec.in_w, spec.in_c};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    net.layers_.push_back(build_layer(spec.layers[i], cur, seed, i));
    cur = chain_layer(spec.layers[i], cur, i);
  }
  return net;
}

Network Network::from_parts(NetworkSpec spec, std::vector<Layer> layers, bool folded) {
  spec.validate();
  if (layers.size() != spec.layers.size()) throw ShapeError("layer count mismatch");
  Network net;
  net.spec_ = std::move(spec);
  net.layers_ = std::move(layers);
  net.folded_ = folded;
  return net;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    const std::string prefix = "L" + std::to_string(i);
    if (l.spec.kind == LayerKind::Dense || is_conv_family(l.spec.kind)) {
      out.push_back({prefix + ".W", &l.w});
      if (l.has_d) out.push_back({prefix + ".D", &l.d_res});
      if (l.has_bias) out.push_back({prefix + ".b", &l.bias});
    }
  }
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) {
    if (l.spec.kind == LayerKind::Dense || is_conv_family(l.spec.kind)) {
      n += l.w.size();
      if (l.has_d) n += l.d_res.size();
      if (l.has_bias) n += l.bias.size();
    }
  }
  return n;
}

Network Network::fold() const {
  Network out = *this;
  for (Layer& l : out.layers_) {
    if (l.has_d && !l.folded) {
      l.w = fold_kernel(l.do_params()).w;
      l.d_res = Tensor();
      l.has_d = false;
      l.folded = true;
    }
  }
  out.folded_ = true;
  return out;
}

std::string Network::layer_label(std::size_t i) const {
  const Layer& l = layers_[i];
  std::ostringstream os;
  os << "L" << i << " (" << layer_kind_name(l.spec.kind);
  if (is_conv_family(l.spec.kind)) {
    os << " " << l.spec.geom.m << "x" << l.spec.geom.n << " " << l.spec.geom.c_in << "->"
       << l.spec.geom.c_out;
  } else if (l.spec.kind == LayerKind::Dense) {
    os << " " << l.spec.units;
  }
  os << ")";
  return os.str();
}

namespace {

Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  double* v = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& up) {
  Tensor out = up;
  double* v = out.data();
  const double* xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (xv[i] <= 0.0) v[i] = 0.0;
  }
  return out;
}

Tensor maxpool_forward(const Tensor& x) {
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({oh, ow, c});
  const double* xv = x.data();
  double* ov = out.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double best = xv[(2 * oy * w + 2 * ox) * c + ch];
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const double v = xv[((2 * oy + dy) * w + 2 * ox + dx) * c + ch];
            if (v > best) best = v;
          }
        }
        ov[(oy * ow + ox) * c + ch] = best;
      }
    }
  }
  return out;
}

// Routes the gradient to the first maximum in scan order, the same element
// the forward pass picked.
Tensor maxpool_backward(const Tensor& x, const Tensor& up) {
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(x.shape());
  const double* xv = x.data();
  const double* uv = up.data();
  double* ov = out.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best_idx = (2 * oy * w + 2 * ox) * c + ch;
        double best = xv[best_idx];
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        ov[best_idx] += uv[(oy * ow + ox) * c + ch];
      }
    }
  }
  return out;
}

Tensor dense_forward(const Tensor& x, const Layer& l) {
  const std::size_t units = l.spec.units, f = l.w.shape()[1];
  if (x.size() != f) {
    throw ShapeError("dense input has " + std::to_string(x.size()) + " features, expected " +
                     std::to_string(f));
  }
  Tensor out({units});
  const double* xv = x.data();
  const double* wv = l.w.data();
  double* ov = out.data();
  for (std::size_t u = 0; u < units; ++u) {
    double s = 0;
    const double* row = wv + u * f;
    for (std::size_t i = 0; i < f; ++i) s += row[i] * xv[i];
    ov[u] = l.has_bias ? s + l.bias[u] : s;
  }
  return out;
}

}  // namespace

double softmax_cross_entropy(const Tensor& logits, int label, Tensor* grad) {
  const std::size_t k = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                     " classes");
  }
  double mx = logits[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) z += std::exp(logits[i] - mx);
  const double logz = std::log(z);
  const double loss = logz - (logits[static_cast<std::size_t>(label)] - mx);
  if (grad) {
    *grad = Tensor(logits.shape());
    for (std::size_t i = 0; i < k; ++i) {
      (*grad)[i] = std::exp(logits[i] - mx) / z;
    }
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return loss;
}

std::size_t argmax_lowest(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

namespace {

Tensor layer_forward(const Layer& l, const Tensor& x, Composition mode) {
  switch (l.spec.kind) {
    case LayerKind::Conv:
      return grouped_conv_forward(x, ConvKernel{l.w}, l.spec.geom,
                                  l.has_bias ? &l.bias : nullptr);
    case LayerKind::DoConv: {
      if (l.folded) {
        return grouped_conv_forward(x, ConvKernel{l.w}, l.spec.geom,
                                    l.has_bias ? &l.bias : nullptr);
      }
      const DoConvParams p = l.do_params();
      return mode == Composition::Feature ? doconv_forward_feature(p, x)
                                          : doconv_forward_kernel(p, x);
    }
    case LayerKind::DoDConv: {
      if (l.folded) {
        ConvGeometry g = l.spec.geom;
        g.d_mul = g.c_out / g.c_in;
        return depthwise_forward(x, DepthwiseKernel{l.w}, g, l.has_bias ? &l.bias : nullptr);
      }
      return dodconv_forward(l.do_params(), x, mode);
    }
    case LayerKind::Relu:
      return relu_forward(x);
    case LayerKind::MaxPool:
      return maxpool_forward(x);
    case LayerKind::Flatten:
      return reshape(x, Shape{x.size()});
    case LayerKind::Dense:
      return dense_forward(x, l);
    case LayerKind::SoftmaxCE:
      return x;
  }
  throw UnsupportedError("unknown layer kind");
}

// Backward for layers that run the plain/folded convolution path.
ConvGrads conv_backward_dispatch(const Layer& l, const Tensor& x, const Tensor& up) {
  if (l.spec.kind == LayerKind::DoDConv) {
    ConvGeometry g = l.spec.geom;
    g.d_mul = g.c_out / g.c_in;
    return depthwise_backward(x, DepthwiseKernel{l.w}, g, up, l.has_bias);
  }
  return conv_backward(x, ConvKernel{l.w}, l.spec.geom, up, l.has_bias);
}

}  // namespace

Tensor Network::forward(const Tensor& image, Composition mode) const {
  Tensor cur = image;
  for (const Layer& l : layers_) {
    if (l.spec.kind == LayerKind::SoftmaxCE) break;
    cur = layer_forward(l, cur, mode);
  }
  return cur;
}

GradSet Network::zero_grads() const {
  GradSet grads;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const std::string prefix = "L" + std::to_string(i);
    if (l.spec.kind == LayerKind::Dense || is_conv_family(l.spec.kind)) {
      grads.emplace(prefix + ".W", Tensor(l.w.shape()));
      if (l.has_d) grads.emplace(prefix + ".D", Tensor(l.d_res.shape()));
      if (l.has_bias) grads.emplace(prefix + ".b", Tensor(l.bias.shape()));
    }
  }
  return grads;
}

double Network::backward_sample(const Tensor& image, int label, Composition mode, GradSet& grads,
                                bool* correct) const {
  // Forward, keeping every activation for the reverse sweep.
  std::vector<Tensor> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(image);
  for (const Layer& l : layers_) {
    if (l.spec.kind == LayerKind::SoftmaxCE) break;
    acts.push_back(layer_forward(l, acts.back(), mode));
  }
  const Tensor& logits = acts.back();
  if (correct) *correct = argmax_lowest(logits) == static_cast<std::size_t>(label);

  Tensor up;
  const double loss = softmax_cross_entropy(logits, label, &up);

  auto add_into = [&grads](const std::string& id, const Tensor& g) {
    auto it = grads.find(id);
    if (it == grads.end()) throw ShapeError("gradient accumulator missing for " + id);
    if (!(it->second.shape() == g.shape())) {
      throw ShapeError("gradient shape mismatch for " + id);
    }
    double* dst = it->second.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  };

  for (std::size_t ri = layers_.size(); ri-- > 0;) {
    const Layer& l = layers_[ri];
    if (l.spec.kind == LayerKind::SoftmaxCE) continue;
    const Tensor& x = acts[ri];
    const std::string prefix = "L" + std::to_string(ri);
    switch (l.spec.kind) {
      case LayerKind::Conv: {
        const ConvGrads cg = conv_backward_dispatch(l, x, up);
        add_into(prefix + ".W", cg.w);
        if (l.has_bias) add_into(prefix + ".b", cg.bias);
        up = cg.x;
        break;
      }
      case LayerKind::DoConv:
      case LayerKind::DoDConv: {
        if (l.folded) {
          const ConvGrads cg = conv_backward_dispatch(l, x, up);
          add_into(prefix + ".W", cg.w);
          if (l.has_bias) add_into(prefix + ".b", cg.bias);
          up = cg.x;
        } else {
          const DoConvGrads dg = doconv_backward(l.do_params(), x, up);
          add_into(prefix + ".W", dg.w);
          add_into(prefix + ".D", dg.d_residual);
          if (l.has_bias) add_into(prefix + ".b", dg.bias);
          up = dg.x;
        }
        break;
      }
      case LayerKind::Relu:
        up = relu_backward(x, up);
        break;
      case LayerKind::MaxPool:
        up = maxpool_backward(x, up);
        break;
      case LayerKind::Flatten:
        up = reshape(up, x.shape());
        break;
      case LayerKind::Dense: {
        const std::size_t units = l.spec.units, f = l.w.shape()[1];
        Tensor gw({units, f});
        Tensor gx({f});
        const double* uv = up.data();
        const double* xv = x.data();
        const double* wv = l.w.data();
        for (std::size_t u = 0; u < units; ++u) {
          const double uval = uv[u];
          double* grow = gw.data() + u * f;
          const double* wrow = wv + u * f;
          for (std::size_t i = 0; i < f; ++i) {
            grow[i] += uval * xv[i];
            gx[i] += uval * wrow[i];
          }
        }
        add_into(prefix + ".W", gw);
        if (l.has_bias) add_into(prefix + ".b", up);
        up = gx;
        break;
      }
      case LayerKind::SoftmaxCE:
        break;
    }
  }
  return loss;
}

}  // namespace doconv
