#include "doconv/checks.hpp"

#include <cmath>
#include <sstream>

#include "doconv/doconv.hpp"
#include "doconv/grad.hpp"
#include "doconv/net.hpp"
#include "doconv/rng.hpp"
#include "doconv/train.hpp"

namespace doconv::checks {

namespace {

Tensor random_tensor(Shape s, Rng& g, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(g, lo, hi);
  return t;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

EquivalenceStats equivalence_sweep(std::size_t min_configs, std::uint64_t seed) {
  Rng g(derive_seed(seed, 20));
  EquivalenceStats stats;
  while (stats.configs < min_configs) {
    ConvGeometry geom;
    geom.m = 1 + randint(g, 3);
    geom.n = 1 + randint(g, 3);
    const std::size_t mn = geom.spatial();
    // d_mul drawn from {m*n-1 (when > 0), m*n, m*n+2, 2*m*n}
    std::vector<std::size_t> dmuls;
    if (mn > 1) dmuls.push_back(mn - 1);
    dmuls.push_back(mn);
    dmuls.push_back(mn + 2);
    dmuls.push_back(2 * mn);
    geom.d_mul = dmuls[randint(g, dmuls.size())];
    geom.c_in = 1 + randint(g, 4);
    geom.groups = (randint(g, 2) == 0) ? 1 : geom.c_in;
    // c_out must be a multiple of groups within {1..4}; fall back to groups itself
    const std::size_t max_mult = 4 / geom.groups;
    geom.c_out = max_mult > 0 ? geom.groups * (1 + randint(g, max_mult)) : geom.groups;

    const std::size_t h = geom.m + randint(g, 7 - geom.m);
    const std::size_t w = geom.n + randint(g, 7 - geom.n);

    const Tensor d = random_tensor({mn, geom.d_mul, geom.c_in}, g);
    const Tensor wt = random_tensor({geom.c_out, geom.d_mul, geom.in_per_group()}, g);
    const Tensor x = random_tensor({h, w, geom.c_in}, g);

    const Tensor feat = doconv_feature_raw(d, wt, x, geom);
    const Tensor kern = doconv_kernel_raw(d, wt, x, geom);
    stats.max_err = std::max(stats.max_err, max_abs_diff(feat, kern));
    ++stats.configs;
  }
  return stats;
}

EquivalenceStats dodconv_equivalence_sweep(std::size_t configs, std::uint64_t seed) {
  Rng g(derive_seed(seed, 21));
  EquivalenceStats stats;
  while (stats.configs < configs) {
    ConvGeometry geom;
    geom.m = 1 + randint(g, 3);
    geom.n = 1 + randint(g, 3);
    const std::size_t mn = geom.spatial();
    geom.d_mul = mn + randint(g, mn + 2);
    geom.c_in = 1 + randint(g, 3);
    const std::size_t dw = 1 + randint(g, 3);
    geom.c_out = geom.c_in * dw;

    const std::size_t h = geom.m + randint(g, 5 - std::min<std::size_t>(geom.m, 4));
    const std::size_t w = geom.n + randint(g, 5 - std::min<std::size_t>(geom.n, 4));

    const Tensor d = random_tensor({mn, geom.d_mul, geom.c_in}, g);
    const Tensor wt = random_tensor({geom.d_mul, dw, geom.c_in}, g);
    const Tensor x = random_tensor({h, w, geom.c_in}, g);

    const Tensor feat = dodconv_feature_raw(d, wt, x, geom);
    const Tensor kern = dodconv_kernel_raw(d, wt, x, geom);
    stats.max_err = std::max(stats.max_err, max_abs_diff(feat, kern));
    ++stats.configs;
  }
  return stats;
}

double gradient_suite_max_rel(std::size_t seeds, std::uint64_t base_seed) {
  double worst = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng g(derive_seed(base_seed, 22, s));

    // Plain grouped convolution: scalar objective sum(U . conv(x)).
    {
      ConvGeometry geom;
      geom.m = 1 + randint(g, 3);
      geom.n = 1 + randint(g, 3);
      geom.c_in = 2;
      geom.groups = (s % 2 == 0) ? 1 : 2;
      geom.c_out = 2 * geom.groups;
      geom.pad = randint(g, 2);
      const std::size_t h = geom.m + 2, w = geom.n + 2;
      const Tensor x = random_tensor({h, w, geom.c_in}, g);
      const Tensor wt = random_tensor({geom.c_out, geom.spatial(), geom.in_per_group()}, g);
      const Tensor bias = random_tensor({geom.c_out}, g);
      const Tensor u =
          random_tensor({geom.out_h(h), geom.out_w(w), geom.c_out}, g);

      auto objective = [&](const Tensor& probe_w, const Tensor& probe_x,
                           const Tensor& probe_b) {
        const Tensor o = grouped_conv_forward(probe_x, ConvKernel{probe_w}, geom, &probe_b);
        double sum = 0;
        for (std::size_t i = 0; i < o.size(); ++i) sum += u[i] * o[i];
        return sum;
      };
      const ConvGrads cg = conv_backward(x, ConvKernel{wt}, geom, u, true);
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) { return objective(p, x, bias); }, wt,
                                  cg.w));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) { return objective(wt, p, bias); }, x,
                                  cg.x));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) { return objective(wt, x, p); }, bias,
                                  cg.bias));
    }

    // DO-Conv / DO-GConv parameters through the fold.
    {
      ConvGeometry geom;
      geom.m = 2;
      geom.n = 1 + randint(g, 2);
      geom.c_in = 2;
      geom.groups = (s % 2 == 0) ? 1 : 2;
      geom.c_out = 2 * geom.groups;
      geom.d_mul = geom.spatial() + randint(g, 3);
      const std::size_t h = geom.m + 1, w = geom.n + 1;
      const DoKind kind = geom.groups == 1 ? DoKind::Conv : DoKind::GConv;
      const Tensor dres = random_tensor({geom.spatial(), geom.d_mul, geom.c_in}, g, -0.5, 0.5);
      const Tensor wt = random_tensor({geom.c_out, geom.d_mul, geom.in_per_group()}, g);
      const Tensor bias = random_tensor({geom.c_out}, g);
      const DoConvParams params =
          DoConvParams::create(kind, geom, dres, wt).with_bias(bias);
      const Tensor x = random_tensor({h, w, geom.c_in}, g);
      const Tensor u = random_tensor({geom.out_h(h), geom.out_w(w), geom.c_out}, g);

      auto objective = [&](const DoConvParams& p, const Tensor& px) {
        const Tensor o = doconv_forward_kernel(p, px);
        double sum = 0;
        for (std::size_t i = 0; i < o.size(); ++i) sum += u[i] * o[i];
        return sum;
      };
      const DoConvGrads dg = doconv_backward(params, x, u);
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) {
                                    DoConvParams q = params;
                                    q.d_residual = p;
                                    return objective(q, x);
                                  },
                                  dres, dg.d_residual));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) {
                                    DoConvParams q = params;
                                    q.w = p;
                                    return objective(q, x);
                                  },
                                  wt, dg.w));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) { return objective(params, p); }, x,
                                  dg.x));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) {
                                    DoConvParams q = params;
                                    q.bias = p;
                                    return objective(q, x);
                                  },
                                  bias, dg.bias));
    }

    // DO-DConv parameters.
    {
      ConvGeometry geom;
      geom.m = 2;
      geom.n = 2;
      geom.c_in = 2;
      geom.d_mul = 4 + randint(g, 2);
      const std::size_t dw = 1 + randint(g, 2);
      geom.c_out = geom.c_in * dw;
      const std::size_t h = 3, w = 3;
      const Tensor dres = random_tensor({geom.spatial(), geom.d_mul, geom.c_in}, g, -0.5, 0.5);
      const Tensor wt = random_tensor({geom.d_mul, dw, geom.c_in}, g);
      const DoConvParams params = DoConvParams::create(DoKind::DConv, geom, dres, wt);
      const Tensor x = random_tensor({h, w, geom.c_in}, g);
      const Tensor u = random_tensor({geom.out_h(h), geom.out_w(w), geom.c_out}, g);

      auto objective = [&](const DoConvParams& p, const Tensor& px) {
        const Tensor o = dodconv_forward(p, px, Composition::Kernel);
        double sum = 0;
        for (std::size_t i = 0; i < o.size(); ++i) sum += u[i] * o[i];
        return sum;
      };
      const DoConvGrads dg = doconv_backward(params, x, u);
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) {
                                    DoConvParams q = params;
                                    q.d_residual = p;
                                    return objective(q, x);
                                  },
                                  dres, dg.d_residual));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) {
                                    DoConvParams q = params;
                                    q.w = p;
                                    return objective(q, x);
                                  },
                                  wt, dg.w));
      worst = std::max(worst, finite_diff_check(
                                  [&](const Tensor& p) { return objective(params, p); }, x,
                                  dg.x));
    }
  }
  return worst;
}

double receptive_field_leak() {
  ConvGeometry geom;
  geom.m = 3;
  geom.n = 3;
  geom.c_in = 2;
  geom.c_out = 3;
  geom.d_mul = 9;
  const std::size_t h = 6, w = 6;

  Rng g(derive_seed(99, 23));
  const Tensor d = random_tensor({geom.spatial(), geom.d_mul, geom.c_in}, g);
  const Tensor wt = random_tensor({geom.c_out, geom.d_mul, geom.c_in}, g);
  const Tensor x = random_tensor({h, w, geom.c_in}, g);

  const Tensor ref_feat = doconv_feature_raw(d, wt, x, geom);
  const Tensor ref_kern = doconv_kernel_raw(d, wt, x, geom);
  const std::size_t oh = geom.out_h(h), ow = geom.out_w(w);

  double leak = 0;
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      Tensor bumped = x;
      bumped.at(py, px, 0) += 1.0;
      bumped.at(py, px, 1) -= 0.5;
      const Tensor out_feat = doconv_feature_raw(d, wt, bumped, geom);
      const Tensor out_kern = doconv_kernel_raw(d, wt, bumped, geom);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const bool inside = py >= oy && py < oy + geom.m && px >= ox && px < ox + geom.n;
          if (inside) continue;
          for (std::size_t c = 0; c < geom.c_out; ++c) {
            leak = std::max(leak,
                            std::abs(out_feat.at(oy, ox, c) - ref_feat.at(oy, ox, c)));
            leak = std::max(leak,
                            std::abs(out_kern.at(oy, ox, c) - ref_kern.at(oy, ox, c)));
          }
        }
      }
    }
  }
  return leak;
}

std::size_t matrix_rank(const Tensor& m) {
  if (m.shape().rank() != 2) throw ShapeError("matrix_rank expects a 2D tensor");
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> a(m.data(), m.data() + m.size());
  const double tol = 1e-10 * std::max(1.0, m.max_abs());

  std::size_t rank = 0;
  for (std::size_t col = 0; col < cols && rank < rows; ++col) {
    std::size_t pivot = rank;
    for (std::size_t r = rank + 1; r < rows; ++r) {
      if (std::abs(a[r * cols + col]) > std::abs(a[pivot * cols + col])) pivot = r;
    }
    if (std::abs(a[pivot * cols + col]) <= tol) continue;
    for (std::size_t c = 0; c < cols; ++c) std::swap(a[rank * cols + c], a[pivot * cols + c]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double f = a[r * cols + col] / a[rank * cols + col];
      for (std::size_t c = col; c < cols; ++c) a[r * cols + c] -= f * a[rank * cols + c];
    }
    ++rank;
  }
  return rank;
}

RankStats expressiveness_rank() {
  RankStats stats;
  // m*n = 4. Square case: identity-init D is the 4x4 identity.
  const Tensor d4 = identity_fill(4, 4, 1);
  stats.rank_square = matrix_rank(reshape(d4, Shape{4, 4}));
  // Sub-square case: a 4x3 fold matrix cannot reach rank 4 whatever D is.
  const Tensor d3 = identity_fill(4, 3, 1);
  stats.rank_sub = matrix_rank(reshape(d3, Shape{4, 3}));
  return stats;
}

NeutralityStats init_neutrality(std::uint64_t seed, std::size_t batch) {
  const NetworkSpec base = reference_net(12, 12, 1);
  const Network baseline = Network::build(base, seed);
  const Network dovar = Network::build(base.doconv_variant(), seed);

  NeutralityStats stats;
  Rng g(derive_seed(seed, 24));
  GradSet grads_a = baseline.zero_grads();
  GradSet grads_b = dovar.zero_grads();
  for (std::size_t i = 0; i < batch; ++i) {
    const Tensor x = random_tensor({12, 12, 1}, g, 0.0, 1.0);
    const int label = static_cast<int>(randint(g, 10));
    stats.max_out_diff = std::max(
        stats.max_out_diff, max_abs_diff(baseline.forward(x), dovar.forward(x)));
    baseline.backward_sample(x, label, Composition::Kernel, grads_a);
    dovar.backward_sample(x, label, Composition::Kernel, grads_b);
  }
  for (const auto& [id, ga] : grads_a) {
    if (!id.ends_with(".W")) continue;
    const auto it = grads_b.find(id);
    if (it == grads_b.end()) continue;
    stats.max_gradw_diff = std::max(stats.max_gradw_diff, max_abs_diff(ga, it->second));
  }
  return stats;
}

double fold_infer_gap(std::uint64_t seed) {
  Rng g(derive_seed(seed, 25));
  ConvGeometry geom;
  geom.m = 3;
  geom.n = 3;
  geom.c_in = 3;
  geom.c_out = 4;
  geom.d_mul = 9;
  const Tensor dres = random_tensor({geom.spatial(), geom.d_mul, geom.c_in}, g, -0.5, 0.5);
  const Tensor wt = random_tensor({geom.c_out, geom.d_mul, geom.c_in}, g);
  const DoConvParams p = DoConvParams::create(DoKind::Conv, geom, dres, wt);
  const Tensor x = random_tensor({6, 6, geom.c_in}, g);

  const Tensor via_op = doconv_forward_kernel(p, x);
  const Tensor via_fold = conv_forward(x, ConvKernel{fold_kernel(p).w}, geom);
  return max_abs_diff(via_op, via_fold);
}

std::vector<PropertyResult> run_property_suite(const CheckOptions& opts) {
  std::vector<PropertyResult> results;

  const EquivalenceStats eq = equivalence_sweep(opts.equivalence_configs, opts.seed);
  results.push_back({"composition-equivalence",
                     eq.max_err <= 1e-10,
                     std::to_string(eq.configs) + " configs, max err " + fmt(eq.max_err)});

  const EquivalenceStats deq = dodconv_equivalence_sweep(opts.equivalence_configs / 4, opts.seed);
  results.push_back({"dodconv-equivalence",
                     deq.max_err <= 1e-10,
                     std::to_string(deq.configs) + " configs, max err " + fmt(deq.max_err)});

  const double gap = fold_infer_gap(opts.seed);
  results.push_back({"fold-inference-equality", gap == 0.0, "max gap " + fmt(gap)});

  const NeutralityStats neu = init_neutrality(opts.seed);
  results.push_back({"identity-init-neutrality",
                     neu.max_out_diff <= 1e-12 && neu.max_gradw_diff <= 1e-10,
                     "output gap " + fmt(neu.max_out_diff) + ", dW gap " +
                         fmt(neu.max_gradw_diff)});

  const double grad_err = gradient_suite_max_rel(opts.grad_seeds, opts.seed);
  results.push_back({"gradient-finite-difference",
                     grad_err <= 1e-5,
                     std::to_string(opts.grad_seeds) + " seeds, max rel err " + fmt(grad_err)});

  const double leak = receptive_field_leak();
  results.push_back({"receptive-field-isolation", leak == 0.0, "max leak " + fmt(leak)});

  const RankStats rk = expressiveness_rank();
  results.push_back({"expressiveness-rank",
                     rk.rank_square == 4 && rk.rank_sub < 4,
                     "square rank " + std::to_string(rk.rank_square) + ", sub rank " +
                         std::to_string(rk.rank_sub)});

  return results;
}

}  // namespace doconv::checks
