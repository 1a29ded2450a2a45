#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "doconv/checks.hpp"
#include "doconv/net.hpp"
#include "doconv/rng.hpp"
#include "doconv/synth.hpp"
#include "doconv/train.hpp"
#include "oracles.hpp"

using namespace doconv;

namespace {

NetworkSpec tiny_net() {
  // Small enough for finite differences: 6x6 input, one conv, one pool.
  NetworkSpec spec = reference_net(6, 6, 1, 4);
  spec.layers.erase(spec.layers.begin() + 3, spec.layers.begin() + 6);  // drop second block
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("network spec validation") {
  NetworkSpec spec = reference_net(28, 28, 1);
  spec.validate();
  const auto shapes = spec.layer_shapes();
  CHECK(shapes[0].h == 28);
  CHECK(shapes[2].h == 14);
  CHECK(shapes[5].c == 16);
  CHECK(shapes[6].c == 7 * 7 * 16);
  CHECK(spec.num_classes() == 10);

  NetworkSpec headless = spec;
  headless.layers.pop_back();
  CHECK_THROWS_AS(headless.validate(), GeometryError);

  NetworkSpec mismatched = spec;
  mismatched.layers[3].geom.c_in = 4;  // second conv no longer chains
  CHECK_THROWS_AS(mismatched.validate(), GeometryError);
}

TEST_CASE("doconv variant replaces only non-pointwise convs and shares W init") {
  NetworkSpec base = reference_net(12, 12, 1);
  LayerSpec pointwise;
  pointwise.kind = LayerKind::Conv;
  pointwise.geom = ConvGeometry{.m = 1, .n = 1, .c_in = 8, .c_out = 8};
  base.layers.insert(base.layers.begin() + 2, pointwise);
  base.validate();

  const NetworkSpec variant = base.doconv_variant();
  CHECK(variant.layers[0].kind == LayerKind::DoConv);
  CHECK(variant.layers[2].kind == LayerKind::Conv);  // 1x1 untouched
  CHECK(variant.layers[0].geom.d_mul == 9);

  const Network a = Network::build(base, 77);
  const Network b = Network::build(variant, 77);
  CHECK(max_abs_diff(a.layers()[0].w, b.layers()[0].w) == 0.0);
  CHECK(b.layers()[0].d_res.max_abs() == 0.0);  // identity init stores zeros
}

TEST_CASE("sgd_step: plain update") {
  NetworkSpec spec;
  spec.in_h = 1;
  spec.in_w = 1;
  spec.in_c = 1;
  spec.layers.push_back({.kind = LayerKind::Flatten});
  spec.layers.push_back({.kind = LayerKind::Dense, .units = 1, .bias = false});
  spec.layers.push_back({.kind = LayerKind::SoftmaxCE});
  Network net = Network::build(spec, 1);
  net.layers()[1].w[0] = 5.0;

  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  OptimizerState opt = OptimizerState::init(net, cfg);
  GradSet grads = net.zero_grads();
  grads.at("L1.W")[0] = 2.0;
  sgd_step(net, grads, opt);
  CHECK(net.layers()[1].w[0] == 3.0);
}

TEST_CASE("sgd_step: decay never moves a zero D' with zero gradient") {
  ConvGeometry geom{.m = 2, .n = 2, .c_in = 1, .c_out = 1, .d_mul = 4};
  NetworkSpec spec;
  spec.in_h = 4;
  spec.in_w = 4;
  spec.in_c = 1;
  spec.layers.push_back({.kind = LayerKind::DoConv, .geom = geom});
  spec.layers.push_back({.kind = LayerKind::Flatten});
  spec.layers.push_back({.kind = LayerKind::Dense, .units = 2});
  spec.layers.push_back({.kind = LayerKind::SoftmaxCE});
  Network net = Network::build(spec, 2);
  CHECK(net.layers()[0].d_res.max_abs() == 0.0);

  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  OptimizerState opt = OptimizerState::init(net, cfg);
  GradSet grads = net.zero_grads();  // all-zero gradients
  sgd_step(net, grads, opt);
  CHECK(net.layers()[0].d_res.max_abs() == 0.0);
}

TEST_CASE("sgd_step: momentum recurrence on a scalar") {
  // v1 = -lr*g1, p1 = p0 + v1; v2 = mu*v1 - lr*g2, p2 = p1 + v2
  NetworkSpec spec;
  spec.in_h = 1;
  spec.in_w = 1;
  spec.in_c = 1;
  spec.layers.push_back({.kind = LayerKind::Flatten});
  spec.layers.push_back({.kind = LayerKind::Dense, .units = 1, .bias = false});
  spec.layers.push_back({.kind = LayerKind::SoftmaxCE});
  Network net = Network::build(spec, 3);
  net.layers()[1].w[0] = 1.0;

  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  OptimizerState opt = OptimizerState::init(net, cfg);
  GradSet grads = net.zero_grads();

  grads.at("L1.W")[0] = 2.0;
  sgd_step(net, grads, opt);
  const double v1 = -0.1 * 2.0;
  CHECK(net.layers()[1].w[0] == doctest::Approx(1.0 + v1).epsilon(1e-15));

  grads.at("L1.W")[0] = -1.0;
  sgd_step(net, grads, opt);
  const double v2 = 0.9 * v1 - 0.1 * (-1.0);
  CHECK(net.layers()[1].w[0] == doctest::Approx(1.0 + v1 + v2).epsilon(1e-15));
}

TEST_CASE("sgd_step with zero gradient and zero decay is the identity") {
  Network net = Network::build(tiny_net(), 4);
  const Network before = net;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState opt = OptimizerState::init(net, cfg);
  GradSet grads = net.zero_grads();
  sgd_step(net, grads, opt);
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    CHECK(max_abs_diff(net.layers()[i].w, before.layers()[i].w) == 0.0);
  }
}

TEST_CASE("sgd_step flags non-finite updates with the layer id") {
  Network net = Network::build(tiny_net(), 5);
  TrainConfig cfg;
  OptimizerState opt = OptimizerState::init(net, cfg);
  GradSet grads = net.zero_grads();
  grads.at("L0.W")[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(sgd_step(net, grads, opt),
                       doctest::Contains("L0.W"), NumericError);
}

TEST_CASE("full-net analytic gradients pass finite differences") {
  const NetworkSpec spec = tiny_net().doconv_variant();
  Network net = Network::build(spec, 6);
  // move D' off the identity so its gradient path is exercised
  Rng g(60);
  for (std::size_t i = 0; i < net.layers()[0].d_res.size(); ++i) {
    net.layers()[0].d_res[i] = uniform(g, -0.3, 0.3);
  }

  const Tensor x = oracle::random_tensor({6, 6, 1}, g, 0.0, 1.0);
  const int label = 2;
  GradSet grads = net.zero_grads();
  net.backward_sample(x, label, Composition::Kernel, grads);

  for (const ParamRef& p : net.parameters()) {
    const Tensor at = *p.tensor;
    const double err = finite_diff_check(
        [&](const Tensor& probe) {
          Network probe_net = net;
          for (ParamRef& q : probe_net.parameters()) {
            if (q.id == p.id) *q.tensor = probe;
          }
          const Tensor logits = probe_net.forward(x, Composition::Kernel);
          return softmax_cross_entropy(logits, label, nullptr);
        },
        at, grads.at(p.id));
    INFO(p.id);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("train_run: lr=0 leaves parameters untouched and loss flat") {
  const DatasetHandle data = make_digit_dataset(40, 123, 12);
  NetworkSpec spec = reference_net(12, 12, 1);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  Network out;
  const TrainReport report = train_run(spec, data, data, cfg, 9, &out);
  const Network fresh = Network::build(spec, 9);
  for (std::size_t i = 0; i < out.layers().size(); ++i) {
    CHECK(max_abs_diff(out.layers()[i].w, fresh.layers()[i].w) == 0.0);
  }
  CHECK(report.epochs[0].train_loss == doctest::Approx(report.epochs[1].train_loss).epsilon(1e-12));
}

TEST_CASE("train_run: frozen D' reproduces the baseline epoch for epoch") {
  const DatasetHandle train = make_digit_dataset(60, 321, 12);
  const DatasetHandle test = make_digit_dataset(20, 322, 12);
  NetworkSpec base = reference_net(12, 12, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 10;

  const TrainReport a = train_run(base, train, test, cfg, 17);

  TrainConfig frozen = cfg;
  frozen.freeze_d = true;
  const TrainReport b = train_run(base.doconv_variant(), train, test, frozen, 17);

  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(std::abs(a.epochs[e].train_loss - b.epochs[e].train_loss) <= 1e-6);
    CHECK(a.epochs[e].test_acc == doctest::Approx(b.epochs[e].test_acc).epsilon(1e-12));
  }
}

TEST_CASE("train_run is bit-reproducible for a fixed seed") {
  const DatasetHandle train = make_digit_dataset(50, 777, 12);
  NetworkSpec spec = reference_net(12, 12, 1).doconv_variant();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  Network n1, n2;
  const TrainReport r1 = train_run(spec, train, train, cfg, 31, &n1);
  const TrainReport r2 = train_run(spec, train, train, cfg, 31, &n2);
  CHECK(r1.epochs[0].train_loss == r2.epochs[0].train_loss);
  for (std::size_t i = 0; i < n1.layers().size(); ++i) {
    CHECK(max_abs_diff(n1.layers()[i].w, n2.layers()[i].w) == 0.0);
  }
}

TEST_CASE("folding preserves the trained network function") {
  const DatasetHandle train = make_digit_dataset(50, 555, 12);
  NetworkSpec spec = reference_net(12, 12, 1).doconv_variant();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  Network net;
  train_run(spec, train, train, cfg, 41, &net);

  const Network folded = net.fold();
  Rng g(61);
  for (int i = 0; i < 5; ++i) {
    const Tensor x = oracle::random_tensor({12, 12, 1}, g, 0.0, 1.0);
    CHECK(max_abs_diff(net.forward(x, Composition::Kernel), folded.forward(x)) <= 1e-10);
    CHECK(max_abs_diff(net.forward(x, Composition::Feature), folded.forward(x)) <= 1e-10);
  }
}

TEST_CASE("identity-init neutrality at step zero") {
  const auto stats = checks::init_neutrality(91);
  CHECK(stats.max_out_diff <= 1e-12);
  CHECK(stats.max_gradw_diff <= 1e-10);
}

TEST_CASE("softmax cross-entropy and argmax basics") {
  const Tensor logits = Tensor::of(Shape{3}, {1.0, 3.0, 3.0});
  CHECK(argmax_lowest(logits) == 1);  // tie broken toward the lowest index
  Tensor grad;
  const double loss = softmax_cross_entropy(logits, 1, &grad);
  CHECK(loss > 0);
  double sum = 0;
  for (std::size_t i = 0; i < 3; ++i) sum += grad[i];
  CHECK(std::abs(sum) <= 1e-12);  // gradient sums to zero
  CHECK_THROWS_AS(softmax_cross_entropy(logits, 7, nullptr), ShapeError);
}
