#include "doconv/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "doconv/rng.hpp"

namespace doconv {

OptimizerState OptimizerState::init(Network& net, const TrainConfig& cfg) {
  OptimizerState opt;
  opt.lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.freeze_d = cfg.freeze_d;
  for (const ParamRef& p : net.parameters()) {
    opt.velocity.emplace(p.id, Tensor(p.tensor->shape()));
  }
  return opt;
}

void sgd_step(Network& net, const GradSet& grads, OptimizerState& opt) {
  for (const ParamRef& p : net.parameters()) {
    if (opt.freeze_d && p.id.ends_with(".D")) continue;
    const auto git = grads.find(p.id);
    if (git == grads.end()) throw ShapeError("no gradient for parameter " + p.id);
    auto vit = opt.velocity.find(p.id);
    if (vit == opt.velocity.end()) throw ShapeError("no velocity for parameter " + p.id);
    const Tensor& g = git->second;
    Tensor& v = vit->second;
    Tensor& w = *p.tensor;
    if (!(g.shape() == w.shape()) || !(v.shape() == w.shape())) {
      throw ShapeError("shape mismatch updating " + p.id);
    }
    bool finite = true;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = opt.momentum * v[i] - opt.lr * (g[i] + opt.weight_decay * w[i]);
      w[i] += v[i];
      finite = finite && std::isfinite(w[i]);
    }
    if (!finite) throw NumericError("non-finite update for parameter " + p.id);
  }
}

EvalStats evaluate(const Network& net, const DatasetHandle& data, Composition mode) {
  EvalStats stats;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.count(); ++i) {
    const Tensor logits = net.forward(data.image(i), mode);
    stats.mean_loss += softmax_cross_entropy(logits, data.labels[i], nullptr);
    if (argmax_lowest(logits) == static_cast<std::size_t>(data.labels[i])) ++correct;
  }
  if (data.count() > 0) {
    stats.mean_loss /= static_cast<double>(data.count());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.count());
  }
  return stats;
}

TrainReport train_run(const NetworkSpec& spec, const DatasetHandle& train,
                      const DatasetHandle& test, const TrainConfig& cfg, std::uint64_t seed,
                      Network* out_net) {
  const auto t0 = std::chrono::steady_clock::now();
  Network net = Network::build(spec, seed);
  OptimizerState opt = OptimizerState::init(net, cfg);

  TrainReport report;
  std::vector<std::size_t> order(train.count());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t total_epochs = cfg.epochs;
  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    if (cfg.schedule == LrSchedule::Cosine) {
      opt.lr = cfg.lr * 0.5 *
               (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                               static_cast<double>(total_epochs)));
    }
    Rng shuffle_rng(derive_seed(seed, 3, epoch));
    shuffle_indices(order, shuffle_rng);

    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      GradSet grads = net.zero_grads();
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        bool ok = false;
        batch_loss += net.backward_sample(train.image(order[i]), train.labels[order[i]],
                                          cfg.mode, grads, &ok);
        if (ok) ++correct;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      batch_loss *= scale;
      for (auto& [id, g] : grads) {
        double* v = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) v[i] *= scale;
      }
      if (!std::isfinite(batch_loss)) {
        report.diverged = true;
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (out_net) *out_net = net;
        return report;
      }
      sgd_step(net, grads, opt);
      ++report.steps;
      loss_sum += batch_loss * static_cast<double>(end - start);
      seen += end - start;
    }

    EpochStats es;
    es.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    es.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    es.test_acc = test.count() ? evaluate(net, test, cfg.mode).accuracy : 0.0;
    report.epochs.push_back(es);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out_net) *out_net = net;
  return report;
}

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& at,
                         const Tensor& analytic_grad, const FdOptions& opts) {
  if (!(at.shape() == analytic_grad.shape())) {
    throw ShapeError("analytic gradient shape " + analytic_grad.shape().str() +
                     " does not match parameter shape " + at.shape().str());
  }
  std::vector<std::size_t> idx(at.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (opts.subset > 0 && at.size() > opts.subset) {
    const std::size_t take = std::max<std::size_t>(opts.subset, 64);
    Rng g(derive_seed(opts.seed, 4));
    shuffle_indices(idx, g);
    idx.resize(std::min(take, idx.size()));
  }

  double worst = 0;
  Tensor probe = at;
  for (std::size_t i : idx) {
    const double saved = probe[i];
    probe[i] = saved + opts.eps;
    const double fp = f(probe);
    probe[i] = saved - opts.eps;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("non-finite function value during finite differences");
    }
    const double numeric = (fp - fm) / (2.0 * opts.eps);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace doconv
