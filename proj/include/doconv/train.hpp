#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "doconv/model_io.hpp"
#include "doconv/net.hpp"

namespace doconv {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  LrSchedule schedule = LrSchedule::Constant;
  Composition mode = Composition::Kernel;
  bool freeze_d = false;  // keep D' pinned at its initial value
};

// SGD with momentum; velocity tensors mirror the parameter shapes.
struct OptimizerState {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool freeze_d = false;
  std::map<std::string, Tensor> velocity;

  static OptimizerState init(Network& net, const TrainConfig& cfg);
};

// v <- mu*v - lr*(g + wd*p); p <- p + v, elementwise. Decay acts on the stored
// parameters (W and D'), so it never pulls the effective D away from identity.
// Throws NumericError naming the layer if an update goes non-finite.
void sgd_step(Network& net, const GradSet& grads, OptimizerState& opt);

struct EpochStats {
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0;
  std::size_t steps = 0;
  bool diverged = false;

  double final_train_loss() const { return epochs.empty() ? 0.0 : epochs.back().train_loss; }
  double final_test_acc() const { return epochs.empty() ? 0.0 : epochs.back().test_acc; }
};

struct EvalStats {
  double mean_loss = 0;
  double accuracy = 0;
};

EvalStats evaluate(const Network& net, const DatasetHandle& data,
                   Composition mode = Composition::Kernel);

// Deterministic given (spec, data, cfg, seed): fixed init streams and a fixed
// shuffle stream, single-threaded sample order. Aborts early (diverged=true)
// if the loss goes non-finite. When out_net is given it receives the trained
// network.
TrainReport train_run(const NetworkSpec& spec, const DatasetHandle& train,
                      const DatasetHandle& test, const TrainConfig& cfg, std::uint64_t seed,
                      Network* out_net = nullptr);

struct FdOptions {
  double eps = 1e-5;
  std::size_t subset = 0;  // 0 = every element; otherwise a random subset (>= 64)
  std::uint64_t seed = 1;
};

// Central-difference check of an analytic gradient of a scalar function of one
// tensor. Returns the max relative error with denominator max(|a|, |n|, 1e-8).
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& at,
                         const Tensor& analytic_grad, const FdOptions& opts = {});

}  // namespace doconv
