#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "doconv/tensor.hpp"

namespace doconv::checks {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct EquivalenceStats {
  std::size_t configs = 0;
  double max_err = 0;
};

// Randomized feature-vs-kernel agreement sweep over m,n in {1..3},
// d_mul in {m*n-1 (when > 0), m*n, m*n+2, 2*m*n}, c_in/c_out in {1..4} and
// groups in {1, c_in}. Runs at least min_configs valid configurations.
EquivalenceStats equivalence_sweep(std::size_t min_configs, std::uint64_t seed);

// Same agreement for the over-parameterized depthwise operator.
EquivalenceStats dodconv_equivalence_sweep(std::size_t configs, std::uint64_t seed);

// Worst finite-difference relative error across the op-level parameter
// gradients (conv W/bias, depthwise, doconv W/D'/bias, dodconv, dense via a
// small net) over `seeds` random instances.
double gradient_suite_max_rel(std::size_t seeds, std::uint64_t base_seed);

// Exhaustive 6x6 input, 3x3 kernel: largest |output change| at positions whose
// window excludes the perturbed pixel, both composition modes. Must be 0.
double receptive_field_leak();

struct RankStats {
  std::size_t rank_square = 0;  // d_mul = m*n = 4, identity-init D
  std::size_t rank_sub = 0;     // d_mul = 3
};

// Ranks of the per-channel (m*n) x d_mul fold matrices for m*n = 4.
RankStats expressiveness_rank();

// Gaussian-elimination rank with a relative pivot tolerance.
std::size_t matrix_rank(const Tensor& m);

struct NeutralityStats {
  double max_out_diff = 0;
  double max_gradw_diff = 0;
};

// Baseline net vs DO variant with shared W at step 0: output and dW gaps on
// random batches.
NeutralityStats init_neutrality(std::uint64_t seed, std::size_t batch = 8);

// max |kernel-mode forward - conv(folded kernel)| on random params; the two
// share a code path, so this must be exactly 0.
double fold_infer_gap(std::uint64_t seed);

struct CheckOptions {
  std::size_t equivalence_configs = 200;
  std::size_t grad_seeds = 20;
  std::uint64_t seed = 7;
};

// The invariant suite behind the `check` subcommand.
std::vector<PropertyResult> run_property_suite(const CheckOptions& opts = {});

}  // namespace doconv::checks
