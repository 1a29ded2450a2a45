#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "doconv/doconv.hpp"
#include "doconv/geometry.hpp"
#include "doconv/tensor.hpp"

namespace doconv {

enum class LayerKind { Conv, DoConv, DoDConv, Relu, MaxPool, Flatten, Dense, SoftmaxCE };
enum class DInit { Identity, Random };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  ConvGeometry geom;       // Conv/DoConv/DoDConv
  std::size_t units = 0;   // Dense
  bool bias = true;        // Conv/DoConv/DoDConv/Dense
  DInit d_init = DInit::Identity;
};

struct ShapeHWC {
  std::size_t h = 0, w = 0, c = 0;
};

// Ordered layer descriptors; consecutive shapes must chain and the single loss
// head must come last.
struct NetworkSpec {
  std::size_t in_h = 0, in_w = 0, in_c = 1;
  std::vector<LayerSpec> layers;

  void validate() const;
  // Output shape of every layer (flattened stages have h=w=1, c=features).
  std::vector<ShapeHWC> layer_shapes() const;
  std::size_t num_classes() const;

  // The comparison-protocol variant: every non-pointwise Conv becomes a DoConv
  // with d_mul = m*n; everything else (and every hyperparameter) is untouched.
  NetworkSpec doconv_variant() const;
};

// The desk-scale reference net:
// conv3x3(c->8) relu maxpool2 conv3x3(8->16) relu maxpool2 flatten dense(classes) softmax-ce.
NetworkSpec reference_net(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                          std::size_t classes = 10);

struct Layer {
  LayerSpec spec;
  Tensor w;      // conv kernel / dense weight; the folded kernel once folded
  Tensor d_res;  // D', present iff has_d
  Tensor bias;   // present iff has_bias
  bool has_d = false;
  bool has_bias = false;
  bool folded = false;
  bool do_skipped = false;  // DoConv requested on a 1x1 kernel -> plain conv

  DoConvParams do_params() const;  // assembles the DoConvParams view (unfolded DO layers)
};

struct ParamRef {
  std::string id;  // "L<i>.W" | "L<i>.D" | "L<i>.b"
  Tensor* tensor;
};

// Gradients keyed by parameter id, shapes mirroring the parameters.
using GradSet = std::map<std::string, Tensor>;

class Network {
 public:
  // Draws fan-in-scaled weights from per-layer streams derived from `seed`.
  // A DoConv layer draws W from the same stream a plain Conv would, so the
  // baseline and the over-parameterized variant share their W initialization;
  // D' starts at zero (identity D) unless the spec asks for random init.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  static Network from_parts(NetworkSpec spec, std::vector<Layer> layers, bool folded);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  bool folded() const { return folded_; }
  std::size_t num_classes() const { return spec_.num_classes(); }

  std::vector<ParamRef> parameters();
  std::size_t param_count() const;

  // Folded copy: every DO layer keeps only its composite kernel. The network
  // function is unchanged.
  Network fold() const;

  // Logits for one [h, w, c] image (the loss head is not applied).
  Tensor forward(const Tensor& image, Composition mode = Composition::Kernel) const;

  // Softmax cross-entropy loss for one sample; accumulates parameter gradients
  // into `grads` (which must hold zero-initialized tensors keyed by param id,
  // see zero_grads). Sets `correct` to the argmax-vs-label outcome when given,
  // ties broken toward the lowest class index.
  double backward_sample(const Tensor& image, int label, Composition mode, GradSet& grads,
                         bool* correct = nullptr) const;

  GradSet zero_grads() const;

  std::string layer_label(std::size_t i) const;  // "L2 (doconv 3x3 8->16)"

 private:
  NetworkSpec spec_;
  std::vector<Layer> layers_;
  bool folded_ = false;
};

// Stable softmax cross-entropy: returns loss, writes p - onehot into grad.
double softmax_cross_entropy(const Tensor& logits, int label, Tensor* grad);

// Argmax with ties broken toward the lowest index.
std::size_t argmax_lowest(const Tensor& v);

}  // namespace doconv
