#pragma once

#include <memory>
#include <string>
#include <vector>

#include "a5/ad.hpp"
#include "a5/rng.hpp"
#include "a5/tensor.hpp"

namespace a5 {

enum class LayerKind { kDense, kConv2d, kRelu, kFlatten };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int in = 0, out = 0;                                // dense
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;  // conv2d

  static LayerSpec dense(int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride, int pad) {
    LayerSpec s;
    s.kind = LayerKind::kConv2d;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::kFlatten;
    return s;
  }
  bool has_params() const { return kind == LayerKind::kDense || kind == LayerKind::kConv2d; }
};

struct LayerParams {
  Tensor weight;  // dense: [out, in]; conv: [out_ch, in_ch, k, k]
  Tensor bias;    // [out] / [out_ch]
};

// Feed-forward chain of Dense / Conv2D / ReLU / Flatten layers. Shape
// consistency is checked once at construction; parameters are zero until
// init_params or a checkpoint fills them.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<LayerSpec> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  // Output shape of layer i (input itself for i == -1).
  const Shape& shape_after(int i) const { return shapes_.at((size_t)(i + 1)); }
  const Shape& output_shape() const { return shapes_.back(); }
  int num_layers() const { return (int)layers_.size(); }
  Eigen::Index input_size() const { return shape_numel(input_shape_); }
  Eigen::Index output_size() const { return shape_numel(output_shape()); }

  // Conv geometry of layer i resolved against the actual spatial dims.
  std::shared_ptr<const ad::ConvSpec> conv_spec(int i) const { return conv_specs_.at((size_t)i); }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerParams> params_;
  std::vector<Shape> shapes_;  // input shape + one per layer
  std::vector<std::shared_ptr<const ad::ConvSpec>> conv_specs_;
};

// Plain forward pass. Input shape must match net.input_shape() exactly.
Tensor forward(const Network& net, const Tensor& x);

// Batched forward on flat columns: x is (input_size x B), result (output_size x B).
Mat forward_batch(const Network& net, const Mat& x);

// Exact reverse-mode derivatives of grad_out . forward(net, x).
struct NetGrads {
  Tensor input;
  std::vector<LayerParams> layers;  // empty tensors for layers without params
};
NetGrads backward(const Network& net, const Tensor& x, const Tensor& grad_out);

// Kaiming fan-in initialization: W ~ N(0, 2/fan_in), biases 0. Layer i draws
// from rng.derive(kInit).derive(i), so adding evaluation streams elsewhere
// never shifts initialization.
void init_params(Network& net, const Rng& rng);

// --- tape bindings (shared by bound propagation and every trainer) ---

struct NetBinding {
  const Network* net = nullptr;
  std::vector<ad::Value> weight, bias;  // invalid handles for relu/flatten
};

// Registers the network's parameters on the tape, as differentiable leaves
// (trainable) or captured constants (frozen).
NetBinding bind_network(ad::Tape& tape, const Network& net, bool trainable);

// Builds the forward graph on flat columns (input_size x B) -> (output_size x B).
ad::Value forward_graph(ad::Tape& tape, const NetBinding& b, ad::Value x);

// Parameter adjoints accumulated by the last backward pass, in layer order.
std::vector<LayerParams> collect_param_grads(const ad::Tape& tape, const NetBinding& b);

// --- RMSProp ---

// Square-gradient accumulator per parameter tensor plus the decay/stabilizer
// hyperparameters: s <- rho*s + (1-rho)*g^2; p <- p - lr*g/(sqrt(s)+eps).
struct RmsPropState {
  double rho = 0.9;
  double eps = 1e-8;
  std::vector<LayerParams> sq;

  static RmsPropState for_network(const Network& net, double rho = 0.9, double eps = 1e-8);
  static RmsPropState for_tensor(const Tensor& shape_like, double rho = 0.9, double eps = 1e-8);
};

// One update over all network parameters. Throws NumericError on non-finite
// gradients.
void rmsprop_step(std::vector<LayerParams>& params, const std::vector<LayerParams>& grads,
                  RmsPropState& state, double lr);

// Single-tensor variant (pixel-space and physical-parameter optimization);
// uses state.sq[0].weight as the accumulator.
void rmsprop_step(Tensor& param, const Tensor& grad, RmsPropState& state, double lr);

}  // namespace a5
