#include "a5/network.hpp"

#include <cmath>

namespace a5 {

namespace {

Eigen::Map<const RowMajorMat> dense_weight(const LayerParams& p, const LayerSpec& s) {
  return {p.weight.data().data(), s.out, s.in};
}

Eigen::Map<const RowMajorMat> conv_weight(const LayerParams& p, const ad::ConvSpec& cs) {
  return {p.weight.data().data(), cs.out_ch, cs.patch_size()};
}

}  // namespace

Network::Network(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  shape_numel(input_shape_);  // rejects empty/non-positive dims
  shapes_.push_back(input_shape_);
  Shape cur = input_shape_;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    LayerParams p;
    std::shared_ptr<const ad::ConvSpec> cs;
    switch (l.kind) {
      case LayerKind::kDense: {
        if (cur.size() != 1 || cur[0] != l.in)
          throw ShapeError("network: dense layer " + std::to_string(i) + " expects [" +
                           std::to_string(l.in) + "], got " + shape_str(cur) +
                           " (insert a flatten layer?)");
        if (l.out <= 0) throw ShapeError("network: dense layer with non-positive width");
        p.weight = Tensor({l.out, l.in});
        p.bias = Tensor({l.out});
        cur = {l.out};
        break;
      }
      case LayerKind::kConv2d: {
        if (cur.size() != 3 || cur[0] != l.in_ch)
          throw ShapeError("network: conv layer " + std::to_string(i) + " expects [" +
                           std::to_string(l.in_ch) + ",H,W], got " + shape_str(cur));
        ad::ConvSpec spec;
        spec.in_ch = l.in_ch;
        spec.out_ch = l.out_ch;
        spec.kernel = l.kernel;
        spec.stride = l.stride;
        spec.pad = l.pad;
        spec.in_h = cur[1];
        spec.in_w = cur[2];
        spec.validate();
        cs = std::make_shared<const ad::ConvSpec>(spec);
        p.weight = Tensor({l.out_ch, l.in_ch, l.kernel, l.kernel});
        p.bias = Tensor({l.out_ch});
        cur = {l.out_ch, spec.out_h(), spec.out_w()};
        break;
      }
      case LayerKind::kRelu:
        break;
      case LayerKind::kFlatten:
        cur = {(int)shape_numel(cur)};
        break;
    }
    params_.push_back(std::move(p));
    conv_specs_.push_back(std::move(cs));
    shapes_.push_back(cur);
  }
}

Mat forward_batch(const Network& net, const Mat& x) {
  if (x.rows() != net.input_size())
    throw ShapeError("forward: input rows " + std::to_string(x.rows()) + " != network input " +
                     std::to_string(net.input_size()));
  Mat cur = x;
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    const LayerParams& p = net.params()[(size_t)i];
    switch (l.kind) {
      case LayerKind::kDense: {
        Mat next = dense_weight(p, l) * cur;
        next.colwise() += Eigen::Map<const Vec>(p.bias.data().data(), l.out);
        cur = std::move(next);
        break;
      }
      case LayerKind::kConv2d: {
        const ad::ConvSpec& cs = *net.conv_spec(i);
        cur = ad::conv2d_eval(cur, conv_weight(p, cs),
                              Eigen::Map<const Vec>(p.bias.data().data(), cs.out_ch), cs);
        break;
      }
      case LayerKind::kRelu:
        cur = cur.cwiseMax(0.0);
        break;
      case LayerKind::kFlatten:
        break;  // columns are already flat
    }
  }
  return cur;
}

Tensor forward(const Network& net, const Tensor& x) {
  if (x.shape() != net.input_shape())
    throw ShapeError("forward: input shape " + shape_str(x.shape()) + " != network input " +
                     shape_str(net.input_shape()));
  Mat out = forward_batch(net, x.data());
  return Tensor(net.output_shape(), out.col(0));
}

NetBinding bind_network(ad::Tape& tape, const Network& net, bool trainable) {
  NetBinding b;
  b.net = &net;
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    const LayerParams& p = net.params()[(size_t)i];
    if (!l.has_params()) {
      b.weight.push_back({});
      b.bias.push_back({});
      continue;
    }
    Mat w, bias;
    if (l.kind == LayerKind::kDense) {
      w = dense_weight(p, l);
      bias = Eigen::Map<const Vec>(p.bias.data().data(), l.out);
    } else {
      const ad::ConvSpec& cs = *net.conv_spec(i);
      w = conv_weight(p, cs);
      bias = Eigen::Map<const Vec>(p.bias.data().data(), cs.out_ch);
    }
    b.weight.push_back(tape.leaf(std::move(w), trainable));
    b.bias.push_back(tape.leaf(std::move(bias), trainable));
  }
  return b;
}

ad::Value forward_graph(ad::Tape& tape, const NetBinding& b, ad::Value x) {
  const Network& net = *b.net;
  if (tape.val(x).rows() != net.input_size())
    throw ShapeError("forward_graph: input rows != network input size");
  const int cols = (int)tape.val(x).cols();
  ad::Value cur = x;
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    switch (l.kind) {
      case LayerKind::kDense:
        cur = matmul(b.weight[(size_t)i], cur) + bcast_cols(b.bias[(size_t)i], cols);
        break;
      case LayerKind::kConv2d:
        cur = conv2d(cur, b.weight[(size_t)i], b.bias[(size_t)i], net.conv_spec(i));
        break;
      case LayerKind::kRelu:
        cur = relu(cur);
        break;
      case LayerKind::kFlatten:
        break;
    }
  }
  return cur;
}

std::vector<LayerParams> collect_param_grads(const ad::Tape& tape, const NetBinding& b) {
  const Network& net = *b.net;
  std::vector<LayerParams> out((size_t)net.num_layers());
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    if (!l.has_params()) continue;
    const LayerParams& p = net.params()[(size_t)i];
    Mat gw = tape.grad(b.weight[(size_t)i]);
    Mat gb = tape.grad(b.bias[(size_t)i]);
    // Weight leaves are row-major views of the tensors, so flatten row-major.
    RowMajorMat gw_rm = gw;
    out[(size_t)i].weight =
        Tensor(p.weight.shape(), Eigen::Map<const Vec>(gw_rm.data(), gw_rm.size()));
    out[(size_t)i].bias = Tensor(p.bias.shape(), Eigen::Map<const Vec>(gb.data(), gb.size()));
  }
  return out;
}

NetGrads backward(const Network& net, const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != net.input_shape())
    throw ShapeError("backward: input shape mismatch");
  if (shape_numel(grad_out.shape()) != net.output_size())
    throw ShapeError("backward: grad_out size != network output size");
  ad::Tape tape;
  NetBinding b = bind_network(tape, net, /*trainable=*/true);
  ad::Value in = tape.leaf(x.data(), true);
  ad::Value out = forward_graph(tape, b, in);
  tape.backward_seed(out, grad_out.data());
  NetGrads g;
  g.input = Tensor(x.shape(), tape.grad(in).col(0));
  g.layers = collect_param_grads(tape, b);
  return g;
}

void init_params(Network& net, const Rng& rng) {
  Rng base = rng.derive(rng_stream::kInit);
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    if (!l.has_params()) continue;
    Rng r = base.derive((std::uint64_t)i);
    LayerParams& p = net.params()[(size_t)i];
    const int fan_in = l.kind == LayerKind::kDense ? l.in : l.in_ch * l.kernel * l.kernel;
    const double stddev = std::sqrt(2.0 / (double)fan_in);
    for (Eigen::Index j = 0; j < p.weight.size(); ++j) p.weight[j] = stddev * r.normal();
    p.bias.data().setZero();
  }
}

RmsPropState RmsPropState::for_network(const Network& net, double rho, double eps) {
  RmsPropState s;
  s.rho = rho;
  s.eps = eps;
  for (const LayerParams& p : net.params()) {
    LayerParams acc;
    if (!p.weight.empty()) {
      acc.weight = Tensor(p.weight.shape());
      acc.bias = Tensor(p.bias.shape());
    }
    s.sq.push_back(std::move(acc));
  }
  return s;
}

RmsPropState RmsPropState::for_tensor(const Tensor& shape_like, double rho, double eps) {
  RmsPropState s;
  s.rho = rho;
  s.eps = eps;
  LayerParams acc;
  acc.weight = Tensor(shape_like.shape());
  s.sq.push_back(std::move(acc));
  return s;
}

namespace {

void rmsprop_update(Vec& p, const Vec& g, Vec& s, double rho, double eps, double lr) {
  if (!g.allFinite()) throw NumericError("rmsprop: non-finite gradient");
  s = rho * s + (1.0 - rho) * g.cwiseProduct(g);
  p -= lr * g.cwiseQuotient((s.cwiseSqrt().array() + eps).matrix());
}

}  // namespace

void rmsprop_step(std::vector<LayerParams>& params, const std::vector<LayerParams>& grads,
                  RmsPropState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.sq.size())
    throw ShapeError("rmsprop: parameter/gradient/state layer counts differ");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].weight.empty()) continue;
    if (grads[i].weight.shape() != params[i].weight.shape() ||
        grads[i].bias.shape() != params[i].bias.shape())
      throw ShapeError("rmsprop: gradient shape mismatch at layer " + std::to_string(i));
    rmsprop_update(params[i].weight.data(), grads[i].weight.data(), state.sq[i].weight.data(),
                   state.rho, state.eps, lr);
    rmsprop_update(params[i].bias.data(), grads[i].bias.data(), state.sq[i].bias.data(),
                   state.rho, state.eps, lr);
  }
}

void rmsprop_step(Tensor& param, const Tensor& grad, RmsPropState& state, double lr) {
  if (grad.shape() != param.shape() || state.sq.empty() ||
      state.sq[0].weight.shape() != param.shape())
    throw ShapeError("rmsprop: tensor/state shape mismatch");
  rmsprop_update(param.data(), grad.data(), state.sq[0].weight.data(), state.rho, state.eps, lr);
}

}  // namespace a5
