#include "a5/bounds.hpp"

#include <cmath>

namespace a5 {

using ad::Tape;
using ad::Value;

Mat MarginSpec::matrix() const {
  Mat s = Mat::Zero(num_classes, num_classes);
  for (int j = 0; j < num_classes; ++j) {
    if (j == true_class) continue;
    s(j, true_class) = 1.0;
    s(j, j) = -1.0;
  }
  return s;
}

Mat MarginSpec::reduced_matrix() const {
  Mat s = Mat::Zero(num_classes - 1, num_classes);
  for (int r = 0; r < num_classes - 1; ++r) {
    s(r, true_class) = 1.0;
    s(r, reduced_class(r)) = -1.0;
  }
  return s;
}

IbpStages ibp_graph(Tape& tape, const NetBinding& b, Value center, double radius, bool clip01,
                    BoundDiagnostics* diag) {
  const Network& net = *b.net;
  if (tape.val(center).rows() != net.input_size() || tape.val(center).cols() != 1)
    throw ShapeError("ibp: center must be a (input_size x 1) column");
  if (!(radius >= 0.0) || !std::isfinite(radius))
    throw NumericError("ibp: radius must be finite and >= 0");

  Value lo = center + (-radius);
  Value hi = center + radius;
  if (diag != nullptr && clip01) {
    const Mat& l = tape.val(lo);
    const Mat& h = tape.val(hi);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      diag->min_clip_gap = std::min({diag->min_clip_gap, std::abs(l(i, 0)),
                                     std::abs(l(i, 0) - 1.0), std::abs(h(i, 0)),
                                     std::abs(h(i, 0) - 1.0)});
    }
  }
  if (clip01) {
    lo = clamp01(lo);
    hi = clamp01(hi);
  }

  IbpStages st;
  st.stages.push_back({lo, hi});
  for (int i = 0; i < net.num_layers(); ++i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    switch (l.kind) {
      case LayerKind::kDense: {
        Value c = (lo + hi) * 0.5;
        Value r = (hi - lo) * 0.5;
        Value oc = matmul(b.weight[(size_t)i], c) + b.bias[(size_t)i];
        Value orr = matmul(abs(b.weight[(size_t)i]), r);
        lo = oc - orr;
        hi = oc + orr;
        break;
      }
      case LayerKind::kConv2d: {
        Value c = (lo + hi) * 0.5;
        Value r = (hi - lo) * 0.5;
        Value oc = conv2d(c, b.weight[(size_t)i], b.bias[(size_t)i], net.conv_spec(i));
        Value orr = absconv(r, b.weight[(size_t)i], net.conv_spec(i));
        lo = oc - orr;
        hi = oc + orr;
        break;
      }
      case LayerKind::kRelu: {
        if (diag != nullptr) {
          const Mat& l0 = tape.val(lo);
          const Mat& h0 = tape.val(hi);
          for (Eigen::Index j = 0; j < l0.rows(); ++j)
            diag->min_relu_gap =
                std::min(diag->min_relu_gap, std::min(std::abs(l0(j, 0)), std::abs(h0(j, 0))));
        }
        lo = relu(lo);
        hi = relu(hi);
        break;
      }
      case LayerKind::kFlatten:
        break;
    }
    st.stages.push_back({lo, hi});
  }
  return st;
}

namespace {

// Backward linear relaxation from the (reduced) margin spec down to the
// input box, as a graph. `st` must hold the interval chain of the same
// binding. Returns reduced margins (num_classes-1 x 1).
Value crown_core(Tape& tape, const NetBinding& b, const IbpStages& st, const MarginSpec& spec,
                 BoundDiagnostics* diag) {
  const Network& net = *b.net;
  const int k = spec.num_classes - 1;

  auto track_coefs = [&](Value at) {
    if (diag == nullptr) return;
    const Mat& a = tape.val(at);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double v = std::abs(a(i, j));
        // Exact zeros are structural (no path / masked-off neuron) and stay
        // zero under parameter perturbations; they are not sign-split kinks.
        if (v > 0.0) diag->min_coef_abs = std::min(diag->min_coef_abs, v);
      }
  };

  // Columns of `at` are the margin rows; running invariant:
  //   margins >= at^T h_i + d  for the input h_i of the layer being visited.
  Value at = tape.constant(spec.reduced_matrix().transpose());
  Value d = tape.constant(Mat::Zero(k, 1));

  for (int i = net.num_layers() - 1; i >= 0; --i) {
    const LayerSpec& l = net.layers()[(size_t)i];
    switch (l.kind) {
      case LayerKind::kDense:
        d = d + matmul(transpose(at), b.bias[(size_t)i]);
        at = matmul(transpose(b.weight[(size_t)i]), at);
        break;
      case LayerKind::kConv2d: {
        auto cs = net.conv_spec(i);
        const int pos = cs->out_h() * cs->out_w();
        d = d + matmul(transpose(at), chan_bcast(b.bias[(size_t)i], pos));
        at = convtrans(at, b.weight[(size_t)i], cs);
        break;
      }
      case LayerKind::kRelu: {
        Value lv = st.stages[(size_t)i].first;
        Value uv = st.stages[(size_t)i].second;
        const Mat& lo = tape.val(lv);
        const Mat& hu = tape.val(uv);
        const Eigen::Index n = lo.rows();

        // Stability masks and the adaptive lower slope are decided on the
        // concrete bounds and frozen as constants of the graph.
        Mat on = Mat::Zero(n, 1), unstable = Mat::Zero(n, 1), alpha = Mat::Zero(n, 1);
        for (Eigen::Index j = 0; j < n; ++j) {
          if (hu(j, 0) <= 0.0) continue;  // off: zero slope, zero intercept
          if (lo(j, 0) >= 0.0) {
            on(j, 0) = 1.0;
            alpha(j, 0) = 1.0;
          } else {
            unstable(j, 0) = 1.0;
            alpha(j, 0) = hu(j, 0) >= -lo(j, 0) ? 1.0 : 0.0;
            if (diag != nullptr)
              diag->min_alpha_gap =
                  std::min(diag->min_alpha_gap, std::abs(hu(j, 0) + lo(j, 0)));
          }
        }
        track_coefs(at);

        Value um = tape.constant(unstable);
        // Denominator padded to 1 on stable rows so the division never sees
        // a zero-width interval; the mask zeroes those rows anyway.
        Value denom = um * (uv - lv) + tape.constant(Mat::Ones(n, 1) - unstable);
        Value up_slope = (um * uv) / denom + tape.constant(on);
        Value up_icept = (um * (-(uv * lv))) / denom;

        const Mat& av = tape.val(at);
        Mat pos_mask = (av.array() > 0.0).cast<double>();
        Mat neg_mask = (av.array() < 0.0).cast<double>();
        Value ap = tape.constant(std::move(pos_mask)) * at;
        Value an = tape.constant(std::move(neg_mask)) * at;

        d = d + matmul(transpose(an), up_icept);
        at = ap * bcast_cols(tape.constant(alpha), k) + an * bcast_cols(up_slope, k);
        break;
      }
      case LayerKind::kFlatten:
        break;
    }
  }

  track_coefs(at);
  Value lo0 = st.stages[0].first;
  Value hi0 = st.stages[0].second;
  Value c_eff = (lo0 + hi0) * 0.5;
  Value r_eff = (hi0 - lo0) * 0.5;
  return d + matmul(transpose(at), c_eff) - matmul(transpose(abs(at)), r_eff);
}

// Reduced IBP margins straight from the last stage's interval.
Value ibp_margins(Tape& tape, const IbpStages& st, const MarginSpec& spec) {
  const int k = spec.num_classes - 1;
  Mat pick_true = Mat::Zero(k, spec.num_classes);
  Mat pick_other = Mat::Zero(k, spec.num_classes);
  for (int r = 0; r < k; ++r) {
    pick_true(r, spec.true_class) = 1.0;
    pick_other(r, spec.reduced_class(r)) = 1.0;
  }
  return matmul(tape.constant(std::move(pick_true)), st.stages.back().first) -
         matmul(tape.constant(std::move(pick_other)), st.stages.back().second);
}

MarginBounds to_margin_bounds(const Mat& reduced, const MarginSpec& spec) {
  MarginBounds mb;
  mb.true_class = spec.true_class;
  mb.margins = Vec::Zero(spec.num_classes);
  for (int r = 0; r < spec.num_classes - 1; ++r) mb.margins[spec.reduced_class(r)] = reduced(r, 0);
  return mb;
}

void check_spec(const Network& net, const MarginSpec& spec) {
  if ((Eigen::Index)spec.num_classes != net.output_size())
    throw ShapeError("margins: spec has " + std::to_string(spec.num_classes) +
                     " classes, network outputs " + std::to_string(net.output_size()));
}

void check_ball(const Network& net, const LinfBall& ball) {
  if ((Eigen::Index)shape_numel(ball.center.shape()) != net.input_size())
    throw ShapeError("bounds: ball center size != network input size");
}

}  // namespace

Value margins_graph(Tape& tape, const NetBinding& b, Value center, double radius, bool clip01,
                    const MarginSpec& spec, const BoundMethod& method, BoundDiagnostics* diag) {
  check_spec(*b.net, spec);
  IbpStages st = ibp_graph(tape, b, center, radius, clip01, diag);
  if (method.beta <= 0.0) return ibp_margins(tape, st, spec);
  Value crown = crown_core(tape, b, st, spec, diag);
  if (method.beta >= 1.0) return crown;
  return crown * method.beta + ibp_margins(tape, st, spec) * (1.0 - method.beta);
}

Value wc_xent_graph(Value reduced_margins) {
  return softplus(logsumexp_rows(-reduced_margins));
}

std::vector<IntervalBounds> ibp_bounds(const Network& net, const LinfBall& ball) {
  check_ball(net, ball);
  Tape tape;
  NetBinding b = bind_network(tape, net, /*trainable=*/false);
  Value center = tape.constant(ball.center.data());
  IbpStages st = ibp_graph(tape, b, center, ball.radius, ball.clip01, nullptr);
  std::vector<IntervalBounds> out;
  for (size_t s = 0; s < st.stages.size(); ++s) {
    const Shape& shape = net.shape_after((int)s - 1);
    out.emplace_back(Tensor(shape, tape.val(st.stages[s].first).col(0)),
                     Tensor(shape, tape.val(st.stages[s].second).col(0)));
  }
  return out;
}

MarginBounds crown_margin_lower(const Network& net,
                                const std::vector<IntervalBounds>& intermediates,
                                const MarginSpec& spec) {
  check_spec(net, spec);
  if (intermediates.size() != (size_t)net.num_layers() + 1)
    throw ShapeError("crown: expected " + std::to_string(net.num_layers() + 1) +
                     " interval stages, got " + std::to_string(intermediates.size()));
  Tape tape;
  NetBinding b = bind_network(tape, net, /*trainable=*/false);
  IbpStages st;
  for (size_t s = 0; s < intermediates.size(); ++s) {
    if (shape_numel(intermediates[s].lower.shape()) !=
        shape_numel(net.shape_after((int)s - 1)))
      throw ShapeError("crown: interval stage " + std::to_string(s) + " has wrong size");
    st.stages.push_back({tape.constant(intermediates[s].lower.data()),
                         tape.constant(intermediates[s].upper.data())});
  }
  Value m = crown_core(tape, b, st, spec, nullptr);
  return to_margin_bounds(tape.val(m), spec);
}

MarginBounds certified_margins(const Network& net, const LinfBall& ball, const MarginSpec& spec,
                               const BoundMethod& method) {
  check_ball(net, ball);
  Tape tape;
  NetBinding b = bind_network(tape, net, /*trainable=*/false);
  Value center = tape.constant(ball.center.data());
  Value m = margins_graph(tape, b, center, ball.radius, ball.clip01, spec, method, nullptr);
  return to_margin_bounds(tape.val(m), spec);
}

Vec worst_case_probs(const MarginBounds& mb) {
  Vec z = -mb.margins;
  const double shift = z.maxCoeff();
  Vec p = (z.array() - shift).exp();
  return p / p.sum();
}

double worst_case_xent(const MarginBounds& mb) {
  Vec z = -mb.margins;
  const double shift = z.maxCoeff();
  return shift + std::log((z.array() - shift).exp().sum());
}

bool certified_correct(const Network& net, const LinfBall& ball, int true_class,
                       const BoundMethod& method) {
  MarginSpec spec(true_class, (int)net.output_size());
  MarginBounds mb = certified_margins(net, ball, spec, method);
  for (int j = 0; j < spec.num_classes; ++j) {
    if (j == true_class) continue;
    if (!(mb.margins[j] > 0.0)) return false;
  }
  return true;
}

WcXentGrad wc_xent_grad(const Network& net, const LinfBall& ball, const MarginSpec& spec,
                        const BoundMethod& method) {
  check_ball(net, ball);
  Tape tape;
  NetBinding b = bind_network(tape, net, /*trainable=*/true);
  Value center = tape.leaf(ball.center.data(), /*requires_grad=*/true);
  Value m = margins_graph(tape, b, center, ball.radius, ball.clip01, spec, method, nullptr);
  Value e = wc_xent_graph(m);
  tape.backward(e);
  WcXentGrad g;
  g.value = tape.val(e)(0, 0);
  g.d_center = Tensor(ball.center.shape(), tape.grad(center).col(0));
  g.d_params = collect_param_grads(tape, b);
  return g;
}

}  // namespace a5
