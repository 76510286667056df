#pragma once

#include <limits>
#include <vector>

#include "a5/network.hpp"
#include "a5/tensor.hpp"

namespace a5 {

// l_inf ball around a point, optionally intersected with the valid pixel
// range [0,1] before any propagation (the effective box is then per-element:
// [max(c-r,0), min(c+r,1)]).
struct LinfBall {
  Tensor center;
  double radius = 0.0;
  bool clip01 = true;

  LinfBall(Tensor c, double r, bool clip = true) : center(std::move(c)), radius(r), clip01(clip) {
    if (!(radius >= 0.0) || !std::isfinite(radius))
      throw NumericError("ball: radius must be finite and >= 0");
    if (clip01) {
      for (Eigen::Index i = 0; i < center.size(); ++i)
        if (center[i] + radius < 0.0 || center[i] - radius > 1.0)
          throw NumericError("ball: [0,1] intersection is empty at element " + std::to_string(i));
    }
  }

  // Effective elementwise box.
  void box(Vec& lo, Vec& hi) const {
    lo = center.data().array() - radius;
    hi = center.data().array() + radius;
    if (clip01) {
      lo = lo.cwiseMax(0.0).cwiseMin(1.0);
      hi = hi.cwiseMax(0.0).cwiseMin(1.0);
    }
  }
};

// Elementwise activation bounds for one stage of a network.
struct IntervalBounds {
  Tensor lower, upper;

  IntervalBounds() = default;
  IntervalBounds(Tensor lo, Tensor hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.shape() != upper.shape())
      throw ShapeError("interval: lower/upper shapes differ");
    if ((lower.data().array() > upper.data().array()).any())
      throw NumericError("interval: lower exceeds upper");
  }
};

// The margin map y -> (y[true_class] - y[j])_j. Row true_class is zero.
struct MarginSpec {
  int true_class = 0;
  int num_classes = 0;

  MarginSpec(int jstar, int m) : true_class(jstar), num_classes(m) {
    if (m < 2 || jstar < 0 || jstar >= m)
      throw ShapeError("margin spec: need 0 <= true_class < num_classes, num_classes >= 2");
  }

  // Full (num_classes x num_classes) matrix, row true_class all zero.
  Mat matrix() const;
  // The (num_classes-1 x num_classes) matrix without the trivial row; row r
  // corresponds to competitor class reduced_class(r).
  Mat reduced_matrix() const;
  int reduced_class(int r) const { return r < true_class ? r : r + 1; }
};

// Certified lower bounds on all margins; margins[true_class] == 0.
struct MarginBounds {
  Vec margins;
  int true_class = 0;
};

// beta in [0,1] mixes the two bound families on the final margins:
// 0 = pure IBP, 1 = pure CROWN-IBP (backward linear relaxation over IBP
// intermediate bounds).
struct BoundMethod {
  double beta = 1.0;

  static BoundMethod ibp() { return BoundMethod{0.0}; }
  static BoundMethod crown_ibp() { return BoundMethod{1.0}; }
  static BoundMethod mixed(double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw NumericError("bound method: beta outside [0,1]");
    return BoundMethod{beta};
  }
};

// Forward interval propagation. Entry 0 is the (possibly [0,1]-clipped)
// input box; entry i+1 bounds the output of layer i. Sound for every layer
// kind; exact for the input box itself.
std::vector<IntervalBounds> ibp_bounds(const Network& net, const LinfBall& ball);

// Backward linear relaxation from the margin spec to the input, concretized
// on the input box (= intermediates[0]). `intermediates` must come from
// ibp_bounds on the same ball. Unstable ReLUs use the chord upper line
// (slope u/(u-l), intercept -ul/(u-l)) and an adaptive lower line
// (identity if u >= -l, zero otherwise).
MarginBounds crown_margin_lower(const Network& net,
                                const std::vector<IntervalBounds>& intermediates,
                                const MarginSpec& spec);

// One-call certified margins under the chosen bound method.
MarginBounds certified_margins(const Network& net, const LinfBall& ball, const MarginSpec& spec,
                               const BoundMethod& method);

// Worst-case class probabilities: softmax over the negated margin lower
// bounds (max-shift stabilized).
Vec worst_case_probs(const MarginBounds& mb);

// Worst-case cross-entropy E = log sum_k exp(-m_k). Equals ln(num_classes)
// when all margins are zero; finite for any finite margins.
double worst_case_xent(const MarginBounds& mb);

// True iff every non-trivial certified margin is strictly positive, which
// guarantees no point of the ball is classified differently from true_class.
bool certified_correct(const Network& net, const LinfBall& ball, int true_class,
                       const BoundMethod& method);

// Value and exact gradients (under the locally-constant-branch convention)
// of the worst-case cross-entropy w.r.t. the ball center and all parameters.
struct WcXentGrad {
  double value = 0.0;
  Tensor d_center;
  std::vector<LayerParams> d_params;
};
WcXentGrad wc_xent_grad(const Network& net, const LinfBall& ball, const MarginSpec& spec,
                        const BoundMethod& method);

// --- graph builders (the trainers compose these on their own tapes) ---

// Distances to the nearest branch decision taken while building a bound
// graph; a finite-difference probe with step h is trustworthy only when
// every field comfortably exceeds h.
struct BoundDiagnostics {
  double min_relu_gap = std::numeric_limits<double>::infinity();   // min(|l|,|u|) over preacts
  double min_alpha_gap = std::numeric_limits<double>::infinity();  // |u+l| over unstable preacts
  double min_coef_abs = std::numeric_limits<double>::infinity();   // |A| at sign splits
  double min_clip_gap = std::numeric_limits<double>::infinity();   // distance of c+-r to {0,1}
};

// Interval chain as tape values; stages[0] is the input box.
struct IbpStages {
  std::vector<std::pair<ad::Value, ad::Value>> stages;
};
IbpStages ibp_graph(ad::Tape& tape, const NetBinding& b, ad::Value center, double radius,
                    bool clip01, BoundDiagnostics* diag = nullptr);

// Reduced margins (num_classes-1 x 1) as a graph over the bound chain; row r
// bounds margin against spec.reduced_class(r). The trivial zero margin of the
// true class is omitted so that no gradient flows through a structurally-zero
// path; worst-case losses account for it via softplus.
ad::Value margins_graph(ad::Tape& tape, const NetBinding& b, ad::Value center, double radius,
                        bool clip01, const MarginSpec& spec, const BoundMethod& method,
                        BoundDiagnostics* diag = nullptr);

// E = log(1 + sum_j exp(-m_j)) over the reduced margins == logsumexp over
// the full margin vector including the zero row.
ad::Value wc_xent_graph(ad::Value reduced_margins);

}  // namespace a5
