#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <vector>

#include "a5/error.hpp"
#include "a5/tensor.hpp"

// Reverse-mode autodiff over Eigen matrices, define-by-run: each op computes
// its value eagerly at graph-build time, so data-dependent branch decisions
// (ReLU stability masks, sign splits, clamp gates) are taken on concrete
// numbers and frozen into the recorded graph. backward() then replays the
// tape in reverse. This is the one differentiation engine in the library;
// plain network backprop, bound propagation, and every training recipe are
// graphs on this tape.
namespace a5::ad {

using Mat = Eigen::MatrixXd;

enum class Op {
  kLeaf,        // input (differentiable) or captured constant
  kAdd, kSub, kMul, kDiv, kNeg,
  kScalarMul, kScalarAdd,
  kMatMul, kTranspose,
  kAbs, kRelu, kMaxConst, kMinConst,
  kSigmoid, kExp, kLog, kSoftplus,
  kLogSumExp,   // over rows, per column: (n x m) -> (1 x m)
  kBcastCols,   // replicate (n x 1) -> (n x m)
  kChanBcast,   // (c x 1) -> (c*positions x 1), each entry repeated per position
  kConv2d,      // inputs: x, weight, bias
  kAbsConv,     // |W| * x, inputs: x, weight
  kConvTrans,   // W^T applied in conv geometry, inputs: y, weight
  kWarp,        // fixed 4-tap resampling plan (shift/rotation/perspective)
  kBlur,        // separable symmetric Gaussian, zero padding
};

// Static geometry of a conv layer application.
struct ConvSpec {
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int in_size() const { return in_ch * in_h * in_w; }
  int out_size() const { return out_ch * out_h() * out_w(); }
  int patch_size() const { return in_ch * kernel * kernel; }

  void validate() const;
};

// Per-output-pixel gather of up to 4 taps into one H x W plane; idx < 0
// marks an out-of-range tap (zero padding). Built once from sampled
// geometric parameters, then treated as a constant of the graph.
struct WarpPlan {
  int height = 0, width = 0;
  std::array<std::vector<int>, 4> idx;
  std::array<std::vector<double>, 4> w;
};

struct BlurSpec {
  std::vector<double> kernel;  // odd length, symmetric, sums to 1
  int channels = 0, height = 0, width = 0;
};

class Tape;

// Lightweight handle into a tape; ops are free functions/operators on these.
struct Value {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  Value leaf(Mat v, bool requires_grad = true);
  Value constant(Mat v) { return leaf(std::move(v), false); }
  Value constant_scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

  const Mat& val(Value v) const { return node(v.id).value; }
  bool requires_grad(Value v) const { return node(v.id).rg; }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and accumulates adjoints.
  void backward(Value root);
  // Seeds an arbitrary adjoint on `v` (same shape as its value).
  void backward_seed(Value v, const Mat& seed);

  // Adjoint accumulated on `v` by the last backward pass; zeros if none.
  Mat grad(Value v) const;

  size_t size() const { return nodes_.size(); }

  // --- internal: op construction (used by the free functions) ---
  Value emit(Op op, int a, int b, int c, Mat value, double s = 0.0);
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double s = 0.0;  // scalar payload (ScalarMul/Add, BcastCols target cols)
    Mat value;
    Mat grad;
    bool rg = false;
    std::shared_ptr<const ConvSpec> conv;
    std::shared_ptr<const WarpPlan> plan;
    std::shared_ptr<const BlurSpec> blur;
  };
  Node& node(int id) { return nodes_.at((size_t)id); }
  const Node& node(int id) const { return nodes_.at((size_t)id); }

 private:
  void accumulate(int id, const Mat& g);
  void propagate(int root_id);
  std::vector<Node> nodes_;
};

// Elementwise / scalar algebra.
Value operator+(Value a, Value b);
Value operator-(Value a, Value b);
Value operator*(Value a, Value b);  // elementwise
Value operator/(Value a, Value b);  // elementwise
Value operator-(Value a);
Value operator*(Value a, double s);
Value operator*(double s, Value a);
Value operator+(Value a, double s);
Value operator+(double s, Value a);
Value operator-(Value a, double s);

Value matmul(Value a, Value b);
Value transpose(Value a);
Value abs(Value a);
Value relu(Value a);
// Gradient convention at the tie x == c: max_const/min_const pass the
// gradient through (so pixels sitting exactly on a clamp bound can move off
// it); relu keeps subgradient 0 at 0.
Value max_const(Value a, double c);
Value min_const(Value a, double c);
Value clamp01(Value a);
Value sigmoid(Value a);
Value exp(Value a);
Value log(Value a);
Value softplus(Value a);  // log(1 + e^x), overflow-safe in both tails
Value logsumexp_rows(Value a);  // (n x m) -> (1 x m)
Value bcast_cols(Value a, int cols);
Value chan_bcast(Value a, int positions);  // (c x 1) -> (c*positions x 1)

Value conv2d(Value x, Value w, Value b, std::shared_ptr<const ConvSpec> spec);
Value absconv(Value x, Value w, std::shared_ptr<const ConvSpec> spec);
Value convtrans(Value y, Value w, std::shared_ptr<const ConvSpec> spec);
Value warp(Value x, std::shared_ptr<const WarpPlan> plan);
Value blur(Value x, std::shared_ptr<const BlurSpec> spec);

// --- tape-free kernels (shared by forward-only evaluation paths) ---

// x: (in_size x batch), w: (out_ch x in_ch*k*k), b: (out_ch x 1).
Mat conv2d_eval(const Mat& x, const Mat& w, const Mat& b, const ConvSpec& spec);
Mat absconv_eval(const Mat& x, const Mat& w, const ConvSpec& spec);
Mat convtrans_eval(const Mat& y, const Mat& w, const ConvSpec& spec);
Mat warp_eval(const Mat& x, const WarpPlan& plan);
Mat blur_eval(const Mat& x, const BlurSpec& spec);

}  // namespace a5::ad
