#include "a5/ad.hpp"

#include <cmath>
#include <string>

namespace a5::ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("ad: " + what);
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string("ad: ") + op + " operand shapes differ: " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Patch matrix: row (c*k + ki)*k + kj, column oh*out_w + ow. Out-of-range
// taps stay zero (zero padding).
Mat im2col(const Eigen::Ref<const Eigen::VectorXd>& x, const ConvSpec& s) {
  const int oh_n = s.out_h(), ow_n = s.out_w(), k = s.kernel;
  Mat p = Mat::Zero(s.patch_size(), (Eigen::Index)oh_n * ow_n);
  for (int c = 0; c < s.in_ch; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int pr = (c * k + ki) * k + kj;
        for (int oh = 0; oh < oh_n; ++oh) {
          const int ih = oh * s.stride - s.pad + ki;
          if (ih < 0 || ih >= s.in_h) continue;
          const int in_row_base = (c * s.in_h + ih) * s.in_w;
          for (int ow = 0; ow < ow_n; ++ow) {
            const int iw = ow * s.stride - s.pad + kj;
            if (iw < 0 || iw >= s.in_w) continue;
            p(pr, oh * ow_n + ow) = x[in_row_base + iw];
          }
        }
      }
    }
  }
  return p;
}

// Adjoint of im2col: scatter-add patch rows back into the image.
void col2im_add(const Mat& p, const ConvSpec& s, Eigen::Ref<Eigen::VectorXd> x) {
  const int oh_n = s.out_h(), ow_n = s.out_w(), k = s.kernel;
  for (int c = 0; c < s.in_ch; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int pr = (c * k + ki) * k + kj;
        for (int oh = 0; oh < oh_n; ++oh) {
          const int ih = oh * s.stride - s.pad + ki;
          if (ih < 0 || ih >= s.in_h) continue;
          const int in_row_base = (c * s.in_h + ih) * s.in_w;
          for (int ow = 0; ow < ow_n; ++ow) {
            const int iw = ow * s.stride - s.pad + kj;
            if (iw < 0 || iw >= s.in_w) continue;
            x[in_row_base + iw] += p(pr, oh * ow_n + ow);
          }
        }
      }
    }
  }
}

using RowMajorMap = Eigen::Map<RowMajorMat>;
using ConstRowMajorMap = Eigen::Map<const RowMajorMat>;

void blur_plane(Eigen::Ref<RowMajorMat> plane, const std::vector<double>& kernel) {
  const int rad = ((int)kernel.size() - 1) / 2;
  const int h = (int)plane.rows(), w = (int)plane.cols();
  RowMajorMat tmp = RowMajorMat::Zero(h, w);
  for (int i = 0; i < h; ++i) {    // horizontal pass
    for (int j = 0; j < w; ++j) {
      double acc = 0;
      for (int t = -rad; t <= rad; ++t) {
        const int jj = j + t;
        if (jj >= 0 && jj < w) acc += kernel[(size_t)(t + rad)] * plane(i, jj);
      }
      tmp(i, j) = acc;
    }
  }
  for (int j = 0; j < w; ++j) {    // vertical pass
    for (int i = 0; i < h; ++i) {
      double acc = 0;
      for (int t = -rad; t <= rad; ++t) {
        const int ii = i + t;
        if (ii >= 0 && ii < h) acc += kernel[(size_t)(t + rad)] * tmp(ii, j);
      }
      plane(i, j) = acc;
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || pad < 0 || in_h <= 0 ||
      in_w <= 0)
    throw ShapeError("conv: non-positive geometry");
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel)
    throw ShapeError("conv: kernel larger than padded input");
}

Mat conv2d_eval(const Mat& x, const Mat& w, const Mat& b, const ConvSpec& spec) {
  require(x.rows() == spec.in_size(), "conv2d input rows != in_ch*in_h*in_w");
  require(w.rows() == spec.out_ch && w.cols() == spec.patch_size(),
          "conv2d weight shape != (out_ch, in_ch*k*k)");
  require(b.rows() == spec.out_ch && b.cols() == 1, "conv2d bias shape != (out_ch, 1)");
  const Eigen::Index pos = (Eigen::Index)spec.out_h() * spec.out_w();
  Mat out(spec.out_size(), x.cols());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    Mat p = im2col(x.col(col), spec);
    RowMajorMap y(out.col(col).data(), spec.out_ch, pos);
    y.noalias() = w * p;
    y.colwise() += b.col(0);
  }
  return out;
}

Mat absconv_eval(const Mat& x, const Mat& w, const ConvSpec& spec) {
  require(x.rows() == spec.in_size(), "absconv input rows != in_ch*in_h*in_w");
  require(w.rows() == spec.out_ch && w.cols() == spec.patch_size(),
          "absconv weight shape != (out_ch, in_ch*k*k)");
  const Eigen::Index pos = (Eigen::Index)spec.out_h() * spec.out_w();
  const Mat wa = w.cwiseAbs();
  Mat out(spec.out_size(), x.cols());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    Mat p = im2col(x.col(col), spec);
    RowMajorMap y(out.col(col).data(), spec.out_ch, pos);
    y.noalias() = wa * p;
  }
  return out;
}

Mat convtrans_eval(const Mat& y, const Mat& w, const ConvSpec& spec) {
  require(y.rows() == spec.out_size(), "convtrans input rows != out_ch*out_h*out_w");
  require(w.rows() == spec.out_ch && w.cols() == spec.patch_size(),
          "convtrans weight shape != (out_ch, in_ch*k*k)");
  const Eigen::Index pos = (Eigen::Index)spec.out_h() * spec.out_w();
  Mat out = Mat::Zero(spec.in_size(), y.cols());
  for (Eigen::Index col = 0; col < y.cols(); ++col) {
    ConstRowMajorMap ym(y.col(col).data(), spec.out_ch, pos);
    Mat p = w.transpose() * ym;
    col2im_add(p, spec, out.col(col));
  }
  return out;
}

Mat warp_eval(const Mat& x, const WarpPlan& plan) {
  const Eigen::Index npix = (Eigen::Index)plan.height * plan.width;
  require(npix > 0 && x.rows() % npix == 0, "warp: rows not a multiple of plane size");
  const Eigen::Index channels = x.rows() / npix;
  Mat out = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      const Eigen::Index base = c * npix;
      for (Eigen::Index p = 0; p < npix; ++p) {
        double acc = 0;
        for (int t = 0; t < 4; ++t) {
          const int src = plan.idx[(size_t)t][(size_t)p];
          if (src >= 0) acc += plan.w[(size_t)t][(size_t)p] * x(base + src, col);
        }
        out(base + p, col) = acc;
      }
    }
  }
  return out;
}

Mat blur_eval(const Mat& x, const BlurSpec& spec) {
  const Eigen::Index npix = (Eigen::Index)spec.height * spec.width;
  require(x.rows() == (Eigen::Index)spec.channels * npix, "blur: rows != channels*h*w");
  require(spec.kernel.size() % 2 == 1, "blur: kernel length must be odd");
  Mat out = x;
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    for (int c = 0; c < spec.channels; ++c) {
      RowMajorMap plane(out.col(col).data() + (Eigen::Index)c * npix, spec.height, spec.width);
      blur_plane(plane, spec.kernel);
    }
  }
  return out;
}

Value Tape::leaf(Mat v, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  n.rg = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, (int)nodes_.size() - 1};
}

Value Tape::emit(Op op, int a, int b, int c, Mat value, double s) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.c = c;
  n.s = s;
  n.value = std::move(value);
  n.rg = (a >= 0 && node(a).rg) || (b >= 0 && node(b).rg) || (c >= 0 && node(c).rg);
  nodes_.push_back(std::move(n));
  return Value{this, (int)nodes_.size() - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = node(id);
  if (!n.rg) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

Mat Tape::grad(Value v) const {
  const Node& n = node(v.id);
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Value root) {
  const Node& r = node(root.id);
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw ShapeError("ad: backward root must be 1x1 (got " + std::to_string(r.value.rows()) +
                     "x" + std::to_string(r.value.cols()) + ")");
  backward_seed(root, Mat::Ones(1, 1));
}

void Tape::backward_seed(Value v, const Mat& seed) {
  check_same_shape(node(v.id).value, seed, "backward_seed");
  if (!node(v.id).rg)
    throw Error("ad: backward on a value with no differentiable inputs");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  node(v.id).grad = seed;
  propagate(v.id);
}

void Tape::propagate(int root_id) {
  for (int id = root_id; id >= 0; --id) {
    const Node& n = node(id);
    if (!n.rg || n.grad.size() == 0) continue;
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::kSub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::kMul:
        accumulate(n.a, g.cwiseProduct(node(n.b).value));
        accumulate(n.b, g.cwiseProduct(node(n.a).value));
        break;
      case Op::kDiv: {
        const Mat& va = node(n.a).value;
        const Mat& vb = node(n.b).value;
        accumulate(n.a, g.cwiseQuotient(vb));
        accumulate(n.b, -(g.cwiseProduct(va).cwiseQuotient(vb.cwiseProduct(vb))));
        break;
      }
      case Op::kNeg:
        accumulate(n.a, -g);
        break;
      case Op::kScalarMul:
        accumulate(n.a, g * n.s);
        break;
      case Op::kScalarAdd:
        accumulate(n.a, g);
        break;
      case Op::kMatMul:
        accumulate(n.a, g * node(n.b).value.transpose());
        accumulate(n.b, node(n.a).value.transpose() * g);
        break;
      case Op::kTranspose:
        accumulate(n.a, g.transpose());
        break;
      case Op::kAbs:
        accumulate(n.a, g.cwiseProduct(node(n.a).value.array().sign().matrix()));
        break;
      case Op::kRelu:
        accumulate(n.a, (g.array() * (node(n.a).value.array() > 0.0).cast<double>()).matrix());
        break;
      case Op::kMaxConst:
        accumulate(n.a, (g.array() * (node(n.a).value.array() >= n.s).cast<double>()).matrix());
        break;
      case Op::kMinConst:
        accumulate(n.a, (g.array() * (node(n.a).value.array() <= n.s).cast<double>()).matrix());
        break;
      case Op::kSigmoid: {
        const Mat& y = n.value;
        accumulate(n.a, (g.array() * y.array() * (1.0 - y.array())).matrix());
        break;
      }
      case Op::kExp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case Op::kLog:
        accumulate(n.a, g.cwiseQuotient(node(n.a).value));
        break;
      case Op::kSoftplus: {
        const Mat& x = node(n.a).value;
        Mat gx(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double v = x(i, j);
            const double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
            gx(i, j) = g(i, j) * sig;
          }
        accumulate(n.a, gx);
        break;
      }
      case Op::kLogSumExp: {
        const Mat& x = node(n.a).value;
        Mat gx(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          gx.col(j) = g(0, j) * (x.col(j).array() - n.value(0, j)).exp().matrix();
        accumulate(n.a, gx);
        break;
      }
      case Op::kBcastCols:
        accumulate(n.a, g.rowwise().sum());
        break;
      case Op::kChanBcast: {
        const Eigen::Index pos = (Eigen::Index)n.s;
        const Eigen::Index ch = node(n.a).value.rows();
        Mat gx(ch, 1);
        for (Eigen::Index c = 0; c < ch; ++c) gx(c, 0) = g.block(c * pos, 0, pos, 1).sum();
        accumulate(n.a, gx);
        break;
      }
      case Op::kConv2d: {
        const ConvSpec& s = *n.conv;
        const Mat& x = node(n.a).value;
        const Mat& w = node(n.b).value;
        const Eigen::Index pos = (Eigen::Index)s.out_h() * s.out_w();
        Mat gx = Mat::Zero(x.rows(), x.cols());
        Mat gw = Mat::Zero(w.rows(), w.cols());
        Mat gb = Mat::Zero(s.out_ch, 1);
        for (Eigen::Index col = 0; col < x.cols(); ++col) {
          ConstRowMajorMap gy(g.col(col).data(), s.out_ch, pos);
          if (node(n.a).rg) {
            Mat gp = w.transpose() * gy;
            col2im_add(gp, s, gx.col(col));
          }
          if (node(n.b).rg) gw.noalias() += gy * im2col(x.col(col), s).transpose();
          if (node(n.c).rg) gb += gy.rowwise().sum();
        }
        accumulate(n.a, gx);
        accumulate(n.b, gw);
        accumulate(n.c, gb);
        break;
      }
      case Op::kAbsConv: {
        const ConvSpec& s = *n.conv;
        const Mat& x = node(n.a).value;
        const Mat& w = node(n.b).value;
        const Eigen::Index pos = (Eigen::Index)s.out_h() * s.out_w();
        const Mat wa = w.cwiseAbs();
        Mat gx = Mat::Zero(x.rows(), x.cols());
        Mat gw = Mat::Zero(w.rows(), w.cols());
        for (Eigen::Index col = 0; col < x.cols(); ++col) {
          ConstRowMajorMap gy(g.col(col).data(), s.out_ch, pos);
          if (node(n.a).rg) {
            Mat gp = wa.transpose() * gy;
            col2im_add(gp, s, gx.col(col));
          }
          if (node(n.b).rg) gw.noalias() += gy * im2col(x.col(col), s).transpose();
        }
        accumulate(n.a, gx);
        // d|w|/dw = sign(w), taken locally constant (0 at exactly 0).
        if (node(n.b).rg)
          accumulate(n.b, gw.cwiseProduct(w.array().sign().matrix()));
        break;
      }
      case Op::kConvTrans: {
        const ConvSpec& s = *n.conv;
        const Mat& y = node(n.a).value;
        const Mat& w = node(n.b).value;
        const Eigen::Index pos = (Eigen::Index)s.out_h() * s.out_w();
        Mat gy = Mat::Zero(y.rows(), y.cols());
        Mat gw = Mat::Zero(w.rows(), w.cols());
        for (Eigen::Index col = 0; col < y.cols(); ++col) {
          if (node(n.a).rg) {
            Mat p = im2col(g.col(col), s);
            RowMajorMap gym(gy.col(col).data(), s.out_ch, pos);
            gym.noalias() = w * p;
          }
          if (node(n.b).rg) {
            ConstRowMajorMap ym(y.col(col).data(), s.out_ch, pos);
            gw.noalias() += ym * im2col(g.col(col), s).transpose();
          }
        }
        accumulate(n.a, gy);
        accumulate(n.b, gw);
        break;
      }
      case Op::kWarp: {
        const WarpPlan& plan = *n.plan;
        const Mat& x = node(n.a).value;
        const Eigen::Index npix = (Eigen::Index)plan.height * plan.width;
        const Eigen::Index channels = x.rows() / npix;
        Mat gx = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index col = 0; col < x.cols(); ++col) {
          for (Eigen::Index c = 0; c < channels; ++c) {
            const Eigen::Index base = c * npix;
            for (Eigen::Index p = 0; p < npix; ++p) {
              const double gp = g(base + p, col);
              if (gp == 0) continue;
              for (int t = 0; t < 4; ++t) {
                const int src = plan.idx[(size_t)t][(size_t)p];
                if (src >= 0) gx(base + src, col) += plan.w[(size_t)t][(size_t)p] * gp;
              }
            }
          }
        }
        accumulate(n.a, gx);
        break;
      }
      case Op::kBlur:
        // Symmetric zero-padded kernel: the blur operator is self-adjoint.
        accumulate(n.a, blur_eval(g, *n.blur));
        break;
    }
  }
}

namespace {

Tape* same_tape(Value a, Value b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    throw Error("ad: operands from different tapes");
  return a.tape;
}

}  // namespace

Value operator+(Value a, Value b) {
  Tape* t = same_tape(a, b);
  check_same_shape(t->val(a), t->val(b), "add");
  return t->emit(Op::kAdd, a.id, b.id, -1, t->val(a) + t->val(b));
}

Value operator-(Value a, Value b) {
  Tape* t = same_tape(a, b);
  check_same_shape(t->val(a), t->val(b), "sub");
  return t->emit(Op::kSub, a.id, b.id, -1, t->val(a) - t->val(b));
}

Value operator*(Value a, Value b) {
  Tape* t = same_tape(a, b);
  check_same_shape(t->val(a), t->val(b), "mul");
  return t->emit(Op::kMul, a.id, b.id, -1, t->val(a).cwiseProduct(t->val(b)));
}

Value operator/(Value a, Value b) {
  Tape* t = same_tape(a, b);
  check_same_shape(t->val(a), t->val(b), "div");
  return t->emit(Op::kDiv, a.id, b.id, -1, t->val(a).cwiseQuotient(t->val(b)));
}

Value operator-(Value a) { return a.tape->emit(Op::kNeg, a.id, -1, -1, -a.tape->val(a)); }

Value operator*(Value a, double s) {
  return a.tape->emit(Op::kScalarMul, a.id, -1, -1, a.tape->val(a) * s, s);
}
Value operator*(double s, Value a) { return a * s; }

Value operator+(Value a, double s) {
  return a.tape->emit(Op::kScalarAdd, a.id, -1, -1, (a.tape->val(a).array() + s).matrix(), s);
}
Value operator+(double s, Value a) { return a + s; }
Value operator-(Value a, double s) { return a + (-s); }

Value matmul(Value a, Value b) {
  Tape* t = same_tape(a, b);
  if (t->val(a).cols() != t->val(b).rows())
    throw ShapeError("ad: matmul inner dimensions differ: " + std::to_string(t->val(a).cols()) +
                     " vs " + std::to_string(t->val(b).rows()));
  return t->emit(Op::kMatMul, a.id, b.id, -1, t->val(a) * t->val(b));
}

Value transpose(Value a) {
  return a.tape->emit(Op::kTranspose, a.id, -1, -1, a.tape->val(a).transpose());
}

Value abs(Value a) { return a.tape->emit(Op::kAbs, a.id, -1, -1, a.tape->val(a).cwiseAbs()); }

Value relu(Value a) {
  return a.tape->emit(Op::kRelu, a.id, -1, -1, a.tape->val(a).cwiseMax(0.0));
}

Value max_const(Value a, double c) {
  return a.tape->emit(Op::kMaxConst, a.id, -1, -1, a.tape->val(a).cwiseMax(c), c);
}

Value min_const(Value a, double c) {
  return a.tape->emit(Op::kMinConst, a.id, -1, -1, a.tape->val(a).cwiseMin(c), c);
}

Value clamp01(Value a) { return min_const(max_const(a, 0.0), 1.0); }

Value sigmoid(Value a) {
  // Stable in both tails: never exponentiates a positive number.
  Eigen::ArrayXXd x = a.tape->val(a).array();
  Eigen::ArrayXXd y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      if (v >= 0) {
        y(i, j) = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double e = std::exp(v);
        y(i, j) = e / (1.0 + e);
      }
    }
  }
  return a.tape->emit(Op::kSigmoid, a.id, -1, -1, y.matrix());
}

Value exp(Value a) {
  return a.tape->emit(Op::kExp, a.id, -1, -1, a.tape->val(a).array().exp().matrix());
}

Value log(Value a) {
  return a.tape->emit(Op::kLog, a.id, -1, -1, a.tape->val(a).array().log().matrix());
}

Value softplus(Value a) {
  const Mat& x = a.tape->val(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      y(i, j) = v >= 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
  return a.tape->emit(Op::kSoftplus, a.id, -1, -1, std::move(y));
}

Value logsumexp_rows(Value a) {
  const Mat& x = a.tape->val(a);
  Mat out(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).maxCoeff();
    out(0, j) = m + std::log((x.col(j).array() - m).exp().sum());
  }
  return a.tape->emit(Op::kLogSumExp, a.id, -1, -1, std::move(out));
}

Value bcast_cols(Value a, int cols) {
  const Mat& x = a.tape->val(a);
  if (x.cols() != 1) throw ShapeError("ad: bcast_cols expects a single-column value");
  return a.tape->emit(Op::kBcastCols, a.id, -1, -1, x.replicate(1, cols), (double)cols);
}

Value chan_bcast(Value a, int positions) {
  const Mat& x = a.tape->val(a);
  if (x.cols() != 1) throw ShapeError("ad: chan_bcast expects a single-column value");
  if (positions <= 0) throw ShapeError("ad: chan_bcast needs positive position count");
  Mat y(x.rows() * positions, 1);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    y.block(c * positions, 0, positions, 1).setConstant(x(c, 0));
  return a.tape->emit(Op::kChanBcast, a.id, -1, -1, std::move(y), (double)positions);
}

Value conv2d(Value x, Value w, Value b, std::shared_ptr<const ConvSpec> spec) {
  Tape* t = same_tape(x, w);
  same_tape(w, b);
  spec->validate();
  Value out = t->emit(Op::kConv2d, x.id, w.id, b.id,
                      conv2d_eval(t->val(x), t->val(w), t->val(b), *spec));
  t->node(out.id).conv = std::move(spec);
  return out;
}

Value absconv(Value x, Value w, std::shared_ptr<const ConvSpec> spec) {
  Tape* t = same_tape(x, w);
  spec->validate();
  Value out = t->emit(Op::kAbsConv, x.id, w.id, -1, absconv_eval(t->val(x), t->val(w), *spec));
  t->node(out.id).conv = std::move(spec);
  return out;
}

Value convtrans(Value y, Value w, std::shared_ptr<const ConvSpec> spec) {
  Tape* t = same_tape(y, w);
  spec->validate();
  Value out =
      t->emit(Op::kConvTrans, y.id, w.id, -1, convtrans_eval(t->val(y), t->val(w), *spec));
  t->node(out.id).conv = std::move(spec);
  return out;
}

Value warp(Value x, std::shared_ptr<const WarpPlan> plan) {
  Tape* t = x.tape;
  Value out = t->emit(Op::kWarp, x.id, -1, -1, warp_eval(t->val(x), *plan));
  t->node(out.id).plan = std::move(plan);
  return out;
}

Value blur(Value x, std::shared_ptr<const BlurSpec> spec) {
  Tape* t = x.tape;
  Value out = t->emit(Op::kBlur, x.id, -1, -1, blur_eval(t->val(x), *spec));
  t->node(out.id).blur = std::move(spec);
  return out;
}

}  // namespace a5::ad
