#include "a5/image.hpp"

#include <cmath>

#include "a5/error.hpp"

namespace a5 {
namespace {

void check_image(const Tensor& x) {
  if (x.shape().size() != 3) throw ShapeError("image: expected a (C x H x W) tensor");
}

}  // namespace

Homography identity_map() { return Homography::Identity(); }

Homography translation_map(double dx_cols, double dy_rows) {
  Homography m = Homography::Identity();
  m(0, 2) = dx_cols;
  m(1, 2) = dy_rows;
  return m;
}

Homography rotation_about_center(int h, int w, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Homography rot = Homography::Identity();
  rot(0, 0) = c;
  rot(0, 1) = -s;
  rot(1, 0) = s;
  rot(1, 1) = c;
  return translation_map(cx, cy) * rot * translation_map(-cx, -cy);
}

Homography corner_displacement_map(int h, int w, const std::array<double, 8>& corner_offsets) {
  const double x1 = w - 1.0, y1 = h - 1.0;
  const double sx[4] = {0, x1, x1, 0}, sy[4] = {0, 0, y1, y1};  // TL TR BR BL
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> rhs;
  for (int i = 0; i < 4; ++i) {
    const double u = sx[i] + corner_offsets[(size_t)(2 * i)];
    const double v = sy[i] + corner_offsets[(size_t)(2 * i + 1)];
    a.row(2 * i) << sx[i], sy[i], 1, 0, 0, 0, -u * sx[i], -u * sy[i];
    a.row(2 * i + 1) << 0, 0, 0, sx[i], sy[i], 1, -v * sx[i], -v * sy[i];
    rhs[2 * i] = u;
    rhs[2 * i + 1] = v;
  }
  const Eigen::Matrix<double, 8, 1> sol = a.colPivHouseholderQr().solve(rhs);
  if (!sol.allFinite() || (a * sol - rhs).norm() > 1e-6)
    throw NumericError("perspective: degenerate corner placement");
  Homography m;
  m << sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0;
  // A consistent system can still yield a rank-deficient plane map (e.g. two
  // corners collapsed onto one point); reject anything close to singular.
  if (std::abs(m.determinant()) < 1e-9)
    throw NumericError("perspective: degenerate corner placement");
  return m;
}

ad::WarpPlan homography_plan(int h, int w, const Homography& forward) {
  if (h <= 0 || w <= 0) throw ShapeError("warp plan: empty plane");
  const Homography inv = forward.inverse();
  if (!inv.allFinite()) throw NumericError("warp plan: singular map");
  ad::WarpPlan plan;
  plan.height = h;
  plan.width = w;
  const size_t npix = (size_t)h * (size_t)w;
  for (auto& v : plan.idx) v.assign(npix, -1);
  for (auto& v : plan.w) v.assign(npix, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const size_t p = (size_t)r * (size_t)w + (size_t)c;
      const Eigen::Vector3d src = inv * Eigen::Vector3d(c, r, 1.0);
      if (std::abs(src[2]) < 1e-12) continue;  // maps to infinity: zero pad
      const double sx = src[0] / src[2], sy = src[1] / src[2];
      const int c0 = (int)std::floor(sx), r0 = (int)std::floor(sy);
      const double fx = sx - c0, fy = sy - r0;
      const double tw[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int tc[4] = {c0, c0 + 1, c0, c0 + 1};
      const int tr[4] = {r0, r0, r0 + 1, r0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (tw[t] == 0.0 || tc[t] < 0 || tc[t] >= w || tr[t] < 0 || tr[t] >= h) continue;
        plan.idx[(size_t)t][p] = tr[t] * w + tc[t];
        plan.w[(size_t)t][p] = tw[t];
      }
    }
  return plan;
}

ad::BlurSpec gaussian_blur_spec(int channels, int h, int w, double sigma) {
  if (channels <= 0 || h <= 0 || w <= 0) throw ShapeError("blur: empty plane");
  ad::BlurSpec spec;
  spec.channels = channels;
  spec.height = h;
  spec.width = w;
  if (sigma <= 0.0) {
    spec.kernel = {1.0};
    return spec;
  }
  const int radius = std::max(1, (int)std::ceil(3.0 * sigma));
  spec.kernel.resize((size_t)(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    spec.kernel[(size_t)(i + radius)] = v;
    sum += v;
  }
  for (double& v : spec.kernel) v /= sum;
  return spec;
}

Tensor warp_image(const Tensor& x, const ad::WarpPlan& plan) {
  check_image(x);
  if (x.shape()[1] != plan.height || x.shape()[2] != plan.width)
    throw ShapeError("image: warp plan size mismatch");
  return Tensor(x.shape(), ad::warp_eval(x.data(), plan));
}

Tensor shift_image(const Tensor& x, int dx_cols, int dy_rows) {
  check_image(x);
  const int ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out = Tensor::zeros(x.shape());
  for (int c = 0; c < ch; ++c)
    for (int r = 0; r < h; ++r) {
      const int sr = r - dy_rows;
      if (sr < 0 || sr >= h) continue;
      for (int col = 0; col < w; ++col) {
        const int sc = col - dx_cols;
        if (sc < 0 || sc >= w) continue;
        out[(Eigen::Index)(c * h + r) * w + col] = x[(Eigen::Index)(c * h + sr) * w + sc];
      }
    }
  return out;
}

Tensor rotate_image(const Tensor& x, double degrees) {
  check_image(x);
  return warp_image(x, homography_plan(x.shape()[1], x.shape()[2],
                                       rotation_about_center(x.shape()[1], x.shape()[2], degrees)));
}

Tensor flip_horizontal(const Tensor& x) {
  check_image(x);
  const int ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out = Tensor::zeros(x.shape());
  for (int c = 0; c < ch; ++c)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        out[(Eigen::Index)(c * h + r) * w + col] =
            x[(Eigen::Index)(c * h + r) * w + (w - 1 - col)];
  return out;
}

Tensor crop_border(const Tensor& x, int left, int top, int right, int bottom) {
  check_image(x);
  if (left < 0 || top < 0 || right < 0 || bottom < 0)
    throw ShapeError("image: negative crop widths");
  const int ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out = x;
  for (int c = 0; c < ch; ++c)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        if (r < top || r >= h - bottom || col < left || col >= w - right)
          out[(Eigen::Index)(c * h + r) * w + col] = 0.0;
  return out;
}

}  // namespace a5
