#pragma once

#include <array>

#include "a5/ad.hpp"
#include "a5/tensor.hpp"

namespace a5 {

// 3x3 projective map acting on homogeneous pixel coordinates (x=col, y=row).
using Homography = Eigen::Matrix3d;

Homography identity_map();
Homography translation_map(double dx_cols, double dy_rows);
Homography rotation_about_center(int h, int w, double degrees);
// Map sending the four image corners TL, TR, BR, BL to their displaced
// positions; offsets are (dx0,dy0, dx1,dy1, dx2,dy2, dx3,dy3) in pixels.
Homography corner_displacement_map(int h, int w, const std::array<double, 8>& corner_offsets);

// Bilinear gather plan realizing `forward` (content moves by the map): each
// output pixel reads the input at forward^{-1}(pixel); taps outside the
// plane are zero. Integer-lattice maps (pure shifts, 0-degree rotations)
// come out exact with single unit-weight taps.
ad::WarpPlan homography_plan(int h, int w, const Homography& forward);

// Separable Gaussian kernel truncated at 3 sigma (identity for sigma <= 0).
ad::BlurSpec gaussian_blur_spec(int channels, int h, int w, double sigma);

// Eager single-image transforms on (C x H x W) tensors, zero-padded.
Tensor warp_image(const Tensor& x, const ad::WarpPlan& plan);
Tensor shift_image(const Tensor& x, int dx_cols, int dy_rows);  // exact
Tensor rotate_image(const Tensor& x, double degrees);
Tensor flip_horizontal(const Tensor& x);
// Zeroes a band of the given width on every side (size-preserving "crop").
Tensor crop_border(const Tensor& x, int left, int top, int right, int bottom);

}  // namespace a5
