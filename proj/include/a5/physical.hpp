#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "a5/defense.hpp"
#include "a5/image.hpp"

namespace a5 {

// A physical object the camera will look at: a grayscale glyph plate.
struct Prototype {
  Tensor w;  // (C x H x W), values in [0,1]
  int class_index = 0;
  std::string name;
};

// Ranges the stochastic capture pipeline draws its parameters from.
struct AcquisitionPolicy {
  int max_crop_px = 0;             // integer shift in [-max, max] per axis
  double max_rotation_deg = 0.0;   // rotation angle in [-max, max]
  double perspective_scale = 0.0;  // corner displacement <= scale * side
  std::array<double, 2> noise_sigma_range = {0.0, 0.0};  // uniform in range
  std::array<double, 2> blur_sigma_range = {0.0, 0.0};   // log-uniform; {0,0} = off
  double jitter_brightness = 0.0;  // additive offset in [-b, b]
  double jitter_contrast = 0.0;    // gain 1 + u, u in [-c, c]; c < 1
};
void validate_policy(const AcquisitionPolicy& policy);

// One frozen draw of every random parameter in the pipeline. Geometry is
// composed into a single bilinear resampling; noise enters as a sampled
// constant image (reparameterization), so the capture is differentiable in
// the prototype with these held fixed.
struct AcquisitionSample {
  std::shared_ptr<const ad::WarpPlan> plan;  // null = identity geometry
  double contrast_gain = 1.0;                // applied about mid-gray
  double brightness = 0.0;
  std::shared_ptr<const ad::BlurSpec> blur;  // null = no blur
  Tensor noise;                              // empty = no additive noise
};

AcquisitionSample sample_acquisition(const Shape& image_shape, const AcquisitionPolicy& policy,
                                     Rng& rng);

// Differentiable capture of a (C x H x W) image with frozen parameters:
// warp -> contrast/brightness -> blur -> noise -> clamp to [0,1].
ad::Value acquire_graph(ad::Tape& tape, ad::Value w, const AcquisitionSample& s);

// Eager capture: samples parameters from the policy, then evaluates the
// graph. Same rng state gives a bit-identical image.
Tensor acquire(const Tensor& w, const AcquisitionPolicy& policy, Rng& rng);
Tensor acquire(const Prototype& p, const AcquisitionPolicy& policy, Rng& rng);

// The desk-scale plate set: ten anti-aliased 28x28 geometric glyphs
// (supersampled 4x4 per pixel), class k named "<k>_<shape>".
std::vector<Prototype> make_glyph_prototypes();

// Captures `per_prototype` images of every prototype with streams derived
// from (prototype index, sample index); provenance "acquired".
Dataset acquired_dataset(const std::vector<Prototype>& protos, const AcquisitionPolicy& policy,
                         int per_prototype, const Rng& rng);

struct PhysicalConfig {
  double eps_a_r = 0.0;      // MitM attack radius on the acquired image
  double eps_d = 1.0;        // defense budget on the prototype surface
  int steps = 20;            // optimization steps per prototype
  int samples_per_step = 4;  // fresh acquisitions averaged per step
  double lr = 0.25;
  BoundMethod method = BoundMethod::crown_ibp();
  std::uint64_t seed = 0;
};

// Reshape the plates so the frozen classifier stays certifiably right
// behind the camera: per prototype, descend the mean worst-case entropy of
// freshly captured views, the gradient flowing through the capture into the
// bounded perturbation of the plate. Returns the final iterates.
std::vector<Prototype> a5p_robustify(const std::vector<Prototype>& protos,
                                     const Network& classifier, const AcquisitionPolicy& policy,
                                     const PhysicalConfig& cfg);

// Joint version: the classifier trains while the plates move. One epoch is
// one gradient step on the full prototype set; per-epoch metrics are
// evaluated on a fixed-stream acquired validation set of the current
// plates.
std::vector<EpochMetrics> a5pc_cotrain(std::vector<Prototype>& protos, Network& classifier,
                                       const AcquisitionPolicy& policy,
                                       const PhysicalConfig& pcfg, const TrainConfig& tcfg);

}  // namespace a5
