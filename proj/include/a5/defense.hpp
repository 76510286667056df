#pragma once

#include <string>
#include <vector>

#include "a5/attacks.hpp"
#include "a5/bounds.hpp"
#include "a5/data.hpp"
#include "a5/image.hpp"
#include "a5/network.hpp"

namespace a5 {

// ---------------------------------------------------------------------------
// configuration types
// ---------------------------------------------------------------------------

struct DefenseSpec {
  double eps_d = 0.0;        // l_inf defense magnitude
  bool clamp_output = true;  // keep x + delta inside [0,1]

  DefenseSpec() = default;
  explicit DefenseSpec(double e, bool clamp = true);
};

// One offline-robustified sample with its optimization history.
struct RobustifiedSample {
  Tensor original;
  Tensor latent;                   // z, the sigmoid pre-image of delta
  Tensor delta;                    // strictly inside (-eps_d, eps_d)
  Tensor robustified;              // clamp(original + delta)
  std::vector<double> loss_trace;  // worst-case entropy per iterate
};

// Monotone ramp 0 -> target: zero before start_epoch, quadratic ease-in over
// the first mid*length epochs, then a C1-matched linear run to the target.
struct EpsSchedule {
  double start_epoch = 0;
  double length_epochs = 1;
  double mid = 0.5;  // in (0,1)
  double target = 0.0;
};
double eps_schedule_value(const EpsSchedule& s, double epoch);

struct AugmentPolicy {
  int max_shift_px = 0;
  double max_rotation_deg = 0.0;
  bool horizontal_flip = false;
  int max_crop_px = 0;
};
// Shift, rotate, optionally flip, then zero a random border band; the
// all-zero policy is the exact identity.
Tensor augment_sample(const Tensor& x, const AugmentPolicy& policy, Rng& rng);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double lr = 1e-3;
  int lr_decay_epochs = 0;       // halve-life in epochs; 0 disables decay
  double lr_decay_factor = 1.0;  // multiplier applied every lr_decay_epochs
  double eps_a_c = 0.0;          // attack radius for classifier training
  double eps_a_r = 0.0;          // attack radius the robustifier defends at
  double eps_d = 0.0;            // defense budget
  EpsSchedule schedule;          // eps ramp for certified classifier training
  BoundMethod method = BoundMethod::crown_ibp();
  std::uint64_t seed = 0;
  int train_n = 0;  // optional cap on the training set size (0 = all)
  AttackConfig eval_attack;  // pgd settings for per-epoch metrics
  int eval_n = 64;           // validation samples per epoch metric
};

// One row of the per-epoch metrics stream shared by every trainer.
struct EpochMetrics {
  int epoch = 0;
  double clean_err = 0.0;
  double pgd_err = 0.0;
  double cert_err = 0.0;
  double mean_wc_xent = 0.0;
  double eps_a = 0.0;
  double beta = 0.0;
  double psnr_mean = std::numeric_limits<double>::infinity();
  std::string recipe;
  double eps_a_c = 0.0;
  double eps_a_r = 0.0;
  double eps_d = 0.0;
};

// ---------------------------------------------------------------------------
// the defensive perturbation (the heart of every recipe)
// ---------------------------------------------------------------------------

// delta[j] = 2*eps_d*(sigmoid(z[j]) - 0.5), clamped one ulp inside the open
// interval (-eps_d, eps_d) so the strict budget survives f64 saturation.
Tensor defensive_perturbation(const Tensor& z, double eps_d);

// x_rob = x + delta, clamped to [0,1] when the spec says so.
Tensor apply_defense(const Tensor& x, const Tensor& delta, const DefenseSpec& spec);

// Graph versions for the trainers (same math, tape ops).
ad::Value defense_graph(ad::Tape& tape, ad::Value z, double eps_d);
ad::Value apply_defense_graph(ad::Tape& tape, ad::Value x, ad::Value delta,
                              const DefenseSpec& spec);

// Peak signal-to-noise ratio in dB over [0,1] images; +infinity when equal.
double psnr(const Tensor& x, const Tensor& x_rob);

// ---------------------------------------------------------------------------
// recipes
// ---------------------------------------------------------------------------

// Offline robustification of one sample against a frozen classifier:
// RMSProp on z (initialized to zero) minimizing the worst-case entropy of
// the ball around the defended sample. Returns the best iterate.
RobustifiedSample a5o_robustify(const Network& net, const Tensor& x, int label, double eps_a,
                                const DefenseSpec& spec, int steps, double lr = 0.25);

// Trains the robustifier R (x -> z) against a frozen classifier by
// minibatch RMSProp on the mean worst-case entropy of defended samples.
// Returns per-epoch metrics measured on `val`.
std::vector<EpochMetrics> a5r_train(const Network& classifier, Network& robustifier,
                                    const Dataset& train, const Dataset& val,
                                    const TrainConfig& cfg);

// Co-trains classifier and robustifier jointly; each training sample is
// augmented before the defense is applied.
std::vector<EpochMetrics> a5rc_cotrain(Network& classifier, Network& robustifier,
                                       const Dataset& train, const Dataset& val,
                                       const TrainConfig& cfg, const AugmentPolicy& augment);

// Certified classifier training (the baseline defense): minimizes the mean
// worst-case entropy at the scheduled radius with Mixed(beta(t)) bounds,
// beta ramping 1 -> 0 as eps ramps 0 -> target.
std::vector<EpochMetrics> crown_ibp_train(Network& classifier, const Dataset& train,
                                          const Dataset& val, const TrainConfig& cfg);

// The defended-evaluation hook: x -> clamp(x + delta(R(x))).
Preprocess robustify_fn(const Network& robustifier, const DefenseSpec& spec);

// Mean worst-case entropy of (optionally defended) samples at radius eps.
double mean_wc_xent(const Network& net, const Dataset& d, double eps, const BoundMethod& method,
                    const Preprocess& preprocess = {});

// Shared metric row builder used by every recipe's per-epoch reporting.
EpochMetrics eval_epoch(const Network& net, const Dataset& val, int epoch,
                        const TrainConfig& cfg, double eps_a, double beta,
                        const std::string& recipe, const Preprocess& preprocess = {});

}  // namespace a5
