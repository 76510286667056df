#pragma once

#include <functional>

#include "a5/bounds.hpp"
#include "a5/data.hpp"
#include "a5/network.hpp"
#include "a5/rng.hpp"

namespace a5 {

// Standard cross-entropy pieces on raw logits.
double xent_loss(const Vec& logits, int label);
Vec xent_grad_logits(const Vec& logits, int label);  // softmax(logits) - onehot(label)
int argmax_class(const Vec& logits);

// Projected gradient ascent on the cross-entropy inside the [0,1]-clipped
// l_inf ball. Restart 0 starts at the clean point (so one step at
// step_size == eps is exactly FGSM); later restarts start uniformly inside
// the ball. The best iterate across every restart and step (highest loss,
// clean point included) is returned.
struct AttackConfig {
  double eps = 0.0;
  int steps = 50;
  double step_size = 0.0;  // <= 0 picks eps / 10
  int restarts = 5;
  std::uint64_t seed = 0;  // root seed for evaluation drivers
};

Tensor pgd_attack(const Network& net, const Tensor& x, int label, const AttackConfig& cfg,
                  const Rng& rng);

// Error rates over a dataset, all in [0,1].
double clean_error(const Network& net, const Dataset& d);
// Counts a sample as an error when either the clean or the attacked point is
// misclassified, so pgd_error >= clean_error holds by construction.
double pgd_error(const Network& net, const Dataset& d, const AttackConfig& cfg, const Rng& rng);
// Fraction of samples not certifiably correct at radius eps.
double certified_error(const Network& net, const Dataset& d, double eps,
                       const BoundMethod& method);

// The full evaluation triple around an optional per-sample preprocessing
// step (a deployed robustifier runs before the attacker touches the data).
// Seeded by cfg.seed; enforces clean <= pgd <= certified as a hard check.
struct ErrorRates {
  double clean = 0.0;
  double pgd = 0.0;
  double certified = 0.0;
};
using Preprocess = std::function<Tensor(const Tensor&)>;
ErrorRates empirical_error(const Network& net, const Dataset& d, const AttackConfig& cfg,
                           const BoundMethod& method, const Preprocess& preprocess = {});

}  // namespace a5
