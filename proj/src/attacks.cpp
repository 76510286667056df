#include "a5/attacks.hpp"

#include <cmath>

#include "a5/error.hpp"

namespace a5 {
namespace {

void check_label(const Network& net, int label) {
  if (label < 0 || (Eigen::Index)label >= net.output_size())
    throw ShapeError("attack: label outside the network's class range");
}

}  // namespace

double xent_loss(const Vec& logits, int label) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum()) - logits[label];
}

Vec xent_grad_logits(const Vec& logits, int label) {
  const double m = logits.maxCoeff();
  Vec p = (logits.array() - m).exp();
  p /= p.sum();
  p[label] -= 1.0;
  return p;
}

int argmax_class(const Vec& logits) {
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return (int)best;
}

Tensor pgd_attack(const Network& net, const Tensor& x, int label, const AttackConfig& cfg,
                  const Rng& rng) {
  check_label(net, label);
  if (x.shape() != net.input_shape()) throw ShapeError("attack: input shape mismatch");
  if (!(cfg.eps >= 0.0) || !std::isfinite(cfg.eps))
    throw NumericError("attack: eps must be finite and >= 0");
  if (cfg.steps < 1 || cfg.restarts < 1)
    throw ConfigError("attack: steps and restarts must be >= 1");
  const double alpha = cfg.step_size > 0.0 ? cfg.step_size : cfg.eps / 10.0;

  const Vec& x0 = x.data();
  const Vec lo = (x0.array() - cfg.eps).cwiseMax(0.0);
  const Vec hi = (x0.array() + cfg.eps).cwiseMin(1.0);
  Rng base = rng.derive(rng_stream::kAttack);

  Vec best_point = x0;
  double best_loss = -std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < cfg.restarts; ++restart) {
    Rng rr = base.derive((std::uint64_t)restart);
    Vec pt = x0;
    if (restart > 0)
      for (Eigen::Index i = 0; i < pt.size(); ++i)
        pt[i] = x0[i] + rr.uniform(-cfg.eps, cfg.eps);
    pt = pt.cwiseMax(lo).cwiseMin(hi);
    for (int step = 0;; ++step) {
      const Tensor cur(x.shape(), pt);
      const Vec y = forward(net, cur).data();
      const double loss = xent_loss(y, label);
      if (loss > best_loss) {
        best_loss = loss;
        best_point = pt;
      }
      if (step == cfg.steps) break;
      const Tensor gy(Shape{(int)net.output_size()}, xent_grad_logits(y, label));
      const NetGrads g = backward(net, cur, gy);
      pt = pt.array() + alpha * g.input.data().array().sign();
      pt = pt.cwiseMax(lo).cwiseMin(hi);
    }
  }
  return Tensor(x.shape(), best_point);
}

double clean_error(const Network& net, const Dataset& d) {
  d.validate();
  if (d.num_classes > (int)net.output_size())
    throw ShapeError("eval: dataset has more classes than the network");
  Mat ys = forward_batch(net, d.images);
  int wrong = 0;
  for (Eigen::Index i = 0; i < d.count(); ++i)
    wrong += argmax_class(ys.col(i)) != d.labels[(size_t)i];
  return wrong / double(d.count());
}

double pgd_error(const Network& net, const Dataset& d, const AttackConfig& cfg, const Rng& rng) {
  d.validate();
  int wrong = 0;
  for (Eigen::Index i = 0; i < d.count(); ++i) {
    const Tensor xi = d.sample(i);
    const int label = d.labels[(size_t)i];
    if (argmax_class(forward(net, xi).data()) != label) {
      ++wrong;
      continue;
    }
    const Tensor adv = pgd_attack(net, xi, label, cfg, rng.derive((std::uint64_t)i));
    wrong += argmax_class(forward(net, adv).data()) != label;
  }
  return wrong / double(d.count());
}

double certified_error(const Network& net, const Dataset& d, double eps,
                       const BoundMethod& method) {
  d.validate();
  int uncertified = 0;
  for (Eigen::Index i = 0; i < d.count(); ++i) {
    const LinfBall ball(d.sample(i), eps);
    uncertified += !certified_correct(net, ball, d.labels[(size_t)i], method);
  }
  return uncertified / double(d.count());
}

ErrorRates empirical_error(const Network& net, const Dataset& d, const AttackConfig& cfg,
                           const BoundMethod& method, const Preprocess& preprocess) {
  if (d.count() == 0) throw ShapeError("eval: empty dataset");
  d.validate();
  Dataset eval = d;
  if (preprocess) {
    for (Eigen::Index i = 0; i < d.count(); ++i) {
      const Tensor xr = preprocess(d.sample(i));
      if (xr.shape() != d.sample_shape) throw ShapeError("eval: preprocess changed the shape");
      eval.images.col(i) = xr.data();
    }
    eval.validate();
  }
  ErrorRates r;
  r.clean = clean_error(net, eval);
  r.pgd = pgd_error(net, eval, cfg, Rng(cfg.seed));
  r.certified = certified_error(net, eval, cfg.eps, method);
  if (!(r.clean <= r.pgd && r.pgd <= r.certified))
    throw Error("eval: error ordering clean <= pgd <= certified violated");
  return r;
}

}  // namespace a5
