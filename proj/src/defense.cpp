#include "a5/defense.hpp"

#include <algorithm>
#include <cmath>

#include "a5/error.hpp"

namespace a5 {

using ad::Tape;
using ad::Value;

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": shape mismatch");
}

std::vector<LayerParams> zero_grads_like(const Network& net) {
  std::vector<LayerParams> g((size_t)net.num_layers());
  for (int i = 0; i < net.num_layers(); ++i)
    if (net.layers()[(size_t)i].has_params()) {
      g[(size_t)i].weight = Tensor::zeros(net.params()[(size_t)i].weight.shape());
      g[(size_t)i].bias = Tensor::zeros(net.params()[(size_t)i].bias.shape());
    }
  return g;
}

void accumulate_grads(std::vector<LayerParams>& acc, const std::vector<LayerParams>& g) {
  for (size_t i = 0; i < acc.size(); ++i) {
    if (acc[i].weight.empty()) continue;
    acc[i].weight.data() += g[i].weight.data();
    acc[i].bias.data() += g[i].bias.data();
  }
}

void scale_grads(std::vector<LayerParams>& acc, double s) {
  for (auto& g : acc) {
    if (g.weight.empty()) continue;
    g.weight.data() *= s;
    g.bias.data() *= s;
  }
}

double epoch_lr(const TrainConfig& cfg, int epoch) {
  if (cfg.lr_decay_epochs <= 0) return cfg.lr;
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_epochs);
}

void check_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1)
    throw ConfigError("train: epochs must be >= 0 and batch_size >= 1");
  if (cfg.eps_a_c < 0 || cfg.eps_a_r < 0 || cfg.eps_d < 0)
    throw ConfigError("train: epsilon values must be >= 0");
  if (!(cfg.lr >= 0) || !std::isfinite(cfg.lr)) throw ConfigError("train: bad learning rate");
}

// Indices of the (optionally capped) training pass for one epoch.
std::vector<int> epoch_order(const Dataset& train, const TrainConfig& cfg, int epoch) {
  Rng r = Rng(cfg.seed).derive(rng_stream::kShuffle).derive((std::uint64_t)epoch);
  std::vector<int> idx = shuffled_indices((int)train.count(), r);
  if (cfg.train_n > 0 && cfg.train_n < (int)idx.size()) idx.resize((size_t)cfg.train_n);
  return idx;
}

}  // namespace

DefenseSpec::DefenseSpec(double e, bool clamp) : eps_d(e), clamp_output(clamp) {
  if (!(eps_d >= 0.0) || !std::isfinite(eps_d))
    throw NumericError("defense: eps_d must be finite and >= 0");
}

double eps_schedule_value(const EpsSchedule& s, double epoch) {
  if (s.length_epochs <= 0) throw ConfigError("schedule: length must be positive");
  if (!(s.mid > 0.0 && s.mid < 1.0)) throw ConfigError("schedule: mid must lie in (0,1)");
  if (s.target < 0) throw ConfigError("schedule: negative target");
  const double t = epoch - s.start_epoch;
  if (t <= 0.0 || s.target == 0.0) return 0.0;
  const double len = s.length_epochs;
  if (t >= len) return s.target;
  const double knee = s.mid * len;
  const double a = s.target / (knee * (2.0 * len - knee));
  if (t <= knee) return a * t * t;
  return a * knee * knee + 2.0 * a * knee * (t - knee);  // C1 continuation
}

Tensor augment_sample(const Tensor& x, const AugmentPolicy& policy, Rng& rng) {
  if (policy.max_shift_px < 0 || policy.max_rotation_deg < 0 || policy.max_crop_px < 0)
    throw ConfigError("augment: negative policy bounds");
  const bool identity = policy.max_shift_px == 0 && policy.max_rotation_deg == 0.0 &&
                        !policy.horizontal_flip && policy.max_crop_px == 0;
  if (identity) return x;
  if (x.shape().size() != 3)
    throw ShapeError("augment: non-trivial policies need (C x H x W) images");
  Tensor out = x;
  if (policy.max_shift_px > 0) {
    const int dx = rng.uniform_int(-policy.max_shift_px, policy.max_shift_px);
    const int dy = rng.uniform_int(-policy.max_shift_px, policy.max_shift_px);
    out = shift_image(out, dx, dy);
  }
  if (policy.max_rotation_deg > 0) {
    const double deg = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
    out = rotate_image(out, deg);
  }
  if (policy.horizontal_flip && rng.bernoulli(0.5)) out = flip_horizontal(out);
  if (policy.max_crop_px > 0) {
    const auto band = [&] { return rng.uniform_int(0, policy.max_crop_px); };
    out = crop_border(out, band(), band(), band(), band());
  }
  // Bilinear weights are a convex combination of [0,1] pixels, but guard the
  // range anyway against accumulated roundoff.
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

Tensor defensive_perturbation(const Tensor& z, double eps_d) {
  if (!(eps_d >= 0.0) || !std::isfinite(eps_d))
    throw NumericError("defense: eps_d must be finite and >= 0");
  const double cap = std::nextafter(eps_d, 0.0);  // strictly inside the budget
  Vec out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    out[i] = std::clamp(2.0 * eps_d * (stable_sigmoid(z[i]) - 0.5), -cap, cap);
  return Tensor(z.shape(), std::move(out));
}

Tensor apply_defense(const Tensor& x, const Tensor& delta, const DefenseSpec& spec) {
  check_same_shape(x, delta, "defense");
  Vec out = x.data() + delta.data();
  if (spec.clamp_output) out = out.cwiseMax(0.0).cwiseMin(1.0);
  return Tensor(x.shape(), std::move(out));
}

Value defense_graph(Tape& tape, Value z, double eps_d) {
  if (!(eps_d >= 0.0) || !std::isfinite(eps_d))
    throw NumericError("defense: eps_d must be finite and >= 0");
  (void)tape;
  return (sigmoid(z) + (-0.5)) * (2.0 * eps_d);
}

Value apply_defense_graph(Tape& tape, Value x, Value delta, const DefenseSpec& spec) {
  (void)tape;
  Value sum = x + delta;
  return spec.clamp_output ? clamp01(sum) : sum;
}

double psnr(const Tensor& x, const Tensor& x_rob) {
  check_same_shape(x, x_rob, "psnr");
  if (x.size() == 0) throw ShapeError("psnr: empty image");
  const double mse = (x.data() - x_rob.data()).squaredNorm() / (double)x.size();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

RobustifiedSample a5o_robustify(const Network& net, const Tensor& x, int label, double eps_a,
                                const DefenseSpec& spec, int steps, double lr) {
  if (x.shape() != net.input_shape()) throw ShapeError("a5o: input shape mismatch");
  if (label < 0 || (Eigen::Index)label >= net.output_size())
    throw ShapeError("a5o: label outside class range");
  if (steps < 0) throw ConfigError("a5o: negative step count");
  if (!(eps_a >= 0.0) || !std::isfinite(eps_a)) throw NumericError("a5o: bad attack radius");
  const MarginSpec mspec(label, (int)net.output_size());

  Tensor z = Tensor::zeros(x.shape());
  Tensor best_z = z;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  RmsPropState opt = RmsPropState::for_tensor(z);

  for (int it = 0;; ++it) {
    Tape tape;
    const NetBinding b = bind_network(tape, net, /*trainable=*/false);
    const Value zv = tape.leaf(z.data(), /*requires_grad=*/true);
    const Value center =
        apply_defense_graph(tape, tape.constant(x.data()), defense_graph(tape, zv, spec.eps_d),
                            spec);
    const Value e = wc_xent_graph(
        margins_graph(tape, b, center, eps_a, /*clip01=*/true, mspec, BoundMethod::crown_ibp()));
    const double loss = tape.val(e)(0, 0);
    if (!std::isfinite(loss)) throw NumericError("a5o: non-finite worst-case entropy");
    trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_z = z;
    }
    if (it == steps) break;
    tape.backward(e);
    const Tensor g(z.shape(), tape.grad(zv).col(0));
    rmsprop_step(z, g, opt, lr);
  }

  RobustifiedSample out;
  out.original = x;
  out.latent = best_z;
  out.delta = defensive_perturbation(best_z, spec.eps_d);
  out.robustified = apply_defense(x, out.delta, spec);
  out.loss_trace = std::move(trace);
  return out;
}

Preprocess robustify_fn(const Network& robustifier, const DefenseSpec& spec) {
  if (robustifier.output_size() != robustifier.input_size())
    throw ShapeError("robustifier: output size must match input size");
  const Network* r = &robustifier;
  return [r, spec](const Tensor& x) {
    const Tensor z = forward(*r, x);
    return apply_defense(x, defensive_perturbation(Tensor(x.shape(), z.data()), spec.eps_d),
                         spec);
  };
}

double mean_wc_xent(const Network& net, const Dataset& d, double eps, const BoundMethod& method,
                    const Preprocess& preprocess) {
  if (d.count() == 0) throw ShapeError("eval: empty dataset");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < d.count(); ++i) {
    Tensor x = d.sample(i);
    if (preprocess) x = preprocess(x);
    const MarginSpec spec(d.labels[(size_t)i], (int)net.output_size());
    sum += worst_case_xent(certified_margins(net, LinfBall(x, eps), spec, method));
  }
  return sum / (double)d.count();
}

EpochMetrics eval_epoch(const Network& net, const Dataset& val, int epoch,
                        const TrainConfig& cfg, double eps_a, double beta,
                        const std::string& recipe, const Preprocess& preprocess) {
  const int n = std::min<int>(cfg.eval_n, (int)val.count());
  auto [subset, rest] = split_subset(val, n, 0, Rng(cfg.seed).derive(rng_stream::kSplit));
  (void)rest;

  AttackConfig attack = cfg.eval_attack;
  attack.eps = eps_a;
  attack.seed = cfg.seed ^ 0x5eedu;
  const ErrorRates rates =
      empirical_error(net, subset, attack, BoundMethod::crown_ibp(), preprocess);

  EpochMetrics m;
  m.epoch = epoch;
  m.clean_err = rates.clean;
  m.pgd_err = rates.pgd;
  m.cert_err = rates.certified;
  m.mean_wc_xent = mean_wc_xent(net, subset, eps_a, BoundMethod::crown_ibp(), preprocess);
  m.eps_a = eps_a;
  m.beta = beta;
  m.recipe = recipe;
  m.eps_a_c = cfg.eps_a_c;
  m.eps_a_r = cfg.eps_a_r;
  m.eps_d = cfg.eps_d;
  if (preprocess) {
    // Average the distortion energy, then convert once; a zero-distortion
    // subset stays at the +infinity sentinel.
    double mse_sum = 0.0;
    for (Eigen::Index i = 0; i < subset.count(); ++i) {
      const Tensor x = subset.sample(i);
      const Tensor xr = preprocess(x);
      mse_sum += (x.data() - xr.data()).squaredNorm() / (double)x.size();
    }
    const double mse = mse_sum / (double)subset.count();
    m.psnr_mean =
        mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
  }
  return m;
}

namespace {

// Shared minibatch engine: `sample_loss` builds the per-sample loss graph on
// a fresh tape after the trainable bindings are registered; gradients are
// averaged in fixed order and applied with RMSProp.
struct TrainableNet {
  Network* net = nullptr;
  RmsPropState opt;
  NetBinding binding;  // rebuilt per tape
};

using SampleLoss = std::function<Value(Tape&, std::vector<TrainableNet>&, const Tensor& x,
                                       int label, double epoch_frac)>;

void run_epochs(std::vector<TrainableNet>& nets, const Dataset& train, const TrainConfig& cfg,
                const SampleLoss& sample_loss, const char* recipe,
                const std::function<void(int)>& on_epoch_end) {
  check_train_config(cfg);
  train.validate();
  if (train.count() == 0) throw ShapeError("train: empty dataset");
  for (auto& tn : nets) tn.opt = RmsPropState::for_network(*tn.net);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(train, cfg, epoch);
    const double lr = epoch_lr(cfg, epoch);
    for (size_t start = 0; start < order.size(); start += (size_t)cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + (size_t)cfg.batch_size);
      std::vector<std::vector<LayerParams>> acc;
      for (auto& tn : nets) acc.push_back(zero_grads_like(*tn.net));

      for (size_t k = start; k < stop; ++k) {
        Tape tape;
        for (auto& tn : nets) tn.binding = bind_network(tape, *tn.net, /*trainable=*/true);
        const double epoch_frac = epoch + (double)start / (double)order.size();
        const Value e = sample_loss(tape, nets, train.sample(order[k]),
                                    train.labels[(size_t)order[k]], epoch_frac);
        const double loss = tape.val(e)(0, 0);
        if (!std::isfinite(loss))
          throw NumericError(std::string(recipe) + ": non-finite loss at epoch " +
                             std::to_string(epoch));
        tape.backward(e);
        for (size_t ni = 0; ni < nets.size(); ++ni)
          accumulate_grads(acc[ni], collect_param_grads(tape, nets[ni].binding));
      }
      for (size_t ni = 0; ni < nets.size(); ++ni) {
        scale_grads(acc[ni], 1.0 / (double)(stop - start));
        rmsprop_step(nets[ni].net->params(), acc[ni], nets[ni].opt, lr);
      }
    }
    on_epoch_end(epoch);
  }
}

Value robustified_center_graph(Tape& tape, const NetBinding& rb, const Tensor& x,
                               const DefenseSpec& spec) {
  const Value xv = tape.constant(x.data());
  const Value z = forward_graph(tape, rb, xv);
  return apply_defense_graph(tape, xv, defense_graph(tape, z, spec.eps_d), spec);
}

Value wc_loss_graph(Tape& tape, const NetBinding& cb, Value center, double eps, int label,
                    int num_classes, const BoundMethod& method) {
  const MarginSpec mspec(label, num_classes);
  return wc_xent_graph(margins_graph(tape, cb, center, eps, /*clip01=*/true, mspec, method));
}

void check_robustifier_shapes(const Network& classifier, const Network& robustifier,
                              const Dataset& train) {
  if (robustifier.input_shape() != classifier.input_shape() ||
      robustifier.output_size() != robustifier.input_size())
    throw ShapeError("robustifier: must map the classifier's input shape onto itself");
  if (shape_numel(train.sample_shape) != classifier.input_size())
    throw ShapeError("train: dataset samples do not fit the classifier input");
}

}  // namespace

std::vector<EpochMetrics> a5r_train(const Network& classifier, Network& robustifier,
                                    const Dataset& train, const Dataset& val,
                                    const TrainConfig& cfg) {
  check_train_config(cfg);
  check_robustifier_shapes(classifier, robustifier, train);
  const DefenseSpec spec(cfg.eps_d);
  std::vector<EpochMetrics> history;
  std::vector<TrainableNet> nets{{&robustifier, {}, {}}};

  const SampleLoss loss = [&](Tape& tape, std::vector<TrainableNet>& ns, const Tensor& x,
                              int label, double) {
    const NetBinding cb = bind_network(tape, classifier, /*trainable=*/false);
    const Value center = robustified_center_graph(tape, ns[0].binding, x, spec);
    return wc_loss_graph(tape, cb, center, cfg.eps_a_r, label, (int)classifier.output_size(),
                         cfg.method);
  };
  run_epochs(nets, train, cfg, loss, "a5r", [&](int epoch) {
    history.push_back(eval_epoch(classifier, val, epoch, cfg, cfg.eps_a_r, cfg.method.beta,
                                 "a5r", robustify_fn(robustifier, spec)));
  });
  return history;
}

std::vector<EpochMetrics> a5rc_cotrain(Network& classifier, Network& robustifier,
                                       const Dataset& train, const Dataset& val,
                                       const TrainConfig& cfg, const AugmentPolicy& augment) {
  check_train_config(cfg);
  check_robustifier_shapes(classifier, robustifier, train);
  const DefenseSpec spec(cfg.eps_d);
  std::vector<EpochMetrics> history;
  std::vector<TrainableNet> nets{{&classifier, {}, {}}, {&robustifier, {}, {}}};

  // The joint phase doubles the batch to steady the co-adaptation.
  TrainConfig joint = cfg;
  joint.batch_size = 2 * cfg.batch_size;

  Rng aug_root = Rng(cfg.seed).derive(rng_stream::kAugment);
  int sample_counter = 0;
  const SampleLoss loss = [&](Tape& tape, std::vector<TrainableNet>& ns, const Tensor& x,
                              int label, double) {
    Rng ar = aug_root.derive((std::uint64_t)sample_counter++);
    const Tensor xa = augment_sample(x, augment, ar);
    const Value center = robustified_center_graph(tape, ns[1].binding, xa, spec);
    return wc_loss_graph(tape, ns[0].binding, center, cfg.eps_a_r, label,
                         (int)classifier.output_size(), cfg.method);
  };
  run_epochs(nets, train, joint, loss, "a5rc", [&](int epoch) {
    history.push_back(eval_epoch(classifier, val, epoch, joint, cfg.eps_a_r, cfg.method.beta,
                                 "a5rc", robustify_fn(robustifier, spec)));
  });
  return history;
}

std::vector<EpochMetrics> crown_ibp_train(Network& classifier, const Dataset& train,
                                          const Dataset& val, const TrainConfig& cfg) {
  if (shape_numel(train.sample_shape) != classifier.input_size())
    throw ShapeError("train: dataset samples do not fit the classifier input");
  std::vector<EpochMetrics> history;
  std::vector<TrainableNet> nets{{&classifier, {}, {}}};
  double last_eps = 0.0, last_beta = 1.0;

  const SampleLoss loss = [&](Tape& tape, std::vector<TrainableNet>& ns, const Tensor& x,
                              int label, double epoch_frac) {
    const double eps = eps_schedule_value(cfg.schedule, epoch_frac);
    const double beta =
        cfg.schedule.target > 0.0 ? 1.0 - eps / cfg.schedule.target : 1.0;
    last_eps = eps;
    last_beta = beta;
    const Value center = tape.constant(x.data());
    return wc_loss_graph(tape, ns[0].binding, center, eps, label,
                         (int)classifier.output_size(), BoundMethod::mixed(beta));
  };
  run_epochs(nets, train, cfg, loss, "crown_ibp", [&](int epoch) {
    history.push_back(
        eval_epoch(classifier, val, epoch, cfg, last_eps, last_beta, "train"));
  });
  return history;
}

}  // namespace a5
