#include "a5/physical.hpp"

#include <algorithm>
#include <cmath>

#include "a5/error.hpp"

namespace a5 {

using ad::Tape;
using ad::Value;

namespace {

void check_prototype(const Prototype& p, const char* what) {
  if (p.w.shape().size() != 3) throw ShapeError(std::string(what) + ": plate must be C x H x W");
  if (p.w.size() == 0) throw ShapeError(std::string(what) + ": empty plate");
  if (p.w.data().minCoeff() < 0.0 || p.w.data().maxCoeff() > 1.0)
    throw NumericError(std::string(what) + ": plate values must lie in [0,1]");
  if (p.class_index < 0) throw ShapeError(std::string(what) + ": negative class index");
}

void check_physical_config(const PhysicalConfig& cfg) {
  if (!(cfg.eps_a_r >= 0.0) || !std::isfinite(cfg.eps_a_r))
    throw NumericError("physical: attack radius must be finite and >= 0");
  if (!(cfg.eps_d >= 0.0) || !std::isfinite(cfg.eps_d))
    throw NumericError("physical: defense budget must be finite and >= 0");
  if (cfg.steps < 0) throw ConfigError("physical: negative step count");
  if (cfg.samples_per_step < 1) throw ConfigError("physical: need at least one view per step");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("physical: bad learning rate");
}

// Mean worst-case entropy of `n` fresh views of the perturbed plate, as a
// graph over (classifier binding, plate leaf).
Value acquired_views_loss(Tape& tape, const NetBinding& cb, Value plate, const Shape& shape,
                          const AcquisitionPolicy& policy, const PhysicalConfig& cfg, int label,
                          int num_classes, Rng view_rng) {
  const MarginSpec mspec(label, num_classes);
  Value total;
  for (int k = 0; k < cfg.samples_per_step; ++k) {
    Rng r = view_rng.derive((std::uint64_t)k);
    const AcquisitionSample s = sample_acquisition(shape, policy, r);
    const Value x = acquire_graph(tape, plate, s);
    const Value loss = wc_xent_graph(
        margins_graph(tape, cb, x, cfg.eps_a_r, /*clip01=*/true, mspec, cfg.method));
    total = k == 0 ? loss : total + loss;
  }
  return total * (1.0 / (double)cfg.samples_per_step);
}

}  // namespace

void validate_policy(const AcquisitionPolicy& policy) {
  if (policy.max_crop_px < 0 || policy.max_rotation_deg < 0.0)
    throw ConfigError("acquisition: negative crop or rotation range");
  if (policy.perspective_scale < 0.0 || policy.perspective_scale > 0.4)
    throw ConfigError("acquisition: perspective scale must lie in [0, 0.4]");
  const auto& nr = policy.noise_sigma_range;
  const auto& br = policy.blur_sigma_range;
  if (nr[0] < 0.0 || nr[1] < nr[0]) throw ConfigError("acquisition: bad noise range");
  if (br[0] < 0.0 || br[1] < br[0]) throw ConfigError("acquisition: bad blur range");
  if (br[1] > 0.0 && br[0] <= 0.0)
    throw ConfigError("acquisition: log-uniform blur needs a positive lower bound");
  if (policy.jitter_brightness < 0.0 || policy.jitter_contrast < 0.0 ||
      policy.jitter_contrast >= 1.0)
    throw ConfigError("acquisition: jitter must be nonnegative with contrast < 1");
}

AcquisitionSample sample_acquisition(const Shape& image_shape, const AcquisitionPolicy& policy,
                                     Rng& rng) {
  validate_policy(policy);
  if (image_shape.size() != 3) throw ShapeError("acquisition: image must be C x H x W");
  const int c = (int)image_shape[0], h = (int)image_shape[1], w = (int)image_shape[2];

  AcquisitionSample s;

  // Geometry composes into one plane map, so one resampling suffices:
  // shift, then rotation, then perspective.
  const bool any_geometry = policy.max_crop_px > 0 || policy.max_rotation_deg > 0.0 ||
                            policy.perspective_scale > 0.0;
  if (any_geometry) {
    Homography m = identity_map();
    if (policy.max_crop_px > 0) {
      const double dx = rng.uniform_int(-policy.max_crop_px, policy.max_crop_px);
      const double dy = rng.uniform_int(-policy.max_crop_px, policy.max_crop_px);
      m = translation_map(dx, dy) * m;
    }
    if (policy.max_rotation_deg > 0.0)
      m = rotation_about_center(h, w, rng.uniform(-policy.max_rotation_deg,
                                                  policy.max_rotation_deg)) *
          m;
    if (policy.perspective_scale > 0.0) {
      const double amp = policy.perspective_scale * (double)std::min(h, w);
      std::array<double, 8> off;
      for (double& o : off) o = rng.uniform(-amp, amp);
      m = corner_displacement_map(h, w, off) * m;
    }
    s.plan = std::make_shared<const ad::WarpPlan>(homography_plan(h, w, m));
  }

  if (policy.jitter_contrast > 0.0)
    s.contrast_gain = 1.0 + rng.uniform(-policy.jitter_contrast, policy.jitter_contrast);
  if (policy.jitter_brightness > 0.0)
    s.brightness = rng.uniform(-policy.jitter_brightness, policy.jitter_brightness);

  if (policy.blur_sigma_range[1] > 0.0) {
    const double sigma = rng.log_uniform(policy.blur_sigma_range[0], policy.blur_sigma_range[1]);
    s.blur = std::make_shared<const ad::BlurSpec>(gaussian_blur_spec(c, h, w, sigma));
  }

  if (policy.noise_sigma_range[1] > 0.0) {
    const double sigma = rng.uniform(policy.noise_sigma_range[0], policy.noise_sigma_range[1]);
    s.noise = Tensor(image_shape);
    for (Eigen::Index i = 0; i < s.noise.size(); ++i) s.noise[i] = sigma * rng.normal();
  }
  return s;
}

Value acquire_graph(Tape& tape, Value w, const AcquisitionSample& s) {
  Value y = w;
  if (s.plan) y = ad::warp(y, s.plan);
  if (s.contrast_gain != 1.0 || s.brightness != 0.0) {
    // gain about mid-gray plus offset: y*g + (0.5 - 0.5 g + b).
    y = y * s.contrast_gain + (0.5 - 0.5 * s.contrast_gain + s.brightness);
  }
  if (s.blur) y = ad::blur(y, s.blur);
  if (!s.noise.empty()) y = y + tape.constant(s.noise.data());
  return clamp01(y);
}

Tensor acquire(const Tensor& w, const AcquisitionPolicy& policy, Rng& rng) {
  if (w.shape().size() != 3) throw ShapeError("acquisition: image must be C x H x W");
  const AcquisitionSample s = sample_acquisition(w.shape(), policy, rng);
  Tape tape;
  const Mat out = tape.val(acquire_graph(tape, tape.constant(w.data()), s));
  return Tensor(w.shape(), out.col(0));
}

Tensor acquire(const Prototype& p, const AcquisitionPolicy& policy, Rng& rng) {
  check_prototype(p, "acquisition");
  return acquire(p.w, policy, rng);
}

// ---------------------------------------------------------------------------
// glyph plates
// ---------------------------------------------------------------------------

namespace {

// Shape indicators in centered unit coordinates u = (col-13.5)/28,
// v = (row-13.5)/28, both in (-0.5, 0.5).
bool glyph_inside(int which, double u, double v) {
  const double r = std::hypot(u, v);
  switch (which) {
    case 0: return r >= 0.22 && r <= 0.34;                                  // ring
    case 1: return std::abs(u) <= 0.07 && std::abs(v) <= 0.34;              // vbar
    case 2: return std::abs(v) <= 0.07 && std::abs(u) <= 0.34;              // hbar
    case 3:                                                                 // cross
      return (std::abs(u) <= 0.07 && std::abs(v) <= 0.34) ||
             (std::abs(v) <= 0.07 && std::abs(u) <= 0.34);
    case 4:                                                                 // saltire
      return std::abs(u) <= 0.30 && std::abs(v) <= 0.30 &&
             (std::abs(u - v) <= 0.085 || std::abs(u + v) <= 0.085);
    case 5: {                                                               // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return m >= 0.22 && m <= 0.34;
    }
    case 6: return r <= 0.28;                                               // disk
    case 7:                                                                 // wedge
      return v >= -0.30 && v <= 0.30 && std::abs(u) <= 0.55 * (v + 0.30);
    case 8: return std::abs(u) + std::abs(v) <= 0.32;                       // diamond
    default:                                                                // dots
      for (double su : {-0.21, 0.21})
        for (double sv : {-0.21, 0.21})
          if (std::hypot(u - su, v - sv) <= 0.11) return true;
      return false;
  }
}

}  // namespace

std::vector<Prototype> make_glyph_prototypes() {
  static const char* kNames[10] = {"ring", "vbar", "hbar",  "cross",   "saltire",
                                   "square", "disk", "wedge", "diamond", "dots"};
  const int side = 28, ss = 4;  // 4x4 subsamples per pixel
  std::vector<Prototype> out;
  out.reserve(10);
  for (int g = 0; g < 10; ++g) {
    Prototype p;
    p.class_index = g;
    p.name = std::to_string(g) + "_" + kNames[g];
    p.w = Tensor(Shape{1, side, side});
    for (int row = 0; row < side; ++row)
      for (int col = 0; col < side; ++col) {
        int hits = 0;
        for (int i = 0; i < ss; ++i)
          for (int j = 0; j < ss; ++j) {
            const double y = row + (i + 0.5) / ss - 0.5;
            const double x = col + (j + 0.5) / ss - 0.5;
            const double u = (x - 13.5) / 28.0, v = (y - 13.5) / 28.0;
            hits += glyph_inside(g, u, v) ? 1 : 0;
          }
        p.w[(Eigen::Index)(row * side + col)] = (double)hits / (ss * ss);
      }
    out.push_back(std::move(p));
  }
  return out;
}

Dataset acquired_dataset(const std::vector<Prototype>& protos, const AcquisitionPolicy& policy,
                         int per_prototype, const Rng& rng) {
  if (protos.empty()) throw ShapeError("acquisition: no prototypes");
  if (per_prototype < 1) throw ConfigError("acquisition: per_prototype must be >= 1");
  int max_class = 0;
  for (const auto& p : protos) {
    check_prototype(p, "acquisition");
    if (p.w.shape() != protos.front().w.shape())
      throw ShapeError("acquisition: mismatched plate shapes");
    max_class = std::max(max_class, p.class_index);
  }
  Dataset d;
  d.sample_shape = protos.front().w.shape();
  d.num_classes = std::max(2, max_class + 1);
  d.provenance = "acquired";
  const Eigen::Index n = (Eigen::Index)protos.size() * per_prototype;
  d.images.resize(protos.front().w.size(), n);
  d.labels.reserve((size_t)n);
  Eigen::Index col = 0;
  for (size_t i = 0; i < protos.size(); ++i)
    for (int k = 0; k < per_prototype; ++k, ++col) {
      Rng r = rng.derive((std::uint64_t)i).derive((std::uint64_t)k);
      d.images.col(col) = acquire(protos[i], policy, r).data();
      d.labels.push_back(protos[i].class_index);
    }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// A5/P and A5/PC
// ---------------------------------------------------------------------------

std::vector<Prototype> a5p_robustify(const std::vector<Prototype>& protos,
                                     const Network& classifier, const AcquisitionPolicy& policy,
                                     const PhysicalConfig& cfg) {
  check_physical_config(cfg);
  validate_policy(policy);
  if (protos.empty()) throw ShapeError("a5p: no prototypes");
  const DefenseSpec spec(cfg.eps_d);

  std::vector<Prototype> out;
  out.reserve(protos.size());
  for (size_t pi = 0; pi < protos.size(); ++pi) {
    const Prototype& p = protos[pi];
    check_prototype(p, "a5p");
    if (p.w.shape() != classifier.input_shape())
      throw ShapeError("a5p: plate shape does not fit the classifier");
    if ((Eigen::Index)p.class_index >= classifier.output_size())
      throw ShapeError("a5p: class index outside the classifier's range");

    Tensor z = Tensor::zeros(p.w.shape());
    RmsPropState opt = RmsPropState::for_tensor(z);
    const Rng proto_rng = Rng(cfg.seed).derive(rng_stream::kAcquire).derive((std::uint64_t)pi);

    for (int it = 0; it < cfg.steps; ++it) {
      Tape tape;
      const NetBinding cb = bind_network(tape, classifier, /*trainable=*/false);
      const Value zv = tape.leaf(z.data(), true);
      const Value plate = apply_defense_graph(tape, tape.constant(p.w.data()),
                                              defense_graph(tape, zv, cfg.eps_d), spec);
      const Value loss =
          acquired_views_loss(tape, cb, plate, p.w.shape(), policy, cfg, p.class_index,
                              (int)classifier.output_size(), proto_rng.derive((std::uint64_t)it));
      if (!std::isfinite(tape.val(loss)(0, 0))) throw NumericError("a5p: diverged");
      tape.backward(loss);
      const Tensor g(z.shape(), tape.grad(zv).col(0));
      rmsprop_step(z, g, opt, cfg.lr);
    }

    Prototype q;
    q.class_index = p.class_index;
    q.name = p.name;
    q.w = apply_defense(p.w, defensive_perturbation(z, cfg.eps_d), spec);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<EpochMetrics> a5pc_cotrain(std::vector<Prototype>& protos, Network& classifier,
                                       const AcquisitionPolicy& policy,
                                       const PhysicalConfig& pcfg, const TrainConfig& tcfg) {
  check_physical_config(pcfg);
  validate_policy(policy);
  if (protos.empty()) throw ShapeError("a5pc: no prototypes");
  if (tcfg.epochs < 0) throw ConfigError("a5pc: negative epoch count");
  if (!(tcfg.lr >= 0.0) || !std::isfinite(tcfg.lr)) throw ConfigError("a5pc: bad learning rate");
  const DefenseSpec spec(pcfg.eps_d);
  const std::vector<Prototype> originals = protos;
  for (const auto& p : protos) {
    check_prototype(p, "a5pc");
    if (p.w.shape() != classifier.input_shape())
      throw ShapeError("a5pc: plate shape does not fit the classifier");
    if ((Eigen::Index)p.class_index >= classifier.output_size())
      throw ShapeError("a5pc: class index outside the classifier's range");
  }

  std::vector<Tensor> z(protos.size());
  std::vector<RmsPropState> zopt(protos.size());
  for (size_t i = 0; i < protos.size(); ++i) {
    z[i] = Tensor::zeros(originals[i].w.shape());
    zopt[i] = RmsPropState::for_tensor(z[i]);
  }
  RmsPropState copt = RmsPropState::for_network(classifier);
  const Rng root = Rng(pcfg.seed).derive(rng_stream::kAcquire);

  const auto materialize = [&](size_t i) {
    return apply_defense(originals[i].w, defensive_perturbation(z[i], pcfg.eps_d), spec);
  };

  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<LayerParams> cacc;
    {
      // Accumulate classifier gradients across the whole plate set; each
      // plate also collects the gradient of its own perturbation.
      for (size_t i = 0; i < protos.size(); ++i) {
        Tape tape;
        const NetBinding cb = bind_network(tape, classifier, /*trainable=*/true);
        const Value zv = tape.leaf(z[i].data(), true);
        const Value plate = apply_defense_graph(tape, tape.constant(originals[i].w.data()),
                                                defense_graph(tape, zv, pcfg.eps_d), spec);
        const Value loss = acquired_views_loss(
            tape, cb, plate, originals[i].w.shape(), policy, pcfg, originals[i].class_index,
            (int)classifier.output_size(),
            root.derive((std::uint64_t)epoch).derive((std::uint64_t)i));
        if (!std::isfinite(tape.val(loss)(0, 0))) throw NumericError("a5pc: diverged");
        tape.backward(loss);

        const std::vector<LayerParams> g = collect_param_grads(tape, cb);
        if (cacc.empty()) {
          cacc = g;
        } else {
          for (size_t li = 0; li < cacc.size(); ++li) {
            if (cacc[li].weight.empty()) continue;
            cacc[li].weight.data() += g[li].weight.data();
            cacc[li].bias.data() += g[li].bias.data();
          }
        }
        const Tensor zg(z[i].shape(), tape.grad(zv).col(0));
        rmsprop_step(z[i], zg, zopt[i], pcfg.lr);
      }
      for (auto& g : cacc) {
        if (g.weight.empty()) continue;
        g.weight.data() /= (double)protos.size();
        g.bias.data() /= (double)protos.size();
      }
      rmsprop_step(classifier.params(), cacc, copt, tcfg.lr);
    }

    // Fixed-stream validation set captured from the current plates.
    std::vector<Prototype> current = originals;
    for (size_t i = 0; i < protos.size(); ++i) current[i].w = materialize(i);
    const int per = std::max(1, tcfg.eval_n / (int)protos.size());
    const Dataset val =
        acquired_dataset(current, policy, per, Rng(tcfg.seed).derive(rng_stream::kAcquire));

    AttackConfig attack = tcfg.eval_attack;
    attack.eps = pcfg.eps_a_r;
    attack.seed = tcfg.seed ^ 0x5eedu;
    const ErrorRates rates = empirical_error(classifier, val, attack, pcfg.method);

    EpochMetrics m;
    m.epoch = epoch;
    m.clean_err = rates.clean;
    m.pgd_err = rates.pgd;
    m.cert_err = rates.certified;
    m.mean_wc_xent = mean_wc_xent(classifier, val, pcfg.eps_a_r, pcfg.method);
    m.eps_a = pcfg.eps_a_r;
    m.beta = pcfg.method.beta;
    m.recipe = "a5pc";
    m.eps_a_c = tcfg.eps_a_c;
    m.eps_a_r = pcfg.eps_a_r;
    m.eps_d = pcfg.eps_d;
    double mse_sum = 0.0;
    for (size_t i = 0; i < protos.size(); ++i)
      mse_sum += (originals[i].w.data() - current[i].w.data()).squaredNorm() /
                 (double)originals[i].w.size();
    const double mse = mse_sum / (double)protos.size();
    m.psnr_mean =
        mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
    history.push_back(std::move(m));
  }

  for (size_t i = 0; i < protos.size(); ++i) protos[i].w = materialize(i);
  return history;
}

}  // namespace a5
