#include "a5/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "a5/attacks.hpp"
#include "a5/checkpoint.hpp"
#include "a5/data.hpp"
#include "a5/defense.hpp"
#include "a5/error.hpp"
#include "a5/metrics.hpp"
#include "a5/network.hpp"
#include "a5/physical.hpp"

namespace a5 {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// configuration: recipe defaults <- config file <- explicit flags
// ---------------------------------------------------------------------------

void apply_recipe_defaults(RunConfig& cfg) {
  if (cfg.recipe == "a5p" || cfg.recipe == "a5pc") {
    cfg.eps_d = 1.0;  // plates live on their own surface; the full range is fair game
    cfg.opt_steps = 20;
  }
}

[[noreturn]] void bad_key(const std::string& key, const char* expected) {
  throw ConfigError("config: key '" + key + "' must be " + expected);
}

void get_to(const ordered_json& v, const std::string& key, double& out) {
  if (!v.is_number()) bad_key(key, "a number");
  out = v.get<double>();
}
void get_to(const ordered_json& v, const std::string& key, int& out) {
  if (!v.is_number_integer()) bad_key(key, "an integer");
  out = v.get<int>();
}
void get_to(const ordered_json& v, const std::string& key, std::uint64_t& out) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    bad_key(key, "a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}
void get_to(const ordered_json& v, const std::string& key, std::string& out) {
  if (!v.is_string()) bad_key(key, "a string");
  out = v.get<std::string>();
}
void get_to(const ordered_json& v, const std::string& key, bool& out) {
  if (!v.is_boolean()) bad_key(key, "a boolean");
  out = v.get<bool>();
}
void get_range(const ordered_json& v, const std::string& key, double& lo, double& hi) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    bad_key(key, "a [lo, hi] number pair");
  }
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config: " + path + " is not a JSON object");

  auto sv = j.find("schema_version");
  if (sv == j.end()) throw ConfigError("config: missing schema_version");
  if (!sv->is_number_integer() || sv->get<int>() != 1) {
    throw ConfigError("config: unsupported schema_version (expected 1)");
  }

  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") continue;
    if (key == "recipe") throw ConfigError("config: the recipe is the subcommand, not a config key");
    if (key == "seed") get_to(value, key, cfg.seed);
    else if (key == "out") get_to(value, key, cfg.out);
    else if (key == "checkpoint") get_to(value, key, cfg.checkpoint);
    else if (key == "robustifier") get_to(value, key, cfg.robustifier);
    else if (key == "data") get_to(value, key, cfg.data);
    else if (key == "eps") get_to(value, key, cfg.eps);
    else if (key == "eps_d") get_to(value, key, cfg.eps_d);
    else if (key == "eps_train") get_to(value, key, cfg.eps_train);
    else if (key == "epochs") get_to(value, key, cfg.epochs);
    else if (key == "batch_size") get_to(value, key, cfg.batch_size);
    else if (key == "lr") get_to(value, key, cfg.lr);
    else if (key == "train_n") get_to(value, key, cfg.train_n);
    else if (key == "val_n") get_to(value, key, cfg.val_n);
    else if (key == "eval_n") get_to(value, key, cfg.eval_n);
    else if (key == "attack_steps") get_to(value, key, cfg.attack_steps);
    else if (key == "attack_restarts") get_to(value, key, cfg.attack_restarts);
    else if (key == "schedule_start") get_to(value, key, cfg.schedule_start);
    else if (key == "schedule_length") get_to(value, key, cfg.schedule_length);
    else if (key == "schedule_mid") get_to(value, key, cfg.schedule_mid);
    else if (key == "arch") get_to(value, key, cfg.arch);
    else if (key == "robustifier_arch") get_to(value, key, cfg.robustifier_arch);
    else if (key == "opt_steps") get_to(value, key, cfg.opt_steps);
    else if (key == "opt_lr") get_to(value, key, cfg.opt_lr);
    else if (key == "samples") get_to(value, key, cfg.samples);
    else if (key == "views_per_step") get_to(value, key, cfg.views_per_step);
    else if (key == "views_per_proto") get_to(value, key, cfg.views_per_proto);
    else if (key == "aug_shift") get_to(value, key, cfg.aug_shift);
    else if (key == "aug_rot") get_to(value, key, cfg.aug_rot);
    else if (key == "aug_flip") get_to(value, key, cfg.aug_flip);
    else if (key == "aug_crop") get_to(value, key, cfg.aug_crop);
    else if (key == "acq_crop") get_to(value, key, cfg.acq_crop);
    else if (key == "acq_rot") get_to(value, key, cfg.acq_rot);
    else if (key == "acq_persp") get_to(value, key, cfg.acq_persp);
    else if (key == "acq_noise") get_range(value, key, cfg.acq_noise_lo, cfg.acq_noise_hi);
    else if (key == "acq_blur") get_range(value, key, cfg.acq_blur_lo, cfg.acq_blur_hi);
    else if (key == "acq_brightness") get_to(value, key, cfg.acq_brightness);
    else if (key == "acq_contrast") get_to(value, key, cfg.acq_contrast);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

void require_nonneg(double v, const char* what) {
  if (!std::isfinite(v) || v < 0.0) {
    throw ConfigError(std::string(what) + " must be finite and >= 0");
  }
}

void require_path(const std::string& v, const std::string& recipe, const char* flag) {
  if (v.empty()) throw ConfigError(recipe + ": " + flag + " is required");
}

void require_distinct(const std::string& in_path, const fs::path& out_path, const char* what) {
  if (in_path.empty()) return;
  std::error_code ec;
  if (fs::weakly_canonical(in_path, ec) == fs::weakly_canonical(out_path, ec)) {
    throw ConfigError(std::string(what) + ": input and output paths must differ (" + in_path + ")");
  }
}

// ---------------------------------------------------------------------------
// data plumbing
// ---------------------------------------------------------------------------

std::vector<std::string> split_fields(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int parse_int_field(const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("--data: ") + what + " is not an integer: '" + s + "'");
  }
}

Dataset load_dataset(const RunConfig& cfg) {
  require_path(cfg.data, cfg.recipe, "--data");
  const auto colon = cfg.data.find(':');
  const std::string kind = cfg.data.substr(0, colon == std::string::npos ? cfg.data.size() : colon);
  const std::string rest = colon == std::string::npos ? "" : cfg.data.substr(colon + 1);
  if (kind == "idx") {
    const auto f = split_fields(rest);
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      throw ConfigError("--data: idx spec must be idx:<images>,<labels>");
    }
    return load_idx(f[0], f[1]);
  }
  if (kind == "synth") {
    const auto f = split_fields(rest);
    if (f.size() < 2 || f.size() > 4 || f[0].empty()) {
      throw ConfigError("--data: synth spec must be synth:<kind>,<n>[,<classes>[,<dim>]]");
    }
    const int n = parse_int_field(f[1], "synth count");
    const int classes = f.size() > 2 ? parse_int_field(f[2], "synth classes")
                                     : (f[0] == "two_rings" ? 2 : 3);
    const int dim = f.size() > 3 ? parse_int_field(f[3], "synth dim") : 2;
    return synth_dataset(f[0], n, classes, dim, Rng(cfg.seed));
  }
  if (kind == "pgm") {
    if (rest.empty()) throw ConfigError("--data: pgm spec must be pgm:<dir>");
    return load_glyph_set(rest);
  }
  throw ConfigError("--data: unknown spec '" + cfg.data + "' (expected idx:, synth:, or pgm:)");
}

// Deterministic held-out split for the training recipes.
std::pair<Dataset, Dataset> split_train_val(const Dataset& d, const RunConfig& cfg) {
  const int count = (int)d.count();
  int val_n = cfg.val_n > 0 ? cfg.val_n : std::min(200, count / 5);
  val_n = std::max(val_n, 1);
  if (val_n >= count) throw ConfigError("val_n leaves no training samples");
  int train_n = count - val_n;
  if (cfg.train_n > 0) train_n = std::min(cfg.train_n, train_n);
  auto [train, val] = split_subset(d, train_n, val_n, Rng(cfg.seed).derive(rng_stream::kSplit));
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// architecture presets
// ---------------------------------------------------------------------------

int conv_out(int extent, int kernel, int stride, int pad) {
  return (extent + 2 * pad - kernel) / stride + 1;
}

Network build_classifier(const std::string& arch, const Shape& in, int classes) {
  std::string pick = arch;
  if (pick == "auto") pick = in.size() == 3 ? "conv_small" : "dense_toy";
  if (pick == "conv_small") {
    if (in.size() != 3) throw ConfigError("arch conv_small needs (C x H x W) samples");
    const int c = in[0], h = in[1], w = in[2];
    const int h1 = conv_out(h, 4, 2, 1), w1 = conv_out(w, 4, 2, 1);
    const int h2 = conv_out(h1, 4, 2, 1), w2 = conv_out(w1, 4, 2, 1);
    if (h2 < 1 || w2 < 1) throw ConfigError("arch conv_small: input too small");
    return Network(in, {LayerSpec::conv2d(c, 8, 4, 2, 1), LayerSpec::relu(),
                        LayerSpec::conv2d(8, 16, 4, 2, 1), LayerSpec::relu(), LayerSpec::flatten(),
                        LayerSpec::dense(16 * h2 * w2, 64), LayerSpec::relu(),
                        LayerSpec::dense(64, classes)});
  }
  if (pick == "dense_toy") {
    int d = 1;
    for (int e : in) d *= e;
    std::vector<LayerSpec> layers;
    if (in.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(d, 32));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(32, classes));
    return Network(in, std::move(layers));
  }
  throw ConfigError("unknown arch '" + arch + "' (expected conv_small, dense_toy, or auto)");
}

Network build_robustifier(const std::string& arch, const Shape& in) {
  std::string pick = arch;
  if (pick == "auto") pick = in.size() == 3 ? "conv_r" : "dense_r";
  if (pick == "conv_r") {
    if (in.size() != 3) throw ConfigError("robustifier_arch conv_r needs (C x H x W) samples");
    const int c = in[0];
    return Network(in, {LayerSpec::conv2d(c, 8, 3, 1, 1), LayerSpec::relu(),
                        LayerSpec::conv2d(8, c, 5, 1, 2)});
  }
  if (pick == "dense_r") {
    int d = 1;
    for (int e : in) d *= e;
    const int hidden = std::clamp(2 * d, 16, 128);
    std::vector<LayerSpec> layers;
    if (in.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(d, hidden));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(hidden, d));
    return Network(in, std::move(layers));
  }
  throw ConfigError("unknown robustifier_arch '" + arch + "' (expected conv_r, dense_r, or auto)");
}

Network load_compatible_checkpoint(const std::string& path, const Shape& sample_shape) {
  Network net = load_checkpoint(path);
  if (net.input_shape() != sample_shape) {
    throw ConfigError("checkpoint " + path + " expects input " + shape_str(net.input_shape()) +
                      " but the data provides " + shape_str(sample_shape));
  }
  return net;
}

// ---------------------------------------------------------------------------
// shared recipe plumbing
// ---------------------------------------------------------------------------

TrainConfig make_train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.eval_n = cfg.eval_n;
  tc.eval_attack.steps = cfg.attack_steps;
  tc.eval_attack.restarts = cfg.attack_restarts;
  return tc;
}

AcquisitionPolicy make_policy(const RunConfig& cfg) {
  AcquisitionPolicy p;
  p.max_crop_px = cfg.acq_crop;
  p.max_rotation_deg = cfg.acq_rot;
  p.perspective_scale = cfg.acq_persp;
  p.noise_sigma_range = {cfg.acq_noise_lo, cfg.acq_noise_hi};
  p.blur_sigma_range = {cfg.acq_blur_lo, cfg.acq_blur_hi};
  p.jitter_brightness = cfg.acq_brightness;
  p.jitter_contrast = cfg.acq_contrast;
  return p;
}

std::vector<Prototype> load_prototypes(const RunConfig& cfg) {
  if (cfg.data.empty()) return make_glyph_prototypes();
  if (cfg.data.rfind("pgm:", 0) != 0) {
    throw ConfigError(cfg.recipe + ": --data must be pgm:<dir> (or omitted for the built-in glyphs)");
  }
  const std::string dir = cfg.data.substr(4);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError("--data: " + dir + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ConfigError("--data: no .pgm files in " + dir);
  std::vector<Prototype> protos;
  for (const fs::path& p : paths) {
    const std::string stem = p.stem().string();
    const size_t sep = stem.find('_');
    if (sep == 0 || sep == std::string::npos || stem.find_first_not_of("0123456789") < sep) {
      throw ConfigError("--data: " + p.filename().string() + " is not named <class>_<name>.pgm");
    }
    protos.push_back({load_pgm(p.string()), std::stoi(stem.substr(0, sep)), stem});
  }
  return protos;
}

void save_prototypes(const std::vector<Prototype>& protos, const fs::path& out_dir) {
  for (const Prototype& p : protos) {
    const fs::path plain = out_dir / (p.name + ".pgm");
    save_pgm(robustified_name(plain.string()), p.w);
  }
}

// Mean-energy PSNR between two aligned tensor sets (the convention every
// metrics row uses): average the per-pair MSE, convert once.
double psnr_mean_of(const std::vector<Tensor>& before, const std::vector<Tensor>& after) {
  double mse_sum = 0.0;
  for (size_t i = 0; i < before.size(); ++i) {
    mse_sum += (before[i].data() - after[i].data()).squaredNorm() / (double)before[i].size();
  }
  const double mse = before.empty() ? 0.0 : mse_sum / (double)before.size();
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

void finish(const RunConfig& cfg, const std::vector<EpochMetrics>& rows,
            const std::string& basename) {
  write_metrics((fs::path(cfg.out) / basename).string(), rows);
  const EpochMetrics& m = rows.back();
  std::cout << cfg.recipe << ": clean " << m.clean_err << "  pgd " << m.pgd_err << "  cert "
            << m.cert_err << "  -> " << (fs::path(cfg.out) / basename).string() << "\n";
}

// ---------------------------------------------------------------------------
// recipes
// ---------------------------------------------------------------------------

int do_train(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  auto [train, val] = split_train_val(d, cfg);
  const fs::path ckpt_out = fs::path(cfg.out) / "classifier.ckpt";
  require_distinct(cfg.checkpoint, ckpt_out, "train");

  Network net = cfg.checkpoint.empty()
                    ? build_classifier(cfg.arch, d.sample_shape, d.num_classes)
                    : load_compatible_checkpoint(cfg.checkpoint, d.sample_shape);
  if (cfg.checkpoint.empty()) init_params(net, Rng(cfg.seed).derive(rng_stream::kInit));

  TrainConfig tc = make_train_config(cfg);
  tc.eps_a_c = cfg.eps_train;
  tc.schedule.start_epoch = cfg.schedule_start;
  tc.schedule.length_epochs =
      cfg.schedule_length > 0 ? cfg.schedule_length : std::max(1.0, cfg.epochs / 2.0);
  tc.schedule.mid = cfg.schedule_mid;
  tc.schedule.target = cfg.eps_train;

  const auto rows = crown_ibp_train(net, train, val, tc);
  save_checkpoint(net, ckpt_out.string());
  finish(cfg, rows, "train.jsonl");
  return 0;
}

int do_certify_or_attack(const RunConfig& cfg) {
  require_path(cfg.checkpoint, cfg.recipe, "--checkpoint");
  const Dataset d = load_dataset(cfg);
  const Network net = load_compatible_checkpoint(cfg.checkpoint, d.sample_shape);

  Preprocess pre;
  TrainConfig tc = make_train_config(cfg);
  tc.eval_n = (int)d.count();
  std::optional<Network> rob;  // must outlive `pre`, which holds a pointer to it
  if (!cfg.robustifier.empty()) {
    rob = load_checkpoint(cfg.robustifier);
    if (rob->input_size() != net.input_size() || rob->output_size() != net.input_size()) {
      throw ConfigError("robustifier " + cfg.robustifier + " does not map the data space to itself");
    }
    pre = robustify_fn(*rob, DefenseSpec(cfg.eps_d));
    tc.eps_d = cfg.eps_d;
  }
  const EpochMetrics m = eval_epoch(net, d, 0, tc, cfg.eps, 1.0, cfg.recipe, pre);
  finish(cfg, {m}, cfg.recipe + ".jsonl");
  return 0;
}

int do_a5o(const RunConfig& cfg) {
  require_path(cfg.checkpoint, cfg.recipe, "--checkpoint");
  Dataset d = load_dataset(cfg);
  const Network net = load_compatible_checkpoint(cfg.checkpoint, d.sample_shape);
  if (cfg.samples > 0 && cfg.samples < d.count()) {
    d = split_subset(d, cfg.samples, 0, Rng(cfg.seed).derive(rng_stream::kSplit)).first;
  }

  const DefenseSpec spec(cfg.eps_d);
  Dataset rob = d;
  rob.provenance = "a5o";
  std::vector<Tensor> before, after;
  before.reserve((size_t)d.count());
  after.reserve((size_t)d.count());
  for (Eigen::Index i = 0; i < d.count(); ++i) {
    const Tensor x = d.sample(i);
    const RobustifiedSample s =
        a5o_robustify(net, x, d.labels[(size_t)i], cfg.eps, spec, cfg.opt_steps, cfg.opt_lr);
    rob.images.col(i) = s.robustified.data();
    before.push_back(x);
    after.push_back(s.robustified);
  }

  if (rob.sample_shape.size() == 3 && rob.sample_shape[0] == 1) {
    save_idx(rob, (fs::path(cfg.out) / "robustified_images.idx").string(),
             (fs::path(cfg.out) / "robustified_labels.idx").string());
  }

  TrainConfig tc = make_train_config(cfg);
  tc.eval_n = (int)rob.count();
  tc.eps_a_r = cfg.eps;
  tc.eps_d = cfg.eps_d;
  EpochMetrics m = eval_epoch(net, rob, 0, tc, cfg.eps, 1.0, "a5o");
  m.psnr_mean = psnr_mean_of(before, after);
  finish(cfg, {m}, "a5o.jsonl");
  return 0;
}

int do_a5r(const RunConfig& cfg) {
  require_path(cfg.checkpoint, cfg.recipe, "--checkpoint");
  const Dataset d = load_dataset(cfg);
  auto [train, val] = split_train_val(d, cfg);
  const fs::path rob_out = fs::path(cfg.out) / "robustifier.ckpt";
  require_distinct(cfg.robustifier, rob_out, "a5r");

  const Network classifier = load_compatible_checkpoint(cfg.checkpoint, d.sample_shape);
  Network robustifier = cfg.robustifier.empty()
                            ? build_robustifier(cfg.robustifier_arch, d.sample_shape)
                            : load_compatible_checkpoint(cfg.robustifier, d.sample_shape);
  if (cfg.robustifier.empty()) {
    init_params(robustifier, Rng(cfg.seed).derive(rng_stream::kInit).derive(2));
  }

  TrainConfig tc = make_train_config(cfg);
  tc.eps_a_r = cfg.eps;
  tc.eps_d = cfg.eps_d;
  const auto rows = a5r_train(classifier, robustifier, train, val, tc);
  save_checkpoint(robustifier, rob_out.string());
  finish(cfg, rows, "a5r.jsonl");
  return 0;
}

int do_a5rc(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  auto [train, val] = split_train_val(d, cfg);
  const fs::path ckpt_out = fs::path(cfg.out) / "classifier.ckpt";
  const fs::path rob_out = fs::path(cfg.out) / "robustifier.ckpt";
  require_distinct(cfg.checkpoint, ckpt_out, "a5rc");
  require_distinct(cfg.robustifier, rob_out, "a5rc");

  Network classifier = cfg.checkpoint.empty()
                           ? build_classifier(cfg.arch, d.sample_shape, d.num_classes)
                           : load_compatible_checkpoint(cfg.checkpoint, d.sample_shape);
  if (cfg.checkpoint.empty()) init_params(classifier, Rng(cfg.seed).derive(rng_stream::kInit));
  Network robustifier = cfg.robustifier.empty()
                            ? build_robustifier(cfg.robustifier_arch, d.sample_shape)
                            : load_compatible_checkpoint(cfg.robustifier, d.sample_shape);
  if (cfg.robustifier.empty()) {
    init_params(robustifier, Rng(cfg.seed).derive(rng_stream::kInit).derive(2));
  }

  TrainConfig tc = make_train_config(cfg);
  tc.eps_a_r = cfg.eps;
  tc.eps_d = cfg.eps_d;
  AugmentPolicy aug;
  aug.max_shift_px = cfg.aug_shift;
  aug.max_rotation_deg = cfg.aug_rot;
  aug.horizontal_flip = cfg.aug_flip;
  aug.max_crop_px = cfg.aug_crop;

  const auto rows = a5rc_cotrain(classifier, robustifier, train, val, tc, aug);
  save_checkpoint(classifier, ckpt_out.string());
  save_checkpoint(robustifier, rob_out.string());
  finish(cfg, rows, "a5rc.jsonl");
  return 0;
}

int do_a5p(const RunConfig& cfg) {
  require_path(cfg.checkpoint, cfg.recipe, "--checkpoint");
  const std::vector<Prototype> protos = load_prototypes(cfg);
  const Network net = load_compatible_checkpoint(cfg.checkpoint, protos.front().w.shape());
  const AcquisitionPolicy policy = make_policy(cfg);

  PhysicalConfig pc;
  pc.eps_a_r = cfg.eps;
  pc.eps_d = cfg.eps_d;
  pc.steps = cfg.opt_steps;
  pc.samples_per_step = cfg.views_per_step;
  pc.lr = cfg.opt_lr;
  pc.seed = cfg.seed;
  const std::vector<Prototype> hardened = a5p_robustify(protos, net, policy, pc);
  save_prototypes(hardened, cfg.out);

  const Dataset eval_set = acquired_dataset(hardened, policy, std::max(1, cfg.views_per_proto),
                                            Rng(cfg.seed).derive(rng_stream::kAcquire));
  TrainConfig tc = make_train_config(cfg);
  tc.eval_n = (int)eval_set.count();
  tc.eps_a_r = cfg.eps;
  tc.eps_d = cfg.eps_d;
  EpochMetrics m = eval_epoch(net, eval_set, 0, tc, cfg.eps, 1.0, "a5p");
  std::vector<Tensor> before, after;
  for (size_t i = 0; i < protos.size(); ++i) {
    before.push_back(protos[i].w);
    after.push_back(hardened[i].w);
  }
  m.psnr_mean = psnr_mean_of(before, after);
  finish(cfg, {m}, "a5p.jsonl");
  return 0;
}

int do_a5pc(const RunConfig& cfg) {
  std::vector<Prototype> protos = load_prototypes(cfg);
  const fs::path ckpt_out = fs::path(cfg.out) / "classifier.ckpt";
  require_distinct(cfg.checkpoint, ckpt_out, "a5pc");
  int classes = 2;
  for (const Prototype& p : protos) classes = std::max(classes, p.class_index + 1);

  Network classifier = cfg.checkpoint.empty()
                           ? build_classifier(cfg.arch, protos.front().w.shape(), classes)
                           : load_compatible_checkpoint(cfg.checkpoint, protos.front().w.shape());
  if (cfg.checkpoint.empty()) init_params(classifier, Rng(cfg.seed).derive(rng_stream::kInit));

  PhysicalConfig pc;
  pc.eps_a_r = cfg.eps;
  pc.eps_d = cfg.eps_d;
  pc.samples_per_step = cfg.views_per_step;
  pc.lr = cfg.opt_lr;
  pc.seed = cfg.seed;
  TrainConfig tc = make_train_config(cfg);

  const auto rows = a5pc_cotrain(protos, classifier, make_policy(cfg), pc, tc);
  save_prototypes(protos, cfg.out);
  save_checkpoint(classifier, ckpt_out.string());
  finish(cfg, rows, "a5pc.jsonl");
  return 0;
}

int do_report(const RunConfig& cfg) {
  const ReportSummary s = emit_report(cfg.out, (fs::path(cfg.out) / "report.csv").string());
  std::cout << "report: " << s.runs << " runs, " << s.rows << " rows, " << s.warnings
            << " warnings -> " << (fs::path(cfg.out) / "report.csv").string() << "\n";
  return 0;
}

int dispatch(const RunConfig& cfg) {
  require_nonneg(cfg.eps, "--eps");
  require_nonneg(cfg.eps_d, "--eps-d");
  require_nonneg(cfg.eps_train, "--eps-train");
  fs::create_directories(cfg.out);

  if (cfg.recipe == "train") return do_train(cfg);
  if (cfg.recipe == "a5o") return do_a5o(cfg);
  if (cfg.recipe == "a5r") return do_a5r(cfg);
  if (cfg.recipe == "a5rc") return do_a5rc(cfg);
  if (cfg.recipe == "a5p") return do_a5p(cfg);
  if (cfg.recipe == "a5pc") return do_a5pc(cfg);
  if (cfg.recipe == "certify" || cfg.recipe == "attack") return do_certify_or_attack(cfg);
  if (cfg.recipe == "report") return do_report(cfg);
  throw ConfigError("unknown recipe " + cfg.recipe);
}

}  // namespace

int run(int argc, const char* const* argv) {
  struct Flags {
    std::string config, out, checkpoint, data;
    std::uint64_t seed = 0;
    double eps = 0.0, eps_d = 0.0, eps_train = 0.0;
  } f;

  CLI::App app{"a5: certified preemptive robustification toolkit"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> recipes = {
      {"train", "certified classifier training (CROWN-IBP ramp)"},
      {"a5o", "offline per-sample robustification against a frozen classifier"},
      {"a5r", "train a robustifier network against a frozen classifier"},
      {"a5rc", "co-train robustifier and classifier"},
      {"a5p", "harden physical prototypes against worst-case capture"},
      {"a5pc", "co-train prototypes and classifier"},
      {"certify", "clean/PGD/certified error of a checkpoint on a dataset"},
      {"attack", "PGD evaluation of a checkpoint on a dataset"},
      {"report", "aggregate metrics files under --out into report.csv"},
  };
  for (const auto& [name, help] : recipes) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "JSON config file; explicit flags override it");
    sub->add_option("--seed", f.seed, "root RNG seed (all streams derive from it)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--checkpoint", f.checkpoint, "classifier checkpoint to load");
    sub->add_option("--data", f.data, "idx:<img>,<lbl> | synth:<kind>,<n> | pgm:<dir>");
    sub->add_option("--eps", f.eps, "attack/certification radius");
    sub->add_option("--eps-d", f.eps_d, "defense perturbation budget");
    sub->add_option("--eps-train", f.eps_train, "certified-training ramp target");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "a5: " << e.what() << '\n';
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    RunConfig cfg;
    cfg.recipe = sub->get_name();
    apply_recipe_defaults(cfg);
    if (sub->count("--config")) apply_config_file(cfg, f.config);
    if (sub->count("--seed")) cfg.seed = f.seed;
    if (sub->count("--out")) cfg.out = f.out;
    if (sub->count("--checkpoint")) cfg.checkpoint = f.checkpoint;
    if (sub->count("--data")) cfg.data = f.data;
    if (sub->count("--eps")) cfg.eps = f.eps;
    if (sub->count("--eps-d")) cfg.eps_d = f.eps_d;
    if (sub->count("--eps-train")) cfg.eps_train = f.eps_train;
    return dispatch(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "a5: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "a5: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace a5
