#pragma once

#include <cstdint>
#include <string>

namespace a5 {

// The merged view of one invocation: recipe-specific defaults, then the
// --config JSON file, then explicit flags, each layer overriding the last.
// Fields without a flag of their own are config-file keys of the same name.
struct RunConfig {
  std::string recipe;  // train|a5o|a5r|a5rc|a5p|a5pc|certify|attack|report

  std::uint64_t seed = 0;
  std::string out = ".";       // output directory (created if missing)
  std::string checkpoint;      // classifier checkpoint to load
  std::string robustifier;     // robustifier checkpoint to load (config key)
  std::string data;            // idx:<img>,<lbl> | synth:<kind>,<n>[,<classes>[,<dim>]] | pgm:<dir>
  double eps = 0.1;            // attack / certification radius; also the radius
                               // the robustifying recipes defend against
  double eps_d = 0.0;          // defense budget (a5p/a5pc default to 1.0)
  double eps_train = 0.0;      // certified-training ramp target

  // trainer knobs
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  int train_n = 0;  // cap on the training split (0 = everything not held out)
  int val_n = 0;    // held-out split size (0 = min(200, count/5))
  int eval_n = 64;  // validation samples behind each per-epoch metric row
  int attack_steps = 50;
  int attack_restarts = 5;
  double schedule_start = 1.0;   // certified ramp: first epoch with eps > 0
  double schedule_length = 0.0;  // ramp length in epochs (0 = max(1, epochs/2))
  double schedule_mid = 0.5;     // quadratic/linear knee position in (0,1)
  std::string arch = "auto";             // conv_small | dense_toy | auto
  std::string robustifier_arch = "auto";  // conv_r | dense_r | auto

  // offline / physical optimization knobs
  int opt_steps = 40;        // per-sample (a5o) or per-plate (a5p) steps
  double opt_lr = 0.25;      // RMSProp step size for z
  int samples = 0;           // a5o: how many samples to robustify (0 = all)
  int views_per_step = 4;    // a5p/a5pc: fresh captures averaged per step
  int views_per_proto = 20;  // physical evaluation captures per plate

  // augmentation policy (a5rc); all-zero = exact identity
  int aug_shift = 0;
  double aug_rot = 0.0;
  bool aug_flip = false;
  int aug_crop = 0;

  // acquisition policy (a5p/a5pc)
  int acq_crop = 2;
  double acq_rot = 10.0;
  double acq_persp = 0.03;
  double acq_noise_lo = 0.01, acq_noise_hi = 0.05;
  double acq_blur_lo = 0.3, acq_blur_hi = 0.8;
  double acq_brightness = 0.05;
  double acq_contrast = 0.05;
};

// Parses argv, runs the selected recipe, writes artifacts and metrics under
// --out. Returns 0 on success, 1 for configuration problems (unknown flag,
// unreadable config, missing required value, incompatible checkpoint), 2 for
// runtime or numeric failures. Deterministic given identical config + seed.
int run(int argc, const char* const* argv);

}  // namespace a5
