#pragma once

#include <string>
#include <vector>

#include "a5/rng.hpp"
#include "a5/tensor.hpp"

namespace a5 {

// A labeled sample set. Each column of `images` is one flattened sample with
// values in [0,1]; `sample_shape` restores the per-sample tensor layout.
struct Dataset {
  Mat images;  // (feature x count)
  std::vector<int> labels;
  Shape sample_shape;
  int num_classes = 0;
  std::string provenance;  // where the samples came from, e.g. "idx:...":

  Eigen::Index count() const { return images.cols(); }
  Tensor sample(Eigen::Index i) const;
  void validate() const;  // shapes/labels/value-range consistency
};

// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<int> shuffled_indices(int n, Rng& rng);

// Seeded shuffle, then disjoint prefix split into train_n + test_n samples
// (labels move with their images).
std::pair<Dataset, Dataset> split_subset(const Dataset& d, int train_n, int test_n,
                                         const Rng& rng);

// IDX (big-endian) unsigned-byte files: rank-3 image sets and rank-1 label
// sets. Images are normalized to [0,1] on load and quantized back to bytes
// on save. Missing files raise IoError; any malformed content FormatError.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// Binary 8-bit PGM (P5, maxval 255). Loaded planes have shape (1 x H x W).
Tensor load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensor& image);

// All `<class>_<name>.pgm` files in a directory, in sorted path order.
Dataset load_glyph_set(const std::string& dir);

// Sibling path for a hardened copy: stem gains a "_rob" suffix.
std::string robustified_name(const std::string& path);

// Synthetic point clouds in [0,1]^dim. "blobs": M uniform-box clusters on a
// circle in the first two coordinates, linearly separable with margin >= 0.1
// (M <= 10). "two_rings": two concentric annuli (M must be 2), which no
// linear separator can cut below ~25% error.
Dataset synth_dataset(const std::string& kind, int count, int num_classes, int dim,
                      const Rng& rng);

}  // namespace a5
