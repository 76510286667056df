#include "a5/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "a5/error.hpp"

namespace a5 {
namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // ubyte, rank 3
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // ubyte, rank 1

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("idx: truncated while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                              (unsigned char)(v >> 8), (unsigned char)v};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

unsigned char quantize_byte(double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return (unsigned char)q;
}

// Skips PGM whitespace/comments and reads one decimal token.
int read_pgm_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#')
      while (ch != EOF && ch != '\n') ch = in.get();
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw FormatError("pgm: expected integer in " + path);
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > 1'000'000'000) throw FormatError("pgm: oversized integer in " + path);
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return (int)v;
}

}  // namespace

Tensor Dataset::sample(Eigen::Index i) const {
  if (i < 0 || i >= count()) throw ShapeError("dataset: sample index out of range");
  return Tensor(sample_shape, images.col(i));
}

void Dataset::validate() const {
  if (shape_numel(sample_shape) != images.rows())
    throw ShapeError("dataset: sample shape does not match image rows");
  if ((Eigen::Index)labels.size() != images.cols())
    throw ShapeError("dataset: label count does not match image count");
  if (num_classes < 1) throw ShapeError("dataset: num_classes must be >= 1");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw ShapeError("dataset: label outside [0, num_classes)");
  if (images.size() > 0 &&
      (!images.allFinite() || images.minCoeff() < 0.0 || images.maxCoeff() > 1.0))
    throw NumericError("dataset: image values outside [0,1]");
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  return idx;
}

namespace {

Dataset take_indices(const Dataset& d, const std::vector<int>& idx, int from, int count) {
  Dataset out;
  out.sample_shape = d.sample_shape;
  out.num_classes = d.num_classes;
  out.provenance = d.provenance;
  out.images.resize(d.images.rows(), count);
  out.labels.resize((size_t)count);
  for (int i = 0; i < count; ++i) {
    out.images.col(i) = d.images.col(idx[(size_t)(from + i)]);
    out.labels[(size_t)i] = d.labels[(size_t)idx[(size_t)(from + i)]];
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split_subset(const Dataset& d, int train_n, int test_n,
                                         const Rng& rng) {
  if (train_n < 0 || test_n < 0 || train_n + test_n > d.count())
    throw ShapeError("split: train_n + test_n exceeds the dataset size");
  Rng r = rng.derive(rng_stream::kSplit);
  std::vector<int> idx = shuffled_indices((int)d.count(), r);
  return {take_indices(d, idx, 0, train_n), take_indices(d, idx, train_n, test_n)};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imf = open_input(images_path);
  if (read_u32_be(imf, "image magic") != kIdxImageMagic)
    throw FormatError("idx: " + images_path + " is not a rank-3 ubyte image file");
  const std::uint32_t n = read_u32_be(imf, "image count");
  const std::uint32_t h = read_u32_be(imf, "image rows");
  const std::uint32_t w = read_u32_be(imf, "image cols");
  if (n > 1'000'000 || h == 0 || w == 0 || h > 4096 || w > 4096)
    throw FormatError("idx: implausible image dimensions in " + images_path);
  std::vector<unsigned char> pixels((size_t)n * h * w);
  if (!imf.read(reinterpret_cast<char*>(pixels.data()), (std::streamsize)pixels.size()))
    throw FormatError("idx: truncated pixel data in " + images_path);

  std::ifstream lbf = open_input(labels_path);
  if (read_u32_be(lbf, "label magic") != kIdxLabelMagic)
    throw FormatError("idx: " + labels_path + " is not a rank-1 ubyte label file");
  const std::uint32_t ln = read_u32_be(lbf, "label count");
  if (ln != n) throw FormatError("idx: image/label counts differ");
  std::vector<unsigned char> raw(ln);
  if (!lbf.read(reinterpret_cast<char*>(raw.data()), (std::streamsize)raw.size()))
    throw FormatError("idx: truncated label data in " + labels_path);

  Dataset d;
  d.sample_shape = {1, (int)h, (int)w};
  d.images.resize((Eigen::Index)h * w, (Eigen::Index)n);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t p = 0; p < h * w; ++p)
      d.images((Eigen::Index)p, (Eigen::Index)i) = pixels[(size_t)i * h * w + p] / 255.0;
  d.labels.assign(raw.begin(), raw.end());
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.num_classes = max_label + 1;
  d.validate();
  return d;
}

void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  d.validate();
  if (d.sample_shape.size() != 3 || d.sample_shape[0] != 1)
    throw ShapeError("idx: only single-channel (1 x H x W) samples can be saved");
  if (d.num_classes > 256) throw ShapeError("idx: labels larger than a byte");
  const auto h = (std::uint32_t)d.sample_shape[1], w = (std::uint32_t)d.sample_shape[2];
  std::ofstream imf(images_path, std::ios::binary);
  if (!imf) throw IoError("cannot write " + images_path);
  write_u32_be(imf, kIdxImageMagic);
  write_u32_be(imf, (std::uint32_t)d.count());
  write_u32_be(imf, h);
  write_u32_be(imf, w);
  for (Eigen::Index i = 0; i < d.count(); ++i)
    for (Eigen::Index p = 0; p < d.images.rows(); ++p) {
      const unsigned char b = quantize_byte(d.images(p, i));
      imf.write(reinterpret_cast<const char*>(&b), 1);
    }
  if (!imf) throw IoError("write failed for " + images_path);

  std::ofstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw IoError("cannot write " + labels_path);
  write_u32_be(lbf, kIdxLabelMagic);
  write_u32_be(lbf, (std::uint32_t)d.count());
  for (int l : d.labels) {
    const unsigned char b = (unsigned char)l;
    lbf.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!lbf) throw IoError("write failed for " + labels_path);
}

Tensor load_pgm(const std::string& path) {
  std::ifstream in = open_input(path);
  char p = 0, five = 0;
  in.get(p);
  in.get(five);
  if (p != 'P' || five != '5') throw FormatError("pgm: " + path + " is not binary P5");
  const int w = read_pgm_int(in, path);
  const int h = read_pgm_int(in, path);
  const int maxval = read_pgm_int(in, path);
  if (w <= 0 || h <= 0 || w > 4096 || h > 4096)
    throw FormatError("pgm: implausible dimensions in " + path);
  if (maxval != 255) throw FormatError("pgm: only maxval 255 is supported in " + path);
  in.get();  // single whitespace byte separating header from pixels
  std::vector<unsigned char> pixels((size_t)w * h);
  if (!in.read(reinterpret_cast<char*>(pixels.data()), (std::streamsize)pixels.size()))
    throw FormatError("pgm: truncated pixel data in " + path);
  Tensor t({1, h, w});
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = pixels[(size_t)i] / 255.0;
  return t;
}

void save_pgm(const std::string& path, const Tensor& image) {
  if (image.shape().size() != 3 || image.shape()[0] != 1)
    throw ShapeError("pgm: image must have shape (1 x H x W)");
  const int h = image.shape()[1], w = image.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const unsigned char b = quantize_byte(image[i]);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_glyph_set(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("glyphs: " + dir + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError("glyphs: no .pgm files in " + dir);

  Dataset d;
  for (size_t i = 0; i < paths.size(); ++i) {
    const std::string stem = paths[i].stem().string();
    const size_t sep = stem.find('_');
    if (sep == 0 || sep > 4 || sep == std::string::npos ||
        stem.find_first_not_of("0123456789") < sep)
      throw FormatError("glyphs: " + paths[i].filename().string() +
                        " is not named <class>_<name>.pgm");
    Tensor img = load_pgm(paths[i].string());
    if (i == 0) {
      d.sample_shape = img.shape();
      d.images.resize(img.size(), (Eigen::Index)paths.size());
    } else if (img.shape() != d.sample_shape) {
      throw FormatError("glyphs: " + paths[i].filename().string() + " has mismatched dimensions");
    }
    d.images.col((Eigen::Index)i) = img.data();
    d.labels.push_back(std::stoi(stem.substr(0, sep)));
  }
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.num_classes = max_label + 1;
  d.validate();
  return d;
}

std::string robustified_name(const std::string& path) {
  const std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path() / (p.stem().string() + "_rob");
  out += p.extension();
  return out.string();
}

Dataset synth_dataset(const std::string& kind, int count, int num_classes, int dim,
                      const Rng& rng) {
  if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (count < num_classes) throw ShapeError("synth: count must be >= num_classes");
  if (dim < 2) throw ConfigError("synth: need dim >= 2");
  constexpr double kPi = 3.14159265358979323846;
  Rng r = rng.derive(rng_stream::kSynth);
  Dataset d;
  d.provenance = "synth:" + kind;
  d.sample_shape = {dim};
  d.num_classes = num_classes;
  d.images.resize(dim, count);
  d.labels.resize((size_t)count);
  if (kind == "blobs") {
    // Cluster centers on a circle of radius 0.35 around (0.5, 0.5). The
    // uniform-box noise half-width is chosen from the adjacent-center gap so
    // a margin of at least 0.1 survives in the worst corner (box corners
    // project at w*sqrt(2) onto the separating direction).
    if (num_classes > 10) throw ConfigError("synth: blobs supports at most 10 classes");
    const double gap = 2.0 * 0.35 * std::sin(kPi / num_classes);
    const double w = std::clamp((gap / 2.0 - 0.1) / std::sqrt(2.0), 0.004, 0.07);
    for (int i = 0; i < count; ++i) {
      const int c = i % num_classes;
      const double theta = 2.0 * kPi * c / num_classes;
      d.labels[(size_t)i] = c;
      d.images(0, i) = 0.5 + 0.35 * std::cos(theta) + r.uniform(-w, w);
      d.images(1, i) = 0.5 + 0.35 * std::sin(theta) + r.uniform(-w, w);
      for (int k = 2; k < dim; ++k) d.images(k, i) = 0.5 + r.uniform(-w, w);
    }
  } else if (kind == "two_rings") {
    if (num_classes != 2) throw ConfigError("synth: two_rings is a 2-class set");
    for (int i = 0; i < count; ++i) {
      const int c = i % 2;
      d.labels[(size_t)i] = c;
      const double radius = (c == 0 ? 0.14 : 0.34) + r.uniform(-0.02, 0.02);
      const double angle = r.uniform(0.0, 2.0 * kPi);
      d.images(0, i) = 0.5 + radius * std::cos(angle);
      d.images(1, i) = 0.5 + radius * std::sin(angle);
      for (int k = 2; k < dim; ++k) d.images(k, i) = 0.5 + r.uniform(-0.02, 0.02);
    }
  } else {
    throw ConfigError("synth: unknown dataset kind '" + kind + "'");
  }
  d.validate();
  return d;
}

}  // namespace a5
