#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "a5/data.hpp"
#include "a5/error.hpp"
#include "testutil.hpp"

using namespace a5;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("a5_data_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Dataset tiny_set(int n, int h, int w, int classes) {
  Dataset d;
  d.sample_shape = {1, h, w};
  d.num_classes = classes;
  d.images.resize((Eigen::Index)h * w, n);
  Rng rng(404);
  for (int i = 0; i < n; ++i) {
    d.labels.push_back(i % classes);
    for (Eigen::Index p = 0; p < d.images.rows(); ++p) d.images(p, i) = rng.uniform();
  }
  return d;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
}

}  // namespace

TEST_CASE("idx: save/load round-trips up to byte quantization") {
  TempDir tmp;
  Dataset d = tiny_set(7, 4, 5, 3);
  save_idx(d, tmp.file("im.idx"), tmp.file("lb.idx"));
  Dataset back = load_idx(tmp.file("im.idx"), tmp.file("lb.idx"));
  CHECK(back.count() == 7);
  CHECK(back.sample_shape == Shape{1, 4, 5});
  CHECK(back.labels == d.labels);
  CHECK(back.num_classes == 3);  // max label 2
  for (Eigen::Index i = 0; i < d.images.size(); ++i) {
    CHECK(std::abs(back.images(i) - d.images(i)) <= 0.5 / 255.0 + 1e-12);
    // loaded values are exact byte multiples
    CHECK(back.images(i) * 255.0 == doctest::Approx(std::round(back.images(i) * 255.0)));
  }
  // A second save of the loaded set reproduces the files byte for byte.
  save_idx(back, tmp.file("im2.idx"), tmp.file("lb2.idx"));
  std::ifstream a(tmp.file("im.idx"), std::ios::binary), b(tmp.file("im2.idx"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("idx: pinned byte-level layout") {
  TempDir tmp;
  // One 2x2 image, label 5, pixels {0, 255, 128, 64}.
  write_bytes(tmp.file("im.idx"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2,  //
                                   0, 255, 128, 64});
  write_bytes(tmp.file("lb.idx"), {0, 0, 8, 1, 0, 0, 0, 1, 5});
  Dataset d = load_idx(tmp.file("im.idx"), tmp.file("lb.idx"));
  CHECK(d.count() == 1);
  CHECK(d.labels[0] == 5);
  CHECK(d.num_classes == 6);
  CHECK(d.images(0, 0) == 0.0);
  CHECK(d.images(1, 0) == 1.0);
  CHECK(d.images(2, 0) == doctest::Approx(128.0 / 255.0));
  CHECK(d.images(3, 0) == doctest::Approx(64.0 / 255.0));
}

TEST_CASE("idx: malformed inputs raise the right errors") {
  TempDir tmp;
  CHECK_THROWS_AS(load_idx(tmp.file("missing.idx"), tmp.file("missing2.idx")), IoError);

  // Wrong image magic (0x802).
  write_bytes(tmp.file("bad_magic.idx"), {0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2});
  write_bytes(tmp.file("lb.idx"), {0, 0, 8, 1, 0, 0, 0, 1, 0});
  CHECK_THROWS_AS(load_idx(tmp.file("bad_magic.idx"), tmp.file("lb.idx")), FormatError);

  // Truncated pixels: header promises 4 bytes, file carries 3.
  write_bytes(tmp.file("short.idx"),
              {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 9, 9, 9});
  CHECK_THROWS_AS(load_idx(tmp.file("short.idx"), tmp.file("lb.idx")), FormatError);

  // Count mismatch between images and labels.
  write_bytes(tmp.file("im1.idx"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7});
  write_bytes(tmp.file("lb2.idx"), {0, 0, 8, 1, 0, 0, 0, 2, 0, 1});
  CHECK_THROWS_AS(load_idx(tmp.file("im1.idx"), tmp.file("lb2.idx")), FormatError);

  // Labels with an image magic.
  write_bytes(tmp.file("lb_bad.idx"), {0, 0, 8, 3, 0, 0, 0, 1, 1});
  CHECK_THROWS_AS(load_idx(tmp.file("im1.idx"), tmp.file("lb_bad.idx")), FormatError);
}

TEST_CASE("pgm: round-trip and header parsing") {
  TempDir tmp;
  Rng rng(7);
  Tensor img({1, 3, 4});
  for (Eigen::Index i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  save_pgm(tmp.file("x.pgm"), img);
  Tensor back = load_pgm(tmp.file("x.pgm"));
  CHECK(back.shape() == Shape{1, 3, 4});
  for (Eigen::Index i = 0; i < img.size(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);

  // Hand-written header with a comment line and mixed whitespace.
  std::ofstream out(tmp.file("hand.pgm"), std::ios::binary);
  out << "P5\n# a comment\n 2\t1 \n255\n";
  const unsigned char px[2] = {0, 255};
  out.write(reinterpret_cast<const char*>(px), 2);
  out.close();
  Tensor hand = load_pgm(tmp.file("hand.pgm"));
  CHECK(hand.shape() == Shape{1, 1, 2});
  CHECK(hand[0] == 0.0);
  CHECK(hand[1] == 1.0);
}

TEST_CASE("pgm: rejects ascii variant, odd maxval, truncation") {
  TempDir tmp;
  std::ofstream(tmp.file("ascii.pgm")) << "P2\n2 2\n255\n0 0 0 0\n";
  CHECK_THROWS_AS(load_pgm(tmp.file("ascii.pgm")), FormatError);
  std::ofstream(tmp.file("max.pgm"), std::ios::binary) << "P5\n1 1\n65535\n\0\0";
  CHECK_THROWS_AS(load_pgm(tmp.file("max.pgm")), FormatError);
  std::ofstream(tmp.file("trunc.pgm"), std::ios::binary) << "P5\n4 4\n255\n";
  CHECK_THROWS_AS(load_pgm(tmp.file("trunc.pgm")), FormatError);
  CHECK_THROWS_AS(load_pgm(tmp.file("nope.pgm")), IoError);
  CHECK_THROWS_AS(save_pgm(tmp.file("bad.pgm"), Tensor({3, 3})), ShapeError);
}

TEST_CASE("glyph set: directory scan with class prefixes") {
  TempDir tmp;
  Tensor a = Tensor::full({1, 2, 2}, 0.5);
  save_pgm(tmp.file("0_square.pgm"), a);
  save_pgm(tmp.file("1_cross.pgm"), a);
  save_pgm(tmp.file("0_ring.pgm"), a);
  std::ofstream(tmp.file("notes.txt")) << "ignored";
  Dataset d = load_glyph_set(tmp.path.string());
  CHECK(d.count() == 3);
  CHECK(d.num_classes == 2);
  // sorted path order: 0_ring, 0_square, 1_cross
  CHECK(d.labels == std::vector<int>{0, 0, 1});
  CHECK(d.sample_shape == Shape{1, 2, 2});

  save_pgm(tmp.file("bad name.pgm"), a);
  CHECK_THROWS_AS(load_glyph_set(tmp.path.string()), FormatError);
  fs::remove(tmp.file("bad name.pgm"));
  save_pgm(tmp.file("2_big.pgm"), Tensor::full({1, 3, 3}, 0.5));
  CHECK_THROWS_AS(load_glyph_set(tmp.path.string()), FormatError);
  CHECK_THROWS_AS(load_glyph_set(tmp.file("nodir")), IoError);
}

TEST_CASE("robustified_name inserts _rob before the extension") {
  CHECK(robustified_name("glyphs/3_tri.pgm") == "glyphs/3_tri_rob.pgm");
  CHECK(robustified_name("plain.pgm") == "plain_rob.pgm");
}

TEST_CASE("split_subset: disjoint deterministic split keeping pairs aligned") {
  Dataset d;
  d.sample_shape = {1};
  d.num_classes = 3;
  const int n = 50;
  d.images.resize(1, n);
  for (int i = 0; i < n; ++i) {
    d.images(0, i) = i / double(n);  // encodes the original index
    d.labels.push_back(i % 3);
  }
  Rng rng(11);
  auto [train, test] = split_subset(d, 20, 15, rng);
  CHECK(train.count() == 20);
  CHECK(test.count() == 15);
  std::set<int> seen;
  const auto scan = [&](const Dataset& s) {
    for (Eigen::Index i = 0; i < s.count(); ++i) {
      const int orig = (int)std::lround(s.images(0, i) * n);
      CHECK(seen.insert(orig).second);         // no duplicates, no overlap
      CHECK(s.labels[(size_t)i] == orig % 3);  // label moved with its image
    }
  };
  scan(train);
  scan(test);

  auto [t2, e2] = split_subset(d, 20, 15, Rng(11));
  CHECK(t2.images == train.images);
  CHECK(e2.labels == test.labels);
  auto [t3, e3] = split_subset(d, 20, 15, Rng(12));
  CHECK(t3.images != train.images);
  CHECK_THROWS_AS(split_subset(d, 40, 11, rng), ShapeError);
}

TEST_CASE("shuffled_indices is a permutation and seed-sensitive") {
  Rng a(5), b(5), c(6);
  auto pa = shuffled_indices(100, a);
  auto pb = shuffled_indices(100, b);
  auto pc = shuffled_indices(100, c);
  CHECK(pa == pb);
  CHECK(pa != pc);
  std::set<int> s(pa.begin(), pa.end());
  CHECK(s.size() == 100);
  CHECK(*s.begin() == 0);
  CHECK(*s.rbegin() == 99);
}

TEST_CASE("synth blobs: a midpoint separator classifies M=2 perfectly") {
  Dataset d = synth_dataset("blobs", 200, 2, 2, Rng(3));
  d.validate();
  CHECK(d.num_classes == 2);
  CHECK(d.sample_shape == Shape{2});
  CHECK(d.provenance == "synth:blobs");
  // Centers sit at angle 0 and pi on the radius-0.35 circle; the separating
  // direction is the x axis with threshold 0.5.
  int correct = 0;
  for (int i = 0; i < 200; ++i) correct += (d.images(0, i) < 0.5) == (d.labels[(size_t)i] == 1);
  CHECK(correct == 200);
}

TEST_CASE("synth blobs: pairwise linear margin stays >= 0.1 even at 10 classes") {
  for (int m : {2, 4, 10}) {
    Dataset d = synth_dataset("blobs", 1000, m, 3, Rng(5));
    constexpr double kPi = 3.14159265358979323846;
    for (int a = 0; a < m; ++a) {
      const int b = (a + 1) % m;  // adjacent pair = worst case
      if (b == a) continue;
      const double ax = 0.5 + 0.35 * std::cos(2 * kPi * a / m),
                   ay = 0.5 + 0.35 * std::sin(2 * kPi * a / m);
      const double bx = 0.5 + 0.35 * std::cos(2 * kPi * b / m),
                   by = 0.5 + 0.35 * std::sin(2 * kPi * b / m);
      double ux = bx - ax, uy = by - ay;
      const double norm = std::sqrt(ux * ux + uy * uy);
      ux /= norm, uy /= norm;
      const double thr = ux * (ax + bx) / 2 + uy * (ay + by) / 2;
      double margin = 1e9;
      for (Eigen::Index i = 0; i < d.count(); ++i) {
        const int c = d.labels[(size_t)i];
        if (c != a && c != b) continue;
        const double side = ux * d.images(0, i) + uy * d.images(1, i) - thr;
        margin = std::min(margin, c == b ? side : -side);
      }
      CHECK(margin >= 0.0999);
    }
  }
}

TEST_CASE("synth two_rings: no linear separator below 25% error") {
  Dataset d = synth_dataset("two_rings", 1000, 2, 2, Rng(9));
  d.validate();
  CHECK(d.num_classes == 2);
  Rng rng(77);
  double best_err = 1.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double angle = rng.uniform(0.0, 2 * 3.14159265358979323846);
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double thr = rng.uniform(-1.0, 2.0);
    int wrong = 0;
    for (Eigen::Index i = 0; i < d.count(); ++i) {
      const int pred = ux * d.images(0, i) + uy * d.images(1, i) > thr;
      wrong += pred != d.labels[(size_t)i];
    }
    best_err = std::min(best_err, std::min(wrong, 1000 - wrong) / 1000.0);
  }
  CHECK(best_err >= 0.25);

  Dataset d2 = synth_dataset("two_rings", 1000, 2, 2, Rng(9));
  CHECK(d2.images == d.images);
  CHECK_THROWS_AS(synth_dataset("spirals", 10, 2, 2, Rng(1)), ConfigError);
  CHECK_THROWS_AS(synth_dataset("blobs", 1, 2, 2, Rng(1)), ShapeError);
  CHECK_THROWS_AS(synth_dataset("two_rings", 10, 3, 2, Rng(1)), ConfigError);
  CHECK_THROWS_AS(synth_dataset("blobs", 100, 11, 2, Rng(1)), ConfigError);
}

TEST_CASE("synth fills extra dimensions near the midpoint") {
  Dataset d = synth_dataset("blobs", 50, 4, 5, Rng(2));
  CHECK(d.sample_shape == Shape{5});
  for (Eigen::Index i = 0; i < d.count(); ++i)
    for (int k = 2; k < 5; ++k) CHECK(std::abs(d.images(k, i) - 0.5) <= 0.07 + 1e-12);
}

TEST_CASE("dataset validate catches inconsistencies") {
  Dataset d = tiny_set(3, 2, 2, 2);
  d.validate();
  Dataset bad = d;
  bad.labels[0] = 7;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = d;
  bad.images(0, 0) = 1.5;
  CHECK_THROWS_AS(bad.validate(), NumericError);
  bad = d;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  CHECK_THROWS_AS(d.sample(3), ShapeError);
  Tensor s0 = d.sample(0);
  CHECK(s0.shape() == Shape{1, 2, 2});
  CHECK(s0[0] == d.images(0, 0));
}
