#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "a5/checkpoint.hpp"
#include "a5/network.hpp"
#include "testutil.hpp"

using namespace a5;
using testutil::close;

TEST_CASE("dense forward: pinned example") {
  Network net({2}, {LayerSpec::dense(2, 2)});
  net.params()[0].weight = Tensor({2, 2}, {1, -1, 2, 1});
  net.params()[0].bias = Tensor({2}, {0, 1});
  Tensor y = forward(net, Tensor({2}, {0.5, 0.5}));
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("forward is pure and batched forward agrees with per-sample") {
  Rng rng(11);
  Network net = testutil::random_dense_net(rng, 5, 2, 4, 8, 3);
  Tensor x = testutil::random_center(rng, {5});
  Tensor y1 = forward(net, x), y2 = forward(net, x);
  CHECK(y1.same_as(y2));

  Mat batch(5, 4);
  for (int j = 0; j < 4; ++j) batch.col(j) = testutil::random_center(rng, {5}).data();
  Mat yb = forward_batch(net, batch);
  for (int j = 0; j < 4; ++j) {
    Tensor yj = forward(net, Tensor({5}, batch.col(j)));
    CHECK((yb.col(j) - yj.data()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("shape chaining is validated at construction") {
  CHECK_THROWS_AS(Network({1, 8, 8}, {LayerSpec::dense(64, 10)}), ShapeError);  // needs flatten
  CHECK_THROWS_AS(Network({16}, {LayerSpec::conv2d(1, 4, 3, 1, 1)}), ShapeError);
  CHECK_THROWS_AS(Network({5}, {LayerSpec::dense(4, 2)}), ShapeError);
  CHECK_THROWS_AS(Network({1, 2, 2}, {LayerSpec::conv2d(1, 4, 5, 1, 0)}), ShapeError);
  Network ok({1, 8, 8}, {LayerSpec::conv2d(1, 4, 3, 2, 1), LayerSpec::relu(),
                         LayerSpec::flatten(), LayerSpec::dense(64, 10)});
  CHECK(ok.output_shape() == Shape{10});
  CHECK(ok.shape_after(0) == Shape{4, 4, 4});
}

TEST_CASE("forward rejects mismatched input shapes") {
  Network net({2}, {LayerSpec::dense(2, 2)});
  CHECK_THROWS_AS(forward(net, Tensor({3})), ShapeError);
  CHECK_THROWS_AS(forward(net, Tensor({2, 1})), ShapeError);
}

TEST_CASE("backward matches central differences on a dense net") {
  Rng rng(12);
  Network net = testutil::random_dense_net(rng, 4, 2, 4, 6, 3);
  Tensor x = testutil::random_center(rng, {4}, -0.8, 0.8);
  Tensor seed({3}, {0.7, -1.1, 0.4});

  NetGrads g = backward(net, x, seed);
  const auto loss = [&]() { return seed.data().dot(forward(net, x).data()); };

  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double fd = testutil::fd_coord(loss, x.data()[i], h);
    CHECK(close(g.input[i], fd, 1e-6, 1e-8));
  }
  for (int li = 0; li < net.num_layers(); ++li) {
    if (!net.layers()[(size_t)li].has_params()) continue;
    for (Eigen::Index i = 0; i < net.params()[(size_t)li].weight.size(); ++i) {
      const double fd =
          testutil::fd_coord(loss, net.params()[(size_t)li].weight.data()[i], h);
      CHECK(close(g.layers[(size_t)li].weight[i], fd, 1e-6, 1e-8));
    }
    for (Eigen::Index i = 0; i < net.params()[(size_t)li].bias.size(); ++i) {
      const double fd = testutil::fd_coord(loss, net.params()[(size_t)li].bias.data()[i], h);
      CHECK(close(g.layers[(size_t)li].bias[i], fd, 1e-6, 1e-8));
    }
  }
}

TEST_CASE("backward matches central differences on a conv net") {
  Rng rng(13);
  Network net = testutil::random_conv_net(rng, 5, 2, 3);
  Tensor x = testutil::random_center(rng, {1, 5, 5});
  Tensor seed({3}, {1.0, -0.5, 0.25});

  NetGrads g = backward(net, x, seed);
  const auto loss = [&]() { return seed.data().dot(forward(net, x).data()); };
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    CHECK(close(g.input[i], testutil::fd_coord(loss, x.data()[i], h), 1e-6, 1e-8));
  for (int li = 0; li < net.num_layers(); ++li) {
    if (!net.layers()[(size_t)li].has_params()) continue;
    Tensor& w = net.params()[(size_t)li].weight;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      CHECK(close(g.layers[(size_t)li].weight[i], testutil::fd_coord(loss, w.data()[i], h),
                  1e-6, 1e-8));
  }
}

TEST_CASE("init_params: fan-in variance and determinism") {
  Network net({100}, {LayerSpec::dense(100, 100)});
  init_params(net, Rng(17));
  const Vec& w = net.params()[0].weight.data();
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / (double)(w.size() - 1);
  const double want = 2.0 / 100.0;
  CHECK(var > 0.8 * want);
  CHECK(var < 1.2 * want);
  CHECK(std::abs(mean) < 0.01);
  CHECK(net.params()[0].bias.data().isZero());

  Network net2({100}, {LayerSpec::dense(100, 100)});
  init_params(net2, Rng(17));
  CHECK(net.params()[0].weight.same_as(net2.params()[0].weight));
  Network net3({100}, {LayerSpec::dense(100, 100)});
  init_params(net3, Rng(18));
  CHECK_FALSE(net.params()[0].weight.same_as(net3.params()[0].weight));
}

TEST_CASE("rmsprop: pinned single step") {
  // p=1, g=1, s=0, rho=0.9, lr=0.1: s -> 0.1, p -> 1 - 0.1/(sqrt(0.1)+1e-8)
  Tensor p = Tensor::scalar(1.0), g = Tensor::scalar(1.0);
  RmsPropState st = RmsPropState::for_tensor(p, 0.9, 1e-8);
  rmsprop_step(p, g, st, 0.1);
  CHECK(st.sq[0].weight[0] == doctest::Approx(0.1).epsilon(1e-15));
  const double want = 1.0 - 0.1 / (std::sqrt(0.1) + 1e-8);
  CHECK(p[0] == doctest::Approx(want).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(0.683772).epsilon(1e-6));
}

TEST_CASE("rmsprop: zero learning rate is an exact no-op on parameters") {
  Rng rng(14);
  Network net = testutil::random_dense_net(rng, 3, 1, 4, 4, 2);
  std::vector<LayerParams> before;
  for (const auto& p : net.params()) before.push_back(p);
  RmsPropState st = RmsPropState::for_network(net);
  std::vector<LayerParams> grads;
  for (const auto& p : net.params()) {
    LayerParams g;
    if (!p.weight.empty()) {
      g.weight = Tensor::full(p.weight.shape(), 0.25);
      g.bias = Tensor::full(p.bias.shape(), -0.5);
    }
    grads.push_back(std::move(g));
  }
  rmsprop_step(net.params(), grads, st, 0.0);
  for (size_t i = 0; i < before.size(); ++i) {
    if (before[i].weight.empty()) continue;
    CHECK(net.params()[i].weight.same_as(before[i].weight));
    CHECK(net.params()[i].bias.same_as(before[i].bias));
  }
}

TEST_CASE("rmsprop rejects non-finite gradients") {
  Tensor p = Tensor::scalar(1.0), g = Tensor::scalar(1.0);
  g.data()[0] = std::numeric_limits<double>::quiet_NaN();  // bypasses ctor check on purpose
  RmsPropState st = RmsPropState::for_tensor(p);
  CHECK_THROWS_AS(rmsprop_step(p, g, st, 0.1), NumericError);
}

TEST_CASE("checkpoint: bitwise roundtrip") {
  Rng rng(15);
  Network net({1, 6, 6}, {LayerSpec::conv2d(1, 3, 3, 2, 1), LayerSpec::relu(),
                          LayerSpec::flatten(), LayerSpec::dense(27, 5), LayerSpec::relu(),
                          LayerSpec::dense(5, 4)});
  init_params(net, rng);
  const std::string path = "roundtrip.a5ckpt";
  save_checkpoint(net, path);
  Network loaded = load_checkpoint(path);
  REQUIRE(loaded.num_layers() == net.num_layers());
  CHECK(loaded.input_shape() == net.input_shape());
  for (int i = 0; i < net.num_layers(); ++i) {
    if (!net.layers()[(size_t)i].has_params()) continue;
    CHECK(loaded.params()[(size_t)i].weight.same_as(net.params()[(size_t)i].weight));
    CHECK(loaded.params()[(size_t)i].bias.same_as(net.params()[(size_t)i].bias));
  }
}

TEST_CASE("checkpoint: corrupt files are rejected") {
  Rng rng(16);
  Network net = testutil::random_dense_net(rng, 3, 1, 4, 4, 2);
  const std::string path = "corrupt.a5ckpt";
  save_checkpoint(net, path);

  auto slurp = [&]() {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  auto spit = [&](const std::string& s) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(s.data(), (std::streamsize)s.size());
  };
  const std::string good = slurp();

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    spit(bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated payload") {
    spit(good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated header") {
    spit(good.substr(0, 6));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("manifest declares a wrong shape") {
    // Grow the first dense layer in the manifest without adding payload.
    std::string bad = good;
    const size_t at = bad.find("\"in\":3");
    REQUIRE(at != std::string::npos);
    bad.replace(at, 6, "\"in\":4");
    // Keep length prefix valid: same manifest byte count.
    spit(bad);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint("does-not-exist.a5ckpt"), IoError); }
}
