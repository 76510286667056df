#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "a5/bounds.hpp"
#include "testutil.hpp"

using namespace a5;
using testutil::close;

namespace {

// Monte-Carlo + corner soundness probe: no sampled point's margin may fall
// below its certified lower bound (slack covers accumulated roundoff only).
void check_margin_soundness(const Network& net, const LinfBall& ball, int true_class,
                            const BoundMethod& method, Rng& rng, int n_points,
                            double slack = 1e-9) {
  MarginSpec spec(true_class, (int)net.output_size());
  MarginBounds mb = certified_margins(net, ball, spec, method);
  Vec lo, hi;
  ball.box(lo, hi);
  const Eigen::Index n = net.input_size();

  Mat pts(n, n_points);
  for (int p = 0; p < n_points; ++p)
    for (Eigen::Index i = 0; i < n; ++i) pts(i, p) = rng.uniform(lo[i], hi[i]);
  Mat ys = forward_batch(net, pts);
  for (int p = 0; p < n_points; ++p)
    for (int j = 0; j < spec.num_classes; ++j) {
      const double margin = ys((Eigen::Index)true_class, p) - ys(j, p);
      REQUIRE(margin >= mb.margins[j] - slack);
    }

  if (n <= 12) {
    Vec corner_min = testutil::corner_min_margins(net, ball, true_class);
    for (int j = 0; j < spec.num_classes; ++j)
      REQUIRE(corner_min[j] >= mb.margins[j] - slack);
  }
}

}  // namespace

TEST_CASE("ibp: pinned dense example") {
  Network net({2}, {LayerSpec::dense(2, 2)});
  net.params()[0].weight = Tensor({2, 2}, {1, -1, 2, 1});
  net.params()[0].bias = Tensor({2}, {0, 1});
  LinfBall ball(Tensor({2}, {0.5, 0.5}), 0.1);
  auto bounds = ibp_bounds(net, ball);
  REQUIRE(bounds.size() == 2);
  CHECK(bounds[0].lower[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(bounds[0].upper[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(bounds[1].lower[0] == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(bounds[1].upper[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(bounds[1].lower[1] == doctest::Approx(2.2).epsilon(1e-12));
  CHECK(bounds[1].upper[1] == doctest::Approx(2.8).epsilon(1e-12));
}

TEST_CASE("ball: [0,1] intersection and validation") {
  LinfBall b(Tensor({2}, {0.9, 0.1}), 0.3);
  Vec lo, hi;
  b.box(lo, hi);
  CHECK(lo[0] == doctest::Approx(0.6));
  CHECK(hi[0] == doctest::Approx(1.0));
  CHECK(lo[1] == doctest::Approx(0.0));
  CHECK(hi[1] == doctest::Approx(0.4));

  LinfBall raw(Tensor({1}, {1.5}), 0.2, /*clip=*/false);
  raw.box(lo, hi);
  CHECK(hi[0] == doctest::Approx(1.7));

  CHECK_THROWS_AS(LinfBall(Tensor({1}, {0.5}), -0.1), NumericError);
  // Center far outside [0,1] with clipping on: empty intersection.
  CHECK_THROWS_AS(LinfBall(Tensor({1}, {2.0}), 0.2), NumericError);
}

TEST_CASE("interval bounds type rejects inverted bounds") {
  CHECK_THROWS_AS(IntervalBounds(Tensor({2}, {0.0, 1.0}), Tensor({2}, {1.0, 0.5})),
                  NumericError);
  CHECK_THROWS_AS(IntervalBounds(Tensor({2}), Tensor({3})), ShapeError);
}

TEST_CASE("margin spec matrices") {
  MarginSpec spec(1, 3);
  Mat full = spec.matrix();
  CHECK(full.row(1).isZero());
  CHECK(full(0, 1) == 1.0);
  CHECK(full(0, 0) == -1.0);
  Mat red = spec.reduced_matrix();
  REQUIRE(red.rows() == 2);
  CHECK(spec.reduced_class(0) == 0);
  CHECK(spec.reduced_class(1) == 2);
  CHECK_THROWS_AS(MarginSpec(3, 3), ShapeError);
  CHECK_THROWS_AS(MarginSpec(0, 1), ShapeError);
}

TEST_CASE("certified margins: pinned example from fixed output bounds") {
  // Identity (flatten-only) network turns the input box into the output
  // bounds y_l = [2, 1, 1.5], y_u = [2.5, 1.5, 2.5]; with j* = 0 the margins
  // must be [0, 0.5, -0.5].
  Network net({3}, {LayerSpec::flatten()});
  std::vector<IntervalBounds> st;
  st.emplace_back(Tensor({3}, {2.0, 1.0, 1.5}), Tensor({3}, {2.5, 1.5, 2.5}));
  st.emplace_back(Tensor({3}, {2.0, 1.0, 1.5}), Tensor({3}, {2.5, 1.5, 2.5}));
  MarginBounds mb = crown_margin_lower(net, st, MarginSpec(0, 3));
  CHECK(mb.margins[0] == 0.0);
  CHECK(mb.margins[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mb.margins[2] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("crown on a pure linear network equals the exact corner minimum") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    const int in_dim = tr.uniform_int(2, 8);
    Network net({in_dim}, {LayerSpec::dense(in_dim, 4)});
    init_params(net, tr);
    LinfBall ball(testutil::random_center(tr, {in_dim}), tr.uniform(0.01, 0.3));
    const int jstar = tr.uniform_int(0, 3);
    MarginBounds mb =
        certified_margins(net, ball, MarginSpec(jstar, 4), BoundMethod::crown_ibp());
    Vec corner = testutil::corner_min_margins(net, ball, jstar);
    for (int j = 0; j < 4; ++j) CHECK(close(mb.margins[j], corner[j], 1e-9, 1e-9));
  }
}

TEST_CASE("crown with all ReLUs stable equals the equivalent linear network") {
  // Biases shifted far positive: every ReLU is provably on, so CROWN must be
  // exact (corner enumeration on the composed linear map).
  Rng rng(22);
  Network net({3}, {LayerSpec::dense(3, 5), LayerSpec::relu(), LayerSpec::dense(5, 3)});
  init_params(net, rng);
  net.params()[0].bias = Tensor::full({5}, 10.0);
  LinfBall ball(testutil::random_center(rng, {3}), 0.05);
  MarginBounds mb = certified_margins(net, ball, MarginSpec(0, 3), BoundMethod::crown_ibp());
  Vec corner = testutil::corner_min_margins(net, ball, 0);
  for (int j = 0; j < 3; ++j) CHECK(close(mb.margins[j], corner[j], 1e-9, 1e-9));
}

TEST_CASE("soundness: random relu nets, sampled points and corners never violate bounds") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    const int in_dim = tr.uniform_int(2, 10);
    const int out_dim = tr.uniform_int(2, 5);
    Network net = testutil::random_dense_net(tr, in_dim, tr.uniform_int(1, 3), 4, 12, out_dim);
    LinfBall ball(testutil::random_center(tr, {in_dim}, 0.05, 0.95), tr.uniform(0.0, 0.25));
    const int jstar = tr.uniform_int(0, out_dim - 1);
    Rng pr = tr.derive(1000);
    check_margin_soundness(net, ball, jstar, BoundMethod::crown_ibp(), pr, 200);
    check_margin_soundness(net, ball, jstar, BoundMethod::ibp(), pr, 200);
    check_margin_soundness(net, ball, jstar, BoundMethod::mixed(tr.uniform(0, 1)), pr, 100);
  }
}

TEST_CASE("soundness holds on conv networks too") {
  Rng rng(24);
  for (int trial = 0; trial < 5; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_conv_net(tr, 4, 2, 3);
    LinfBall ball(testutil::random_center(tr, {1, 4, 4}), tr.uniform(0.02, 0.2));
    Rng pr = tr.derive(1000);
    check_margin_soundness(net, ball, tr.uniform_int(0, 2), BoundMethod::crown_ibp(), pr, 150);
  }
}

TEST_CASE("ibp invariant: lower <= upper at every stage") {
  Rng rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_dense_net(tr, 6, 2, 4, 10, 4);
    LinfBall ball(testutil::random_center(tr, {6}), tr.uniform(0.0, 0.4));
    auto st = ibp_bounds(net, ball);  // IntervalBounds ctor enforces l <= u
    CHECK(st.size() == (size_t)net.num_layers() + 1);
  }
}

TEST_CASE("crown-ibp is tighter than ibp on average, per-coordinate almost always") {
  Rng rng(26);
  int coords_total = 0, coords_crown_ge = 0;
  double sum_gap = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    const int in_dim = tr.uniform_int(2, 8);
    const int out_dim = tr.uniform_int(2, 4);
    Network net = testutil::random_dense_net(tr, in_dim, tr.uniform_int(1, 2), 4, 10, out_dim);
    LinfBall ball(testutil::random_center(tr, {in_dim}), tr.uniform(0.02, 0.2));
    const int jstar = tr.uniform_int(0, out_dim - 1);
    MarginSpec spec(jstar, out_dim);
    MarginBounds crown = certified_margins(net, ball, spec, BoundMethod::crown_ibp());
    MarginBounds ibp = certified_margins(net, ball, spec, BoundMethod::ibp());
    for (int j = 0; j < out_dim; ++j) {
      if (j == jstar) continue;
      ++coords_total;
      if (crown.margins[j] >= ibp.margins[j] - 1e-9) ++coords_crown_ge;
      sum_gap += crown.margins[j] - ibp.margins[j];
    }
  }
  CHECK((double)coords_crown_ge / coords_total >= 0.95);
  CHECK(sum_gap / coords_total > 0.0);
}

TEST_CASE("margins are monotonically non-increasing in the radius") {
  Rng rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_dense_net(tr, 5, 2, 4, 8, 3);
    Tensor c = testutil::random_center(tr, {5});
    const int jstar = tr.uniform_int(0, 2);
    MarginSpec spec(jstar, 3);
    for (BoundMethod m : {BoundMethod::ibp(), BoundMethod::crown_ibp()}) {
      Vec prev;
      for (double eps : {0.0, 0.02, 0.05, 0.1, 0.2, 0.4}) {
        MarginBounds mb = certified_margins(net, {c, eps}, spec, m);
        if (prev.size())
          for (int j = 0; j < 3; ++j) REQUIRE(mb.margins[j] <= prev[j] + 1e-12);
        prev = mb.margins;
      }
    }
  }
}

TEST_CASE("mixed(beta) interpolates the final margins exactly") {
  Rng rng(28);
  Network net = testutil::random_dense_net(rng, 4, 2, 4, 8, 3);
  LinfBall ball(testutil::random_center(rng, {4}), 0.1);
  MarginSpec spec(1, 3);
  MarginBounds crown = certified_margins(net, ball, spec, BoundMethod::crown_ibp());
  MarginBounds ibp = certified_margins(net, ball, spec, BoundMethod::ibp());
  for (double beta : {0.0, 0.3, 0.7, 1.0}) {
    MarginBounds mix = certified_margins(net, ball, spec, BoundMethod::mixed(beta));
    for (int j = 0; j < 3; ++j)
      CHECK(close(mix.margins[j], beta * crown.margins[j] + (1 - beta) * ibp.margins[j], 1e-12,
                  1e-12));
  }
  CHECK_THROWS_AS(BoundMethod::mixed(1.5), NumericError);
  CHECK_THROWS_AS(BoundMethod::mixed(-0.1), NumericError);
}

TEST_CASE("zero radius reduces margins to plain logit gaps") {
  Rng rng(29);
  Network net = testutil::random_dense_net(rng, 4, 2, 4, 8, 3);
  Tensor c = testutil::random_center(rng, {4});
  Tensor y = forward(net, c);
  for (BoundMethod m : {BoundMethod::ibp(), BoundMethod::crown_ibp(), BoundMethod::mixed(0.5)}) {
    MarginBounds mb = certified_margins(net, {c, 0.0}, MarginSpec(2, 3), m);
    for (int j = 0; j < 3; ++j) CHECK(close(mb.margins[j], y[2] - y[j], 1e-9, 1e-11));
  }
}

TEST_CASE("worst-case probabilities: pinned example and invariants") {
  MarginBounds mb;
  mb.true_class = 0;
  mb.margins = Vec(2);
  mb.margins << 0.0, 2.0;
  Vec p = worst_case_probs(mb);
  CHECK(p[0] == doctest::Approx(0.880797).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.119203).epsilon(1e-5));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(worst_case_xent(mb) == doctest::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-12));

  // Uniform margins of 0 give ln(M); huge margins stay finite.
  MarginBounds flat;
  flat.true_class = 0;
  flat.margins = Vec::Zero(10);
  CHECK(worst_case_xent(flat) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  MarginBounds huge;
  huge.true_class = 0;
  huge.margins = Vec(3);
  huge.margins << 0.0, 1e6, -1e6;
  CHECK(std::isfinite(worst_case_xent(huge)));
  Vec hp = worst_case_probs(huge);
  CHECK(hp.allFinite());
  CHECK(hp[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("certified_correct iff all non-trivial margins strictly positive") {
  Rng rng(30);
  int certified = 0;
  for (int trial = 0; trial < 40; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_dense_net(tr, 4, 1, 4, 8, 3);
    LinfBall ball(testutil::random_center(tr, {4}), tr.uniform(0.0, 0.1));
    const int jstar = tr.uniform_int(0, 2);
    MarginBounds mb =
        certified_margins(net, ball, MarginSpec(jstar, 3), BoundMethod::crown_ibp());
    bool want = true;
    for (int j = 0; j < 3; ++j)
      if (j != jstar && !(mb.margins[j] > 0)) want = false;
    CHECK(certified_correct(net, ball, jstar, BoundMethod::crown_ibp()) == want);
    if (want) ++certified;
  }
  CHECK(certified > 0);  // the case split must actually be exercised
}

TEST_CASE("wc_xent_grad matches finite differences (dense and conv, all methods)") {
  Rng rng(31);
  const double h = 1e-5, rtol = 1e-5, atol = 1e-8;
  int done = 0;
  for (std::uint64_t attempt = 0; attempt < 200 && done < 12; ++attempt) {
    Rng tr = rng.derive(attempt);
    const bool conv = done % 3 == 2;
    Network net = conv ? testutil::random_conv_net(tr, 4, 2, 3)
                       : testutil::random_dense_net(tr, 5, tr.uniform_int(1, 2), 4, 8, 3);
    Shape in_shape = conv ? Shape{1, 4, 4} : Shape{5};
    LinfBall ball(testutil::random_center(tr, in_shape, 0.25, 0.75), tr.uniform(0.03, 0.12));
    MarginSpec spec(tr.uniform_int(0, 2), 3);
    BoundMethod method = done % 3 == 1 ? BoundMethod::mixed(0.5) : BoundMethod::crown_ibp();
    if (!testutil::bound_instance_generic(net, ball, spec, method, 1e-3, 1e-4)) continue;
    ++done;

    WcXentGrad g = wc_xent_grad(net, ball, spec, method);
    const auto loss = [&]() {
      return worst_case_xent(certified_margins(net, ball, spec, method));
    };
    CHECK(g.value == doctest::Approx(loss()).epsilon(1e-12));

    for (Eigen::Index i = 0; i < ball.center.size(); ++i) {
      const double fd = testutil::fd_coord(loss, ball.center.data()[i], h);
      CHECK(close(g.d_center[i], fd, rtol, atol));
    }
    for (int li = 0; li < net.num_layers(); ++li) {
      if (!net.layers()[(size_t)li].has_params()) continue;
      Tensor& w = net.params()[(size_t)li].weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double fd = testutil::fd_coord(loss, w.data()[i], h);
        CHECK(close(g.d_params[(size_t)li].weight[i], fd, rtol, atol));
      }
      Tensor& bb = net.params()[(size_t)li].bias;
      for (Eigen::Index i = 0; i < bb.size(); ++i) {
        const double fd = testutil::fd_coord(loss, bb.data()[i], h);
        CHECK(close(g.d_params[(size_t)li].bias[i], fd, rtol, atol));
      }
    }
  }
  REQUIRE(done == 12);
}

TEST_CASE("wc loss graph equals the full-margin logsumexp") {
  Rng rng(32);
  Network net = testutil::random_dense_net(rng, 4, 1, 4, 6, 4);
  LinfBall ball(testutil::random_center(rng, {4}), 0.08);
  MarginSpec spec(2, 4);
  WcXentGrad g = wc_xent_grad(net, ball, spec, BoundMethod::crown_ibp());
  MarginBounds mb = certified_margins(net, ball, spec, BoundMethod::crown_ibp());
  CHECK(g.value == doctest::Approx(worst_case_xent(mb)).epsilon(1e-13));
}
