#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "a5/attacks.hpp"
#include "testutil.hpp"

using namespace a5;
using testutil::close;

namespace {

Network pinned_linear() {
  Network net({2}, {LayerSpec::dense(2, 2)});
  net.params()[0].weight = Tensor({2, 2}, {1, -1, 2, 1});
  net.params()[0].bias = Tensor({2}, {0, 1});
  return net;
}

Dataset random_label_set(int n, int dim, int classes, Rng rng) {
  Dataset d;
  d.sample_shape = {dim};
  d.num_classes = classes;
  d.images.resize(dim, n);
  for (int i = 0; i < n; ++i) {
    d.labels.push_back(rng.uniform_int(0, classes - 1));
    for (int j = 0; j < dim; ++j) d.images(j, i) = rng.uniform();
  }
  return d;
}

}  // namespace

TEST_CASE("xent pieces: pinned values and gradient identity") {
  Vec y(2);
  y << 0.0, 2.5;
  CHECK(xent_loss(y, 0) == doctest::Approx(std::log(1 + std::exp(2.5))).epsilon(1e-12));
  CHECK(xent_loss(y, 1) == doctest::Approx(std::log(std::exp(-2.5) + 1)).epsilon(1e-12));
  Vec g = xent_grad_logits(y, 0);
  const double p1 = std::exp(2.5) / (1 + std::exp(2.5));
  CHECK(g[0] == doctest::Approx(-p1).epsilon(1e-12));  // (1-p1) - 1
  CHECK(g[1] == doctest::Approx(p1).epsilon(1e-12));
  CHECK(g.sum() == doctest::Approx(0.0).epsilon(1e-14));
  // Stays finite for extreme logits.
  Vec big(2);
  big << 1e4, -1e4;
  CHECK(std::isfinite(xent_loss(big, 1)));
  CHECK(xent_grad_logits(big, 1).allFinite());
  CHECK(argmax_class(big) == 0);
}

TEST_CASE("one-step pgd at full step size is exactly fgsm on a linear net") {
  Network net = pinned_linear();
  // At x = (0.5, 0.5) with label 0: grad_x xent = W^T (softmax(y) - e0)
  // = p1 * (W^T [-1, 1]) = p1 * (1, 2), so sign = (+, +) and FGSM moves both
  // coordinates up by eps.
  Tensor x({2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step_size = 0.1;
  cfg.steps = 1;
  cfg.restarts = 1;
  Tensor adv = pgd_attack(net, x, 0, cfg, Rng(1));
  CHECK(adv[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(adv[1] == doctest::Approx(0.6).epsilon(1e-15));

  // Same attack against label 1 pushes the other way.
  Tensor adv1 = pgd_attack(net, x, 1, cfg, Rng(1));
  CHECK(adv1[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(adv1[1] == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("pgd stays inside the clipped ball and never loses to the clean point") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_dense_net(tr, 6, 2, 5, 9, 4);
    Tensor x = testutil::random_center(tr, {6}, 0.0, 1.0);
    const int label = tr.uniform_int(0, 3);
    AttackConfig cfg;
    cfg.eps = tr.uniform(0.02, 0.3);
    cfg.steps = 8;
    cfg.restarts = 3;
    Tensor adv = pgd_attack(net, x, label, cfg, tr);
    for (Eigen::Index i = 0; i < adv.size(); ++i) {
      CHECK(std::abs(adv[i] - x[i]) <= cfg.eps + 1e-12);
      CHECK(adv[i] >= -1e-12);
      CHECK(adv[i] <= 1.0 + 1e-12);
    }
    CHECK(xent_loss(forward(net, adv).data(), label) >=
          xent_loss(forward(net, x).data(), label) - 1e-12);
  }
}

TEST_CASE("pgd is deterministic in the seed and monotone in the step budget") {
  Rng rng(42);
  Network net = testutil::random_dense_net(rng, 5, 2, 6, 8, 3);
  Tensor x = testutil::random_center(rng, {5});
  AttackConfig cfg;
  cfg.eps = 0.15;
  cfg.steps = 6;
  cfg.restarts = 4;
  Tensor a1 = pgd_attack(net, x, 0, cfg, Rng(7));
  Tensor a2 = pgd_attack(net, x, 0, cfg, Rng(7));
  CHECK(a1.data() == a2.data());

  // More steps with everything else fixed visit a superset of iterates, so
  // the best loss cannot drop.
  AttackConfig one = cfg;
  one.steps = 1;
  one.step_size = cfg.eps / 10.0;
  cfg.step_size = one.step_size;
  const double l_many = xent_loss(forward(net, pgd_attack(net, x, 0, cfg, Rng(7))).data(), 0);
  const double l_one = xent_loss(forward(net, pgd_attack(net, x, 0, one, Rng(7))).data(), 0);
  CHECK(l_many >= l_one - 1e-12);
}

TEST_CASE("pgd flips the prediction when a misclassifying corner exists") {
  // Margin y0 - y1 = x0 - 3 x1 + 0.2 at the clean point (0.5, 0.2): 0.1 > 0.
  // With eps = 0.12 the corner (x0 - eps, x1 + eps) drives it to -0.38.
  Network net({2}, {LayerSpec::dense(2, 2)});
  net.params()[0].weight = Tensor({2, 2}, {1, -1, 0, 2});
  net.params()[0].bias = Tensor({2}, {0.2, 0});
  Tensor x({2}, {0.5, 0.2});
  REQUIRE(argmax_class(forward(net, x).data()) == 0);
  AttackConfig cfg;
  cfg.eps = 0.12;
  cfg.steps = 10;
  cfg.restarts = 1;
  Tensor adv = pgd_attack(net, x, 0, cfg, Rng(3));
  CHECK(argmax_class(forward(net, adv).data()) == 1);
  CHECK(adv[0] == doctest::Approx(0.38).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(0.32).epsilon(1e-12));
}

TEST_CASE("invalid attack configurations are rejected") {
  Network net = pinned_linear();
  Tensor x({2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.eps = 0.1;
  CHECK_THROWS_AS(pgd_attack(net, x, 5, cfg, Rng(1)), ShapeError);
  CHECK_THROWS_AS(pgd_attack(net, Tensor({3}), 0, cfg, Rng(1)), ShapeError);
  AttackConfig bad = cfg;
  bad.steps = 0;
  CHECK_THROWS_AS(pgd_attack(net, x, 0, bad, Rng(1)), ConfigError);
  bad = cfg;
  bad.eps = -0.1;
  CHECK_THROWS_AS(pgd_attack(net, x, 0, bad, Rng(1)), NumericError);
}

TEST_CASE("clean error on random labels sits near chance level") {
  Rng rng(44);
  Network net = testutil::random_dense_net(rng, 4, 1, 8, 12, 10);
  Dataset d = random_label_set(400, 4, 10, rng.derive(5));
  const double err = clean_error(net, d);
  CHECK(err >= 0.84);  // 1 - 1/10 give or take ~3.5 sigma
  CHECK(err <= 0.96);
}

TEST_CASE("error ordering clean <= pgd <= certified holds sample-wise") {
  Rng rng(45);
  for (int trial = 0; trial < 4; ++trial) {
    Rng tr = rng.derive((std::uint64_t)trial);
    Network net = testutil::random_dense_net(tr, 2, 1, 6, 10, 4);
    Dataset d = synth_dataset("blobs", 40, 4, 2, tr.derive(1));
    AttackConfig cfg;
    cfg.eps = 0.05;
    cfg.steps = 10;
    cfg.restarts = 2;
    const double ce = clean_error(net, d);
    const double pe = pgd_error(net, d, cfg, tr.derive(2));
    const double xe = certified_error(net, d, cfg.eps, BoundMethod::crown_ibp());
    CHECK(ce <= pe + 1e-12);
    CHECK(pe <= xe + 1e-12);
  }
}

TEST_CASE("certified error at radius zero equals clean error") {
  Rng rng(46);
  Network net = testutil::random_dense_net(rng, 2, 1, 6, 10, 4);
  Dataset d = synth_dataset("blobs", 60, 4, 2, rng.derive(1));
  CHECK(certified_error(net, d, 0.0, BoundMethod::crown_ibp()) ==
        doctest::Approx(clean_error(net, d)).epsilon(1e-12));
  CHECK(certified_error(net, d, 0.0, BoundMethod::ibp()) ==
        doctest::Approx(clean_error(net, d)).epsilon(1e-12));
}

TEST_CASE("empirical_error bundles an ordered triple and honors preprocessing") {
  Rng rng(48);
  Network net = testutil::random_dense_net(rng, 2, 1, 6, 10, 4);
  Dataset d = synth_dataset("blobs", 30, 4, 2, rng.derive(1));
  AttackConfig cfg;
  cfg.eps = 0.05;
  cfg.steps = 5;
  cfg.restarts = 2;
  cfg.seed = 123;
  ErrorRates r = empirical_error(net, d, cfg, BoundMethod::crown_ibp());
  CHECK(r.clean <= r.pgd);
  CHECK(r.pgd <= r.certified);
  CHECK(r.clean == clean_error(net, d));

  // A preprocess that pins every sample to a fixed point of its own class
  // makes that class's prediction the only outcome.
  const Tensor anchor({2}, {0.85, 0.5});
  const int pred = argmax_class(forward(net, anchor).data());
  ErrorRates pinned = empirical_error(net, d, cfg, BoundMethod::crown_ibp(),
                                      [&](const Tensor&) { return anchor; });
  int label_hits = 0;
  for (int l : d.labels) label_hits += l == pred;
  CHECK(pinned.clean == doctest::Approx(1.0 - label_hits / 30.0).epsilon(1e-12));

  Dataset empty;
  empty.sample_shape = {2};
  empty.num_classes = 4;
  empty.images.resize(2, 0);
  CHECK_THROWS_AS(empirical_error(net, empty, cfg, BoundMethod::ibp()), ShapeError);
}

TEST_CASE("pgd error is deterministic given the seed") {
  Rng rng(47);
  Network net = testutil::random_dense_net(rng, 2, 1, 5, 8, 4);
  Dataset d = synth_dataset("blobs", 25, 4, 2, rng.derive(1));
  AttackConfig cfg;
  cfg.eps = 0.08;
  cfg.steps = 5;
  cfg.restarts = 2;
  CHECK(pgd_error(net, d, cfg, Rng(9)) == pgd_error(net, d, cfg, Rng(9)));
}
