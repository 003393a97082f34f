#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "osebm/ebm.hpp"
#include "osebm/fdcheck.hpp"

using namespace osebm;

namespace {

EnergyShape tiny_shape(int d = 3, int k = 4) {
  EnergyShape s;
  s.d = d;
  s.k = k;
  s.hidden = 2 * d;
  return s;
}

ParamStore zero_weight_head(const EnergyShape& shape) {
  ParamStore store;
  Rng rng(0);
  register_energy_head(store, shape, rng);
  for (const std::string& name : store.names("alpha/"))
    for (double& v : store.value(name).data) v = 0.0;
  return store;
}

}  // namespace

TEST_CASE("a zero-weight head gives energy -log K everywhere") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store = zero_weight_head(shape);

  for (const std::vector<double>& z : {std::vector<double>{0, 0, 0}, {1.5, -2.0, 0.25}}) {
    REQUIRE(energy_value(store, shape, z) == Catch::Approx(-std::log(4.0)).epsilon(1e-15));
  }

  // K = 3 with zero logits: energy = -log 3 = -1.0986...
  const EnergyShape shape3 = tiny_shape(2, 3);
  ParamStore store3 = zero_weight_head(shape3);
  REQUIRE(energy_value(store3, shape3, {0.7, -0.3}) == Catch::Approx(-1.0986122886681098).epsilon(1e-12));
}

TEST_CASE("shifting all logits by a constant shifts the energy by its negation") {
  const EnergyShape shape = tiny_shape(3, 5);
  ParamStore store;
  Rng rng(21);
  register_energy_head(store, shape, rng);

  const std::vector<double> z{0.4, -1.2, 2.0};
  const double e0 = energy_value(store, shape, z);

  const double c = 2.75;
  for (double& v : store.value("alpha/b1").data) v += c;
  const double e1 = energy_value(store, shape, z);
  REQUIRE(e1 == Catch::Approx(e0 - c).margin(1e-12));

  // The classifier is invariant under the same shift.
  for (double& v : store.value("alpha/b1").data) v -= c;
  const std::vector<double> p0 = classify(store, shape, z);
  for (double& v : store.value("alpha/b1").data) v += c;
  const std::vector<double> p1 = classify(store, shape, z);
  for (size_t i = 0; i < p0.size(); ++i) REQUIRE(p1[i] == Catch::Approx(p0[i]).margin(1e-12));
}

TEST_CASE("classifier probabilities are a softmax of the head logits") {
  const EnergyShape shape = tiny_shape(2, 6);
  ParamStore store;
  Rng rng(8);
  register_energy_head(store, shape, rng);

  const std::vector<double> z{1.0, -0.5};
  const std::vector<double> probs = classify(store, shape, z);
  REQUIRE(probs.size() == 6);
  double total = 0.0;
  for (double p : probs) {
    REQUIRE(p > 0.0);
    total += p;
  }
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));

  const std::vector<double> logits = mlp_forward(store, "alpha", shape.head(), z);
  const auto arg_logit = std::max_element(logits.begin(), logits.end()) - logits.begin();
  const auto arg_prob = std::max_element(probs.begin(), probs.end()) - probs.begin();
  REQUIRE(arg_logit == arg_prob);
}

TEST_CASE("prior log density reduces to the base measure under a zero head") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store = zero_weight_head(shape);

  const std::vector<double> z{0.5, -1.0, 2.0};
  double sq = 0.0;
  for (double v : z) sq += v * v;
  const double half_log_2pi = 0.91893853320467274178032973640562;
  const double expected = std::log(4.0) - 0.5 * sq - 3 * half_log_2pi;
  REQUIRE(prior_logdensity_unnorm(store, shape, z) == Catch::Approx(expected).margin(1e-12));

  // And it is maximized at the origin for the zero head.
  REQUIRE(prior_logdensity_unnorm(store, shape, {0, 0, 0}) > prior_logdensity_unnorm(store, shape, z));
}

TEST_CASE("deterministic Langevin updates follow the analytic contraction") {
  // Zero head: U(z) = ||z||^2/2 + const, so the noiseless update is
  // z <- z (1 - s^2/2) each step.
  const EnergyShape shape = tiny_shape(2, 3);
  ParamStore store = zero_weight_head(shape);

  DenseMatrix z0(1, 2, {5.0, -3.0});
  SgldConfig cfg;
  cfg.noise_on = false;
  cfg.step_size = 0.4;
  cfg.steps = 7;

  Rng rng(1);
  const DenseMatrix z = sgld_sample(store, shape, z0, cfg, rng);
  const double factor = std::pow(1.0 - 0.5 * 0.4 * 0.4, 7);
  REQUIRE(z.at(0, 0) == Catch::Approx(5.0 * factor).margin(1e-12));
  REQUIRE(z.at(0, 1) == Catch::Approx(-3.0 * factor).margin(1e-12));
}

TEST_CASE("Langevin chains with the zero head reach the standard normal") {
  // With E constant the stationary distribution of the discrete chain is
  // N(0, 1/(1 - s^2/4)); at s = 0.1 that variance is within 0.3% of 1.
  const EnergyShape shape = tiny_shape(2, 3);
  ParamStore store = zero_weight_head(shape);

  const int n = 2048;
  DenseMatrix z0(n, 2);
  Rng init(7);
  for (double& v : z0.data) v = init.normal();

  SgldConfig cfg;
  cfg.steps = 200;
  cfg.step_size = 0.1;
  Rng rng(11);
  const DenseMatrix z = sgld_sample(store, shape, z0, cfg, rng);

  for (int j = 0; j < 2; ++j) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < n; ++i) mean += z.at(i, j);
    mean /= n;
    for (int i = 0; i < n; ++i) var += std::pow(z.at(i, j) - mean, 2);
    var /= n - 1;
    REQUIRE(std::abs(mean) < 0.08);
    REQUIRE(var == Catch::Approx(1.0 / (1.0 - 0.0025)).epsilon(0.08));
  }
}

TEST_CASE("Langevin sampling is deterministic given the rng stream") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store;
  Rng rng(14);
  register_energy_head(store, shape, rng);

  DenseMatrix z0(4, 3);
  Rng zr(3);
  for (double& v : z0.data) v = zr.normal();

  SgldConfig cfg;
  cfg.steps = 25;
  Rng s1(99), s2(99);
  const DenseMatrix a = sgld_sample(store, shape, z0, cfg, s1);
  const DenseMatrix b = sgld_sample(store, shape, z0, cfg, s2);
  REQUIRE(a.data == b.data);

  REQUIRE_THROWS_AS(sgld_sample(store, shape, DenseMatrix(2, 5), cfg, s1), std::invalid_argument);
  SgldConfig bad;
  bad.step_size = 0.0;
  REQUIRE_THROWS_AS(sgld_sample(store, shape, z0, bad, s1), std::invalid_argument);
}

TEST_CASE("a divergent chain raises an error naming the failing step") {
  const EnergyShape shape = tiny_shape(2, 3);
  ParamStore store = zero_weight_head(shape);

  DenseMatrix z0(1, 2, {1.0, 1.0});
  SgldConfig cfg;
  cfg.step_size = 1e160;  // s^2/2 overflows the update immediately
  cfg.steps = 3;
  cfg.noise_on = false;
  Rng rng(0);
  try {
    sgld_sample(store, shape, z0, cfg, rng);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    REQUIRE(e.step >= 1);
    REQUIRE(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("contrastive loss vanishes when both batches coincide") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store;
  Rng rng(31);
  register_energy_head(store, shape, rng);

  DenseMatrix z(5, 3);
  Rng zr(4);
  for (double& v : z.data) v = zr.normal();

  Tape tape(&store);
  Var loss = ebm_loss(tape, shape, z, z);
  REQUIRE(tape.value(loss).data[0] == 0.0);

  // Identical batches also produce an exactly zero head gradient.
  store.zero_grads();
  tape.backward(loss);
  for (const std::string& name : store.names("alpha/"))
    for (double v : store.grad(name).data) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(ebm_loss(tape, shape, DenseMatrix(0, 3), z), std::invalid_argument);
}

TEST_CASE("contrastive loss gradients pass finite differences") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store;
  Rng rng(41);
  register_energy_head(store, shape, rng);

  DenseMatrix z_post(4, 3), z_prior(6, 3);
  Rng zr(5);
  for (double& v : z_post.data) v = zr.normal();
  for (double& v : z_prior.data) v = zr.normal();

  auto build = [&](Tape& tape) { return ebm_loss(tape, shape, z_post, z_prior); };
  const FdReport report = finite_diff_check(store, store.names("alpha/"), build);
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  REQUIRE(report.pass);
}

TEST_CASE("classification loss matches hand values") {
  ParamStore store;
  Tape tape(&store);

  // Uniform probabilities over K = 4: loss = log 4 for any labels.
  DenseMatrix uniform(3, 4);
  for (double& v : uniform.data) v = 0.25;
  Var u = tape.constant(uniform);
  REQUIRE(tape.value(cls_loss(tape, u, {0, 2, 3})).data[0] == Catch::Approx(std::log(4.0)).epsilon(1e-14));

  // Perfectly confident correct predictions: loss ~ 0.
  DenseMatrix onehot(2, 3);
  onehot.at(0, 1) = 1.0;
  onehot.at(1, 0) = 1.0;
  Tape tape2(&store);
  Var oh = tape2.constant(onehot);
  REQUIRE(tape2.value(cls_loss(tape2, oh, {1, 0})).data[0] == 0.0);

  // Confident and wrong: clamped at 1e-12, loss = -log(1e-12).
  Tape tape3(&store);
  Var oh2 = tape3.constant(onehot);
  REQUIRE(tape3.value(cls_loss(tape3, oh2, {0, 1})).data[0] ==
          Catch::Approx(-std::log(1e-12)).epsilon(1e-12));

  Tape tape4(&store);
  Var u2 = tape4.constant(uniform);
  REQUIRE_THROWS_AS(cls_loss(tape4, u2, {0, 4, 1}), std::invalid_argument);
}

TEST_CASE("information term matches the worked example") {
  // Batch of two samples over two classes: probs (0.9, 0.1) label 0 and
  // (0.1, 0.9) label 1. Conditional CH mean = -0.9 ln 0.9; the marginal
  // mean-probability vector is (0.5, 0.5), scored at each sample's own label
  // and averaged: -0.5 ln 0.5. Difference ~ 0.25175.
  DenseMatrix probs(2, 2, {0.9, 0.1, 0.1, 0.9});
  const std::vector<int> labels{0, 1};

  const double ch_cond = -0.9 * std::log(0.9);
  const double ch_marg = -0.5 * std::log(0.5);
  const double expected = ch_marg - ch_cond;
  REQUIRE(expected == Catch::Approx(0.25175).margin(5e-5));  // frozen hand value

  ParamStore store;
  Tape tape(&store);
  Var p = tape.constant(probs);
  const double ci = tape.value(aib_term(tape, p, labels)).data[0];
  REQUIRE(ci == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("information term vanishes for a single sample") {
  // With one sample the marginal equals the conditional distribution.
  DenseMatrix probs(1, 3, {0.2, 0.5, 0.3});
  ParamStore store;
  Tape tape(&store);
  const double ci = tape.value(aib_term(tape, tape.constant(probs), {1})).data[0];
  REQUIRE(ci == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("information term conditional part vanishes on one-hot predictions") {
  DenseMatrix probs(2, 2, {1.0, 0.0, 0.0, 1.0});
  const std::vector<int> labels{0, 1};
  ParamStore store;
  Tape tape(&store);
  const double ci = tape.value(aib_term(tape, tape.constant(probs), labels)).data[0];
  // Conditional CH = 0 (p log p at p = 1); marginal = (0.5, 0.5) weighted by
  // label frequency: CH_marg = -0.5 log 0.5.
  REQUIRE(ci == Catch::Approx(-0.5 * std::log(0.5)).margin(1e-12));

  Tape tape2(&store);
  REQUIRE_THROWS_AS(aib_term(tape2, tape2.constant(probs), std::vector<int>{0}), std::invalid_argument);
  Tape tape3(&store);
  REQUIRE_THROWS_AS(aib_term(tape3, tape3.constant(probs), std::vector<int>{0, 5}), std::invalid_argument);
}

TEST_CASE("information term gradients pass finite differences through the head") {
  const EnergyShape shape = tiny_shape(3, 4);
  ParamStore store;
  Rng rng(51);
  register_energy_head(store, shape, rng);

  DenseMatrix z(5, 3);
  Rng zr(6);
  for (double& v : z.data) v = zr.normal();
  const std::vector<int> labels{0, 1, 2, 3, 1};

  auto build = [&](Tape& tape) {
    Var probs = tape.softmax_rows(energy_logits(tape, shape, tape.constant(z)));
    return aib_term(tape, probs, labels);
  };
  const FdReport report = finite_diff_check(store, store.names("alpha/"), build);
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  REQUIRE(report.pass);
}

TEST_CASE("classification loss gradients pass finite differences through the head") {
  const EnergyShape shape = tiny_shape(3, 5);
  ParamStore store;
  Rng rng(61);
  register_energy_head(store, shape, rng);

  DenseMatrix z(4, 3);
  Rng zr(7);
  for (double& v : z.data) v = zr.normal();
  const std::vector<int> labels{0, 4, 2, 2};

  auto build = [&](Tape& tape) {
    Var probs = tape.softmax_rows(energy_logits(tape, shape, tape.constant(z)));
    return cls_loss(tape, probs, labels);
  };
  const FdReport report = finite_diff_check(store, store.names("alpha/"), build);
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  REQUIRE(report.pass);
}
