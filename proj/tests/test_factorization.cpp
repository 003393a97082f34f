#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "osebm/factorization.hpp"

using namespace osebm;

TEST_CASE("randomly generated factorized joints verify at tight tolerance") {
  Rng rng(314);
  for (int trial = 0; trial < 100; ++trial) {
    const int nz = 2 + static_cast<int>(rng.uniform() * 3);
    const int nx = 2 + static_cast<int>(rng.uniform() * 3);
    const int na = 2 + static_cast<int>(rng.uniform() * 3);
    const int ny = 2 + static_cast<int>(rng.uniform() * 3);
    const ToyJointTable t = random_factorized_joint(nz, nx, na, ny, rng);
    const FactorizationReport rep = check_factorization(t, 1e-12);
    INFO("trial " << trial << " dims (" << nz << "," << nx << "," << na << "," << ny << ") err "
                  << rep.max_abs_err);
    REQUIRE(rep.pass);
    REQUIRE(rep.cells_checked == static_cast<size_t>(nz) * nx * na * ny);
  }
}

TEST_CASE("a label that secretly reads the observation is rejected") {
  Rng rng(99);
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ToyJointTable t = random_tampered_joint(3, 3, 2, 2, rng);
    const FactorizationReport rep = check_factorization(t, 1e-12);
    if (!rep.pass) {
      ++failures;
      REQUIRE(rep.max_abs_err > 1e-12);
    }
  }
  // The tampering draws a fresh conditional per x, so collisions back into an
  // actually-factorized table have probability zero.
  REQUIRE(failures == 50);
}

TEST_CASE("tampered joints are caught even at loose tolerance") {
  Rng rng(7);
  const ToyJointTable t = random_tampered_joint(2, 4, 2, 3, rng);
  const FactorizationReport rep = check_factorization(t, 1e-6);
  REQUIRE_FALSE(rep.pass);
  REQUIRE(rep.max_abs_err > 1e-6);
}

TEST_CASE("latent states without mass are skipped, not failed") {
  Rng rng(21);
  const std::vector<double> pz = {0.0, 0.4, 0.6};  // state 0 unreachable
  const std::vector<double> px_z = random_stochastic_rows(3, 2, rng);
  const std::vector<double> pa_z = random_stochastic_rows(3, 2, rng);
  const std::vector<double> py_az = random_stochastic_rows(2 * 3, 2, rng);
  const ToyJointTable t = joint_from_factors(3, 2, 2, 2, pz, px_z, pa_z, py_az);

  const FactorizationReport rep = check_factorization(t, 1e-12);
  REQUIRE(rep.pass);
  // Only the two reachable z slices contribute cells.
  REQUIRE(rep.cells_checked == static_cast<size_t>(2) * 2 * 2 * 2);
}

TEST_CASE("a hand-built dependent joint fails with a quantifiable error") {
  // Deterministic XOR-style label: y = x for one attribute value. Any such
  // direct x -> y edge violates the conditional independence given (a, z).
  ToyJointTable t(1, 2, 1, 2);
  t.at(0, 0, 0, 0) = 0.5;  // x=0 -> y=0
  t.at(0, 1, 0, 1) = 0.5;  // x=1 -> y=1
  const FactorizationReport rep = check_factorization(t);
  REQUIRE_FALSE(rep.pass);
  // Rebuilt cell (z=0,x=0,a=0,y=0): p(y=0|a,z)=0.5, p(x=0|z)=0.5 -> 0.25 vs 0.5.
  REQUIRE(rep.max_abs_err == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("table construction and validation reject bad inputs") {
  REQUIRE_THROWS_AS(ToyJointTable(0, 2, 2, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(ToyJointTable(2, 2, -1, 2), std::invalid_argument);

  ToyJointTable t(2, 2, 2, 2);
  t.at(0, 0, 0, 0) = -0.1;
  REQUIRE_THROWS_AS(check_factorization(t), std::invalid_argument);
}

TEST_CASE("stochastic row helper yields normalized positive rows") {
  Rng rng(5);
  const std::vector<double> rows = random_stochastic_rows(4, 6, rng);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) {
      REQUIRE(rows[static_cast<size_t>(r) * 6 + c] > 0.0);
      s += rows[static_cast<size_t>(r) * 6 + c];
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
}
