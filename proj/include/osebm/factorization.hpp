#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "osebm/rng.hpp"

// Discrete sanity harness for the model's joint structure. The generative
// story factorizes the joint over latent z, observation x, attributes a and
// label y as p(y|a,z) * p(z) * p(x|z) * p(a|z): given the latent, attributes
// and observation are independent, and the label needs only (a, z). The
// checker recovers each conditional from a tabulated joint by marginalization
// and verifies the product identity cell by cell, so a joint built with any
// extra dependency (say y reading x directly) is rejected.

namespace osebm {

struct ToyJointTable {
  int nz = 0, nx = 0, na = 0, ny = 0;
  std::vector<double> p;  // flat over (z, x, a, y)

  ToyJointTable(int z_states, int x_states, int a_states, int y_states)
      : nz(z_states), nx(x_states), na(a_states), ny(y_states) {
    if (nz < 1 || nx < 1 || na < 1 || ny < 1)
      throw std::invalid_argument("ToyJointTable: state counts must be positive");
    p.assign(static_cast<size_t>(nz) * nx * na * ny, 0.0);
  }

  size_t idx(int z, int x, int a, int y) const {
    return ((static_cast<size_t>(z) * nx + x) * na + a) * ny + y;
  }
  double& at(int z, int x, int a, int y) { return p[idx(z, x, a, y)]; }
  double at(int z, int x, int a, int y) const { return p[idx(z, x, a, y)]; }
};

// Row-stochastic random table: `rows` distributions over `cols` outcomes.
inline std::vector<double> random_stochastic_rows(int rows, int cols, Rng& rng) {
  std::vector<double> t(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    double total = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double v = 0.05 + rng.uniform();  // bounded away from zero mass
      t[static_cast<size_t>(r) * cols + c] = v;
      total += v;
    }
    for (int c = 0; c < cols; ++c) t[static_cast<size_t>(r) * cols + c] /= total;
  }
  return t;
}

// Joint assembled from the model's factors. pz has nz entries; px_z is
// nz rows of nx; pa_z is nz rows of na; py_az is (a * nz + z) rows of ny.
inline ToyJointTable joint_from_factors(int nz, int nx, int na, int ny, const std::vector<double>& pz,
                                        const std::vector<double>& px_z, const std::vector<double>& pa_z,
                                        const std::vector<double>& py_az) {
  ToyJointTable t(nz, nx, na, ny);
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x)
      for (int a = 0; a < na; ++a)
        for (int y = 0; y < ny; ++y)
          t.at(z, x, a, y) = py_az[(static_cast<size_t>(a) * nz + z) * ny + y] * pz[z] *
                             px_z[static_cast<size_t>(z) * nx + x] *
                             pa_z[static_cast<size_t>(z) * na + a];
  return t;
}

inline ToyJointTable random_factorized_joint(int nz, int nx, int na, int ny, Rng& rng) {
  const std::vector<double> pz = random_stochastic_rows(1, nz, rng);
  const std::vector<double> px_z = random_stochastic_rows(nz, nx, rng);
  const std::vector<double> pa_z = random_stochastic_rows(nz, na, rng);
  const std::vector<double> py_az = random_stochastic_rows(na * nz, ny, rng);
  return joint_from_factors(nz, nx, na, ny, pz, px_z, pa_z, py_az);
}

// Negative control: the label conditional also reads x, which breaks the
// conditional independence the decomposition relies on.
inline ToyJointTable random_tampered_joint(int nz, int nx, int na, int ny, Rng& rng) {
  const std::vector<double> pz = random_stochastic_rows(1, nz, rng);
  const std::vector<double> px_z = random_stochastic_rows(nz, nx, rng);
  const std::vector<double> pa_z = random_stochastic_rows(nz, na, rng);
  const std::vector<double> py_azx = random_stochastic_rows(na * nz * nx, ny, rng);
  ToyJointTable t(nz, nx, na, ny);
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x)
      for (int a = 0; a < na; ++a)
        for (int y = 0; y < ny; ++y)
          t.at(z, x, a, y) = py_azx[((static_cast<size_t>(a) * nz + z) * nx + x) * ny + y] * pz[z] *
                             px_z[static_cast<size_t>(z) * nx + x] *
                             pa_z[static_cast<size_t>(z) * na + a];
  return t;
}

struct FactorizationReport {
  bool pass = false;
  double max_abs_err = 0.0;
  size_t cells_checked = 0;
};

// Recovers p(z), p(x|z), p(a|z), p(y|a,z) from the joint and verifies
// p(z,x,a,y) == p(y|a,z) p(z) p(x|z) p(a|z) everywhere the conditioning
// events have mass.
inline FactorizationReport check_factorization(const ToyJointTable& t, double tol = 1e-12) {
  const int nz = t.nz, nx = t.nx, na = t.na, ny = t.ny;
  std::vector<double> pz(nz, 0.0);
  std::vector<double> pxz(static_cast<size_t>(nz) * nx, 0.0);   // joint p(x, z)
  std::vector<double> paz(static_cast<size_t>(nz) * na, 0.0);   // joint p(a, z)
  std::vector<double> pyaz(static_cast<size_t>(na) * nz * ny, 0.0);  // joint p(y, a, z)

  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x)
      for (int a = 0; a < na; ++a)
        for (int y = 0; y < ny; ++y) {
          const double v = t.at(z, x, a, y);
          if (v < 0.0) throw std::invalid_argument("check_factorization: negative mass");
          pz[z] += v;
          pxz[static_cast<size_t>(z) * nx + x] += v;
          paz[static_cast<size_t>(z) * na + a] += v;
          pyaz[(static_cast<size_t>(a) * nz + z) * ny + y] += v;
        }

  FactorizationReport rep;
  for (int z = 0; z < nz; ++z) {
    if (pz[z] <= 0.0) continue;  // conditioning event without mass: nothing to check
    for (int a = 0; a < na; ++a) {
      const double mass_az = paz[static_cast<size_t>(z) * na + a];
      const double p_a_given_z = mass_az / pz[z];
      for (int x = 0; x < nx; ++x) {
        const double p_x_given_z = pxz[static_cast<size_t>(z) * nx + x] / pz[z];
        for (int y = 0; y < ny; ++y) {
          const double p_y_given_az =
              mass_az <= 0.0 ? 0.0 : pyaz[(static_cast<size_t>(a) * nz + z) * ny + y] / mass_az;
          const double rebuilt = p_y_given_az * pz[z] * p_x_given_z * p_a_given_z;
          const double err = std::fabs(rebuilt - t.at(z, x, a, y));
          rep.max_abs_err = std::max(rep.max_abs_err, err);
          ++rep.cells_checked;
        }
      }
    }
  }
  rep.pass = rep.cells_checked > 0 && rep.max_abs_err <= tol;
  return rep;
}

}  // namespace osebm
