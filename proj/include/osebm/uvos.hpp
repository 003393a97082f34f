#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/mlp.hpp"
#include "osebm/rng.hpp"
#include "osebm/tape.hpp"

namespace osebm {

// Streaming precision-weighted Gaussian estimate for one class. State is two
// d-vectors and a counter regardless of how many batches were folded in; the
// batch estimate and any sequence of partial updates agree up to summation
// rounding.
struct ClassDensity {
  std::vector<double> accum_pmu;  // sum over samples of mu / sigma^2
  std::vector<double> accum_p;    // sum over samples of 1 / sigma^2
  uint64_t n_seen = 0;

  explicit ClassDensity(int d = 0) : accum_pmu(d, 0.0), accum_p(d, 0.0) {}

  int dim() const { return static_cast<int>(accum_p.size()); }
  bool ready() const { return n_seen > 0; }

  std::vector<double> mu_hat() const {
    std::vector<double> mu(accum_p.size());
    for (size_t i = 0; i < mu.size(); ++i) mu[i] = accum_pmu[i] / accum_p[i];
    return mu;
  }
  // Diagonal precision of the estimate (grows with the evidence folded in).
  const std::vector<double>& p_hat() const { return accum_p; }
};

// Fold a batch of diagonal posteriors (mu, sigma) into the class state.
inline void update_density(ClassDensity& density, const DenseMatrix& mu, const DenseMatrix& sigma) {
  if (!mu.same_shape(sigma)) throw std::invalid_argument("update_density: mu/sigma shape mismatch");
  if (mu.rows == 0) return;
  if (mu.cols != density.dim()) throw std::invalid_argument("update_density: dimension mismatch");
  for (int i = 0; i < mu.rows; ++i)
    for (int j = 0; j < mu.cols; ++j) {
      const double s = sigma.at(i, j);
      if (s <= 0.0) throw std::invalid_argument("update_density: sigma must be positive");
      const double p = 1.0 / (s * s);
      density.accum_p[j] += p;
      density.accum_pmu[j] += p * mu.at(i, j);
    }
  density.n_seen += mu.rows;
}

// log N(z; mu_hat, diag(1/p_hat)) = sum_i [log(p_i / 2pi) - p_i (z_i - mu_i)^2] / 2.
inline double density_loglik(const ClassDensity& density, const std::vector<double>& z) {
  if (!density.ready()) throw std::invalid_argument("density_loglik: no samples folded in");
  if (static_cast<int>(z.size()) != density.dim()) throw std::invalid_argument("density_loglik: bad size");
  const double two_pi = 6.283185307179586476925286766559;
  const std::vector<double> mu = density.mu_hat();
  double ll = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    const double p = density.accum_p[i];
    const double dz = z[i] - mu[i];
    ll += 0.5 * (std::log(p / two_pi) - p * dz * dz);
  }
  return ll;
}

enum class OutlierMode { Quantile, Absolute };

struct OutlierConfig {
  int candidates = 200;  // S
  int retained = 20;     // H, lowest-density candidates kept (quantile mode)
  OutlierMode mode = OutlierMode::Quantile;
  double epsilon = 0.0;  // absolute mode: keep candidates with density < epsilon
};

struct OutlierDraw {
  DenseMatrix retained_v;    // retained x d, normalized coordinates
  DenseMatrix candidates_v;  // candidates x d, all draws
  std::vector<double> loglik;
  std::vector<int> retained_idx;
};

// Draw candidates from the class density and keep the lowest-density subset.
// Returned coordinates are normalized: v = (z - mu_hat) * sqrt(p_hat), so for
// exact Gaussian draws the squared norms are chi-square(d) samples and the
// retained ones sit in the upper tail.
inline OutlierDraw sample_virtual_outliers(const ClassDensity& density, const OutlierConfig& cfg, Rng& rng) {
  if (!density.ready()) throw std::invalid_argument("sample_virtual_outliers: empty density");
  if (cfg.mode == OutlierMode::Quantile) {
    if (cfg.retained < 1 || cfg.candidates < cfg.retained)
      throw std::invalid_argument("sample_virtual_outliers: need candidates >= retained >= 1");
  } else {
    if (cfg.candidates < 1) throw std::invalid_argument("sample_virtual_outliers: need candidates >= 1");
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("sample_virtual_outliers: epsilon must be > 0 in absolute mode");
  }

  const int d = density.dim();
  const std::vector<double> mu = density.mu_hat();
  OutlierDraw draw;
  draw.candidates_v = DenseMatrix(cfg.candidates, d);
  draw.loglik.resize(cfg.candidates);
  for (int s = 0; s < cfg.candidates; ++s) {
    std::vector<double> z(d);
    for (int j = 0; j < d; ++j) {
      const double n = rng.normal();
      z[j] = mu[j] + n / std::sqrt(density.accum_p[j]);
      draw.candidates_v.at(s, j) = n;  // (z - mu) * sqrt(p) collapses back to the raw draw
    }
    draw.loglik[s] = density_loglik(density, z);
  }

  if (cfg.mode == OutlierMode::Quantile) {
    std::vector<int> order(cfg.candidates);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (draw.loglik[a] != draw.loglik[b]) return draw.loglik[a] < draw.loglik[b];
      return a < b;
    });
    draw.retained_idx.assign(order.begin(), order.begin() + cfg.retained);
  } else {
    // Absolute mode: keep every candidate whose density falls below epsilon.
    // Nothing below the threshold legitimately yields an empty draw.
    const double log_eps = std::log(cfg.epsilon);
    for (int s = 0; s < cfg.candidates; ++s)
      if (draw.loglik[s] < log_eps) draw.retained_idx.push_back(s);
  }
  const int kept = static_cast<int>(draw.retained_idx.size());
  draw.retained_v = DenseMatrix(kept, d);
  for (int r = 0; r < kept; ++r)
    for (int j = 0; j < d; ++j) draw.retained_v.at(r, j) = draw.candidates_v.at(draw.retained_idx[r], j);
  return draw;
}

// Per-sample normalization constants for a labeled batch: row i carries the
// class statistics of labels[i].
struct NormalizerConstants {
  DenseMatrix mu_rows;      // B x d
  DenseMatrix sqrt_p_rows;  // B x d
};

inline NormalizerConstants make_normalizer_constants(const std::vector<int>& labels,
                                                     const std::map<int, ClassDensity>& densities) {
  if (labels.empty()) throw std::invalid_argument("make_normalizer_constants: empty batch");
  const int d = densities.begin()->second.dim();
  NormalizerConstants out;
  out.mu_rows = DenseMatrix(static_cast<int>(labels.size()), d);
  out.sqrt_p_rows = DenseMatrix(static_cast<int>(labels.size()), d);
  for (size_t i = 0; i < labels.size(); ++i) {
    auto it = densities.find(labels[i]);
    if (it == densities.end() || !it->second.ready())
      throw std::invalid_argument("make_normalizer_constants: no density for class " +
                                  std::to_string(labels[i]));
    const std::vector<double> mu = it->second.mu_hat();
    for (int j = 0; j < d; ++j) {
      out.mu_rows.at(static_cast<int>(i), j) = mu[j];
      out.sqrt_p_rows.at(static_cast<int>(i), j) = std::sqrt(it->second.accum_p[j]);
    }
  }
  return out;
}

// v = (z - mu_hat_label) * sqrt(p_hat_label), elementwise, one row per sample.
inline DenseMatrix normalize_known(const DenseMatrix& z, const std::vector<int>& labels,
                                   const std::map<int, ClassDensity>& densities) {
  if (z.rows != static_cast<int>(labels.size())) throw std::invalid_argument("normalize_known: row mismatch");
  NormalizerConstants c = make_normalizer_constants(labels, densities);
  DenseMatrix v = z;
  for (int i = 0; i < v.rows; ++i)
    for (int j = 0; j < v.cols; ++j) v.at(i, j) = (z.at(i, j) - c.mu_rows.at(i, j)) * c.sqrt_p_rows.at(i, j);
  return v;
}

// Tape version of the same map; gradients flow through z.
inline Var normalize_known_var(Tape& tape, Var z, const NormalizerConstants& c) {
  return tape.mul(tape.sub(z, tape.constant(c.mu_rows)), tape.constant(c.sqrt_p_rows));
}

struct DetectorShape {
  int d = 8;
  int hidden = 16;

  MlpSpec net() const { return MlpSpec{{d, hidden, 2}}; }
};

inline void register_ood_detector(ParamStore& store, const DetectorShape& shape, Rng& rng) {
  register_mlp(store, "theta", shape.net(), rng);
}

// Binary cross-entropy over the union of virtual outliers (target: unknown,
// class 1) and normalized known samples (target: known, class 0). The outliers
// are constants; gradients reach the detector and, through v_minus, the encoder.
inline Var uvos_loss(Tape& tape, const DetectorShape& shape, const DenseMatrix& v_plus, Var v_minus) {
  const int n_plus = v_plus.rows;
  const int n_minus = tape.value(v_minus).rows;
  if (n_plus + n_minus == 0) throw std::invalid_argument("uvos_loss: empty union");

  auto log_prob_of = [&](Var v, int target) {
    Var probs = tape.softmax_rows(mlp_apply(tape, "theta", shape.net(), v));
    std::vector<int> idx(tape.value(probs).rows, target);
    return tape.sum_all(tape.log_(tape.clamp_(tape.pick_cols(probs, idx), 1e-12, 2.0)));
  };

  Var total = tape.constant(DenseMatrix(1, 1));
  if (n_plus > 0) total = tape.add(total, log_prob_of(tape.constant(v_plus), 1));
  if (n_minus > 0) total = tape.add(total, log_prob_of(v_minus, 0));
  return tape.scale(total, -1.0 / (n_plus + n_minus));
}

}  // namespace osebm
