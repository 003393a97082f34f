#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/errors.hpp"
#include "osebm/matrix.hpp"
#include "osebm/mlp.hpp"
#include "osebm/param_store.hpp"
#include "osebm/rng.hpp"
#include "osebm/tape.hpp"

namespace osebm {

// Energy head over latents: K logits whose negative log-sum-exp is the energy.
// The normalizing constant of the tilted prior is never represented; all
// training signals are energy differences or gradients.
struct EnergyShape {
  int d = 8;
  int k = 8;
  int hidden = 16;  // 2 * d by convention

  MlpSpec head() const { return MlpSpec{{d, hidden, k}}; }
};

inline void register_energy_head(ParamStore& store, const EnergyShape& shape, Rng& rng) {
  register_mlp(store, "alpha", shape.head(), rng);
}

// z: B x d -> logits B x K.
inline Var energy_logits(Tape& tape, const EnergyShape& shape, Var z) {
  return mlp_apply(tape, "alpha", shape.head(), z);
}

// E(z) = -logsumexp(logits): B x 1.
inline Var energy_rows(Tape& tape, Var logits) { return tape.neg(tape.logsumexp_rows(logits)); }

inline double energy_value(ParamStore& store, const EnergyShape& shape, const std::vector<double>& z) {
  return -logsumexp(mlp_forward(store, "alpha", shape.head(), z));
}

// log[exp(-E(z)) p0(z)] with the standard-normal base measure written out;
// only the global tilt normalizer is omitted.
inline double prior_logdensity_unnorm(ParamStore& store, const EnergyShape& shape,
                                      const std::vector<double>& z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  const double half_log_2pi = 0.91893853320467274178032973640562;
  return -energy_value(store, shape, z) - 0.5 * sq - shape.d * half_log_2pi;
}

struct SgldConfig {
  int steps = 100;
  double step_size = 0.4;
  bool noise_on = true;
};

// Overdamped Langevin over U(z) = E(z) + ||z||^2/2, the negative unnormalized
// log density of the tilted prior. With noise_on = false this is plain
// gradient descent on U (a deterministic diagnostic, not a sampler).
inline DenseMatrix sgld_sample(ParamStore& store, const EnergyShape& shape, const DenseMatrix& z0,
                               const SgldConfig& cfg, Rng& rng) {
  if (z0.cols != shape.d) throw std::invalid_argument("sgld_sample: latent width mismatch");
  if (cfg.steps < 0 || cfg.step_size <= 0.0) throw std::invalid_argument("sgld_sample: bad config");

  DenseMatrix z = z0;
  const double half_s2 = 0.5 * cfg.step_size * cfg.step_size;
  for (int t = 0; t < cfg.steps; ++t) {
    Tape tape(&store);
    Var zin = tape.input(z);
    Var e = energy_rows(tape, energy_logits(tape, shape, zin));
    Var u = tape.add(tape.sum_all(e), tape.scale(tape.sum_all(tape.mul(zin, zin)), 0.5));
    tape.backward(u);
    const DenseMatrix& g = tape.grad(zin);
    for (size_t i = 0; i < z.size(); ++i) {
      z.data[i] -= half_s2 * g.data[i];
      if (cfg.noise_on) z.data[i] += cfg.step_size * rng.normal();
    }
    if (!z.all_finite())
      throw DivergenceError("sgld_sample: non-finite latent at step " + std::to_string(t + 1), -1, t + 1);
  }
  return z;
}

// Contrastive energy loss: mean E over posterior samples minus mean E over
// prior samples. Both batches enter as constants; only the head gets gradients.
inline Var ebm_loss(Tape& tape, const EnergyShape& shape, const DenseMatrix& z_posterior,
                    const DenseMatrix& z_prior) {
  if (z_posterior.rows == 0 || z_prior.rows == 0) throw std::invalid_argument("ebm_loss: empty batch");
  Var e_post = tape.mean_all(energy_rows(tape, energy_logits(tape, shape, tape.constant(z_posterior))));
  Var e_prior = tape.mean_all(energy_rows(tape, energy_logits(tape, shape, tape.constant(z_prior))));
  return tape.sub(e_post, e_prior);
}

// Softmax over the energy-head logits; the classifier shares its parameters
// with the prior by construction.
inline std::vector<double> classify(ParamStore& store, const EnergyShape& shape,
                                    const std::vector<double>& z) {
  std::vector<double> logits = mlp_forward(store, "alpha", shape.head(), z);
  const double lse = logsumexp(logits);
  for (double& v : logits) v = std::exp(v - lse);
  return logits;
}

// Mean -log p[label] with probabilities clamped at 1e-12 from below.
inline Var cls_loss(Tape& tape, Var probs, const std::vector<int>& labels) {
  Var picked = tape.pick_cols(probs, labels);
  return tape.neg(tape.mean_all(tape.log_(tape.clamp_(picked, 1e-12, 2.0))));
}

// Class-coupled information estimate: CH applied to the batch-marginal
// probability vector (with each sample's own label) minus the batch mean of
// per-sample CH, where CH(p) = -p_label * log p_label.
inline Var aib_term(Tape& tape, Var probs, const std::vector<int>& labels) {
  const int rows = tape.value(probs).rows;
  const int cols = tape.value(probs).cols;
  if (rows != static_cast<int>(labels.size())) throw std::invalid_argument("aib_term: label count mismatch");

  DenseMatrix weights(1, cols);
  for (int lbl : labels) {
    if (lbl < 0 || lbl >= cols) throw std::invalid_argument("aib_term: label out of range");
    weights.at(0, lbl) += 1.0 / rows;
  }

  Var picked = tape.clamp_(tape.pick_cols(probs, labels), 1e-12, 2.0);
  Var cond = tape.neg(tape.mean_all(tape.mul(picked, tape.log_(picked))));

  Var marg = tape.clamp_(tape.mean_rows(probs), 1e-12, 2.0);
  Var ch_marg = tape.neg(tape.mul(marg, tape.log_(marg)));  // 1 x K
  Var marginal = tape.sum_all(tape.mul(ch_marg, tape.constant(weights)));
  return tape.sub(marginal, cond);
}

}  // namespace osebm
