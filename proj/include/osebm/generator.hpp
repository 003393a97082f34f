#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "osebm/ebm.hpp"
#include "osebm/matrix.hpp"
#include "osebm/mlp.hpp"
#include "osebm/rafa.hpp"
#include "osebm/tape.hpp"

namespace osebm {

struct GeneratorShape {
  int d = 8;
  int out_dim = 32;
  int hidden = 64;

  MlpSpec decoder() const { return MlpSpec{{d, hidden, out_dim}}; }
};

inline void register_decoder(ParamStore& store, const GeneratorShape& shape, Rng& rng) {
  register_mlp(store, "beta", shape.decoder(), rng);
}

inline Var decode(Tape& tape, const GeneratorShape& shape, Var z) {
  return mlp_apply(tape, "beta", shape.decoder(), z);
}

inline std::vector<double> decode_value(ParamStore& store, const GeneratorShape& shape,
                                        const std::vector<double>& z) {
  return mlp_forward(store, "beta", shape.decoder(), z);
}

// Unit-observation-variance Gaussian reconstruction: mean over the batch of
// ||x_hat - x||^2 / 2, summed over feature dimensions.
inline Var recon_loss(Tape& tape, Var x_hat, const DenseMatrix& x) {
  if (!tape.value(x_hat).same_shape(x)) throw std::invalid_argument("recon_loss: shape mismatch");
  if (x.rows == 0) throw std::invalid_argument("recon_loss: empty batch");
  Var diff = tape.sub(x_hat, tape.constant(x));
  return tape.scale(tape.sum_all(tape.mul(diff, diff)), 0.5 / x.rows);
}

// KL(q || N(0, I)) for a diagonal Gaussian, closed form, mean over the batch:
// sum_i (mu_i^2 + sigma_i^2 - 1 - 2 log sigma_i) / 2.
inline Var kl_to_standard_normal(Tape& tape, const PosteriorVars& post) {
  const int rows = tape.value(post.mu).rows;
  const int cols = tape.value(post.mu).cols;
  if (rows == 0) throw std::invalid_argument("kl_to_standard_normal: empty batch");
  DenseMatrix ones(rows, cols);
  for (double& v : ones.data) v = 1.0;
  Var terms = tape.sub(tape.add(tape.mul(post.mu, post.mu), tape.mul(post.sigma, post.sigma)),
                       tape.add(tape.constant(ones), tape.scale(post.log_sigma, 2.0)));
  return tape.scale(tape.sum_all(terms), 0.5 / rows);
}

inline double kl_closed_form(const VariationalPosterior& post) {
  double s = 0.0;
  for (size_t i = 0; i < post.mu.size(); ++i) {
    const double v = post.sigma[i] * post.sigma[i];
    s += post.mu[i] * post.mu[i] + v - 1.0 - std::log(v);
  }
  return 0.5 * s;
}

struct EvaeTerms {
  Var z;  // reparameterized posterior sample, differentiable through mu/sigma
  Var recon;
  Var kl;
  Var energy;  // mean E over the posterior samples
  Var total;
};

// Reconstruction + prior energy + KL. Gradients reach the decoder and (through
// the reparameterized sample and the KL) the encoder; the energy head's own
// update happens elsewhere, so callers zero its gradient slots before stepping.
inline EvaeTerms evae_loss(Tape& tape, const GeneratorShape& gen_shape, const EnergyShape& energy_shape,
                           const PosteriorVars& post, const DenseMatrix& x, const DenseMatrix& noise) {
  EvaeTerms t;
  t.z = reparameterize(tape, post, noise);
  t.recon = recon_loss(tape, decode(tape, gen_shape, t.z), x);
  t.kl = kl_to_standard_normal(tape, post);
  t.energy = tape.mean_all(energy_rows(tape, energy_logits(tape, energy_shape, t.z)));
  t.total = tape.add(tape.add(t.recon, t.energy), t.kl);
  return t;
}

}  // namespace osebm
