#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/mlp.hpp"
#include "osebm/param_store.hpp"
#include "osebm/rng.hpp"
#include "osebm/tape.hpp"

namespace osebm {

// Network shape shared by the encoder stack. `d` is the latent dimension and
// also the per-attribute feature width and attribute-head hidden width.
struct EncoderShape {
  int feature_dim = 32;  // data dimensionality
  int m = 16;            // attribute count
  int d = 8;             // latent dimension
  int feat_dim = 32;     // backbone feature width
  int enc_hidden = 64;
  int agg_hidden = 32;
  int post_hidden = 32;
  bool rafa_enabled = true;

  MlpSpec backbone() const { return MlpSpec{{feature_dim, enc_hidden, feat_dim}}; }
  MlpSpec head(int) const { return MlpSpec{{feat_dim, d, d}}; }
  MlpSpec aggregator() const { return MlpSpec{{m * d, agg_hidden, feat_dim}}; }
  MlpSpec posterior_head() const { return MlpSpec{{feat_dim, post_hidden, 2 * d}}; }
};

inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 2.0;

// Attribute relation graph. a_raw holds conditional co-occurrence
// probabilities; a_hat is the re-weighted, self-looped, degree-normalized
// propagation matrix (rows sum to 1).
struct AttributeGraph {
  DenseMatrix a_raw;
  DenseMatrix a_hat;
};

// Mean/scale of a diagonal Gaussian posterior for one sample.
struct VariationalPosterior {
  std::vector<double> mu;
  std::vector<double> sigma;
};

inline void register_encoder(ParamStore& store, const EncoderShape& shape, Rng& rng) {
  register_mlp(store, "phi1", shape.backbone(), rng);
  for (int m = 0; m < shape.m; ++m) register_mlp(store, "omega/head" + std::to_string(m), shape.head(m), rng);
  const double sc = 1.0 / std::sqrt(static_cast<double>(shape.d));
  store.add_randn("omega/gcn/W1", shape.d, shape.d, rng, sc);
  store.add("omega/gcn/b1", 1, shape.d);
  store.add_randn("omega/gcn/W2", shape.d, shape.d, rng, sc);
  store.add("omega/gcn/b2", 1, shape.d);
  store.add_randn("omega/score/w", shape.d, 1, rng, sc);
  store.add("omega/score/b", 1, 1);
  register_mlp(store, "phi2/agg", shape.aggregator(), rng);
  register_mlp(store, "phi2/post", shape.posterior_head(), rng);
}

// x: B x feature_dim -> backbone features z: B x feat_dim.
inline Var encode(Tape& tape, const EncoderShape& shape, Var x) {
  return mlp_apply(tape, "phi1", shape.backbone(), x);
}

// z: B x feat_dim -> M attribute-wise features, each B x d.
inline std::vector<Var> decompose(Tape& tape, const EncoderShape& shape, Var z) {
  std::vector<Var> f;
  f.reserve(shape.m);
  for (int m = 0; m < shape.m; ++m)
    f.push_back(mlp_apply(tape, "omega/head" + std::to_string(m), shape.head(m), z));
  return f;
}

// Conditional co-occurrence P(j | i) from binary attribute rows; off-diagonal
// entries are binarized at tau, re-weighted to total mass p per row against a
// 1-p self weight, then self-looped and row-normalized.
inline AttributeGraph build_adjacency(const DenseMatrix& attrs, double tau, double p) {
  const int m = attrs.cols;
  if (m < 1) throw std::invalid_argument("build_adjacency: no attributes");
  if (tau < 0.0 || tau > 1.0 || p < 0.0 || p > 1.0)
    throw std::invalid_argument("build_adjacency: tau and p must lie in [0, 1]");

  std::vector<double> cnt(m, 0.0);
  DenseMatrix co(m, m);
  for (int r = 0; r < attrs.rows; ++r)
    for (int i = 0; i < m; ++i) {
      if (attrs.at(r, i) == 0.0) continue;
      cnt[i] += 1.0;
      for (int j = 0; j < m; ++j)
        if (attrs.at(r, j) != 0.0) co.at(i, j) += 1.0;
    }

  AttributeGraph g;
  g.a_raw = DenseMatrix(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) g.a_raw.at(i, j) = cnt[i] > 0.0 ? co.at(i, j) / cnt[i] : 0.0;

  DenseMatrix w(m, m);
  for (int i = 0; i < m; ++i) {
    double neighbors = 0.0;
    for (int j = 0; j < m; ++j)
      if (j != i && g.a_raw.at(i, j) >= tau) neighbors += 1.0;
    for (int j = 0; j < m; ++j)
      if (j != i && g.a_raw.at(i, j) >= tau) w.at(i, j) = p / neighbors;
    w.at(i, i) = 1.0 - p;
  }

  g.a_hat = DenseMatrix(m, m);
  for (int i = 0; i < m; ++i) {
    double row_sum = 1.0;  // self loop
    for (int j = 0; j < m; ++j) row_sum += w.at(i, j);
    for (int j = 0; j < m; ++j) g.a_hat.at(i, j) = (w.at(i, j) + (i == j ? 1.0 : 0.0)) / row_sum;
  }
  return g;
}

// Two graph-convolution layers over the M node features followed by a shared
// per-node linear score and sigmoid. Returns M predictions, each B x 1.
inline std::vector<Var> predict_attributes(Tape& tape, const EncoderShape& shape, const std::vector<Var>& f,
                                           const DenseMatrix& a_hat) {
  if (static_cast<int>(f.size()) != a_hat.rows || a_hat.rows != a_hat.cols)
    throw std::invalid_argument("predict_attributes: graph/features mismatch");
  const int m = a_hat.rows;

  auto layer = [&](const std::vector<Var>& h, const std::string& w_name, const std::string& b_name) {
    Var w = tape.param(w_name);
    Var b = tape.param(b_name);
    std::vector<Var> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
      std::vector<double> coeff(m);
      for (int j = 0; j < m; ++j) coeff[j] = a_hat.at(i, j);
      Var mixed = tape.lincomb(h, coeff);
      out.push_back(tape.tanh_(tape.add_row(tape.matmul(mixed, w), b)));
    }
    return out;
  };

  std::vector<Var> h1 = layer(f, "omega/gcn/W1", "omega/gcn/b1");
  std::vector<Var> h2 = layer(h1, "omega/gcn/W2", "omega/gcn/b2");

  Var w = tape.param("omega/score/w");
  Var b = tape.param("omega/score/b");
  std::vector<Var> scores;
  scores.reserve(m);
  for (int i = 0; i < m; ++i) scores.push_back(tape.sigmoid_(tape.add_row(tape.matmul(h2[i], w), b)));
  return scores;
}

// Residual aggregation: z + MLP(cat_m(attr_hat_m * f_m)), so a zero attribute
// mask with zero aggregator biases passes z through unchanged.
inline Var aggregate(Tape& tape, const EncoderShape& shape, Var z, const std::vector<Var>& attr_hat,
                     const std::vector<Var>& f) {
  if (attr_hat.size() != f.size()) throw std::invalid_argument("aggregate: mask/feature count mismatch");
  std::vector<Var> scaled;
  scaled.reserve(f.size());
  for (size_t m = 0; m < f.size(); ++m) scaled.push_back(tape.scale_rows(f[m], attr_hat[m]));
  Var cat = tape.concat_cols(scaled);
  Var agg = mlp_apply(tape, "phi2/agg", shape.aggregator(), cat);
  return tape.add(z, agg);
}

struct PosteriorVars {
  Var mu;         // B x d
  Var log_sigma;  // clamped to [kLogSigmaMin, kLogSigmaMax]
  Var sigma;
};

// Posterior head on aggregated features: splits into mean and clamped log-scale.
inline PosteriorVars posterior_from_features(Tape& tape, const EncoderShape& shape, Var features) {
  Var out = mlp_apply(tape, "phi2/post", shape.posterior_head(), features);
  PosteriorVars post;
  post.mu = tape.slice_cols(out, 0, shape.d);
  post.log_sigma = tape.clamp_(tape.slice_cols(out, shape.d, 2 * shape.d), kLogSigmaMin, kLogSigmaMax);
  post.sigma = tape.exp_(post.log_sigma);
  return post;
}

struct EncodeResult {
  Var z_feat;                 // backbone features
  std::vector<Var> f;         // attribute features (empty when RAFA is bypassed)
  std::vector<Var> attr_hat;  // per-attribute predictions, each B x 1
  PosteriorVars post;
};

// Full encoder stack. With rafa_enabled = false the posterior head reads the
// backbone features directly and no attribute machinery is touched.
inline EncodeResult encode_posterior(Tape& tape, const EncoderShape& shape, Var x,
                                     const DenseMatrix& a_hat) {
  EncodeResult r;
  r.z_feat = encode(tape, shape, x);
  if (shape.rafa_enabled) {
    r.f = decompose(tape, shape, r.z_feat);
    r.attr_hat = predict_attributes(tape, shape, r.f, a_hat);
    Var aggregated = aggregate(tape, shape, r.z_feat, r.attr_hat, r.f);
    r.post = posterior_from_features(tape, shape, aggregated);
  } else {
    r.post = posterior_from_features(tape, shape, r.z_feat);
  }
  return r;
}

// z = mu + noise * sigma on the tape; noise enters as a constant.
inline Var reparameterize(Tape& tape, const PosteriorVars& post, const DenseMatrix& noise) {
  Var n = tape.constant(noise);
  return tape.add(post.mu, tape.mul(post.sigma, n));
}

// Value-level reparameterization for a single posterior.
inline std::vector<double> reparameterize(const VariationalPosterior& post, const std::vector<double>& noise) {
  if (post.mu.size() != post.sigma.size() || post.mu.size() != noise.size())
    throw std::invalid_argument("reparameterize: size mismatch");
  std::vector<double> z(post.mu.size());
  for (size_t i = 0; i < z.size(); ++i) z[i] = post.mu[i] + noise[i] * post.sigma[i];
  return z;
}

// Mean binary cross-entropy between predicted attribute probabilities
// (clamped away from {0,1}) and binary targets, averaged over batch and attrs.
inline Var attr_loss(Tape& tape, Var attr_hat, const DenseMatrix& attrs) {
  const DenseMatrix& p = tape.value(attr_hat);
  if (!p.same_shape(attrs)) throw std::invalid_argument("attr_loss: shape mismatch");
  DenseMatrix ones(attrs.rows, attrs.cols);
  for (double& v : ones.data) v = 1.0;
  Var a = tape.constant(attrs);
  Var one = tape.constant(ones);
  Var clamped = tape.clamp_(attr_hat, 1e-7, 1.0 - 1e-7);
  Var pos = tape.mul(a, tape.log_(clamped));
  Var negt = tape.mul(tape.sub(one, a), tape.log_(tape.sub(one, clamped)));
  return tape.neg(tape.mean_all(tape.add(pos, negt)));
}

}  // namespace osebm
