#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/ebm.hpp"
#include "osebm/errors.hpp"
#include "osebm/generator.hpp"
#include "osebm/metrics.hpp"
#include "osebm/rafa.hpp"
#include "osebm/synthdata.hpp"
#include "osebm/textio.hpp"
#include "osebm/uvos.hpp"

namespace osebm {

struct TrainConfig {
  int T = 60;       // total epochs
  int T_gen = 20;   // generative steps run once epoch >= T_gen
  int T_uvos = 20;  // densities update while epoch <= T_uvos; the outlier loss starts after
  double eta0 = 1e-3;
  double eta1 = 1e-3;
  double eta2 = 1e-3;
  double eta3 = 1e-3;
  double lambda0 = 1.0;
  double lambda1 = 0.1;
  double lambda2 = 1.0;
  int B = 64;
  int H = 20;  // virtual outliers per step
  uint64_t seed = 0;
  SgldConfig sgld;
  int warmup_epochs = 2;
  std::array<int, 2> restart_epochs{20, 40};
  int latent_dim = 8;
  int feat_dim = 32;
  int enc_hidden = 64;
  int dec_hidden = 64;
  int agg_hidden = 32;
  int post_hidden = 32;
  int uvos_candidates = 200;
  double adj_tau = 0.4;
  double adj_p = 0.2;
  bool rafa_enabled = true;
  bool uvos_enabled = true;
};

namespace detail {
inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}
}  // namespace detail

// Applies key=value pairs onto a base config. Unknown keys are errors.
inline TrainConfig apply_config_pairs(TrainConfig cfg,
                                      const std::vector<std::pair<std::string, std::string>>& pairs) {
  for (const auto& [key, value] : pairs) {
    const std::string ctx = "config key " + key;
    if (key == "T") cfg.T = static_cast<int>(parse_long(value, ctx));
    else if (key == "T_gen") cfg.T_gen = static_cast<int>(parse_long(value, ctx));
    else if (key == "T_uvos") cfg.T_uvos = static_cast<int>(parse_long(value, ctx));
    else if (key == "eta0") cfg.eta0 = parse_double(value, ctx);
    else if (key == "eta1") cfg.eta1 = parse_double(value, ctx);
    else if (key == "eta2") cfg.eta2 = parse_double(value, ctx);
    else if (key == "eta3") cfg.eta3 = parse_double(value, ctx);
    else if (key == "lambda0") cfg.lambda0 = parse_double(value, ctx);
    else if (key == "lambda1") cfg.lambda1 = parse_double(value, ctx);
    else if (key == "lambda2") cfg.lambda2 = parse_double(value, ctx);
    else if (key == "B") cfg.B = static_cast<int>(parse_long(value, ctx));
    else if (key == "H") cfg.H = static_cast<int>(parse_long(value, ctx));
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_long(value, ctx));
    else if (key == "warmup_epochs") cfg.warmup_epochs = static_cast<int>(parse_long(value, ctx));
    else if (key == "restart_epochs") {
      const std::vector<std::string> parts = split_on(value, ',');
      if (parts.size() != 2) throw std::invalid_argument("config: restart_epochs needs two values");
      cfg.restart_epochs = {static_cast<int>(parse_long(trim(parts[0]), ctx)),
                            static_cast<int>(parse_long(trim(parts[1]), ctx))};
    } else if (key == "sgld.steps") cfg.sgld.steps = static_cast<int>(parse_long(value, ctx));
    else if (key == "sgld.step_size") cfg.sgld.step_size = parse_double(value, ctx);
    else if (key == "sgld.noise_on") cfg.sgld.noise_on = detail::parse_bool(value, key);
    else if (key == "latent_dim") cfg.latent_dim = static_cast<int>(parse_long(value, ctx));
    else if (key == "feat_dim") cfg.feat_dim = static_cast<int>(parse_long(value, ctx));
    else if (key == "enc_hidden") cfg.enc_hidden = static_cast<int>(parse_long(value, ctx));
    else if (key == "dec_hidden") cfg.dec_hidden = static_cast<int>(parse_long(value, ctx));
    else if (key == "agg_hidden") cfg.agg_hidden = static_cast<int>(parse_long(value, ctx));
    else if (key == "post_hidden") cfg.post_hidden = static_cast<int>(parse_long(value, ctx));
    else if (key == "uvos_candidates") cfg.uvos_candidates = static_cast<int>(parse_long(value, ctx));
    else if (key == "adj_tau") cfg.adj_tau = parse_double(value, ctx);
    else if (key == "adj_p") cfg.adj_p = parse_double(value, ctx);
    else if (key == "rafa_enabled") cfg.rafa_enabled = detail::parse_bool(value, key);
    else if (key == "uvos_enabled") cfg.uvos_enabled = detail::parse_bool(value, key);
    else throw std::invalid_argument("config: unknown key " + key);
  }
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path, TrainConfig base = TrainConfig{}) {
  return apply_config_pairs(base, read_kv_file(path));
}

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.T < 0 || cfg.B < 1 || cfg.H < 0) throw std::invalid_argument("config: bad T/B/H");
  if (cfg.warmup_epochs < 0) throw std::invalid_argument("config: negative warmup");
  if (cfg.restart_epochs[0] >= cfg.restart_epochs[1])
    throw std::invalid_argument("config: restarts must increase");
  if (cfg.latent_dim < 1 || cfg.feat_dim < 1) throw std::invalid_argument("config: bad network shape");
  if (cfg.sgld.steps < 0 || cfg.sgld.step_size <= 0.0) throw std::invalid_argument("config: bad sgld");
  if (cfg.uvos_candidates < 1) throw std::invalid_argument("config: bad uvos_candidates");
}

inline std::string serialize_train_config(const TrainConfig& c) {
  std::string s;
  s += "T=" + std::to_string(c.T) + "\n";
  s += "T_gen=" + std::to_string(c.T_gen) + "\n";
  s += "T_uvos=" + std::to_string(c.T_uvos) + "\n";
  s += "eta0=" + format_g17(c.eta0) + "\n";
  s += "eta1=" + format_g17(c.eta1) + "\n";
  s += "eta2=" + format_g17(c.eta2) + "\n";
  s += "eta3=" + format_g17(c.eta3) + "\n";
  s += "lambda0=" + format_g17(c.lambda0) + "\n";
  s += "lambda1=" + format_g17(c.lambda1) + "\n";
  s += "lambda2=" + format_g17(c.lambda2) + "\n";
  s += "B=" + std::to_string(c.B) + "\n";
  s += "H=" + std::to_string(c.H) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  s += "warmup_epochs=" + std::to_string(c.warmup_epochs) + "\n";
  s += "restart_epochs=" + std::to_string(c.restart_epochs[0]) + "," +
       std::to_string(c.restart_epochs[1]) + "\n";
  s += "sgld.steps=" + std::to_string(c.sgld.steps) + "\n";
  s += "sgld.step_size=" + format_g17(c.sgld.step_size) + "\n";
  s += std::string("sgld.noise_on=") + (c.sgld.noise_on ? "1" : "0") + "\n";
  s += "latent_dim=" + std::to_string(c.latent_dim) + "\n";
  s += "feat_dim=" + std::to_string(c.feat_dim) + "\n";
  s += "enc_hidden=" + std::to_string(c.enc_hidden) + "\n";
  s += "dec_hidden=" + std::to_string(c.dec_hidden) + "\n";
  s += "agg_hidden=" + std::to_string(c.agg_hidden) + "\n";
  s += "post_hidden=" + std::to_string(c.post_hidden) + "\n";
  s += "uvos_candidates=" + std::to_string(c.uvos_candidates) + "\n";
  s += "adj_tau=" + format_g17(c.adj_tau) + "\n";
  s += "adj_p=" + format_g17(c.adj_p) + "\n";
  s += std::string("rafa_enabled=") + (c.rafa_enabled ? "1" : "0") + "\n";
  s += std::string("uvos_enabled=") + (c.uvos_enabled ? "1" : "0") + "\n";
  return s;
}

// Linear warmup to base, then cosine decay to 0.01 * base inside each segment
// delimited by the two restarts; a restart snaps back to base. The only upward
// jumps sit exactly at the restart epochs.
inline double lr_at(int epoch, double base, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= std::max(cfg.T, 1)) throw std::invalid_argument("lr_at: epoch out of range");
  int seg_start = 0;
  int seg_end = cfg.T;
  for (int r : cfg.restart_epochs) {
    if (r <= 0 || r >= cfg.T) continue;
    if (epoch >= r) seg_start = r;
    else seg_end = std::min(seg_end, r);
  }
  if (seg_start == 0 && epoch < cfg.warmup_epochs)
    return base * (epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  const int cos_start = seg_start == 0 ? std::min(cfg.warmup_epochs, seg_end - 1) : seg_start;
  const int len = seg_end - cos_start;
  const double progress = len <= 1 ? 0.0 : static_cast<double>(epoch - cos_start) / (len - 1);
  const double pi = 3.14159265358979323846264338327950288;
  return 0.01 * base + 0.99 * base * 0.5 * (1.0 + std::cos(pi * progress));
}

// Adam with decoupled weight decay; moment state and step counters are kept
// per parameter so groups stepping at different cadences stay bias-corrected.
class AdamW {
 public:
  struct State {
    DenseMatrix m;
    DenseMatrix v;
    uint64_t t = 0;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void step(ParamStore& store, const std::vector<std::string>& names, double lr) {
    for (const std::string& name : names) {
      DenseMatrix& value = store.value(name);
      const DenseMatrix& grad = store.grad(name);
      State& s = state_[name];
      if (s.t == 0) {
        s.m = DenseMatrix(value.rows, value.cols);
        s.v = DenseMatrix(value.rows, value.cols);
      }
      ++s.t;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
      for (size_t i = 0; i < value.size(); ++i) {
        const double g = grad.data[i];
        s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * g;
        s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
        const double m_hat = s.m.data[i] / c1;
        const double v_hat = s.v.data[i] / c2;
        value.data[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * value.data[i]);
      }
    }
  }

  std::map<std::string, State>& state() { return state_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  std::map<std::string, State> state_;
};

// Trained artifact: parameters plus everything derived from the training data
// that inference needs (class id mapping, attribute graph, class densities).
struct Model {
  TrainConfig cfg;
  int data_dim = 0;
  int m_attrs = 0;
  int k_known = 0;
  std::vector<int> known_ids;  // sorted original class ids; train label = index
  ParamStore params;
  AttributeGraph graph;
  std::map<int, ClassDensity> densities;  // keyed by train label
  double final_train_acc = -1.0;

  EncoderShape encoder_shape() const {
    EncoderShape s;
    s.feature_dim = data_dim;
    s.m = m_attrs;
    s.d = cfg.latent_dim;
    s.feat_dim = cfg.feat_dim;
    s.enc_hidden = cfg.enc_hidden;
    s.agg_hidden = cfg.agg_hidden;
    s.post_hidden = cfg.post_hidden;
    s.rafa_enabled = cfg.rafa_enabled;
    return s;
  }
  EnergyShape energy_shape() const { return EnergyShape{cfg.latent_dim, k_known, 2 * cfg.latent_dim}; }
  GeneratorShape generator_shape() const {
    return GeneratorShape{cfg.latent_dim, data_dim, cfg.dec_hidden};
  }
  DetectorShape detector_shape() const { return DetectorShape{cfg.latent_dim, 2 * cfg.latent_dim}; }

  int train_label_of(int original) const {
    const auto it = std::lower_bound(known_ids.begin(), known_ids.end(), original);
    if (it == known_ids.end() || *it != original) return -1;
    return static_cast<int>(it - known_ids.begin());
  }
};

// Full mutable training state; checkpoints capture it exactly.
struct TrainerState {
  Model model;
  AdamW opt;
  Rng rng_data{0}, rng_sgld{0}, rng_reparam{0}, rng_uvos{0};
  int epoch = 0;  // next epoch to run
};

inline Model init_model(const TrainConfig& cfg, const SampleTable& train) {
  validate_train_config(cfg);
  if (train.x.rows == 0) throw std::invalid_argument("init_model: empty training table");

  Model model;
  model.cfg = cfg;
  model.data_dim = train.x.cols;
  model.m_attrs = train.attrs.cols;
  model.known_ids = train.labels;
  std::sort(model.known_ids.begin(), model.known_ids.end());
  model.known_ids.erase(std::unique(model.known_ids.begin(), model.known_ids.end()),
                        model.known_ids.end());
  model.k_known = static_cast<int>(model.known_ids.size());
  if (model.k_known < 2) throw std::invalid_argument("init_model: need at least two known classes");

  model.graph = build_adjacency(train.attrs, cfg.adj_tau, cfg.adj_p);

  Rng init_rng = Rng(cfg.seed).fork("init");
  register_encoder(model.params, model.encoder_shape(), init_rng);
  register_energy_head(model.params, model.energy_shape(), init_rng);
  register_decoder(model.params, model.generator_shape(), init_rng);
  register_ood_detector(model.params, model.detector_shape(), init_rng);

  for (int k = 0; k < model.k_known; ++k) model.densities.emplace(k, ClassDensity(cfg.latent_dim));
  return model;
}

inline TrainerState init_trainer(const TrainConfig& cfg, const SampleTable& train) {
  TrainerState st;
  st.model = init_model(cfg, train);
  const Rng root(cfg.seed);
  st.rng_data = root.fork("data");
  st.rng_sgld = root.fork("sgld");
  st.rng_reparam = root.fork("reparam");
  st.rng_uvos = root.fork("uvos");
  return st;
}

namespace detail {

struct ParamGroups {
  std::vector<std::string> phi, alpha, omega, theta, beta;
};

inline ParamGroups param_groups(const ParamStore& params) {
  ParamGroups g;
  g.phi = params.names("phi1/");
  for (const std::string& n : params.names("phi2/")) g.phi.push_back(n);
  g.alpha = params.names("alpha/");
  g.omega = params.names("omega/");
  g.theta = params.names("theta/");
  g.beta = params.names("beta/");
  return g;
}

inline void check_finite(double v, const char* what, int epoch, int step) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string(what) + " diverged (non-finite loss) at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step),
                          epoch, step);
}

}  // namespace detail

struct StepBreakdown {
  double cls = 0.0, attr = 0.0, uvos = 0.0;
};

struct GenBreakdown {
  double ebm = 0.0, recon = 0.0, kl = 0.0, energy = 0.0, ci = 0.0;
  double alpha_loss = 0.0;  // objective of the energy-head update (contrast - lambda2 * CI)
};

// Classification on the posterior mean, attribute supervision, and (after the
// density-collection phase) the virtual-outlier regularizer. Also folds the
// batch posteriors into the class densities while the collection phase lasts.
inline StepBreakdown discriminative_step(TrainerState& st, const DenseMatrix& xb,
                                         const std::vector<int>& yb, const DenseMatrix& ab, int epoch,
                                         int step_index) {
  Model& model = st.model;
  const TrainConfig& cfg = model.cfg;
  const EncoderShape enc_shape = model.encoder_shape();
  const EnergyShape energy_shape = model.energy_shape();

  Tape tape(&model.params);
  Var x = tape.constant(xb);
  EncodeResult enc = encode_posterior(tape, enc_shape, x, model.graph.a_hat);

  Var probs = tape.softmax_rows(energy_logits(tape, energy_shape, enc.post.mu));
  Var loss = cls_loss(tape, probs, yb);
  StepBreakdown out;
  out.cls = tape.value(loss).data[0];

  if (enc_shape.rafa_enabled) {
    Var attr_hat = tape.concat_cols(enc.attr_hat);
    Var l_attr = attr_loss(tape, attr_hat, ab);
    out.attr = tape.value(l_attr).data[0];
    loss = tape.add(loss, tape.scale(l_attr, cfg.lambda0));
  }

  const bool uvos_active = cfg.uvos_enabled && epoch > cfg.T_uvos;
  if (uvos_active) {
    NormalizerConstants consts = make_normalizer_constants(yb, model.densities);
    Var v_minus = normalize_known_var(tape, enc.post.mu, consts);

    // H outlier slots spread round-robin over the known classes.
    std::vector<int> per_class(model.k_known, 0);
    for (int j = 0; j < cfg.H; ++j) ++per_class[j % model.k_known];
    DenseMatrix v_plus(cfg.H, cfg.latent_dim);
    int row = 0;
    for (int k = 0; k < model.k_known; ++k) {
      if (per_class[k] == 0) continue;
      OutlierConfig ocfg{cfg.uvos_candidates, per_class[k]};
      OutlierDraw draw = sample_virtual_outliers(model.densities.at(k), ocfg, st.rng_uvos);
      for (int r = 0; r < draw.retained_v.rows; ++r, ++row)
        for (int j = 0; j < cfg.latent_dim; ++j) v_plus.at(row, j) = draw.retained_v.at(r, j);
    }

    Var l_uvos = uvos_loss(tape, model.detector_shape(), v_plus, v_minus);
    out.uvos = tape.value(l_uvos).data[0];
    loss = tape.add(loss, tape.scale(l_uvos, cfg.lambda1));
  }

  detail::check_finite(tape.value(loss).data[0], "discriminative step", epoch, step_index);

  if (cfg.uvos_enabled && epoch <= cfg.T_uvos) {
    const DenseMatrix& mu = tape.value(enc.post.mu);
    const DenseMatrix& sigma = tape.value(enc.post.sigma);
    std::map<int, std::vector<int>> rows_of;
    for (size_t i = 0; i < yb.size(); ++i) rows_of[yb[i]].push_back(static_cast<int>(i));
    for (const auto& [label, rows] : rows_of) {
      DenseMatrix mu_k(static_cast<int>(rows.size()), cfg.latent_dim);
      DenseMatrix sigma_k(static_cast<int>(rows.size()), cfg.latent_dim);
      for (size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < cfg.latent_dim; ++j) {
          mu_k.at(static_cast<int>(r), j) = mu.at(rows[r], j);
          sigma_k.at(static_cast<int>(r), j) = sigma.at(rows[r], j);
        }
      update_density(model.densities.at(label), mu_k, sigma_k);
    }
  }

  model.params.zero_grads();
  tape.backward(loss);

  const detail::ParamGroups groups = detail::param_groups(model.params);
  st.opt.step(model.params, groups.phi, lr_at(epoch, cfg.eta0, cfg));
  st.opt.step(model.params, groups.alpha, lr_at(epoch, cfg.eta1, cfg));
  if (enc_shape.rafa_enabled) st.opt.step(model.params, groups.omega, lr_at(epoch, cfg.eta2, cfg));
  if (uvos_active) st.opt.step(model.params, groups.theta, lr_at(epoch, cfg.eta1, cfg));
  return out;
}

// Short-run Langevin prior samples, a posterior sample, then the generator
// update (phi, omega, beta) and the energy-head update, both evaluated at the
// parameters the step started from.
inline GenBreakdown generative_step(TrainerState& st, const DenseMatrix& xb, const std::vector<int>& yb,
                                    int epoch, int step_index) {
  Model& model = st.model;
  const TrainConfig& cfg = model.cfg;
  const EncoderShape enc_shape = model.encoder_shape();
  const EnergyShape energy_shape = model.energy_shape();
  const GeneratorShape gen_shape = model.generator_shape();
  const int b = xb.rows;

  DenseMatrix z0(b, cfg.latent_dim);
  for (double& v : z0.data) v = st.rng_sgld.normal();
  DenseMatrix z_prior;
  try {
    z_prior = sgld_sample(model.params, energy_shape, z0, cfg.sgld, st.rng_sgld);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")", epoch,
                          e.step);
  }

  DenseMatrix noise(b, cfg.latent_dim);
  for (double& v : noise.data) v = st.rng_reparam.normal();

  const detail::ParamGroups groups = detail::param_groups(model.params);
  GenBreakdown out;
  DenseMatrix z_post;

  {  // generator-side update: recon + KL + prior energy - lambda2 * CI
    Tape tape(&model.params);
    Var x = tape.constant(xb);
    EncodeResult enc = encode_posterior(tape, enc_shape, x, model.graph.a_hat);
    EvaeTerms terms = evae_loss(tape, gen_shape, energy_shape, enc.post, xb, noise);
    Var probs = tape.softmax_rows(energy_logits(tape, energy_shape, terms.z));
    Var ci = aib_term(tape, probs, yb);
    Var loss = tape.add(terms.total, tape.scale(ci, -cfg.lambda2));

    out.recon = tape.value(terms.recon).data[0];
    out.kl = tape.value(terms.kl).data[0];
    out.energy = tape.value(terms.energy).data[0];
    out.ci = tape.value(ci).data[0];
    z_post = tape.value(terms.z);
    detail::check_finite(tape.value(loss).data[0], "generative step", epoch, step_index);

    model.params.zero_grads();
    tape.backward(loss);
    st.opt.step(model.params, groups.phi, lr_at(epoch, cfg.eta0, cfg));
    if (enc_shape.rafa_enabled) st.opt.step(model.params, groups.omega, lr_at(epoch, cfg.eta2, cfg));
    st.opt.step(model.params, groups.beta, lr_at(epoch, cfg.eta3, cfg));
  }

  {  // energy-head update: contrastive term - lambda2 * CI, posterior sample fixed
    Tape tape(&model.params);
    Var contrast = ebm_loss(tape, energy_shape, z_post, z_prior);
    Var probs = tape.softmax_rows(energy_logits(tape, energy_shape, tape.constant(z_post)));
    Var ci = aib_term(tape, probs, yb);
    Var loss = tape.add(contrast, tape.scale(ci, -cfg.lambda2));
    out.ebm = tape.value(contrast).data[0];
    out.alpha_loss = tape.value(loss).data[0];
    detail::check_finite(out.alpha_loss, "energy-head step", epoch, step_index);

    model.params.zero_grads();
    tape.backward(loss);
    st.opt.step(model.params, groups.alpha, lr_at(epoch, cfg.eta0, cfg));
  }
  return out;
}

struct LogRow {
  int epoch = 0;
  double lr0 = 0.0, lr1 = 0.0, lr2 = 0.0, lr3 = 0.0;
  double cls = 0.0, attr = 0.0, uvos = 0.0, ebm = 0.0, recon = 0.0, kl = 0.0, energy = 0.0, ci = 0.0;
  long long wall_ms = 0;
};

inline std::string train_log_csv(const std::vector<LogRow>& rows) {
  std::string s = "epoch,lr0,lr1,lr2,lr3,cls,attr,uvos,ebm,recon,kl,energy,ci,wall_ms\n";
  for (const LogRow& r : rows) {
    s += std::to_string(r.epoch);
    for (double v : {r.lr0, r.lr1, r.lr2, r.lr3, r.cls, r.attr, r.uvos, r.ebm, r.recon, r.kl, r.energy,
                     r.ci}) {
      s += ",";
      s += format_g17(v);
    }
    s += "," + std::to_string(r.wall_ms) + "\n";
  }
  return s;
}

// Posterior-mean logits for a table of samples (inference path).
inline DenseMatrix forward_logits(Model& model, const DenseMatrix& x) {
  Tape tape(&model.params);
  Var xv = tape.constant(x);
  EncodeResult enc = encode_posterior(tape, model.encoder_shape(), xv, model.graph.a_hat);
  Var logits = energy_logits(tape, model.energy_shape(), enc.post.mu);
  return tape.value(logits);
}

inline double closed_set_accuracy(Model& model, const SampleTable& table) {
  const DenseMatrix logits = forward_logits(model, table.x);
  std::vector<int> labels, preds;
  for (int i = 0; i < logits.rows; ++i) {
    const int lbl = model.train_label_of(table.labels[i]);
    if (lbl < 0) continue;
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    labels.push_back(lbl);
    preds.push_back(best);
  }
  return accuracy(labels, preds);
}

// Runs epochs [state.epoch, cfg.T). Epoch staging: densities collect while
// epoch <= T_uvos, the outlier loss starts strictly after, generative steps
// run from T_gen on; the scheduler ticks once per epoch. A non-negative
// until_epoch stops early after that many total epochs (the schedule still
// spans cfg.T), leaving the state resumable mid-run.
inline std::vector<LogRow> train_epochs(TrainerState& st, const SampleTable& train,
                                        std::ostream* progress = nullptr, int until_epoch = -1) {
  Model& model = st.model;
  const TrainConfig& cfg = model.cfg;
  const int stop = until_epoch < 0 ? cfg.T : std::min(cfg.T, until_epoch);
  const int n = train.x.rows;

  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = model.train_label_of(train.labels[i]);
    if (labels[i] < 0)
      throw std::invalid_argument("train: sample with class outside the known set at row " +
                                  std::to_string(i));
  }

  std::vector<LogRow> log;
  for (; st.epoch < stop; ++st.epoch) {
    const int epoch = st.epoch;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[st.rng_data.uniform_index(static_cast<uint64_t>(i) + 1)]);

    LogRow row;
    row.epoch = epoch;
    row.lr0 = lr_at(epoch, cfg.eta0, cfg);
    row.lr1 = lr_at(epoch, cfg.eta1, cfg);
    row.lr2 = lr_at(epoch, cfg.eta2, cfg);
    row.lr3 = lr_at(epoch, cfg.eta3, cfg);

    int disc_steps = 0, gen_steps = 0;
    for (int start = 0; start < n; start += cfg.B) {
      const int b = std::min(cfg.B, n - start);
      DenseMatrix xb(b, train.x.cols);
      DenseMatrix ab(b, train.attrs.cols);
      std::vector<int> yb(b);
      for (int i = 0; i < b; ++i) {
        const int src = order[start + i];
        for (int j = 0; j < train.x.cols; ++j) xb.at(i, j) = train.x.at(src, j);
        for (int j = 0; j < train.attrs.cols; ++j) ab.at(i, j) = train.attrs.at(src, j);
        yb[i] = labels[src];
      }

      const StepBreakdown d = discriminative_step(st, xb, yb, ab, epoch, disc_steps);
      row.cls += d.cls;
      row.attr += d.attr;
      row.uvos += d.uvos;
      ++disc_steps;

      if (epoch >= cfg.T_gen) {
        const GenBreakdown g = generative_step(st, xb, yb, epoch, gen_steps);
        row.ebm += g.ebm;
        row.recon += g.recon;
        row.kl += g.kl;
        row.energy += g.energy;
        row.ci += g.ci;
        ++gen_steps;
      }
    }

    if (disc_steps > 0) {
      row.cls /= disc_steps;
      row.attr /= disc_steps;
      row.uvos /= disc_steps;
    }
    if (gen_steps > 0) {
      row.ebm /= gen_steps;
      row.recon /= gen_steps;
      row.kl /= gen_steps;
      row.energy /= gen_steps;
      row.ci /= gen_steps;
    }
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    log.push_back(row);
    if (progress)
      (*progress) << "epoch " << epoch << " cls " << row.cls << " attr " << row.attr << " recon "
                  << row.recon << "\n";
  }

  model.final_train_acc = closed_set_accuracy(model, train);
  return log;
}

struct TrainResult {
  TrainerState state;
  std::vector<LogRow> log;
};

inline TrainResult train(const TrainConfig& cfg, const SampleTable& train_table,
                         std::ostream* progress = nullptr) {
  TrainResult r;
  r.state = init_trainer(cfg, train_table);
  r.log = train_epochs(r.state, train_table, progress);
  return r;
}

}  // namespace osebm
