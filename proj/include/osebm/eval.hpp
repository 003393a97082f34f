#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/metrics.hpp"
#include "osebm/svg.hpp"
#include "osebm/synthdata.hpp"
#include "osebm/textio.hpp"
#include "osebm/trainer.hpp"

namespace osebm {

// Unknownness scores from one logit row; larger always means "more unknown".
struct RowScores {
  double free_energy = 0.0;  // -logsumexp(logits)
  double max_joint = 0.0;    // -max(logits)
  double msp = 0.0;          // 1 - max softmax probability
};

inline RowScores scores_from_logits(const double* logits, int k) {
  if (k < 1) throw std::invalid_argument("scores_from_logits: empty row");
  std::vector<double> row(logits, logits + k);
  const double lse = logsumexp(row);
  const double mx = *std::max_element(row.begin(), row.end());
  RowScores s;
  s.free_energy = -lse;
  s.max_joint = -mx;
  s.msp = 1.0 - std::exp(mx - lse);
  return s;
}

constexpr const char* kScoreKinds[] = {"free_energy", "max_joint", "msp"};

struct SplitScores {
  std::string name;
  DenseMatrix logits;            // n x K
  std::vector<int> labels;       // original ids; -1 on unknown splits
  std::vector<int> preds;        // predicted original known ids
  std::vector<char> correct;     // per row; meaningful for the known split
  std::vector<double> free_energy, max_joint, msp;

  const std::vector<double>& score(const std::string& kind) const {
    if (kind == "free_energy") return free_energy;
    if (kind == "max_joint") return max_joint;
    if (kind == "msp") return msp;
    throw std::invalid_argument("unknown score kind " + kind);
  }
};

struct EvalTables {
  SampleTable known_test, easy, medium, hard;
};

inline EvalTables load_eval_tables(const std::string& dir) {
  EvalTables t;
  t.known_test = load_samples_csv(dir + "/known_test.csv");
  t.easy = load_samples_csv(dir + "/unknown_easy.csv");
  t.medium = load_samples_csv(dir + "/unknown_medium.csv");
  t.hard = load_samples_csv(dir + "/unknown_hard.csv");
  return t;
}

struct EvalReport {
  std::vector<SplitScores> splits;  // known_test, easy, medium, hard
  double closed_acc = 0.0;
  // (kind, split, score_kind, value) rows in emission order
  std::vector<std::tuple<std::string, std::string, std::string, double>> metric_rows;

  const SplitScores& split(const std::string& name) const {
    for (const SplitScores& s : splits)
      if (s.name == name) return s;
    throw std::invalid_argument("no split " + name);
  }
  double metric(const std::string& kind, const std::string& split_name,
                const std::string& score_kind) const {
    for (const auto& [k, s, sc, v] : metric_rows)
      if (k == kind && s == split_name && sc == score_kind) return v;
    throw std::invalid_argument("no metric " + kind + "/" + split_name + "/" + score_kind);
  }
};

inline SplitScores score_split(Model& model, const std::string& name, const SampleTable& table,
                               bool known_labels) {
  SplitScores s;
  s.name = name;
  s.logits = forward_logits(model, table.x);
  const int n = s.logits.rows, k = s.logits.cols;
  s.labels.resize(n);
  s.preds.resize(n);
  s.correct.resize(n, 0);
  s.free_energy.resize(n);
  s.max_joint.resize(n);
  s.msp.resize(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (s.logits.at(i, j) > s.logits.at(i, best)) best = j;
    s.preds[i] = model.known_ids[best];
    s.labels[i] = known_labels ? table.labels[i] : -1;
    s.correct[i] = known_labels && s.preds[i] == table.labels[i] ? 1 : 0;
    const RowScores rs = scores_from_logits(&s.logits.data[static_cast<size_t>(i) * k], k);
    s.free_energy[i] = rs.free_energy;
    s.max_joint[i] = rs.max_joint;
    s.msp[i] = rs.msp;
  }
  return s;
}

inline EvalReport evaluate_model(Model& model, const EvalTables& tables) {
  EvalReport r;
  r.splits.push_back(score_split(model, "known_test", tables.known_test, true));
  r.splits.push_back(score_split(model, "easy", tables.easy, false));
  r.splits.push_back(score_split(model, "medium", tables.medium, false));
  r.splits.push_back(score_split(model, "hard", tables.hard, false));

  const SplitScores& kt = r.splits[0];
  {
    std::vector<int> y, p;
    for (size_t i = 0; i < kt.labels.size(); ++i) {
      y.push_back(kt.labels[i]);
      p.push_back(kt.preds[i]);
    }
    r.closed_acc = accuracy(y, p);
  }
  r.metric_rows.emplace_back("accuracy", "known_test", "-", r.closed_acc);

  for (const char* kind : {"auroc", "aupr", "oscr"})
    for (size_t si = 1; si < r.splits.size(); ++si)
      for (const char* score_kind : kScoreKinds) {
        const std::vector<double>& ks = kt.score(score_kind);
        const std::vector<double>& us = r.splits[si].score(score_kind);
        double v = 0.0;
        if (std::string(kind) == "auroc") v = auroc(ks, us);
        else if (std::string(kind) == "aupr") v = aupr(ks, us);
        else v = oscr(ks, kt.correct, us);
        r.metric_rows.emplace_back(kind, r.splits[si].name, score_kind, v);
      }
  return r;
}

inline std::string scores_csv(const EvalReport& r) {
  if (r.splits.empty()) throw std::invalid_argument("scores_csv: empty report");
  const int k = r.splits[0].logits.cols;
  std::string out;
  for (int j = 0; j < k; ++j) out += "logit_" + std::to_string(j) + ",";
  out += "label,split,pred,free_energy,max_joint,msp\n";
  for (const SplitScores& s : r.splits)
    for (int i = 0; i < s.logits.rows; ++i) {
      for (int j = 0; j < k; ++j) out += format_g17(s.logits.at(i, j)) + ",";
      out += std::to_string(s.labels[i]) + "," + s.name + "," + std::to_string(s.preds[i]) + ",";
      out += format_g17(s.free_energy[i]) + "," + format_g17(s.max_joint[i]) + "," +
             format_g17(s.msp[i]) + "\n";
    }
  return out;
}

inline std::string metrics_csv(const EvalReport& r) {
  std::string out = "kind,split,score_kind,value\n";
  for (const auto& [kind, split, score_kind, value] : r.metric_rows)
    out += kind + "," + split + "," + score_kind + "," + format_g17(value) + "\n";
  return out;
}

inline std::string metrics_text(const EvalReport& r) {
  std::string out;
  out += "closed-set accuracy (known_test): " + format_g17(r.closed_acc) + "\n\n";
  for (const char* kind : {"auroc", "aupr", "oscr"}) {
    out += std::string(kind) + " (rows: split, cols: score)\n";
    out += "split,free_energy,max_joint,msp\n";
    for (const char* split : {"easy", "medium", "hard"}) {
      out += split;
      for (const char* score_kind : kScoreKinds)
        out += "," + format_g17(r.metric(kind, split, score_kind));
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

inline std::string histogram_svg_for(const EvalReport& r, const std::string& score_kind) {
  std::vector<std::pair<std::string, std::vector<double>>> series;
  for (const SplitScores& s : r.splits) series.emplace_back(s.name, s.score(score_kind));
  return score_histogram_svg("score distribution: " + score_kind, series);
}

enum class SampleMode { Random, Posterior, Prior };

inline SampleMode parse_sample_mode(const std::string& s) {
  if (s == "random") return SampleMode::Random;
  if (s == "posterior") return SampleMode::Posterior;
  if (s == "prior") return SampleMode::Prior;
  throw std::invalid_argument("sample mode must be random, posterior, or prior (got " + s + ")");
}

struct SampleDraw {
  DenseMatrix z;      // n x d latents
  DenseMatrix x_hat;  // n x D decoded observations
};

// Latents from the standard normal (random), from the short-run Langevin
// chain on the learned prior (prior), or from the posterior of given inputs
// (posterior), all decoded through the generator.
inline SampleDraw sample_latents(Model& model, SampleMode mode, int n, Rng& rng,
                                 const SampleTable* input = nullptr) {
  if (n < 1) throw std::invalid_argument("sample_latents: n must be positive");
  const int d = model.cfg.latent_dim;
  SampleDraw out;

  if (mode == SampleMode::Posterior) {
    if (!input || input->x.rows == 0)
      throw std::invalid_argument("sample_latents: posterior mode needs input samples");
    DenseMatrix x(n, input->x.cols);
    for (int i = 0; i < n; ++i) {
      const int src = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(input->x.rows)));
      for (int j = 0; j < input->x.cols; ++j) x.at(i, j) = input->x.at(src, j);
    }
    Tape tape(&model.params);
    EncodeResult enc = encode_posterior(tape, model.encoder_shape(), tape.constant(x), model.graph.a_hat);
    DenseMatrix noise(n, d);
    for (double& v : noise.data) v = rng.normal();
    Var z = reparameterize(tape, enc.post, noise);
    out.z = tape.value(z);
  } else {
    DenseMatrix z0(n, d);
    for (double& v : z0.data) v = rng.normal();
    out.z = mode == SampleMode::Random
                ? z0
                : sgld_sample(model.params, model.energy_shape(), z0, model.cfg.sgld, rng);
  }

  Tape tape(&model.params);
  Var xh = decode(tape, model.generator_shape(), tape.constant(out.z));
  out.x_hat = tape.value(xh);
  return out;
}

inline double mean_energy_of(Model& model, const DenseMatrix& z) {
  Tape tape(&model.params);
  Var e = tape.mean_all(energy_rows(tape, energy_logits(tape, model.energy_shape(), tape.constant(z))));
  return tape.value(e).data[0];
}

}  // namespace osebm
