#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "osebm/matrix.hpp"

namespace osebm {

// Closed-set accuracy over known rows.
inline double accuracy(const std::vector<int>& labels, const std::vector<int>& preds) {
  if (labels.empty() || labels.size() != preds.size())
    throw std::invalid_argument("accuracy: need matching, nonempty label/prediction lists");
  int64_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += labels[i] == preds[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// P(unknown score > known score) + P(tie)/2, where higher scores mean "more
// unknown". Computed from sorted known scores with binary search; the
// numerator 2*wins + ties stays integral, so small cases agree exactly with
// exhaustive pairwise counting.
inline double auroc(const std::vector<double>& known, const std::vector<double>& unknown) {
  if (known.empty() || unknown.empty()) throw std::invalid_argument("auroc: empty side");
  std::vector<double> sorted_known = known;
  std::sort(sorted_known.begin(), sorted_known.end());
  int64_t numerator = 0;  // 2 * wins + ties
  for (double u : unknown) {
    const auto lo = std::lower_bound(sorted_known.begin(), sorted_known.end(), u);
    const auto hi = std::upper_bound(sorted_known.begin(), sorted_known.end(), u);
    const int64_t wins = lo - sorted_known.begin();
    const int64_t ties = hi - lo;
    numerator += 2 * wins + ties;
  }
  return static_cast<double>(numerator) /
         (2.0 * static_cast<double>(known.size()) * static_cast<double>(unknown.size()));
}

namespace detail {
inline std::vector<double> merged_thresholds_desc(const std::vector<double>& a,
                                                  const std::vector<double>& b) {
  std::vector<double> t = a;
  t.insert(t.end(), b.begin(), b.end());
  std::sort(t.begin(), t.end(), std::greater<double>());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}
}  // namespace detail

// Average precision with step interpolation; unknown is the positive class
// and a sample is predicted positive at threshold t when score >= t.
inline double aupr(const std::vector<double>& known, const std::vector<double>& unknown) {
  if (known.empty() || unknown.empty()) throw std::invalid_argument("aupr: empty side");
  std::vector<double> k_desc = known, u_desc = unknown;
  std::sort(k_desc.begin(), k_desc.end(), std::greater<double>());
  std::sort(u_desc.begin(), u_desc.end(), std::greater<double>());
  const std::vector<double> thresholds = detail::merged_thresholds_desc(known, unknown);

  double ap = 0.0;
  int64_t tp = 0, fp = 0, tp_prev = 0;
  size_t ki = 0, ui = 0;
  for (double t : thresholds) {
    while (ui < u_desc.size() && u_desc[ui] >= t) ++ui;
    while (ki < k_desc.size() && k_desc[ki] >= t) ++ki;
    tp = static_cast<int64_t>(ui);
    fp = static_cast<int64_t>(ki);
    if (tp != tp_prev) {
      const double recall_step = static_cast<double>(tp - tp_prev) / static_cast<double>(unknown.size());
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += recall_step * precision;
      tp_prev = tp;
    }
  }
  return ap;
}

// Area under the correct-classification-rate versus false-positive-rate curve.
// A sample is accepted as known at threshold t when its score <= t; CCR counts
// accepted knowns that are also correctly classified. Trapezoidal rule over
// every distinct score, starting from the implicit (0, 0) point.
inline double oscr(const std::vector<double>& known_scores, const std::vector<char>& known_correct,
                   const std::vector<double>& unknown_scores) {
  if (known_scores.empty() || unknown_scores.empty()) throw std::invalid_argument("oscr: empty side");
  if (known_scores.size() != known_correct.size())
    throw std::invalid_argument("oscr: correctness flags must match known scores");

  std::vector<double> thresholds = detail::merged_thresholds_desc(known_scores, unknown_scores);
  std::reverse(thresholds.begin(), thresholds.end());  // ascending

  struct Pair {
    double score;
    bool correct;
  };
  std::vector<Pair> knowns(known_scores.size());
  for (size_t i = 0; i < known_scores.size(); ++i)
    knowns[i] = Pair{known_scores[i], known_correct[i] != 0};
  std::sort(knowns.begin(), knowns.end(), [](const Pair& a, const Pair& b) { return a.score < b.score; });
  std::vector<double> u_asc = unknown_scores;
  std::sort(u_asc.begin(), u_asc.end());

  double area = 0.0;
  double ccr_prev = 0.0, fpr_prev = 0.0;
  size_t ki = 0, ui = 0;
  int64_t accepted_correct = 0;
  for (double t : thresholds) {
    while (ki < knowns.size() && knowns[ki].score <= t) {
      accepted_correct += knowns[ki].correct;
      ++ki;
    }
    while (ui < u_asc.size() && u_asc[ui] <= t) ++ui;
    const double ccr = static_cast<double>(accepted_correct) / static_cast<double>(known_scores.size());
    const double fpr = static_cast<double>(ui) / static_cast<double>(unknown_scores.size());
    area += (fpr - fpr_prev) * (ccr + ccr_prev) / 2.0;
    ccr_prev = ccr;
    fpr_prev = fpr;
  }
  return area;
}

// Squared mean distance plus covariance trace term between two sample sets
// treated as Gaussians: ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^(1/2)).
// The matrix square root goes through symmetric eigendecompositions with
// negative eigenvalues clamped to zero.
inline double frechet_feature_distance(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("frechet_feature_distance: width mismatch");
  const int d = a.cols;
  if (a.rows < d + 1 || b.rows < d + 1)
    throw std::invalid_argument("frechet_feature_distance: need at least d + 1 samples per side");

  auto moments = [](const DenseMatrix& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const int n = x.rows, d2 = x.cols;
    mu = Eigen::VectorXd::Zero(d2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d2; ++j) mu[j] += x.at(i, j);
    mu /= n;
    cov = Eigen::MatrixXd::Zero(d2, d2);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd row(d2);
      for (int j = 0; j < d2; ++j) row[j] = x.at(i, j) - mu[j];
      cov.noalias() += row * row.transpose();
    }
    cov /= n - 1;
  };

  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);

  auto sym_sqrt = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    Eigen::VectorXd vals = eig.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) vals[i] = vals[i] > 0.0 ? std::sqrt(vals[i]) : 0.0;
    return Eigen::MatrixXd(eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose());
  };

  const Eigen::MatrixXd sqrt_b = sym_sqrt(cov_b);
  const Eigen::MatrixXd inner = sqrt_b * cov_a * sqrt_b;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()));
  double tr_sqrt = 0.0;
  for (int i = 0; i < eig.eigenvalues().size(); ++i) {
    const double v = eig.eigenvalues()[i];
    if (v > 0.0) tr_sqrt += std::sqrt(v);
  }

  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

}  // namespace osebm
