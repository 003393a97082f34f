#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/rng.hpp"
#include "osebm/textio.hpp"

namespace osebm {

// Binary attribute vectors for every class, grouped into coarse groups whose
// members share more than half their attributes. All rows are distinct and
// every row has at least one active attribute.
struct AttributeBank {
  int k_total = 0;
  int m = 0;
  int groups = 0;
  DenseMatrix attrs;          // k_total x m, entries 0/1
  std::vector<int> group_of;  // class -> group

  std::vector<double> row(int c) const {
    std::vector<double> out(m);
    for (int j = 0; j < m; ++j) out[j] = attrs.at(c, j);
    return out;
  }
};

// Class partition for open-set evaluation. Unknown classes are bucketed by
// attribute similarity to the known set: most similar third is Hard.
struct OpenSplit {
  std::vector<int> known;
  std::vector<int> easy;
  std::vector<int> medium;
  std::vector<int> hard;
};

struct Dataset {
  DenseMatrix x;            // n x d features
  std::vector<int> labels;  // original class ids
  DenseMatrix prototypes;   // k_total x d, noise-free class centers
};

// Rows loaded from a samples CSV; attrs travel with each row.
struct SampleTable {
  DenseMatrix x;
  std::vector<int> labels;
  DenseMatrix attrs;
};

namespace detail {

inline int hamming(const DenseMatrix& a, int r0, int r1) {
  int d = 0;
  for (int j = 0; j < a.cols; ++j)
    if (a.at(r0, j) != a.at(r1, j)) ++d;
  return d;
}

}  // namespace detail

inline AttributeBank make_attribute_bank(int k_total, int m, int groups, uint64_t seed) {
  if (k_total < 1 || m < 1 || groups < 1 || groups > k_total)
    throw std::invalid_argument("make_attribute_bank: bad sizes");
  if (m < 63 && static_cast<uint64_t>(k_total) > (1ull << m))
    throw std::invalid_argument("make_attribute_bank: more classes than distinct attribute vectors");

  Rng rng = Rng(seed).fork("attribute_bank");
  AttributeBank bank;
  bank.k_total = k_total;
  bank.m = m;
  bank.groups = groups;
  bank.attrs = DenseMatrix(k_total, m);
  bank.group_of.resize(k_total);

  // Contiguous class blocks per group; group g owns [g*k/G, (g+1)*k/G).
  std::vector<int> group_start(groups + 1);
  for (int g = 0; g <= groups; ++g) group_start[g] = g * k_total / groups;

  const int flip_count = std::max(1, m / 8);
  std::set<std::vector<double>> seen;

  for (int g = 0; g < groups; ++g) {
    std::vector<double> proto(m);
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000)
        throw std::invalid_argument("make_attribute_bank: could not place a group prototype");
      int active = 0;
      for (int j = 0; j < m; ++j) {
        proto[j] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        active += proto[j] != 0.0;
      }
      if (active > 0) break;
    }

    for (int c = group_start[g]; c < group_start[g + 1]; ++c) {
      std::vector<double> row;
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
          throw std::invalid_argument("make_attribute_bank: constraints unsatisfiable for class " +
                                      std::to_string(c));
        row = proto;
        if (c != group_start[g]) {  // first class in a group is the prototype itself
          std::set<uint64_t> flips;
          while (static_cast<int>(flips.size()) < flip_count) flips.insert(rng.uniform_index(m));
          for (uint64_t j : flips) row[j] = 1.0 - row[j];
        }
        if (std::none_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) continue;
        if (seen.count(row)) continue;
        bool shares_majority = true;
        for (int prev = group_start[g]; prev < c && shares_majority; ++prev) {
          int d = 0;
          for (int j = 0; j < m; ++j)
            if (bank.attrs.at(prev, j) != row[j]) ++d;
          shares_majority = 2 * d < m;  // shared attrs = m - d > m/2
        }
        if (shares_majority) break;
      }
      seen.insert(row);
      for (int j = 0; j < m; ++j) bank.attrs.at(c, j) = row[j];
      bank.group_of[c] = g;
    }
  }
  return bank;
}

// Noise-free center of class c is a fixed random linear embedding of its
// attribute vector, so attribute similarity carries over to feature space.
inline Dataset generate_dataset(const AttributeBank& bank, int n_per_class, double noise_scale, int d,
                                uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("generate_dataset: n_per_class must be >= 1");
  if (d < bank.m) throw std::invalid_argument("generate_dataset: feature dim must be >= attribute count");
  if (noise_scale < 0.0) throw std::invalid_argument("generate_dataset: negative noise scale");

  Rng embed_rng = Rng(seed).fork("embed");
  DenseMatrix embed(d, bank.m);
  const double sc = 1.0 / std::sqrt(static_cast<double>(bank.m));
  for (double& v : embed.data) v = sc * embed_rng.normal();

  Dataset out;
  out.prototypes = DenseMatrix(bank.k_total, d);
  for (int c = 0; c < bank.k_total; ++c)
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (int j = 0; j < bank.m; ++j) s += embed.at(i, j) * bank.attrs.at(c, j);
      out.prototypes.at(c, i) = s;
    }

  Rng noise_rng = Rng(seed).fork("noise");
  out.x = DenseMatrix(bank.k_total * n_per_class, d);
  out.labels.resize(out.x.rows);
  int r = 0;
  for (int c = 0; c < bank.k_total; ++c)
    for (int i = 0; i < n_per_class; ++i, ++r) {
      out.labels[r] = c;
      for (int j = 0; j < d; ++j) out.x.at(r, j) = out.prototypes.at(c, j) + noise_scale * noise_rng.normal();
    }
  return out;
}

inline OpenSplit split_openset(const AttributeBank& bank, int n_known, uint64_t seed) {
  if (n_known < 1 || n_known >= bank.k_total)
    throw std::invalid_argument("split_openset: n_known must be in [1, k_total)");

  std::vector<int> ids(bank.k_total);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = Rng(seed).fork("known_choice");
  for (int i = bank.k_total - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_index(static_cast<uint64_t>(i) + 1)]);

  OpenSplit split;
  split.known.assign(ids.begin(), ids.begin() + n_known);
  std::sort(split.known.begin(), split.known.end());

  auto norm = [&](int c) {
    double s = 0.0;
    for (int j = 0; j < bank.m; ++j) s += bank.attrs.at(c, j) * bank.attrs.at(c, j);
    return std::sqrt(s);
  };

  // similarity of an unknown class = max cosine to any known attribute vector
  std::vector<std::pair<double, int>> ranked;
  for (int c : std::vector<int>(ids.begin() + n_known, ids.end())) {
    double best = 0.0;
    for (int k : split.known) {
      double dot = 0.0;
      for (int j = 0; j < bank.m; ++j) dot += bank.attrs.at(c, j) * bank.attrs.at(k, j);
      best = std::max(best, dot / (norm(c) * norm(k)));
    }
    ranked.emplace_back(best, c);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  const int n_unk = static_cast<int>(ranked.size());
  const int n_hard = (n_unk + 2) / 3;
  const int n_medium = (n_unk + 1) / 3;
  for (int i = 0; i < n_unk; ++i) {
    if (i < n_hard)
      split.hard.push_back(ranked[i].second);
    else if (i < n_hard + n_medium)
      split.medium.push_back(ranked[i].second);
    else
      split.easy.push_back(ranked[i].second);
  }
  std::sort(split.hard.begin(), split.hard.end());
  std::sort(split.medium.begin(), split.medium.end());
  std::sort(split.easy.begin(), split.easy.end());
  return split;
}

// Mean over class pairs (unknown, nearest known) of the ranking similarity,
// used by tests to confirm Hard >= Medium >= Easy.
inline double mean_similarity_to_known(const AttributeBank& bank, const std::vector<int>& known,
                                       const std::vector<int>& classes) {
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int c : classes) {
    double nc = 0.0, best = 0.0;
    for (int j = 0; j < bank.m; ++j) nc += bank.attrs.at(c, j);
    for (int k : known) {
      double dot = 0.0, nk = 0.0;
      for (int j = 0; j < bank.m; ++j) {
        dot += bank.attrs.at(c, j) * bank.attrs.at(k, j);
        nk += bank.attrs.at(k, j);
      }
      best = std::max(best, dot / std::sqrt(nc * nk));
    }
    total += best;
  }
  return total / classes.size();
}

// CSV schema: f0..f{d-1},label,a0..a{m-1}; features as round-trip decimals.
inline void write_samples_csv(const std::string& path, const DenseMatrix& x, const std::vector<int>& labels,
                              const DenseMatrix& attrs) {
  if (x.rows != static_cast<int>(labels.size()) || x.rows != attrs.rows)
    throw std::invalid_argument("write_samples_csv: row count mismatch");
  std::string out;
  for (int j = 0; j < x.cols; ++j) out += "f" + std::to_string(j) + ",";
  out += "label";
  for (int j = 0; j < attrs.cols; ++j) out += ",a" + std::to_string(j);
  out += "\n";
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) {
      out += format_g17(x.at(i, j));
      out += ",";
    }
    out += std::to_string(labels[i]);
    for (int j = 0; j < attrs.cols; ++j) out += attrs.at(i, j) != 0.0 ? ",1" : ",0";
    out += "\n";
  }
  write_text_file(path, out);
}

inline SampleTable load_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": parse error at line 1: empty file");
  const std::vector<std::string> header = split_on(trim(line), ',');
  int d = 0;
  while (d < static_cast<int>(header.size()) && header[d] == "f" + std::to_string(d)) ++d;
  if (d == 0 || d >= static_cast<int>(header.size()) || header[d] != "label")
    throw IoError(path + ": parse error at line 1: bad header");
  const int m = static_cast<int>(header.size()) - d - 1;
  for (int j = 0; j < m; ++j)
    if (header[d + 1 + j] != "a" + std::to_string(j))
      throw IoError(path + ": parse error at line 1: bad attribute header");

  std::vector<double> xs, as;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_on(trim(line), ',');
    if (static_cast<int>(cells.size()) != d + 1 + m)
      throw IoError(path + ": parse error at line " + std::to_string(lineno) + ": expected " +
                    std::to_string(d + 1 + m) + " columns, got " + std::to_string(cells.size()));
    const std::string ctx = path + " line " + std::to_string(lineno);
    for (int j = 0; j < d; ++j) xs.push_back(parse_double(cells[j], ctx));
    labels.push_back(static_cast<int>(parse_long(cells[d], ctx)));
    for (int j = 0; j < m; ++j) {
      const long a = parse_long(cells[d + 1 + j], ctx);
      if (a != 0 && a != 1) throw IoError(ctx + ": parse error: attribute must be 0 or 1");
      as.push_back(static_cast<double>(a));
    }
  }
  const int n = static_cast<int>(labels.size());
  SampleTable t;
  t.x = DenseMatrix(n, d, std::move(xs));
  t.labels = std::move(labels);
  t.attrs = DenseMatrix(n, m, std::move(as));
  return t;
}

namespace detail {
inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}
}  // namespace detail

inline void write_dataset_manifest(const std::string& path, const AttributeBank& bank, const OpenSplit& split,
                                   uint64_t seed, int feature_dim, int n_per_class, double noise_scale) {
  std::string out;
  out += "k_total=" + std::to_string(bank.k_total) + "\n";
  out += "m=" + std::to_string(bank.m) + "\n";
  out += "groups=" + std::to_string(bank.groups) + "\n";
  out += "d=" + std::to_string(feature_dim) + "\n";
  out += "n_per_class=" + std::to_string(n_per_class) + "\n";
  out += "noise_scale=" + format_g17(noise_scale) + "\n";
  out += "seed=" + std::to_string(seed) + "\n";
  out += "known_classes=" + detail::join_ints(split.known) + "\n";
  out += "easy_classes=" + detail::join_ints(split.easy) + "\n";
  out += "medium_classes=" + detail::join_ints(split.medium) + "\n";
  out += "hard_classes=" + detail::join_ints(split.hard) + "\n";
  write_text_file(path, out);
}

}  // namespace osebm
