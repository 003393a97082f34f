#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "osebm/synthdata.hpp"
#include "osebm/textio.hpp"

using namespace osebm;

namespace {

std::string temp_dir() {
  const std::string dir = (std::filesystem::temp_directory_path() / "osebm_synth_test").string();
  std::filesystem::create_directories(dir);
  return dir;
}

double mean_hamming(const AttributeBank& bank, bool within_group) {
  double total = 0.0;
  int pairs = 0;
  for (int a = 0; a < bank.k_total; ++a)
    for (int b = a + 1; b < bank.k_total; ++b) {
      if ((bank.group_of[a] == bank.group_of[b]) != within_group) continue;
      int d = 0;
      for (int j = 0; j < bank.m; ++j)
        if (bank.attrs.at(a, j) != bank.attrs.at(b, j)) ++d;
      total += d;
      ++pairs;
    }
  return pairs > 0 ? total / pairs : 0.0;
}

}  // namespace

TEST_CASE("attribute bank satisfies its row invariants") {
  const AttributeBank bank = make_attribute_bank(16, 16, 4, 3);
  REQUIRE(bank.attrs.rows == 16);
  REQUIRE(bank.attrs.cols == 16);

  std::set<std::vector<double>> rows;
  for (int c = 0; c < bank.k_total; ++c) {
    const std::vector<double> row = bank.row(c);
    int active = 0;
    for (double v : row) {
      REQUIRE((v == 0.0 || v == 1.0));
      active += v != 0.0;
    }
    REQUIRE(active >= 1);
    REQUIRE(rows.insert(row).second);  // all rows distinct
  }

  // Same-group classes share more than half their attributes.
  for (int a = 0; a < bank.k_total; ++a)
    for (int b = a + 1; b < bank.k_total; ++b) {
      if (bank.group_of[a] != bank.group_of[b]) continue;
      int d = 0;
      for (int j = 0; j < bank.m; ++j)
        if (bank.attrs.at(a, j) != bank.attrs.at(b, j)) ++d;
      REQUIRE(2 * d < bank.m);
    }

  REQUIRE(mean_hamming(bank, true) < mean_hamming(bank, false));
}

TEST_CASE("attribute bank generation is deterministic and validates sizes") {
  const AttributeBank a = make_attribute_bank(12, 10, 3, 77);
  const AttributeBank b = make_attribute_bank(12, 10, 3, 77);
  REQUIRE(a.attrs.data == b.attrs.data);
  REQUIRE(a.group_of == b.group_of);

  const AttributeBank c = make_attribute_bank(12, 10, 3, 78);
  REQUIRE(a.attrs.data != c.attrs.data);

  REQUIRE_THROWS_AS(make_attribute_bank(5, 2, 1, 0), std::invalid_argument);   // 5 > 2^2
  REQUIRE_THROWS_AS(make_attribute_bank(4, 8, 5, 0), std::invalid_argument);   // groups > classes
  REQUIRE_THROWS_AS(make_attribute_bank(0, 8, 1, 0), std::invalid_argument);
}

TEST_CASE("class prototypes are the linear embedding of their attribute rows") {
  // Two classes with identical attribute rows would be rejected by the bank
  // builder, so build the bank by hand to probe the embedding directly.
  AttributeBank bank;
  bank.k_total = 3;
  bank.m = 4;
  bank.groups = 1;
  bank.attrs = DenseMatrix(3, 4, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1});
  bank.group_of = {0, 0, 0};

  const Dataset ds = generate_dataset(bank, 5, 0.0, 6, 11);
  REQUIRE(ds.x.rows == 15);
  REQUIRE(ds.prototypes.rows == 3);

  // Identical attribute rows map to identical prototypes.
  for (int j = 0; j < 6; ++j) REQUIRE(ds.prototypes.at(0, j) == ds.prototypes.at(1, j));

  // With zero noise every sample sits exactly on its class prototype.
  for (int r = 0; r < ds.x.rows; ++r)
    for (int j = 0; j < 6; ++j) REQUIRE(ds.x.at(r, j) == ds.prototypes.at(ds.labels[r], j));

  // Labels are class-major, n_per_class each.
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i) REQUIRE(ds.labels[c * 5 + i] == c);

  // Disjoint attribute rows land farther apart than identical ones.
  double d01 = 0.0, d02 = 0.0;
  for (int j = 0; j < 6; ++j) {
    d01 += std::pow(ds.prototypes.at(0, j) - ds.prototypes.at(1, j), 2);
    d02 += std::pow(ds.prototypes.at(0, j) - ds.prototypes.at(2, j), 2);
  }
  REQUIRE(d01 == 0.0);
  REQUIRE(d02 > 0.0);

  REQUIRE_THROWS_AS(generate_dataset(bank, 0, 0.1, 6, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(generate_dataset(bank, 1, -0.1, 6, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(generate_dataset(bank, 1, 0.1, 2, 1), std::invalid_argument);  // d < m
}

TEST_CASE("noise scale controls the spread around prototypes") {
  const AttributeBank bank = make_attribute_bank(8, 8, 2, 5);
  const Dataset tight = generate_dataset(bank, 64, 0.05, 16, 9);
  const Dataset wide = generate_dataset(bank, 64, 0.5, 16, 9);

  auto mean_sq_dev = [](const Dataset& ds) {
    double s = 0.0;
    for (int r = 0; r < ds.x.rows; ++r)
      for (int j = 0; j < ds.x.cols; ++j) s += std::pow(ds.x.at(r, j) - ds.prototypes.at(ds.labels[r], j), 2);
    return s / (ds.x.rows * ds.x.cols);
  };
  const double v_tight = mean_sq_dev(tight);
  const double v_wide = mean_sq_dev(wide);
  REQUIRE(v_tight == Catch::Approx(0.05 * 0.05).epsilon(0.1));
  REQUIRE(v_wide == Catch::Approx(0.5 * 0.5).epsilon(0.1));
}

TEST_CASE("open split partitions classes and ranks difficulty by attribute similarity") {
  const AttributeBank bank = make_attribute_bank(16, 16, 4, 21);
  const OpenSplit split = split_openset(bank, 8, 21);

  std::set<int> all;
  for (int c : split.known) all.insert(c);
  for (int c : split.easy) all.insert(c);
  for (int c : split.medium) all.insert(c);
  for (int c : split.hard) all.insert(c);
  REQUIRE(all.size() == 16);
  REQUIRE(split.known.size() == 8);
  // 8 unknowns -> equal thirds with remainder toward hard then medium.
  REQUIRE(split.hard.size() == 3);
  REQUIRE(split.medium.size() == 3);
  REQUIRE(split.easy.size() == 2);

  // Brute-force ranking oracle: every hard class is at least as similar to the
  // known set as every medium class, and medium likewise dominates easy.
  auto best_cos = [&](int c) {
    double nc = 0.0;
    for (int j = 0; j < bank.m; ++j) nc += bank.attrs.at(c, j);
    double best = 0.0;
    for (int k : split.known) {
      double dot = 0.0, nk = 0.0;
      for (int j = 0; j < bank.m; ++j) {
        dot += bank.attrs.at(c, j) * bank.attrs.at(k, j);
        nk += bank.attrs.at(k, j);
      }
      best = std::max(best, dot / std::sqrt(nc * nk));
    }
    return best;
  };
  for (int h : split.hard)
    for (int m : split.medium) REQUIRE(best_cos(h) >= best_cos(m));
  for (int m : split.medium)
    for (int e : split.easy) REQUIRE(best_cos(m) >= best_cos(e));

  REQUIRE(mean_similarity_to_known(bank, split.known, split.hard) >=
          mean_similarity_to_known(bank, split.known, split.medium));
  REQUIRE(mean_similarity_to_known(bank, split.known, split.medium) >=
          mean_similarity_to_known(bank, split.known, split.easy));

  REQUIRE_THROWS_AS(split_openset(bank, 0, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(split_openset(bank, 16, 1), std::invalid_argument);
}

TEST_CASE("identical and disjoint unknown classes land in hard and easy buckets") {
  // Hand-built bank: knowns get picked by seed search; instead verify on the
  // similarity ranking directly with one unknown nearly identical to a known
  // row and one sharing nothing with any known row.
  const AttributeBank bank = make_attribute_bank(12, 12, 3, 2);
  const OpenSplit split = split_openset(bank, 6, 2);

  // The most-similar unknown must be in hard, the least-similar in easy.
  double best = -1.0, worst = 2.0;
  int best_c = -1, worst_c = -1;
  std::vector<int> unknowns;
  for (const auto* bucket : {&split.easy, &split.medium, &split.hard})
    for (int c : *bucket) unknowns.push_back(c);
  for (int c : unknowns) {
    const double s = mean_similarity_to_known(bank, split.known, {c});
    if (s > best) {
      best = s;
      best_c = c;
    }
    if (s < worst) {
      worst = s;
      worst_c = c;
    }
  }
  REQUIRE(std::count(split.hard.begin(), split.hard.end(), best_c) == 1);
  REQUIRE(std::count(split.easy.begin(), split.easy.end(), worst_c) == 1);
}

TEST_CASE("samples CSV round trips bitwise") {
  const std::string dir = temp_dir();
  const std::string path = dir + "/round.csv";

  const AttributeBank bank = make_attribute_bank(4, 8, 2, 13);
  const Dataset ds = generate_dataset(bank, 6, 0.3, 12, 13);
  DenseMatrix attrs(ds.x.rows, bank.m);
  for (int r = 0; r < ds.x.rows; ++r)
    for (int j = 0; j < bank.m; ++j) attrs.at(r, j) = bank.attrs.at(ds.labels[r], j);

  write_samples_csv(path, ds.x, ds.labels, attrs);
  const SampleTable back = load_samples_csv(path);
  REQUIRE(back.x.rows == ds.x.rows);
  REQUIRE(back.x.cols == ds.x.cols);
  REQUIRE(back.x.data == ds.x.data);  // %.17g text preserves doubles exactly
  REQUIRE(back.labels == ds.labels);
  REQUIRE(back.attrs.data == attrs.data);

  // Writing the loaded table again reproduces the file byte for byte.
  const std::string first = read_text_file(path);
  write_samples_csv(dir + "/round2.csv", back.x, back.labels, back.attrs);
  REQUIRE(read_text_file(dir + "/round2.csv") == first);
}

TEST_CASE("dataset generation is reproducible at the file level") {
  const std::string dir = temp_dir();
  const AttributeBank bank1 = make_attribute_bank(6, 8, 2, 31);
  const AttributeBank bank2 = make_attribute_bank(6, 8, 2, 31);
  const Dataset d1 = generate_dataset(bank1, 4, 0.2, 10, 31);
  const Dataset d2 = generate_dataset(bank2, 4, 0.2, 10, 31);

  DenseMatrix attrs(d1.x.rows, bank1.m);
  for (int r = 0; r < d1.x.rows; ++r)
    for (int j = 0; j < bank1.m; ++j) attrs.at(r, j) = bank1.attrs.at(d1.labels[r], j);

  write_samples_csv(dir + "/gen_a.csv", d1.x, d1.labels, attrs);
  write_samples_csv(dir + "/gen_b.csv", d2.x, d2.labels, attrs);
  REQUIRE(read_text_file(dir + "/gen_a.csv") == read_text_file(dir + "/gen_b.csv"));
}

TEST_CASE("samples CSV loader rejects malformed rows with line numbers") {
  const std::string dir = temp_dir();

  const std::string bad_cols = dir + "/bad_cols.csv";
  write_text_file(bad_cols, "f0,f1,label,a0\n1.0,2.0,0,1\n1.0,2.0,0\n");
  try {
    load_samples_csv(bad_cols);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    REQUIRE(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const std::string bad_num = dir + "/bad_num.csv";
  write_text_file(bad_num, "f0,f1,label,a0\nx,2.0,0,1\n");
  REQUIRE_THROWS_AS(load_samples_csv(bad_num), IoError);

  const std::string missing = dir + "/does_not_exist.csv";
  REQUIRE_THROWS_AS(load_samples_csv(missing), IoError);

  // A header-only file is an empty table, not an error.
  const std::string header_only = dir + "/header_only.csv";
  write_text_file(header_only, "f0,f1,label,a0\n");
  const SampleTable empty = load_samples_csv(header_only);
  REQUIRE(empty.x.rows == 0);
  REQUIRE(empty.labels.empty());
}
