#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cscnn/data.hpp"
#include "cscnn/eval.hpp"
#include "doctest.h"

using namespace cscnn;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/cscnn_data_test_") + name;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  os << body;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("empty body loads as an empty log") {
  auto path = temp_path("empty.tsv");
  write_file(path, "user\tad\tcategory\tlabel\tfeats\n");
  InteractionLog log = load_interactions(path);
  CHECK(log.rows.empty());
  CHECK(log.n_categories == 0);
  std::remove(path.c_str());
}

TEST_CASE("hand-written fixture parses exactly") {
  auto path = temp_path("fixture.tsv");
  write_file(path,
             "user\tad\tcategory\tlabel\tfeats\n"
             "10\t500\t3\t1\t0:2,1:1\n"
             "10\t501\t4\t0\t0:2\n"
             "11\t500\t3\t1\t0:0,0:1\n");
  InteractionLog log = load_interactions(path);
  REQUIRE(log.rows.size() == 3);
  CHECK(log.n_users == 2);
  CHECK(log.n_ads == 2);
  CHECK(log.n_categories == 2);
  CHECK(log.user_orig == std::vector<uint64_t>{10, 11});
  CHECK(log.ad_orig == std::vector<uint64_t>{500, 501});
  CHECK(log.category_orig == std::vector<uint64_t>{3, 4});
  CHECK(log.rows[0].user == 0);
  CHECK(log.rows[0].ad == 0);
  CHECK(log.rows[0].category == 0);
  CHECK(log.rows[0].label == 1);
  CHECK(log.rows[0].feats == std::vector<std::pair<int, int>>{{0, 2}, {1, 1}});
  CHECK(log.rows[2].feats == std::vector<std::pair<int, int>>{{0, 0}, {0, 1}});
  CHECK(log.ad_category == std::vector<int>{0, 1});
  CHECK(log.n_features == 2);
  CHECK(log.feature_vocab == std::vector<int>{3, 2});
  std::remove(path.c_str());
}

TEST_CASE("loader rejections carry line numbers") {
  auto path = temp_path("bad.tsv");

  SUBCASE("column count") {
    write_file(path, "user\tad\tcategory\tlabel\tfeats\n1\t2\t3\n");
    try {
      load_interactions(path);
      FAIL("expected rejection");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("category flip for a known ad") {
    write_file(path,
               "user\tad\tcategory\tlabel\tfeats\n"
               "1\t9\t0\t1\t\n"
               "2\t9\t1\t1\t\n");
    try {
      load_interactions(path);
      FAIL("expected rejection");
    } catch (const std::runtime_error& e) {
      std::string msg = e.what();
      CHECK(msg.find("line 3") != std::string::npos);
      CHECK(msg.find("category") != std::string::npos);
    }
  }

  SUBCASE("duplicate rows") {
    write_file(path,
               "user\tad\tcategory\tlabel\tfeats\n"
               "1\t9\t0\t1\t0:1\n"
               "1\t9\t0\t1\t0:1\n");
    try {
      load_interactions(path);
      FAIL("expected rejection");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
  }

  SUBCASE("bad feature pair") {
    write_file(path, "user\tad\tcategory\tlabel\tfeats\n1\t2\t0\t1\t0-3\n");
    CHECK_THROWS_AS(load_interactions(path), std::runtime_error);
  }

  SUBCASE("bad label") {
    write_file(path, "user\tad\tcategory\tlabel\tfeats\n1\t2\t0\t7\t\n");
    CHECK_THROWS_AS(load_interactions(path), std::runtime_error);
  }

  std::remove(path.c_str());
}

TEST_CASE("interaction and image files round-trip byte for byte") {
  SyntheticConfig cfg;
  cfg.n_users = 40;
  cfg.n_ads = 60;
  cfg.impressions_per_user = 6;
  cfg.img_size = 6;
  cfg.seed = 3;
  SyntheticData data = generate_synthetic(cfg);

  auto p1 = temp_path("rt1.tsv"), p2 = temp_path("rt2.tsv");
  write_interactions(data.log, p1);
  write_interactions(load_interactions(p1), p2);
  CHECK(read_file(p1) == read_file(p2));

  auto i1 = temp_path("rt1.imgs"), i2 = temp_path("rt2.imgs");
  write_images(data.images, i1);
  write_images(load_images(i1), i2);
  CHECK(read_file(i1) == read_file(i2));

  for (const auto& p : {p1, p2, i1, i2}) std::remove(p.c_str());
}

TEST_CASE("split holds out one validation and one test action per user") {
  std::vector<Interaction> raw;
  // User 0: exactly three positives -> 1 train / 1 val / 1 test.
  for (int a = 0; a < 3; ++a) raw.push_back({0, a, 0, 1, {}});
  // User 1: only two positives -> excluded.
  for (int a = 0; a < 2; ++a) raw.push_back({1, a, 0, 1, {}});
  InteractionLog log = build_log(raw);
  EvalSplit split = split_log(log, 9);

  CHECK(split.included_users == 1);
  CHECK(split.excluded_users == 1);
  CHECK(split.val_ad[0] >= 0);
  CHECK(split.test_ad[0] >= 0);
  CHECK(split.val_ad[0] != split.test_ad[0]);
  CHECK(split.train_pos[0].size() == 1);
  CHECK(split.val_ad[1] == -1);
  CHECK(split.test_ad[1] == -1);
}

TEST_CASE("cold boundary sits at five training actions") {
  std::vector<Interaction> raw;
  // Ads 100 and 101 are touched only by one-shot users, so every one of
  // those actions stays in the training pool: four for 100, five for 101.
  for (int u = 0; u < 4; ++u) raw.push_back({u, 100, 0, 1, {}});
  for (int u = 4; u < 9; ++u) raw.push_back({u, 101, 0, 1, {}});
  // A few regular users so the split itself is non-degenerate.
  for (int u = 20; u < 23; ++u)
    for (int a = 0; a < 4; ++a) raw.push_back({u, a, 0, 1, {}});
  InteractionLog log = build_log(raw);
  EvalSplit split = split_log(log, 5);

  int cold_ad = -1, warm_ad = -1;
  for (int a = 0; a < log.n_ads; ++a) {
    if (log.ad_orig[a] == 100) cold_ad = a;
    if (log.ad_orig[a] == 101) warm_ad = a;
  }
  REQUIRE(cold_ad >= 0);
  REQUIRE(warm_ad >= 0);
  CHECK(split.cold[cold_ad] == 1);
  CHECK(split.cold[warm_ad] == 0);

  // Cold flags agree with a recount of training positives.
  std::vector<int> count(static_cast<size_t>(log.n_ads), 0);
  for (int r : split.train_rows)
    if (log.rows[r].label == 1) ++count[log.rows[r].ad];
  for (int a = 0; a < log.n_ads; ++a) CHECK(static_cast<bool>(split.cold[a]) == (count[a] < 5));
}

TEST_CASE("splits and synthetic data are seed-deterministic") {
  SyntheticConfig cfg;
  cfg.n_users = 30;
  cfg.n_ads = 50;
  cfg.impressions_per_user = 8;
  cfg.img_size = 6;
  cfg.seed = 11;
  SyntheticData a = generate_synthetic(cfg);
  SyntheticData b = generate_synthetic(cfg);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (size_t i = 0; i < a.log.rows.size(); ++i) {
    CHECK(a.log.rows[i].user == b.log.rows[i].user);
    CHECK(a.log.rows[i].ad == b.log.rows[i].ad);
    CHECK(a.log.rows[i].label == b.log.rows[i].label);
  }
  CHECK(a.images.images == b.images.images);

  EvalSplit s1 = split_log(a.log, 7), s2 = split_log(a.log, 7);
  CHECK(s1.val_ad == s2.val_ad);
  CHECK(s1.test_ad == s2.test_ad);
  CHECK(s1.train_rows == s2.train_rows);
}

TEST_CASE("generated label base rate lands in a clickable band") {
  SyntheticConfig cfg;
  cfg.n_users = 850;
  cfg.n_ads = 600;
  cfg.impressions_per_user = 12;
  cfg.img_size = 6;
  cfg.seed = 13;
  SyntheticData data = generate_synthetic(cfg);
  CHECK(data.log.rows.size() >= 10000);
  double clicks = 0;
  for (const auto& row : data.log.rows) clicks += row.label;
  double rate = clicks / data.log.rows.size();
  CHECK(rate >= 0.2);
  CHECK(rate <= 0.8);
}

TEST_CASE("signal headroom: hidden-state scorer beats any category-blind pixel readout") {
  SyntheticConfig cfg;
  cfg.n_users = 150;
  cfg.n_ads = 300;
  cfg.impressions_per_user = 12;
  cfg.img_size = 12;
  cfg.seed = 17;
  cfg.click_floor = 0.002;  // keep pattern-blind accidental clicks rare
  cfg.targeted_frac = 0.6;  // concentrate positives where the kernel peaks
  SyntheticData data = generate_synthetic(cfg);
  EvalSplit split = split_log(data.log, 17);

  // Cheating scorer: reads the hidden generative state directly.
  auto cheat = [&](int u, int a) { return data.click_prob(u, a, cfg); };
  AucResult top = compute_auc(cheat, data.log, split, SplitSide::Test, ItemFilter::All);
  CHECK(top.auc >= 0.98);

  // Category-blind baseline: per-user kernel ridge regression on raw pixels
  // over that user's training impressions.
  size_t dim = data.images.images.begin()->second.size();
  auto pix = [&](int a) { return data.images.image_for(data.log.ad_orig[a]).data(); };
  auto dot_img = [&](int a, int b) {
    const float* x = pix(a);
    const float* y = pix(b);
    double s = 0;
    for (size_t i = 0; i < dim; ++i) s += static_cast<double>(x[i]) * y[i];
    return s;
  };

  std::vector<std::vector<int>> user_rows(static_cast<size_t>(data.log.n_users));
  for (int r : split.train_rows) user_rows[data.log.rows[r].user].push_back(r);

  std::vector<std::vector<double>> alpha(static_cast<size_t>(data.log.n_users));
  std::vector<double> ymean(static_cast<size_t>(data.log.n_users), 0.0);
  for (int u = 0; u < data.log.n_users; ++u) {
    const auto& rows = user_rows[u];
    size_t n = rows.size();
    if (n == 0) continue;
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) y[i] = data.log.rows[rows[i]].label;
    double mu = 0;
    for (double v : y) mu += v;
    mu /= static_cast<double>(n);
    ymean[u] = mu;
    std::vector<double> m(n * (n + 1));
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j)
        m[i * (n + 1) + j] =
            dot_img(data.log.rows[rows[i]].ad, data.log.rows[rows[j]].ad) + (i == j ? 50.0 : 0.0);
      m[i * (n + 1) + n] = y[i] - mu;
    }
    for (size_t c = 0; c < n; ++c) {  // Gaussian elimination with partial pivot
      size_t piv = c;
      for (size_t r2 = c + 1; r2 < n; ++r2)
        if (std::fabs(m[r2 * (n + 1) + c]) > std::fabs(m[piv * (n + 1) + c])) piv = r2;
      for (size_t k = 0; k <= n; ++k) std::swap(m[c * (n + 1) + k], m[piv * (n + 1) + k]);
      double d = m[c * (n + 1) + c];
      for (size_t k = c; k <= n; ++k) m[c * (n + 1) + k] /= d;
      for (size_t r2 = 0; r2 < n; ++r2) {
        if (r2 == c) continue;
        double factor = m[r2 * (n + 1) + c];
        for (size_t k = c; k <= n; ++k) m[r2 * (n + 1) + k] -= factor * m[c * (n + 1) + k];
      }
    }
    alpha[u].resize(n);
    for (size_t i = 0; i < n; ++i) alpha[u][i] = m[i * (n + 1) + n];
  }
  auto blind = [&](int u, int a) {
    double s = ymean[u];
    const auto& rows = user_rows[u];
    for (size_t i = 0; i < rows.size(); ++i) s += alpha[u][i] * dot_img(data.log.rows[rows[i]].ad, a);
    return s;
  };
  AucResult low = compute_auc(blind, data.log, split, SplitSide::Test, ItemFilter::All);
  CHECK(low.auc <= 0.85);
  CHECK(top.auc > low.auc + 0.1);
}
