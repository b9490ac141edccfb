#pragma once

// Dataset file formats, loaders, train/val/test splitter, and the synthetic
// generator whose click signal depends on category-specific visual patterns.
//
// Interaction file: UTF-8 TSV, header `user\tad\tcategory\tlabel\tfeats`,
// features as comma-separated featureid:valueid pairs (repeat a feature id
// for multi-valued features).
// Image container (.imgs): magic "CSIM", version u16, count u32, H0 u16,
// W0 u16, then per entry ad-id u64 + H0*W0*3 little-endian f32.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cscnn {

struct Interaction {
  int user = 0, ad = 0, category = 0, label = 0;       // dense ids
  std::vector<std::pair<int, int>> feats;              // (feature id, value id)
};

struct InteractionLog {
  std::vector<Interaction> rows;
  int n_users = 0, n_ads = 0, n_categories = 0, n_features = 0;
  std::vector<uint64_t> user_orig, ad_orig, category_orig;  // dense id -> raw id
  std::vector<int> ad_category;                             // per dense ad
  std::vector<int> feature_vocab;                           // max value id + 1

  // Feature values consistent per ad / per user, used to assemble candidate
  // feature vectors for (user, ad) pairs never seen together.
  std::vector<std::vector<std::vector<int>>> ad_feats;    // [ad][feature] -> value ids
  std::vector<std::vector<std::vector<int>>> user_feats;  // [user][feature] -> value ids
  std::vector<char> feature_is_user_side;

  // Per-feature value ids for scoring an arbitrary (user, ad) pair.
  std::vector<std::vector<int>> feats_for(int user, int ad) const;
};

InteractionLog load_interactions(const std::string& path);
void write_interactions(const InteractionLog& log, const std::string& path);
InteractionLog build_log(const std::vector<Interaction>& raw_rows);  // raw ids in fields

struct ImageStore {
  int height = 0, width = 0;
  std::map<uint64_t, std::vector<float>> images;  // ad raw id -> H*W*3

  const std::vector<float>& image_for(uint64_t raw_ad_id) const;
  bool has(uint64_t raw_ad_id) const { return images.count(raw_ad_id) != 0; }
};

ImageStore load_images(const std::string& path);
void write_images(const ImageStore& store, const std::string& path);

// ---- split ----

struct EvalSplit {
  // Per dense user id; -1 where the user is excluded (fewer than 3 positives).
  std::vector<int> val_ad, test_ad;
  std::vector<std::vector<int>> train_pos;  // P_u, dense ad ids
  std::vector<char> cold;                   // per dense ad: < 5 training actions
  std::vector<int> train_rows;              // row indices usable for training
  int included_users = 0;
  int excluded_users = 0;
};

EvalSplit split_log(const InteractionLog& log, uint64_t seed);

// ---- synthetic generator ----

struct SyntheticConfig {
  int n_users = 500;
  int n_ads = 1000;
  int n_categories = 8;
  int impressions_per_user = 12;
  int img_size = 24;  // 3x3 region grid; must be divisible by 3
  uint64_t seed = 1;

  int groups = 1;  // >1 adds a collaborative block structure to clicks
  double targeted_frac = 0.45;
  int targeted_candidates = 50;
  // Click kernel: peak when the ad pattern matches the hidden per-category
  // attractive pattern, modulated by a wider personal-taste match.
  double attract_width = 0.10;
  double taste_width = 0.35;
  double click_peak = 0.92;
  double click_floor = 0.03;
  double off_group_click = 0.01;
  double own_brightness_lo = 0.6, own_brightness_hi = 1.0;
  double distractor_brightness_lo = 0.2, distractor_brightness_hi = 0.9;
  double pixel_noise = 0.08;
};

struct SyntheticData {
  InteractionLog log;
  ImageStore images;
  // Hidden generative state, for oracle tests only.
  std::vector<double> user_taste;   // t_u in [0,1)
  std::vector<double> ad_pattern;   // p_a in [0,1)
  std::vector<double> cat_attract;  // q_k in [0,1), dense category order
  std::vector<double> ad_brightness;
  std::vector<int> user_group, ad_group;

  double click_prob(int user, int ad, const SyntheticConfig& cfg) const;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

// Circular distance on [0,1).
double circular_dist(double a, double b);

}  // namespace cscnn
