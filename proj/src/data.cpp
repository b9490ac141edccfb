#include "cscnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "cscnn/checkpoint.hpp"  // io:: little-endian helpers

namespace cscnn {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<std::vector<int>> InteractionLog::feats_for(int user, int ad) const {
  std::vector<std::vector<int>> out(static_cast<size_t>(n_features));
  for (int f = 0; f < n_features; ++f) {
    if (feature_is_user_side[f] && !user_feats[user][f].empty())
      out[f] = user_feats[user][f];
    else if (!ad_feats[ad][f].empty())
      out[f] = ad_feats[ad][f];
    else if (!user_feats[user][f].empty())
      out[f] = user_feats[user][f];
    else
      out[f] = {0};
  }
  return out;
}

InteractionLog build_log(const std::vector<Interaction>& raw_rows) {
  InteractionLog log;
  std::unordered_map<uint64_t, int> user_map, ad_map, cat_map;
  auto remap = [](std::unordered_map<uint64_t, int>& m, std::vector<uint64_t>& rev, uint64_t raw) {
    auto it = m.find(raw);
    if (it != m.end()) return it->second;
    int id = static_cast<int>(rev.size());
    m.emplace(raw, id);
    rev.push_back(raw);
    return id;
  };

  std::set<std::tuple<int, int, int, std::vector<std::pair<int, int>>>> seen;
  int line = 1;
  for (const auto& raw : raw_rows) {
    ++line;
    if (raw.label != 0 && raw.label != 1)
      throw std::runtime_error("interactions line " + std::to_string(line) +
                               ": label must be 0 or 1");
    Interaction row;
    row.user = remap(user_map, log.user_orig, static_cast<uint64_t>(raw.user));
    row.ad = remap(ad_map, log.ad_orig, static_cast<uint64_t>(raw.ad));
    row.category = remap(cat_map, log.category_orig, static_cast<uint64_t>(raw.category));
    row.label = raw.label;
    row.feats = raw.feats;
    std::sort(row.feats.begin(), row.feats.end());

    if (row.ad < static_cast<int>(log.ad_category.size())) {
      if (log.ad_category[row.ad] != row.category)
        throw std::runtime_error("interactions line " + std::to_string(line) + ": ad " +
                                 std::to_string(raw.ad) + " category changed from " +
                                 std::to_string(log.category_orig[log.ad_category[row.ad]]) +
                                 " to " + std::to_string(raw.category));
    } else {
      log.ad_category.push_back(row.category);
    }
    auto key = std::make_tuple(row.user, row.ad, row.label, row.feats);
    if (!seen.insert(key).second)
      throw std::runtime_error("interactions line " + std::to_string(line) + ": duplicate row");
    for (auto [f, v] : row.feats) {
      if (f < 0 || v < 0)
        throw std::runtime_error("interactions line " + std::to_string(line) + ": bad feature pair");
      if (f >= log.n_features) {
        log.n_features = f + 1;
        log.feature_vocab.resize(static_cast<size_t>(log.n_features), 0);
      }
      log.feature_vocab[f] = std::max(log.feature_vocab[f], v + 1);
    }
    log.rows.push_back(std::move(row));
  }
  log.n_users = static_cast<int>(log.user_orig.size());
  log.n_ads = static_cast<int>(log.ad_orig.size());
  log.n_categories = static_cast<int>(log.category_orig.size());

  // Side tables: a feature is user-side when its value set is consistent per
  // user but not per ad.
  auto nf = static_cast<size_t>(log.n_features);
  log.ad_feats.assign(static_cast<size_t>(log.n_ads), std::vector<std::vector<int>>(nf));
  log.user_feats.assign(static_cast<size_t>(log.n_users), std::vector<std::vector<int>>(nf));
  std::vector<char> ad_consistent(nf, 1), user_consistent(nf, 1);
  for (const auto& row : log.rows) {
    std::vector<std::vector<int>> per_feature(nf);
    for (auto [f, v] : row.feats) per_feature[static_cast<size_t>(f)].push_back(v);
    for (size_t f = 0; f < nf; ++f) {
      auto& av = log.ad_feats[row.ad][f];
      if (av.empty()) av = per_feature[f];
      else if (av != per_feature[f]) ad_consistent[f] = 0;
      auto& uv = log.user_feats[row.user][f];
      if (uv.empty()) uv = per_feature[f];
      else if (uv != per_feature[f]) user_consistent[f] = 0;
    }
  }
  log.feature_is_user_side.assign(nf, 0);
  for (size_t f = 0; f < nf; ++f)
    log.feature_is_user_side[f] = user_consistent[f] && !ad_consistent[f];
  return log;
}

InteractionLog load_interactions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("interactions: cannot open " + path);
  std::string header;
  if (!std::getline(is, header) || split_tabs(header) !=
          std::vector<std::string>{"user", "ad", "category", "label", "feats"})
    throw std::runtime_error("interactions: bad header in " + path);

  std::vector<Interaction> raw;
  std::string line;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 5)
      throw std::runtime_error("interactions line " + std::to_string(lineno) + ": expected 5 columns, got " +
                               std::to_string(cols.size()));
    Interaction row;
    try {
      row.user = std::stoi(cols[0]);
      row.ad = std::stoi(cols[1]);
      row.category = std::stoi(cols[2]);
      row.label = std::stoi(cols[3]);
    } catch (const std::exception&) {
      throw std::runtime_error("interactions line " + std::to_string(lineno) + ": malformed id field");
    }
    if (!cols[4].empty()) {
      std::stringstream fs(cols[4]);
      std::string item;
      while (std::getline(fs, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
          throw std::runtime_error("interactions line " + std::to_string(lineno) +
                                   ": malformed feature pair '" + item + "'");
        try {
          row.feats.emplace_back(std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
        } catch (const std::exception&) {
          throw std::runtime_error("interactions line " + std::to_string(lineno) +
                                   ": malformed feature pair '" + item + "'");
        }
      }
    }
    raw.push_back(std::move(row));
  }
  try {
    return build_log(raw);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + " (file " + path + ")");
  }
}

void write_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("interactions: cannot open " + path + " for writing");
  os << "user\tad\tcategory\tlabel\tfeats\n";
  for (const auto& row : log.rows) {
    os << log.user_orig[row.user] << '\t' << log.ad_orig[row.ad] << '\t'
       << log.category_orig[row.category] << '\t' << row.label << '\t';
    for (size_t i = 0; i < row.feats.size(); ++i)
      os << (i ? "," : "") << row.feats[i].first << ':' << row.feats[i].second;
    os << '\n';
  }
}

const std::vector<float>& ImageStore::image_for(uint64_t raw_ad_id) const {
  auto it = images.find(raw_ad_id);
  if (it == images.end())
    throw std::runtime_error("image store: no image for ad " + std::to_string(raw_ad_id));
  return it->second;
}

ImageStore load_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("images: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSIM", 4) != 0)
    throw std::runtime_error("images: bad magic in " + path);
  uint16_t version, h, w;
  uint32_t count;
  if (!io::get_u16(is, version) || version != 1)
    throw std::runtime_error("images: unsupported version");
  if (!io::get_u32(is, count) || !io::get_u16(is, h) || !io::get_u16(is, w))
    throw std::runtime_error("images: truncated header");
  ImageStore store;
  store.height = h;
  store.width = w;
  size_t n = static_cast<size_t>(h) * w * 3;
  for (uint32_t i = 0; i < count; ++i) {
    uint64_t id;
    if (!io::get_u64(is, id)) throw std::runtime_error("images: truncated entry");
    std::vector<float> img(n);
    for (auto& v : img)
      if (!io::get_f32(is, v)) throw std::runtime_error("images: truncated pixels");
    store.images.emplace(id, std::move(img));
  }
  return store;
}

void write_images(const ImageStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("images: cannot open " + path + " for writing");
  os.write("CSIM", 4);
  io::put_u16(os, 1);
  io::put_u32(os, static_cast<uint32_t>(store.images.size()));
  io::put_u16(os, static_cast<uint16_t>(store.height));
  io::put_u16(os, static_cast<uint16_t>(store.width));
  for (const auto& [id, img] : store.images) {
    io::put_u64(os, id);
    for (float v : img) io::put_f32(os, v);
  }
}

// ---- split ----

EvalSplit split_log(const InteractionLog& log, uint64_t seed) {
  EvalSplit split;
  split.val_ad.assign(static_cast<size_t>(log.n_users), -1);
  split.test_ad.assign(static_cast<size_t>(log.n_users), -1);
  split.train_pos.assign(static_cast<size_t>(log.n_users), {});
  split.cold.assign(static_cast<size_t>(log.n_ads), 0);

  std::vector<std::vector<int>> pos_rows(static_cast<size_t>(log.n_users));
  for (size_t i = 0; i < log.rows.size(); ++i)
    if (log.rows[i].label == 1) pos_rows[log.rows[i].user].push_back(static_cast<int>(i));

  std::mt19937_64 rng(seed);
  std::vector<char> held_out(log.rows.size(), 0);
  for (int u = 0; u < log.n_users; ++u) {
    auto& rows = pos_rows[u];
    if (rows.size() < 3) {
      if (!rows.empty()) ++split.excluded_users;
      continue;
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    split.val_ad[u] = log.rows[rows[0]].ad;
    split.test_ad[u] = log.rows[rows[1]].ad;
    held_out[rows[0]] = held_out[rows[1]] = 1;
    ++split.included_users;
  }

  std::vector<int> train_actions(static_cast<size_t>(log.n_ads), 0);
  for (size_t i = 0; i < log.rows.size(); ++i) {
    if (held_out[i]) continue;
    split.train_rows.push_back(static_cast<int>(i));
    const auto& row = log.rows[i];
    if (row.label == 1) {
      split.train_pos[row.user].push_back(row.ad);
      ++train_actions[row.ad];
    }
  }
  for (int a = 0; a < log.n_ads; ++a) split.cold[a] = train_actions[a] < 5;
  return split;
}

// ---- synthetic generator ----

double circular_dist(double a, double b) {
  double d = std::fabs(a - b);
  return std::min(d, 1.0 - d);
}

namespace {

// 3-phase hue encoding of a pattern value in [0,1): linearly decodable back
// to (cos, sin) of the pattern angle.
void hue(double x, double out[3]) {
  constexpr double kTau = 6.283185307179586;
  for (int c = 0; c < 3; ++c) out[c] = 0.5 + 0.5 * std::cos(kTau * x - kTau * c / 3.0);
}

}  // namespace

double SyntheticData::click_prob(int user, int ad, const SyntheticConfig& cfg) const {
  if (cfg.groups > 1 && user_group[user] != ad_group[ad]) return cfg.off_group_click;
  double za = circular_dist(ad_pattern[ad], cat_attract[log.ad_category[ad]]) / cfg.attract_width;
  double zt = circular_dist(ad_pattern[ad], user_taste[user]) / cfg.taste_width;
  return cfg.click_floor + cfg.click_peak * std::exp(-za * za - zt * zt);
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_categories < 2) throw std::runtime_error("generate_synthetic: need at least 2 categories");
  if (cfg.img_size % 3 != 0) throw std::runtime_error("generate_synthetic: img_size must be divisible by 3");
  SyntheticData data;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  data.user_taste.resize(static_cast<size_t>(cfg.n_users));
  data.user_group.resize(static_cast<size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    data.user_taste[u] = unit(rng);
    data.user_group[u] = cfg.groups > 1 ? u % cfg.groups : 0;
  }

  // Hidden per-category attractive pattern: clicks peak when an ad's pattern
  // sits near its own category's q_k. Categories that share a spatial region
  // (k and k+9 on the 3x3 grid) carry different q_k, so the click signal is
  // ambiguous without knowing the category.
  std::vector<double> cat_attract(static_cast<size_t>(cfg.n_categories));
  for (auto& q : cat_attract) q = unit(rng);

  data.ad_pattern.resize(static_cast<size_t>(cfg.n_ads));
  data.ad_brightness.resize(static_cast<size_t>(cfg.n_ads));
  data.ad_group.resize(static_cast<size_t>(cfg.n_ads));
  std::vector<int> ad_cat(static_cast<size_t>(cfg.n_ads));
  int cell = cfg.img_size / 3;
  data.images.height = cfg.img_size;
  data.images.width = cfg.img_size;

  std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
  for (int a = 0; a < cfg.n_ads; ++a) {
    ad_cat[a] = static_cast<int>(rng() % static_cast<uint64_t>(cfg.n_categories));
    data.ad_pattern[a] = unit(rng);
    data.ad_brightness[a] =
        cfg.own_brightness_lo + (cfg.own_brightness_hi - cfg.own_brightness_lo) * unit(rng);
    data.ad_group[a] = cfg.groups > 1 ? a % cfg.groups : 0;

    std::vector<float> img(static_cast<size_t>(cfg.img_size) * cfg.img_size * 3);
    for (auto& v : img) v = static_cast<float>(noise(rng));
    // One paint per grid cell: the ad's own category region (k mod 9) carries
    // the pattern that drives clicks, the other eight are distractors.
    for (int region = 0; region < 9; ++region) {
      int ry = region / 3, rx = region % 3;
      double pattern, bright;
      if (region == ad_cat[a] % 9) {
        pattern = data.ad_pattern[a];
        bright = data.ad_brightness[a];
      } else {
        pattern = unit(rng);
        bright = cfg.distractor_brightness_lo +
                 (cfg.distractor_brightness_hi - cfg.distractor_brightness_lo) * unit(rng);
      }
      double h3[3];
      hue(pattern, h3);
      for (int y = ry * cell; y < (ry + 1) * cell; ++y)
        for (int x = rx * cell; x < (rx + 1) * cell; ++x)
          for (int c = 0; c < 3; ++c)
            img[(static_cast<size_t>(y) * cfg.img_size + x) * 3 + c] +=
                static_cast<float>(bright * h3[c]);
    }
    data.images.images.emplace(static_cast<uint64_t>(a), std::move(img));
  }

  // Impressions: a mix of random and taste-targeted exposures, one row per
  // distinct (user, ad).
  std::vector<Interaction> raw;
  std::unordered_set<uint64_t> shown;
  for (int u = 0; u < cfg.n_users; ++u) {
    std::vector<int> group_ads;
    if (cfg.groups > 1)
      for (int a = u % cfg.groups; a < cfg.n_ads; a += cfg.groups) group_ads.push_back(a);
    for (int i = 0; i < cfg.impressions_per_user; ++i) {
      int ad = -1;
      for (int attempt = 0; attempt < 100 && ad < 0; ++attempt) {
        int candidate;
        if (unit(rng) < cfg.targeted_frac) {
          // Show the most clickable of a handful of candidates.
          double best = std::numeric_limits<double>::infinity();
          candidate = 0;
          for (int c = 0; c < cfg.targeted_candidates; ++c) {
            int a = cfg.groups > 1
                        ? group_ads[rng() % group_ads.size()]
                        : static_cast<int>(rng() % static_cast<uint64_t>(cfg.n_ads));
            double za = circular_dist(data.ad_pattern[a], cat_attract[ad_cat[a]]) / cfg.attract_width;
            double zt = circular_dist(data.ad_pattern[a], data.user_taste[u]) / cfg.taste_width;
            double cost = za * za + zt * zt;
            if (cost < best) {
              best = cost;
              candidate = a;
            }
          }
        } else {
          candidate = static_cast<int>(rng() % static_cast<uint64_t>(cfg.n_ads));
        }
        uint64_t key = static_cast<uint64_t>(u) * cfg.n_ads + candidate;
        if (shown.insert(key).second) ad = candidate;
      }
      if (ad < 0) continue;

      Interaction row;
      row.user = u;
      row.ad = ad;
      row.category = ad_cat[ad];
      double p;
      if (cfg.groups > 1 && data.user_group[u] != data.ad_group[ad]) {
        p = cfg.off_group_click;
      } else {
        double za = circular_dist(data.ad_pattern[ad], cat_attract[ad_cat[ad]]) / cfg.attract_width;
        double zt = circular_dist(data.ad_pattern[ad], data.user_taste[u]) / cfg.taste_width;
        p = cfg.click_floor + cfg.click_peak * std::exp(-za * za - zt * zt);
      }
      row.label = unit(rng) < p ? 1 : 0;
      row.feats = {
          {0, u % 16},
          {1, ad_cat[ad]},
          {2, static_cast<int>(data.ad_pattern[ad] * 8) % 8},
          {3, static_cast<int>((data.ad_brightness[ad] - cfg.own_brightness_lo) /
                               std::max(1e-9, cfg.own_brightness_hi - cfg.own_brightness_lo) * 7.999)},
          {4, cfg.groups > 1 ? data.ad_group[ad] % 8 : 0},
          {5, static_cast<int>((static_cast<uint64_t>(ad) * 2654435761u) % 8)},
      };
      raw.push_back(std::move(row));
    }
  }
  data.log = build_log(raw);
  // Dense remapping is identity here (users and ads appear in order only if
  // every id occurs; rebuild hidden tables in dense order to be safe).
  {
    std::vector<double> taste(data.log.n_users), pattern(data.log.n_ads), bright(data.log.n_ads);
    std::vector<int> ugrp(data.log.n_users), agrp(data.log.n_ads);
    for (int u = 0; u < data.log.n_users; ++u) {
      taste[u] = data.user_taste[data.log.user_orig[u]];
      ugrp[u] = data.user_group[data.log.user_orig[u]];
    }
    for (int a = 0; a < data.log.n_ads; ++a) {
      pattern[a] = data.ad_pattern[data.log.ad_orig[a]];
      bright[a] = data.ad_brightness[data.log.ad_orig[a]];
      agrp[a] = data.ad_group[data.log.ad_orig[a]];
    }
    data.user_taste = std::move(taste);
    data.ad_pattern = std::move(pattern);
    data.ad_brightness = std::move(bright);
    data.user_group = std::move(ugrp);
    data.ad_group = std::move(agrp);
    data.cat_attract.resize(static_cast<size_t>(data.log.n_categories));
    for (int c = 0; c < data.log.n_categories; ++c)
      data.cat_attract[c] = cat_attract[data.log.category_orig[c]];
  }
  return data;
}

}  // namespace cscnn
