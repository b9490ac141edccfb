#pragma once

// Training loop for the CTR models: point-wise or pair-wise objective, Adam,
// same-ad batching, per-epoch validation AUC, best-checkpoint selection.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "cscnn/backbone.hpp"
#include "cscnn/batching.hpp"
#include "cscnn/checkpoint.hpp"
#include "cscnn/data.hpp"
#include "cscnn/eval.hpp"
#include "cscnn/losses.hpp"
#include "cscnn/models.hpp"
#include "cscnn/optimizer.hpp"

namespace cscnn {

enum class LossMode { Pointwise, Pairwise };
enum class HeadKind { Mf, Dcn };

struct TrainConfig {
  LossMode loss = LossMode::Pointwise;
  HeadKind head = HeadKind::Mf;
  double lr = 0.01;
  double lambda = 1e-4;
  int ad_cap = 25;
  int batch_size = 64;
  int epochs = 30;
  uint64_t seed = 1;

  BackboneConfig backbone;
  int latent_dim = 8;
  bool use_visual = true;
  bool freeze_encoder = false;
  bool share_item_by_category = false;

  int dcn_embed_dim = 4;
  int dcn_deep0 = 32;
  std::vector<int> dcn_deep_rest = {16};
  int dcn_cross_depth = 3;
};

template <typename S>
class Trainer {
 public:
  struct EpochStats {
    int epoch;
    double loss;
    double val_auc;
  };

  Trainer(const InteractionLog& log, const ImageStore& images, const EvalSplit& split,
          TrainConfig cfg)
      : log_(log), split_(split), cfg_(cfg), rng_(cfg.seed) {
    cfg_.backbone.num_categories = std::max(1, log.n_categories);
    if (cfg_.use_visual) {
      cfg_.backbone.input_h = images.height;
      cfg_.backbone.input_w = images.width;
      backbone_ = Backbone<S>(cfg_.backbone, rng_);
      images_.reserve(static_cast<size_t>(log.n_ads));
      for (int a = 0; a < log.n_ads; ++a) {
        const auto& raw = images.image_for(log.ad_orig[a]);
        std::vector<S> pix(raw.begin(), raw.end());
        images_.push_back(
            Tensor<S>({images.height, images.width, 3}, std::move(pix)));
      }
    }

    if (cfg_.head == HeadKind::Mf) {
      mf_ = MfModel<S>(log.n_users, log.n_ads, std::max(1, log.n_categories), cfg_.latent_dim,
                       cfg_.backbone.visual_dim, rng_, cfg_.use_visual,
                       cfg_.share_item_by_category);
    } else {
      DcnConfig dcfg;
      dcfg.feature_vocabs = log.feature_vocab.empty() ? std::vector<int>{1} : log.feature_vocab;
      dcfg.embed_dim = cfg_.dcn_embed_dim;
      dcfg.visual_dim = cfg_.backbone.visual_dim;
      dcfg.deep0 = cfg_.dcn_deep0;
      dcfg.deep_rest = cfg_.dcn_deep_rest;
      dcfg.cross_depth = cfg_.dcn_cross_depth;
      dcn_ = DcnModel<S>(dcfg, rng_);
    }

    std::vector<Tensor<S>> trainable;
    for (auto& [name, t] : head_params()) trainable.push_back(t);
    if (cfg_.use_visual && !cfg_.freeze_encoder)
      for (auto& [name, t] : backbone_.named_params()) trainable.push_back(t);
    opt_ = Adam<S>(std::move(trainable), cfg_.lr, cfg_.lambda);

    train_interacted_.assign(static_cast<size_t>(log.n_users), {});
    for (int r : split.train_rows) train_interacted_[log.rows[r].user].insert(log.rows[r].ad);
  }

  // Full training run; appends "epoch<TAB>loss<TAB>val_auc" per epoch to
  // `metrics` when given, then restores the checkpoint with the best
  // validation AUC.
  void run(std::ostream* metrics = nullptr) {
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      double loss = cfg_.loss == LossMode::Pointwise ? pointwise_epoch(epoch)
                                                     : pairwise_epoch(epoch);
      refresh_visual_cache();
      double val = compute_auc([this](int u, int a) { return score(u, a); }, log_, split_,
                               SplitSide::Validation, ItemFilter::All)
                       .auc;
      history_.push_back({epoch, loss, val});
      if (metrics) *metrics << epoch << '\t' << loss << '\t' << val << '\n';
      if (best_.empty() || val > best_val_auc_) {
        best_val_auc_ = val;
        best_epoch_ = epoch;
        best_ = snapshot_params(named_params());
      }
    }
    if (!best_.empty()) {
      restore_params(best_, named_params());
      refresh_visual_cache();
    }
  }

  // Ranking score for an arbitrary (user, ad) pair, monotone in predicted
  // CTR. Uses the cached visual features; call refresh_visual_cache after
  // mutating parameters outside run().
  double score(int user, int ad) const {
    if (cfg_.head == HeadKind::Mf) {
      int item = cfg_.share_item_by_category ? log_.ad_category[ad] : ad;
      double s = mf_.alpha.at(0) + mf_.beta_u.at(user) + mf_.beta_a.at(item);
      int d = mf_.latent_dim;
      const S* gu = mf_.gamma_u.value().data() + static_cast<size_t>(user) * d;
      const S* ga = mf_.gamma_a.value().data() + static_cast<size_t>(item) * d;
      for (int i = 0; i < d; ++i) s += static_cast<double>(gu[i]) * ga[i];
      if (cfg_.use_visual) {
        int dv = mf_.visual_dim;
        const S* tu = mf_.theta_u.value().data() + static_cast<size_t>(user) * dv;
        const auto& xv = xv_cache_[ad];
        for (int i = 0; i < dv; ++i) s += static_cast<double>(tu[i]) * xv[i];
      }
      return s;
    }
    NoGradGuard guard;
    Tensor<S> xv = visual_tensor(ad);
    return static_cast<double>(raw_score(user, ad, xv, pair_feats(user, ad)).at(0));
  }

  // Encode every ad once (no gradients) into the serving-style feature cache.
  void refresh_visual_cache() {
    if (!cfg_.use_visual) return;
    NoGradGuard guard;
    xv_cache_.assign(static_cast<size_t>(log_.n_ads), {});
    for (int a = 0; a < log_.n_ads; ++a) {
      Tensor<S> xv = backbone_.encode_image(images_[a], log_.ad_category[a]);
      xv_cache_[a] = xv.value();
    }
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
    auto out = head_params();
    if (cfg_.use_visual)
      for (auto& p : backbone_.named_params()) out.push_back(p);
    return out;
  }

  const std::vector<EpochStats>& history() const { return history_; }
  double best_val_auc() const { return best_val_auc_; }
  int best_epoch() const { return best_epoch_; }
  const Backbone<S>& backbone() const { return backbone_; }
  const MfModel<S>& mf() const { return mf_; }
  const DcnModel<S>& dcn() const { return dcn_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<S>& visual_feature(int ad) const { return xv_cache_[ad]; }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> head_params() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    if (cfg_.head == HeadKind::Mf) mf_.collect_params(out);
    else dcn_.collect_params(out);
    return out;
  }

  Tensor<S> visual_tensor(int ad) const {
    Shape shape{cfg_.backbone.visual_dim};
    if (!cfg_.use_visual || xv_cache_.empty() || xv_cache_[ad].empty())
      return Tensor<S>::zeros(shape);
    return Tensor<S>(shape, xv_cache_[ad]);
  }

  // Encode each unique ad of a batch once; the returned tensors share nodes,
  // so gradients from every impression of an ad accumulate into one pass.
  std::map<int, Tensor<S>> encode_batch(const std::vector<int>& ads) {
    std::map<int, Tensor<S>> xv;
    if (!cfg_.use_visual) return xv;
    std::vector<int> sorted = ads;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (int a : sorted) xv.emplace(a, backbone_.encode_image(images_[a], log_.ad_category[a]));
    return xv;
  }

  Tensor<S> raw_score(int user, int ad, const Tensor<S>& xv,
                      const std::vector<std::pair<int, int>>& feats) const {
    if (cfg_.head == HeadKind::Mf)
      return mf_.score(user, ad, log_.ad_category[ad], xv);
    std::vector<std::vector<int>> lists(dcn_.cfg.feature_vocabs.size());
    for (auto [f, v] : feats)
      if (static_cast<size_t>(f) < lists.size()) lists[static_cast<size_t>(f)].push_back(v);
    for (auto& l : lists)
      if (l.empty()) l.push_back(0);
    return dcn_.forward_raw(xv, dcn_.embedding.embed(lists));
  }

  double step(const Tensor<S>& loss, int epoch, size_t batch) {
    double value = static_cast<double>(loss.at(0));
    if (!std::isfinite(value))
      throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
    opt_.zero_grad();
    backward(loss);
    opt_.step();
    return value;
  }

  double pointwise_epoch(int epoch) {
    auto batches = build_batches(
        split_.train_rows, [this](int r) { return log_.rows[r].ad; }, cfg_.ad_cap,
        cfg_.batch_size, rng_());
    double total = 0.0;
    long long n = 0;
    for (size_t b = 0; b < batches.size(); ++b) {
      auto xv = encode_batch(batches[b].unique_ads);
      std::vector<Tensor<S>> preds;
      std::vector<int> labels;
      Tensor<S> zero = Tensor<S>::zeros({cfg_.backbone.visual_dim});
      for (int r : batches[b].items) {
        const auto& row = log_.rows[r];
        const Tensor<S>& x = cfg_.use_visual ? xv.at(row.ad) : zero;
        preds.push_back(sigmoid(raw_score(row.user, row.ad, x, row.feats)));
        labels.push_back(row.label);
      }
      double value = step(pointwise_loss(concat(preds), labels), epoch, b);
      total += value * static_cast<double>(batches[b].items.size());
      n += static_cast<long long>(batches[b].items.size());
    }
    return n ? total / static_cast<double>(n) : 0.0;
  }

  double pairwise_epoch(int epoch) {
    struct Triplet {
      int user, pos, neg;
    };
    std::vector<Triplet> triplets;
    for (int u = 0; u < log_.n_users; ++u) {
      const auto& seen = train_interacted_[u];
      if (static_cast<int>(seen.size()) >= log_.n_ads) continue;
      for (int pos : split_.train_pos[u]) {
        int neg;
        do {
          neg = static_cast<int>(rng_() % static_cast<uint64_t>(log_.n_ads));
        } while (seen.count(neg));
        triplets.push_back({u, pos, neg});
      }
    }
    std::vector<int> ids(triplets.size());
    std::iota(ids.begin(), ids.end(), 0);
    auto batches = build_batches(
        ids, [&](int i) { return triplets[static_cast<size_t>(i)].pos; }, cfg_.ad_cap,
        cfg_.batch_size, rng_());

    double total = 0.0;
    long long n = 0;
    for (size_t b = 0; b < batches.size(); ++b) {
      std::vector<int> ads = batches[b].unique_ads;
      for (int i : batches[b].items) ads.push_back(triplets[static_cast<size_t>(i)].neg);
      auto xv = encode_batch(ads);
      std::vector<Tensor<S>> pos, neg;
      Tensor<S> zero = Tensor<S>::zeros({cfg_.backbone.visual_dim});
      for (int i : batches[b].items) {
        const auto& t = triplets[static_cast<size_t>(i)];
        const Tensor<S>& xp = cfg_.use_visual ? xv.at(t.pos) : zero;
        const Tensor<S>& xn = cfg_.use_visual ? xv.at(t.neg) : zero;
        pos.push_back(raw_score(t.user, t.pos, xp, pair_feats(t.user, t.pos)));
        neg.push_back(raw_score(t.user, t.neg, xn, pair_feats(t.user, t.neg)));
      }
      double value =
          step(pairwise_loss(concat(pos), concat(neg), static_cast<S>(0)), epoch, b);
      total += value;
      n += static_cast<long long>(batches[b].items.size());
    }
    return n ? total / static_cast<double>(n) : 0.0;
  }

  std::vector<std::pair<int, int>> pair_feats(int user, int ad) const {
    std::vector<std::pair<int, int>> out;
    auto lists = log_.feats_for(user, ad);
    for (size_t f = 0; f < lists.size(); ++f)
      for (int v : lists[f]) out.emplace_back(static_cast<int>(f), v);
    return out;
  }

  const InteractionLog& log_;
  const EvalSplit& split_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;

  Backbone<S> backbone_;
  MfModel<S> mf_;
  DcnModel<S> dcn_;
  Adam<S> opt_;
  std::vector<Tensor<S>> images_;
  std::vector<std::unordered_set<int>> train_interacted_;
  std::vector<std::vector<S>> xv_cache_;

  std::vector<EpochStats> history_;
  std::vector<NamedArray> best_;
  double best_val_auc_ = -1.0;
  int best_epoch_ = -1;
};

}  // namespace cscnn
