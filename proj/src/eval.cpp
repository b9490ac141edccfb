#include "cscnn/eval.hpp"

#include <numeric>
#include <unordered_set>

namespace cscnn {

AucResult compute_auc(const std::function<double(int user, int ad)>& score,
                      const InteractionLog& log, const EvalSplit& split, SplitSide side,
                      ItemFilter filter) {
  AucResult result;
  double acc = 0.0;
  for (int u = 0; u < log.n_users; ++u) {
    int pos = side == SplitSide::Test ? split.test_ad[u] : split.val_ad[u];
    if (pos < 0) continue;
    if (filter == ItemFilter::Cold && !split.cold[pos]) continue;

    std::unordered_set<int> held(split.train_pos[u].begin(), split.train_pos[u].end());
    held.insert(split.val_ad[u]);
    held.insert(split.test_ad[u]);

    double pos_score = score(u, pos);
    long long wins = 0, candidates = 0;
    for (int j = 0; j < log.n_ads; ++j) {
      if (held.count(j)) continue;
      ++candidates;
      if (pos_score > score(u, j)) ++wins;
    }
    if (candidates == 0) {
      ++result.skipped;
      continue;
    }
    acc += static_cast<double>(wins) / static_cast<double>(candidates);
    ++result.users;
  }
  result.auc = result.users ? acc / result.users : 0.0;
  return result;
}

double ModelCost::channel_total() const {
  return std::accumulate(channel_params.begin(), channel_params.end(), 0.0);
}

double ModelCost::spatial_total() const {
  return std::accumulate(spatial_conv_params.begin(), spatial_conv_params.end(), 0.0) +
         std::accumulate(spatial_prior_params.begin(), spatial_prior_params.end(), 0.0);
}

ModelCost count_cost(const CostSpec& spec) {
  ModelCost cost;
  cost.base_params = spec.base_params;
  cost.base_macs = spec.base_macs;
  if (spec.variant == AttentionVariant::None) return cost;

  bool cat = spec.variant == AttentionVariant::CSCNN;
  bool spatial = spec.variant == AttentionVariant::CBAMAll || cat;
  double r = spec.reduction;
  double k = static_cast<double>(spec.categories);
  double cp = spec.cprime;
  double prior_hw = static_cast<double>(spec.hprime) * spec.wprime;

  for (size_t i = 0; i < spec.channels.size(); ++i) {
    double c = spec.channels[i];
    double channel = cat ? c * c / r + (c + cp) * c / r + cp * k : 2.0 * c * c / r;
    cost.channel_params.push_back(channel);
    cost.spatial_conv_params.push_back(spatial ? 7.0 * 7.0 * (cat ? 3 : 2) : 0.0);
    cost.spatial_prior_params.push_back(cat ? prior_hw * k + prior_hw : 0.0);

    double h = 1.0, w = 1.0;
    if (i < spec.map_hw.size()) {
      h = spec.map_hw[i].first;
      w = spec.map_hw[i].second;
    }
    double branches = spec.variant == AttentionVariant::SE ? 1.0 : 2.0;
    double in_dim = c + (cat ? cp : 0.0);
    double mlp = in_dim * c / r + (c / r) * c;
    cost.attention_macs += branches * (mlp + h * w * c);  // gate MLP + spatial pool
    if (spatial) {
      double planes = cat ? 3.0 : 2.0;
      cost.attention_macs += h * w * (49.0 * planes + 2.0 * c);  // conv7 + channel pools
      if (cat) cost.attention_macs += h * w * 4.0;               // bilinear taps
    }
  }
  return cost;
}

CostSpec resnet18_cost_spec(AttentionVariant variant, long long categories, int cprime,
                            int hprime, int wprime, int reduction) {
  CostSpec spec;
  spec.variant = variant;
  spec.categories = categories;
  spec.cprime = cprime;
  spec.hprime = hprime;
  spec.wprime = wprime;
  spec.reduction = reduction;
  for (int stage = 0; stage < 4; ++stage) {
    int c = 64 << stage;
    int hw = 56 >> stage;
    for (int i = 0; i < 4; ++i) {
      spec.channels.push_back(c);
      spec.map_hw.push_back({hw, hw});
    }
  }
  // Published figure; the head configuration behind it is not reproducible
  // from the standard 11.7M ImageNet model.
  spec.base_params = 17.9961e6;

  // Multiply-accumulate count at 224x224: stem 7x7/2, four stages of two
  // basic blocks (stride-2 entry with 1x1 shortcut from stage 2 on), fc 1000.
  double macs = 112.0 * 112 * 64 * (7 * 7 * 3);
  for (int stage = 0; stage < 4; ++stage) {
    double c = 64 << stage;
    double hw = 56 >> stage;
    double n = hw * hw;
    if (stage == 0) {
      macs += 4.0 * n * c * (9.0 * c);
    } else {
      macs += n * c * (9.0 * c / 2) + n * c * (c / 2);  // stride-2 conv + shortcut
      macs += 3.0 * n * c * (9.0 * c);
    }
  }
  macs += 512.0 * 1000;
  spec.base_macs = macs;
  return spec;
}

}  // namespace cscnn
