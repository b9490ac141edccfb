#pragma once

// Per-user AUC with full negative enumeration, and the analytic
// parameter/FLOP cost calculator for attention-instrumented backbones.

#include <functional>
#include <string>
#include <vector>

#include "cscnn/attention.hpp"
#include "cscnn/data.hpp"

namespace cscnn {

enum class ItemFilter { All, Cold };
enum class SplitSide { Validation, Test };

struct AucResult {
  double auc = 0.0;
  int users = 0;    // users contributing to the mean
  int skipped = 0;  // users with an empty candidate set
};

// AUC = (1/|U|) sum_u (1/|D_u|) sum I(score(u,i) > score(u,j)) with D_u the
// held-out positive against every ad outside P_u, V_u, T_u. Strict
// inequality: ties contribute zero. Cold filter keeps only users whose
// held-out item has fewer than 5 training actions.
AucResult compute_auc(const std::function<double(int user, int ad)>& score,
                      const InteractionLog& log, const EvalSplit& split, SplitSide side,
                      ItemFilter filter);

// ---- cost calculator ----

struct CostSpec {
  AttentionVariant variant = AttentionVariant::CSCNN;
  long long categories = 3310;
  int cprime = 20;
  int hprime = 6, wprime = 6;
  int reduction = 4;
  std::vector<int> channels;                    // per instrumented conv layer
  std::vector<std::pair<int, int>> map_hw;      // feature map extents, same order
  double base_params = 0.0;
  double base_macs = 0.0;
};

struct ModelCost {
  double base_params = 0.0;
  std::vector<double> channel_params;        // per instrumented layer
  std::vector<double> spatial_conv_params;   // 7x7 gate kernel weights
  std::vector<double> spatial_prior_params;  // H'W'|K| priors + H'W' resize grid
  double attention_macs = 0.0;
  double base_macs = 0.0;

  double channel_total() const;
  double spatial_total() const;
  double attention_params() const { return channel_total() + spatial_total(); }
  double total_params() const { return base_params + attention_params(); }
  double total_gflops() const { return (base_macs + attention_macs) / 1e9; }
};

// Weight-count conventions (biases excluded, matching the published
// arithmetic): channel gate 2C^2/r, or C^2/r + (C+C')C/r + C'|K| with
// category priors; spatial gate 7*7*planes, plus H'W'|K| + H'W' of priors.
ModelCost count_cost(const CostSpec& spec);

// ResNet18 at 224x224 with attention on all 16 stage convs. The base
// parameter figure is a pinned constant; the published table's total does not
// decompose, only the attention deltas do.
CostSpec resnet18_cost_spec(AttentionVariant variant, long long categories = 3310,
                            int cprime = 20, int hprime = 6, int wprime = 6, int reduction = 4);

}  // namespace cscnn
