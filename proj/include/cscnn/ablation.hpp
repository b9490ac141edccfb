#pragma once

// Attention-variant ablation: train each variant over several seeds and
// report mean/std test AUC on the all-item and cold-item splits.

#include <cmath>
#include <string>
#include <vector>

#include "cscnn/trainer.hpp"

namespace cscnn {

struct AblationCell {
  AttentionVariant variant;
  std::string split;  // "all" or "cold"
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> values;  // per seed
};

inline std::vector<AblationCell> run_ablation(const InteractionLog& log, const ImageStore& images,
                                              const EvalSplit& split,
                                              const std::vector<AttentionVariant>& variants,
                                              int n_seeds, const TrainConfig& base,
                                              std::ostream* progress = nullptr) {
  if (n_seeds < 1) throw std::invalid_argument("run_ablation: need at least one seed");
  std::vector<AblationCell> table;
  for (AttentionVariant variant : variants) {
    AblationCell all{variant, "all"}, cold{variant, "cold"};
    for (int s = 0; s < n_seeds; ++s) {
      TrainConfig cfg = base;
      cfg.seed = base.seed + static_cast<uint64_t>(s);
      cfg.backbone.variant = variant;
      Trainer<float> trainer(log, images, split, cfg);
      trainer.run();
      auto score = [&trainer](int u, int a) { return trainer.score(u, a); };
      all.values.push_back(
          compute_auc(score, log, split, SplitSide::Test, ItemFilter::All).auc);
      cold.values.push_back(
          compute_auc(score, log, split, SplitSide::Test, ItemFilter::Cold).auc);
      if (progress)
        *progress << "ablation " << variant_name(variant) << " seed " << cfg.seed << ": all "
                  << all.values.back() << ", cold " << cold.values.back() << "\n";
    }
    for (AblationCell* cell : {&all, &cold}) {
      double sum = 0.0;
      for (double v : cell->values) sum += v;
      cell->mean = sum / cell->values.size();
      double sq = 0.0;
      for (double v : cell->values) sq += (v - cell->mean) * (v - cell->mean);
      cell->stddev = std::sqrt(sq / cell->values.size());
    }
    table.push_back(std::move(all));
    table.push_back(std::move(cold));
  }
  return table;
}

}  // namespace cscnn
