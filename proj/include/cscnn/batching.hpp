#pragma once

// Same-ad batch construction: items sharing an ad are grouped so the image
// encoder runs once per unique ad per batch, capped so no ad dominates.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace cscnn {

struct Batch {
  std::vector<int> items;       // caller-provided item indices
  std::vector<int> unique_ads;  // distinct ads in this batch, each once
};

// Groups `items` by ad, splits each group into chunks of at most `cap`, then
// packs shuffled chunks into batches of at most `batch_size` items with no ad
// appearing in two chunks of the same batch.
inline std::vector<Batch> build_batches(const std::vector<int>& items,
                                        const std::function<int(int)>& ad_of, int cap,
                                        int batch_size, uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("build_batches: cap must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("build_batches: batch size must be >= 1");

  std::vector<std::pair<int, std::vector<int>>> groups;  // (ad, items)
  {
    std::vector<int> sorted = items;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](int a, int b) { return ad_of(a) < ad_of(b); });
    for (int item : sorted) {
      int ad = ad_of(item);
      if (groups.empty() || groups.back().first != ad) groups.push_back({ad, {}});
      groups.back().second.push_back(item);
    }
  }

  struct Chunk {
    int ad;
    std::vector<int> items;
  };
  std::vector<Chunk> chunks;
  std::mt19937_64 rng(seed);
  for (auto& [ad, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (size_t i = 0; i < members.size(); i += static_cast<size_t>(cap)) {
      Chunk c{ad, {}};
      for (size_t j = i; j < std::min(members.size(), i + static_cast<size_t>(cap)); ++j)
        c.items.push_back(members[j]);
      chunks.push_back(std::move(c));
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);

  std::vector<Batch> batches;
  std::vector<std::vector<char>> has_ad;  // parallel to batches, indexed lookup done linearly
  for (auto& chunk : chunks) {
    size_t target = batches.size();
    for (size_t b = 0; b < batches.size(); ++b) {
      if (batches[b].items.size() + chunk.items.size() > static_cast<size_t>(batch_size)) continue;
      bool clash = false;
      for (int ad : batches[b].unique_ads)
        if (ad == chunk.ad) {
          clash = true;
          break;
        }
      if (!clash) {
        target = b;
        break;
      }
    }
    if (target == batches.size()) batches.push_back({});
    auto& batch = batches[target];
    batch.items.insert(batch.items.end(), chunk.items.begin(), chunk.items.end());
    batch.unique_ads.push_back(chunk.ad);
  }
  return batches;
}

}  // namespace cscnn
