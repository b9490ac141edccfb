#pragma once

// Binary ad-id -> visual-feature lookup table, the offline/online boundary.
// File layout: magic "CSLU", version u16, count u32, dim u16, then entries of
// (ad id u64, dim little-endian f32) with ids strictly ascending.

#include <cstdint>
#include <string>
#include <vector>

#include "cscnn/backbone.hpp"
#include "cscnn/data.hpp"

namespace cscnn {

class LookupTable {
 public:
  LookupTable() = default;
  LookupTable(int dim, std::vector<uint64_t> ids, std::vector<float> values);

  int dim() const { return dim_; }
  size_t size() const { return ids_.size(); }
  const std::vector<uint64_t>& ids() const { return ids_; }

  // Pointer to dim() floats, or nullptr when the ad is not covered.
  const float* find(uint64_t ad_id) const;

 private:
  int dim_ = 0;
  std::vector<uint64_t> ids_;     // strictly ascending
  std::vector<float> values_;     // ids.size() * dim
};

LookupTable load_lookup(const std::string& path);
void write_lookup(const LookupTable& table, const std::string& path);

// Encodes each retained ad once and keeps the top `coverage` fraction by
// training frequency (ties broken toward the smaller ad id).
LookupTable export_lookup(const Backbone<float>& backbone, const InteractionLog& log,
                          const ImageStore& images, double coverage);

}  // namespace cscnn
