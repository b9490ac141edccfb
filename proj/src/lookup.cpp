#include "cscnn/lookup.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cscnn/checkpoint.hpp"

namespace cscnn {

LookupTable::LookupTable(int dim, std::vector<uint64_t> ids, std::vector<float> values)
    : dim_(dim), ids_(std::move(ids)), values_(std::move(values)) {
  if (dim_ < 1) throw std::runtime_error("lookup: dimension must be positive");
  if (values_.size() != ids_.size() * static_cast<size_t>(dim_))
    throw std::runtime_error("lookup: value block does not match id count");
  for (size_t i = 1; i < ids_.size(); ++i)
    if (ids_[i] <= ids_[i - 1]) throw std::runtime_error("lookup: ids must be strictly ascending");
}

const float* LookupTable::find(uint64_t ad_id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), ad_id);
  if (it == ids_.end() || *it != ad_id) return nullptr;
  return values_.data() + static_cast<size_t>(it - ids_.begin()) * dim_;
}

LookupTable load_lookup(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("lookup: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSLU", 4) != 0)
    throw std::runtime_error("lookup: bad magic in " + path);
  uint16_t version, dim;
  uint32_t count;
  if (!io::get_u16(is, version) || version != 1)
    throw std::runtime_error("lookup: unsupported version");
  if (!io::get_u32(is, count) || !io::get_u16(is, dim))
    throw std::runtime_error("lookup: truncated header");
  std::vector<uint64_t> ids(count);
  std::vector<float> values(static_cast<size_t>(count) * dim);
  for (uint32_t i = 0; i < count; ++i) {
    if (!io::get_u64(is, ids[i])) throw std::runtime_error("lookup: truncated entry");
    for (int j = 0; j < dim; ++j)
      if (!io::get_f32(is, values[static_cast<size_t>(i) * dim + j]))
        throw std::runtime_error("lookup: truncated feature data");
  }
  return LookupTable(dim, std::move(ids), std::move(values));
}

void write_lookup(const LookupTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("lookup: cannot open " + path + " for writing");
  os.write("CSLU", 4);
  io::put_u16(os, 1);
  io::put_u32(os, static_cast<uint32_t>(table.size()));
  io::put_u16(os, static_cast<uint16_t>(table.dim()));
  for (size_t i = 0; i < table.size(); ++i) {
    uint64_t id = table.ids()[i];
    io::put_u64(os, id);
    const float* v = table.find(id);
    for (int j = 0; j < table.dim(); ++j) io::put_f32(os, v[j]);
  }
}

LookupTable export_lookup(const Backbone<float>& backbone, const InteractionLog& log,
                          const ImageStore& images, double coverage) {
  if (coverage <= 0.0 || coverage > 1.0)
    throw std::runtime_error("lookup: coverage must be in (0, 1]");

  std::vector<long long> freq(static_cast<size_t>(log.n_ads), 0);
  for (const auto& row : log.rows) ++freq[row.ad];

  std::vector<int> order(static_cast<size_t>(log.n_ads));
  for (int a = 0; a < log.n_ads; ++a) order[a] = a;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return log.ad_orig[a] < log.ad_orig[b];
  });
  size_t keep = static_cast<size_t>(
      std::llround(coverage * static_cast<double>(log.n_ads)));
  keep = std::min(keep, order.size());
  order.resize(keep);

  std::string missing;
  for (int a : order)
    if (!images.has(log.ad_orig[a])) missing += (missing.empty() ? "" : ", ") + std::to_string(log.ad_orig[a]);
  if (!missing.empty()) throw std::runtime_error("lookup: ads without images: " + missing);

  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return log.ad_orig[a] < log.ad_orig[b]; });

  int dim = backbone.config().visual_dim;
  std::vector<uint64_t> ids;
  std::vector<float> values;
  NoGradGuard guard;
  for (int a : order) {
    const auto& raw = images.image_for(log.ad_orig[a]);
    Tensor<float> image({images.height, images.width, 3}, std::vector<float>(raw.begin(), raw.end()));
    Tensor<float> xv = backbone.encode_image(image, log.ad_category[a]);
    ids.push_back(log.ad_orig[a]);
    values.insert(values.end(), xv.value().begin(), xv.value().end());
  }
  return LookupTable(dim, std::move(ids), std::move(values));
}

}  // namespace cscnn
