#pragma once

// Category-conditioned channel and spatial attention, plus the self-attention
// baselines (SE, CBAM-Channel, CBAM-All) it is compared against.
//
// Channel gate:  M_c = sigmoid(MLP[avgpool(F), A_c] + MLP[maxpool(F), A_c])
//                with one shared MLP, branch sum before the sigmoid.
// Spatial gate:  M_s = sigmoid(Conv7x7[chan-maxpool(F'), chan-avgpool(F'), A_s])
// Refinement:    F' = M_c (.) F, then F'' = M_s (.) F' (channel stage first).

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cscnn/tensor.hpp"

namespace cscnn {

enum class AttentionVariant { None, SE, CBAMChannel, CBAMAll, CSCNN };

inline const char* variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::None: return "none";
    case AttentionVariant::SE: return "se";
    case AttentionVariant::CBAMChannel: return "cbam-channel";
    case AttentionVariant::CBAMAll: return "cbam-all";
    case AttentionVariant::CSCNN: return "cscnn";
  }
  return "?";
}

inline AttentionVariant variant_from_name(const std::string& s) {
  if (s == "none") return AttentionVariant::None;
  if (s == "se") return AttentionVariant::SE;
  if (s == "cbam-channel") return AttentionVariant::CBAMChannel;
  if (s == "cbam-all") return AttentionVariant::CBAMAll;
  if (s == "cscnn") return AttentionVariant::CSCNN;
  throw std::runtime_error("unknown attention variant: " + s);
}

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct LookupError : std::runtime_error {
  explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename S>
struct ChannelAttentionMlp {
  Tensor<S> w1, b1;  // (C/r, C or C+C')
  Tensor<S> w2, b2;  // (C, C/r)
};

template <typename S>
struct SpatialAttentionConv {
  Tensor<S> kernel;  // 7x7 x (2 or 3) x 1
  Tensor<S> bias;    // (1)
};

// Shared-MLP channel gate. `prior` is the per-category channel prior A_c
// (1x1xC'); absent for the self-attention baselines. SE uses the average
// branch only.
template <typename S>
Tensor<S> channel_attention(const Tensor<S>& f, const std::optional<Tensor<S>>& prior,
                            const ChannelAttentionMlp<S>& mlp, bool include_max_branch) {
  auto branch = [&](PoolMode mode) {
    Tensor<S> pooled = reshape(spatial_pool(f, mode), {f.shape()[2]});
    Tensor<S> in = pooled;
    if (prior) {
      Tensor<S> p = reshape(*prior, {static_cast<int>(prior->numel())});
      in = concat<S>({pooled, p});
    }
    Tensor<S> h = relu(linear(in, mlp.w1, mlp.b1));
    return linear(h, mlp.w2, mlp.b2);
  };
  Tensor<S> pre = branch(PoolMode::Avg);
  if (include_max_branch) pre = add(pre, branch(PoolMode::Max));
  return reshape(sigmoid(pre), {1, 1, f.shape()[2]});
}

// Conv7x7 spatial gate over [chan-maxpool, chan-avgpool, A_s]. The prior must
// already be resized to HxWx1; resize_spatial_prior does that upstream.
template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& f, const std::optional<Tensor<S>>& prior,
                            const SpatialAttentionConv<S>& conv) {
  int h = f.shape()[0], w = f.shape()[1];
  if (prior && prior->shape() != Shape{h, w, 1})
    throw ShapeError("spatial_attention: prior " + shape_str(prior->shape()) +
                     " does not match map " + shape_str(f.shape()));
  std::vector<Tensor<S>> planes{channel_pool(f, PoolMode::Max), channel_pool(f, PoolMode::Avg)};
  if (prior) planes.push_back(*prior);
  Tensor<S> stacked = concat_channels(planes);
  return sigmoid(conv2d(stacked, conv.kernel, conv.bias, 1, 3));
}

template <typename S>
Tensor<S> resize_spatial_prior(const Tensor<S>& low_res, int h, int w) {
  return bilinear_resize(low_res, h, w);
}

// Attention state for one instrumented convolutional layer. Category priors
// are dense tables indexed by category id: channel_priors is (K, C'),
// spatial_priors is (K, H'*W').
template <typename S>
struct AttentionLayer {
  AttentionVariant variant = AttentionVariant::None;
  int channels = 0;
  int reduction = 4;
  int cprime = 0;
  int hprime = 0, wprime = 0;
  int num_categories = 0;

  ChannelAttentionMlp<S> mlp;
  SpatialAttentionConv<S> conv7;
  Tensor<S> channel_priors;
  Tensor<S> spatial_priors;

  static AttentionLayer make(AttentionVariant variant, int channels, int reduction, int cprime,
                             int hprime, int wprime, int num_categories, std::mt19937_64& rng) {
    AttentionLayer layer;
    layer.variant = variant;
    layer.channels = channels;
    layer.reduction = reduction;
    layer.cprime = cprime;
    layer.hprime = hprime;
    layer.wprime = wprime;
    layer.num_categories = num_categories;
    if (variant == AttentionVariant::None) return layer;
    if (channels % reduction != 0)
      throw ConfigError("attention: reduction ratio " + std::to_string(reduction) +
                        " does not divide channels " + std::to_string(channels));

    bool cat = variant == AttentionVariant::CSCNN;
    int in_dim = channels + (cat ? cprime : 0);
    int hidden = channels / reduction;
    S bound = static_cast<S>(0.05);
    layer.mlp.w1 = Tensor<S>::randu({hidden, in_dim}, -bound, bound, rng, true);
    layer.mlp.b1 = Tensor<S>::zeros({hidden}, true);
    layer.mlp.w2 = Tensor<S>::randu({channels, hidden}, -bound, bound, rng, true);
    layer.mlp.b2 = Tensor<S>::zeros({channels}, true);

    bool spatial = variant == AttentionVariant::CBAMAll || variant == AttentionVariant::CSCNN;
    if (spatial) {
      int planes = cat ? 3 : 2;
      layer.conv7.kernel = Tensor<S>::randu({7, 7, planes, 1}, -bound, bound, rng, true);
      layer.conv7.bias = Tensor<S>::zeros({1}, true);
    }
    if (cat) {
      if (num_categories < 1) throw ConfigError("attention: CSCNN needs at least one category");
      // Small symmetric noise so early training approximates the neutral gate.
      layer.channel_priors =
          Tensor<S>::randu({num_categories, cprime}, -bound, bound, rng, true);
      layer.spatial_priors =
          Tensor<S>::randu({num_categories, hprime * wprime}, -bound, bound, rng, true);
    }
    return layer;
  }

  // F -> F''; shape-preserving for every variant.
  Tensor<S> refine(const Tensor<S>& f, int category) const {
    if (variant == AttentionVariant::None) return f;
    std::optional<Tensor<S>> channel_prior;
    std::optional<Tensor<S>> spatial_prior;
    if (variant == AttentionVariant::CSCNN) {
      if (category < 0 || category >= num_categories)
        throw LookupError("attention: unknown category " + std::to_string(category) +
                          ", known |K|=" + std::to_string(num_categories));
      channel_prior = reshape(take_row(channel_priors, category), {1, 1, cprime});
      Tensor<S> low = reshape(take_row(spatial_priors, category), {hprime, wprime, 1});
      spatial_prior = resize_spatial_prior(low, f.shape()[0], f.shape()[1]);
    }

    bool include_max = variant != AttentionVariant::SE;
    Tensor<S> mc = channel_attention(f, channel_prior, mlp, include_max);
    Tensor<S> refined = broadcast_mul_channel(f, mc);

    bool spatial = variant == AttentionVariant::CBAMAll || variant == AttentionVariant::CSCNN;
    if (spatial) {
      Tensor<S> ms = spatial_attention(refined, spatial_prior, conv7);
      refined = broadcast_mul_spatial(refined, ms);
    }
    return refined;
  }

  void collect_params(std::vector<std::pair<std::string, Tensor<S>>>& out,
                      const std::string& prefix) const {
    if (variant == AttentionVariant::None) return;
    out.emplace_back(prefix + "/mlp.w1", mlp.w1);
    out.emplace_back(prefix + "/mlp.b1", mlp.b1);
    out.emplace_back(prefix + "/mlp.w2", mlp.w2);
    out.emplace_back(prefix + "/mlp.b2", mlp.b2);
    if (conv7.kernel.defined()) {
      out.emplace_back(prefix + "/conv7.kernel", conv7.kernel);
      out.emplace_back(prefix + "/conv7.bias", conv7.bias);
    }
    if (channel_priors.defined()) {
      out.emplace_back(prefix + "/channel_priors", channel_priors);
      out.emplace_back(prefix + "/spatial_priors", spatial_priors);
    }
  }
};

}  // namespace cscnn
