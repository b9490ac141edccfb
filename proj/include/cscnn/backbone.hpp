#pragma once

// Small configurable CNN image encoder. Attention refinement is inserted on
// the last `lprime` convolutional layers; the refined map feeds the next
// layer, so any variant (including None) keeps shapes intact.

#include <atomic>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cscnn/attention.hpp"
#include "cscnn/tensor.hpp"

namespace cscnn {

struct ConvLayerSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool pool = true;  // 2x2 stride-2 max pool after the (refined) map
};

struct BackboneConfig {
  int input_h = 32, input_w = 32, input_c = 3;
  std::vector<ConvLayerSpec> convs = {{8, 3, 1, 1, true},
                                      {16, 3, 1, 1, true},
                                      {32, 3, 1, 1, true},
                                      {64, 3, 1, 1, true}};
  std::vector<int> head_hidden = {};  // widths between flatten and visual_dim
  int visual_dim = 32;

  AttentionVariant variant = AttentionVariant::None;
  int lprime = 3;  // trailing conv layers instrumented; default n_convs - 1
  int cprime = 20;
  int hprime = 7, wprime = 7;
  int reduction = 4;
  int num_categories = 1;
};

// Process-wide count of encode_image invocations; lets tests prove the
// offline/online split (serving must never touch the CNN).
inline std::atomic<long long>& encode_call_count() {
  static std::atomic<long long> count{0};
  return count;
}

template <typename S>
class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.lprime < 0 || cfg.lprime > static_cast<int>(cfg.convs.size()))
      throw ConfigError("backbone: lprime " + std::to_string(cfg.lprime) + " out of range [0," +
                        std::to_string(cfg.convs.size()) + "]");
    if (cfg.visual_dim < 1) throw ConfigError("backbone: visual_dim must be positive");

    int h = cfg.input_h, w = cfg.input_w, c = cfg.input_c;
    int first_instrumented = static_cast<int>(cfg.convs.size()) - cfg.lprime;
    for (size_t i = 0; i < cfg.convs.size(); ++i) {
      const auto& spec = cfg.convs[i];
      Layer layer;
      S bound = static_cast<S>(std::sqrt(2.0 / (spec.kernel * spec.kernel * c)));
      layer.kernel = Tensor<S>::randu({spec.kernel, spec.kernel, c, spec.out_channels}, -bound,
                                      bound, rng, true);
      layer.bias = Tensor<S>::zeros({spec.out_channels}, true);
      layer.spec = spec;
      h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      c = spec.out_channels;
      if (static_cast<int>(i) >= first_instrumented && cfg.variant != AttentionVariant::None) {
        layer.attention = AttentionLayer<S>::make(cfg.variant, c, cfg.reduction, cfg.cprime,
                                                  cfg.hprime, cfg.wprime, cfg.num_categories, rng);
      }
      if (spec.pool && h >= 2 && w >= 2) {
        h /= 2;
        w /= 2;
      }
      layers_.push_back(std::move(layer));
    }

    int flat = h * w * c;
    int in_dim = flat;
    for (int hidden : cfg.head_hidden) {
      head_.push_back(make_linear(in_dim, hidden, rng));
      in_dim = hidden;
    }
    head_.push_back(make_linear(in_dim, cfg.visual_dim, rng));
  }

  const BackboneConfig& config() const { return cfg_; }

  // image: input_h x input_w x input_c -> visual feature (visual_dim).
  Tensor<S> encode_image(const Tensor<S>& image, int category) const {
    if (image.shape() != Shape{cfg_.input_h, cfg_.input_w, cfg_.input_c})
      throw ShapeError("encode_image: image " + shape_str(image.shape()) + " does not match config " +
                       shape_str({cfg_.input_h, cfg_.input_w, cfg_.input_c}));
    encode_call_count().fetch_add(1, std::memory_order_relaxed);

    Tensor<S> f = image;
    for (const auto& layer : layers_) {
      f = relu(conv2d(f, layer.kernel, layer.bias, layer.spec.stride, layer.spec.padding));
      if (layer.attention) f = layer.attention->refine(f, category);
      if (layer.spec.pool && f.shape()[0] >= 2 && f.shape()[1] >= 2) f = max_pool2d(f, 2, 2);
    }
    Tensor<S> x = reshape(f, {static_cast<int>(f.numel())});
    return mlp_forward(x, head_, Activation::Relu, Activation::None);
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
      std::string prefix = "backbone/conv" + std::to_string(i);
      out.emplace_back(prefix + ".kernel", layers_[i].kernel);
      out.emplace_back(prefix + ".bias", layers_[i].bias);
      if (layers_[i].attention) layers_[i].attention->collect_params(out, prefix + "/att");
    }
    for (size_t i = 0; i < head_.size(); ++i) {
      std::string prefix = "backbone/head" + std::to_string(i);
      out.emplace_back(prefix + ".w", head_[i].w);
      out.emplace_back(prefix + ".b", head_[i].b);
    }
    return out;
  }

  // Exposed for attention-level tests.
  const AttentionLayer<S>* attention_at(size_t conv_index) const {
    if (conv_index >= layers_.size() || !layers_[conv_index].attention) return nullptr;
    return &*layers_[conv_index].attention;
  }

 private:
  struct Layer {
    ConvLayerSpec spec;
    Tensor<S> kernel, bias;
    std::optional<AttentionLayer<S>> attention;
  };

  static MlpLayer<S> make_linear(int in_dim, int out_dim, std::mt19937_64& rng) {
    S bound = static_cast<S>(std::sqrt(2.0 / in_dim));
    return {Tensor<S>::randu({out_dim, in_dim}, -bound, bound, rng, true),
            Tensor<S>::zeros({out_dim}, true)};
  }

  BackboneConfig cfg_;
  std::vector<Layer> layers_;
  std::vector<MlpLayer<S>> head_;
};

}  // namespace cscnn
