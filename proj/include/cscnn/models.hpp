#pragma once

// Prediction heads: the MF-family scorer used in ablations and the modified
// Deep & Cross network, plus the non-visual embedding layer.

#include <string>
#include <utility>
#include <vector>

#include "cscnn/attention.hpp"  // ConfigError / LookupError
#include "cscnn/tensor.hpp"

namespace cscnn {

// ---- non-visual embedding ----

// Per-feature embedding dictionaries; multi-valued features are mean-pooled,
// then all features are concatenated in fixed order.
template <typename S>
struct NonVisualEmbedding {
  std::vector<int> vocab_sizes;
  int embed_dim = 4;
  std::vector<Tensor<S>> tables;  // (v_f, embed_dim) each

  NonVisualEmbedding() = default;

  NonVisualEmbedding(std::vector<int> vocabs, int d_e, std::mt19937_64& rng)
      : vocab_sizes(std::move(vocabs)), embed_dim(d_e) {
    for (int v : vocab_sizes)
      tables.push_back(Tensor<S>::randu({v, d_e}, static_cast<S>(-0.05), static_cast<S>(0.05),
                                        rng, true));
  }

  int output_dim() const { return embed_dim * static_cast<int>(vocab_sizes.size()); }

  // features: per feature id, the list of active value ids.
  Tensor<S> embed(const std::vector<std::vector<int>>& features) const {
    if (features.size() != vocab_sizes.size())
      throw ShapeError("embed_nonvisual: got " + std::to_string(features.size()) +
                       " features, expected " + std::to_string(vocab_sizes.size()));
    std::vector<Tensor<S>> parts;
    for (size_t f = 0; f < features.size(); ++f) {
      for (int id : features[f])
        if (id < 0 || id >= vocab_sizes[f])
          throw LookupError("embed_nonvisual: feature " + std::to_string(f) + " value id " +
                            std::to_string(id) + " out of vocabulary " +
                            std::to_string(vocab_sizes[f]));
      parts.push_back(rows_mean(tables[f], features[f]));
    }
    return concat(parts);
  }

  void collect_params(std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    for (size_t f = 0; f < tables.size(); ++f)
      out.emplace_back("embed/feature" + std::to_string(f), tables[f]);
  }
};

// ---- MF-family scorer ----

// y_raw = alpha + beta_u + beta_a + gamma_u . gamma_a + theta_u . x_v
// Variants: use_visual=false gives BPR-MF; share_item_by_category indexes the
// item-side terms by category (DVBPR-C).
template <typename S>
struct MfModel {
  int n_users = 0, n_ads = 0, n_categories = 0;
  int latent_dim = 8, visual_dim = 32;
  bool use_visual = true;
  bool share_item_by_category = false;

  Tensor<S> alpha, beta_u, beta_a, gamma_u, gamma_a, theta_u;

  MfModel() = default;

  MfModel(int users, int ads, int categories, int d_latent, int d_visual, std::mt19937_64& rng,
          bool visual = true, bool share_by_category = false)
      : n_users(users),
        n_ads(ads),
        n_categories(categories),
        latent_dim(d_latent),
        visual_dim(d_visual),
        use_visual(visual),
        share_item_by_category(share_by_category) {
    int items = share_by_category ? categories : ads;
    S b = static_cast<S>(0.05);
    alpha = Tensor<S>::zeros({1}, true);
    beta_u = Tensor<S>::zeros({users}, true);
    beta_a = Tensor<S>::zeros({items}, true);
    gamma_u = Tensor<S>::randu({users, d_latent}, -b, b, rng, true);
    gamma_a = Tensor<S>::randu({items, d_latent}, -b, b, rng, true);
    theta_u = Tensor<S>::randu({users, d_visual}, -b, b, rng, true);
  }

  // Pre-sigmoid preference score. `category` is only consulted when item
  // parameters are shared per category.
  Tensor<S> score(int user, int ad, int category, const Tensor<S>& x_v) const {
    if (user < 0 || user >= n_users)
      throw LookupError("mf_score: unknown user " + std::to_string(user));
    int item = share_item_by_category ? category : ad;
    int item_count = share_item_by_category ? n_categories : n_ads;
    if (item < 0 || item >= item_count)
      throw LookupError("mf_score: unknown item index " + std::to_string(item));
    Tensor<S> s = add(alpha, add(select(beta_u, user), select(beta_a, item)));
    s = add(s, dot(take_row(gamma_u, user), take_row(gamma_a, item)));
    if (use_visual) s = add(s, dot(take_row(theta_u, user), x_v));
    return s;
  }

  void collect_params(std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    out.emplace_back("mf/alpha", alpha);
    out.emplace_back("mf/beta_u", beta_u);
    out.emplace_back("mf/beta_a", beta_a);
    out.emplace_back("mf/gamma_u", gamma_u);
    out.emplace_back("mf/gamma_a", gamma_a);
    out.emplace_back("mf/theta_u", theta_u);
  }
};

// ---- deep & cross ----

// z_{l+1} = z_0 (z_l^T w_l) + b_l + z_l
template <typename S>
Tensor<S> cross_layer(const Tensor<S>& z, const Tensor<S>& z0, const Tensor<S>& w,
                      const Tensor<S>& b) {
  detail::check_same_shape(z, z0, "cross_layer");
  detail::check_same_shape(z, w, "cross_layer");
  detail::check_same_shape(z, b, "cross_layer");
  return add(add(scale_by(z0, dot(z, w)), b), z);
}

struct DcnConfig {
  std::vector<int> feature_vocabs = {16, 8, 8, 8, 8, 8};
  int embed_dim = 4;
  int visual_dim = 32;
  // First deep width receives x_nv; h1 = [x_v, deep0(x_nv)].
  int deep0 = 64;
  std::vector<int> deep_rest = {32, 16};
  int cross_depth = 3;
  std::vector<int> combiner_hidden = {};
};

template <typename S>
struct DcnModel {
  DcnConfig cfg;
  NonVisualEmbedding<S> embedding;
  MlpLayer<S> deep0;                 // x_nv -> cfg.deep0
  std::vector<MlpLayer<S>> deep;     // h1 -> h2 -> h3
  std::vector<Tensor<S>> cross_w, cross_b;
  std::vector<MlpLayer<S>> combiner;  // [h_last, z_last] -> 1

  DcnModel() = default;

  DcnModel(const DcnConfig& config, std::mt19937_64& rng) : cfg(config) {
    embedding = NonVisualEmbedding<S>(cfg.feature_vocabs, cfg.embed_dim, rng);
    int nv = embedding.output_dim();
    deep0 = make_linear(nv, cfg.deep0, rng);
    int width = cfg.visual_dim + cfg.deep0;
    for (int d : cfg.deep_rest) {
      deep.push_back(make_linear(width, d, rng));
      width = d;
    }
    for (int l = 0; l < cfg.cross_depth; ++l) {
      cross_w.push_back(Tensor<S>::randu({nv}, static_cast<S>(-0.05), static_cast<S>(0.05), rng, true));
      cross_b.push_back(Tensor<S>::zeros({nv}, true));
    }
    int comb_in = width + nv;
    for (int h : cfg.combiner_hidden) {
      combiner.push_back(make_linear(comb_in, h, rng));
      comb_in = h;
    }
    combiner.push_back(make_linear(comb_in, 1, rng));
  }

  Tensor<S> forward_raw(const Tensor<S>& x_v, const Tensor<S>& x_nv) const {
    if (x_v.numel() != cfg.visual_dim)
      throw ShapeError("dcn_forward: visual feature " + shape_str(x_v.shape()) +
                       " does not match configured dim " + std::to_string(cfg.visual_dim));
    Tensor<S> h = concat<S>({x_v, relu(linear(x_nv, deep0.w, deep0.b))});
    for (const auto& layer : deep) h = relu(linear(h, layer.w, layer.b));
    Tensor<S> z = x_nv;
    for (size_t l = 0; l < cross_w.size(); ++l) z = cross_layer(z, x_nv, cross_w[l], cross_b[l]);
    return mlp_forward(concat<S>({h, z}), combiner, Activation::Relu, Activation::None);
  }

  Tensor<S> forward(const Tensor<S>& x_v, const Tensor<S>& x_nv) const {
    return sigmoid(forward_raw(x_v, x_nv));
  }

  void collect_params(std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    embedding.collect_params(out);
    out.emplace_back("dcn/deep0.w", deep0.w);
    out.emplace_back("dcn/deep0.b", deep0.b);
    for (size_t i = 0; i < deep.size(); ++i) {
      out.emplace_back("dcn/deep" + std::to_string(i + 1) + ".w", deep[i].w);
      out.emplace_back("dcn/deep" + std::to_string(i + 1) + ".b", deep[i].b);
    }
    for (size_t l = 0; l < cross_w.size(); ++l) {
      out.emplace_back("dcn/cross" + std::to_string(l) + ".w", cross_w[l]);
      out.emplace_back("dcn/cross" + std::to_string(l) + ".b", cross_b[l]);
    }
    for (size_t i = 0; i < combiner.size(); ++i) {
      out.emplace_back("dcn/comb" + std::to_string(i) + ".w", combiner[i].w);
      out.emplace_back("dcn/comb" + std::to_string(i) + ".b", combiner[i].b);
    }
  }

 private:
  static MlpLayer<S> make_linear(int in_dim, int out_dim, std::mt19937_64& rng) {
    S bound = static_cast<S>(std::sqrt(2.0 / in_dim));
    return {Tensor<S>::randu({out_dim, in_dim}, -bound, bound, rng, true),
            Tensor<S>::zeros({out_dim}, true)};
  }
};

}  // namespace cscnn
