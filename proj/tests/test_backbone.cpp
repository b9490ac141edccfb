#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "cscnn/backbone.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace cscnn;
using cscnn::testing::random_values;

namespace {

BackboneConfig small_config(AttentionVariant variant, int lprime) {
  BackboneConfig cfg;
  cfg.input_h = cfg.input_w = 12;
  cfg.convs = {{4, 3, 1, 1, true}, {8, 3, 1, 1, true}};
  cfg.visual_dim = 6;
  cfg.variant = variant;
  cfg.lprime = lprime;
  cfg.cprime = 5;
  cfg.hprime = cfg.wprime = 3;
  cfg.reduction = 4;
  cfg.num_categories = 3;
  return cfg;
}

Tensor<float> random_image(int hw, std::mt19937_64& rng) {
  auto v = random_values(static_cast<size_t>(hw) * hw * 3, rng);
  return Tensor<float>({hw, hw, 3}, std::vector<float>(v.begin(), v.end()));
}

}  // namespace

TEST_CASE("zero instrumented layers reduce to the plain encoder bit for bit") {
  std::mt19937_64 rng_a(5), rng_b(5), rng_img(6);
  Backbone<float> plain(small_config(AttentionVariant::None, 1), rng_a);
  Backbone<float> stripped(small_config(AttentionVariant::CSCNN, 0), rng_b);
  Tensor<float> image = random_image(12, rng_img);
  CHECK(plain.encode_image(image, 0).value() == stripped.encode_image(image, 1).value());
}

TEST_CASE("output width equals the configured visual dimension") {
  std::mt19937_64 rng(7), rng_img(8);
  Backbone<float> net(small_config(AttentionVariant::CSCNN, 2), rng);
  for (int k = 0; k < 3; ++k)
    CHECK(net.encode_image(random_image(12, rng_img), k).shape() == Shape{6});
}

TEST_CASE("category changes the feature only under conditioned attention") {
  std::mt19937_64 rng(9), rng2(10), rng_img(11);
  Tensor<float> image = random_image(12, rng_img);

  Backbone<float> cond(small_config(AttentionVariant::CSCNN, 2), rng);
  Tensor<float> a = cond.encode_image(image, 0);
  Tensor<float> b = cond.encode_image(image, 2);
  float diff = 0;
  for (long long i = 0; i < a.numel(); ++i)
    diff = std::max(diff, std::fabs(a.at(i) - b.at(i)));
  CHECK(diff > 0.0f);

  Backbone<float> plain(small_config(AttentionVariant::None, 1), rng2);
  CHECK(plain.encode_image(image, 0).value() == plain.encode_image(image, 2).value());
}

TEST_CASE("gradients reach conv kernels and category priors end to end") {
  std::mt19937_64 rng(13), rng_img(14);
  BackboneConfig cfg = small_config(AttentionVariant::CSCNN, 1);
  Backbone<double> net(cfg, rng);
  auto v = random_values(12 * 12 * 3, rng_img);
  Tensor<double> image({12, 12, 3}, v);

  Tensor<double> x = net.encode_image(image, 1);
  backward(sum(mul(x, x)));

  auto params = net.named_params();
  double conv_grad = 0, prior_grad = 0;
  for (const auto& [name, t] : params) {
    double g = 0;
    for (double gv : t.grad()) g = std::max(g, std::fabs(gv));
    if (name.find("conv0.kernel") != std::string::npos) conv_grad = g;
    if (name.find("channel_priors") != std::string::npos) prior_grad = g;
  }
  CHECK(conv_grad > 0.0);
  CHECK(prior_grad > 0.0);
}

TEST_CASE("instrumentation can start past the first conv layer") {
  std::mt19937_64 rng(15);
  BackboneConfig cfg = small_config(AttentionVariant::CSCNN, 1);
  Backbone<float> net(cfg, rng);
  CHECK(net.attention_at(0) == nullptr);
  CHECK(net.attention_at(1) != nullptr);
}

TEST_CASE("encode_image validates inputs and counts invocations") {
  std::mt19937_64 rng(17), rng_img(18);
  Backbone<float> net(small_config(AttentionVariant::CSCNN, 2), rng);

  long long before = encode_call_count().load();
  net.encode_image(random_image(12, rng_img), 0);
  CHECK(encode_call_count().load() == before + 1);

  CHECK_THROWS_AS(net.encode_image(random_image(10, rng_img), 0), ShapeError);
  CHECK_THROWS_AS(net.encode_image(random_image(12, rng_img), 7), LookupError);
}
