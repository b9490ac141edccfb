#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "cscnn/attention.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace cscnn;
using cscnn::testing::max_grad_rel_err;
using cscnn::testing::random_values;

namespace {

template <typename S>
void zero_params(AttentionLayer<S>& layer) {
  for (Tensor<S>* t : {&layer.mlp.w1, &layer.mlp.b1, &layer.mlp.w2, &layer.mlp.b2,
                       &layer.conv7.kernel, &layer.conv7.bias, &layer.channel_priors,
                       &layer.spatial_priors})
    if (t->defined()) std::fill(t->value().begin(), t->value().end(), S(0));
}

}  // namespace

TEST_CASE("zero parameters give the neutral half gates") {
  std::mt19937_64 rng(1);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 8, 4, 5, 3, 3, 4, rng);
  zero_params(layer);
  Tensor<double> f({6, 6, 8}, random_values(6 * 6 * 8, rng));

  Tensor<double> mc = channel_attention(
      f, std::optional<Tensor<double>>(reshape(take_row(layer.channel_priors, 0), {1, 1, 5})),
      layer.mlp, true);
  CHECK(mc.shape() == Shape{1, 1, 8});
  for (long long i = 0; i < mc.numel(); ++i) CHECK(mc.at(i) == 0.5);

  Tensor<double> prior = Tensor<double>::zeros({6, 6, 1});
  Tensor<double> ms = spatial_attention(f, std::optional<Tensor<double>>(prior), layer.conv7);
  CHECK(ms.shape() == Shape{6, 6, 1});
  for (long long i = 0; i < ms.numel(); ++i) CHECK(ms.at(i) == 0.5);

  // Two stacked 0.5 gates: exactly a quarter of the input.
  Tensor<double> refined = layer.refine(f, 2);
  for (long long i = 0; i < f.numel(); ++i) CHECK(refined.at(i) == 0.25 * f.at(i));
}

TEST_CASE("variant None is the bit-exact identity") {
  std::mt19937_64 rng(2);
  auto layer = AttentionLayer<float>::make(AttentionVariant::None, 8, 4, 5, 3, 3, 4, rng);
  Tensor<float> f({4, 4, 8}, std::vector<float>(128, 1.25f));
  Tensor<float> out = layer.refine(f, 0);
  CHECK(out.value() == f.value());
}

TEST_CASE("channel gate reduces 1x1x(C+C') to 1x1xC") {
  std::mt19937_64 rng(3);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 16, 4, 20, 3, 3, 2, rng);
  CHECK(layer.mlp.w1.shape() == Shape{4, 36});
  CHECK(layer.mlp.w2.shape() == Shape{16, 4});
  Tensor<double> f({5, 5, 16}, random_values(5 * 5 * 16, rng));
  CHECK(layer.refine(f, 1).shape() == f.shape());
}

TEST_CASE("channel gate matches hand arithmetic on a tiny net") {
  std::mt19937_64 rng(4);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 2, 2, 1, 1, 1, 1, rng);
  // One hidden unit: w1 is (1, 3) over [avg/max pooled F, prior], w2 is (2, 1).
  layer.mlp.w1 = Tensor<double>({1, 3}, {0.5, -0.25, 1.0});
  layer.mlp.b1 = Tensor<double>({1}, {0.1});
  layer.mlp.w2 = Tensor<double>({2, 1}, {2.0, -1.0});
  layer.mlp.b2 = Tensor<double>({2}, {0.05, -0.05});
  layer.channel_priors = Tensor<double>({1, 1}, {0.3});

  Tensor<double> f({1, 1, 2}, {0.8, -0.4});
  Tensor<double> prior({1, 1, 1}, {0.3});
  Tensor<double> mc =
      channel_attention(f, std::optional<Tensor<double>>(prior), layer.mlp, true);

  // Avg pool == max pool on a 1x1 map, so both branches are identical.
  double hidden = std::max(0.0, 0.5 * 0.8 - 0.25 * -0.4 + 1.0 * 0.3 + 0.1);
  double pre0 = 2.0 * (2.0 * hidden + 0.05) - 2.0 * 0.05 + 0.05;  // sum of two branches
  // Spelled out: each branch contributes w2*hidden + b2.
  double branch0 = 2.0 * hidden + 0.05;
  double branch1 = -1.0 * hidden - 0.05;
  (void)pre0;
  CHECK(mc.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0 * branch0))));
  CHECK(mc.at(1) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0 * branch1))));
}

TEST_CASE("spatial gate equals the pooled-conv composition") {
  std::mt19937_64 rng(5);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 4, 4, 3, 3, 3, 2, rng);
  Tensor<double> f({8, 8, 4}, random_values(8 * 8 * 4, rng));
  Tensor<double> prior({8, 8, 1}, random_values(64, rng));
  Tensor<double> ms = spatial_attention(f, std::optional<Tensor<double>>(prior), layer.conv7);

  Tensor<double> stacked = concat_channels<double>(
      {channel_pool(f, PoolMode::Max), channel_pool(f, PoolMode::Avg), prior});
  Tensor<double> expect = sigmoid(conv2d(stacked, layer.conv7.kernel, layer.conv7.bias, 1, 3));
  CHECK(ms.shape() == Shape{8, 8, 1});
  for (long long i = 0; i < ms.numel(); ++i) CHECK(ms.at(i) == doctest::Approx(expect.at(i)));

  Tensor<double> bad({4, 4, 1}, random_values(16, rng));
  CHECK_THROWS_AS(spatial_attention(f, std::optional<Tensor<double>>(bad), layer.conv7),
                  ShapeError);
}

TEST_CASE("gates stay strictly inside (0,1)") {
  std::mt19937_64 rng(6);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 8, 4, 5, 3, 3, 3, rng);
  Tensor<double> f({6, 6, 8}, random_values(6 * 6 * 8, rng, -3.0, 3.0));
  Tensor<double> prior = resize_spatial_prior(
      reshape(take_row(layer.spatial_priors, 1), {3, 3, 1}), 6, 6);
  Tensor<double> mc = channel_attention(
      f, std::optional<Tensor<double>>(reshape(take_row(layer.channel_priors, 1), {1, 1, 5})),
      layer.mlp, true);
  Tensor<double> ms = spatial_attention(f, std::optional<Tensor<double>>(prior), layer.conv7);
  for (long long i = 0; i < mc.numel(); ++i) {
    CHECK(mc.at(i) > 0.0);
    CHECK(mc.at(i) < 1.0);
  }
  for (long long i = 0; i < ms.numel(); ++i) {
    CHECK(ms.at(i) > 0.0);
    CHECK(ms.at(i) < 1.0);
  }
}

TEST_CASE("distinct categories refine the same map differently") {
  std::mt19937_64 rng(7);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 8, 4, 5, 3, 3, 4, rng);
  Tensor<double> f({6, 6, 8}, random_values(6 * 6 * 8, rng));
  Tensor<double> a = layer.refine(f, 0);
  Tensor<double> b = layer.refine(f, 3);
  double diff = 0;
  for (long long i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a.at(i) - b.at(i)));
  CHECK(diff > 0.0);
}

TEST_CASE("resize_spatial_prior endpoints") {
  std::mt19937_64 rng(8);
  Tensor<double> one({1, 1, 1}, {0.7});
  Tensor<double> c = resize_spatial_prior(one, 5, 4);
  for (long long i = 0; i < c.numel(); ++i) CHECK(c.at(i) == doctest::Approx(0.7));

  Tensor<double> sq({7, 7, 1}, random_values(49, rng));
  Tensor<double> same = resize_spatial_prior(sq, 7, 7);
  for (long long i = 0; i < 49; ++i) CHECK(same.at(i) == doctest::Approx(sq.at(i)));

  Tensor<double> up = resize_spatial_prior(sq, 14, 14);
  CHECK(up.shape() == Shape{14, 14, 1});
}

TEST_CASE("category priors only get gradient from batched categories") {
  std::mt19937_64 rng(9);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 4, 4, 3, 2, 2, 5, rng);
  for (Tensor<double>* t : {&layer.channel_priors, &layer.spatial_priors}) {
    t->set_requires_grad();
    t->zero_grad();
  }
  Tensor<double> f({4, 4, 4}, random_values(64, rng));
  backward(sum(layer.refine(f, 2)));

  int cp = layer.cprime, hw = layer.hprime * layer.wprime;
  for (int k = 0; k < 5; ++k) {
    double cmax = 0, smax = 0;
    for (int i = 0; i < cp; ++i)
      cmax = std::max(cmax, std::fabs(layer.channel_priors.grad()[k * cp + i]));
    for (int i = 0; i < hw; ++i)
      smax = std::max(smax, std::fabs(layer.spatial_priors.grad()[k * hw + i]));
    if (k == 2) {
      CHECK(cmax > 0.0);
      CHECK(smax > 0.0);
    } else {
      CHECK(cmax == 0.0);
      CHECK(smax == 0.0);
    }
  }
}

TEST_CASE("attention parameters pass finite differences") {
  std::mt19937_64 rng(10);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 4, 2, 3, 2, 2, 3, rng);
  Tensor<double> f({4, 4, 4}, random_values(64, rng));
  auto loss = [&] {
    Tensor<double> r = layer.refine(f, 1);
    return sum(mul(r, r));
  };
  CHECK(max_grad_rel_err(loss, {layer.mlp.w1, layer.mlp.b1, layer.mlp.w2, layer.mlp.b2,
                                layer.conv7.kernel, layer.conv7.bias, layer.channel_priors,
                                layer.spatial_priors, f}) < cscnn::testing::kGradTol);
}

TEST_CASE("configuration and lookup failures") {
  std::mt19937_64 rng(11);
  CHECK_THROWS_AS(AttentionLayer<double>::make(AttentionVariant::CSCNN, 6, 4, 3, 2, 2, 2, rng),
                  ConfigError);
  auto layer = AttentionLayer<double>::make(AttentionVariant::CSCNN, 4, 4, 3, 2, 2, 3, rng);
  Tensor<double> f({4, 4, 4}, random_values(64, rng));
  try {
    layer.refine(f, 9);
    FAIL("expected a lookup error");
  } catch (const LookupError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("baseline variants wire the expected stages") {
  std::mt19937_64 rng(12);
  Tensor<double> f({4, 4, 8}, random_values(128, rng));

  auto se = AttentionLayer<double>::make(AttentionVariant::SE, 8, 4, 0, 0, 0, 1, rng);
  zero_params(se);
  Tensor<double> r_se = se.refine(f, 0);
  for (long long i = 0; i < f.numel(); ++i) CHECK(r_se.at(i) == 0.5 * f.at(i));
  CHECK_FALSE(se.conv7.kernel.defined());
  CHECK_FALSE(se.channel_priors.defined());

  auto cbam_c = AttentionLayer<double>::make(AttentionVariant::CBAMChannel, 8, 4, 0, 0, 0, 1, rng);
  zero_params(cbam_c);
  Tensor<double> r_c = cbam_c.refine(f, 0);
  for (long long i = 0; i < f.numel(); ++i) CHECK(r_c.at(i) == 0.5 * f.at(i));
  CHECK_FALSE(cbam_c.conv7.kernel.defined());

  auto cbam_all = AttentionLayer<double>::make(AttentionVariant::CBAMAll, 8, 4, 0, 0, 0, 1, rng);
  zero_params(cbam_all);
  Tensor<double> r_all = cbam_all.refine(f, 0);
  for (long long i = 0; i < f.numel(); ++i) CHECK(r_all.at(i) == 0.25 * f.at(i));
  CHECK(cbam_all.conv7.kernel.shape() == Shape{7, 7, 2, 1});
  CHECK_FALSE(cbam_all.channel_priors.defined());
}
