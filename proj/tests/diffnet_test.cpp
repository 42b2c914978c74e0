#include "neurotraj/diffnet.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace neurotraj;
using namespace neurotraj::diffnet;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.data) v = u(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// Checks parameter and input gradients of `net` under loss = <coeffs, net(x)>.
double max_chain_error(const Sequential& net, ParamStore& store, Tensor x, std::mt19937_64& rng) {
  const Tensor probe = net.forward(store, x);
  const Tensor coeffs = random_tensor(probe.shape, rng);
  Tensor input_grad;
  auto loss = [&] { return dot(coeffs, net.forward(store, x)); };
  auto loss_and_grad = [&] {
    Sequential::Cache cache;
    const double l = dot(coeffs, net.forward(store, x, &cache));
    input_grad = net.backward(store, cache, coeffs);
    return l;
  };
  double worst = store.entries().empty() ? 0.0 : check_gradients(store, loss_and_grad, loss).max_rel_error;
  loss_and_grad();
  store.zero_grad();
  const double eps = 1e-4;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double old = x.data[i];
    x.data[i] = old + eps;
    const double up = loss();
    x.data[i] = old - eps;
    const double down = loss();
    x.data[i] = old;
    worst = std::max(worst, relative_error(input_grad.data[i], (up - down) / (2 * eps)));
  }
  return worst;
}

}  // namespace

TEST(Dense, IdentityWeightsPassInputThrough) {
  ParamStore store;
  std::mt19937_64 rng(1);
  Sequential net({LayerSpec::dense("fc", 3, 3)});
  net.init(store, rng);
  store.value("fc.W").rows() = RowMatrix::Identity(3, 3);
  store.value("fc.b").fill(0.0);
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0.25, -7});
  EXPECT_EQ(net.forward(store, x), x);
}

TEST(LeakyRelu, SlopeExamples) {
  ParamStore store;
  Sequential net({LayerSpec::leaky_relu(2)});
  const auto y = net.forward(store, Tensor({1, 2}, {-1.0, 2.0}));
  EXPECT_DOUBLE_EQ(y.data[0], -0.2);
  EXPECT_DOUBLE_EQ(y.data[1], 2.0);
}

TEST(Conv2d, RampMatchesNestedLoopConvolution) {
  ParamStore store;
  std::mt19937_64 rng(2);
  const auto spec = LayerSpec::conv2d("conv", 1, 3, 8, 8);
  Sequential net({spec});
  net.init(store, rng);
  Tensor x({1, 1, 8, 8});
  for (int i = 0; i < 64; ++i) x.data[i] = 0.1 * i;
  const auto y = net.forward(store, x);
  ASSERT_EQ(y.shape, (std::vector<int>{1, 3, 4, 4}));
  const auto& w = store.value("conv.W");
  const auto& b = store.value("conv.b");
  // 8 -> 4 with kernel 4 / stride 2 needs 2 cells of padding: 1 before, 1 after.
  for (int oc = 0; oc < 3; ++oc)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double acc = b.data[oc];
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const int iy = 2 * oy + ky - 1, ix = 2 * ox + kx - 1;
            if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
            acc += w.data[oc * 16 + ky * 4 + kx] * x.data[iy * 8 + ix];
          }
        EXPECT_NEAR(y.data[(oc * 4 + oy) * 4 + ox], acc, 1e-12);
      }
}

TEST(Conv2d, SamePaddingHandlesSingleCellInput) {
  const auto spec = LayerSpec::conv2d("c", 2, 4, 1, 1);
  EXPECT_EQ(spec.out_height(), 1);
  EXPECT_EQ(spec.out, 4);
  const auto full = LayerSpec::conv2d("c", 1, 8, 64, 64);
  EXPECT_EQ(full.out_height(), 32);
  EXPECT_EQ(full.pad_before(64, 32), 1);
}

TEST(Dense, InputGradientOfSumIsColumnSums) {
  ParamStore store;
  std::mt19937_64 rng(3);
  Sequential net({LayerSpec::dense("fc", 4, 3)});
  net.init(store, rng);
  Sequential::Cache cache;
  net.forward(store, random_tensor({1, 4}, rng), &cache);
  const auto g = net.backward(store, cache, Tensor({1, 3}, 1.0));
  const auto w = store.value("fc.W").matrix(3, 4);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(g.data[j], w.col(j).sum(), 1e-15);
}

TEST(Backward, ZeroUpstreamGivesZeroParameterGradients) {
  ParamStore store;
  std::mt19937_64 rng(4);
  Sequential net({LayerSpec::conv2d("c", 1, 2, 4, 4), LayerSpec::leaky_relu(8),
                  LayerSpec::dense("fc", 8, 5), LayerSpec::gru_cell("g", 2, 3)});
  net.init(store, rng);
  Sequential::Cache cache;
  net.forward(store, random_tensor({2, 1, 4, 4}, rng), &cache);
  net.backward(store, cache, Tensor({2, 3}));
  for (const auto& e : store.entries())
    for (double v : e.grad.data) ASSERT_EQ(v, 0.0) << e.name;
}

TEST(Backward, MissingCacheIsError) {
  ParamStore store;
  std::mt19937_64 rng(5);
  Sequential net({LayerSpec::dense("fc", 2, 2)});
  net.init(store, rng);
  EXPECT_THROW(net.backward(store, Sequential::Cache{}, Tensor({1, 2})), Error);
  EXPECT_THROW(backward_layer(net.layers()[0], store, LayerCache{}, Tensor({1, 2})), Error);
}

TEST(Forward, ShapeMismatchNamesLayer) {
  ParamStore store;
  std::mt19937_64 rng(6);
  Sequential net({LayerSpec::dense("first", 4, 3), LayerSpec::dense("second", 3, 2)});
  net.init(store, rng);
  try {
    net.forward(store, Tensor({1, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("first"), std::string::npos);
  }
  EXPECT_THROW(Sequential({LayerSpec::dense("a", 4, 3), LayerSpec::dense("b", 4, 2)}), Error);
}

TEST(Forward, IsPure) {
  ParamStore store;
  std::mt19937_64 rng(7);
  Sequential net({LayerSpec::conv2d("c", 1, 4, 8, 8), LayerSpec::leaky_relu(64),
                  LayerSpec::dense("fc", 64, 6), LayerSpec::gru_cell("g", 3, 3)});
  net.init(store, rng);
  const auto x = random_tensor({3, 1, 8, 8}, rng);
  const auto a = net.forward(store, x);
  const auto b = net.forward(store, x);
  EXPECT_EQ(a, b);
}

TEST(GruCell, ZeroWeightsAndStateGiveZero) {
  ParamStore store;
  std::mt19937_64 rng(8);
  Sequential net({LayerSpec::gru_cell("g", 4, 3)});
  net.init(store, rng);
  for (auto& e : store.entries()) e.value.fill(0.0);
  Tensor x = random_tensor({2, 7}, rng, 5.0);
  for (int b = 0; b < 2; ++b)
    for (int j = 4; j < 7; ++j) x.data[b * 7 + j] = 0.0;
  const auto y = net.forward(store, x);
  for (double v : y.data) EXPECT_EQ(v, 0.0);
}

// Every layer kind against central differences, 100 random trials each.
class LayerGradient : public ::testing::TestWithParam<LayerKind> {};

TEST_P(LayerGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + static_cast<int>(GetParam()));
  std::uniform_int_distribution<int> dim(1, 5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore store;
    LayerSpec spec;
    Tensor x;
    const int batch = dim(rng) % 3 + 1;
    switch (GetParam()) {
      case LayerKind::dense:
        spec = LayerSpec::dense("fc", dim(rng), dim(rng));
        x = random_tensor({batch, spec.in}, rng);
        break;
      case LayerKind::conv2d: {
        const int c = dim(rng) % 3 + 1, h = dim(rng) + 1, w = dim(rng) + 1;
        spec = LayerSpec::conv2d("conv", c, dim(rng) % 3 + 1, h, w);
        x = random_tensor({batch, c, h, w}, rng);
        break;
      }
      case LayerKind::leaky_relu:
        spec = LayerSpec::leaky_relu(dim(rng) + 2);
        x = random_tensor({batch, spec.in}, rng);
        // Keep inputs off the kink so central differences are valid.
        for (auto& v : x.data)
          if (std::abs(v) < 1e-2) v += 0.05;
        break;
      case LayerKind::gru_cell:
        spec = LayerSpec::gru_cell("gru", dim(rng), dim(rng));
        x = random_tensor({batch, spec.in}, rng);
        break;
    }
    Sequential net({spec});
    net.init(store, rng);
    for (auto& e : store.entries())
      if (e.name.ends_with(".b") || e.name.find(".b") != std::string::npos)
        for (auto& v : e.value.data) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    worst = std::max(worst, max_chain_error(net, store, x, rng));
  }
  EXPECT_LT(worst, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerGradient,
                         ::testing::Values(LayerKind::dense, LayerKind::conv2d,
                                           LayerKind::leaky_relu, LayerKind::gru_cell),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Chain, FullChainGradientMatchesFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(9);
  Sequential net({LayerSpec::conv2d("c1", 1, 3, 8, 8), LayerSpec::leaky_relu(48),
                  LayerSpec::conv2d("c2", 3, 4, 4, 4), LayerSpec::leaky_relu(16),
                  LayerSpec::dense("fc", 16, 6), LayerSpec::gru_cell("g", 3, 3)});
  net.init(store, rng);
  EXPECT_LT(max_chain_error(net, store, random_tensor({2, 1, 8, 8}, rng), rng), 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("w", {1}).value.data[0] = 0.5;
  store.grad("w").data[0] = 1.0;
  adam_step(store);
  EXPECT_NEAR(store.value("w").data[0], 0.5 - 3e-4, 1e-10);
  EXPECT_EQ(store.grad("w").data[0], 0.0);
  EXPECT_EQ(store.step, 1);
}

TEST(Adam, ZeroGradientKeepsParameterAndDecaysMoments) {
  ParamStore store;
  store.add("w", {1}).value.data[0] = 2.0;
  adam_step(store);
  EXPECT_EQ(store.value("w").data[0], 2.0);

  store.grad("w").data[0] = 1.0;
  adam_step(store);
  const double m = store.entry("w").m.data[0], v = store.entry("w").v.data[0];
  adam_step(store);
  EXPECT_NEAR(store.entry("w").m.data[0], 0.9 * m, 1e-15);
  EXPECT_NEAR(store.entry("w").v.data[0], 0.999 * v, 1e-15);
}

TEST(Adam, QuadraticDecreasesEveryStep) {
  ParamStore store;
  store.add("w", {1}).value.data[0] = 1.0;
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    const double w = store.value("w").data[0];
    store.grad("w").data[0] = 2.0 * w;
    adam_step(store);
    const double f = std::pow(store.value("w").data[0], 2);
    EXPECT_LT(f, prev);
    prev = f;
  }
}

TEST(ParamFile, RoundTripAndErrors) {
  ParamStore store;
  std::mt19937_64 rng(10);
  Sequential net({LayerSpec::dense("fc", 3, 2), LayerSpec::gru_cell("g", 1, 1)});
  net.init(store, rng);
  const auto bytes = encode_params(store, {{"format", "test"}});
  ParamStore other;
  std::mt19937_64 rng2(99);
  net.init(other, rng2);
  decode_params(bytes, other);
  for (std::size_t i = 0; i < store.entries().size(); ++i)
    EXPECT_EQ(store.entries()[i].value, other.entries()[i].value);
  EXPECT_THROW(decode_params(bytes.substr(0, bytes.size() - 8), other), Error);
}
