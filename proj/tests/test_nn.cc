#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "phishmetric/error.h"
#include "phishmetric/nn/network.h"
#include "phishmetric/optimizer.h"

namespace phishmetric::nn {
namespace {

using D = double;

Tensor<D> random_tensor(std::vector<int> dims, std::mt19937_64& rng) {
  Tensor<D> t(std::move(dims));
  std::normal_distribution<D> n;
  for (D& v : t.values()) v = n(rng);
  return t;
}

// Scalar probe L = <w, f(x)> so the upstream gradient is w.
D probe(const Network<D>& net, const Tensor<D>& x, const Tensor<D>& w) {
  const Tensor<D> y = net.forward(x);
  D s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

void check_gradients(Network<D>& net, const Tensor<D>& x, std::mt19937_64& rng, double tol) {
  // Zero-initialised shifts put all-zero patches exactly on a ReLU kink.
  std::normal_distribution<D> jitter(0.0, 0.1);
  for (auto& p : net.params().tensors) {
    if (std::all_of(p.values().begin(), p.values().end(), [](D v) { return v == 0; })) {
      for (D& v : p.values()) v = jitter(rng);
    }
  }
  const Tensor<D> w = random_tensor(net.output_dims(), rng);
  Tape<D> tape;
  net.forward(x, &tape);
  ParamStore<D> grads = net.params().zeros_like();
  const Tensor<D> gx = net.backward(w, tape, &grads);
  EXPECT_TRUE(tape.empty());
  const D h = 1e-6;
  Tensor<D> xp = x;
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 60)) {
    const D orig = xp[i];
    xp[i] = orig + h;
    const D up = probe(net, xp, w);
    xp[i] = orig - h;
    const D down = probe(net, xp, w);
    xp[i] = orig;
    EXPECT_LT(rel_err((up - down) / (2 * h), gx[i]), tol) << "input " << i;
  }
  for (std::size_t t = 0; t < net.params().size(); ++t) {
    Tensor<D>& p = net.params().tensors[t];
    for (std::size_t i = 0; i < p.size(); i += std::max<std::size_t>(1, p.size() / 25)) {
      const D orig = p[i];
      p[i] = orig + h;
      const D up = probe(net, x, w);
      p[i] = orig - h;
      const D down = probe(net, x, w);
      p[i] = orig;
      EXPECT_LT(rel_err((up - down) / (2 * h), grads.tensors[t][i]), tol) << net.params().names[t] << "[" << i << "]";
    }
  }
}

TEST(Layers, ConvPoolStackGradients) {
  std::mt19937_64 rng(11);
  Network<D> net({3, 12, 12});
  net.append(make_conv2d<D>("c1", {3, 12, 12}, {5, 3, 1, 1, true}, net.params(), rng));
  net.append(make_relu<D>("r1", {5, 12, 12}));
  net.append(make_max_pool<D>("p1", {5, 12, 12}, 2, 2, 0));
  net.append(make_conv2d<D>("c2", {5, 6, 6}, {4, 5, 2, 2, false}, net.params(), rng));
  net.append(make_conv2d<D>("c3", {4, 3, 3}, {6, 1, 1, 0, true}, net.params(), rng));
  net.append(make_global_max_pool<D>("gmp", {6, 3, 3}));
  check_gradients(net, random_tensor({3, 12, 12}, rng), rng, 1e-5);
}

TEST(Layers, HeadsAndAffineGradients) {
  std::mt19937_64 rng(12);
  Network<D> net({2, 5, 5});
  net.append(make_channel_affine<D>("bn", {2, 5, 5}, net.params()));
  for (D& v : net.params().tensors[0].values()) v = 1.5;
  net.append(make_conv2d<D>("c", {2, 5, 5}, {3, 3, 1, 1, true}, net.params(), rng));
  net.append(make_global_avg_pool<D>("gap", {3, 5, 5}));
  net.append(make_linear<D>("fc", {3}, 4, net.params(), rng));
  check_gradients(net, random_tensor({2, 5, 5}, rng), rng, 1e-5);

  Network<D> flat({3, 4, 4});
  flat.append(make_conv2d<D>("c", {3, 4, 4}, {2, 3, 1, 1, true}, flat.params(), rng));
  flat.append(make_flatten<D>("flat", {2, 4, 4}));
  check_gradients(flat, random_tensor({3, 4, 4}, rng), rng, 1e-5);
}

TEST(Layers, BottleneckGradients) {
  std::mt19937_64 rng(13);
  Network<D> net({4, 8, 8});
  net.append(make_bottleneck<D>("b1", {4, 8, 8}, 2, 2, net.params(), rng));
  net.append(make_bottleneck<D>("b2", {8, 4, 4}, 2, 1, net.params(), rng));
  check_gradients(net, random_tensor({4, 8, 8}, rng), rng, 1e-5);
}

TEST(Layers, GlobalMaxPoolPermutationInvariant) {
  std::mt19937_64 rng(14);
  const auto gmp = make_global_max_pool<D>("gmp", {7, 5, 6});
  ParamStore<D> none;
  const Tensor<D> x = random_tensor({7, 5, 6}, rng);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<D> px = x;
  for (int c = 0; c < 7; ++c) {
    for (std::size_t i = 0; i < 30; ++i) px[c * 30 + i] = x[c * 30 + perm[i]];
  }
  EXPECT_EQ(gmp->forward(x, none, nullptr), gmp->forward(px, none, nullptr));
}

TEST(Layers, ShapeMismatchRejected) {
  std::mt19937_64 rng(15);
  Network<float> net({3, 8, 8});
  EXPECT_THROW(net.append(make_relu<float>("r", {4, 8, 8})), Error);
}

TEST(Layers, NonFiniteActivationNamesLayer) {
  std::mt19937_64 rng(16);
  Network<float> net({1, 4, 4});
  net.append(make_conv2d<float>("conv_a", {1, 4, 4}, {2, 3, 1, 1, true}, net.params(), rng));
  net.params().tensors[0][0] = std::numeric_limits<float>::infinity();
  Tensor<float> x({1, 4, 4}, 1.0f);
  try {
    net.forward(x, nullptr, true);
    FAIL() << "expected non-finite error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("conv_a"), std::string::npos);
  }
}

TEST(Optimizer, DecayScheduleAt900) {
  EXPECT_DOUBLE_EQ(decayed_learning_rate(2e-5, 0.99, 300, 900), 2e-5 * 0.99 * 0.99 * 0.99);
  EXPECT_DOUBLE_EQ(decayed_learning_rate(2e-5, 0.99, 300, 299), 2e-5);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  // With bias correction the first step is lr * g / (|g| + eps') ~ lr * sign(g).
  ParamStore<float> p, g;
  p.add("w", Tensor<float>({3}, 1.0f));
  g.add("w", Tensor<float>({3}));
  g.tensors[0][0] = 2.0f;
  g.tensors[0][1] = -0.5f;
  AdamState state;
  adam_update(p, g, state, 0.01, {});
  EXPECT_NEAR(p.tensors[0][0], 0.99f, 1e-6);
  EXPECT_NEAR(p.tensors[0][1], 1.01f, 1e-6);
  EXPECT_EQ(p.tensors[0][2], 1.0f);
  EXPECT_EQ(state.t, 1);
}

}  // namespace
}  // namespace phishmetric::nn
