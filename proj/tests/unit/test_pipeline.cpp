#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fccnn/error.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/gradcheck.hpp"
#include "fccnn/pipeline.hpp"
#include "test_support.hpp"

using namespace fccnn;
using namespace fccnn::pipeline;
using fccnn::testing::random_tensor;

namespace {

Example toy_example(std::uint64_t seed, int size = 16, int superpixels = 8) {
  std::mt19937_64 rng(seed);
  eval::ToyFace f = eval::generate_toy_face(rng, size);
  return prepare_example(std::move(f.image), std::move(f.labels), superpixels, 10.0);
}

std::vector<Example> toy_dataset(int count, int size, int superpixels) {
  std::vector<Example> out;
  for (int i = 0; i < count; ++i) out.push_back(toy_example(100 + i, size, superpixels));
  return out;
}

}  // namespace

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(1);
  const Tensor p = softmax(random_tensor(rng, 4, 5, 5, -30, 30));
  for (int i = 0; i < 25; ++i) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += p.channel(c)[i];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SoftmaxXent, EqualLogitsGiveLnK) {
  eval::LabelMap labels(2, 2, 1);
  EXPECT_NEAR(softmax_xent(Tensor(3, 2, 2, 0.4), labels).loss, std::log(3.0), 1e-15);
}

TEST(SoftmaxXent, ConfidentPixel) {
  Tensor logits(2, 1, 1);
  logits(0, 0, 0) = 10;
  logits(1, 0, 0) = -10;
  const LossAndGrad lg = softmax_xent(logits, eval::LabelMap(1, 1, 0));
  EXPECT_NEAR(lg.loss, 2.0611536e-9, 1e-15);
  EXPECT_GE(lg.loss, 0.0);
}

TEST(SoftmaxXent, FiniteDifferences) {
  std::mt19937_64 rng(2);
  Tensor logits = random_tensor(rng, 3, 4, 4, -2, 2);
  eval::LabelMap labels(4, 4);
  for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng() % 3);
  const LossAndGrad lg = softmax_xent(logits, labels);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double n = gradcheck::central_difference(logits.data()[i], [&] { return softmax_xent(logits, labels).loss; });
    EXPECT_LE(gradcheck::relative_error(lg.grad.data()[i], n), 1e-6);
  }
}

TEST(SoftmaxXent, BadLabelRejected) {
  EXPECT_THROW(softmax_xent(Tensor(3, 1, 1), eval::LabelMap(1, 1, 3)), InvalidArgument);
}

TEST(Forward, ZeroParamsGiveUniformProbabilities) {
  const Example ex = toy_example(1);
  const net::NetParams p = net::NetParams::zeros(net::ArchConfig{});
  const ForwardResult r = forward(ex.image, &ex.labels, p, ex.map, ex.graph, ModelConfig{});
  for (double v : r.probabilities.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  ASSERT_TRUE(r.loss.has_value());
  EXPECT_NEAR(*r.loss, std::log(3.0), 1e-12);
}

TEST(Forward, AblatedPairwiseMatchesUnaryPoolSoftmax) {
  const Example ex = toy_example(2);
  const net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 3);
  ModelConfig m;
  m.use_pairwise = false;
  const ForwardResult r = forward(ex.image, nullptr, p, ex.map, ex.graph, m);
  EXPECT_FALSE(r.loss.has_value());
  const net::NetForward nf = net::forward(ex.image, p, true, false);
  const Tensor expect = softmax(pool::broadcast_to_pixels(pool::pool_unary(nf.z, ex.map), ex.map));
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(r.probabilities.data()[i], expect.data()[i], 1e-12);
}

TEST(Forward, StageNameInErrors) {
  const Example ex = toy_example(3);
  const net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 3);
  ModelConfig m;
  m.lambda = -1.0;
  try {
    forward(ex.image, nullptr, p, ex.map, ex.graph, m);
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("assemble"), std::string::npos) << e.what();
  }
}

TEST(Backward, AblatedPairwiseGivesZeroPairwiseGradients) {
  const Example ex = toy_example(4);
  const net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 5);
  ModelConfig m;
  m.use_pairwise = false;
  const ForwardResult r = forward(ex.image, &ex.labels, p, ex.map, ex.graph, m);
  const net::NetParams g = backward(r.cache, p);
  for (const auto& blk : g.blocks()) {
    if (blk.branch == net::Branch::Pairwise) {
      for (double v : blk.values) EXPECT_EQ(v, 0.0) << blk.name;
    }
  }
}

TEST(Backward, DeterministicGradients) {
  const Example ex = toy_example(5);
  const net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 6);
  const auto run = [&] { return backward(forward(ex.image, &ex.labels, p, ex.map, ex.graph, ModelConfig{}).cache, p); };
  EXPECT_EQ(run(), run());
}

TEST(Backward, FullPipelineFiniteDifferences) {
  const Example ex = toy_example(6);
  ASSERT_LE(ex.map.region_count, 12);
  net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 7);
  ModelConfig m;
  m.solver = crf::SolverConfig{1e-14, 20000};
  const net::NetParams g = backward(forward(ex.image, &ex.labels, p, ex.map, ex.graph, m).cache, p);
  std::mt19937_64 rng(8);
  for (int probe = 0; probe < 30; ++probe) {
    auto& blk = p.blocks()[rng() % p.blocks().size()];
    const std::size_t i = rng() % blk.values.size();
    const double n = gradcheck::central_difference(
        blk.values[i], [&] { return *forward(ex.image, &ex.labels, p, ex.map, ex.graph, m).loss; });
    EXPECT_LE(gradcheck::relative_error(g.block(blk.name).values[i], n), 1e-3) << blk.name << "[" << i << "]";
  }
}

TEST(Sgd, PlainStepAndMomentum) {
  net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 1);
  const net::NetParams g = p;
  net::NetParams v = p.zeros_like();
  sgd_step(p, g, 1.0, 0.0, v);
  for (const auto& blk : p.blocks())
    for (double x : blk.values) EXPECT_EQ(x, 0.0);

  net::NetParams q = net::NetParams::initialize(net::ArchConfig{}, 2);
  const net::NetParams q0 = q;
  net::NetParams gq = q.zeros_like();
  gq.fill(0.5);
  net::NetParams vq = q.zeros_like();
  sgd_step(q, gq, 0.1, 0.9, vq);
  for (std::size_t b = 0; b < q.blocks().size(); ++b)
    for (std::size_t i = 0; i < q.blocks()[b].values.size(); ++i)
      EXPECT_DOUBLE_EQ(q.blocks()[b].values[i], q0.blocks()[b].values[i] - 0.05);
}

TEST(Sgd, QuadraticBowlConverges) {
  // L = 1/2 sum (theta - t)^2, gradient theta - t.
  net::NetParams theta = net::NetParams::zeros(net::ArchConfig{});
  net::NetParams target = net::NetParams::initialize(net::ArchConfig{}, 3);
  net::NetParams v = theta.zeros_like();
  for (int step = 0; step < 200; ++step) {
    net::NetParams g = theta;
    for (std::size_t b = 0; b < g.blocks().size(); ++b)
      for (std::size_t i = 0; i < g.blocks()[b].values.size(); ++i)
        g.blocks()[b].values[i] -= target.blocks()[b].values[i];
    sgd_step(theta, g, 0.1, 0.5, v);
  }
  for (std::size_t b = 0; b < theta.blocks().size(); ++b)
    for (std::size_t i = 0; i < theta.blocks()[b].values.size(); ++i)
      EXPECT_NEAR(theta.blocks()[b].values[i], target.blocks()[b].values[i], 1e-6);
}

TEST(Train, LossDropsAfterFirstEpochAndIsDeterministic) {
  const auto data = toy_dataset(8, 32, 24);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.superpixels = 24;
  cfg.learning_rate = 0.05;
  double init_loss = 0;
  const net::NetParams init = net::NetParams::initialize(cfg.arch, cfg.seed);
  for (const auto& ex : data) init_loss += *forward(ex.image, &ex.labels, init, ex.map, ex.graph, cfg.model).loss;
  init_loss /= data.size();

  const TrainResult a = train(data, cfg);
  const TrainResult b = train(data, cfg);
  ASSERT_EQ(a.history.size(), 2u);
  double after = 0;
  for (const auto& ex : data) after += *forward(ex.image, &ex.labels, a.params, ex.map, ex.graph, cfg.model).loss;
  after /= data.size();
  EXPECT_LT(after, init_loss);
  EXPECT_EQ(a.history[0].loss, b.history[0].loss);
  EXPECT_EQ(format_metrics(a.history[1]), format_metrics(b.history[1]));
  EXPECT_EQ(a.params, b.params);
}

TEST(Train, CallbackAndDecay) {
  const auto data = toy_dataset(2, 16, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.superpixels = 8;
  cfg.lr_decay_every = 2;
  int calls = 0;
  const TrainResult r = train(data, cfg, [&](const EpochMetrics& m, const net::NetParams&) { EXPECT_EQ(m.epoch, ++calls); });
  EXPECT_EQ(calls, 3);
  EXPECT_DOUBLE_EQ(r.history[0].learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(r.history[1].learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(r.history[2].learning_rate, 0.005);
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_THROW(train({}, TrainConfig{}), InvalidArgument);
}

TEST(Infer, RegionConstantLabelsWithInputExtent) {
  const Example ex = toy_example(9, 32, 20);
  const net::NetParams p = net::NetParams::initialize(net::ArchConfig{}, 9);
  const eval::LabelMap l = infer(ex, p, ModelConfig{});
  EXPECT_EQ(l.height, 32);
  EXPECT_EQ(l.width, 32);
  std::vector<int> region_label(ex.map.region_count, -1);
  for (std::size_t i = 0; i < l.labels.size(); ++i) {
    int& r = region_label[ex.map.labels[i]];
    if (r < 0) r = l.labels[i];
    EXPECT_EQ(r, l.labels[i]);
  }
}

TEST(Metrics, FormatIsStable) {
  EpochMetrics m{3, 0.5, 0.75, 0.25, 0.01};
  EXPECT_EQ(format_metrics(m).rfind("epoch=3 loss=0.5", 0), 0u) << format_metrics(m);
}
