#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fccnn/ccrf.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/featnet.hpp"
#include "fccnn/sp_graph.hpp"
#include "fccnn/sppool.hpp"

namespace fccnn::pipeline {

using eval::LabelMap;

/// Options that shape a single forward/backward pass.
struct ModelConfig {
  double lambda = 1.0;
  crf::SolverConfig solver;
  /// When false the pairwise branch is skipped and W is held at zero.
  bool use_pairwise = true;
  pool::UnaryBackwardMode unary_backward = pool::UnaryBackwardMode::Adjoint;
};

struct TrainConfig {
  net::ArchConfig arch;
  ModelConfig model;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 1;
  int lr_decay_every = 20;  // epochs; 0 disables
  double lr_decay = 0.5;
  int superpixels = 256;
  double compactness = 10.0;
  std::uint64_t seed = 42;

  int classes() const noexcept { return arch.classes; }
  /// Throws InvalidArgument on out-of-range values.
  void validate() const;
};

/// Everything the backward pass needs from a forward pass.
struct ForwardCache {
  const sp::SuperpixelMap* map = nullptr;
  const sp::SuperpixelGraph* graph = nullptr;
  ModelConfig model;
  net::NetCache net;
  pool::RegionFeatures zs;
  pool::RegionAffinity w;
  crf::CrfSystem system;
  pool::RegionFeatures zc;
  Tensor probabilities;
  std::optional<LabelMap> labels;
};

struct ForwardResult {
  Tensor probabilities;  // K x H x W, softmax over broadcast Z_c
  std::optional<double> loss;
  ForwardCache cache;
};

/// unary -> pool_unary -> pairwise -> pool_pairwise -> assemble -> C-CRF
/// -> broadcast to pixels -> softmax (-> mean cross-entropy if labels given).
/// Errors are rethrown with the failing stage's name prefixed.
ForwardResult forward(const Tensor& image, const LabelMap* labels, const net::NetParams& params,
                      const sp::SuperpixelMap& map, const sp::SuperpixelGraph& graph, const ModelConfig& model);

/// Requires a cache built with labels. Returns dL/dparams.
net::NetParams backward(const ForwardCache& cache, const net::NetParams& params);

/// Per-pixel softmax over channels.
Tensor softmax(const Tensor& logits);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

/// -(1/HW) sum_i log softmax(logits_i)[label_i], with gradient
/// (softmax - onehot) / HW.
LossAndGrad softmax_xent(const Tensor& logits, const LabelMap& labels);

/// Argmax over channels per pixel (lowest index wins ties).
LabelMap argmax_labels(const Tensor& scores);

/// v <- momentum * v - lr * g;  theta <- theta + v.
void sgd_step(net::NetParams& params, const net::NetParams& grads, double learning_rate, double momentum,
              net::NetParams& velocity);

/// A training or evaluation image with its oversegmentation.
struct Example {
  std::string source;
  Tensor image;
  LabelMap labels;
  sp::SuperpixelMap map;
  sp::SuperpixelGraph graph;
};

Example prepare_example(Tensor image, LabelMap labels, int superpixels, double compactness, std::string source = {});

/// Loads every manifest entry and oversegments it. I/O and shape errors name
/// the offending file.
std::vector<Example> load_dataset(const eval::DatasetManifest& manifest, int superpixels, double compactness);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double pixel_accuracy = 0.0;
  double mean_f = 0.0;
  double learning_rate = 0.0;
};

/// Canonical metrics line: "epoch=1 loss=... pixel_acc=... mean_f=... lr=...".
std::string format_metrics(const EpochMetrics& m);

struct TrainResult {
  net::NetParams params;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&, const net::NetParams&)>;

/// Seeded SGD over a shuffled dataset. Metrics are computed from the
/// training forward passes of each epoch.
TrainResult train(const std::vector<Example>& dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Like train() but continues from `initial` instead of a fresh init.
TrainResult train_from(net::NetParams initial, const std::vector<Example>& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

LabelMap infer(const Example& example, const net::NetParams& params, const ModelConfig& model);
LabelMap infer(const Tensor& image, const net::NetParams& params, const TrainConfig& config);

/// Runs infer over every example and scores it.
eval::EvalReport evaluate_model(const std::vector<Example>& dataset, const net::NetParams& params,
                                const ModelConfig& model, const std::vector<std::string>& class_names = {});

}  // namespace fccnn::pipeline
