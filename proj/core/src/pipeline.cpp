#include "fccnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "fccnn/error.hpp"

namespace fccnn::pipeline {

namespace {

// Runs fn, prefixing any error message with the stage name.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string(name) + ": " + e.what());
  } catch (const SolverError& e) {
    throw SolverError(std::string(name) + ": " + e.what());
  }
}

void check_labels(const LabelMap& labels, int classes, int height, int width) {
  if (labels.height != height || labels.width != width) {
    throw InvalidArgument("labels are " + std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                          ", scores are " + std::to_string(height) + "x" + std::to_string(width));
  }
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] >= classes) {
      throw InvalidArgument("label " + std::to_string(labels.labels[i]) + " at pixel " + std::to_string(i) +
                            " is not below the class count " + std::to_string(classes));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must be in [0, 1)");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (lr_decay_every < 0 || !(lr_decay > 0.0)) throw InvalidArgument("invalid learning-rate decay");
  if (!(model.lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (superpixels < 2) throw InvalidArgument("superpixel target must be at least 2");
  if (!(compactness > 0.0)) throw InvalidArgument("compactness must be positive");
}

Tensor softmax(const Tensor& logits) {
  Tensor probs(logits.channels(), logits.height(), logits.width());
  const std::size_t plane = logits.plane_size();
  const int k = logits.channels();
  const auto in = logits.data();
  auto out = probs.data();
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = in[i];
    for (int c = 1; c < k; ++c) mx = std::max(mx, in[c * plane + i]);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = std::exp(in[c * plane + i] - mx);
      out[c * plane + i] = e;
      sum += e;
    }
    for (int c = 0; c < k; ++c) out[c * plane + i] /= sum;
  }
  return probs;
}

LossAndGrad softmax_xent(const Tensor& logits, const LabelMap& labels) {
  check_labels(labels, logits.channels(), logits.height(), logits.width());
  LossAndGrad r;
  r.grad = softmax(logits);
  const std::size_t plane = logits.plane_size();
  const double inv = 1.0 / static_cast<double>(plane);
  const auto in = logits.data();
  auto g = r.grad.data();
  const int k = logits.channels();
  double loss = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = in[i];
    for (int c = 1; c < k; ++c) mx = std::max(mx, in[c * plane + i]);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) sum += std::exp(in[c * plane + i] - mx);
    const int y = labels.labels[i];
    loss -= in[y * plane + i] - mx - std::log(sum);
    g[y * plane + i] -= 1.0;
  }
  for (double& v : g) v *= inv;
  r.loss = loss * inv;
  return r;
}

LabelMap argmax_labels(const Tensor& scores) {
  LabelMap out(scores.height(), scores.width());
  const std::size_t plane = scores.plane_size();
  const auto in = scores.data();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < scores.channels(); ++c) {
      if (in[c * plane + i] > in[best * plane + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

ForwardResult forward(const Tensor& image, const LabelMap* labels, const net::NetParams& params,
                      const sp::SuperpixelMap& map, const sp::SuperpixelGraph& graph, const ModelConfig& model) {
  if (image.height() != map.height || image.width() != map.width || graph.height != map.height ||
      graph.width != map.width || graph.region_count != map.region_count) {
    throw InvalidArgument("forward: image " + image.shape_string() + ", superpixel map and graph disagree in extent");
  }
  ForwardResult out;
  ForwardCache& cache = out.cache;
  cache.map = &map;
  cache.graph = &graph;
  cache.model = model;

  net::NetForward nf = stage("network", [&] { return net::forward(image, params, true, model.use_pairwise); });
  cache.zs = stage("pool_unary", [&] { return pool::pool_unary(nf.z, map); });
  cache.w = stage("pool_pairwise", [&] {
    return model.use_pairwise ? pool::pool_pairwise(nf.wp, graph) : pool::zero_affinity(graph);
  });
  cache.system = stage("assemble_system", [&] { return crf::assemble_system(cache.w, model.lambda, model.solver); });
  cache.zc = stage("ccrf_forward", [&] { return crf::ccrf_forward(cache.zs, cache.system).zc; });
  cache.net = std::move(nf.cache);

  const Tensor logits = pool::broadcast_to_pixels(cache.zc, map);
  cache.probabilities = softmax(logits);
  out.probabilities = cache.probabilities;
  if (labels) {
    out.loss = stage("softmax_xent", [&] { return softmax_xent(logits, *labels).loss; });
    cache.labels = *labels;
  }
  return out;
}

net::NetParams backward(const ForwardCache& cache, const net::NetParams& params) {
  if (!cache.labels || !cache.map || !cache.graph) {
    throw InvalidArgument("backward: forward cache was built without labels");
  }
  const sp::SuperpixelMap& map = *cache.map;
  const LabelMap& labels = *cache.labels;

  // d(mean xent)/d logits = (softmax - onehot) / HW.
  Tensor grad_logits = cache.probabilities;
  const std::size_t plane = grad_logits.plane_size();
  auto g = grad_logits.data();
  for (std::size_t i = 0; i < plane; ++i) g[labels.labels[i] * plane + i] -= 1.0;
  const double inv = 1.0 / static_cast<double>(plane);
  for (double& v : g) v *= inv;

  const pool::RegionFeatures grad_zc = pool::broadcast_backward(grad_logits, map);
  const pool::RegionFeatures grad_zs =
      stage("ccrf_backward_zs", [&] { return crf::ccrf_backward_zs(grad_zc, cache.system).zc; });
  const Tensor grad_z = pool::pool_unary_backward(grad_zs, map, cache.model.unary_backward);

  net::NetParams grads = params.zeros_like();
  if (cache.model.use_pairwise) {
    const crf::PhiGradient grad_phi = crf::ccrf_backward_phi(grad_zs, cache.zc, cache.system);
    const std::vector<double> grad_w = crf::ccrf_backward_w(grad_phi, cache.system);
    const net::PixelAffinity grad_wp = pool::pool_pairwise_backward(grad_w, *cache.graph);
    net::backward(cache.net, params, &grad_z, &grad_wp, grads);
  } else {
    net::backward(cache.net, params, &grad_z, nullptr, grads);
  }
  return grads;
}

void sgd_step(net::NetParams& params, const net::NetParams& grads, double learning_rate, double momentum,
              net::NetParams& velocity) {
  auto& pb = params.blocks();
  const auto& gb = grads.blocks();
  auto& vb = velocity.blocks();
  if (pb.size() != gb.size() || pb.size() != vb.size()) throw InvalidArgument("sgd_step: block count mismatch");
  for (std::size_t b = 0; b < pb.size(); ++b) {
    auto& theta = pb[b].values;
    const auto& grad = gb[b].values;
    auto& vel = vb[b].values;
    if (theta.size() != grad.size() || theta.size() != vel.size()) {
      throw InvalidArgument("sgd_step: shape mismatch in block " + pb[b].name);
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      vel[i] = momentum * vel[i] - learning_rate * grad[i];
      theta[i] += vel[i];
    }
  }
}

Example prepare_example(Tensor image, LabelMap labels, int superpixels, double compactness, std::string source) {
  Example ex;
  ex.source = std::move(source);
  sp::SlicOptions slic;
  slic.compactness = compactness;
  ex.map = sp::oversegment(image, superpixels, slic);
  ex.graph = sp::build_graph(ex.map);
  ex.image = std::move(image);
  ex.labels = std::move(labels);
  return ex;
}

std::vector<Example> load_dataset(const eval::DatasetManifest& manifest, int superpixels, double compactness) {
  std::vector<Example> out;
  out.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    try {
      Tensor image = eval::load_image(entry.image);
      LabelMap labels = eval::load_labels(entry.labels, manifest.classes());
      if (labels.height != image.height() || labels.width != image.width()) {
        throw InvalidArgument("label map " + entry.labels.string() + " does not match the image extent");
      }
      out.push_back(prepare_example(std::move(image), std::move(labels), superpixels, compactness, entry.image.string()));
    } catch (const FormatError& e) {
      throw FormatError(entry.image.string() + ": " + e.what(), e.offset());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(entry.image.string() + ": " + e.what());
    }
  }
  return out;
}

std::string format_metrics(const EpochMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch=" << m.epoch << " loss=" << m.loss << " pixel_acc=" << m.pixel_accuracy << " mean_f=" << m.mean_f
     << " lr=" << m.learning_rate;
  return os.str();
}

TrainResult train(const std::vector<Example>& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  return train_from(net::NetParams::initialize(config.arch, config.seed), dataset, config, on_epoch);
}

TrainResult train_from(net::NetParams initial, const std::vector<Example>& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("train: dataset is empty");
  if (initial.arch() != config.arch) throw InvalidArgument("train: initial parameters use a different architecture");

  TrainResult result;
  result.params = std::move(initial);
  net::NetParams velocity = result.params.zeros_like();
  net::NetParams batch_grads = result.params.zeros_like();

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.lr_decay_every > 0) lr *= std::pow(config.lr_decay, (epoch - 1) / config.lr_decay_every);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::vector<LabelMap> preds;
    std::vector<LabelMap> gts;
    preds.reserve(dataset.size());
    gts.reserve(dataset.size());
    int in_batch = 0;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const Example& ex = dataset[order[n]];
      ForwardResult fr;
      try {
        fr = forward(ex.image, &ex.labels, result.params, ex.map, ex.graph, config.model);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(ex.source + ": " + e.what());
      }
      if (!std::isfinite(*fr.loss)) {
        throw SolverError("training diverged: non-finite loss on " + ex.source + " in epoch " + std::to_string(epoch));
      }
      loss_sum += *fr.loss;
      preds.push_back(argmax_labels(fr.probabilities));
      gts.push_back(ex.labels);

      const net::NetParams grads = backward(fr.cache, result.params);
      for (std::size_t b = 0; b < grads.blocks().size(); ++b) {
        auto& acc = batch_grads.blocks()[b].values;
        const auto& src = grads.blocks()[b].values;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
      }
      ++in_batch;
      if (in_batch == config.batch_size || n + 1 == order.size()) {
        if (in_batch > 1) {
          const double scale = 1.0 / in_batch;
          for (auto& blk : batch_grads.blocks())
            for (double& v : blk.values) v *= scale;
        }
        sgd_step(result.params, batch_grads, lr, config.momentum, velocity);
        batch_grads.fill(0.0);
        in_batch = 0;
      }
    }

    const eval::EvalReport report = eval::evaluate(preds, gts, config.classes());
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(dataset.size());
    m.pixel_accuracy = report.overall_accuracy;
    m.mean_f = report.mean_f();
    m.learning_rate = lr;
    result.history.push_back(m);
    if (on_epoch) on_epoch(m, result.params);
  }
  return result;
}

LabelMap infer(const Example& example, const net::NetParams& params, const ModelConfig& model) {
  const ForwardResult fr = forward(example.image, nullptr, params, example.map, example.graph, model);
  return argmax_labels(fr.probabilities);
}

LabelMap infer(const Tensor& image, const net::NetParams& params, const TrainConfig& config) {
  Example ex = prepare_example(image, LabelMap(image.height(), image.width()), config.superpixels, config.compactness);
  return infer(ex, params, config.model);
}

eval::EvalReport evaluate_model(const std::vector<Example>& dataset, const net::NetParams& params,
                                const ModelConfig& model, const std::vector<std::string>& class_names) {
  std::vector<LabelMap> preds;
  std::vector<LabelMap> gts;
  for (const auto& ex : dataset) {
    preds.push_back(infer(ex, params, model));
    gts.push_back(ex.labels);
  }
  eval::EvalReport report = eval::evaluate(preds, gts, params.arch().classes);
  if (class_names.size() == static_cast<std::size_t>(report.classes())) report.class_names = class_names;
  return report;
}

}  // namespace fccnn::pipeline
