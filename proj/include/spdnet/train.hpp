#pragma once

// Minibatch training of the SPD network and evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/classifiers.hpp"
#include "spdnet/dataset.hpp"
#include "spdnet/network.hpp"
#include "spdnet/optim.hpp"
#include "spdnet/parallel.hpp"

namespace spdnet {

struct RunConfig {
  int n_filters = 1;
  Specificity specificity = Specificity::ChannelIndependent;
  FilterKind filter_kind = FilterKind::Conv;
  bool interband = true;
  int n_bire = 3;
  int kernel_len = 25;
  int epochs = 1000;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double reeig_eps = kReEigThreshold;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int n_classes = 0;  // 0: taken from the data
  Proxy proxy = Proxy::Svm;
  Metric metric = Metric::LogEuclidean;
  bool freeze_filterbank = false;
  std::vector<std::pair<double, double>> bands;  // fixed (low, bandwidth) per kernel
  double test_fraction = 0.2;
  int threads = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
    if (n_filters < 1) throw std::invalid_argument("config: n_filters must be >= 1");
    if (n_bire < 0) throw std::invalid_argument("config: n_bire must be >= 0");
    if (kernel_len < 1) throw std::invalid_argument("config: kernel_len must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("config: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be >= 0");
    if (!(reeig_eps > 0.0)) throw std::invalid_argument("config: reeig_eps must be > 0");
  }
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

struct TrainResult {
  NetworkState state;
  TrainReport report;
};

struct Evaluation {
  double accuracy = 0.0;
  std::vector<int> predictions;
  std::vector<Vector> logits;
};

inline NetworkShape shape_for(const RunConfig& cfg, const Dataset& d) {
  NetworkShape s;
  s.n_electrodes = d.electrodes();
  s.n_classes = cfg.n_classes > 0 ? cfg.n_classes : d.n_classes;
  s.fs_hz = d.fs_hz();
  s.n_filters = cfg.n_filters;
  s.specificity = cfg.specificity;
  s.kind = cfg.filter_kind;
  s.interband = cfg.interband;
  s.kernel_len = cfg.kernel_len;
  s.n_bire = cfg.n_bire;
  s.reeig_eps = cfg.reeig_eps;
  return s;
}

// Argmax of the logits; ties go to the lower class index.
inline Evaluation evaluate(const NetworkState& s, const Dataset& d, int threads = 0) {
  if (d.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (d.electrodes() != s.filterbank.n_electrodes)
    throw std::invalid_argument("evaluate: data has " + std::to_string(d.electrodes()) +
                                " electrodes, model expects " +
                                std::to_string(s.filterbank.n_electrodes));
  Evaluation ev;
  ev.predictions.resize(d.size());
  ev.logits.resize(d.size());
  parallel_for(d.size(), resolve_threads(threads), [&](std::size_t i) {
    const ForwardCache c = network_forward(s, d.trials[i]);
    ev.logits[i] = c.head.logits;
    ev.predictions[i] = predict_class(c.head.logits);
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += ev.predictions[i] == d.labels[i];
  ev.accuracy = double(correct) / double(d.size());
  return ev;
}

using EpochCallback = std::function<void(int epoch, double loss)>;

// Trains one network from `seed`. Batch gradients are means over the batch,
// reduced in trial order; minibatch order is reshuffled every epoch from
// the seed; the learning rate follows a cosine schedule over the epochs.
inline TrainResult train(const Dataset& data, const RunConfig& cfg, std::uint64_t seed,
                         const Dataset* test = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  data.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.distinct_labels() < 2)
    throw std::invalid_argument("train: dataset contains a single class");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult out;
  out.report.seed = seed;
  NetworkShape shape = shape_for(cfg, data);
  out.state = init_network(shape, seed);
  NetworkState& s = out.state;
  if (!cfg.bands.empty()) {
    if (cfg.filter_kind != FilterKind::Sinc)
      throw std::invalid_argument("train: fixed bands require filter_kind = sinc");
    if (static_cast<int>(cfg.bands.size()) != s.filterbank.n_kernels())
      throw std::invalid_argument("train: expected " + std::to_string(s.filterbank.n_kernels()) +
                                  " bands, got " + std::to_string(cfg.bands.size()));
    for (std::size_t k = 0; k < cfg.bands.size(); ++k) {
      s.filterbank.bands(k, 0) = cfg.bands[k].first;
      s.filterbank.bands(k, 1) = cfg.bands[k].second;
    }
  }
  s.filterbank_frozen = cfg.freeze_filterbank;

  const int threads = resolve_threads(cfg.threads);
  // A frozen filterbank makes the pooled covariances constant.
  std::vector<SymmetricMatrix> pooled;
  if (s.filterbank_frozen) {
    pooled.resize(data.size());
    parallel_for(data.size(), threads,
                 [&](std::size_t i) { pooled[i] = pooled_covariance(s, data.trials[i]); });
  }

  RiemannianAdam opt({cfg.lr, cfg.weight_decay});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      std::vector<LossAndGrad> slots(n);
      parallel_for(n, threads, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        slots[b] = s.filterbank_frozen ? network_loss_grad_pooled(s, pooled[i], data.labels[i])
                                       : network_loss_grad(s, data.trials[i], data.labels[i]);
      });
      NetworkGrad g = NetworkGrad::zeros_like(s);
      for (const auto& slot : slots) {
        g += slot.grad;
        loss_sum += slot.loss;
      }
      g *= 1.0 / double(n);
      auto params = parameter_refs(s, g);
      opt.step(params, lr);
    }
    const double mean_loss = loss_sum / double(data.size());
    out.report.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }

  out.report.train_accuracy = evaluate(s, data, threads).accuracy;
  if (test && !test->empty()) out.report.test_accuracy = evaluate(s, *test, threads).accuracy;
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// One training run per configured seed.
inline std::vector<TrainResult> train_seeds(const Dataset& data, const RunConfig& cfg,
                                            const Dataset* test = nullptr) {
  cfg.validate();
  std::vector<TrainResult> out;
  for (auto seed : cfg.seeds) out.push_back(train(data, cfg, seed, test));
  return out;
}

}  // namespace spdnet
