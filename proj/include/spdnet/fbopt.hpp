#pragma once

// Filterbank search: black-box optimization of sinc band cutoffs, scored by
// cross-validated proxy-classifier accuracy on the band covariances.
// Bayesian optimization uses a Gaussian process with a squared-exponential
// kernel over normalized parameters and expected improvement.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/classifiers.hpp"
#include "spdnet/dataset.hpp"
#include "spdnet/filterbank.hpp"
#include "spdnet/io.hpp"
#include "spdnet/layers.hpp"
#include "spdnet/parallel.hpp"

namespace spdnet {

enum class SearchStrategy { Bayesian, Random };

struct FbOptConfig {
  int n_filters = 1;
  Specificity specificity = Specificity::ChannelIndependent;
  bool interband = true;
  Proxy proxy = Proxy::Svm;
  Metric metric = Metric::LogEuclidean;
  int kernel_len = 25;
  double reeig_eps = kReEigThreshold;
  int cv_folds = 3;
  int budget_iters = 1000;
  double budget_hours = 12.0;
  int n_initial = 20;
  int n_candidates = 500;
  double min_low_hz = 1.0;
  std::uint64_t seed = 0;
  SearchStrategy strategy = SearchStrategy::Bayesian;
  int threads = 0;

  void validate() const {
    if (budget_iters <= 0) throw std::invalid_argument("fbopt: iteration budget must be > 0");
    if (!(budget_hours > 0.0)) throw std::invalid_argument("fbopt: walltime budget must be > 0");
    if (n_filters < 1) throw std::invalid_argument("fbopt: n_filters must be >= 1");
    if (cv_folds < 2) throw std::invalid_argument("fbopt: cv_folds must be >= 2");
    if (n_initial < 1) throw std::invalid_argument("fbopt: n_initial must be >= 1");
    if (n_candidates < 1) throw std::invalid_argument("fbopt: n_candidates must be >= 1");
  }
};

// Band parameters: one row (low_hz, bandwidth_hz) per kernel.
using BandParams = Matrix;

inline FilterbankSpec band_filterbank(const BandParams& bands, int n_electrodes, double fs_hz,
                                      const FbOptConfig& cfg) {
  FilterbankSpec fb;
  fb.n_filters = cfg.n_filters;
  fb.n_electrodes = n_electrodes;
  fb.specificity = cfg.specificity;
  fb.kind = FilterKind::Sinc;
  fb.kernel_len = cfg.kernel_len;
  fb.interband = cfg.specificity == Specificity::ChannelSpecific || cfg.interband;
  fb.fs_hz = fs_hz;
  fb.bands = bands;
  fb.validate();
  return fb;
}

// Covariances of the band-filtered trials, regularized by ReEig so that
// degenerate bands still yield SPD matrices.
inline std::vector<SpdMatrix> band_covariances(const BandParams& bands, const Dataset& data,
                                               const FbOptConfig& cfg) {
  const FilterbankSpec fb = band_filterbank(bands, data.electrodes(), data.fs_hz(), cfg);
  const Matrix kernels = fb.materialize();
  std::vector<SymmetricMatrix> pooled(data.size());
  parallel_for(data.size(), resolve_threads(cfg.threads), [&](std::size_t i) {
    pooled[i] = reeig(cov_pool(filterbank_apply(data.trials[i].samples, fb, kernels), fb),
                      cfg.reeig_eps);
  });
  std::vector<SpdMatrix> out;
  out.reserve(pooled.size());
  for (auto& p : pooled) out.emplace_back(std::move(p));
  return out;
}

inline double fbopt_objective(const BandParams& bands, const Dataset& train,
                              const FbOptConfig& cfg) {
  const std::vector<SpdMatrix> covs = band_covariances(bands, train, cfg);
  return cross_val_accuracy(covs, train.labels, train.n_classes, cfg.proxy, cfg.metric,
                            cfg.cv_folds, cfg.seed);
}

// FNV-1a over labels and sample bits; identifies the data a search saw.
inline std::uint64_t dataset_fingerprint(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    mix(static_cast<std::uint64_t>(d.labels[i]));
    const Matrix& x = d.trials[i].samples;
    for (Eigen::Index k = 0; k < x.size(); ++k) mix(std::bit_cast<std::uint64_t>(x.data()[k]));
  }
  return h;
}

struct TraceEntry {
  int iteration = 0;
  BandParams bands;
  double score = 0.0;
  double best_score = 0.0;
  double elapsed_seconds = 0.0;  // not exported
};

struct SearchResult {
  BandParams best_bands;
  double best_score = 0.0;
  int best_index = 0;
  std::vector<TraceEntry> trace;
  std::uint64_t data_fingerprint = 0;
  std::size_t trials_seen = 0;
};

// ---------------------------------------------------------------------------
// Gaussian process regression on [0, 1]^D.

class GaussianProcess {
public:
  static constexpr double kNoise = 1e-3;

  void fit(const Matrix& x, const Vector& y) {
    x_ = x;
    mean_ = y.mean();
    const double sd = std::sqrt((y.array() - mean_).square().mean());
    scale_ = sd > 1e-12 ? sd : 1.0;
    z_ = (y.array() - mean_) / scale_;
    double best = -std::numeric_limits<double>::infinity();
    for (double l : {0.05, 0.1, 0.2, 0.4, 0.8}) {
      const double ll = factorize(l);
      if (ll > best) {
        best = ll;
        lengthscale_ = l;
      }
    }
    factorize(lengthscale_);
  }

  // Posterior mean and standard deviation in the original units, one query
  // point per row.
  std::pair<Vector, Vector> predict(const Matrix& q) const {
    const Matrix k = cross_kernel(q, x_);  // queries x train
    const Vector mu = (k * alpha_).array() * scale_ + mean_;
    const Matrix v = chol_.matrixL().solve(k.transpose());
    const Vector var =
        ((1.0 + kNoise) - v.colwise().squaredNorm().transpose().array()).max(1e-12);
    return {mu, scale_ * var.array().sqrt()};
  }

  double lengthscale() const { return lengthscale_; }

private:
  Matrix cross_kernel(const Matrix& a, const Matrix& b) const {
    const Matrix d2 = (a.rowwise().squaredNorm() * Vector::Ones(b.rows()).transpose() +
                       Vector::Ones(a.rows()) * b.rowwise().squaredNorm().transpose() -
                       2.0 * a * b.transpose())
                          .cwiseMax(0.0);
    return (-0.5 / (lengthscale_ * lengthscale_) * d2).array().exp();
  }

  // Returns the log marginal likelihood for lengthscale l.
  double factorize(double l) {
    lengthscale_ = l;
    Matrix k = cross_kernel(x_, x_);
    k = 0.5 * (k + k.transpose()).eval();
    k.diagonal().setOnes();
    k.diagonal().array() += kNoise;
    chol_.compute(k);
    if (chol_.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    alpha_ = chol_.solve(z_);
    const double logdet = 2.0 * chol_.matrixLLT().diagonal().array().log().sum();
    return -0.5 * z_.dot(alpha_) - 0.5 * logdet;
  }

  Matrix x_;
  Vector z_, alpha_;
  double mean_ = 0.0, scale_ = 1.0, lengthscale_ = 0.2;
  Eigen::LLT<Matrix> chol_;
};

inline double expected_improvement(double mu, double sigma, double best, double xi = 0.01) {
  if (sigma <= 0.0) return std::max(mu - best - xi, 0.0);
  const double d = mu - best - xi;
  const double z = d / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return d * cdf + sigma * pdf;
}

// ---------------------------------------------------------------------------

// Normalized coordinates u in [0, 1]^2 per band map to
//   low = l_min + u0 (Nyquist - l_min),  bandwidth = u1 * b_max,
// with b_max = Nyquist - 1 Hz and the bandwidth kept strictly positive.
inline BandParams decode_bands(const Vector& u, double fs_hz, const FbOptConfig& cfg) {
  const double nyquist = 0.5 * fs_hz;
  const double b_max = nyquist - 1.0;
  BandParams b(u.size() / 2, 2);
  for (Eigen::Index k = 0; k < b.rows(); ++k) {
    b(k, 0) = cfg.min_low_hz + u(2 * k) * (nyquist - cfg.min_low_hz);
    b(k, 1) = std::max(u(2 * k + 1), 1e-3) * b_max;
  }
  return b;
}

inline int band_count(const FbOptConfig& cfg, int n_electrodes) {
  return cfg.specificity == Specificity::ChannelSpecific ? cfg.n_filters * n_electrodes
                                                         : cfg.n_filters;
}

// Searches band cutoffs on the training data only. Stops after the
// iteration budget or once the walltime budget is spent.
inline SearchResult fbopt_search(const Dataset& train, const FbOptConfig& cfg) {
  cfg.validate();
  train.validate();
  if (train.distinct_labels() < 2)
    throw std::invalid_argument("fbopt: training data contains a single class");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const int dims = 2 * band_count(cfg, train.electrodes());
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto random_point = [&] {
    Vector u(dims);
    for (int d = 0; d < dims; ++d) u(d) = uni(rng);
    return u;
  };

  SearchResult res;
  res.data_fingerprint = dataset_fingerprint(train);
  res.trials_seen = train.size();
  std::vector<Vector> xs;
  std::vector<double> ys;
  double best = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < cfg.budget_iters; ++it) {
    if (it > 0 && elapsed() >= cfg.budget_hours * 3600.0) break;
    Vector u;
    if (cfg.strategy == SearchStrategy::Random || it < cfg.n_initial) {
      u = random_point();
    } else {
      // Surrogate on at most 300 points: the best ones, which is where the
      // acquisition concentrates.
      std::vector<std::size_t> idx(xs.size());
      std::iota(idx.begin(), idx.end(), 0);
      if (idx.size() > 300) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return ys[a] > ys[b]; });
        idx.resize(300);
      }
      Matrix x(idx.size(), dims);
      Vector y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        x.row(i) = xs[idx[i]].transpose();
        y(i) = ys[idx[i]];
      }
      GaussianProcess gp;
      gp.fit(x, y);

      std::vector<std::size_t> order(xs.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return ys[a] > ys[b]; });
      std::normal_distribution<double> jitter(0.0, 0.05);
      Matrix cands(cfg.n_candidates, dims);
      for (int c = 0; c < cfg.n_candidates; ++c) {
        Vector cand;
        if (c % 5 == 4) {
          cand = xs[order[(c / 5) % std::min<std::size_t>(5, order.size())]];
          for (int d = 0; d < dims; ++d) cand(d) = std::clamp(cand(d) + jitter(rng), 0.0, 1.0);
        } else {
          cand = random_point();
        }
        cands.row(c) = cand.transpose();
      }
      const auto [mu, sigma] = gp.predict(cands);
      double best_ei = -1.0;
      for (int c = 0; c < cfg.n_candidates; ++c) {
        const double ei = expected_improvement(mu(c), sigma(c), best);
        if (ei > best_ei) {
          best_ei = ei;
          u = cands.row(c).transpose();
        }
      }
    }
    TraceEntry e;
    e.iteration = it;
    e.bands = decode_bands(u, train.fs_hz(), cfg);
    e.score = fbopt_objective(e.bands, train, cfg);
    if (e.score > best) {
      best = e.score;
      res.best_index = it;
      res.best_bands = e.bands;
    }
    e.best_score = best;
    e.elapsed_seconds = elapsed();
    xs.push_back(u);
    ys.push_back(e.score);
    res.trace.push_back(std::move(e));
  }
  res.best_score = best;
  return res;
}

// iteration, low_0, bandwidth_0, ..., score, best_score
inline CsvWriter trace_csv(const SearchResult& r) {
  std::vector<std::string> header{"iteration"};
  const Eigen::Index bands = r.best_bands.rows();
  for (Eigen::Index k = 0; k < bands; ++k) {
    header.push_back("low_hz_" + std::to_string(k));
    header.push_back("bandwidth_hz_" + std::to_string(k));
  }
  header.push_back("score");
  header.push_back("best_score");
  CsvWriter w(header);
  for (const auto& e : r.trace) {
    std::vector<std::string> row{std::to_string(e.iteration)};
    for (Eigen::Index k = 0; k < bands; ++k) {
      row.push_back(format_number(e.bands(k, 0)));
      row.push_back(format_number(e.bands(k, 1)));
    }
    row.push_back(format_number(e.score));
    row.push_back(format_number(e.best_score));
    w.row_strings(row);
  }
  return w;
}

}  // namespace spdnet
