#pragma once

// Riemannian proxy classifiers: minimum distance to Riemannian mean (rMDM),
// linear SVM on (tangent-space) vectors (SVM / rSVM), and stratified k-fold
// cross-validation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/error.hpp"
#include "spdnet/spd.hpp"

namespace spdnet {

// ---------------------------------------------------------------------------
// rMDM

struct MdmModel {
  Metric metric = Metric::LogEuclidean;
  std::vector<SpdMatrix> means;  // one per class
};

inline MdmModel mdm_fit(std::span<const SpdMatrix> set, std::span<const int> labels,
                        int n_classes, Metric metric) {
  if (set.size() != labels.size())
    throw std::invalid_argument("mdm_fit: matrices and labels differ in count");
  MdmModel m;
  m.metric = metric;
  for (int k = 0; k < n_classes; ++k) {
    std::vector<SpdMatrix> members;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (labels[i] == k) members.push_back(set[i]);
    if (members.empty())
      throw std::invalid_argument("mdm_fit: class " + std::to_string(k) + " has no trials");
    m.means.push_back(frechet_mean(members, metric));
  }
  return m;
}

// Nearest class mean; ties go to the lower class index.
inline int mdm_predict(const MdmModel& m, const SpdMatrix& s) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m.means.size(); ++k) {
    const double d = distance(s, m.means[k], m.metric);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Linear SVM, L2-regularized hinge loss, dual coordinate descent.
// The bias is a constant-1 feature and is regularized with the weights:
//   min 1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w.x_i + b))

struct SvmOptions {
  double c = 1.0;
  double tolerance = 1e-6;  // duality gap
  int max_passes = 10000;
  std::uint64_t seed = 0;
};

struct BinarySvm {
  Vector weight;
  double bias = 0.0;

  double decision(const Vector& x) const { return weight.dot(x) + bias; }
};

inline double svm_primal_objective(const BinarySvm& m, std::span<const Vector> x,
                                   std::span<const int> y, double c) {
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    hinge += std::max(0.0, 1.0 - y[i] * m.decision(x[i]));
  return 0.5 * (m.weight.squaredNorm() + m.bias * m.bias) + c * hinge;
}

struct BinarySvmFit {
  BinarySvm model;
  double gap = 0.0;
  int passes = 0;
};

// y in {-1, +1}.
inline BinarySvmFit svm_fit_binary(std::span<const Vector> x, std::span<const int> y,
                                   const SvmOptions& opt = {}) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("svm_fit: no training vectors");
  const Eigen::Index d = x.front().size();
  Vector w = Vector::Zero(d);
  double b = 0.0;
  std::vector<double> alpha(n, 0.0), qdiag(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != d) throw std::invalid_argument("svm_fit: vectors of different length");
    if (!x[i].allFinite()) throw NumericFailure("svm_fit: non-finite feature vector");
    qdiag[i] = x[i].squaredNorm() + 1.0;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);

  BinarySvmFit out;
  for (int pass = 1; pass <= opt.max_passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const double yi = y[i];
      const double g = yi * (w.dot(x[i]) + b) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= opt.c) pg = std::max(g, 0.0);
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qdiag[i], 0.0, opt.c);
      const double delta = (alpha[i] - old) * yi;
      w += delta * x[i];
      b += delta;
    }
    out.model = {w, b};
    const double primal = svm_primal_objective(out.model, x, y, opt.c);
    const double dual = std::accumulate(alpha.begin(), alpha.end(), 0.0) -
                        0.5 * (w.squaredNorm() + b * b);
    out.gap = primal - dual;
    out.passes = pass;
    if (out.gap <= opt.tolerance) break;
  }
  return out;
}

// One-vs-rest for more than two classes; a single machine for two.
struct LinearSvmModel {
  int n_classes = 0;
  std::vector<BinarySvm> machines;

  Vector decision(const Vector& x) const {
    Vector out(machines.size());
    for (std::size_t k = 0; k < machines.size(); ++k) out(k) = machines[k].decision(x);
    return out;
  }
};

inline LinearSvmModel svm_fit(std::span<const Vector> x, std::span<const int> labels,
                              int n_classes, const SvmOptions& opt = {}) {
  if (x.size() != labels.size())
    throw std::invalid_argument("svm_fit: vectors and labels differ in count");
  std::vector<int> present(std::max(n_classes, 0), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes)
      throw std::invalid_argument("svm_fit: label " + std::to_string(l) + " out of range");
    present[l] = 1;
  }
  if (std::accumulate(present.begin(), present.end(), 0) < 2)
    throw std::invalid_argument("svm_fit: training data contains a single class");
  LinearSvmModel m;
  m.n_classes = n_classes;
  const int machines = n_classes == 2 ? 1 : n_classes;
  for (int k = 0; k < machines; ++k) {
    const int positive = n_classes == 2 ? 1 : k;
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == positive ? 1 : -1;
    SvmOptions o = opt;
    o.seed = opt.seed + static_cast<std::uint64_t>(k);
    m.machines.push_back(svm_fit_binary(x, y, o).model);
  }
  return m;
}

// Highest one-vs-rest score; ties go to the lower class index.
inline int svm_predict(const LinearSvmModel& m, const Vector& x) {
  if (m.n_classes == 2) return m.machines.front().decision(x) > 0.0 ? 1 : 0;
  const Vector s = m.decision(x);
  int best = 0;
  for (int k = 1; k < s.size(); ++k)
    if (s(k) > s(best)) best = k;
  return best;
}

// ---------------------------------------------------------------------------
// rSVM: tangent-space vectorization followed by the linear SVM. LEM uses
// the plain matrix logarithm, AIRM whitens by the training Frechet mean.

struct RsvmModel {
  Metric metric = Metric::LogEuclidean;
  Matrix whitening;  // P^{-1/2}, AIRM only
  LinearSvmModel svm;

  Vector transform(const SpdMatrix& s) const {
    if (metric == Metric::LogEuclidean) return tangent_vectorize(s);
    return vectorize(spd_map(SymmetricMatrix(Matrix(whitening * s.matrix() * whitening)),
                             SpectralFn::log()));
  }
};

inline RsvmModel rsvm_fit(std::span<const SpdMatrix> set, std::span<const int> labels,
                          int n_classes, Metric metric, const SvmOptions& opt = {}) {
  if (set.empty()) throw std::invalid_argument("rsvm_fit: no training matrices");
  RsvmModel m;
  m.metric = metric;
  if (metric == Metric::AffineInvariant)
    m.whitening = spd_map(frechet_mean(set, metric).eig(), SpectralFn::inv_sqrt()).matrix();
  std::vector<Vector> x;
  x.reserve(set.size());
  for (const auto& s : set) x.push_back(m.transform(s));
  m.svm = svm_fit(x, labels, n_classes, opt);
  return m;
}

inline int rsvm_predict(const RsvmModel& m, const SpdMatrix& s) {
  return svm_predict(m.svm, m.transform(s));
}

// ---------------------------------------------------------------------------
// Stratified k-fold: within each class, trials are shuffled with the seed and
// dealt to folds round-robin starting from fold 0.

inline std::vector<int> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2");
  if (labels.empty()) throw std::invalid_argument("stratified_kfold: no labels");
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw std::invalid_argument("stratified_kfold: negative label");
    members[labels[i]].push_back(i);
  }
  for (const auto& m : members)
    if (!m.empty() && static_cast<int>(m.size()) < k)
      throw std::invalid_argument("stratified_kfold: k = " + std::to_string(k) +
                                  " exceeds the smallest class count (" +
                                  std::to_string(m.size()) + ")");
  std::mt19937_64 rng(seed);
  std::vector<int> fold(labels.size(), 0);
  for (auto& m : members) {
    std::shuffle(m.begin(), m.end(), rng);
    for (std::size_t j = 0; j < m.size(); ++j) fold[m[j]] = static_cast<int>(j % k);
  }
  return fold;
}

enum class Proxy { Mdm, Svm };

inline const char* proxy_name(Proxy p) { return p == Proxy::Mdm ? "rmdm" : "rsvm"; }
inline Proxy parse_proxy(const std::string& s) {
  if (s == "rmdm" || s == "mdm") return Proxy::Mdm;
  if (s == "rsvm" || s == "svm") return Proxy::Svm;
  throw std::invalid_argument("unknown proxy '" + s + "' (expected rmdm|rsvm)");
}

// k-fold cross-validated accuracy (pooled over folds) of rMDM or rSVM.
inline double cross_val_accuracy(std::span<const SpdMatrix> set, std::span<const int> labels,
                                 int n_classes, Proxy proxy, Metric metric, int k,
                                 std::uint64_t seed) {
  const std::vector<int> folds = stratified_kfold(labels, k, seed);
  std::size_t correct = 0;
  for (int f = 0; f < k; ++f) {
    std::vector<SpdMatrix> tr;
    std::vector<int> tr_labels;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (folds[i] != f) {
        tr.push_back(set[i]);
        tr_labels.push_back(labels[i]);
      }
    if (proxy == Proxy::Mdm) {
      const MdmModel m = mdm_fit(tr, tr_labels, n_classes, metric);
      for (std::size_t i = 0; i < set.size(); ++i)
        if (folds[i] == f) correct += mdm_predict(m, set[i]) == labels[i];
    } else {
      SvmOptions opt;
      opt.seed = seed;
      const RsvmModel m = rsvm_fit(tr, tr_labels, n_classes, metric, opt);
      for (std::size_t i = 0; i < set.size(); ++i)
        if (folds[i] == f) correct += rsvm_predict(m, set[i]) == labels[i];
    }
  }
  return double(correct) / double(set.size());
}

}  // namespace spdnet
