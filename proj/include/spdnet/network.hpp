#pragma once

// EE(G)-SPDNet: filterbank -> covariance pooling -> N x (BiMap, ReEig) ->
// LogEig -> vectorize -> affine softmax head, with exact reverse mode.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/error.hpp"
#include "spdnet/filterbank.hpp"
#include "spdnet/layers.hpp"
#include "spdnet/spd.hpp"

namespace spdnet {

struct BiReLayer {
  Matrix weight;  // d_in x d_out, orthonormal columns
  double reeig_eps = kReEigThreshold;
};

struct NetworkState {
  FilterbankSpec filterbank;
  bool filterbank_frozen = false;
  std::vector<BiReLayer> layers;
  Head head;

  int n_classes() const { return head.classes(); }
  int input_dim() const { return filterbank.channels(); }
  int output_dim() const {
    return layers.empty() ? input_dim() : static_cast<int>(layers.back().weight.cols());
  }
};

// Matrix side after each BiMap: ceil-halving starting from the pooled size.
inline std::vector<int> dimension_schedule(int input_dim, int n_bire) {
  std::vector<int> dims{input_dim};
  for (int k = 0; k < n_bire; ++k) dims.push_back((dims.back() + 1) / 2);
  return dims;
}

// Orthonormal factor of a d_in x d_out Gaussian matrix, sign-fixed so that
// R has a positive diagonal.
inline Matrix random_stiefel(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix a(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  const Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (int j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

struct NetworkShape {
  int n_electrodes = 1;
  int n_classes = 2;
  double fs_hz = 250.0;
  int n_filters = 1;
  Specificity specificity = Specificity::ChannelIndependent;
  FilterKind kind = FilterKind::Conv;
  bool interband = true;
  int kernel_len = 25;
  int n_bire = 3;
  double reeig_eps = kReEigThreshold;
};

// Seeded initialization: Gaussian conv kernels scaled by 1/sqrt(L), sinc
// bands tiling (4 Hz, Nyquist) evenly, BiMap weights from QR of Gaussians,
// head uniform in +-1/sqrt(fan_in).
inline NetworkState init_network(const NetworkShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkState s;
  FilterbankSpec& fb = s.filterbank;
  fb.n_filters = shape.n_filters;
  fb.n_electrodes = shape.n_electrodes;
  fb.specificity = shape.specificity;
  fb.kind = shape.kind;
  fb.kernel_len = shape.kernel_len;
  fb.interband = shape.interband;
  fb.fs_hz = shape.fs_hz;
  if (shape.n_classes < 2) throw std::invalid_argument("network: need at least 2 classes");
  if (shape.n_bire < 0) throw std::invalid_argument("network: n_bire must be >= 0");
  if (fb.kind == FilterKind::Conv) {
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(fb.kernel_len)));
    fb.kernels.resize(fb.n_kernels(), fb.kernel_len);
    for (int k = 0; k < fb.n_kernels(); ++k)
      for (int j = 0; j < fb.kernel_len; ++j) fb.kernels(k, j) = gauss(rng);
  } else {
    const double lo = 4.0;
    const double width = (0.5 * fb.fs_hz - lo) / fb.n_filters;
    fb.bands.resize(fb.n_kernels(), 2);
    for (int f = 0; f < fb.n_filters; ++f)
      for (int e = 0; e < fb.n_electrodes; ++e) {
        const int k = fb.kernel_index(f, e);
        fb.bands(k, 0) = lo + f * width;
        fb.bands(k, 1) = width;
      }
  }
  fb.validate();

  const auto dims = dimension_schedule(fb.channels(), shape.n_bire);
  for (int k = 0; k < shape.n_bire; ++k)
    s.layers.push_back({random_stiefel(dims[k], dims[k + 1], rng), shape.reeig_eps});

  const int m = dims.back();
  const int features = m * (m + 1) / 2;
  const double bound = 1.0 / std::sqrt(double(features));
  std::uniform_real_distribution<double> uni(-bound, bound);
  s.head.weight.resize(shape.n_classes, features);
  s.head.bias.resize(shape.n_classes);
  for (int c = 0; c < shape.n_classes; ++c)
    for (int j = 0; j < features; ++j) s.head.weight(c, j) = uni(rng);
  for (int c = 0; c < shape.n_classes; ++c) s.head.bias(c) = uni(rng);
  return s;
}

struct LayerCache {
  SymmetricMatrix input;
  SymmetricMatrix bimap_out;
  EigPair eig;  // of bimap_out
  SymmetricMatrix reeig_out;
};

// Everything the reverse pass needs. One per trial, so trials can be
// processed concurrently against a shared read-only NetworkState.
struct ForwardCache {
  bool valid = false;
  bool from_pooled = false;
  Matrix input;     // electrodes x samples
  Matrix kernels;   // materialized kernel rows
  Matrix filtered;  // channels x t_C
  SymmetricMatrix pooled;
  std::vector<LayerCache> layers;
  EigPair log_eig;
  SymmetricMatrix log_out;
  HeadOutput head;
};

inline ForwardCache forward_from_pooled(const NetworkState& s, const SymmetricMatrix& pooled,
                                        int label = -1) {
  ForwardCache c;
  c.from_pooled = true;
  c.pooled = pooled;
  SymmetricMatrix x = pooled;
  c.layers.reserve(s.layers.size());
  for (const auto& layer : s.layers) {
    LayerCache lc;
    lc.input = x;
    lc.bimap_out = bimap(x, layer.weight);
    lc.eig = sym_eig(lc.bimap_out);
    lc.reeig_out = reeig(lc.eig, layer.reeig_eps);
    x = lc.reeig_out;
    c.layers.push_back(std::move(lc));
  }
  c.log_eig = sym_eig(x);
  c.log_out = logeig(c.log_eig);
  c.head = head_forward(c.log_out, s.head, label);
  c.valid = true;
  return c;
}

inline SymmetricMatrix pooled_covariance(const NetworkState& s, const MultichannelTrial& t) {
  return cov_pool(filterbank_forward(t, s.filterbank), s.filterbank);
}

inline ForwardCache network_forward(const NetworkState& s, const MultichannelTrial& t,
                                    int label = -1) {
  Matrix kernels = s.filterbank.materialize();
  Matrix filtered = filterbank_apply(t.samples, s.filterbank, kernels);
  ForwardCache c = forward_from_pooled(s, cov_pool(filtered, s.filterbank), label);
  c.from_pooled = false;
  c.input = t.samples;
  c.kernels = std::move(kernels);
  c.filtered = std::move(filtered);
  return c;
}

// Parameter gradients, laid out like NetworkState.
struct NetworkGrad {
  Matrix kernels;
  Matrix bands;
  std::vector<Matrix> weights;
  Matrix head_weight;
  Vector head_bias;

  static NetworkGrad zeros_like(const NetworkState& s) {
    NetworkGrad g;
    g.kernels = Matrix::Zero(s.filterbank.kernels.rows(), s.filterbank.kernels.cols());
    g.bands = Matrix::Zero(s.filterbank.bands.rows(), s.filterbank.bands.cols());
    for (const auto& l : s.layers)
      g.weights.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.head_weight = Matrix::Zero(s.head.weight.rows(), s.head.weight.cols());
    g.head_bias = Vector::Zero(s.head.bias.size());
    return g;
  }

  NetworkGrad& operator+=(const NetworkGrad& o) {
    kernels += o.kernels;
    bands += o.bands;
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] += o.weights[k];
    head_weight += o.head_weight;
    head_bias += o.head_bias;
    return *this;
  }

  NetworkGrad& operator*=(double a) {
    kernels *= a;
    bands *= a;
    for (auto& w : weights) w *= a;
    head_weight *= a;
    head_bias *= a;
    return *this;
  }
};

// Reverse pass from a gradient at the logits. Optionally also returns the
// gradient wrt the pooled covariance (symmetric).
inline NetworkGrad network_backward(const NetworkState& s, const ForwardCache& c,
                                    const Vector& grad_logits, Matrix* grad_pooled = nullptr) {
  if (!c.valid) throw StateError("network_backward: no forward cache for this trial");
  if (grad_logits.size() != s.n_classes())
    throw std::invalid_argument("network_backward: logit gradient has wrong length");
  NetworkGrad g = NetworkGrad::zeros_like(s);

  const HeadGrad hg = head_backward(c.head, s.head, grad_logits, c.log_out.dim());
  g.head_weight = hg.weight;
  g.head_bias = hg.bias;
  Matrix up = eig_function_backward(hg.input, c.log_eig, SpectralFn::log());

  for (int k = static_cast<int>(s.layers.size()) - 1; k >= 0; --k) {
    const LayerCache& lc = c.layers[k];
    up = eig_function_backward(up, lc.eig, SpectralFn::clamp_below(s.layers[k].reeig_eps));
    BimapGrad bg = bimap_backward(lc.input, s.layers[k].weight, up);
    g.weights[k] = std::move(bg.weight);
    up = std::move(bg.input);
  }
  if (grad_pooled) *grad_pooled = sym_part(up);

  if (c.from_pooled || s.filterbank_frozen) return g;
  const Matrix d_filtered = cov_pool_backward(c.filtered, s.filterbank, up);
  const Matrix d_kernels = filterbank_kernel_grad(c.input, s.filterbank, d_filtered);
  if (s.filterbank.kind == FilterKind::Conv)
    g.kernels = d_kernels;
  else
    g.bands = sinc_band_grad(s.filterbank, d_kernels);
  return g;
}

struct LossAndGrad {
  double loss = 0.0;
  NetworkGrad grad;
};

inline LossAndGrad network_loss_grad(const NetworkState& s, const MultichannelTrial& t,
                                     int label) {
  ForwardCache c = network_forward(s, t, label);
  return {c.head.loss, network_backward(s, c, cross_entropy_grad(c.head, label))};
}

inline LossAndGrad network_loss_grad_pooled(const NetworkState& s,
                                            const SymmetricMatrix& pooled, int label) {
  ForwardCache c = forward_from_pooled(s, pooled, label);
  return {c.head.loss, network_backward(s, c, cross_entropy_grad(c.head, label))};
}

// Flat views of every trainable parameter with its gradient, in a fixed
// order: filterbank, BiMap weights, head weight, head bias.
struct ParamRef {
  std::string name;
  double* value;
  const double* grad;
  Eigen::Index rows;
  Eigen::Index cols;
  bool stiefel;

  Eigen::Index size() const { return rows * cols; }
};

inline std::vector<ParamRef> parameter_refs(NetworkState& s, const NetworkGrad& g) {
  std::vector<ParamRef> out;
  if (!s.filterbank_frozen) {
    if (s.filterbank.kind == FilterKind::Conv)
      out.push_back({"conv_kernels", s.filterbank.kernels.data(), g.kernels.data(),
                     s.filterbank.kernels.rows(), s.filterbank.kernels.cols(), false});
    else
      out.push_back({"sinc_bands", s.filterbank.bands.data(), g.bands.data(),
                     s.filterbank.bands.rows(), s.filterbank.bands.cols(), false});
  }
  for (std::size_t k = 0; k < s.layers.size(); ++k) {
    Matrix& w = s.layers[k].weight;
    out.push_back({"bimap" + std::to_string(k), w.data(), g.weights[k].data(), w.rows(),
                   w.cols(), true});
  }
  out.push_back({"head_weight", s.head.weight.data(), g.head_weight.data(),
                 s.head.weight.rows(), s.head.weight.cols(), false});
  out.push_back({"head_bias", s.head.bias.data(), g.head_bias.data(), s.head.bias.size(), 1,
                 false});
  return out;
}

inline int predict_class(const Vector& logits) {
  int best = 0;
  for (int k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = k;
  return best;
}

}  // namespace spdnet
