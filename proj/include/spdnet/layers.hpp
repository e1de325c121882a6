#pragma once

// Forward and reverse-mode rules for the SPD layer stack:
// covariance pooling, BiMap, ReEig, LogEig and the affine softmax head.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/filterbank.hpp"
#include "spdnet/spd.hpp"

namespace spdnet {

inline constexpr double kReEigThreshold = 5e-4;

inline Matrix sym_part(const Matrix& g) { return 0.5 * (g + g.transpose()); }

// Block sizes of the pooled covariance, one block of N_e per filter.
inline std::vector<int> filter_blocks(const FilterbankSpec& fb) {
  return std::vector<int>(fb.n_filters, fb.n_electrodes);
}

inline SymmetricMatrix cov_pool(const Matrix& filtered, const FilterbankSpec& fb) {
  SymmetricMatrix c = scm(filtered);
  if (fb.n_filters > 1 && !fb.uses_interband()) {
    const auto blocks = filter_blocks(fb);
    return remove_interband(c, blocks);
  }
  return c;
}

// d/dX of <G, X X^T / (N - 1)> for symmetric G (masked when interband
// covariance is dropped).
inline Matrix cov_pool_backward(const Matrix& filtered, const FilterbankSpec& fb,
                                const Matrix& grad_out) {
  Matrix g = sym_part(grad_out);
  if (fb.n_filters > 1 && !fb.uses_interband()) {
    const auto blocks = filter_blocks(fb);
    g = g.cwiseProduct(block_diag_mask(g.rows(), blocks));
  }
  return (2.0 / double(filtered.cols() - 1)) * g * filtered;
}

inline SymmetricMatrix bimap(const SymmetricMatrix& c, const Matrix& w) {
  if (w.rows() != c.dim())
    throw std::invalid_argument("bimap: weight has " + std::to_string(w.rows()) +
                                " rows, input is " + std::to_string(c.dim()) + "x" +
                                std::to_string(c.dim()));
  return SymmetricMatrix(Matrix(w.transpose() * c.matrix() * w));
}

struct BimapGrad {
  Matrix input;   // dL/dC
  Matrix weight;  // dL/dW
};

inline BimapGrad bimap_backward(const SymmetricMatrix& c, const Matrix& w,
                                const Matrix& grad_out) {
  const Matrix g = sym_part(grad_out);
  return {w * g * w.transpose(), 2.0 * c.matrix() * w * g};
}

inline SymmetricMatrix reeig(const EigPair& eig, double eps = kReEigThreshold) {
  return spd_map(eig, SpectralFn::clamp_below(eps));
}
// Inputs whose spectrum already sits at or above the threshold (up to
// rounding of a previous clamp) are returned unchanged, so the map is
// idempotent bit for bit.
inline SymmetricMatrix reeig(const SymmetricMatrix& c, double eps = kReEigThreshold) {
  const EigPair e = sym_eig(c);
  if (e.values.minCoeff() >= eps * (1.0 - 1e-9)) return c;
  return reeig(e, eps);
}

inline SymmetricMatrix logeig(const EigPair& eig) { return spd_map(eig, SpectralFn::log()); }
inline SymmetricMatrix logeig(const SymmetricMatrix& c) { return logeig(sym_eig(c)); }

// Reverse rule for X -> U f(L) U^T (Daleckii-Krein):
//   dX = U (P o (U^T sym(G) U)) U^T,
//   P_ij = (f(l_i) - f(l_j)) / (l_i - l_j), or f' on (near-)ties.
inline Matrix eig_function_backward(const Matrix& grad_out, const EigPair& eig,
                                    const SpectralFn& fn) {
  const int n = eig.dim();
  const Vector& l = eig.values;
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(l(i)));
  const double tie = 1e-10 * scale;
  Vector f(n), df(n);
  for (int i = 0; i < n; ++i) {
    f(i) = fn.value(l(i));
    df(i) = fn.derivative(l(i));
  }
  Matrix p(n, n);
  for (int i = 0; i < n; ++i) {
    p(i, i) = df(i);
    for (int j = i + 1; j < n; ++j) {
      const double gap = l(i) - l(j);
      const double v = std::abs(gap) < tie ? 0.5 * (df(i) + df(j)) : (f(i) - f(j)) / gap;
      p(i, j) = p(j, i) = v;
    }
  }
  const Matrix& u = eig.vectors;
  const Matrix inner = u.transpose() * sym_part(grad_out) * u;
  return u * p.cwiseProduct(inner) * u.transpose();
}

// Affine classifier on the vectorized final matrix.
struct Head {
  Matrix weight;  // classes x features
  Vector bias;    // classes

  int classes() const { return static_cast<int>(bias.size()); }
  int features() const { return static_cast<int>(weight.cols()); }
};

struct HeadOutput {
  Vector features;
  Vector logits;
  Vector probs;
  double loss = 0.0;
};

inline Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector p = (logits.array() - top).exp();
  return p / p.sum();
}

// logits = A vectorize(M) + b, loss = -log softmax(logits)[label].
// A negative label skips the loss.
inline HeadOutput head_forward(const SymmetricMatrix& m, const Head& head, int label) {
  if (label >= head.classes())
    throw std::invalid_argument("head: label " + std::to_string(label) +
                                " out of range for " + std::to_string(head.classes()) +
                                " classes");
  HeadOutput out;
  out.features = vectorize(m);
  if (out.features.size() != head.features())
    throw std::invalid_argument("head: expects " + std::to_string(head.features()) +
                                " features, got " + std::to_string(out.features.size()));
  out.logits = head.weight * out.features + head.bias;
  out.probs = softmax(out.logits);
  if (label >= 0) {
    const double top = out.logits.maxCoeff();
    const double lse = top + std::log((out.logits.array() - top).exp().sum());
    out.loss = lse - out.logits(label);
  }
  return out;
}

struct HeadGrad {
  Matrix weight;
  Vector bias;
  Matrix input;  // dL/dM, symmetric
};

inline HeadGrad head_backward(const HeadOutput& fwd, const Head& head,
                              const Vector& grad_logits, int dim) {
  HeadGrad g;
  g.weight = grad_logits * fwd.features.transpose();
  g.bias = grad_logits;
  g.input = vectorize_adjoint(head.weight.transpose() * grad_logits, dim);
  return g;
}

// d loss / d logits for softmax cross-entropy.
inline Vector cross_entropy_grad(const HeadOutput& fwd, int label) {
  Vector g = fwd.probs;
  g(label) -= 1.0;
  return g;
}

}  // namespace spdnet
