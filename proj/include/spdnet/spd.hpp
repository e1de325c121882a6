#pragma once

// Geometry of symmetric and symmetric positive definite (SPD) matrices:
// eigendecomposition, spectral matrix functions, sample covariance,
// isometric vectorization, block constructions, Riemannian metrics and means.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/error.hpp"

namespace spdnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One trial: electrodes x samples, plus its sampling rate.
struct MultichannelTrial {
  Matrix samples;
  double fs_hz = 0.0;

  int electrodes() const { return static_cast<int>(samples.rows()); }
  int length() const { return static_cast<int>(samples.cols()); }
};

// Square matrix with entries[i][j] == entries[j][i] bitwise.
class SymmetricMatrix {
public:
  SymmetricMatrix() = default;

  explicit SymmetricMatrix(const Matrix& m) {
    if (m.rows() != m.cols())
      throw std::invalid_argument("SymmetricMatrix: matrix is " +
                                  std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + ", not square");
    m_ = 0.5 * (m + m.transpose());
  }

  static SymmetricMatrix identity(int n) {
    return SymmetricMatrix(Matrix::Identity(n, n));
  }
  static SymmetricMatrix diagonal(const Vector& d) {
    return SymmetricMatrix(Matrix(d.asDiagonal()));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  bool operator==(const SymmetricMatrix& o) const {
    return m_.rows() == o.m_.rows() && m_.cols() == o.m_.cols() && m_ == o.m_;
  }

private:
  Matrix m_;
};

// Eigenvectors in columns, eigenvalues in descending order.
struct EigPair {
  Matrix vectors;
  Vector values;

  int dim() const { return static_cast<int>(values.size()); }
  Matrix reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

// Eigendecomposition with a fixed ordering (descending) and sign convention
// (largest-magnitude entry of every eigenvector positive, first one on ties).
inline EigPair sym_eig(const SymmetricMatrix& s) {
  const Matrix& m = s.matrix();
  if (!m.allFinite())
    throw NumericFailure("sym_eig: non-finite entries in " +
                         std::to_string(s.dim()) + "x" +
                         std::to_string(s.dim()) + " matrix");
  const int n = s.dim();
  EigPair out;
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success)
    throw NumericFailure("sym_eig: eigensolver did not converge for " +
                         std::to_string(n) + "x" + std::to_string(n) +
                         " matrix");
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  for (int c = 0; c < n; ++c) {
    Eigen::Index arg = 0;
    out.vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, c) < 0.0) out.vectors.col(c) *= -1.0;
  }
  return out;
}

// A scalar function applied through the spectrum: U f(L) U^T.
struct SpectralFn {
  enum class Kind { Log, Exp, ClampBelow, InvSqrt, Sqrt };

  Kind kind = Kind::Log;
  double eps = 0.0;  // threshold for ClampBelow

  static SpectralFn log() { return {Kind::Log, 0.0}; }
  static SpectralFn exp() { return {Kind::Exp, 0.0}; }
  static SpectralFn clamp_below(double eps) { return {Kind::ClampBelow, eps}; }
  static SpectralFn inv_sqrt() { return {Kind::InvSqrt, 0.0}; }
  static SpectralFn sqrt() { return {Kind::Sqrt, 0.0}; }

  bool needs_positive() const {
    return kind == Kind::Log || kind == Kind::InvSqrt || kind == Kind::Sqrt;
  }

  double value(double x) const {
    switch (kind) {
      case Kind::Log: return std::log(x);
      case Kind::Exp: return std::exp(x);
      case Kind::ClampBelow: return std::max(x, eps);
      case Kind::InvSqrt: return 1.0 / std::sqrt(x);
      case Kind::Sqrt: return std::sqrt(x);
    }
    return 0.0;
  }

  double derivative(double x) const {
    switch (kind) {
      case Kind::Log: return 1.0 / x;
      case Kind::Exp: return std::exp(x);
      case Kind::ClampBelow: return x > eps ? 1.0 : 0.0;
      case Kind::InvSqrt: return -0.5 / (x * std::sqrt(x));
      case Kind::Sqrt: return 0.5 / std::sqrt(x);
    }
    return 0.0;
  }

  const char* name() const {
    switch (kind) {
      case Kind::Log: return "log";
      case Kind::Exp: return "exp";
      case Kind::ClampBelow: return "clamp_below";
      case Kind::InvSqrt: return "inv_sqrt";
      case Kind::Sqrt: return "sqrt";
    }
    return "?";
  }
};

inline SymmetricMatrix spd_map(const EigPair& eig, const SpectralFn& fn) {
  const int n = eig.dim();
  if (n > 0 && fn.needs_positive() && !(eig.values(n - 1) > 0.0))
    throw DomainError(std::string("spd_map: ") + fn.name() +
                          " requires a positive definite matrix",
                      eig.values(n - 1));
  Vector f(n);
  for (int i = 0; i < n; ++i) f(i) = fn.value(eig.values(i));
  return SymmetricMatrix(eig.vectors * f.asDiagonal() *
                         eig.vectors.transpose());
}

inline SymmetricMatrix spd_map(const SymmetricMatrix& s, const SpectralFn& fn) {
  return spd_map(sym_eig(s), fn);
}

// Symmetric matrix certified positive definite at construction. The
// decomposition is kept since nearly every consumer needs it.
class SpdMatrix {
public:
  static constexpr double kRelativeTolerance = 1e-12;

  SpdMatrix() = default;

  explicit SpdMatrix(SymmetricMatrix s) : base_(std::move(s)), eig_(sym_eig(base_)) {
    const int n = base_.dim();
    if (n == 0) throw std::invalid_argument("SpdMatrix: empty matrix");
    const double top = eig_.values(0);
    const double low = eig_.values(n - 1);
    if (!(low > kRelativeTolerance * std::abs(top)) || !(top > 0.0))
      throw DomainError("SpdMatrix: matrix is not positive definite", low);
    eig_floor_ = low;
  }

  explicit SpdMatrix(const Matrix& m) : SpdMatrix(SymmetricMatrix(m)) {}

  int dim() const { return base_.dim(); }
  const SymmetricMatrix& sym() const { return base_; }
  const Matrix& matrix() const { return base_.matrix(); }
  const EigPair& eig() const { return eig_; }
  double eig_floor() const { return eig_floor_; }

private:
  SymmetricMatrix base_;
  EigPair eig_;
  double eig_floor_ = 0.0;
};

// Sample covariance of an electrodes x samples array, T T^T / (N_t - 1).
// No mean is removed.
inline SymmetricMatrix scm(const Matrix& x) {
  if (x.cols() < 2)
    throw std::invalid_argument("scm: need at least 2 samples, got " +
                                std::to_string(x.cols()));
  Matrix c = Matrix::Zero(x.rows(), x.rows());
  c.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0 / double(x.cols() - 1));
  return SymmetricMatrix(Matrix(c.selfadjointView<Eigen::Lower>()));
}

inline SymmetricMatrix scm(const MultichannelTrial& t) { return scm(t.samples); }

// Upper triangle, column by column: [S11, r2*S12, S22, r2*S13, r2*S23, S33...]
// so that ||vectorize(S)||_2 == ||S||_F.
inline Vector vectorize(const SymmetricMatrix& s) {
  const int n = s.dim();
  Vector v(n * (n + 1) / 2);
  const double r2 = std::sqrt(2.0);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) v(k++) = (i == j) ? s(i, j) : r2 * s(i, j);
  return v;
}

// Adjoint of vectorize restricted to symmetric matrices: the symmetric
// matrix G with <G, S>_F == <g, vectorize(S)> for every symmetric S.
inline Matrix vectorize_adjoint(const Vector& g, int n) {
  if (g.size() != n * (n + 1) / 2)
    throw std::invalid_argument("vectorize_adjoint: length mismatch");
  Matrix m(n, n);
  const double h = std::sqrt(2.0) / 2.0;
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) {
      if (i == j) {
        m(i, i) = g(k++);
      } else {
        m(i, j) = m(j, i) = h * g(k++);
      }
    }
  return m;
}

inline SymmetricMatrix concat_block_diag(std::span<const SymmetricMatrix> blocks) {
  if (blocks.empty())
    throw std::invalid_argument("concat_block_diag: no blocks given");
  int n = 0;
  for (const auto& b : blocks) n += b.dim();
  Matrix out = Matrix::Zero(n, n);
  int at = 0;
  for (const auto& b : blocks) {
    out.block(at, at, b.dim(), b.dim()) = b.matrix();
    at += b.dim();
  }
  return SymmetricMatrix(out);
}

// Stacks the filtered trials along the channel axis (block b holds every
// electrode of trial b) and takes one covariance of the stack.
inline SymmetricMatrix stacked_cov(std::span<const MultichannelTrial> filtered) {
  if (filtered.empty()) throw std::invalid_argument("stacked_cov: no inputs");
  const int len = filtered.front().length();
  int rows = 0;
  for (const auto& t : filtered) {
    if (t.length() != len)
      throw std::invalid_argument("stacked_cov: sample counts differ (" +
                                  std::to_string(len) + " vs " +
                                  std::to_string(t.length()) + ")");
    rows += t.electrodes();
  }
  Matrix stack(rows, len);
  int at = 0;
  for (const auto& t : filtered) {
    stack.middleRows(at, t.electrodes()) = t.samples;
    at += t.electrodes();
  }
  return scm(stack);
}

inline void check_blocks(int dim, std::span<const int> block_sizes,
                         const char* who) {
  int total = 0;
  for (int b : block_sizes) {
    if (b <= 0) throw std::invalid_argument(std::string(who) + ": block size must be positive");
    total += b;
  }
  if (total != dim)
    throw std::invalid_argument(std::string(who) + ": block sizes sum to " +
                                std::to_string(total) + ", matrix dim is " +
                                std::to_string(dim));
}

// Mask that keeps the diagonal blocks and zeroes everything else.
inline Matrix block_diag_mask(int dim, std::span<const int> block_sizes) {
  check_blocks(dim, block_sizes, "block_diag_mask");
  Matrix mask = Matrix::Zero(dim, dim);
  int at = 0;
  for (int b : block_sizes) {
    mask.block(at, at, b, b).setOnes();
    at += b;
  }
  return mask;
}

inline SymmetricMatrix remove_interband(const SymmetricMatrix& c,
                                        std::span<const int> block_sizes) {
  check_blocks(c.dim(), block_sizes, "remove_interband");
  return SymmetricMatrix(
      Matrix(c.matrix().cwiseProduct(block_diag_mask(c.dim(), block_sizes))));
}

enum class Metric { LogEuclidean, AffineInvariant };

inline const char* metric_name(Metric m) {
  return m == Metric::LogEuclidean ? "lem" : "airm";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "lem" || s == "LEM" || s == "log-euclidean") return Metric::LogEuclidean;
  if (s == "airm" || s == "AIRM" || s == "affine-invariant") return Metric::AffineInvariant;
  throw std::invalid_argument("unknown metric '" + s + "' (expected lem|airm)");
}

namespace detail {

// Lexicographic order on entries, used to evaluate AIRM with a canonical
// argument order so d(A,B) and d(B,A) agree bitwise.
inline bool entries_less(const Matrix& a, const Matrix& b) {
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    if (a.data()[k] < b.data()[k]) return true;
    if (b.data()[k] < a.data()[k]) return false;
  }
  return false;
}

inline double airm_distance_ordered(const SpdMatrix& a, const SpdMatrix& b) {
  const SymmetricMatrix w = spd_map(a.eig(), SpectralFn::inv_sqrt());
  const SymmetricMatrix inner(Matrix(w.matrix() * b.matrix() * w.matrix()));
  const EigPair e = sym_eig(inner);
  if (!(e.values(e.dim() - 1) > 0.0))
    throw DomainError("distance: whitened matrix lost definiteness",
                      e.values(e.dim() - 1));
  double acc = 0.0;
  for (int i = 0; i < e.dim(); ++i) {
    const double l = std::log(e.values(i));
    acc += l * l;
  }
  return std::sqrt(acc);
}

}  // namespace detail

inline double distance(const SpdMatrix& a, const SpdMatrix& b, Metric metric) {
  if (a.dim() != b.dim())
    throw std::invalid_argument("distance: dimension mismatch (" +
                                std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()) + ")");
  if (metric == Metric::LogEuclidean) {
    const Matrix la = spd_map(a.eig(), SpectralFn::log()).matrix();
    const Matrix lb = spd_map(b.eig(), SpectralFn::log()).matrix();
    return (la - lb).norm();
  }
  if (detail::entries_less(b.matrix(), a.matrix()))
    return detail::airm_distance_ordered(b, a);
  return detail::airm_distance_ordered(a, b);
}

struct KarcherOptions {
  double tolerance = 1e-9;
  int max_iterations = 200;
};

inline SpdMatrix frechet_mean(std::span<const SpdMatrix> set, Metric metric,
                              KarcherOptions opt = {}) {
  if (set.empty()) throw std::invalid_argument("frechet_mean: empty set");
  const int n = set.front().dim();
  for (const auto& s : set)
    if (s.dim() != n)
      throw std::invalid_argument("frechet_mean: matrices of different sizes");
  if (set.size() == 1) return set.front();

  Matrix log_sum = Matrix::Zero(n, n);
  for (const auto& s : set) log_sum += spd_map(s.eig(), SpectralFn::log()).matrix();
  SpdMatrix mean(spd_map(SymmetricMatrix(Matrix(log_sum / double(set.size()))),
                         SpectralFn::exp()));
  if (metric == Metric::LogEuclidean) return mean;

  // Riemannian gradient descent on the summed squared distance. The step
  // is halved whenever it would not reduce the gradient norm, which keeps
  // widely spread sets from diverging.
  auto karcher_tangent = [&](const SpdMatrix& p) {
    const Matrix inv_root = spd_map(p.eig(), SpectralFn::inv_sqrt()).matrix();
    Matrix t = Matrix::Zero(n, n);
    for (const auto& s : set)
      t += spd_map(SymmetricMatrix(Matrix(inv_root * s.matrix() * inv_root)), SpectralFn::log())
               .matrix();
    return Matrix(t / double(set.size()));
  };
  Matrix tangent = karcher_tangent(mean);
  double residual = tangent.norm();
  double nu = 1.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (residual < opt.tolerance) return mean;
    const Matrix root = spd_map(mean.eig(), SpectralFn::sqrt()).matrix();
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const Matrix step =
          spd_map(SymmetricMatrix(Matrix(nu * tangent)), SpectralFn::exp()).matrix();
      SpdMatrix next(Matrix(root * step * root));
      Matrix next_tangent = karcher_tangent(next);
      const double next_residual = next_tangent.norm();
      if (next_residual < residual) {
        mean = std::move(next);
        tangent = std::move(next_tangent);
        residual = next_residual;
        moved = true;
        break;
      }
      nu *= 0.5;
    }
    if (!moved) break;
    nu = std::min(1.0, 2.0 * nu);
  }
  if (residual < opt.tolerance) return mean;
  throw NumericFailure("frechet_mean: Karcher iteration did not converge after " +
                       std::to_string(opt.max_iterations) +
                       " iterations, residual " + std::to_string(residual));
}

inline Vector tangent_vectorize(const SpdMatrix& s) {
  return vectorize(spd_map(s.eig(), SpectralFn::log()));
}

}  // namespace spdnet
