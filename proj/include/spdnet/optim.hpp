#pragma once

// Riemannian Adam: Stiefel-constrained BiMap weights are updated with a
// projected gradient and a QR retraction, every other parameter with AdamW.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/error.hpp"
#include "spdnet/network.hpp"

namespace spdnet {

// Orthogonal projection onto the tangent space at W: G - W sym(W^T G).
inline Matrix stiefel_project_tangent(const Matrix& w, const Matrix& g) {
  if (w.rows() != g.rows() || w.cols() != g.cols())
    throw std::invalid_argument("stiefel_project_tangent: shape mismatch");
  const Matrix wtg = w.transpose() * g;
  return g - w * (0.5 * (wtg + wtg.transpose()));
}

// Q factor of W + step with the signs chosen so that R has a positive
// diagonal.
inline Matrix stiefel_retract(const Matrix& w, const Matrix& step) {
  if (w.rows() != step.rows() || w.cols() != step.cols())
    throw std::invalid_argument("stiefel_retract: shape mismatch");
  const Matrix a = w + step;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  const Matrix& packed = qr.matrixQR();
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double r = packed(j, j);
    if (!(std::abs(r) > 1e-12 * scale))
      throw NumericFailure("stiefel_retract: W + step is rank deficient (column " +
                           std::to_string(j) + ")");
    if (r < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

inline double orthonormality_error(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

// lr(e) = lr0 (1 + cos(pi e / E)) / 2
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs <= 0) throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(total_epochs)));
}

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class RiemannianAdam {
public:
  explicit RiemannianAdam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return step_; }

  // One update of every parameter in `params` with learning rate `lr`.
  // The parameter list must keep the same order and shapes between calls.
  void step(std::vector<ParamRef>& params, double lr) {
    for (const auto& p : params)
      for (Eigen::Index i = 0; i < p.size(); ++i)
        if (!std::isfinite(p.grad[i]))
          throw NumericFailure("optimizer: non-finite gradient in parameter '" + p.name + "'");
    if (moments_.empty()) {
      for (const auto& p : params)
        moments_.push_back({Matrix::Zero(p.rows, p.cols), Matrix::Zero(p.rows, p.cols)});
    }
    if (moments_.size() != params.size())
      throw std::invalid_argument("optimizer: parameter list changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));

    for (std::size_t k = 0; k < params.size(); ++k) {
      ParamRef& p = params[k];
      Eigen::Map<Matrix> value(p.value, p.rows, p.cols);
      Eigen::Map<const Matrix> egrad(p.grad, p.rows, p.cols);
      Moments& mo = moments_[k];
      if (p.rows != mo.first.rows() || p.cols != mo.first.cols())
        throw std::invalid_argument("optimizer: shape of '" + p.name + "' changed");

      const Matrix grad = p.stiefel ? stiefel_project_tangent(value, egrad) : Matrix(egrad);
      mo.first = cfg_.beta1 * mo.first + (1.0 - cfg_.beta1) * grad;
      mo.second = cfg_.beta2 * mo.second + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
      const Matrix direction =
          (mo.first / bc1).array() / ((mo.second / bc2).array().sqrt() + cfg_.eps);

      if (p.stiefel) {
        const Matrix next = stiefel_retract(value, -lr * direction);
        value = next;
        mo.first = stiefel_project_tangent(value, mo.first);
      } else {
        value -= lr * (direction + cfg_.weight_decay * Matrix(value));
      }
    }
  }

private:
  using Moments = std::pair<Matrix, Matrix>;
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace spdnet
