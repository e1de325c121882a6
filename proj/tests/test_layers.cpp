#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spdnet/layers.hpp"
#include "test_support.hpp"

using namespace spdnet;
using namespace spdnet::testing;
using Catch::Approx;

namespace {

Vector well_separated(int n, double lo, double hi) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = hi - (hi - lo) * i / double(n - 1);
  return v;
}

// Checks d<G, F(X)>/dX against central differences over every entry of a
// symmetric input, perturbing (i,j) and (j,i) together.
template <class Forward>
void check_symmetric_input_grad(const Matrix& x0, const Matrix& analytic, Forward forward,
                                double tol) {
  const int n = static_cast<int>(x0.rows());
  Matrix x = x0;
  const double scale = analytic.cwiseAbs().maxCoeff();
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double h = 1e-5;
      auto eval = [&](double delta) {
        Matrix y = x;
        y(i, j) += delta;
        if (i != j) y(j, i) += delta;
        return forward(y);
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double want = i == j ? analytic(i, i) : analytic(i, j) + analytic(j, i);
      INFO("entry (" << i << "," << j << ")");
      REQUIRE(scaled_error(want, fd, 1e-3 * scale) <= tol);
    }
}

}  // namespace

TEST_CASE("bimap examples", "[layers][bimap]") {
  std::mt19937_64 rng(1);
  const SpdMatrix c = random_spd(3, rng);
  REQUIRE(bimap(c.sym(), Matrix::Identity(3, 3)) == c.sym());

  Matrix c2(2, 2);
  c2 << 3, 1, 1, 2;
  Matrix w(2, 1);
  w << 1, 0;
  REQUIRE(bimap(SymmetricMatrix(c2), w).matrix()(0, 0) == 3.0);

  REQUIRE_THROWS_AS(bimap(c.sym(), Matrix::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("bimap keeps positive definiteness", "[layers][bimap][property]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const SpdMatrix c = random_spd(6, rng);
    Eigen::HouseholderQR<Matrix> qr(random_matrix(6, 3, rng));
    const Matrix w = qr.householderQ() * Matrix::Identity(6, 3);
    REQUIRE(sym_eig(bimap(c.sym(), w)).values.minCoeff() > 0.0);
  }
}

TEST_CASE("reeig examples", "[layers][reeig]") {
  std::mt19937_64 rng(3);
  const SymmetricMatrix big = spd_with_spectrum(well_separated(4, 1.0, 3.0), rng);
  REQUIRE(reeig(big) == big);

  Vector d(2);
  d << 1.0, 1e-6;
  const Matrix r = reeig(SymmetricMatrix::diagonal(d)).matrix();
  REQUIRE(r(0, 0) == Approx(1.0));
  REQUIRE(r(1, 1) == Approx(5e-4));

  for (int trial = 0; trial < 50; ++trial) {
    const SymmetricMatrix s = random_symmetric(5, rng);
    const SymmetricMatrix once = reeig(s);
    REQUIRE(reeig(once) == once);
    REQUIRE(sym_eig(once).values.minCoeff() >= 5e-4 * (1.0 - 1e-9));
  }
}

TEST_CASE("logeig examples", "[layers][logeig]") {
  REQUIRE(logeig(SymmetricMatrix::identity(3)).matrix().norm() == Approx(0.0).margin(1e-15));
  Vector d(2);
  d << std::exp(1.0), std::exp(2.0);
  const Matrix l = logeig(SymmetricMatrix::diagonal(d)).matrix();
  REQUIRE(l(0, 0) == Approx(1.0));
  REQUIRE(l(1, 1) == Approx(2.0));
  Vector bad(2);
  bad << 1.0, -1.0;
  REQUIRE_THROWS_AS(logeig(SymmetricMatrix::diagonal(bad)), DomainError);
}

TEST_CASE("head examples", "[layers][head]") {
  Head zero{Matrix::Zero(4, 6), Vector::Zero(4)};
  const HeadOutput out = head_forward(SymmetricMatrix::identity(3), zero, 2);
  REQUIRE(out.loss == Approx(std::log(4.0)).epsilon(1e-15));

  Head h{Matrix::Zero(2, 1), Vector(2)};
  h.bias << 10.0, 0.0;
  REQUIRE(head_forward(SymmetricMatrix::identity(1), h, 0).loss ==
          Approx(std::log1p(std::exp(-10.0))).epsilon(1e-10));

  REQUIRE_THROWS_AS(head_forward(SymmetricMatrix::identity(1), h, 2), std::invalid_argument);

  std::mt19937_64 rng(4);
  const SymmetricMatrix m = random_symmetric(3, rng);
  Head r{random_matrix(3, 6, rng), random_matrix(3, 1, rng)};
  const HeadOutput o = head_forward(m, r, 1);
  // Scalar re-implementation: explicit feature loop and log-sum-exp.
  const double s2 = std::sqrt(2.0);
  double feats[6];
  int idx = 0;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i <= j; ++i) feats[idx++] = i == j ? m(i, j) : s2 * m(i, j);
  double logits[3], top = -1e300;
  for (int k = 0; k < 3; ++k) {
    logits[k] = r.bias(k);
    for (int f = 0; f < 6; ++f) logits[k] += r.weight(k, f) * feats[f];
    top = std::max(top, logits[k]);
  }
  double sum = 0.0;
  for (double lg : logits) sum += std::exp(lg - top);
  REQUIRE(std::abs(o.loss - (top + std::log(sum) - logits[1])) <= 1e-12);
}

TEST_CASE("eig_function_backward examples", "[layers][gradient]") {
  std::mt19937_64 rng(5);
  const Matrix g = random_matrix(4, 4, rng);
  const Matrix log_id =
      eig_function_backward(g, sym_eig(SymmetricMatrix::identity(4)), SpectralFn::log());
  REQUIRE((log_id - sym_part(g)).norm() < 1e-12);

  const SymmetricMatrix big = spd_with_spectrum(well_separated(4, 1.0, 3.0), rng);
  const Matrix clamp = eig_function_backward(g, sym_eig(big), SpectralFn::clamp_below(5e-4));
  REQUIRE((clamp - sym_part(g)).norm() < 1e-12);
}

TEST_CASE("spectral backward matches finite differences", "[layers][gradient]") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const SpdMatrix s = random_spd(5, rng, 0.5);
    const Matrix g = random_matrix(5, 5, rng);
    const Matrix analytic = eig_function_backward(g, s.eig(), SpectralFn::log());
    check_symmetric_input_grad(
        s.matrix(), analytic,
        [&](const Matrix& y) {
          return g.cwiseProduct(spd_map(SymmetricMatrix(y), SpectralFn::log()).matrix()).sum();
        },
        1e-5);
  }
  // ReEig with some eigenvalues below the threshold, well away from it.
  Vector spec(5);
  spec << 2.0, 1.0, 0.5, 1e-4, 2e-5;
  const SymmetricMatrix s = spd_with_spectrum(spec, rng);
  const Matrix g = random_matrix(5, 5, rng);
  const Matrix analytic = eig_function_backward(g, sym_eig(s), SpectralFn::clamp_below(5e-4));
  Matrix x = s.matrix();
  const int n = 5;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double h = 1e-7;
      auto eval = [&](double delta) {
        Matrix y = x;
        y(i, j) += delta;
        if (i != j) y(j, i) += delta;
        return g.cwiseProduct(reeig(SymmetricMatrix(y)).matrix()).sum();
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double want = i == j ? analytic(i, i) : analytic(i, j) + analytic(j, i);
      REQUIRE(scaled_error(want, fd, 1e-3) <= 1e-4);
    }
}

TEST_CASE("bimap backward matches finite differences", "[layers][gradient]") {
  std::mt19937_64 rng(7);
  const SpdMatrix c = random_spd(5, rng);
  Matrix w = random_matrix(5, 3, rng);
  const Matrix g = random_matrix(3, 3, rng);
  const BimapGrad bg = bimap_backward(c.sym(), w, g);
  auto loss = [&](const Matrix& cc, const Matrix& ww) {
    return sym_part(g).cwiseProduct(ww.transpose() * cc * ww).sum();
  };
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      const double fd = central_difference(w(i, j), 1e-5, [&] { return loss(c.matrix(), w); });
      REQUIRE(scaled_error(bg.weight(i, j), fd, 1e-3) <= 1e-7);
    }
  check_symmetric_input_grad(c.matrix(), bg.input, [&](const Matrix& y) { return loss(y, w); },
                             1e-7);
}

TEST_CASE("cov_pool backward matches finite differences", "[layers][gradient]") {
  std::mt19937_64 rng(8);
  for (bool interband : {true, false}) {
    FilterbankSpec fb;
    fb.n_filters = 2;
    fb.n_electrodes = 2;
    fb.interband = interband;
    fb.kernel_len = 3;
    fb.kernels = random_matrix(2, 3, rng);
    Matrix x = random_matrix(4, 30, rng);
    const Matrix g = random_matrix(4, 4, rng);
    const Matrix analytic = cov_pool_backward(x, fb, g);
    for (int i = 0; i < 4; ++i)
      for (int t = 0; t < 30; ++t) {
        const double fd = central_difference(
            x(i, t), 1e-5, [&] { return g.cwiseProduct(cov_pool(x, fb).matrix()).sum(); });
        REQUIRE(scaled_error(analytic(i, t), fd, 1e-3) <= 1e-7);
      }
  }
}

TEST_CASE("cov_pool examples", "[layers]") {
  std::mt19937_64 rng(9);
  FilterbankSpec fb;
  fb.n_filters = 2;
  fb.n_electrodes = 2;
  fb.interband = false;
  const Matrix x = random_matrix(4, 50, rng);
  const Matrix c = cov_pool(x, fb).matrix();
  REQUIRE(c.block(0, 2, 2, 2).isZero(0.0));
  REQUIRE((c.block(0, 0, 2, 2) - scm(Matrix(x.topRows(2))).matrix()).norm() < 1e-14);
  REQUIRE((c.block(2, 2, 2, 2) - scm(Matrix(x.bottomRows(2))).matrix()).norm() < 1e-14);
  fb.n_filters = 1;
  fb.n_electrodes = 4;
  REQUIRE(cov_pool(x, fb) == scm(x));
}

TEST_CASE("head backward matches finite differences", "[layers][gradient]") {
  std::mt19937_64 rng(10);
  const SymmetricMatrix m = random_symmetric(3, rng);
  Head h{random_matrix(3, 6, rng), random_matrix(3, 1, rng)};
  const int label = 2;
  const HeadOutput fwd = head_forward(m, h, label);
  const HeadGrad hg = head_backward(fwd, h, cross_entropy_grad(fwd, label), 3);
  auto loss = [&] { return head_forward(m, h, label).loss; };
  for (int k = 0; k < 3; ++k) {
    REQUIRE(scaled_error(hg.bias(k), central_difference(h.bias(k), 1e-5, loss), 1e-3) <= 1e-7);
    for (int f = 0; f < 6; ++f)
      REQUIRE(scaled_error(hg.weight(k, f), central_difference(h.weight(k, f), 1e-5, loss), 1e-3) <=
              1e-7);
  }
  check_symmetric_input_grad(
      m.matrix(), hg.input,
      [&](const Matrix& y) { return head_forward(SymmetricMatrix(y), h, label).loss; }, 1e-7);
}
