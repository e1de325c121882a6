#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spdnet/network.hpp"
#include "test_support.hpp"

using namespace spdnet;
using namespace spdnet::testing;

namespace {

NetworkShape toy_shape(Specificity spec, FilterKind kind, bool interband, int n_filters = 2) {
  NetworkShape s;
  s.n_electrodes = 3;
  s.n_classes = 2;
  s.fs_hz = 250.0;
  s.n_filters = n_filters;
  s.specificity = spec;
  s.kind = kind;
  s.interband = interband;
  s.kernel_len = 9;
  s.n_bire = 2;
  return s;
}

double loss_of(const NetworkState& s, const MultichannelTrial& t, int label) {
  return network_forward(s, t, label).head.loss;
}

// Compares every analytic parameter gradient against central differences.
void check_all_params(NetworkState& s, const MultichannelTrial& t, int label, double tol) {
  const LossAndGrad lg = network_loss_grad(s, t, label);
  auto params = parameter_refs(s, lg.grad);
  auto f = [&] { return loss_of(s, t, label); };
  for (auto& p : params) {
    Eigen::Map<const Matrix> g(p.grad, p.rows, p.cols);
    const double scale = g.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double h = p.name == "sinc_bands" ? 1e-4 : 1e-5;
      const double fd = central_difference(p.value[i], h, f);
      INFO(p.name << "[" << i << "] analytic " << p.grad[i] << " fd " << fd);
      REQUIRE(scaled_error(p.grad[i], fd, 1e-2 * scale) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("dimension schedule halves with ceiling", "[network]") {
  REQUIRE(dimension_schedule(6, 3) == std::vector<int>{6, 3, 2, 1});
  REQUIRE(dimension_schedule(9, 2) == std::vector<int>{9, 5, 3});
  const NetworkState s = init_network(toy_shape(Specificity::ChannelSpecific, FilterKind::Conv, true), 0);
  REQUIRE(s.layers.size() == 2);
  REQUIRE(s.layers[0].weight.rows() == 6);
  REQUIRE(s.layers[0].weight.cols() == 3);
  REQUIRE(s.layers[1].weight.cols() == 2);
  REQUIRE(s.head.weight.cols() == 3);
  for (const auto& l : s.layers)
    REQUIRE((l.weight.transpose() * l.weight - Matrix::Identity(l.weight.cols(), l.weight.cols()))
                .norm() < 1e-12);
}

TEST_CASE("initialization is seeded", "[network]") {
  const auto shape = toy_shape(Specificity::ChannelIndependent, FilterKind::Sinc, true);
  const NetworkState a = init_network(shape, 5), b = init_network(shape, 5),
                     c = init_network(shape, 6);
  REQUIRE(a.layers[0].weight == b.layers[0].weight);
  REQUIRE(a.head.weight == b.head.weight);
  REQUIRE(a.layers[0].weight != c.layers[0].weight);
  // Sinc bands tile (4 Hz, Nyquist).
  REQUIRE(a.filterbank.bands(0, 0) == 4.0);
  REQUIRE(a.filterbank.bands(1, 0) + a.filterbank.bands(1, 1) == Catch::Approx(125.0));
}

TEST_CASE("end-to-end gradients match finite differences", "[network][gradient]") {
  std::mt19937_64 rng(1);
  const MultichannelTrial t{random_matrix(3, 80, rng), 250.0};
  struct Case {
    Specificity spec;
    FilterKind kind;
    bool interband;
  };
  for (const Case c : {Case{Specificity::ChannelIndependent, FilterKind::Conv, true},
                       Case{Specificity::ChannelIndependent, FilterKind::Conv, false},
                       Case{Specificity::ChannelSpecific, FilterKind::Conv, true},
                       Case{Specificity::ChannelIndependent, FilterKind::Sinc, true},
                       Case{Specificity::ChannelSpecific, FilterKind::Sinc, true}}) {
    NetworkState s = init_network(toy_shape(c.spec, c.kind, c.interband), 3);
    if (c.kind == FilterKind::Sinc) {
      // Away from clamping edges.
      for (int k = 0; k < s.filterbank.n_kernels(); ++k) {
        s.filterbank.bands(k, 0) = 6.0 + 13.0 * k;
        s.filterbank.bands(k, 1) = 20.0 + 3.0 * k;
      }
    }
    check_all_params(s, t, 1, 1e-4);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients", "[network][gradient]") {
  std::mt19937_64 rng(2);
  const MultichannelTrial t{random_matrix(3, 60, rng), 250.0};
  const NetworkState s = init_network(toy_shape(Specificity::ChannelIndependent, FilterKind::Conv, true), 1);
  const ForwardCache c = network_forward(s, t, 0);
  const NetworkGrad g = network_backward(s, c, Vector::Zero(2));
  REQUIRE(g.kernels.isZero(0.0));
  for (const auto& w : g.weights) REQUIRE(w.isZero(0.0));
  REQUIRE(g.head_weight.isZero(0.0));
  REQUIRE(g.head_bias.isZero(0.0));

  REQUIRE_THROWS_AS(network_backward(s, ForwardCache{}, Vector::Zero(2)), StateError);
}

TEST_CASE("duplicating a trial doubles its summed gradient", "[network][gradient]") {
  std::mt19937_64 rng(3);
  const MultichannelTrial t{random_matrix(3, 60, rng), 250.0};
  const NetworkState s = init_network(toy_shape(Specificity::ChannelSpecific, FilterKind::Conv, true), 2);
  const LossAndGrad one = network_loss_grad(s, t, 1);
  NetworkGrad sum = NetworkGrad::zeros_like(s);
  sum += one.grad;
  sum += network_loss_grad(s, t, 1).grad;
  NetworkGrad twice = one.grad;
  twice *= 2.0;
  REQUIRE(sum.kernels == twice.kernels);
  for (std::size_t k = 0; k < sum.weights.size(); ++k) REQUIRE(sum.weights[k] == twice.weights[k]);
  REQUIRE(sum.head_weight == twice.head_weight);
  REQUIRE(sum.head_bias == twice.head_bias);
}

TEST_CASE("each BiMap+ReEig output stays above the threshold", "[network][property]") {
  std::mt19937_64 rng(4);
  auto shape = toy_shape(Specificity::ChannelSpecific, FilterKind::Conv, true);
  shape.n_bire = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const NetworkState s = init_network(shape, trial);
    // Low-rank input drives eigenvalues under the threshold.
    const MultichannelTrial t{random_matrix(3, 30, rng, trial % 2 ? 1e-3 : 1.0), 250.0};
    const ForwardCache c = network_forward(s, t);
    for (const auto& lc : c.layers)
      REQUIRE(sym_eig(lc.reeig_out).values.minCoeff() >= 5e-4 * (1.0 - 1e-9));
  }
}

TEST_CASE("pooled-input forward agrees with the full forward", "[network]") {
  std::mt19937_64 rng(5);
  const MultichannelTrial t{random_matrix(3, 60, rng), 250.0};
  NetworkState s = init_network(toy_shape(Specificity::ChannelIndependent, FilterKind::Sinc, false), 4);
  const ForwardCache full = network_forward(s, t, 0);
  const ForwardCache pooled = forward_from_pooled(s, pooled_covariance(s, t), 0);
  REQUIRE(full.head.logits == pooled.head.logits);

  s.filterbank_frozen = true;
  const auto refs = parameter_refs(s, network_loss_grad(s, t, 0).grad);
  REQUIRE(refs.front().name == "bimap0");
}

TEST_CASE("predict_class breaks ties toward the lower index", "[network]") {
  Vector l(3);
  l << 1.0, 2.0, 2.0;
  REQUIRE(predict_class(l) == 1);
  l << 0.0, 0.0, 0.0;
  REQUIRE(predict_class(l) == 0);
}
