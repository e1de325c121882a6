#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "constructed_spectra.hpp"
#include "spdnet/analysis.hpp"
#include "spdnet/synth.hpp"
#include "test_support.hpp"

using namespace spdnet;
using namespace spdnet::testing;

namespace {

Dataset noise_data(int trials, int electrodes, int samples, std::uint64_t seed) {
  SynthSpec s;
  s.n_electrodes = electrodes;
  s.n_samples = samples;
  s.trials_per_class = trials / 2;
  s.seed = seed;
  s.classes = {{{{0}, 10.0, 0.0}}, {{{0}, 10.0, 0.0}}};
  return synth_generate(s);
}

NetworkState conv_net(int electrodes, int filters, int kernel_len, int n_bire,
                      std::uint64_t seed = 0) {
  NetworkShape sh;
  sh.n_electrodes = electrodes;
  sh.n_filters = filters;
  sh.kernel_len = kernel_len;
  sh.n_bire = n_bire;
  sh.kind = FilterKind::Conv;
  return init_network(sh, seed);
}

Matrix delta_kernels(const NetworkState& s) {
  Matrix k = Matrix::Zero(s.filterbank.n_kernels(), s.filterbank.kernel_len);
  k.col(s.filterbank.kernel_len / 2).setOnes();
  return k;
}

}  // namespace

TEST_CASE("single-tap identity filter has exactly zero gain", "[analysis][gain]") {
  const Dataset d = noise_data(20, 2, 128, 1);
  NetworkState s = conv_net(2, 1, 1, 1);
  s.filterbank.kernels = delta_kernels(s);
  const auto g = freq_gain(s, d);
  REQUIRE(g.size() == 2);
  for (const auto& sp : g) {
    REQUIRE(sp.gain_db.cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE(sp.freqs_hz.size() == 65);
    for (Eigen::Index k = 1; k < sp.freqs_hz.size(); ++k)
      REQUIRE(sp.freqs_hz(k) > sp.freqs_hz(k - 1));
  }
}

TEST_CASE("delta kernel gives 0 dB away from the edges", "[analysis][gain]") {
  // White noise: the per-bin magnitude average needs many trials to settle.
  const Dataset d = noise_data(20000, 1, 128, 2);
  NetworkState s = conv_net(1, 1, 9, 1);
  s.filterbank.kernels = delta_kernels(s);
  const auto g = freq_gain(s, d);
  REQUIRE(g.size() == 1);
  const Vector& db = g[0].gain_db;
  const Eigen::Index n = db.size();
  double worst = 0.0;
  for (Eigen::Index k = 3; k < n - 3; ++k) worst = std::max(worst, std::abs(db(k)));
  REQUIRE(worst < 0.1);
}

TEST_CASE("sinc band passes 10 Hz and stops 40 Hz", "[analysis][gain]") {
  const Dataset d = noise_data(40, 1, 500, 3);
  NetworkShape sh;
  sh.n_electrodes = 1;
  sh.kind = FilterKind::Sinc;
  sh.kernel_len = 101;
  sh.n_bire = 1;
  NetworkState s = init_network(sh, 0);
  s.filterbank.bands << 8.0, 4.0;
  const auto g = freq_gain(s, d);
  REQUIRE(g.size() == 1);
  auto at = [&](double hz) {
    const Vector& f = g[0].freqs_hz;
    Eigen::Index best = 0;
    for (Eigen::Index k = 0; k < f.size(); ++k)
      if (std::abs(f(k) - hz) < std::abs(f(best) - hz)) best = k;
    return g[0].gain_db(best);
  };
  REQUIRE(at(10.0) - at(40.0) >= 20.0);
}

TEST_CASE("doubling a kernel adds 6.02 dB", "[analysis][gain]") {
  const Dataset d = noise_data(10, 2, 200, 4);
  NetworkState s = conv_net(2, 2, 7, 1, 5);
  const auto base = freq_gain(s, d);
  s.filterbank.kernels *= 2.0;
  const auto twice = freq_gain(s, d);
  REQUIRE(base.size() == twice.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const Vector diff = twice[i].gain_db - base[i].gain_db;
    REQUIRE((diff.array() - 20.0 * std::log10(2.0)).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("channels map to filter and electrode", "[analysis][gain]") {
  const Dataset d = noise_data(4, 3, 100, 6);
  NetworkShape sh;
  sh.n_electrodes = 3;
  sh.n_filters = 2;
  sh.specificity = Specificity::ChannelSpecific;
  sh.kernel_len = 5;
  const NetworkState s = init_network(sh, 1);
  const auto g = freq_gain(s, d);
  REQUIRE(g.size() == 6);
  for (const auto& sp : g) REQUIRE(sp.channel == s.filterbank.channel_index(sp.filter, sp.electrode));
}

TEST_CASE("zero kernels are discarded", "[analysis][gain]") {
  const Dataset d = noise_data(4, 2, 100, 7);
  NetworkState s = conv_net(2, 2, 5, 1);
  s.filterbank.kernels.row(0).setZero();
  const auto g = freq_gain(s, d);
  REQUIRE(g.size() == 2);  // ChInd: one kernel feeds both electrodes of filter 0
  for (const auto& sp : g) REQUIRE(sp.filter == 1);
  s.filterbank.kernels.setZero();
  REQUIRE(freq_gain(s, d).empty());
}

TEST_CASE("negative infinity repair", "[analysis][gain]") {
  const double inf = std::numeric_limits<double>::infinity();
  Vector g(8);
  g << -inf, 1.0, -inf, -inf, 4.0, 5.0, 6.0, -inf;
  REQUIRE(repair_neg_inf(g));
  Vector want(8);
  want << 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 6.0;
  REQUIRE((g - want).cwiseAbs().maxCoeff() < 1e-15);
  Vector bad(5);
  bad << -inf, -inf, -inf, 1.0, 2.0;
  REQUIRE_FALSE(repair_neg_inf(bad));
}

TEST_CASE("resampling reproduces smooth functions", "[analysis][gain]") {
  const double step = 0.5;
  Vector v(80);
  for (int i = 0; i < 80; ++i) v(i) = std::sin(0.1 * i * step);
  Vector at(50);
  for (int i = 0; i < 50; ++i) at(i) = 0.37 + 0.7 * i;
  const Vector r = resample_uniform(v, step, at);
  for (int i = 0; i < 50; ++i) {
    const double x = std::min(at(i), step * 79);
    REQUIRE(std::abs(r(i) - std::sin(0.1 * x)) < 1e-4);
  }
}

TEST_CASE("peak counts on constructed spectra", "[analysis][peaks]") {
  GainSpectrum flat = bump_spectrum({}, 0.0, 0.0, 0);
  REQUIRE(peak_count(flat) == 0);
  REQUIRE(peak_count(bump_spectrum({30.0}, 0.0, 1.0, 1)) == 1);
  REQUIRE(peak_count(bump_spectrum({20.0, 60.0}, 0.0, 1.0, 2)) == 2);
  const auto peaks = detect_peaks(bump_spectrum({20.0, 60.0}, 0.0, 0.0, 0));
  REQUIRE(peaks.size() == 2);
  REQUIRE(peaks[0].freq_hz == Catch::Approx(20.0).margin(0.5));
  REQUIRE(peaks[1].freq_hz == Catch::Approx(60.0).margin(0.5));
  for (const auto& c : constructed_corpus()) REQUIRE(peak_count(c.spectrum) == c.expected_peaks);
}

TEST_CASE("find_peaks resolves plateaus and widths", "[analysis][peaks]") {
  Vector x(9);
  x << 0, 1, 3, 3, 3, 1, 0, 2, 0;
  const auto p = find_peaks(x, 0.5, 0.0);
  REQUIRE(p.size() == 2);
  REQUIRE(p[0].index == 3);
  REQUIRE(p[0].prominence == 3.0);
  // Half prominence at 1.5: crossings at 1.25 and 4.75.
  REQUIRE(p[0].width_bins == Catch::Approx(3.5));
  REQUIRE(p[1].index == 7);
  REQUIRE(p[1].prominence == 2.0);
  REQUIRE(find_peaks(x, 0.5, 1.5).size() == 1);
  REQUIRE(find_peaks(x, 2.5, 0.0).size() == 1);
}

TEST_CASE("multiband histogram", "[analysis][peaks]") {
  REQUIRE_FALSE(multiband_histogram(std::vector<int>{}).has_value());
  auto h = multiband_histogram(std::vector<int>{1, 1, 1});
  REQUIRE(h->single == 100.0);
  REQUIRE(h->none == 0.0);
  h = multiband_histogram(std::vector<int>{1, 2, 1, 3});
  REQUIRE(h->single == 50.0);
  REQUIRE(h->multi == 50.0);

  const auto corpus = constructed_corpus();
  std::vector<GainSpectrum> spectra;
  int zero = 0, one = 0, many = 0;
  for (const auto& c : corpus) {
    spectra.push_back(c.spectrum);
    (c.expected_peaks == 0 ? zero : c.expected_peaks == 1 ? one : many)++;
  }
  h = multiband_histogram(spectra);
  REQUIRE(h->none == Catch::Approx(100.0 * zero / 20));
  REQUIRE(h->single == Catch::Approx(100.0 * one / 20));
  REQUIRE(h->multi == Catch::Approx(100.0 * many / 20));
  REQUIRE(std::abs(h->none + h->single + h->multi - 100.0) <= 0.01);
}

TEST_CASE("chosen frequency coverage", "[analysis][coverage]") {
  const Vector grid = Vector::LinSpaced(251, 0.0, 125.0);
  Vector c = chosen_freq_coverage({{8.0, 12.0}}, grid);
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    REQUIRE(c(i) == ((grid(i) >= 8.0 && grid(i) <= 12.0) ? 100.0 : 0.0));
  c = chosen_freq_coverage({{8.0, 12.0}, {20.0, 30.0}}, grid);
  REQUIRE(c(20) == 50.0);
  REQUIRE(c(50) == 50.0);
  REQUIRE(c(30) == 0.0);

  // Random bands on the 0.5 Hz grid against counting by grid index.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> idx(0, 250);
  std::vector<std::pair<double, double>> bands;
  std::vector<int> count(251, 0);
  for (int b = 0; b < 37; ++b) {
    int lo = idx(rng), hi = idx(rng);
    if (lo > hi) std::swap(lo, hi);
    bands.emplace_back(0.5 * lo, 0.5 * hi);
    for (int i = lo; i <= hi; ++i) ++count[i];
  }
  c = chosen_freq_coverage(bands, grid);
  for (int i = 0; i < 251; ++i) {
    REQUIRE(c(i) == Catch::Approx(100.0 * count[i] / 37.0).epsilon(1e-14));
    REQUIRE(c(i) >= 0.0);
    REQUIRE(c(i) <= 100.0);
  }

  Matrix raw(2, 2);
  raw << 100.0, 50.0, 10.0, 5.0;
  const auto eff = effective_bands(raw, 250.0);
  REQUIRE(eff[0].second == 125.0);
  REQUIRE(eff[1].second == 15.0);
}

TEST_CASE("bimap gain", "[analysis][bimap]") {
  BimapGain g = bimap_gain(Matrix::Identity(2, 2));
  REQUIRE(g.g == Matrix::Ones(2, 2));
  REQUIRE(g.row_sums == Vector::Constant(2, 2.0));

  std::mt19937_64 rng(9);
  Matrix w = random_matrix(6, 3, rng);
  w.row(2).setZero();
  g = bimap_gain(w);
  REQUIRE(g.g.row(2).isZero(0.0));
  REQUIRE(g.g.col(2).isZero(0.0));
  REQUIRE(g.g == g.g.transpose());
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) {
      double want = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) want += w(p, i) * w(q, j);
      REQUIRE(std::abs(g.g(p, q) - want) <= 1e-12);
    }
}

TEST_CASE("probability gradient wrt covariance matches finite differences", "[analysis][relevance]") {
  NetworkState s = conv_net(3, 1, 3, 1, 11);
  std::mt19937_64 rng(12);
  const SymmetricMatrix c = spd_with_spectrum(Vector::LinSpaced(3, 3.0, 1.0), rng);
  const int label = 1;
  const Matrix g = prob_grad_pooled(s, c, label);
  auto prob = [&](const Matrix& m) {
    return forward_from_pooled(s, SymmetricMatrix(m)).head.probs(label);
  };
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      Matrix e = Matrix::Zero(3, 3);
      e(i, j) += h;
      e(j, i) += h;
      const double fd = (prob(c.matrix() + e) - prob(c.matrix() - e)) / (2.0 * h);
      const double want = i == j ? fd / 2.0 : fd;
      const double got = i == j ? g(i, i) : g(i, j) + g(j, i);
      REQUIRE(scaled_error(got, want, 1e-3 * g.norm()) <= 1e-5);
    }
}

TEST_CASE("relevance of a one-channel net is analytic", "[analysis][relevance]") {
  // One electrode, no BiRe layers: logits = w log(c) + b.
  const Dataset d = noise_data(6, 1, 100, 13);
  NetworkState s = conv_net(1, 1, 3, 0, 14);
  s.head.weight << 1.5, -0.5;
  s.head.bias << 0.1, 0.0;
  const auto spectra = freq_gain(s, d);
  REQUIRE(spectra.size() == 1);
  const RelevanceMap r = electrode_freq_relevance(s, d, spectra);
  REQUIRE(r.values.size() == 2);

  const Vector& db = spectra[0].gain_db;
  const Vector unit = (db.array() - db.minCoeff()) / (db.maxCoeff() - db.minCoeff());
  for (int k = 0; k < 2; ++k) {
    double mean = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] != k) continue;
      const double c = pooled_covariance(s, d.trials[i])(0, 0);
      const Vector logits = s.head.weight.col(0) * std::log(c) + s.head.bias;
      const Vector p = softmax(logits);
      mean += p(k) * (s.head.weight(k, 0) - p.dot(s.head.weight.col(0))) / c;
      ++n;
    }
    mean /= n;
    REQUIRE(((r.values[k][0] - mean * unit).array().abs() <= 1e-10 * std::abs(mean)).all());
    // Class 0 has the larger weight: its probability rises with power.
    if (k == 0) REQUIRE(mean > 0.0);
    if (k == 1) REQUIRE(mean < 0.0);
  }
}

TEST_CASE("zero head gives zero relevance", "[analysis][relevance]") {
  const Dataset d = noise_data(6, 2, 100, 15);
  NetworkState s = conv_net(2, 2, 5, 1, 16);
  s.head.weight.setZero();
  s.head.bias.setZero();
  const auto spectra = freq_gain(s, d);
  const RelevanceMap r = electrode_freq_relevance(s, d, spectra);
  REQUIRE(r.values.size() == 2);
  for (const auto& cls : r.values) {
    REQUIRE(cls.size() == 2);
    for (const auto& v : cls) REQUIRE(v.isZero(0.0));
  }
}

TEST_CASE("layer-by-layer probing", "[analysis][lbl]") {
  SynthSpec spec;
  spec.n_electrodes = 3;
  spec.n_samples = 120;
  spec.trials_per_class = 20;
  spec.seed = 17;
  spec.classes = {{{{0}, 12.0, 2.0}}, {{{1}, 12.0, 2.0}}};
  const Dataset d = synth_generate(spec);
  const Split sp = sequential_split(d, 0.25);
  const NetworkState s = conv_net(3, 2, 5, 2, 18);
  const ProbeReport rep = lbl_probe(s, sp.train, sp.test);

  // Stage order and classifier coverage.
  std::vector<std::string> names;
  for (const auto& r : rep.results) names.push_back(r.layer + "/" + r.classifier);
  REQUIRE(names == std::vector<std::string>{"cov_pool/svm", "cov_pool/rsvm", "bimap1/svm",
                                            "bimap1/rsvm", "reeig1/svm", "reeig1/rsvm",
                                            "bimap2/svm", "bimap2/rsvm", "reeig2/svm",
                                            "reeig2/rsvm", "logeig/svm", "logeig/head"});
  const auto& head = rep.results.back();
  REQUIRE(head.accuracy == rep.network_accuracy);
  REQUIRE(head.delta == 0.0);
  int hits = 0;
  for (std::size_t i = 0; i < sp.test.size(); ++i)
    hits += predict_class(network_forward(s, sp.test.trials[i]).head.logits) == sp.test.labels[i];
  REQUIRE(double(hits) / double(sp.test.size()) == rep.network_accuracy);
  for (const auto& r : rep.results) REQUIRE(r.delta == r.accuracy - rep.network_accuracy);
  // The planted structure is visible to the rSVM on raw covariances.
  REQUIRE(rep.results[1].accuracy >= 0.8);

  // Train = test on 10 trials: the SVM memorizes.
  const Dataset ten = d.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const ProbeReport mem = lbl_probe(s, ten, ten);
  REQUIRE(mem.results[0].accuracy == 1.0);
}
