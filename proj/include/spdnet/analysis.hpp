#pragma once

// Post-hoc analyses of trained networks: frequency gain of the filterbank,
// peak counting, chosen-frequency coverage, layer-by-layer probing, BiMap
// gain and electrode-frequency relevance.

#include <Eigen/Dense>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spdnet/classifiers.hpp"
#include "spdnet/dataset.hpp"
#include "spdnet/network.hpp"
#include "spdnet/parallel.hpp"

namespace spdnet {

// ---------------------------------------------------------------------------
// Frequency gain

struct GainSpectrum {
  int channel = 0;
  int filter = 0;
  int electrode = 0;
  Vector freqs_hz;
  Vector gain_db;
};

// Mean one-sided FFT magnitude over rows of every trial, scaled by
// 1/sqrt(N) so that stationary signals give length-independent levels.
// Result: rows x (N/2 + 1).
inline Matrix mean_magnitude_spectrum(const std::vector<Matrix>& signals) {
  const Eigen::Index rows = signals.front().rows();
  const int n = static_cast<int>(signals.front().cols());
  const int bins = n / 2 + 1;
  Matrix acc = Matrix::Zero(rows, bins);
  Eigen::FFT<double> fft;
  std::vector<double> in(n);
  std::vector<std::complex<double>> out;
  const double norm = 1.0 / std::sqrt(double(n));
  for (const auto& x : signals)
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int t = 0; t < n; ++t) in[t] = x(r, t);
      fft.fwd(out, in);
      for (int k = 0; k < bins; ++k) acc(r, k) += std::abs(out[k]) * norm;
    }
  return acc / double(signals.size());
}

inline Vector rfft_freqs(int n, double fs_hz) {
  Vector f(n / 2 + 1);
  for (int k = 0; k < f.size(); ++k) f(k) = k * fs_hz / n;
  return f;
}

// Values on the uniform grid k * step, resampled at `at` (clamped into the
// grid range). Cubic B-spline, linear for very short inputs.
inline Vector resample_uniform(const Vector& values, double step, const Vector& at) {
  const double last = step * double(values.size() - 1);
  Vector out(at.size());
  if (values.size() >= 5) {
    boost::math::interpolators::cardinal_cubic_b_spline<double> spline(values.data(),
                                                                       values.size(), 0.0, step);
    for (Eigen::Index i = 0; i < at.size(); ++i) out(i) = spline(std::clamp(at(i), 0.0, last));
    return out;
  }
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double x = std::clamp(at(i), 0.0, last) / step;
    const auto j = std::min<Eigen::Index>(static_cast<Eigen::Index>(x), values.size() - 1);
    const auto j1 = std::min<Eigen::Index>(j + 1, values.size() - 1);
    out(i) = values(j) + (x - double(j)) * (values(j1) - values(j));
  }
  return out;
}

// Replaces -inf entries by linear interpolation between finite neighbours
// (nearest finite value at the ends). Returns false when more than half of
// the entries are -inf.
inline bool repair_neg_inf(Vector& g) {
  const Eigen::Index n = g.size();
  Eigen::Index bad = 0;
  for (Eigen::Index i = 0; i < n; ++i) bad += !std::isfinite(g(i));
  if (2 * bad > n) return false;
  if (bad == 0) return true;
  std::vector<Eigen::Index> good;
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::isfinite(g(i))) good.push_back(i);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(g(i))) continue;
    auto hi = std::lower_bound(good.begin(), good.end(), i);
    if (hi == good.begin()) {
      g(i) = g(*hi);
    } else if (hi == good.end()) {
      g(i) = g(good.back());
    } else {
      const Eigen::Index b = *hi, a = *(hi - 1);
      g(i) = g(a) + (g(b) - g(a)) * double(i - a) / double(b - a);
    }
  }
  return true;
}

// Gain of every filterbank channel, 20 log10(post / pre), positive meaning
// amplification. Spectra with more than half -inf entries are dropped.
inline std::vector<GainSpectrum> freq_gain(const NetworkState& s, const Dataset& data,
                                           int threads = 0) {
  if (data.empty()) throw std::invalid_argument("freq_gain: no trials");
  const FilterbankSpec& fb = s.filterbank;
  const Matrix kernels = fb.materialize();
  std::vector<Matrix> raw(data.size()), filtered(data.size());
  parallel_for(data.size(), resolve_threads(threads), [&](std::size_t i) {
    raw[i] = data.trials[i].samples;
    filtered[i] = filterbank_apply(raw[i], fb, kernels);
  });
  const double fs = data.fs_hz();
  const Matrix pre = mean_magnitude_spectrum(raw);
  const Matrix post = mean_magnitude_spectrum(filtered);
  const Vector freqs = rfft_freqs(data.samples(), fs);
  const double post_step = fs / double(filtered.front().cols());

  std::vector<GainSpectrum> out;
  for (int f = 0; f < fb.n_filters; ++f)
    for (int e = 0; e < fb.n_electrodes; ++e) {
      const int c = fb.channel_index(f, e);
      const Vector post_on_raw = resample_uniform(post.row(c).transpose(), post_step, freqs);
      GainSpectrum g;
      g.channel = c;
      g.filter = f;
      g.electrode = e;
      g.freqs_hz = freqs;
      g.gain_db.resize(freqs.size());
      for (Eigen::Index k = 0; k < freqs.size(); ++k) {
        const double num = post_on_raw(k), den = pre(e, k);
        g.gain_db(k) = (num > 0.0 && den > 0.0) ? 20.0 * std::log10(num / den)
                                                : -std::numeric_limits<double>::infinity();
      }
      if (repair_neg_inf(g.gain_db)) out.push_back(std::move(g));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Peak counting

struct PeakOptions {
  double smooth_hz = 2.0;      // moving-average window
  double min_width_hz = 1.0;   // width at half prominence
  double height_factor = 1.5;  // times the standard deviation
};

struct Peak {
  Eigen::Index index = 0;
  double freq_hz = 0.0;
  double height = 0.0;
  double prominence = 0.0;
  double width_bins = 0.0;
};

inline Vector moving_average(const Vector& x, int window) {
  const Eigen::Index n = x.size();
  const int half = window / 2;
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index a = std::max<Eigen::Index>(0, i - half);
    const Eigen::Index b = std::min<Eigen::Index>(n - 1, i + half);
    out(i) = x.segment(a, b - a + 1).mean();
  }
  return out;
}

inline double median(Vector v) {
  std::sort(v.data(), v.data() + v.size());
  const Eigen::Index n = v.size();
  return n % 2 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

// Local maxima (flat tops resolved to their middle) with prominence and
// width at half prominence, in the manner of the usual signal-processing
// peak finders.
inline std::vector<Peak> find_peaks(const Vector& x, double min_height, double min_width_bins) {
  const Eigen::Index n = x.size();
  std::vector<Peak> peaks;
  Eigen::Index i = 1;
  while (i < n - 1) {
    if (x(i - 1) < x(i)) {
      Eigen::Index j = i;
      while (j + 1 < n && x(j + 1) == x(i)) ++j;
      if (j + 1 < n && x(j + 1) < x(i)) {
        const Eigen::Index mid = (i + j) / 2;
        Peak p;
        p.index = mid;
        p.height = x(mid);
        // Prominence: lowest point on each side before a higher sample.
        double left_min = x(mid), right_min = x(mid);
        for (Eigen::Index k = mid; k >= 0 && x(k) <= x(mid); --k) left_min = std::min(left_min, x(k));
        for (Eigen::Index k = mid; k < n && x(k) <= x(mid); ++k) right_min = std::min(right_min, x(k));
        const double base = std::max(left_min, right_min);
        p.prominence = x(mid) - base;
        const double ref = x(mid) - 0.5 * p.prominence;
        double left = double(mid), right = double(mid);
        for (Eigen::Index k = mid; k > 0; --k)
          if (x(k - 1) < ref) {
            left = double(k - 1) + (ref - x(k - 1)) / (x(k) - x(k - 1));
            break;
          } else if (k - 1 == 0) {
            left = 0.0;
          }
        for (Eigen::Index k = mid; k + 1 < n; ++k)
          if (x(k + 1) < ref) {
            right = double(k + 1) - (ref - x(k + 1)) / (x(k) - x(k + 1));
            break;
          } else if (k + 1 == n - 1) {
            right = double(n - 1);
          }
        p.width_bins = right - left;
        if (p.height >= min_height && p.width_bins >= min_width_bins) peaks.push_back(p);
      }
      i = j + 1;
    } else {
      ++i;
    }
  }
  return peaks;
}

// Smooth, zero around the median, then keep peaks at least `height_factor`
// standard deviations high and `min_width_hz` wide.
inline std::vector<Peak> detect_peaks(const GainSpectrum& gs, const PeakOptions& opt = {}) {
  const Eigen::Index n = gs.gain_db.size();
  if (n < 3) return {};
  const double df = gs.freqs_hz(1) - gs.freqs_hz(0);
  int window = std::max(1, static_cast<int>(std::lround(opt.smooth_hz / df)));
  if (window % 2 == 0) ++window;
  Vector x = moving_average(gs.gain_db, window);
  x.array() -= median(x);
  const double sd = std::sqrt((x.array() - x.mean()).square().mean());
  if (!(sd > 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff()))) return {};
  std::vector<Peak> peaks = find_peaks(x, opt.height_factor * sd, opt.min_width_hz / df);
  for (auto& p : peaks) p.freq_hz = gs.freqs_hz(p.index);
  return peaks;
}

inline int peak_count(const GainSpectrum& gs, const PeakOptions& opt = {}) {
  return static_cast<int>(detect_peaks(gs, opt).size());
}

struct MultibandShares {
  double none = 0.0;
  double single = 0.0;
  double multi = 0.0;
};

// Percent of spectra with 0, 1 and more than 1 peak.
inline std::optional<MultibandShares> multiband_histogram(const std::vector<int>& counts) {
  if (counts.empty()) return std::nullopt;
  MultibandShares h;
  for (int c : counts) (c == 0 ? h.none : c == 1 ? h.single : h.multi) += 1.0;
  const double scale = 100.0 / double(counts.size());
  h.none *= scale;
  h.single *= scale;
  h.multi *= scale;
  return h;
}

inline std::optional<MultibandShares> multiband_histogram(const std::vector<GainSpectrum>& spectra,
                                                          const PeakOptions& opt = {}) {
  std::vector<int> counts;
  for (const auto& g : spectra) counts.push_back(peak_count(g, opt));
  return multiband_histogram(counts);
}

// ---------------------------------------------------------------------------
// Chosen-frequency coverage: percent of bands whose [low, high] contains
// each grid frequency.

inline Vector chosen_freq_coverage(const std::vector<std::pair<double, double>>& low_high,
                                   const Vector& grid_hz) {
  Vector out = Vector::Zero(grid_hz.size());
  if (low_high.empty()) return out;
  for (const auto& [lo, hi] : low_high)
    for (Eigen::Index i = 0; i < grid_hz.size(); ++i)
      if (grid_hz(i) >= lo && grid_hz(i) <= hi) out(i) += 1.0;
  return out * (100.0 / double(low_high.size()));
}

// Effective (clamped) pass bands of (low, bandwidth) rows.
inline std::vector<std::pair<double, double>> effective_bands(const Matrix& bands, double fs_hz) {
  std::vector<std::pair<double, double>> out;
  for (Eigen::Index k = 0; k < bands.rows(); ++k) {
    const EffectiveBand b = clamp_band(bands(k, 0), bands(k, 1), fs_hz);
    out.emplace_back(b.low, b.high);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer-by-layer probing

struct ProbeResult {
  std::string layer;
  std::string classifier;  // "svm", "rsvm" or "head"
  double accuracy = 0.0;
  double delta = 0.0;      // accuracy minus network accuracy
};

struct ProbeReport {
  double network_accuracy = 0.0;
  std::vector<ProbeResult> results;
};

namespace detail {

// Named intermediate matrices of one trial, in network order.
inline std::vector<std::pair<std::string, SymmetricMatrix>> stages(const ForwardCache& c) {
  std::vector<std::pair<std::string, SymmetricMatrix>> out{{"cov_pool", c.pooled}};
  for (std::size_t k = 0; k < c.layers.size(); ++k) {
    out.emplace_back("bimap" + std::to_string(k + 1), c.layers[k].bimap_out);
    out.emplace_back("reeig" + std::to_string(k + 1), c.layers[k].reeig_out);
  }
  out.emplace_back("logeig", c.log_out);
  return out;
}

}  // namespace detail

// Fits a linear SVM on vectorized features and an rSVM on (ReEig-regularized)
// SPD features after every stage; LogEig outputs are probed with the SVM only.
// The network's own head is applied to the LogEig features as a consistency
// probe.
inline ProbeReport lbl_probe(const NetworkState& s, const Dataset& train, const Dataset& test,
                             Metric metric = Metric::LogEuclidean, double reeig_eps = kReEigThreshold,
                             int threads = 0) {
  if (train.empty() || test.empty()) throw std::invalid_argument("lbl_probe: empty split");
  const int k = s.n_classes();
  auto forward_all = [&](const Dataset& d) {
    std::vector<ForwardCache> out(d.size());
    parallel_for(d.size(), resolve_threads(threads),
                 [&](std::size_t i) { out[i] = network_forward(s, d.trials[i]); });
    return out;
  };
  const auto tr = forward_all(train), te = forward_all(test);

  ProbeReport rep;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < te.size(); ++i)
    correct += predict_class(te[i].head.logits) == test.labels[i];
  rep.network_accuracy = double(correct) / double(te.size());

  const std::size_t n_stages = detail::stages(tr.front()).size();
  for (std::size_t st = 0; st < n_stages; ++st) {
    std::vector<SymmetricMatrix> ftr, fte;
    std::string name;
    for (const auto& c : tr) {
      auto stage = detail::stages(c)[st];
      name = stage.first;
      ftr.push_back(std::move(stage.second));
    }
    for (const auto& c : te) fte.push_back(detail::stages(c)[st].second);

    auto accuracy = [&](auto predict) {
      std::size_t hit = 0;
      for (std::size_t i = 0; i < fte.size(); ++i) hit += predict(i) == test.labels[i];
      return double(hit) / double(fte.size());
    };
    auto add = [&](const std::string& clf, double acc) {
      rep.results.push_back({name, clf, acc, acc - rep.network_accuracy});
    };

    std::vector<Vector> xtr, xte;
    for (const auto& m : ftr) xtr.push_back(vectorize(m));
    for (const auto& m : fte) xte.push_back(vectorize(m));
    const LinearSvmModel svm = svm_fit(xtr, train.labels, k);
    add("svm", accuracy([&](std::size_t i) { return svm_predict(svm, xte[i]); }));

    if (name == "logeig") {
      add("head", accuracy([&](std::size_t i) {
            return predict_class(head_forward(fte[i], s.head, -1).logits);
          }));
      continue;
    }
    std::vector<SpdMatrix> str, ste;
    for (const auto& m : ftr) str.emplace_back(reeig(m, reeig_eps));
    for (const auto& m : fte) ste.emplace_back(reeig(m, reeig_eps));
    const RsvmModel rsvm = rsvm_fit(str, train.labels, k, metric);
    add("rsvm", accuracy([&](std::size_t i) { return rsvm_predict(rsvm, ste[i]); }));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// BiMap gain: G_pq = (sum_i W_pi)(sum_j W_qj); per-input value = row sums.

struct BimapGain {
  Matrix g;
  Vector row_sums;
};

inline BimapGain bimap_gain(const Matrix& w) {
  const Vector r = w.rowwise().sum();
  BimapGain out;
  out.g = r * r.transpose();
  out.row_sums = out.g.rowwise().sum();
  return out;
}

// ---------------------------------------------------------------------------
// Electrode-frequency relevance

struct RelevanceMap {
  Vector freqs_hz;
  // values[class][electrode] over freqs_hz
  std::vector<std::vector<Vector>> values;
};

// Gradient of softmax(logits)[label] with respect to the pooled covariance.
inline Matrix prob_grad_pooled(const NetworkState& s, const SymmetricMatrix& pooled, int label) {
  const ForwardCache c = forward_from_pooled(s, pooled);
  const Vector& p = c.head.probs;
  Vector dlogits = -p(label) * p;
  dlogits(label) += p(label);
  Matrix g;
  network_backward(s, c, dlogits, &g);
  return g;
}

// Per trial: row sums of the covariance gradient of the true-class
// probability give one scalar per channel; each scales that channel's
// 0-1 normalized gain spectrum; filters are summed per electrode and the
// result averaged over the trials of each class. Channels without a
// spectrum contribute nothing.
inline RelevanceMap electrode_freq_relevance(const NetworkState& s, const Dataset& train,
                                             const std::vector<GainSpectrum>& spectra,
                                             int threads = 0) {
  if (train.empty()) throw std::invalid_argument("relevance: no trials");
  const FilterbankSpec& fb = s.filterbank;
  const int k = s.n_classes();
  RelevanceMap out;
  if (spectra.empty()) return out;
  out.freqs_hz = spectra.front().freqs_hz;
  const Eigen::Index nf = out.freqs_hz.size();

  std::vector<std::optional<Vector>> unit(fb.channels());
  for (const auto& g : spectra) {
    const double lo = g.gain_db.minCoeff(), hi = g.gain_db.maxCoeff();
    unit[g.channel] = hi > lo ? Vector((g.gain_db.array() - lo) / (hi - lo)) : Vector(Vector::Zero(nf));
  }

  std::vector<Vector> channel_scalars(train.size());
  parallel_for(train.size(), resolve_threads(threads), [&](std::size_t i) {
    const Matrix g = prob_grad_pooled(s, pooled_covariance(s, train.trials[i]), train.labels[i]);
    channel_scalars[i] = g.rowwise().sum();
  });

  out.values.assign(k, std::vector<Vector>(fb.n_electrodes, Vector::Zero(nf)));
  std::vector<int> counts(k, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int label = train.labels[i];
    ++counts[label];
    for (int f = 0; f < fb.n_filters; ++f)
      for (int e = 0; e < fb.n_electrodes; ++e) {
        const int c = fb.channel_index(f, e);
        if (unit[c]) out.values[label][e] += channel_scalars[i](c) * *unit[c];
      }
  }
  for (int c = 0; c < k; ++c)
    if (counts[c] > 0)
      for (auto& v : out.values[c]) v /= double(counts[c]);
  return out;
}

}  // namespace spdnet
