#pragma once

// Temporal filterbank front-end: free convolution kernels or sinc band-pass
// kernels, applied per filter to every electrode (channel independent) or
// per (filter, electrode) pair (channel specific).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spdnet/spd.hpp"

namespace spdnet {

enum class Specificity { ChannelIndependent, ChannelSpecific };
enum class FilterKind { Conv, Sinc };

inline const char* specificity_name(Specificity s) {
  return s == Specificity::ChannelIndependent ? "chind" : "chspec";
}
inline const char* filter_kind_name(FilterKind k) {
  return k == FilterKind::Conv ? "conv" : "sinc";
}

// Band-pass cutoffs after clamping into (0, Nyquist].
struct EffectiveBand {
  double low = 0.0;
  double high = 0.0;
  // Partial derivatives of (low, high) wrt the raw (low_hz, bandwidth_hz).
  double dlow_dlow = 0.0;
  double dhigh_dlow = 0.0;
  double dhigh_dbw = 0.0;
};

inline EffectiveBand clamp_band(double low_hz, double bandwidth_hz, double fs_hz) {
  const double nyquist = 0.5 * fs_hz;
  EffectiveBand b;
  b.low = std::clamp(low_hz, 0.0, nyquist);
  b.dlow_dlow = (low_hz > 0.0 && low_hz < nyquist) ? 1.0 : 0.0;
  const double raw_high = b.low + bandwidth_hz;
  if (raw_high <= b.low) {
    b.high = b.low;
    b.dhigh_dlow = b.dlow_dlow;
  } else if (raw_high >= nyquist) {
    b.high = nyquist;
  } else {
    b.high = raw_high;
    b.dhigh_dlow = b.dlow_dlow;
    b.dhigh_dbw = 1.0;
  }
  return b;
}

inline double hamming(int j, int len) {
  if (len == 1) return 1.0;
  return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * j / double(len - 1));
}

struct SincKernel {
  Vector kernel;
  Vector d_low;        // d kernel / d low_hz
  Vector d_bandwidth;  // d kernel / d bandwidth_hz
};

// Hamming-windowed difference of two ideal low-passes,
//   k[n] = w[n] * (2h sinc(2h n) - 2l sinc(2l n)),  h, l in cycles/sample,
// with n centered on the kernel. Cutoffs are clamped before evaluation.
inline SincKernel sinc_kernel_with_grad(double low_hz, double bandwidth_hz,
                                        double fs_hz, int len) {
  if (!(fs_hz > 0.0)) throw std::invalid_argument("sinc_kernel: fs must be positive");
  if (len < 1) throw std::invalid_argument("sinc_kernel: kernel length must be >= 1");
  const EffectiveBand band = clamp_band(low_hz, bandwidth_hz, fs_hz);
  const double pi = std::numbers::pi;
  // g(f, n) = sin(2 pi f n / fs) / (pi n);  dg/df = (2 / fs) cos(2 pi f n / fs)
  auto lowpass = [&](double f, double n) {
    if (n == 0.0) return 2.0 * f / fs_hz;
    return std::sin(2.0 * pi * f * n / fs_hz) / (pi * n);
  };
  auto lowpass_df = [&](double f, double n) {
    return 2.0 / fs_hz * std::cos(2.0 * pi * f * n / fs_hz);
  };
  SincKernel out;
  out.kernel.resize(len);
  out.d_low.resize(len);
  out.d_bandwidth.resize(len);
  const double center = 0.5 * (len - 1);
  for (int j = 0; j < len; ++j) {
    const double n = j - center;
    const double w = hamming(j, len);
    out.kernel(j) = w * (lowpass(band.high, n) - lowpass(band.low, n));
    const double dh = w * lowpass_df(band.high, n);
    const double dl = w * lowpass_df(band.low, n);
    out.d_low(j) = dh * band.dhigh_dlow - dl * band.dlow_dlow;
    out.d_bandwidth(j) = dh * band.dhigh_dbw;
  }
  return out;
}

inline Vector sinc_kernel(double low_hz, double bandwidth_hz, double fs_hz,
                          int len = 25) {
  return sinc_kernel_with_grad(low_hz, bandwidth_hz, fs_hz, len).kernel;
}

struct FilterbankSpec {
  int n_filters = 1;
  int n_electrodes = 1;
  Specificity specificity = Specificity::ChannelIndependent;
  FilterKind kind = FilterKind::Conv;
  int kernel_len = 25;
  bool interband = true;
  double fs_hz = 250.0;
  Matrix kernels;  // Conv: n_kernels() x kernel_len
  Matrix bands;    // Sinc: n_kernels() x 2, columns (low_hz, bandwidth_hz)

  int n_kernels() const {
    return specificity == Specificity::ChannelSpecific ? n_filters * n_electrodes
                                                       : n_filters;
  }
  int channels() const { return n_filters * n_electrodes; }
  int kernel_index(int filter, int electrode) const {
    return specificity == Specificity::ChannelSpecific
               ? filter * n_electrodes + electrode
               : filter;
  }
  // Output channel index, filter-major.
  int channel_index(int filter, int electrode) const {
    return filter * n_electrodes + electrode;
  }
  bool uses_interband() const { return n_filters > 1 && interband; }

  void validate() const {
    if (n_filters < 1) throw std::invalid_argument("filterbank: n_filters must be >= 1");
    if (n_electrodes < 1) throw std::invalid_argument("filterbank: n_electrodes must be >= 1");
    if (kernel_len < 1) throw std::invalid_argument("filterbank: kernel_len must be >= 1");
    if (!(fs_hz > 0.0)) throw std::invalid_argument("filterbank: fs must be positive");
    if (specificity == Specificity::ChannelSpecific && n_filters > 1 && !interband)
      throw std::invalid_argument(
          "filterbank: channel-specific filtering with several filters always "
          "keeps interband covariance");
    if (kind == FilterKind::Conv &&
        (kernels.rows() != n_kernels() || kernels.cols() != kernel_len))
      throw std::invalid_argument("filterbank: expected " +
                                  std::to_string(n_kernels()) + "x" +
                                  std::to_string(kernel_len) + " kernel matrix");
    if (kind == FilterKind::Sinc && (bands.rows() != n_kernels() || bands.cols() != 2))
      throw std::invalid_argument("filterbank: expected " +
                                  std::to_string(n_kernels()) + " sinc bands");
  }

  // Kernels as rows, generated from bands for the sinc variant.
  Matrix materialize() const {
    if (kind == FilterKind::Conv) return kernels;
    Matrix out(n_kernels(), kernel_len);
    for (int k = 0; k < n_kernels(); ++k)
      out.row(k) = sinc_kernel(bands(k, 0), bands(k, 1), fs_hz, kernel_len).transpose();
    return out;
  }
};

// Valid cross-correlation of every electrode with its kernel(s):
//   out(c, t) = sum_j kernel(j) * x(e, t + j),  c = filter * N_e + e.
inline Matrix filterbank_apply(const Matrix& x, const FilterbankSpec& fb,
                               const Matrix& kernels) {
  const int len = static_cast<int>(x.cols());
  const int klen = static_cast<int>(kernels.cols());
  if (x.rows() != fb.n_electrodes)
    throw std::invalid_argument("filterbank: trial has " + std::to_string(x.rows()) +
                                " electrodes, filterbank expects " +
                                std::to_string(fb.n_electrodes));
  if (len < klen)
    throw std::invalid_argument("filterbank: trial of " + std::to_string(len) +
                                " samples is shorter than the kernel (" +
                                std::to_string(klen) + ")");
  const int out_len = len - klen + 1;
  Matrix out = Matrix::Zero(fb.channels(), out_len);
  for (int f = 0; f < fb.n_filters; ++f)
    for (int e = 0; e < fb.n_electrodes; ++e) {
      const int c = fb.channel_index(f, e);
      const int k = fb.kernel_index(f, e);
      for (int j = 0; j < klen; ++j)
        out.row(c) += kernels(k, j) * x.row(e).segment(j, out_len);
    }
  return out;
}

inline Matrix filterbank_forward(const MultichannelTrial& trial, const FilterbankSpec& fb) {
  return filterbank_apply(trial.samples, fb, fb.materialize());
}

// Gradient wrt the kernel rows given the gradient wrt the filtered output.
inline Matrix filterbank_kernel_grad(const Matrix& x, const FilterbankSpec& fb,
                                     const Matrix& grad_out) {
  const int out_len = static_cast<int>(grad_out.cols());
  const int klen = static_cast<int>(x.cols()) - out_len + 1;
  Matrix g = Matrix::Zero(fb.n_kernels(), klen);
  for (int f = 0; f < fb.n_filters; ++f)
    for (int e = 0; e < fb.n_electrodes; ++e) {
      const int c = fb.channel_index(f, e);
      const int k = fb.kernel_index(f, e);
      for (int j = 0; j < klen; ++j)
        g(k, j) += grad_out.row(c).dot(x.row(e).segment(j, out_len));
    }
  return g;
}

// Chain rule from kernel-row gradients to (low_hz, bandwidth_hz) gradients.
inline Matrix sinc_band_grad(const FilterbankSpec& fb, const Matrix& kernel_grad) {
  Matrix g(fb.n_kernels(), 2);
  for (int k = 0; k < fb.n_kernels(); ++k) {
    const SincKernel sk =
        sinc_kernel_with_grad(fb.bands(k, 0), fb.bands(k, 1), fb.fs_hz, fb.kernel_len);
    g(k, 0) = kernel_grad.row(k).dot(sk.d_low.transpose());
    g(k, 1) = kernel_grad.row(k).dot(sk.d_bandwidth.transpose());
  }
  return g;
}

}  // namespace spdnet
