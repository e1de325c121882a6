#pragma once

// Network state files: little-endian, doubles stored verbatim.
//
//   "SPM1"  u32 version = 1
//   u32 n_filters  u32 n_electrodes  u32 specificity  u32 kind
//   u32 kernel_len  u32 interband  f64 fs_hz  u32 frozen
//   matrix kernels  matrix bands
//   u32 n_layers, per layer: f64 reeig_eps, matrix weight
//   matrix head_weight  matrix head_bias
//
// matrix = u32 rows, u32 cols, f64 values column-major.

#include <filesystem>
#include <string>

#include "spdnet/error.hpp"
#include "spdnet/io.hpp"
#include "spdnet/network.hpp"

namespace spdnet {

inline constexpr char kModelMagic[4] = {'S', 'P', 'M', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_matrix(ByteWriter& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

inline Matrix get_matrix(ByteReader& r, const std::string& what) {
  const std::uint32_t rows = r.u32(what);
  const std::uint32_t cols = r.u32(what);
  r.need(std::size_t(rows) * cols * 8, what);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64(what);
  return m;
}

}  // namespace detail

inline std::string encode_model(const NetworkState& s) {
  const FilterbankSpec& fb = s.filterbank;
  ByteWriter w;
  w.raw(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u32(fb.n_filters);
  w.u32(fb.n_electrodes);
  w.u32(fb.specificity == Specificity::ChannelSpecific);
  w.u32(fb.kind == FilterKind::Sinc);
  w.u32(fb.kernel_len);
  w.u32(fb.interband);
  w.f64(fb.fs_hz);
  w.u32(s.filterbank_frozen);
  detail::put_matrix(w, fb.kernels);
  detail::put_matrix(w, fb.bands);
  w.u32(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.f64(l.reeig_eps);
    detail::put_matrix(w, l.weight);
  }
  detail::put_matrix(w, s.head.weight);
  detail::put_matrix(w, s.head.bias);
  return w.take();
}

inline NetworkState decode_model(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.raw(4, "magic") != std::string(kModelMagic, 4))
    throw FormatError("bad model magic (expected SPM1)", 0);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kModelVersion)
    throw FormatError("unsupported model version " + std::to_string(v), version_at);
  NetworkState s;
  FilterbankSpec& fb = s.filterbank;
  fb.n_filters = static_cast<int>(r.u32("header"));
  fb.n_electrodes = static_cast<int>(r.u32("header"));
  fb.specificity = r.u32("header") ? Specificity::ChannelSpecific : Specificity::ChannelIndependent;
  fb.kind = r.u32("header") ? FilterKind::Sinc : FilterKind::Conv;
  fb.kernel_len = static_cast<int>(r.u32("header"));
  fb.interband = r.u32("header") != 0;
  fb.fs_hz = r.f64("header");
  s.filterbank_frozen = r.u32("header") != 0;
  fb.kernels = detail::get_matrix(r, "kernels");
  fb.bands = detail::get_matrix(r, "bands");
  const std::uint32_t n_layers = r.u32("layers");
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    BiReLayer l;
    l.reeig_eps = r.f64("layer");
    l.weight = detail::get_matrix(r, "layer");
    s.layers.push_back(std::move(l));
  }
  s.head.weight = detail::get_matrix(r, "head");
  const Matrix bias = detail::get_matrix(r, "head");
  s.head.bias = bias.reshaped();
  if (r.remaining() != 0) throw FormatError("trailing bytes after model", r.offset());

  const std::size_t end = r.offset();
  try {
    fb.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent model: ") + e.what(), end);
  }
  int dim = fb.channels();
  for (const auto& l : s.layers) {
    if (l.weight.rows() != dim) throw FormatError("inconsistent model: layer shapes", end);
    dim = static_cast<int>(l.weight.cols());
  }
  if (s.head.weight.cols() != dim * (dim + 1) / 2 || s.head.weight.rows() != s.head.bias.size() ||
      s.head.bias.size() < 2)
    throw FormatError("inconsistent model: head shape", end);
  return s;
}

inline void write_model(const std::filesystem::path& path, const NetworkState& s) {
  write_file_atomic(path, encode_model(s));
}

inline NetworkState read_model(const std::filesystem::path& path) {
  try {
    return decode_model(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace spdnet
