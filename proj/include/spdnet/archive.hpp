#pragma once

// Trial archive: little-endian binary container for labelled trials.
//
//   "SPT1"  u32 version = 1
//   u32 n_trials  u32 n_electrodes  u32 n_samples  f32 fs_hz  u32 n_classes
//   u32 label[n_trials]
//   f32 payload, trial-major, then electrode, then sample

#include <cmath>
#include <filesystem>
#include <string>

#include "spdnet/dataset.hpp"
#include "spdnet/error.hpp"
#include "spdnet/io.hpp"

namespace spdnet {

inline constexpr char kArchiveMagic[4] = {'S', 'P', 'T', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

inline std::string encode_archive(const Dataset& d) {
  d.validate();
  ByteWriter w;
  w.raw(kArchiveMagic, 4);
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(d.size()));
  w.u32(static_cast<std::uint32_t>(d.electrodes()));
  w.u32(static_cast<std::uint32_t>(d.samples()));
  w.f32(static_cast<float>(d.fs_hz()));
  w.u32(static_cast<std::uint32_t>(d.n_classes));
  for (int l : d.labels) w.u32(static_cast<std::uint32_t>(l));
  for (const auto& t : d.trials)
    for (int e = 0; e < t.electrodes(); ++e)
      for (int s = 0; s < t.length(); ++s) w.f32(static_cast<float>(t.samples(e, s)));
  return w.take();
}

inline Dataset decode_archive(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.raw(4, "magic") != std::string(kArchiveMagic, 4))
    throw FormatError("bad archive magic (expected SPT1)", 0);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(v), version_at);
  const std::uint32_t n_trials = r.u32("header");
  const std::uint32_t n_electrodes = r.u32("header");
  const std::uint32_t n_samples = r.u32("header");
  const std::size_t fs_at = r.offset();
  const float fs = r.f32("header");
  const std::uint32_t n_classes = r.u32("header");
  if (!(fs > 0.0f) || !std::isfinite(fs))
    throw FormatError("sampling rate must be positive", fs_at);
  if (n_trials > 0 && (n_electrodes == 0 || n_samples == 0))
    throw FormatError("empty trial shape", fs_at - 8);

  Dataset d;
  d.n_classes = static_cast<int>(n_classes);
  d.labels.reserve(n_trials);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t l = r.u32("labels");
    if (l >= n_classes)
      throw FormatError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(n_classes) + ")",
                        at);
    d.labels.push_back(static_cast<int>(l));
  }
  const std::uint64_t payload =
      std::uint64_t(n_trials) * n_electrodes * n_samples * sizeof(float);
  if (r.remaining() != payload)
    throw FormatError("payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(payload),
                      r.offset());
  d.trials.reserve(n_trials);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    MultichannelTrial t{Matrix(n_electrodes, n_samples), double(fs)};
    for (std::uint32_t e = 0; e < n_electrodes; ++e)
      for (std::uint32_t s = 0; s < n_samples; ++s) t.samples(e, s) = r.f32("payload");
    d.trials.push_back(std::move(t));
  }
  return d;
}

inline void write_archive(const std::filesystem::path& path, const Dataset& d) {
  write_file_atomic(path, encode_archive(d));
}

inline Dataset read_archive(const std::filesystem::path& path) {
  try {
    return decode_archive(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace spdnet
