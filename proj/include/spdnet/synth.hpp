#pragma once

// Synthetic trials with planted class-specific oscillations in white noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/dataset.hpp"

namespace spdnet {

struct PlantedTone {
  std::vector<int> electrodes;
  double freq_hz = 10.0;
  double amplitude = 1.0;
};

struct SynthSpec {
  double fs_hz = 250.0;
  int n_samples = 250;
  int n_electrodes = 1;
  double noise_sigma = 1.0;
  int trials_per_class = 100;
  std::uint64_t seed = 0;
  std::vector<std::vector<PlantedTone>> classes;  // tones per class

  int n_classes() const { return static_cast<int>(classes.size()); }

  void validate() const {
    if (!(fs_hz > 0.0)) throw std::invalid_argument("synth: fs must be positive");
    if (n_samples < 2) throw std::invalid_argument("synth: n_samples must be >= 2");
    if (n_electrodes < 1) throw std::invalid_argument("synth: n_electrodes must be >= 1");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");
    if (trials_per_class < 1) throw std::invalid_argument("synth: trials_per_class must be >= 1");
    if (classes.size() < 2) throw std::invalid_argument("synth: need at least two classes");
    for (std::size_t k = 0; k < classes.size(); ++k)
      for (const auto& tone : classes[k]) {
        const std::string where = "synth: class " + std::to_string(k) + ": ";
        if (!(tone.freq_hz > 0.0 && tone.freq_hz < 0.5 * fs_hz))
          throw std::invalid_argument(where + "frequency " + std::to_string(tone.freq_hz) +
                                      " Hz must lie in (0, Nyquist = " +
                                      std::to_string(0.5 * fs_hz) + ")");
        if (!(tone.amplitude >= 0.0))
          throw std::invalid_argument(where + "amplitude must be >= 0");
        if (tone.electrodes.empty()) throw std::invalid_argument(where + "tone has no electrodes");
        for (int e : tone.electrodes)
          if (e < 0 || e >= n_electrodes)
            throw std::invalid_argument(where + "electrode " + std::to_string(e) +
                                        " out of range");
      }
  }
};

// Trials are interleaved by class (trial i has label i mod K), so any
// contiguous split keeps the classes balanced. Samples are rounded to
// float32, matching what the archive stores.
inline Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  const int k = spec.n_classes();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  Dataset d;
  d.n_classes = k;
  const int total = k * spec.trials_per_class;
  for (int i = 0; i < total; ++i) {
    const int label = i % k;
    Matrix x(spec.n_electrodes, spec.n_samples);
    for (int e = 0; e < spec.n_electrodes; ++e)
      for (int s = 0; s < spec.n_samples; ++s) x(e, s) = spec.noise_sigma * noise(rng);
    for (const auto& tone : spec.classes[label]) {
      const double w = 2.0 * std::numbers::pi * tone.freq_hz / spec.fs_hz;
      for (int e : tone.electrodes) {
        const double phi = phase(rng);
        for (int s = 0; s < spec.n_samples; ++s) x(e, s) += tone.amplitude * std::sin(w * s + phi);
      }
    }
    x = x.cast<float>().cast<double>();
    d.trials.push_back({std::move(x), double(static_cast<float>(spec.fs_hz))});
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace spdnet
