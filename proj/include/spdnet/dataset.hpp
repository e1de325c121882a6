#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdnet/spd.hpp"

namespace spdnet {

// Labelled trials held in float64.
struct Dataset {
  std::vector<MultichannelTrial> trials;
  std::vector<int> labels;
  int n_classes = 0;

  std::size_t size() const { return trials.size(); }
  bool empty() const { return trials.empty(); }
  int electrodes() const { return trials.empty() ? 0 : trials.front().electrodes(); }
  int samples() const { return trials.empty() ? 0 : trials.front().length(); }
  double fs_hz() const { return trials.empty() ? 0.0 : trials.front().fs_hz; }

  void validate() const {
    if (trials.size() != labels.size())
      throw std::invalid_argument("dataset: " + std::to_string(trials.size()) + " trials but " +
                                  std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < trials.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= n_classes)
        throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) +
                                    " of trial " + std::to_string(i) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
      if (trials[i].electrodes() != electrodes() || trials[i].length() != samples())
        throw std::invalid_argument("dataset: trial " + std::to_string(i) +
                                    " has a different shape");
    }
  }

  int distinct_labels() const { return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size()); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.n_classes = n_classes;
    for (auto i : idx) {
      d.trials.push_back(trials.at(i));
      d.labels.push_back(labels.at(i));
    }
    return d;
  }
};

struct Split {
  Dataset train;
  Dataset test;
};

// First (1 - test_fraction) of the trials train, the rest test, in order.
inline Split sequential_split(const Dataset& d, double test_fraction = 0.2) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("sequential_split: fraction must be in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(double(d.size()) * (1.0 - test_fraction)));
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < d.size(); ++i) (i < n_train ? a : b).push_back(i);
  return {d.subset(a), d.subset(b)};
}

}  // namespace spdnet
