#pragma once

// Flat key = value configuration files for training runs and synthetic
// data. '#' starts a comment; blank lines are ignored; unknown keys are
// rejected.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spdnet/error.hpp"
#include "spdnet/io.hpp"
#include "spdnet/synth.hpp"
#include "spdnet/train.hpp"

namespace spdnet {

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

struct Entry {
  std::string value;
  int line = 0;
};

class KeyValues {
public:
  explicit KeyValues(const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = trim(raw.substr(0, raw.find('#')));
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError(s, line, "expected key = value");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) throw ParseError(key, line, "empty key");
      if (entries_.count(key)) throw ParseError(key, line, "duplicate key");
      entries_[key] = {trim(s.substr(eq + 1)), line};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const Entry& at(const std::string& key) const { return entries_.at(key); }
  int last_line() const {
    int l = 0;
    for (const auto& [k, e] : entries_) l = std::max(l, e.line);
    return l;
  }

  // Rejects keys that are neither in `known` nor accepted by `also`.
  template <class Pred>
  void reject_unknown(const std::set<std::string>& known, Pred also) const {
    for (const auto& [k, e] : entries_)
      if (!known.count(k) && !also(k)) throw ParseError(k, e.line, "unknown key");
  }
  void require(const std::string& key) const {
    if (!has(key)) throw ParseError(key, last_line(), "missing required key");
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

private:
  std::map<std::string, Entry> entries_;
};

template <class T>
T parse_number(const std::string& key, const Entry& e) {
  T v{};
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last || e.value.empty())
    throw ParseError(key, e.line, "expected a number, got '" + e.value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const Entry& e) {
  std::string v = e.value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(key, e.line, "expected true or false, got '" + e.value + "'");
}

template <class F>
auto parse_with(const std::string& key, const Entry& e, F f) {
  try {
    return f(e.value);
  } catch (const std::invalid_argument& ex) {
    throw ParseError(key, e.line, ex.what());
  }
}

}  // namespace detail

inline Specificity parse_specificity(const std::string& s) {
  if (s == "chind" || s == "channel_independent") return Specificity::ChannelIndependent;
  if (s == "chspec" || s == "channel_specific") return Specificity::ChannelSpecific;
  throw std::invalid_argument("unknown specificity '" + s + "' (expected chind|chspec)");
}

inline FilterKind parse_filter_kind(const std::string& s) {
  if (s == "conv") return FilterKind::Conv;
  if (s == "sinc") return FilterKind::Sinc;
  throw std::invalid_argument("unknown filter kind '" + s + "' (expected conv|sinc)");
}

// "low:bandwidth, low:bandwidth, ..."
inline std::vector<std::pair<double, double>> parse_band_list(const std::string& s) {
  std::vector<std::pair<double, double>> out;
  for (const auto& item : detail::split(s, ',')) {
    if (item.empty()) continue;
    const auto parts = detail::split(item, ':');
    if (parts.size() != 2) throw std::invalid_argument("band '" + item + "' is not low:bandwidth");
    try {
      std::size_t a = 0, b = 0;
      const double low = std::stod(parts[0], &a);
      const double bw = std::stod(parts[1], &b);
      if (a != parts[0].size() || b != parts[1].size()) throw std::invalid_argument("");
      out.emplace_back(low, bw);
    } catch (const std::exception&) {
      throw std::invalid_argument("band '" + item + "' is not low:bandwidth");
    }
  }
  return out;
}

// Required: n_filters, specificity, filter_kind. Everything else defaults.
inline RunConfig parse_run_config(const std::string& text) {
  using namespace detail;
  const KeyValues kv(text);
  kv.reject_unknown({"n_filters", "specificity", "filter_kind", "interband", "n_bire",
                     "kernel_len", "epochs", "batch_size", "lr", "weight_decay", "reeig_eps",
                     "seeds", "n_classes", "proxy", "metric", "freeze_filterbank", "bands",
                     "test_fraction", "threads"},
                    [](const std::string&) { return false; });
  for (const char* k : {"n_filters", "specificity", "filter_kind"}) kv.require(k);

  RunConfig c;
  auto num = [&](const char* key, auto& field) {
    if (kv.has(key)) field = parse_number<std::remove_reference_t<decltype(field)>>(key, kv.at(key));
  };
  num("n_filters", c.n_filters);
  num("n_bire", c.n_bire);
  num("kernel_len", c.kernel_len);
  num("epochs", c.epochs);
  num("batch_size", c.batch_size);
  num("lr", c.lr);
  num("weight_decay", c.weight_decay);
  num("reeig_eps", c.reeig_eps);
  num("n_classes", c.n_classes);
  num("test_fraction", c.test_fraction);
  num("threads", c.threads);
  c.specificity = parse_with("specificity", kv.at("specificity"), parse_specificity);
  c.filter_kind = parse_with("filter_kind", kv.at("filter_kind"), parse_filter_kind);
  if (kv.has("interband")) c.interband = parse_bool("interband", kv.at("interband"));
  if (kv.has("freeze_filterbank"))
    c.freeze_filterbank = parse_bool("freeze_filterbank", kv.at("freeze_filterbank"));
  if (kv.has("proxy")) c.proxy = parse_with("proxy", kv.at("proxy"), parse_proxy);
  if (kv.has("metric")) c.metric = parse_with("metric", kv.at("metric"), parse_metric);
  if (kv.has("bands")) c.bands = parse_with("bands", kv.at("bands"), parse_band_list);
  if (kv.has("seeds")) {
    const Entry& e = kv.at("seeds");
    c.seeds.clear();
    for (const auto& item : split(e.value, ','))
      c.seeds.push_back(parse_number<std::uint64_t>("seeds", {item, e.line}));
  }
  // Channel-specific banks with several filters always keep interband terms.
  if (c.specificity == Specificity::ChannelSpecific && !kv.has("interband")) c.interband = true;

  try {
    c.validate();
  } catch (const std::invalid_argument& ex) {
    throw ParseError("config", kv.last_line(), ex.what());
  }
  return c;
}

// Tone list for one class: "0+1@12:3; 2@30:1.5" meaning electrodes 0 and 1
// carry 12 Hz at amplitude 3, electrode 2 carries 30 Hz at amplitude 1.5.
inline std::vector<PlantedTone> parse_tones(const std::string& s) {
  std::vector<PlantedTone> out;
  for (const auto& item : detail::split(s, ';')) {
    if (item.empty()) continue;
    const auto at = item.find('@');
    const auto colon = item.find(':');
    if (at == std::string::npos || colon == std::string::npos || colon < at)
      throw std::invalid_argument("tone '" + item + "' is not electrodes@freq:amplitude");
    PlantedTone t;
    try {
      for (const auto& e : detail::split(item.substr(0, at), '+')) t.electrodes.push_back(std::stoi(e));
      t.freq_hz = std::stod(item.substr(at + 1, colon - at - 1));
      t.amplitude = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("tone '" + item + "' is not electrodes@freq:amplitude");
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Keys: fs, n_samples, n_electrodes (required), noise_sigma, trials_per_class,
// seed, and class0, class1, ... (at least two).
inline SynthSpec parse_synth_spec(const std::string& text) {
  using namespace detail;
  const KeyValues kv(text);
  auto is_class_key = [](const std::string& k) {
    return k.size() > 5 && k.compare(0, 5, "class") == 0 &&
           std::all_of(k.begin() + 5, k.end(), [](unsigned char c) { return std::isdigit(c); });
  };
  kv.reject_unknown({"fs", "n_samples", "n_electrodes", "noise_sigma", "trials_per_class", "seed"},
                    is_class_key);
  kv.require("n_electrodes");

  SynthSpec s;
  auto num = [&](const char* key, auto& field) {
    if (kv.has(key)) field = parse_number<std::remove_reference_t<decltype(field)>>(key, kv.at(key));
  };
  num("fs", s.fs_hz);
  num("n_samples", s.n_samples);
  num("n_electrodes", s.n_electrodes);
  num("noise_sigma", s.noise_sigma);
  num("trials_per_class", s.trials_per_class);
  num("seed", s.seed);
  int n_classes = 0;
  while (kv.has("class" + std::to_string(n_classes))) ++n_classes;
  for (const auto& [k, e] : kv.entries())
    if (is_class_key(k) && std::stoi(k.substr(5)) >= n_classes)
      throw ParseError(k, e.line, "class keys must be numbered consecutively from class0");
  for (int c = 0; c < n_classes; ++c) {
    const std::string key = "class" + std::to_string(c);
    s.classes.push_back(parse_with(key, kv.at(key), parse_tones));
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& ex) {
    throw ParseError("config", kv.last_line(), ex.what());
  }
  return s;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path));
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
  return parse_synth_spec(read_file(path));
}

}  // namespace spdnet
