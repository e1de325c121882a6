#pragma once

// Command-line front end: synth | train | eval | fbopt | analyze <kind>.
// Exit codes: 0 ok, 1 usage, 2 data or format error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spdnet/analysis.hpp"
#include "spdnet/archive.hpp"
#include "spdnet/config.hpp"
#include "spdnet/error.hpp"
#include "spdnet/fbopt.hpp"
#include "spdnet/io.hpp"
#include "spdnet/model_io.hpp"
#include "spdnet/synth.hpp"
#include "spdnet/train.hpp"

namespace spdnet::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

class CliError : public std::runtime_error {
public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

private:
  int code_;
};

namespace detail {

// Runs fn, attributing any failure to `source` (a file or flag).
template <class Fn>
auto attributed(const std::string& source, Fn&& fn) -> decltype(fn()) {
  auto message = [&](const std::exception& e) {
    const std::string what = e.what();
    return what.find(source) != std::string::npos ? what : source + ": " + what;
  };
  try {
    return fn();
  } catch (const CliError&) {
    throw;
  } catch (const NumericFailure& e) {
    throw CliError(kNumericError, message(e));
  } catch (const std::exception& e) {
    throw CliError(kDataError, message(e));
  }
}

inline Dataset load_data(const std::string& path) {
  return attributed(path, [&] {
    Dataset d = read_archive(path);
    d.validate();
    return d;
  });
}

inline RunConfig load_config(const std::string& path) {
  return attributed(path, [&] { return load_run_config(path); });
}

inline NetworkState load_model(const std::string& path) {
  return attributed(path, [&] { return read_model(path); });
}

inline void save(const std::string& path, const std::string& bytes) {
  attributed(path, [&] { write_file_atomic(path, bytes); });
}

// model.bin, seed 7 -> model.seed7.bin
inline std::string seed_path(const std::string& path, std::uint64_t seed) {
  const std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path() / p.stem();
  out += ".seed" + std::to_string(seed);
  out += p.extension();
  return out.string();
}

inline void check_model_data(const NetworkState& s, const Dataset& d, const std::string& data_path) {
  if (d.electrodes() != s.filterbank.n_electrodes)
    throw CliError(kDataError, data_path + ": has " + std::to_string(d.electrodes()) +
                                   " electrodes, model expects " +
                                   std::to_string(s.filterbank.n_electrodes));
  for (int l : d.labels)
    if (l >= s.n_classes())
      throw CliError(kDataError, data_path + ": label " + std::to_string(l) +
                                     " exceeds the model's " + std::to_string(s.n_classes()) +
                                     " classes");
}

inline Split split_for(const Dataset& d, double test_fraction) {
  if (test_fraction <= 0.0) return {d, Dataset{}};
  return sequential_split(d, test_fraction);
}

inline std::string bands_text(const Matrix& bands) {
  std::string out;
  for (Eigen::Index k = 0; k < bands.rows(); ++k) {
    if (k) out += ", ";
    out += format_number(bands(k, 0)) + ":" + format_number(bands(k, 1));
  }
  return out;
}

// Best-scoring band set of a search trace CSV.
inline Matrix trace_best_bands(const std::string& path) {
  return attributed(path, [&] {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty trace file");
    const auto header = spdnet::detail::split(line, ',');
    std::vector<int> low_cols, bw_cols;
    int score_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i].rfind("low_hz_", 0) == 0) low_cols.push_back(int(i));
      if (header[i].rfind("bandwidth_hz_", 0) == 0) bw_cols.push_back(int(i));
      if (header[i] == "score") score_col = int(i);
    }
    if (low_cols.empty() || low_cols.size() != bw_cols.size() || score_col < 0)
      throw std::invalid_argument("not a search trace (header '" + line + "')");
    Matrix best;
    double best_score = -1.0;
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      const auto cells = spdnet::detail::split(line, ',');
      if (cells.size() != header.size())
        throw std::invalid_argument("row " + std::to_string(row) + " has " +
                                    std::to_string(cells.size()) + " cells");
      auto num = [&](int col) {
        return spdnet::detail::parse_number<double>("trace", {cells[col], row});
      };
      const double score = num(score_col);
      if (score > best_score) {
        best_score = score;
        best.resize(Eigen::Index(low_cols.size()), 2);
        for (std::size_t k = 0; k < low_cols.size(); ++k) {
          best(Eigen::Index(k), 0) = num(low_cols[k]);
          best(Eigen::Index(k), 1) = num(bw_cols[k]);
        }
      }
    }
    if (best.size() == 0) throw std::invalid_argument("trace has no rows");
    return best;
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
  std::string data, config, out, model;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

inline int run_synth(const Common& o) {
  SynthSpec spec = detail::attributed(o.config, [&] { return load_synth_spec(o.config); });
  if (o.seed) spec.seed = *o.seed;
  const Dataset d = synth_generate(spec);
  detail::save(o.out, encode_archive(d));
  std::printf("wrote %zu trials (%d electrodes x %d samples, %d classes) to %s\n", d.size(),
              d.electrodes(), d.samples(), d.n_classes, o.out.c_str());
  return kOk;
}

inline int run_train(const Common& o, const std::string& bands, const std::string& report) {
  RunConfig cfg = detail::load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.threads > 0) cfg.threads = o.threads;
  if (!bands.empty())
    cfg.bands = detail::attributed("--bands", [&] { return parse_band_list(bands); });
  const Dataset data = detail::load_data(o.data);
  const Split sp = detail::attributed(o.config, [&] { return detail::split_for(data, cfg.test_fraction); });

  CsvWriter rep({"seed", "epochs", "final_loss", "train_accuracy", "test_accuracy"});
  for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
    const std::uint64_t seed = cfg.seeds[k];
    auto log = [&](int epoch, double loss) {
      std::fprintf(stderr, "seed %llu epoch %d loss %.6f\n", static_cast<unsigned long long>(seed),
                   epoch + 1, loss);
    };
    const TrainResult r = detail::attributed(o.data, [&] {
      return train(sp.train, cfg, seed, sp.test.empty() ? nullptr : &sp.test, log);
    });
    const std::string path = k == 0 ? o.out : detail::seed_path(o.out, seed);
    detail::save(path, encode_model(r.state));
    std::printf("seed %llu: train accuracy %s, test accuracy %s -> %s\n",
                static_cast<unsigned long long>(seed),
                format_number(r.report.train_accuracy).c_str(),
                sp.test.empty() ? "n/a" : format_number(r.report.test_accuracy).c_str(),
                path.c_str());
    rep.row(std::to_string(seed), cfg.epochs, r.report.epoch_loss.back(), r.report.train_accuracy,
            sp.test.empty() ? std::string("") : format_number(r.report.test_accuracy));
  }
  if (!report.empty()) detail::save(report, rep.text());
  return kOk;
}

inline int run_eval(const Common& o) {
  const NetworkState s = detail::load_model(o.model);
  const Dataset d = detail::load_data(o.data);
  detail::check_model_data(s, d, o.data);
  const Evaluation ev = detail::attributed(o.data, [&] { return evaluate(s, d, o.threads); });
  std::printf("accuracy %s (%zu trials)\n", format_number(ev.accuracy).c_str(), d.size());
  if (!o.out.empty()) {
    CsvWriter w({"trial", "label", "prediction"});
    for (std::size_t i = 0; i < d.size(); ++i) w.row(i, d.labels[i], ev.predictions[i]);
    detail::save(o.out, w.text());
  }
  return kOk;
}

struct FbOptFlags {
  std::string proxy, metric, strategy = "bayes";
  int budget_iters = 1000;
  double budget_hours = 12.0;
};

inline int run_fbopt(const Common& o, const FbOptFlags& f) {
  const RunConfig rc = detail::load_config(o.config);
  FbOptConfig cfg;
  cfg.n_filters = rc.n_filters;
  cfg.specificity = rc.specificity;
  cfg.interband = rc.interband;
  cfg.kernel_len = rc.kernel_len;
  cfg.reeig_eps = rc.reeig_eps;
  cfg.proxy = f.proxy.empty() ? rc.proxy : parse_proxy(f.proxy);
  cfg.metric = f.metric.empty() ? rc.metric : parse_metric(f.metric);
  cfg.seed = o.seed ? *o.seed : rc.seeds.front();
  cfg.threads = o.threads > 0 ? o.threads : rc.threads;
  cfg.budget_iters = f.budget_iters;
  cfg.budget_hours = f.budget_hours;
  cfg.strategy = f.strategy == "random" ? SearchStrategy::Random : SearchStrategy::Bayesian;
  detail::attributed("--budget-iters/--budget-hours", [&] { cfg.validate(); });

  const Dataset data = detail::load_data(o.data);
  // The search only ever sees the training part.
  const Split sp = detail::attributed(o.config, [&] { return detail::split_for(data, rc.test_fraction); });
  const SearchResult r = detail::attributed(o.data, [&] { return fbopt_search(sp.train, cfg); });
  detail::save(o.out, trace_csv(r).text());
  char fp[32];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(r.data_fingerprint));
  std::printf("best score %s after %zu iterations on %zu training trials (data %s)\n",
              format_number(r.best_score).c_str(), r.trace.size(), r.trials_seen, fp);
  std::printf("bands = %s\n", detail::bands_text(r.best_bands).c_str());
  return kOk;
}

// --- analyze ---

inline int run_gain(const Common& o) {
  const NetworkState s = detail::load_model(o.model);
  const Dataset d = detail::load_data(o.data);
  detail::check_model_data(s, d, o.data);
  const auto spectra = detail::attributed(o.data, [&] { return freq_gain(s, d, o.threads); });
  if (spectra.empty()) std::fprintf(stderr, "no gain spectrum survived the -inf filter\n");
  const std::string id = std::filesystem::path(o.model).stem().string();
  CsvWriter w({"model_id", "channel", "freq_hz", "gain_db"});
  for (const auto& g : spectra)
    for (Eigen::Index k = 0; k < g.freqs_hz.size(); ++k)
      w.row(id, g.channel, g.freqs_hz(k), g.gain_db(k));
  detail::save(o.out, w.text());
  return kOk;
}

inline int run_peaks(const Common& o) {
  const NetworkState s = detail::load_model(o.model);
  const Dataset d = detail::load_data(o.data);
  detail::check_model_data(s, d, o.data);
  const auto spectra = detail::attributed(o.data, [&] { return freq_gain(s, d, o.threads); });
  CsvWriter w({"channel", "n_peaks"});
  std::vector<int> counts;
  for (const auto& g : spectra) {
    counts.push_back(peak_count(g));
    w.row(g.channel, counts.back());
  }
  detail::save(o.out, w.text());
  if (const auto h = multiband_histogram(counts))
    std::printf("peaks: 0 -> %s%%, 1 -> %s%%, >1 -> %s%%\n", format_number(h->none).c_str(),
                format_number(h->single).c_str(), format_number(h->multi).c_str());
  else
    std::printf("peaks: no spectra\n");
  return kOk;
}

inline int run_coverage(const Common& o, const std::vector<std::string>& models,
                        const std::vector<std::string>& traces, double fs_hz, double step_hz) {
  if (models.empty() && traces.empty())
    throw CliError(kUsage, "coverage: give at least one --model or --trace");
  if (!(step_hz > 0.0)) throw CliError(kUsage, "--step must be > 0");
  std::vector<std::pair<double, double>> bands;
  double nyquist = 0.0;
  for (const auto& m : models) {
    const NetworkState s = detail::load_model(m);
    if (s.filterbank.kind != FilterKind::Sinc)
      throw CliError(kDataError, m + ": coverage needs a sinc filterbank");
    for (const auto& b : effective_bands(s.filterbank.bands, s.filterbank.fs_hz)) bands.push_back(b);
    nyquist = std::max(nyquist, 0.5 * s.filterbank.fs_hz);
  }
  for (const auto& t : traces) {
    if (!(fs_hz > 0.0)) throw CliError(kUsage, "--fs must be > 0 with --trace");
    for (const auto& b : effective_bands(detail::trace_best_bands(t), fs_hz)) bands.push_back(b);
    nyquist = std::max(nyquist, 0.5 * fs_hz);
  }
  const int n = static_cast<int>(std::floor(nyquist / step_hz + 1e-9)) + 1;
  Vector grid(n);
  for (int i = 0; i < n; ++i) grid(i) = i * step_hz;
  const Vector pct = chosen_freq_coverage(bands, grid);
  CsvWriter w({"freq_hz", "percent"});
  for (int i = 0; i < n; ++i) w.row(grid(i), pct(i));
  detail::save(o.out, w.text());
  return kOk;
}

inline int run_lbl(const Common& o, double test_fraction, const std::string& metric) {
  const NetworkState s = detail::load_model(o.model);
  const Dataset d = detail::load_data(o.data);
  detail::check_model_data(s, d, o.data);
  const Split sp = detail::attributed("--test-fraction", [&] { return sequential_split(d, test_fraction); });
  const Metric m = metric.empty() ? Metric::LogEuclidean : parse_metric(metric);
  const ProbeReport rep = detail::attributed(o.data, [&] {
    return lbl_probe(s, sp.train, sp.test, m, kReEigThreshold, o.threads);
  });
  CsvWriter w({"layer", "classifier", "accuracy"});
  w.row("network", "network", rep.network_accuracy);
  for (const auto& r : rep.results) w.row(r.layer, r.classifier, r.accuracy);
  detail::save(o.out, w.text());
  std::printf("network accuracy %s\n", format_number(rep.network_accuracy).c_str());
  for (const auto& r : rep.results)
    std::printf("%-9s %-5s %s (%+.3f)\n", r.layer.c_str(), r.classifier.c_str(),
                format_number(r.accuracy).c_str(), r.delta);
  return kOk;
}

inline int run_bimap_gain(const Common& o) {
  const NetworkState s = detail::load_model(o.model);
  if (s.layers.empty()) throw CliError(kDataError, o.model + ": model has no BiMap layer");
  const BimapGain g = bimap_gain(s.layers.front().weight);
  const FilterbankSpec& fb = s.filterbank;
  CsvWriter w({"channel", "electrode", "filter", "row_sum"});
  for (int f = 0; f < fb.n_filters; ++f)
    for (int e = 0; e < fb.n_electrodes; ++e) {
      const int c = fb.channel_index(f, e);
      w.row(c, e, f, g.row_sums(c));
    }
  detail::save(o.out, w.text());
  return kOk;
}

inline int run_relevance(const Common& o) {
  const NetworkState s = detail::load_model(o.model);
  const Dataset d = detail::load_data(o.data);
  detail::check_model_data(s, d, o.data);
  const RelevanceMap r = detail::attributed(o.data, [&] {
    return electrode_freq_relevance(s, d, freq_gain(s, d, o.threads), o.threads);
  });
  CsvWriter w({"class", "electrode", "freq_hz", "value"});
  for (std::size_t k = 0; k < r.values.size(); ++k)
    for (std::size_t e = 0; e < r.values[k].size(); ++e)
      for (Eigen::Index i = 0; i < r.freqs_hz.size(); ++i)
        w.row(k, e, r.freqs_hz(i), r.values[k][e](i));
  detail::save(o.out, w.text());
  return kOk;
}

// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"SPD network toolkit: synthesize data, train, evaluate, search filterbanks, analyze"};
  app.require_subcommand(1);
  Common o;
  std::uint64_t seed = 0;

  auto data_opt = [&](CLI::App* c) { return c->add_option("--data", o.data, "trial archive")->required(); };
  auto out_opt = [&](CLI::App* c) { return c->add_option("--out", o.out, "output file")->required(); };
  auto model_opt = [&](CLI::App* c) { return c->add_option("--model", o.model, "model file")->required(); };
  auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", seed, "seed override"); };
  auto threads_opt = [&](CLI::App* c) {
    c->add_option("--threads", o.threads, "worker cap (default: SPDNET_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);
  };

  auto* synth = app.add_subcommand("synth", "generate a planted-tone trial archive");
  synth->add_option("--config", o.config, "synthesis config")->required();
  out_opt(synth);
  seed_opt(synth);

  std::string bands, report;
  auto* train_cmd = app.add_subcommand("train", "train networks, one per seed");
  data_opt(train_cmd);
  train_cmd->add_option("--config", o.config, "run config")->required();
  out_opt(train_cmd);
  seed_opt(train_cmd);
  threads_opt(train_cmd);
  train_cmd->add_option("--bands", bands, "fixed sinc bands 'low:bw, ...'");
  train_cmd->add_option("--report", report, "per-seed summary CSV");

  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a model on an archive");
  data_opt(eval_cmd);
  model_opt(eval_cmd);
  eval_cmd->add_option("--out", o.out, "per-trial predictions CSV");
  threads_opt(eval_cmd);

  FbOptFlags ff;
  auto* fb_cmd = app.add_subcommand("fbopt", "search sinc filterbank bands");
  data_opt(fb_cmd);
  fb_cmd->add_option("--config", o.config, "run config")->required();
  out_opt(fb_cmd);
  seed_opt(fb_cmd);
  threads_opt(fb_cmd);
  fb_cmd->add_option("--proxy", ff.proxy, "proxy classifier")->check(CLI::IsMember({"rmdm", "rsvm"}));
  fb_cmd->add_option("--metric", ff.metric, "Riemannian metric")->check(CLI::IsMember({"lem", "airm"}));
  fb_cmd->add_option("--budget-iters", ff.budget_iters, "iteration budget");
  fb_cmd->add_option("--budget-hours", ff.budget_hours, "walltime budget");
  fb_cmd->add_option("--strategy", ff.strategy, "bayes or random")
      ->check(CLI::IsMember({"bayes", "random"}));

  auto* analyze = app.add_subcommand("analyze", "post-hoc analyses");
  analyze->require_subcommand(1);

  auto* gain = analyze->add_subcommand("gain", "frequency gain per channel");
  model_opt(gain);
  data_opt(gain);
  out_opt(gain);
  threads_opt(gain);

  auto* peaks = analyze->add_subcommand("peaks", "peak counts of the gain spectra");
  model_opt(peaks);
  data_opt(peaks);
  out_opt(peaks);
  threads_opt(peaks);

  std::vector<std::string> cov_models, cov_traces;
  double cov_fs = 250.0, cov_step = 0.5;
  auto* coverage = analyze->add_subcommand("coverage", "chosen-frequency coverage");
  coverage->add_option("--model", cov_models, "sinc model (repeatable)");
  coverage->add_option("--trace", cov_traces, "search trace CSV (repeatable)");
  coverage->add_option("--fs", cov_fs, "sampling rate for traces");
  coverage->add_option("--step", cov_step, "grid step in Hz");
  out_opt(coverage);

  double test_fraction = 0.2;
  std::string lbl_metric;
  auto* lbl = analyze->add_subcommand("lbl", "layer-by-layer probing");
  model_opt(lbl);
  data_opt(lbl);
  out_opt(lbl);
  threads_opt(lbl);
  lbl->add_option("--test-fraction", test_fraction, "held-out tail of the archive");
  lbl->add_option("--metric", lbl_metric, "rSVM metric")->check(CLI::IsMember({"lem", "airm"}));

  auto* bg = analyze->add_subcommand("bimap-gain", "first BiMap layer gain per channel");
  model_opt(bg);
  out_opt(bg);

  auto* rel = analyze->add_subcommand("relevance", "electrode-frequency relevance per class");
  model_opt(rel);
  data_opt(rel);
  out_opt(rel);
  threads_opt(rel);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    // Usage text of the innermost subcommand that was named.
    const CLI::App* where = &app;
    for (bool deeper = true; deeper;) {
      deeper = false;
      for (const CLI::App* c : where->get_subcommands())
        if (c->parsed()) {
          where = c;
          deeper = true;
          break;
        }
    }
    std::fprintf(stderr, "error: %s\n%s", e.what(), where->help().c_str());
    return kUsage;
  }
  for (auto* c : {synth, train_cmd, fb_cmd})
    if (c->parsed() && c->count("--seed")) o.seed = seed;

  try {
    if (synth->parsed()) return run_synth(o);
    if (train_cmd->parsed()) return run_train(o, bands, report);
    if (eval_cmd->parsed()) return run_eval(o);
    if (fb_cmd->parsed()) return run_fbopt(o, ff);
    if (gain->parsed()) return run_gain(o);
    if (peaks->parsed()) return run_peaks(o);
    if (coverage->parsed()) return run_coverage(o, cov_models, cov_traces, cov_fs, cov_step);
    if (lbl->parsed()) return run_lbl(o, test_fraction, lbl_metric);
    if (bg->parsed()) return run_bimap_gain(o);
    if (rel->parsed()) return run_relevance(o);
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (e.code() == kUsage) std::fprintf(stderr, "%s", app.help().c_str());
    return e.code();
  } catch (const NumericFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  std::fprintf(stderr, "%s", app.help().c_str());
  return kUsage;
}

}  // namespace spdnet::cli
