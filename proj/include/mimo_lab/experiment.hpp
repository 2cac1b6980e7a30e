#pragma once

// Experiment configuration (flat JSON), command runners, the decompose report
// and a minimal static SVG line chart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mimo_lab/channel.hpp"
#include "mimo_lab/detect.hpp"
#include "mimo_lab/error.hpp"
#include "mimo_lab/fec.hpp"
#include "mimo_lab/linalg.hpp"
#include "mimo_lab/matrix_io.hpp"
#include "mimo_lab/metrics.hpp"
#include "mimo_lab/schemes.hpp"

namespace mimo_lab {

enum class Command { Eccn, Rate, Ber };

struct ExperimentConfig {
  Command command = Command::Rate;
  bool command_explicit = false;  ///< the config named its command
  ChannelModel channel = ChannelModel::rayleigh(4, 4);
  std::vector<Scheme> schemes{Scheme::Svd, Scheme::GpCbd};
  int order = 16;
  std::vector<double> snr_grid_db{0.0, 10.0, 20.0};
  std::size_t trials = 100;
  std::size_t symbols_per_trial = 16;
  std::size_t max_frames = 2000;
  std::size_t min_errors = 100;
  std::size_t batch_frames = 16;
  std::size_t info_bits_per_frame = 0;
  bool punctured = false;
  std::uint64_t interleaver_seed = 7;
  std::uint64_t master_seed = 1;
  Demod demod = Demod::Bcjr;
  DesignOptions design;
  std::string output_csv;   ///< defaults to "<command>.csv"
  std::string output_plot;  ///< defaults to "<command>.svg"
};

inline std::string_view command_name(Command c) noexcept {
  switch (c) {
    case Command::Eccn: return "eccn";
    case Command::Rate: return "rate";
    case Command::Ber: return "ber";
  }
  return "?";
}

/// GMD has no receiver chain, so it is accepted only for ECCN runs.
inline void check_command_schemes(const ExperimentConfig& cfg) {
  if (cfg.command == Command::Eccn) return;
  for (Scheme s : cfg.schemes)
    if (s == Scheme::Gmd) throw ConfigError("config key 'schemes': 'gmd' is only available for eccn runs");
}

/// Applies the command chosen on the command line. A config that names a
/// different command is rejected.
inline void apply_command(ExperimentConfig& cfg, Command command) {
  if (cfg.command_explicit && cfg.command != command) {
    throw ConfigError("config key 'command' is '" + std::string(command_name(cfg.command)) +
                      "' but the requested command is '" + std::string(command_name(command)) + "'");
  }
  cfg.command = command;
  check_command_schemes(cfg);
}

namespace detail {

using nlohmann::json;

template <class T>
T get_key(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

inline std::size_t get_count(const json& j, const std::string& key) {
  if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return j.at(key).get<std::size_t>();
}

}  // namespace detail

/// Parses a flat JSON object. Unknown keys, unknown scheme/policy/channel
/// names and wrongly typed values raise ConfigError naming the key.
inline ExperimentConfig parse_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "command",      "channel",     "n_r",          "n_t",          "rho_tx",          "rho_rx",
      "matrix_path",  "schemes",     "order",        "snr_grid_db",  "trials",          "symbols_per_trial",
      "frames",       "min_errors",  "batch_frames", "info_bits_per_frame", "punctured", "interleaver_seed",
      "master_seed",  "demod",       "power",        "nu_threshold", "output_csv",      "output_plot"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  ExperimentConfig cfg;
  if (j.contains("command")) {
    const auto c = detail::get_key<std::string>(j, "command");
    cfg.command_explicit = true;
    if (c == "eccn") {
      cfg.command = Command::Eccn;
    } else if (c == "rate") {
      cfg.command = Command::Rate;
    } else if (c == "ber") {
      cfg.command = Command::Ber;
    } else {
      throw ConfigError("config key 'command': unknown value '" + c + "'");
    }
  }

  const int n_r = j.contains("n_r") ? detail::get_key<int>(j, "n_r") : 4;
  const int n_t = j.contains("n_t") ? detail::get_key<int>(j, "n_t") : 4;
  const std::string channel = j.contains("channel") ? detail::get_key<std::string>(j, "channel") : "rayleigh";
  if (channel == "rayleigh" || channel == "kron095") {
    cfg.channel = ChannelModel::preset(channel, n_r, n_t);
  } else if (channel == "kronecker") {
    cfg.channel = ChannelModel::kronecker(n_r, n_t, j.contains("rho_tx") ? detail::get_key<double>(j, "rho_tx") : 0.0,
                                          j.contains("rho_rx") ? detail::get_key<double>(j, "rho_rx") : 0.0);
  } else if (channel == "file") {
    if (!j.contains("matrix_path")) throw ConfigError("config key 'matrix_path' is required for channel 'file'");
    cfg.channel = ChannelModel::from_file(detail::get_key<std::string>(j, "matrix_path"));
  } else {
    throw ConfigError("config key 'channel': unknown value '" + channel + "'");
  }
  try {
    cfg.channel.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }

  if (j.contains("schemes")) {
    cfg.schemes.clear();
    for (const auto& name : detail::get_key<std::vector<std::string>>(j, "schemes")) {
      const auto s = parse_scheme(name);
      if (!s) throw ConfigError("config key 'schemes': unknown scheme '" + name + "'");
      cfg.schemes.push_back(*s);
    }
    if (cfg.schemes.empty()) throw ConfigError("config key 'schemes' must not be empty");
    check_unique_schemes(cfg.schemes);
  }
  if (j.contains("order")) {
    cfg.order = detail::get_key<int>(j, "order");
    try {
      build_constellation(cfg.order);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("config key 'order': ") + e.what());
    }
  }
  if (j.contains("snr_grid_db")) cfg.snr_grid_db = detail::get_key<std::vector<double>>(j, "snr_grid_db");
  if (j.contains("trials")) cfg.trials = detail::get_count(j, "trials");
  if (j.contains("symbols_per_trial")) cfg.symbols_per_trial = detail::get_count(j, "symbols_per_trial");
  if (j.contains("frames")) cfg.max_frames = detail::get_count(j, "frames");
  if (j.contains("min_errors")) cfg.min_errors = detail::get_count(j, "min_errors");
  if (j.contains("batch_frames")) cfg.batch_frames = detail::get_count(j, "batch_frames");
  if (j.contains("info_bits_per_frame")) cfg.info_bits_per_frame = detail::get_count(j, "info_bits_per_frame");
  if (j.contains("punctured")) cfg.punctured = detail::get_key<bool>(j, "punctured");
  if (j.contains("interleaver_seed")) cfg.interleaver_seed = detail::get_key<std::uint64_t>(j, "interleaver_seed");
  if (j.contains("master_seed")) cfg.master_seed = detail::get_key<std::uint64_t>(j, "master_seed");
  if (j.contains("demod")) {
    const auto d = parse_demod(detail::get_key<std::string>(j, "demod"));
    if (!d) throw ConfigError("config key 'demod': expected 'bcjr' or 'maxlog'");
    cfg.demod = *d;
  }
  if (j.contains("power")) {
    const auto p = parse_power_policy(detail::get_key<std::string>(j, "power"));
    if (!p) throw ConfigError("config key 'power': expected 'uniform', 'wf' or 'mwf'");
    cfg.design.power = *p;
  }
  if (j.contains("nu_threshold")) {
    cfg.design.nu = detail::get_key<double>(j, "nu_threshold");
    if (!(cfg.design.nu > 0.0)) throw ConfigError("config key 'nu_threshold' must be positive");
  }
  if (j.contains("output_csv")) cfg.output_csv = detail::get_key<std::string>(j, "output_csv");
  if (j.contains("output_plot")) cfg.output_plot = detail::get_key<std::string>(j, "output_plot");
  if (cfg.trials < 1) throw ConfigError("config key 'trials' must be >= 1");
  if (cfg.symbols_per_trial < 1) throw ConfigError("config key 'symbols_per_trial' must be >= 1");
  if (cfg.max_frames < 1) throw ConfigError("config key 'frames' must be >= 1");
  if (cfg.batch_frames < 1) throw ConfigError("config key 'batch_frames' must be >= 1");
  check_command_schemes(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static line chart, one polyline per series. With log_y, non-positive
/// values are dropped.
inline std::string svg_line_chart(const std::vector<PlotSeries>& series, const std::string& x_label,
                                  const std::string& y_label, bool log_y) {
  constexpr double width = 640, height = 420, left = 70, right = 150, top = 20, bottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (log_y && !(s.y[i] > 0.0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    const double gx = left + pw * k / 4.0, gy = top + ph * (1.0 - k / 4.0);
    char lx[32], ly[32];
    std::snprintf(lx, sizeof lx, "%g", fx);
    std::snprintf(ly, sizeof ly, log_y ? "1e%.1f" : "%.3g", fy);
    o << "<text x=\"" << gx << "\" y=\"" << top + ph + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << lx
      << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << ly
      << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" font-size=\"13\" text-anchor=\"middle\">"
    << x_label << "</text>\n";
  o << "<text x=\"16\" y=\"" << top + ph / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      if (log_y && !(series[k].y[i] > 0.0)) continue;
      o << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
    }
    o << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << width - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 34 << "\" y2=\""
      << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << width - right + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << series[k].name
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

struct RunOptions {
  std::filesystem::path out_dir = ".";
  bool plot = false;
  unsigned threads = 1;
  std::optional<std::uint64_t> seed;  ///< overrides master_seed
};

struct RunResult {
  std::string csv;
  std::filesystem::path csv_path;
  std::optional<std::filesystem::path> plot_path;
};

inline SweepSpec sweep_spec(const ExperimentConfig& cfg, std::uint64_t seed, unsigned threads) {
  SweepSpec spec;
  spec.channel = cfg.channel;
  spec.schemes = cfg.schemes;
  spec.snr_grid_db = cfg.snr_grid_db;
  spec.order = cfg.order;
  spec.options.trials = cfg.trials;
  spec.options.symbols_per_trial = cfg.symbols_per_trial;
  spec.options.demod = cfg.demod;
  spec.options.design = cfg.design;
  spec.options.seed = seed;
  spec.options.threads = threads;
  return spec;
}

template <class Row, class Value>
std::vector<PlotSeries> series_from(const std::vector<Row>& rows, Value value) {
  std::vector<PlotSeries> out;
  std::map<Scheme, std::size_t> index;
  for (const Row& r : rows) {
    auto [it, inserted] = index.try_emplace(r.scheme, out.size());
    if (inserted) out.push_back({std::string(scheme_name(r.scheme)), {}, {}});
    out[it->second].x.push_back(r.snr_db);
    out[it->second].y.push_back(value(r));
  }
  return out;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  const std::uint64_t seed = opt.seed.value_or(cfg.master_seed);
  RunResult res;
  std::string svg;
  switch (cfg.command) {
    case Command::Eccn: {
      const auto rows = eccn_sweep(sweep_spec(cfg, seed, opt.threads));
      res.csv = eccn_csv(rows);
      if (opt.plot) svg = svg_line_chart(series_from(rows, [](const EccnRow& r) { return r.eccn_mean; }), "SNR (dB)",
                                         "mean ECCN", true);
      break;
    }
    case Command::Rate: {
      const auto rows = rate_sweep(sweep_spec(cfg, seed, opt.threads));
      res.csv = rate_csv(rows);
      if (opt.plot)
        svg = svg_line_chart(series_from(rows, [](const RateEstimate& r) { return r.bits_per_channel_use; }),
                             "SNR (dB)", "rate (bits per channel use)", false);
      break;
    }
    case Command::Ber: {
      BerConfig b;
      b.channel = cfg.channel;
      b.schemes = cfg.schemes;
      b.snr_grid_db = cfg.snr_grid_db;
      b.order = cfg.order;
      b.code.punctured = cfg.punctured;
      b.info_bits_per_frame = cfg.info_bits_per_frame;
      b.interleaver_seed = cfg.interleaver_seed;
      b.max_frames = cfg.max_frames;
      b.min_errors = cfg.min_errors;
      b.batch_frames = cfg.batch_frames;
      b.demod = cfg.demod;
      b.design = cfg.design;
      b.seed = seed;
      b.threads = opt.threads;
      const auto rows = ber_run(b);
      res.csv = ber_csv(rows);
      if (opt.plot)
        svg = svg_line_chart(series_from(rows, [](const BerReport& r) { return r.ber; }), "SNR (dB)", "BER", true);
      break;
    }
  }
  std::filesystem::create_directories(opt.out_dir);
  const std::string stem(command_name(cfg.command));
  res.csv_path = opt.out_dir / (cfg.output_csv.empty() ? stem + ".csv" : cfg.output_csv);
  write_file_atomic(res.csv_path, res.csv);
  if (opt.plot) {
    res.plot_path = opt.out_dir / (cfg.output_plot.empty() ? stem + ".svg" : cfg.output_plot);
    write_file_atomic(*res.plot_path, svg);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Decompose report
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join(const RealVector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += fmt(v(i), "%.12g");
  }
  return out;
}

}  // namespace detail

/// Human-readable report for one matrix. Pair indices are printed 1-based.
inline std::string decompose_report(const ComplexMatrix& h, Scheme scheme, double snr_db, int order, double nu) {
  require_finite(h, "decompose");
  const Constellation c = build_constellation(order);
  const NoiseModel noise = NoiseModel::from_snr_db(snr_db);
  std::ostringstream o;
  o << "scheme: " << scheme_name(scheme) << "\n";
  o << "size: " << h.rows() << "x" << h.cols() << "\n";
  if (scheme == Scheme::Gmd) {
    const TriangularDecomposition t = gmd(h);
    const FactorizationCheck chk = check_factorization(h, t);
    o << "r_diag: " << detail::join(t.diagonal()) << "\n";
    o << "eccn: " << detail::fmt(eccn(t.diagonal()).eccn, "%.12g") << "\n";
    o << "residual: " << detail::fmt(chk.reconstruction, "%.3e") << "\n";
    return o.str();
  }
  DesignOptions opt;
  opt.nu = nu;
  const TransceiverDesign d = design(scheme, h, noise, c, opt);
  const FactorizationCheck chk = check_factorization(h, d.decomposition);
  o << "snr_db: " << detail::fmt(snr_db, "%g") << "\n";
  o << "order: " << order << "\n";
  o << "b_diag: " << detail::join(d.decomposition.b.diag) << "\n";
  o << "b_superdiag: " << detail::join(d.decomposition.b.superdiag) << "\n";
  o << "eccn: " << detail::fmt(d.eccn.eccn, "%.12g") << "\n";
  if (scheme == Scheme::GpCbd) {
    o << "cutoff: " << d.plan.cutoff << "\n";
    o << "pairs:";
    for (std::size_t t = 0; t < d.plan.pairs.size(); ++t) {
      o << " (" << d.plan.pairs[t].first + 1 << "," << d.plan.pairs[t].second + 1
        << ") mu=" << detail::fmt(d.mu_per_pair[t], "%.6g");
    }
    o << "\nsingletons:";
    for (std::size_t i : d.plan.singletons) o << ' ' << i + 1;
    o << "\n";
  }
  if (d.clamped_singular_values) o << "clamped_singular_values: " << d.clamped_singular_values << "\n";
  o << "residual: " << detail::fmt(chk.reconstruction, "%.3e") << "\n";
  return o.str();
}

}  // namespace mimo_lab
