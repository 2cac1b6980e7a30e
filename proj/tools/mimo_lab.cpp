#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mimo_lab/experiment.hpp"
#include "mimo_lab/parallel.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct SweepFlags {
  std::string config;
  std::string out = ".";
  bool plot = false;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_sweep_flags(CLI::App* cmd, SweepFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment configuration")->required();
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_flag("--plot", f.plot, "also write an SVG chart");
  cmd->add_option("--threads", f.threads, "worker threads (default: MIMO_LAB_THREADS or all cores)");
  cmd->add_option("--seed", f.seed, "master seed, overrides the config");
}

int run_sweep(mimo_lab::Command command, const SweepFlags& f) {
  mimo_lab::ExperimentConfig cfg = mimo_lab::load_config(f.config);
  mimo_lab::apply_command(cfg, command);
  mimo_lab::RunOptions opt;
  opt.out_dir = f.out;
  opt.plot = f.plot;
  opt.threads = f.threads ? f.threads : mimo_lab::default_threads();
  opt.seed = f.seed;
  const mimo_lab::RunResult res = mimo_lab::run_experiment(cfg, opt);
  std::cout << "wrote " << res.csv_path.string() << "\n";
  if (res.plot_path) std::cout << "wrote " << res.plot_path->string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mimo-lab: MIMO-BICM transceiver decompositions, rates and coded BER"};
  app.require_subcommand(1);

  std::string matrix_path;
  std::string scheme_name = "gpcbd";
  double snr_db = 30.0;
  int order = 16;
  double nu = mimo_lab::kDefaultNu;
  CLI::App* decompose = app.add_subcommand("decompose", "decompose one channel matrix and print the design");
  decompose->add_option("--matrix", matrix_path, "matrix file (rows,cols header then re,im lines)")->required();
  decompose->add_option("--scheme", scheme_name, "svd | cbd | gmd | gpcbd");
  decompose->add_option("--snr", snr_db, "SNR in dB");
  decompose->add_option("--order", order, "QAM order");
  decompose->add_option("--nu", nu, "pairing threshold");

  SweepFlags eccn_flags, rate_flags, ber_flags;
  add_sweep_flags(app.add_subcommand("eccn", "ECCN statistics over a channel ensemble"), eccn_flags);
  add_sweep_flags(app.add_subcommand("rate", "Monte-Carlo BICM rate sweep"), rate_flags);
  add_sweep_flags(app.add_subcommand("ber", "coded bit error rate sweep"), ber_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (decompose->parsed()) {
      const auto scheme = mimo_lab::parse_scheme(scheme_name);
      if (!scheme) throw mimo_lab::ConfigError("unknown scheme '" + scheme_name + "'");
      const mimo_lab::ComplexMatrix h = mimo_lab::load_matrix(matrix_path);
      std::cout << mimo_lab::decompose_report(h, *scheme, snr_db, order, nu);
      return 0;
    }
    if (app.got_subcommand("eccn")) return run_sweep(mimo_lab::Command::Eccn, eccn_flags);
    if (app.got_subcommand("rate")) return run_sweep(mimo_lab::Command::Rate, rate_flags);
    if (app.got_subcommand("ber")) return run_sweep(mimo_lab::Command::Ber, ber_flags);
  } catch (const mimo_lab::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const mimo_lab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mimo_lab::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mimo_lab::DomainError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
