// herdkit command-line interface.
//
// Subcommands: train, probe, ensemble-eval, distance-shift, sweep, emit-plots.
// Every subcommand reads an optional flat config file plus repeatable
// `--override key=value` flags; commands that operate on a finished run
// directory fall back to its config.snapshot.toml. Success exits 0; any
// failure prints a single `error: ...` line on stderr and exits nonzero.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "herdkit/analysis.hpp"
#include "herdkit/blas.hpp"
#include "herdkit/checkpoint.hpp"
#include "herdkit/config.hpp"
#include "herdkit/herd.hpp"
#include "herdkit/probes.hpp"
#include "herdkit/seed.hpp"

namespace {

using namespace herdkit;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Environment and config plumbing
// ---------------------------------------------------------------------------

int resolve_thread_cap() {
  const char* raw = std::getenv("HERDKIT_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;  // sequential is the default mode
  try {
    size_t used = 0;
    const int threads = std::stoi(raw, &used);
    if (used != std::string(raw).size() || threads < 1) throw std::invalid_argument("");
    return threads;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("HERDKIT_THREADS must be a positive integer, got '") +
                             raw + "'");
  }
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value experiment config file");
  cmd->add_option("--override", opts.overrides,
                  "key=value override applied after the config file (repeatable)")
      ->take_all();
}

// Loads --config (or, for run-directory commands, the run's own snapshot),
// applies overrides and validates.
ExperimentConfig resolve_config(const CommonOpts& opts, const std::string& run_dir = "") {
  ExperimentConfig cfg;
  std::string path = opts.config_path;
  if (path.empty() && !run_dir.empty()) {
    const fs::path snapshot = fs::path(run_dir) / "config.snapshot.toml";
    if (fs::exists(snapshot)) path = snapshot.string();
  }
  if (!path.empty()) cfg = load_config_file(path);
  apply_overrides(cfg, opts.overrides);
  cfg.validate();
  return cfg;
}

long last_loss_step(const MetricsLog& log) {
  long last = 0;
  for (const MetricsRow& row : log.rows()) {
    if (row.metric_name == "loss") last = std::max(last, row.global_step);
  }
  return last;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(const CommonOpts& common) {
  const ExperimentConfig cfg = resolve_config(common);
  const TrainResult result = train(cfg);
  double final_loss = 0.0;
  for (const MetricsRow& row : result.log.rows()) {
    if (row.metric_name == "loss") final_loss = row.value;
  }
  std::cout << "run_dir=" << cfg.output_dir << " steps=" << last_loss_step(result.log)
            << " final_loss=" << format_real(final_loss) << '\n';
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

void cmd_probe(const CommonOpts& common, const std::string& checkpoint,
               const std::string& kind_name) {
  const ExperimentConfig cfg = resolve_config(common);
  const ProbeKind kind = probe_kind_from_string(kind_name);
  const Model<float> model = load_checkpoint(checkpoint);

  const Dataset fit_data = load_cifar10(cfg.dataset_dir, Split::train);
  const Dataset test_data = load_cifar10(cfg.dataset_dir, Split::test);
  const ProbeConfig& pc = cfg.probe_config;
  const int fit_subset = pc.fit_subset > 0 ? pc.fit_subset : 10000;
  const EmbeddingTable fit = extract_embeddings(model, fit_data, fit_subset);
  const EmbeddingTable test = extract_embeddings(model, test_data, pc.test_subset);

  const uint64_t seed = derive_seed(cfg.master_seed, "probe-cli-" + kind_name);
  ProbeResult result;
  switch (kind) {
    case ProbeKind::knn: result = knn_probe(fit, test, pc.knn_k); break;
    case ProbeKind::linear: result = linear_probe(fit, test, pc, seed); break;
    case ProbeKind::mlp: result = mlp_probe(fit, test, pc, seed); break;
  }

  std::cout << "probe_kind=" << to_string(result.probe_kind)
            << " macro_f1=" << format_real(result.macro_f1)
            << " accuracy=" << format_real(result.accuracy) << " fit_size=" << result.train_size
            << " test_size=" << result.test_size << '\n';
  std::cout << "step,peer_id,probe_kind,macro_f1,accuracy,fit_size,test_size\n"
            << "0,0," << to_string(result.probe_kind) << ',' << format_real(result.macro_f1)
            << ',' << format_real(result.accuracy) << ',' << result.train_size << ','
            << result.test_size << '\n';
}

// ---------------------------------------------------------------------------
// ensemble-eval
// ---------------------------------------------------------------------------

void cmd_ensemble_eval(const CommonOpts& common, const std::string& run_dir,
                       std::vector<int> sizes) {
  const ExperimentConfig cfg = resolve_config(common, run_dir);
  if (sizes.empty()) sizes = {1, 2, 4};
  int max_size = 0;
  for (int s : sizes) {
    if (s < 1) throw std::runtime_error("ensemble sizes must be >= 1");
    max_size = std::max(max_size, s);
  }

  const Dataset fit_data = load_cifar10(cfg.dataset_dir, Split::train);
  const Dataset test_data = load_cifar10(cfg.dataset_dir, Split::test);
  const ProbeConfig& pc = cfg.probe_config;
  const int fit_subset = pc.fit_subset > 0 ? pc.fit_subset : 10000;

  // Extract each peer exactly once; ensembles are feature-wise splices.
  std::vector<EmbeddingTable> fit_parts, test_parts;
  for (int i = 0; i < max_size; ++i) {
    const fs::path ckpt = fs::path(run_dir) / ("peer_" + std::to_string(i) + ".final.ckpt");
    const Model<float> model = load_checkpoint(ckpt.string());
    fit_parts.push_back(extract_embeddings(model, fit_data, fit_subset));
    test_parts.push_back(extract_embeddings(model, test_data, pc.test_subset));
  }

  std::cout << "ensemble_size,probe_kind,macro_f1,accuracy,fit_size,test_size\n";
  for (int s : sizes) {
    std::vector<const EmbeddingTable*> fit_sel, test_sel;
    for (int i = 0; i < s; ++i) {
      fit_sel.push_back(&fit_parts[i]);
      test_sel.push_back(&test_parts[i]);
    }
    const EmbeddingTable fit = concat_features(fit_sel);
    const EmbeddingTable test = concat_features(test_sel);
    const uint64_t seed = derive_seed(cfg.master_seed, "ensemble-eval-" + std::to_string(s));
    const ProbeResult r = linear_probe(fit, test, pc, seed);
    std::cout << s << ",linear," << format_real(r.macro_f1) << ',' << format_real(r.accuracy)
              << ',' << r.train_size << ',' << r.test_size << '\n';
  }
}

// ---------------------------------------------------------------------------
// distance-shift
// ---------------------------------------------------------------------------

void cmd_distance_shift(const CommonOpts& common, const std::string& run_dir, int peer,
                        int sample_size, uint64_t pairing_seed, bool seed_given) {
  const ExperimentConfig cfg = resolve_config(common, run_dir);
  const fs::path init_path = fs::path(run_dir) / ("peer_" + std::to_string(peer) + ".init.ckpt");
  const fs::path final_path =
      fs::path(run_dir) / ("peer_" + std::to_string(peer) + ".final.ckpt");
  const Model<float> model_init = load_checkpoint(init_path.string());
  const Model<float> model_trained = load_checkpoint(final_path.string());

  // Embeddings of unseen data: the analysis samples the test split.
  const Dataset dataset = load_cifar10(cfg.dataset_dir, Split::test);
  if (!seed_given) {
    pairing_seed = derive_seed(cfg.master_seed, "distance-shift-peer-" + std::to_string(peer));
  }
  const DistanceShiftReport report =
      distance_shift(model_init, model_trained, dataset, sample_size, pairing_seed);

  const fs::path csv_path = fs::path(run_dir) / "distance_shift.csv";
  write_distance_shift_csv(report, csv_path.string());
  std::cout << "peer=" << peer << " pairs=" << report.pairs.size()
            << " mean_before=" << format_real(report.mean_before)
            << " mean_after=" << format_real(report.mean_after)
            << " fraction_increased=" << format_real(report.fraction_increased)
            << " csv=" << csv_path.string() << '\n';
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

void cmd_sweep(const CommonOpts& common, const std::string& sweep_dir,
               const std::vector<int>& peers_axis, const std::vector<int>& teachers_axis,
               const std::vector<double>& lr_axis, const std::vector<std::string>& loss_axis,
               int replicates, int max_runs) {
  SweepSpec spec;
  spec.base = resolve_config(common);
  spec.peers_axis = peers_axis;
  spec.teachers_axis = teachers_axis;
  spec.lr_axis = lr_axis;
  for (const std::string& name : loss_axis) spec.loss_axis.push_back(loss_kind_from_string(name));
  spec.replicates = replicates;
  spec.max_runs = max_runs;
  spec.sweep_dir = sweep_dir;

  const std::vector<SweepRunSummary> rows = run_sweep(spec);
  for (const SweepRunSummary& row : rows) {
    std::cout << row.run_name << ": " << row.status << '\n';
  }
  std::cout << "summary=" << (fs::path(sweep_dir) / "sweep_summary.csv").string() << '\n';
}

// ---------------------------------------------------------------------------
// emit-plots
// ---------------------------------------------------------------------------

void cmd_emit_plots(const std::string& run_dir, const std::string& kind_name,
                    const std::string& out_path, const std::string& svg_path) {
  const PlotKind kind = plot_kind_from_string(kind_name);
  MetricsLog log;
  switch (kind) {
    case PlotKind::group_dynamics:
      log = read_probe_log((fs::path(run_dir) / "probe_log.csv").string());
      break;
    case PlotKind::loss:
      log = read_train_log((fs::path(run_dir) / "train_log.csv").string());
      break;
    case PlotKind::distance_shift:
      log = read_distance_shift_csv((fs::path(run_dir) / "distance_shift.csv").string());
      break;
  }
  const std::string csv = emit_plot_data(log, kind);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + out_path + "'");
    out << csv;
    if (!out) throw std::runtime_error("write failed for '" + out_path + "'");
  }
  if (!svg_path.empty()) emit_plot_svg(log, kind, svg_path);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"peer-group self-distillation: training, probes and analysis"};
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) {
    return std::string("error: ") + e.what() + '\n';
  });

  CommonOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a peer pool per the config");
  add_common(train_cmd, train_opts);

  CommonOpts probe_opts;
  std::string probe_checkpoint, probe_kind;
  CLI::App* probe_cmd =
      app.add_subcommand("probe", "evaluate one checkpoint with a knn/linear/mlp probe");
  add_common(probe_cmd, probe_opts);
  probe_cmd->add_option("--checkpoint", probe_checkpoint, "model checkpoint to probe")
      ->required();
  probe_cmd->add_option("--kind", probe_kind, "probe kind: knn, linear or mlp")->required();

  CommonOpts ens_opts;
  std::string ens_run_dir;
  std::vector<int> ens_sizes;
  CLI::App* ens_cmd = app.add_subcommand(
      "ensemble-eval", "linear-probe feature-wise concatenations of trained peers");
  add_common(ens_cmd, ens_opts);
  ens_cmd->add_option("--run-dir", ens_run_dir, "finished training run directory")->required();
  ens_cmd->add_option("--peers", ens_sizes, "comma-separated ensemble sizes (default 1,2,4)")
      ->delimiter(',');

  CommonOpts shift_opts;
  std::string shift_run_dir;
  int shift_peer = -1;
  int shift_sample_size = 2048;
  uint64_t shift_seed = 0;
  CLI::App* shift_cmd = app.add_subcommand(
      "distance-shift", "pairwise cosine-distance comparison of a peer before/after training");
  add_common(shift_cmd, shift_opts);
  shift_cmd->add_option("--run-dir", shift_run_dir, "finished training run directory")
      ->required();
  shift_cmd->add_option("--peer", shift_peer, "which peer's init/final checkpoints to compare")
      ->required();
  shift_cmd->add_option("--sample-size", shift_sample_size, "images to sample (default 2048)");
  CLI::Option* seed_opt =
      shift_cmd->add_option("--pairing-seed", shift_seed, "explicit pairing seed");

  CommonOpts sweep_opts;
  std::string sweep_dir;
  std::vector<int> sweep_peers, sweep_teachers;
  std::vector<double> sweep_lrs;
  std::vector<std::string> sweep_losses;
  int sweep_replicates = 1;
  int sweep_max_runs = 64;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "run a cartesian grid of configs and merge a summary");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--sweep-dir", sweep_dir, "directory to hold all sweep runs")
      ->required();
  sweep_cmd->add_option("--peers-axis", sweep_peers, "num_peers values")->delimiter(',');
  sweep_cmd->add_option("--teachers-axis", sweep_teachers, "num_teachers values")
      ->delimiter(',');
  sweep_cmd->add_option("--lr-axis", sweep_lrs, "learning_rate values")->delimiter(',');
  sweep_cmd->add_option("--loss-axis", sweep_losses, "loss_kind values")->delimiter(',');
  sweep_cmd->add_option("--replicates", sweep_replicates, "replicates per grid point");
  sweep_cmd->add_option("--max-runs", sweep_max_runs, "hard cap on grid points x replicates");

  std::string plots_run_dir, plots_kind, plots_out, plots_svg;
  CLI::App* plots_cmd = app.add_subcommand(
      "emit-plots", "emit long-format plot data (and optionally an SVG) from run CSVs");
  plots_cmd->add_option("--run-dir", plots_run_dir, "run directory holding the CSV logs")
      ->required();
  plots_cmd
      ->add_option("--kind", plots_kind, "plot kind: group-dynamics, loss or distance-shift")
      ->required();
  plots_cmd->add_option("--out", plots_out, "write CSV here instead of stdout");
  plots_cmd->add_option("--svg", plots_svg, "also render a static SVG chart to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    set_blas_threads(resolve_thread_cap());
    if (train_cmd->parsed()) {
      cmd_train(train_opts);
    } else if (probe_cmd->parsed()) {
      cmd_probe(probe_opts, probe_checkpoint, probe_kind);
    } else if (ens_cmd->parsed()) {
      cmd_ensemble_eval(ens_opts, ens_run_dir, ens_sizes);
    } else if (shift_cmd->parsed()) {
      cmd_distance_shift(shift_opts, shift_run_dir, shift_peer, shift_sample_size, shift_seed,
                         seed_opt->count() > 0);
    } else if (sweep_cmd->parsed()) {
      cmd_sweep(sweep_opts, sweep_dir, sweep_peers, sweep_teachers, sweep_lrs, sweep_losses,
                sweep_replicates, sweep_max_runs);
    } else if (plots_cmd->parsed()) {
      cmd_emit_plots(plots_run_dir, plots_kind, plots_out, plots_svg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
