#pragma once

#include <string>
#include <utility>
#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/dataset.hpp"
#include "herdkit/metrics.hpp"
#include "herdkit/model.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Distance shift (embedding-space separation before vs after training)
// ---------------------------------------------------------------------------

// 1 - (u.v)/(|u||v|), norms guarded below 1e-12; range [0, 2].
double cosine_distance(const std::vector<double>& u, const std::vector<double>& v);
double cosine_distance(const float* u, const float* v, int dim);

struct DistanceShiftReport {
  std::vector<std::pair<double, double>> pairs;  // (d_before, d_after)
  double mean_before = 0.0;
  double mean_after = 0.0;
  double fraction_increased = 0.0;  // strict increase: d_after > d_before
  uint64_t pairing_seed = 0;
};

// Samples `sample_size` records from `dataset` and one permutation of them
// (both driven by pairing_seed), extracts eval-mode embeddings under the
// initial and the trained model, and pairs row i with row perm(i) — the SAME
// permutation for both models.
DistanceShiftReport distance_shift(const Model<float>& model_init,
                                   const Model<float>& model_trained, const Dataset& dataset,
                                   int sample_size, uint64_t pairing_seed);

// pair_index,d_before,d_after rows with a header.
void write_distance_shift_csv(const DistanceShiftReport& report, const std::string& path);

// The same pairs as MetricsLog rows ("distance_before"/"distance_after",
// step = pair index), ready for emit_plot_data.
MetricsLog distance_shift_metrics(const DistanceShiftReport& report);

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

struct SweepSpec {
  ExperimentConfig base;
  // Empty axis = not swept; at least one axis must be non-empty.
  std::vector<int> peers_axis;
  std::vector<int> teachers_axis;
  std::vector<double> lr_axis;
  std::vector<LossKind> loss_axis;
  int replicates = 1;
  int max_runs = 64;  // hard cap on grid points x replicates
  std::string sweep_dir;

  void validate() const;
};

struct SweepRunSummary {
  std::string run_name;
  int num_peers = 0;
  int num_teachers = 0;
  double learning_rate = 0.0;
  LossKind loss_kind = LossKind::salient;
  int replicate = 0;
  std::string status;  // "ok" or "failed: <reason>"
  long steps = 0;
  double final_loss = 0.0;
  double final_linear_f1 = 0.0;   // mean over peers at the last probed step
  double final_linear_acc = 0.0;
};

// One fully seeded run per grid point x replicate, each in its own
// subdirectory of sweep_dir; failures are recorded and the sweep continues.
// Writes the merged sweep_summary.csv into sweep_dir and returns the rows.
std::vector<SweepRunSummary> run_sweep(const SweepSpec& spec);

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

enum class PlotKind { group_dynamics, loss, distance_shift };
PlotKind plot_kind_from_string(const std::string& name);
std::string to_string(PlotKind kind);

// Long-format "series,step,value" CSV. group_dynamics: one series per peer
// from linear_acc rows; loss: the per-step loss curve; distance_shift: the
// before/after scatter pairs. An empty log yields just the header.
std::string emit_plot_data(const MetricsLog& log, PlotKind kind);

// Cosmetic static chart of the same rows (line chart for step series,
// scatter for distance_shift).
void emit_plot_svg(const MetricsLog& log, PlotKind kind, const std::string& path);

// Rebuild MetricsLog rows from a run directory's CSV files.
MetricsLog read_train_log(const std::string& csv_path);
MetricsLog read_probe_log(const std::string& csv_path);
MetricsLog read_distance_shift_csv(const std::string& csv_path);

}  // namespace herdkit
