#include "herdkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "herdkit/herd.hpp"
#include "herdkit/probes.hpp"
#include "herdkit/seed.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Cosine distance and the distance-shift report
// ---------------------------------------------------------------------------

namespace {

constexpr double kNormGuard = 1e-12;

double cosine_distance_impl(const double* u, const double* v, size_t dim) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t j = 0; j < dim; ++j) {
    dot += u[j] * v[j];
    nu += u[j] * u[j];
    nv += v[j] * v[j];
  }
  const double a = std::max(std::sqrt(nu), kNormGuard);
  const double b = std::max(std::sqrt(nv), kNormGuard);
  return 1.0 - dot / (a * b);
}

}  // namespace

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_distance: length mismatch");
  if (u.empty()) throw std::invalid_argument("cosine_distance: empty vectors");
  return cosine_distance_impl(u.data(), v.data(), u.size());
}

double cosine_distance(const float* u, const float* v, int dim) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (int j = 0; j < dim; ++j) {
    dot += double(u[j]) * double(v[j]);
    nu += double(u[j]) * double(u[j]);
    nv += double(v[j]) * double(v[j]);
  }
  const double a = std::max(std::sqrt(nu), kNormGuard);
  const double b = std::max(std::sqrt(nv), kNormGuard);
  return 1.0 - dot / (a * b);
}

DistanceShiftReport distance_shift(const Model<float>& model_init,
                                   const Model<float>& model_trained, const Dataset& dataset,
                                   int sample_size, uint64_t pairing_seed) {
  if (sample_size < 2) throw std::invalid_argument("distance_shift: sample_size must be >= 2");
  if (sample_size > dataset.size()) {
    throw std::invalid_argument("distance_shift: sample_size exceeds dataset size");
  }
  if (model_init.arch_id != model_trained.arch_id) {
    throw std::invalid_argument("distance_shift: models must share an architecture");
  }
  // One RNG stream drives both the record sample and the pairing permutation,
  // so a pairing_seed pins the whole analysis.
  Rng rng(pairing_seed);
  const std::vector<int> sample = rng.sample_without_replacement(dataset.size(), sample_size);
  std::vector<int> perm(sample_size);
  for (int i = 0; i < sample_size; ++i) perm[i] = i;
  rng.shuffle(perm);

  const EmbeddingTable before = extract_embeddings_at(model_init, dataset, sample);
  const EmbeddingTable after = extract_embeddings_at(model_trained, dataset, sample);

  DistanceShiftReport report;
  report.pairing_seed = pairing_seed;
  report.pairs.reserve(sample_size);
  double sum_before = 0.0, sum_after = 0.0;
  long increased = 0;
  for (int i = 0; i < sample_size; ++i) {
    const double d_before = cosine_distance(before.row(i), before.row(perm[i]), before.dim);
    const double d_after = cosine_distance(after.row(i), after.row(perm[i]), after.dim);
    report.pairs.emplace_back(d_before, d_after);
    sum_before += d_before;
    sum_after += d_after;
    if (d_after > d_before) ++increased;
  }
  report.mean_before = sum_before / sample_size;
  report.mean_after = sum_after / sample_size;
  report.fraction_increased = double(increased) / sample_size;
  return report;
}

void write_distance_shift_csv(const DistanceShiftReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_distance_shift_csv: cannot open '" + path + "'");
  out << "pair_index,d_before,d_after\n";
  for (size_t i = 0; i < report.pairs.size(); ++i) {
    out << i << ',' << format_real(report.pairs[i].first) << ','
        << format_real(report.pairs[i].second) << '\n';
  }
  if (!out) throw std::runtime_error("write_distance_shift_csv: write failed");
}

MetricsLog distance_shift_metrics(const DistanceShiftReport& report) {
  MetricsLog log;
  for (size_t i = 0; i < report.pairs.size(); ++i) {
    log.append(long(i), "0", "distance_before", report.pairs[i].first);
    log.append(long(i), "0", "distance_after", report.pairs[i].second);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

void SweepSpec::validate() const {
  base.validate();
  if (peers_axis.empty() && teachers_axis.empty() && lr_axis.empty() && loss_axis.empty()) {
    throw std::invalid_argument("SweepSpec: at least one axis must be non-empty");
  }
  if (replicates < 1) throw std::invalid_argument("SweepSpec: replicates must be >= 1");
  if (max_runs < 1) throw std::invalid_argument("SweepSpec: max_runs must be >= 1");
  if (sweep_dir.empty()) throw std::invalid_argument("SweepSpec: sweep_dir must not be empty");
  const size_t points = std::max<size_t>(1, peers_axis.size()) *
                        std::max<size_t>(1, teachers_axis.size()) *
                        std::max<size_t>(1, lr_axis.size()) *
                        std::max<size_t>(1, loss_axis.size()) * size_t(replicates);
  if (points > size_t(max_runs)) {
    throw std::invalid_argument("SweepSpec: grid of " + std::to_string(points) +
                                " runs exceeds max_runs=" + std::to_string(max_runs));
  }
}

namespace {

std::string sweep_run_name(const ExperimentConfig& cfg, int replicate) {
  std::ostringstream name;
  name << "peers" << cfg.num_peers << "_teachers" << cfg.num_teachers << "_lr"
       << format_real(cfg.learning_rate) << "_" << to_string(cfg.loss_kind) << "_rep"
       << replicate;
  return name.str();
}

// Mean of the metric over all peers at the last step it was recorded.
double final_metric_mean(const MetricsLog& log, const std::string& metric) {
  long last_step = -1;
  for (const MetricsRow& row : log.rows()) {
    if (row.metric_name == metric) last_step = std::max(last_step, row.global_step);
  }
  if (last_step < 0) return 0.0;
  double sum = 0.0;
  int count = 0;
  for (const MetricsRow& row : log.rows()) {
    if (row.metric_name == metric && row.global_step == last_step) {
      sum += row.value;
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace

std::vector<SweepRunSummary> run_sweep(const SweepSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(spec.sweep_dir);

  // Materialize each axis, falling back to the base value when not swept.
  const std::vector<int> peers =
      spec.peers_axis.empty() ? std::vector<int>{spec.base.num_peers} : spec.peers_axis;
  const std::vector<int> teachers =
      spec.teachers_axis.empty() ? std::vector<int>{spec.base.num_teachers} : spec.teachers_axis;
  const std::vector<double> lrs =
      spec.lr_axis.empty() ? std::vector<double>{spec.base.learning_rate} : spec.lr_axis;
  const std::vector<LossKind> losses =
      spec.loss_axis.empty() ? std::vector<LossKind>{spec.base.loss_kind} : spec.loss_axis;

  std::vector<SweepRunSummary> summaries;
  Dataset probe_train, probe_test;  // lazily loaded for final probes
  bool probe_data_ready = false;
  for (int n : peers) {
    for (int t : teachers) {
      for (double lr : lrs) {
        for (LossKind loss : losses) {
          for (int rep = 0; rep < spec.replicates; ++rep) {
            ExperimentConfig cfg = spec.base;
            cfg.num_peers = n;
            cfg.num_teachers = t;
            cfg.learning_rate = lr;
            cfg.loss_kind = loss;
            const std::string name = sweep_run_name(cfg, rep);
            cfg.master_seed = derive_seed(spec.base.master_seed, "sweep-" + name);
            cfg.output_dir = (fs::path(spec.sweep_dir) / name).string();

            SweepRunSummary row;
            row.run_name = name;
            row.num_peers = n;
            row.num_teachers = t;
            row.learning_rate = lr;
            row.loss_kind = loss;
            row.replicate = rep;
            try {
              cfg.validate();
              TrainResult result = train(cfg);
              row.status = "ok";
              for (const MetricsRow& r : result.log.rows()) {
                if (r.metric_name == "loss") row.steps = std::max(row.steps, r.global_step);
              }
              row.final_loss = [&] {
                double last = 0.0;
                for (const MetricsRow& r : result.log.rows()) {
                  if (r.metric_name == "loss") last = r.value;
                }
                return last;
              }();
              if (cfg.eval_every_batches == 0) {
                // No hook rows exist; probe the final pool once so the
                // summary always carries comparable end-of-run scores.
                if (!probe_data_ready) {
                  probe_train = load_cifar10(cfg.dataset_dir, Split::train);
                  probe_test = load_cifar10(cfg.dataset_dir, Split::test);
                  probe_data_ready = true;
                }
                Dataset fit = cfg.train_subset_size > 0
                                  ? probe_train.head(std::min(cfg.train_subset_size,
                                                              probe_train.size()))
                                  : probe_train;
                evaluation_hook(result.pool.peers, row.steps, cfg, fit, probe_test, result.log,
                                nullptr);
              }
              row.final_linear_f1 = final_metric_mean(result.log, "linear_f1");
              row.final_linear_acc = final_metric_mean(result.log, "linear_acc");
            } catch (const std::exception& e) {
              row.status = std::string("failed: ") + e.what();
            }
            summaries.push_back(std::move(row));
          }
        }
      }
    }
  }

  std::ofstream out(fs::path(spec.sweep_dir) / "sweep_summary.csv", std::ios::binary);
  if (!out) throw std::runtime_error("run_sweep: cannot write sweep_summary.csv");
  out << "run,num_peers,num_teachers,learning_rate,loss_kind,replicate,status,steps,"
         "final_loss,final_linear_f1,final_linear_acc\n";
  for (const SweepRunSummary& row : summaries) {
    std::string status = row.status;
    std::replace(status.begin(), status.end(), ',', ';');  // keep the CSV parseable
    out << row.run_name << ',' << row.num_peers << ',' << row.num_teachers << ','
        << format_real(row.learning_rate) << ',' << to_string(row.loss_kind) << ','
        << row.replicate << ',' << status << ',' << row.steps << ','
        << format_real(row.final_loss) << ',' << format_real(row.final_linear_f1) << ','
        << format_real(row.final_linear_acc) << '\n';
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

PlotKind plot_kind_from_string(const std::string& name) {
  if (name == "group-dynamics") return PlotKind::group_dynamics;
  if (name == "loss") return PlotKind::loss;
  if (name == "distance-shift") return PlotKind::distance_shift;
  throw std::invalid_argument("unknown plot kind '" + name +
                              "' (expected group-dynamics, loss or distance-shift)");
}

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::group_dynamics: return "group-dynamics";
    case PlotKind::loss: return "loss";
    case PlotKind::distance_shift: return "distance-shift";
  }
  throw std::logic_error("to_string: unhandled PlotKind");
}

namespace {

struct SeriesPoint {
  std::string series;
  long step;
  double value;
};

std::vector<SeriesPoint> select_points(const MetricsLog& log, PlotKind kind) {
  std::vector<SeriesPoint> points;
  for (const MetricsRow& row : log.rows()) {
    switch (kind) {
      case PlotKind::group_dynamics:
        if (row.metric_name == "linear_acc") {
          points.push_back({"peer" + row.peer_id, row.global_step, row.value});
        }
        break;
      case PlotKind::loss:
        if (row.metric_name == "loss") {
          points.push_back({"loss", row.global_step, row.value});
        }
        break;
      case PlotKind::distance_shift:
        if (row.metric_name == "distance_before") {
          points.push_back({"before", row.global_step, row.value});
        } else if (row.metric_name == "distance_after") {
          points.push_back({"after", row.global_step, row.value});
        }
        break;
    }
  }
  return points;
}

}  // namespace

std::string emit_plot_data(const MetricsLog& log, PlotKind kind) {
  std::ostringstream out;
  out << "series,step,value\n";
  for (const SeriesPoint& p : select_points(log, kind)) {
    out << p.series << ',' << p.step << ',' << format_real(p.value) << '\n';
  }
  return out.str();
}

void emit_plot_svg(const MetricsLog& log, PlotKind kind, const std::string& path) {
  const std::vector<SeriesPoint> points = select_points(log, kind);
  constexpr int kW = 720, kH = 480, kPad = 56;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_plot_svg: cannot open '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!points.empty()) {
    // For the scatter kind, x = d_before and y = d_after; otherwise x = step.
    const bool scatter = kind == PlotKind::distance_shift;
    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    std::map<long, double> before_at;  // pair index -> d_before (scatter only)
    if (scatter) {
      for (const SeriesPoint& p : points) {
        if (p.series == "before") before_at[p.step] = p.value;
      }
    }
    auto xy = [&](const SeriesPoint& p) -> std::pair<double, double> {
      if (!scatter) return {double(p.step), p.value};
      return {before_at.count(p.step) ? before_at[p.step] : 0.0, p.value};
    };
    for (const SeriesPoint& p : points) {
      if (scatter && p.series != "after") continue;
      auto [x, y] = xy(p);
      x_min = std::min(x_min, x); x_max = std::max(x_max, x);
      y_min = std::min(y_min, y); y_max = std::max(y_max, y);
    }
    if (x_max <= x_min) x_max = x_min + 1.0;
    if (y_max <= y_min) y_max = y_min + 1.0;
    auto sx = [&](double x) { return kPad + (x - x_min) / (x_max - x_min) * (kW - 2 * kPad); };
    auto sy = [&](double y) { return kH - kPad - (y - y_min) / (y_max - y_min) * (kH - 2 * kPad); };
    const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    if (scatter) {
      for (const SeriesPoint& p : points) {
        if (p.series != "after") continue;
        auto [x, y] = xy(p);
        out << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y)
            << "\" r=\"2\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
      }
      // The d_after = d_before diagonal for reference.
      const double lo = std::max(x_min, y_min), hi = std::min(x_max, y_max);
      if (hi > lo) {
        out << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi)
            << "\" y2=\"" << sy(hi) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
      }
    } else {
      std::map<std::string, std::vector<const SeriesPoint*>> by_series;
      for (const SeriesPoint& p : points) by_series[p.series].push_back(&p);
      int color = 0;
      for (auto& [series, rows] : by_series) {
        std::sort(rows.begin(), rows.end(),
                  [](const SeriesPoint* a, const SeriesPoint* b) { return a->step < b->step; });
        out << "<polyline fill=\"none\" stroke=\"" << palette[color % 10]
            << "\" stroke-width=\"1.5\" points=\"";
        for (const SeriesPoint* p : rows) out << sx(double(p->step)) << ',' << sy(p->value) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << (kW - kPad + 4) << "\" y=\"" << (kPad + 14 * color)
            << "\" font-size=\"10\" fill=\"" << palette[color % 10] << "\">" << series
            << "</text>\n";
        ++color;
      }
    }
    // Axes.
    out << "<line x1=\"" << kPad << "\" y1=\"" << (kH - kPad) << "\" x2=\"" << (kW - kPad)
        << "\" y2=\"" << (kH - kPad) << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\""
        << (kH - kPad) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kPad << "\" y=\"" << (kH - kPad + 28) << "\" font-size=\"11\">"
        << format_real(x_min) << "</text>\n"
        << "<text x=\"" << (kW - kPad - 30) << "\" y=\"" << (kH - kPad + 28)
        << "\" font-size=\"11\">" << format_real(x_max) << "</text>\n"
        << "<text x=\"" << 4 << "\" y=\"" << (kH - kPad) << "\" font-size=\"11\">"
        << format_real(y_min) << "</text>\n"
        << "<text x=\"" << 4 << "\" y=\"" << (kPad + 4) << "\" font-size=\"11\">"
        << format_real(y_max) << "</text>\n";
  }
  out << "<text x=\"" << kW / 2 - 40 << "\" y=\"20\" font-size=\"13\">" << to_string(kind)
      << "</text>\n</svg>\n";
  if (!out) throw std::runtime_error("emit_plot_svg: write failed");
}

// ---------------------------------------------------------------------------
// CSV readers (rebuild MetricsLog rows from run directories)
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != expected_header) {
    throw std::runtime_error("'" + path + "' does not start with header '" + expected_header +
                             "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

MetricsLog read_train_log(const std::string& csv_path) {
  MetricsLog log;
  for (const std::vector<std::string>& f :
       read_csv(csv_path, "step,student_id,teacher_ids,loss,grad_norm")) {
    if (f.size() != 5) throw std::runtime_error("read_train_log: malformed row in " + csv_path);
    const long step = std::stol(f[0]);
    log.append(step, f[1], "loss", std::stod(f[3]));
    log.append(step, f[1], "grad_norm", std::stod(f[4]));
  }
  return log;
}

MetricsLog read_probe_log(const std::string& csv_path) {
  MetricsLog log;
  for (const std::vector<std::string>& f :
       read_csv(csv_path, "step,peer_id,probe_kind,macro_f1,accuracy,fit_size,test_size")) {
    if (f.size() != 7) throw std::runtime_error("read_probe_log: malformed row in " + csv_path);
    const long step = std::stol(f[0]);
    log.append(step, f[1], f[2] + "_f1", std::stod(f[3]));
    log.append(step, f[1], f[2] + "_acc", std::stod(f[4]));
  }
  return log;
}

MetricsLog read_distance_shift_csv(const std::string& csv_path) {
  MetricsLog log;
  for (const std::vector<std::string>& f :
       read_csv(csv_path, "pair_index,d_before,d_after")) {
    if (f.size() != 3) {
      throw std::runtime_error("read_distance_shift_csv: malformed row in " + csv_path);
    }
    const long idx = std::stol(f[0]);
    log.append(idx, "0", "distance_before", std::stod(f[1]));
    log.append(idx, "0", "distance_after", std::stod(f[2]));
  }
  return log;
}

}  // namespace herdkit
