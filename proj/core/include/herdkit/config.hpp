#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace herdkit {

// ---------------------------------------------------------------------------
// Enumerations shared across the experiment pipeline.
// ---------------------------------------------------------------------------

enum class LossKind { mse, cosine, salient };
enum class OptimizerKind { sgd, adam, adamw };
enum class ArchId { simple_cnn };

std::string to_string(LossKind kind);
std::string to_string(OptimizerKind kind);
std::string to_string(ArchId arch);
LossKind loss_kind_from_string(const std::string& name);
OptimizerKind optimizer_kind_from_string(const std::string& name);
ArchId arch_id_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Probe configuration (nested inside ExperimentConfig; flattened in files).
// ---------------------------------------------------------------------------

struct ProbeConfig {
  int knn_k = 5;
  int probe_epochs = 20;
  double probe_lr = 0.01;
  int probe_batch_size = 256;
  int mlp_hidden = 512;
  // Caps on how many fit/test examples probes may use; 0 means "entire split".
  int fit_subset = 0;
  int test_subset = 0;

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Full declarative description of one training/evaluation run.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  int num_peers = 16;
  int num_teachers = 1;
  LossKind loss_kind = LossKind::salient;
  OptimizerKind optimizer_kind = OptimizerKind::adam;
  double learning_rate = 1e-8;
  int batch_size = 512;
  int epochs = 10;
  ArchId arch_id = ArchId::simple_cnn;
  uint64_t master_seed = 42;
  int eval_every_batches = 0;  // 0 disables the periodic probe hook
  ProbeConfig probe_config;
  std::string dataset_dir;  // required; no sensible default exists
  std::string output_dir = "herdkit_run";
  int train_subset_size = 0;  // 0 means "use the full training split"

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Parses a flat `key = value` configuration document. Keys are exactly the
// field names above (probe fields appear at top level); `#` starts a comment.
// Unknown or duplicate keys and malformed values raise std::runtime_error
// with the offending line; validation failures raise std::invalid_argument.
ExperimentConfig load_config(const std::string& text);

// Same, reading the document from disk first.
ExperimentConfig load_config_file(const std::string& path);

// Applies `key=value` override strings (e.g. from CLI flags) on top of an
// already-loaded config, then re-validates. Overrides win over file values.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

// Emits the config as a flat key = value document; load_config(serialize(c))
// always reproduces `c` exactly.
std::string serialize(const ExperimentConfig& cfg);

}  // namespace herdkit
