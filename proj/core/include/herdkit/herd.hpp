#pragma once

#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/dataset.hpp"
#include "herdkit/losses.hpp"
#include "herdkit/metrics.hpp"
#include "herdkit/model.hpp"
#include "herdkit/optimizer.hpp"
#include "herdkit/seed.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Peer pool: N identically shaped models, one persistent optimizer each.
// ---------------------------------------------------------------------------

struct PeerPool {
  std::vector<Model<float>> peers;
  std::vector<OptimizerState<float>> optimizers;

  // Reusable training scratch (activation traces, gradient buffers). Not part
  // of the pool's logical state; release after training to reclaim memory.
  ForwardTrace<float> trace;
  BackwardScratch<float> bwd_scratch;
  EmbedScratch<float> teacher_scratch;
  ParamGrads<float> grads;

  int size() const { return static_cast<int>(peers.size()); }
  void release_scratch();
};

// Builds the pool: peer i is initialized from derive_seed(master_seed,
// "peer-init-{i}"); each peer gets a fresh optimizer of the configured kind.
PeerPool make_pool(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Role sampling and the distillation step
// ---------------------------------------------------------------------------

struct RoleAssignment {
  int student_id = 0;
  std::vector<int> teacher_ids;
};

// Draws T+1 distinct peer indices uniformly without replacement; the first is
// the student, the rest are teachers. Roles last for a single batch. Throws
// std::invalid_argument when T+1 > N.
RoleAssignment sample_roles(int num_peers, int num_teachers, Rng& rng);

struct BatchReport {
  long global_step = 0;
  int student_id = 0;
  std::vector<int> teacher_ids;
  double loss_value = 0.0;
  double grad_norm = 0.0;
};

// One training transaction: sample roles from `rng`, show the identical batch
// to the student (train mode, gradients, running-stat updates) and to every
// teacher (side-effect-free), average the loss over teachers, backpropagate
// through the student only, and apply exactly one optimizer step — the
// student's. Appends loss/grad_norm rows to `log` when provided. Throws on a
// non-finite loss, naming student, teachers and step.
BatchReport train_batch(PeerPool& pool, const ImageBatch& batch, const ExperimentConfig& cfg,
                        Rng& rng, MetricsLog* log = nullptr);

// ---------------------------------------------------------------------------
// Full training run
// ---------------------------------------------------------------------------

struct TrainResult {
  PeerPool pool;
  MetricsLog log;
};

// Runs cfg.epochs passes over the (optionally truncated) training split.
// Writes into cfg.output_dir: config.snapshot.toml, peer_{i}.init.ckpt,
// train_log.csv, probe_log.csv (when the probe hook is enabled), and
// peer_{i}.final.ckpt. The probe hook fires before the first batch, every
// eval_every_batches thereafter, and after the final batch; with
// eval_every_batches = 0 it never fires and probe_log.csv has only a header.
TrainResult train(const ExperimentConfig& cfg);

}  // namespace herdkit
