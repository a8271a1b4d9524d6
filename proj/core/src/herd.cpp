#include "herdkit/herd.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "herdkit/checkpoint.hpp"
#include "herdkit/probes.hpp"

namespace herdkit {

void PeerPool::release_scratch() {
  trace = ForwardTrace<float>{};
  bwd_scratch = BackwardScratch<float>{};
  teacher_scratch = EmbedScratch<float>{};
  grads = ParamGrads<float>{};
}

PeerPool make_pool(const ExperimentConfig& cfg) {
  PeerPool pool;
  pool.peers.reserve(cfg.num_peers);
  pool.optimizers.reserve(cfg.num_peers);
  for (int i = 0; i < cfg.num_peers; ++i) {
    const uint64_t seed = derive_seed(cfg.master_seed, "peer-init-" + std::to_string(i));
    pool.peers.push_back(init_model<float>(cfg.arch_id, seed));
    pool.optimizers.push_back(
        init_optimizer(cfg.optimizer_kind, cfg.learning_rate, pool.peers.back()));
  }
  return pool;
}

RoleAssignment sample_roles(int num_peers, int num_teachers, Rng& rng) {
  if (num_teachers + 1 > num_peers) {
    throw std::invalid_argument("sample_roles: need num_teachers + 1 <= num_peers");
  }
  const std::vector<int> draw = rng.sample_without_replacement(num_peers, num_teachers + 1);
  RoleAssignment roles;
  roles.student_id = draw[0];
  roles.teacher_ids.assign(draw.begin() + 1, draw.end());
  return roles;
}

BatchReport train_batch(PeerPool& pool, const ImageBatch& batch, const ExperimentConfig& cfg,
                        Rng& rng, MetricsLog* log) {
  if (pool.size() < 2) throw std::invalid_argument("train_batch: pool needs at least 2 peers");
  const RoleAssignment roles = sample_roles(pool.size(), cfg.num_teachers, rng);

  // The student sees the batch in train mode: batch-stat BN, running-stat
  // updates, and a full activation trace for backprop.
  Model<float>& student = pool.peers[roles.student_id];
  forward_train(student, batch, /*update_running_stats=*/true, pool.trace);
  EmbeddingBatch<float> student_out;
  student_out.values = pool.trace.embedding;  // copy; trace buffer is reused
  student_out.batch = batch.size();
  student_out.dim = student.arch().embedding_dim;
  student_out.peer_id = roles.student_id;
  student_out.step_id = batch.step_id;

  // Teachers see the byte-identical batch; their forwards are side-effect-free
  // and contribute constants to the loss (the stop-gradient boundary).
  std::vector<EmbeddingBatch<float>> teacher_out;
  teacher_out.reserve(roles.teacher_ids.size());
  for (int teacher_id : roles.teacher_ids) {
    teacher_out.push_back(
        embed_teacher(pool.peers[teacher_id], batch, &pool.teacher_scratch));
    teacher_out.back().peer_id = teacher_id;
  }

  const LossWithGrad<float> loss = distillation_loss(cfg.loss_kind, student_out, teacher_out);
  if (!std::isfinite(loss.value)) {
    std::ostringstream msg;
    msg << "train_batch: non-finite loss at step " << batch.step_id << " (student "
        << roles.student_id << ", teachers";
    for (int t : roles.teacher_ids) msg << ' ' << t;
    msg << ")";
    throw std::runtime_error(msg.str());
  }

  if (pool.grads.tensors.empty()) pool.grads = make_grads(student);
  backward(student, pool.trace, loss.d_student, pool.grads, pool.bwd_scratch);
  apply_step(pool.optimizers[roles.student_id], student, pool.grads);

  BatchReport report;
  report.global_step = batch.step_id;
  report.student_id = roles.student_id;
  report.teacher_ids = roles.teacher_ids;
  report.loss_value = loss.value;
  report.grad_norm = pool.grads.l2_norm();
  if (log) {
    log->append(report.global_step, std::to_string(report.student_id), "loss", report.loss_value);
    log->append(report.global_step, std::to_string(report.student_id), "grad_norm",
                report.grad_norm);
  }
  return report;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (size_t j = 0; j < ids.size(); ++j) {
    if (j) out += ';';
    out += std::to_string(ids[j]);
  }
  return out;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream snapshot(out_dir / "config.snapshot.toml", std::ios::binary);
    if (!snapshot) throw std::runtime_error("train: cannot write config snapshot");
    snapshot << serialize(cfg);
  }

  Dataset data = load_cifar10(cfg.dataset_dir, Split::train);
  if (cfg.train_subset_size > 0) {
    data = data.head(std::min(cfg.train_subset_size, data.size()));
  }

  TrainResult result;
  result.pool = make_pool(cfg);
  PeerPool& pool = result.pool;
  for (int i = 0; i < pool.size(); ++i) {
    save_checkpoint(pool.peers[i],
                    (out_dir / ("peer_" + std::to_string(i) + ".init.ckpt")).string());
  }

  std::ofstream train_csv(out_dir / "train_log.csv", std::ios::binary);
  std::ofstream probe_csv(out_dir / "probe_log.csv", std::ios::binary);
  if (!train_csv || !probe_csv) throw std::runtime_error("train: cannot open log files");
  train_csv << "step,student_id,teacher_ids,loss,grad_norm\n";
  probe_csv << "step,peer_id,probe_kind,macro_f1,accuracy,fit_size,test_size\n";

  // The probe test split is loaded only when the hook can fire; probes fit
  // on (a prefix of) the same data training sees.
  Dataset probe_test;
  const bool hooks = cfg.eval_every_batches > 0;
  if (hooks) probe_test = load_cifar10(cfg.dataset_dir, Split::test);
  auto run_hook = [&](long step) {
    evaluation_hook(pool.peers, step, cfg, data, probe_test, result.log, &probe_csv);
    probe_csv.flush();
  };

  if (hooks) run_hook(0);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const uint64_t shuffle_seed =
        derive_seed(cfg.master_seed, "data-shuffle-epoch-" + std::to_string(epoch));
    for (const std::vector<int>& indices :
         epoch_index_batches(data, cfg.batch_size, shuffle_seed)) {
      ++step;
      ImageBatch batch = make_batch(data, indices, step);
      batch = random_hflip(batch, 0.5,
                           derive_seed(cfg.master_seed, "flip-" + std::to_string(step)));
      Rng role_rng(derive_seed(cfg.master_seed, "role-sample-" + std::to_string(step)));
      const BatchReport report = train_batch(pool, batch, cfg, role_rng, &result.log);
      train_csv << report.global_step << ',' << report.student_id << ','
                << join_ids(report.teacher_ids) << ',' << format_real(report.loss_value) << ','
                << format_real(report.grad_norm) << '\n';
      if (hooks && step % cfg.eval_every_batches == 0) run_hook(step);
    }
  }
  if (hooks && step % cfg.eval_every_batches != 0) run_hook(step);

  pool.release_scratch();
  for (int i = 0; i < pool.size(); ++i) {
    save_checkpoint(pool.peers[i],
                    (out_dir / ("peer_" + std::to_string(i) + ".final.ckpt")).string());
  }
  if (!train_csv || !probe_csv) throw std::runtime_error("train: log write failed");
  return result;
}

}  // namespace herdkit
