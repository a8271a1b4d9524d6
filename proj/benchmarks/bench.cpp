// Microbenchmarks for the training and evaluation hot paths. All inputs are
// synthetic so the suite runs without the dataset present.

#include <benchmark/benchmark.h>

#include <vector>

#include "herdkit/herd.hpp"
#include "herdkit/losses.hpp"
#include "herdkit/model.hpp"
#include "herdkit/probes.hpp"
#include "herdkit/seed.hpp"

namespace {

using namespace herdkit;

ImageBatch synthetic_batch(int batch, uint64_t seed) {
  Rng rng(seed);
  ImageBatch out;
  out.step_id = 0;
  out.labels.resize(batch);
  out.pixels.resize(size_t(batch) * kImagePixels);
  for (int& l : out.labels) l = int(rng.uniform_below(10));
  for (float& p : out.pixels) p = float(rng.uniform_double());
  return out;
}

EmbeddingBatch<float> synthetic_embedding(int batch, int dim, uint64_t seed) {
  Rng rng(seed);
  EmbeddingBatch<float> out;
  out.batch = batch;
  out.dim = dim;
  out.values.resize(size_t(batch) * dim);
  for (float& v : out.values) v = float(rng.uniform_double() * 2 - 1);
  return out;
}

EmbeddingTable synthetic_table(int rows, int dim, uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable t;
  t.dim = dim;
  t.labels.resize(rows);
  t.features.resize(size_t(rows) * dim);
  for (int& l : t.labels) l = int(rng.uniform_below(10));
  for (float& f : t.features) f = float(rng.uniform_double() * 2 - 1);
  return t;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

void bm_forward_eval(benchmark::State& state) {
  auto model = init_model<float>(ArchId::simple_cnn, 1);
  const ImageBatch batch = synthetic_batch(int(state.range(0)), 2);
  EmbedScratch<float> scratch;
  for (auto _ : state) {
    auto out = embed_eval(model, batch, &scratch);
    benchmark::DoNotOptimize(out.values.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_forward_eval)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void bm_forward_train(benchmark::State& state) {
  auto model = init_model<float>(ArchId::simple_cnn, 1);
  const ImageBatch batch = synthetic_batch(64, 2);
  ForwardTrace<float> trace;
  for (auto _ : state) {
    forward_train(model, batch, false, trace);
    benchmark::DoNotOptimize(trace.embedding.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(bm_forward_train)->Unit(benchmark::kMillisecond);

void bm_backward(benchmark::State& state) {
  auto model = init_model<float>(ArchId::simple_cnn, 1);
  const ImageBatch batch = synthetic_batch(64, 2);
  ForwardTrace<float> trace;
  forward_train(model, batch, false, trace);
  std::vector<float> d_embedding(trace.embedding.size(), 0.001f);
  ParamGrads<float> grads = make_grads(model);
  BackwardScratch<float> scratch;
  for (auto _ : state) {
    backward(model, trace, d_embedding, grads, scratch);
    benchmark::DoNotOptimize(grads.tensors.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(bm_backward)->Unit(benchmark::kMillisecond);

// ---------------------------------------------------------------------------
// One full training step
// ---------------------------------------------------------------------------

void bm_train_batch(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.num_peers = 2;
  cfg.num_teachers = 1;
  cfg.batch_size = 32;
  cfg.dataset_dir = "unused";
  PeerPool pool = make_pool(cfg);
  ImageBatch batch = synthetic_batch(32, 3);
  Rng rng(4);
  for (auto _ : state) {
    auto report = train_batch(pool, batch, cfg, rng);
    benchmark::DoNotOptimize(report.loss_value);
    ++batch.step_id;
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(bm_train_batch)->Unit(benchmark::kMillisecond);

// ---------------------------------------------------------------------------
// Losses (B=64 x D=16384)
// ---------------------------------------------------------------------------

void bm_loss(benchmark::State& state) {
  const auto kind = LossKind(state.range(0));
  const auto student = synthetic_embedding(64, 16384, 5);
  const auto teacher = synthetic_embedding(64, 16384, 6);
  for (auto _ : state) {
    auto out = distillation_loss(kind, student, {teacher});
    benchmark::DoNotOptimize(out.d_student.data());
  }
}
BENCHMARK(bm_loss)
    ->Arg(int(LossKind::mse))
    ->Arg(int(LossKind::cosine))
    ->Arg(int(LossKind::salient))
    ->Unit(benchmark::kMillisecond);

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

void bm_knn_probe(benchmark::State& state) {
  const EmbeddingTable fit = synthetic_table(512, 16384, 7);
  const EmbeddingTable test = synthetic_table(64, 16384, 8);
  for (auto _ : state) {
    auto result = knn_probe(fit, test, 5);
    benchmark::DoNotOptimize(result.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(bm_knn_probe)->Unit(benchmark::kMillisecond);

void bm_linear_probe(benchmark::State& state) {
  const EmbeddingTable fit = synthetic_table(512, 16384, 9);
  const EmbeddingTable test = synthetic_table(128, 16384, 10);
  ProbeConfig cfg;
  cfg.probe_epochs = 5;
  for (auto _ : state) {
    auto result = linear_probe(fit, test, cfg, 11);
    benchmark::DoNotOptimize(result.accuracy);
  }
}
BENCHMARK(bm_linear_probe)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
