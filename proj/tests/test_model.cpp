#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "herdkit/losses.hpp"
#include "herdkit/model.hpp"
#include "herdkit/seed.hpp"

using namespace herdkit;

namespace {

ImageBatch synthetic_batch(int b, uint64_t seed) {
  ImageBatch batch;
  batch.labels.assign(b, 0);
  batch.pixels.resize(size_t(b) * kImagePixels);
  Rng rng(seed);
  for (float& p : batch.pixels) p = float(rng.uniform_double());
  return batch;
}

ImageBatch zero_batch(int b) {
  ImageBatch batch;
  batch.labels.assign(b, 0);
  batch.pixels.assign(size_t(b) * kImagePixels, 0.0f);
  return batch;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("architecture registry describes the fourteen-layer stack") {
  const ModelArch& arch = arch_spec(ArchId::simple_cnn);
  REQUIRE(arch.layers.size() == 14);
  CHECK(arch.embedding_dim == 16384);
  CHECK(arch.layers[0].kind == LayerKind::conv);
  CHECK(arch.layers[0].in_channels == 3);
  CHECK(arch.layers[0].out_channels == 64);
  CHECK(arch.layers[6].kind == LayerKind::maxpool);
  CHECK(arch.layers[6].in_side == 32);
  CHECK(arch.layers[6].out_side == 16);
  CHECK(arch.layers[13].kind == LayerKind::maxpool);
  CHECK(arch.layers[13].out_side == 8);
  // spatial chain: 32 -> (pool) 16 -> (pool) 8, channels end at 256
  CHECK(arch.layers[12].out_channels == 256);
}

TEST_CASE("param_count matches the per-layer arithmetic") {
  auto model = init_model<float>(ArchId::simple_cnn, 0);
  CHECK(param_count(model) == 962304);
  // first block alone: 3*64*9 weights + 64 biases
  CHECK(long(model.convs[0].weight.size() + model.convs[0].bias.size()) == 1792);
  // remaining conv blocks
  CHECK(long(model.convs[1].weight.size() + model.convs[1].bias.size()) == 73856);
  CHECK(long(model.convs[2].weight.size() + model.convs[2].bias.size()) == 295168);
  CHECK(long(model.convs[3].weight.size() + model.convs[3].bias.size()) == 590080);
}

TEST_CASE("initialization is seed-deterministic and fan-in bounded") {
  auto a = init_model<float>(ArchId::simple_cnn, 42);
  auto b = init_model<float>(ArchId::simple_cnn, 42);
  auto c = init_model<float>(ArchId::simple_cnn, 43);
  bool identical = true, differs = false;
  for (size_t k = 0; k < a.convs.size(); ++k) {
    identical = identical && (a.convs[k].weight == b.convs[k].weight);
    differs = differs || (a.convs[k].weight != c.convs[k].weight);
  }
  CHECK(identical);
  CHECK(differs);
  CHECK(a.init_seed == 42);

  for (const auto& conv : a.convs) {
    const double bound = std::sqrt(1.0 / (conv.in_channels * 9.0));
    double max_abs = 0.0;
    for (float w : conv.weight) max_abs = std::max(max_abs, std::abs(double(w)));
    CHECK(max_abs <= bound);
    CHECK(max_abs > 0.5 * bound);  // the draw actually spans the range
    for (float bias : conv.bias) CHECK(bias == 0.0f);
  }
  for (const auto& bn : a.bns) {
    for (float g : bn.gamma) CHECK(g == 1.0f);
    for (float v : bn.beta) CHECK(v == 0.0f);
    for (float m : bn.running_mean) CHECK(m == 0.0f);
    for (float v : bn.running_var) CHECK(v == 1.0f);
    CHECK(bn.update_count == 0);
  }
}

TEST_CASE("learnable tensor registry is ordered and complete") {
  auto model = init_model<float>(ArchId::simple_cnn, 1);
  auto tensors = learnable_tensors(model);
  REQUIRE(tensors.size() == 16);  // 4 conv blocks x (w, b) + 4 bn blocks x (gamma, beta)
  CHECK(tensors[0].name == "conv1.weight");
  CHECK(tensors[1].name == "conv1.bias");
  CHECK(tensors[8].name == "bn1.gamma");
  CHECK(tensors[15].name == "bn4.beta");
  long total = 0;
  for (const auto& t : tensors) total += long(t.data->size());
  CHECK(total == param_count(model));

  auto everything = all_tensors(model);
  CHECK(everything.size() == 16 + 8);  // plus running mean/var per bn block
}

TEST_CASE("zero input produces the zero embedding in both modes") {
  auto model = init_model<float>(ArchId::simple_cnn, 7);
  ImageBatch batch = zero_batch(3);

  auto ev = embed_eval(model, batch);
  CHECK(ev.batch == 3);
  CHECK(ev.dim == 16384);
  for (float v : ev.values) CHECK(v == 0.0f);

  auto tr = embed(model, batch, RunMode::train);
  for (float v : tr.values) CHECK(v == 0.0f);
}

TEST_CASE("running stats follow the 0.1-momentum EMA, observed on zero input") {
  // A zero batch keeps every batch mean and variance at exactly zero, so the
  // update must leave the mean at 0 and scale the variance by 0.9 per step.
  auto model = init_model<float>(ArchId::simple_cnn, 8);
  ImageBatch batch = zero_batch(2);

  embed(model, batch, RunMode::train);
  for (const auto& bn : model.bns) {
    CHECK(bn.update_count == 1);
    for (float m : bn.running_mean) CHECK(m == 0.0f);
    for (float v : bn.running_var) CHECK(v == doctest::Approx(0.9f));
  }
  embed(model, batch, RunMode::train);
  for (const auto& bn : model.bns) {
    CHECK(bn.update_count == 2);
    for (float v : bn.running_var) CHECK(v == doctest::Approx(0.81f));
  }
}

TEST_CASE("teacher forwards are side-effect-free") {
  auto model = init_model<float>(ArchId::simple_cnn, 9);
  ImageBatch batch = synthetic_batch(2, 100);
  auto before_rm = model.bns[0].running_mean;
  auto out_teacher = embed_teacher(model, batch);
  CHECK(model.bns[0].running_mean == before_rm);
  for (const auto& bn : model.bns) CHECK(bn.update_count == 0);

  // Teacher output equals the student's train-mode output on the same batch
  // (both normalize with batch statistics).
  auto model2 = init_model<float>(ArchId::simple_cnn, 9);
  auto out_train = embed(model2, batch, RunMode::train);
  CHECK(out_teacher.values == out_train.values);
}

TEST_CASE("eval mode is deterministic and batch-composition independent") {
  auto model = init_model<float>(ArchId::simple_cnn, 10);
  ImageBatch one = synthetic_batch(1, 200);
  ImageBatch two = synthetic_batch(2, 300);
  // plant the single image as row 1 of the pair
  std::copy(one.pixels.begin(), one.pixels.end(), two.pixels.begin() + kImagePixels);

  auto a = embed_eval(model, one);
  auto b = embed_eval(model, one);
  CHECK(a.values == b.values);

  // Rows are mathematically independent in eval mode, but gemm blocking
  // depends on the batch dimension, so equality across batch compositions
  // holds only up to rounding. Identical calls above stay bitwise equal.
  auto pair = embed_eval(model, two);
  for (int j = 0; j < pair.dim; ++j)
    CHECK(pair.row(1)[j] == doctest::Approx(a.row(0)[j]).epsilon(1e-4));
}

TEST_CASE("train and eval modes disagree on a fresh model with real input") {
  auto model = init_model<float>(ArchId::simple_cnn, 11);
  ImageBatch batch = synthetic_batch(2, 400);
  auto ev = embed_eval(model, batch);
  auto tr = embed_teacher(model, batch);
  CHECK(ev.values != tr.values);
}

TEST_CASE("shape mismatches and non-finite activations are rejected") {
  auto model = init_model<float>(ArchId::simple_cnn, 12);
  ImageBatch bad = synthetic_batch(2, 500);
  bad.pixels.resize(bad.pixels.size() - 1);
  CHECK_THROWS_AS(embed_eval(model, bad), std::invalid_argument);

  ImageBatch empty;
  CHECK_THROWS_AS(embed_eval(model, empty), std::invalid_argument);

  model.convs[0].weight[0] = std::nanf("");
  ImageBatch ok = synthetic_batch(2, 600);
  CHECK_THROWS_AS(embed_eval(model, ok), std::runtime_error);
}

TEST_CASE("cast_model round trips exactly") {
  auto f = init_model<float>(ArchId::simple_cnn, 13);
  auto d = cast_model<double>(f);
  auto back = cast_model<float>(d);
  for (size_t k = 0; k < f.convs.size(); ++k) {
    CHECK(back.convs[k].weight == f.convs[k].weight);
  }
  CHECK(back.init_seed == f.init_seed);
}

TEST_CASE("analytic parameter gradients agree with finite differences") {
  // Spot checks through the full stack in 64-bit: coordinates in every tensor
  // kind (conv weight/bias, bn gamma/beta) against central differences of the
  // mse distillation loss. The network is only piecewise smooth (leaky-relu
  // kinks, max-pool argmax switches), so a coordinate counts only when the
  // two perturbed forwards stay in the same linear region; crossing a kink
  // makes the central difference an average of two slopes, an error that does
  // not vanish with h.
  auto model = init_model<double>(ArchId::simple_cnn, 14);
  ImageBatch batch = synthetic_batch(2, 700);

  // fixed teacher target: embedding of a different model
  auto teacher_model = init_model<double>(ArchId::simple_cnn, 15);
  auto teacher = embed_teacher(teacher_model, batch);

  // Loss plus the piecewise-region signature (activation signs + argmaxes).
  auto loss_at = [&](Model<double>& m, std::vector<uint8_t>& signature) {
    ForwardTrace<double> t;
    forward_train(m, batch, false, t);
    signature.clear();
    for (const auto& layer : t.layer_out) {
      for (double v : layer) signature.push_back(v > 0 ? 1 : (v < 0 ? 2 : 0));
    }
    for (const auto& pool : t.pool_argmax) {
      signature.insert(signature.end(), pool.begin(), pool.end());
    }
    EmbeddingBatch<double> out;
    out.batch = t.batch;
    out.dim = int(t.embedding.size()) / t.batch;
    out.values = t.embedding;
    return loss_value(LossKind::mse, out, teacher);
  };

  ForwardTrace<double> trace;
  forward_train(model, batch, false, trace);
  EmbeddingBatch<double> student;
  student.batch = trace.batch;
  student.dim = 16384;
  student.values = trace.embedding;
  auto lg = distillation_loss(LossKind::mse, student, {teacher});
  ParamGrads<double> grads = make_grads(model);
  BackwardScratch<double> scratch;
  backward(model, trace, lg.d_student, grads, scratch);

  auto tensors = learnable_tensors(model);
  std::vector<uint8_t> sig_up, sig_down;
  for (size_t ti : {size_t(0), size_t(1), size_t(4), size_t(8), size_t(11), size_t(15)}) {
    auto& data = *tensors[ti].data;
    int validated = 0;
    for (size_t attempt = 0; attempt < 12 && validated < 2; ++attempt) {
      const size_t j = (attempt * (data.size() / 12 + 1)) % data.size();
      const double saved = data[j];
      // Early-layer weights fan out to hundreds of thousands of sites, so a
      // fixed step almost always flips something; shrink until clean.
      for (double h : {1e-5, 1e-6, 1e-7}) {
        data[j] = saved + h;
        const double up = loss_at(model, sig_up);
        data[j] = saved - h;
        const double down = loss_at(model, sig_down);
        data[j] = saved;
        if (sig_up != sig_down) continue;  // crossed a kink: FD invalid at this h
        ++validated;
        const double fd = (up - down) / (2 * h);
        const double an = grads.tensors[ti][j];
        // 1e-6 floor: a conv bias feeding BN has an exactly-zero gradient (the
        // batch mean absorbs it), where FD returns pure rounding noise.
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        CAPTURE(ti);
        CAPTURE(j);
        CAPTURE(h);
        CAPTURE(fd);
        CAPTURE(an);
        CHECK(std::abs(fd - an) / denom < 1e-3);
        break;
      }
    }
    CAPTURE(ti);
    CHECK(validated == 2);
  }
}

}  // TEST_SUITE
