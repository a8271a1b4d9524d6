#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/dataset.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Architecture registry
// ---------------------------------------------------------------------------

enum class LayerKind { conv, batchnorm, leaky_relu, maxpool };

struct LayerDesc {
  LayerKind kind;
  int in_channels = 0;
  int out_channels = 0;
  int in_side = 0;   // spatial side of the layer input
  int out_side = 0;  // spatial side of the layer output
};

struct ModelArch {
  ArchId arch_id;
  int input_channels = 3;
  int input_side = 32;
  std::vector<LayerDesc> layers;
  int embedding_dim = 0;  // channels * side^2 of the final feature map

  // Conv geometry shared by every conv layer: 3x3 kernel, stride 1, pad 1.
  static constexpr int kKernel = 3;
  static constexpr double kLeakySlope = 0.01;
  static constexpr double kBnEpsilon = 1e-5;
  static constexpr double kBnMomentum = 0.1;
};

// Returns the registered architecture; throws std::invalid_argument for an
// unregistered id. simple_cnn is: Conv 3->64, BN, LReLU, Conv 64->128, BN,
// LReLU, MaxPool, Conv 128->256, BN, LReLU, Conv 256->256, BN, LReLU, MaxPool.
const ModelArch& arch_spec(ArchId arch_id);

// ---------------------------------------------------------------------------
// Model parameters (scalar type T: float for training, double for numerics
// tests). Activations and gradients use the same scalar as the model.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<T> weight;  // out x in x 3 x 3, row-major
  std::vector<T> bias;    // out
};

template <typename T>
struct BnLayer {
  int channels = 0;
  std::vector<T> gamma;  // scale, init 1
  std::vector<T> beta;   // shift, init 0
  std::vector<T> running_mean;
  std::vector<T> running_var;
  long update_count = 0;
};

template <typename T>
struct Model {
  ArchId arch_id = ArchId::simple_cnn;
  uint64_t init_seed = 0;
  std::vector<ConvLayer<T>> convs;  // in layer order
  std::vector<BnLayer<T>> bns;      // in layer order

  const ModelArch& arch() const { return arch_spec(arch_id); }
};

// One named parameter array; used for checkpointing, optimizers and grads.
template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<long> shape;
  std::vector<T>* data;
};

// Learnable tensors in fixed order: conv{k}.weight, conv{k}.bias, then
// bn{k}.gamma, bn{k}.beta per block (k is 1-based block index).
template <typename T>
std::vector<NamedTensor<T>> learnable_tensors(Model<T>& model);

// Learnable tensors plus BN running_mean/running_var (checkpoint payload).
template <typename T>
std::vector<NamedTensor<T>> all_tensors(Model<T>& model);

// Parameter gradients, aligned index-for-index with learnable_tensors().
template <typename T>
struct ParamGrads {
  std::vector<std::vector<T>> tensors;

  void zero();
  double l2_norm() const;
};

template <typename T>
ParamGrads<T> make_grads(Model<T>& model);

// ---------------------------------------------------------------------------
// Construction and bookkeeping
// ---------------------------------------------------------------------------

// Random initialization, fully determined by seed: conv weights uniform in
// [-sqrt(1/fan_in), sqrt(1/fan_in)], biases zero, BN scale 1 / shift 0 and
// running mean 0 / var 1.
template <typename T = float>
Model<T> init_model(ArchId arch_id, uint64_t seed);

// Total learnable scalars (conv weights+biases, BN scales+shifts); running
// stats excluded. simple_cnn: 962,304.
template <typename T>
long param_count(const Model<T>& model);

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

enum class RunMode { train, eval };

template <typename T>
struct EmbeddingBatch {
  std::vector<T> values;  // B x D, row-major
  int batch = 0;
  int dim = 0;
  int peer_id = -1;
  long step_id = 0;

  const T* row(int b) const { return values.data() + size_t(b) * dim; }
};

// Reusable forward scratch space; pass the same object across calls to avoid
// reallocating multi-hundred-MB activation buffers every batch.
template <typename T>
struct EmbedScratch {
  std::vector<T> a, b, cols, input_cm;
};

// Forward pass producing the flattened final feature map (B x 16384 for
// simple_cnn). In train mode BN normalizes with batch statistics and updates
// the running stats; in eval mode it uses running stats and mutates nothing.
// Throws on an input/architecture shape mismatch or non-finite activations.
template <typename T>
EmbeddingBatch<T> embed(Model<T>& model, const ImageBatch& batch, RunMode mode,
                        EmbedScratch<T>* scratch = nullptr);

// Eval-mode forward on a const model (running stats, no mutation).
template <typename T>
EmbeddingBatch<T> embed_eval(const Model<T>& model, const ImageBatch& batch,
                             EmbedScratch<T>* scratch = nullptr);

// Teacher forward: train-mode batch statistics, but running stats are NOT
// updated, so a teacher forward is side-effect-free.
template <typename T>
EmbeddingBatch<T> embed_teacher(const Model<T>& model, const ImageBatch& batch,
                                EmbedScratch<T>* scratch = nullptr);

// ---------------------------------------------------------------------------
// Training path: forward with trace, then backward to parameter gradients.
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardTrace {
  int batch = 0;
  std::vector<T> input_cm;                 // input in channel-major layout
  std::vector<std::vector<T>> layer_out;   // per layer; empty for leaky_relu
                                           // (applied in place on BN output)
  std::vector<std::vector<uint8_t>> pool_argmax;  // per pool layer, window slot 0..3
  struct BnStats {
    std::vector<T> mean, inv_std;  // train-mode batch statistics
  };
  std::vector<BnStats> bn_stats;  // per BN layer
  std::vector<T> embedding;       // B x D, row-major
};

// Train-mode forward retaining everything backward() needs. Running stats are
// updated only when update_running_stats is set (student yes, teachers no).
template <typename T>
void forward_train(Model<T>& model, const ImageBatch& batch, bool update_running_stats,
                   ForwardTrace<T>& trace);

template <typename T>
struct BackwardScratch {
  std::vector<T> da, db, cols, dcols;
};

// Backpropagates d(loss)/d(embedding) through the traced forward pass and
// accumulates parameter gradients into `grads` (zeroed first).
template <typename T>
void backward(const Model<T>& model, const ForwardTrace<T>& trace,
              const std::vector<T>& d_embedding, ParamGrads<T>& grads,
              BackwardScratch<T>& scratch);

// Casts a model's parameters and running stats between scalar types.
template <typename Dst, typename Src>
Model<Dst> cast_model(const Model<Src>& model);

}  // namespace herdkit
