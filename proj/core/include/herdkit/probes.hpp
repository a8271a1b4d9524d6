#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/dataset.hpp"
#include "herdkit/metrics.hpp"
#include "herdkit/model.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Embedding tables
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  std::vector<float> features;  // M x dim, row-major
  std::vector<int> labels;
  int dim = 0;
  std::vector<int> source_peer_ids;

  int size() const { return static_cast<int>(labels.size()); }
  const float* row(int index) const { return features.data() + size_t(index) * dim; }
};

// Eval-mode, unaugmented forward over the first `subset` records (0 = all).
// Several models produce feature-wise concatenation in the given order.
EmbeddingTable extract_embeddings(const std::vector<const Model<float>*>& models,
                                  const Dataset& dataset, int subset = 0);
EmbeddingTable extract_embeddings(const Model<float>& model, const Dataset& dataset,
                                  int subset = 0);

// Same, over an explicit record index list (used by the distance-shift
// analysis, which samples records).
EmbeddingTable extract_embeddings_at(const Model<float>& model, const Dataset& dataset,
                                     const std::vector<int>& indices);

// Feature-wise concatenation of tables over the same rows, so ensemble
// evaluation can extract each peer once and splice tables per ensemble size.
// All parts must agree on row count and labels.
EmbeddingTable concat_features(const std::vector<const EmbeddingTable*>& parts);

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

enum class ProbeKind { knn, linear, mlp };
std::string to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(const std::string& name);

struct ProbeResult {
  ProbeKind probe_kind = ProbeKind::knn;
  double macro_f1 = 0.0;   // percent
  double accuracy = 0.0;   // percent
  int train_size = 0;
  int test_size = 0;
};

enum class KnnMetric { euclidean, cosine };

// K nearest neighbors by the chosen metric, majority vote; vote ties are
// broken by the smallest summed distance among the tied classes, then by the
// smallest class id. Neighbor-rank ties are broken by fit-row index.
ProbeResult knn_probe(const EmbeddingTable& train, const EmbeddingTable& test, int k,
                      KnnMetric metric = KnnMetric::euclidean);

// Single affine map to 10 classes, softmax cross-entropy, SGD at
// probe_lr for probe_epochs, zero-initialized weights. Fresh state every
// invocation; `seed` drives minibatch shuffling only.
ProbeResult linear_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                         const ProbeConfig& cfg, uint64_t seed = 0);

// One LeakyReLU hidden layer of width mlp_hidden, fan-in-uniform init,
// otherwise the linear-probe recipe.
ProbeResult mlp_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                      const ProbeConfig& cfg, uint64_t seed = 0);

// Unweighted mean over classes of per-class F1, in percent. A class absent
// from both predictions and labels contributes F1 = 0.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes);

double accuracy_percent(const std::vector<int>& predictions, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Periodic evaluation hook
// ---------------------------------------------------------------------------

// Linear-probes every peer on the configured fit/test subsets (fit_subset
// defaults to 10000 when unset; test_subset defaults to the whole test
// split). Appends "linear_f1"/"linear_acc" rows to `log` and, when given,
// schema rows to the probe_log.csv stream. Leaves every peer bit-untouched.
void evaluation_hook(const std::vector<Model<float>>& peers, long step,
                     const ExperimentConfig& cfg, const Dataset& fit_data,
                     const Dataset& test_data, MetricsLog& log, std::ostream* probe_csv);

}  // namespace herdkit
