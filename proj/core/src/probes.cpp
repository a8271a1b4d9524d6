#include "herdkit/probes.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "herdkit/blas.hpp"
#include "herdkit/seed.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Embedding extraction
// ---------------------------------------------------------------------------

namespace {

// Small chunks keep the per-layer activation tensors cache-resident during
// the elementwise passes, which roughly halves per-image extraction cost
// compared to large batches.
constexpr int kExtractBatch = 8;

std::vector<int> front_indices(const Dataset& dataset, int subset) {
  int count = dataset.size();
  if (subset > 0) count = std::min(count, subset);
  std::vector<int> indices(count);
  for (int i = 0; i < count; ++i) indices[i] = i;
  return indices;
}

}  // namespace

EmbeddingTable extract_embeddings_at(const Model<float>& model, const Dataset& dataset,
                                     const std::vector<int>& indices) {
  const int dim = model.arch().embedding_dim;
  EmbeddingTable table;
  table.dim = dim;
  table.source_peer_ids = {0};
  table.labels.reserve(indices.size());
  table.features.resize(indices.size() * size_t(dim));
  EmbedScratch<float> scratch;
  for (size_t start = 0; start < indices.size(); start += kExtractBatch) {
    const size_t end = std::min(indices.size(), start + kExtractBatch);
    const std::vector<int> chunk(indices.begin() + start, indices.begin() + end);
    const ImageBatch batch = make_batch(dataset, chunk);
    const EmbeddingBatch<float> emb = embed_eval(model, batch, &scratch);
    std::copy(emb.values.begin(), emb.values.end(),
              table.features.begin() + start * size_t(dim));
    table.labels.insert(table.labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return table;
}

EmbeddingTable extract_embeddings(const std::vector<const Model<float>*>& models,
                                  const Dataset& dataset, int subset) {
  if (models.empty()) throw std::invalid_argument("extract_embeddings: no models");
  const std::vector<int> indices = front_indices(dataset, subset);
  const int dim = models[0]->arch().embedding_dim;
  for (const Model<float>* m : models) {
    if (m->arch().embedding_dim != dim) {
      throw std::invalid_argument("extract_embeddings: models must share an architecture");
    }
  }
  EmbeddingTable table;
  table.dim = dim * static_cast<int>(models.size());
  table.features.resize(indices.size() * size_t(table.dim));
  for (size_t k = 0; k < models.size(); ++k) {
    // Feature-wise concatenation: model k fills columns [k*dim, (k+1)*dim).
    EmbeddingTable part = extract_embeddings_at(*models[k], dataset, indices);
    for (size_t r = 0; r < indices.size(); ++r) {
      std::copy(part.features.begin() + r * size_t(dim),
                part.features.begin() + (r + 1) * size_t(dim),
                table.features.begin() + r * size_t(table.dim) + k * size_t(dim));
    }
    if (k == 0) table.labels = std::move(part.labels);
  }
  table.source_peer_ids.resize(models.size());
  for (size_t k = 0; k < models.size(); ++k) table.source_peer_ids[k] = static_cast<int>(k);
  return table;
}

EmbeddingTable extract_embeddings(const Model<float>& model, const Dataset& dataset, int subset) {
  return extract_embeddings_at(model, dataset, front_indices(dataset, subset));
}

EmbeddingTable concat_features(const std::vector<const EmbeddingTable*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_features: no tables");
  EmbeddingTable out;
  out.labels = parts[0]->labels;
  for (const EmbeddingTable* part : parts) {
    if (part->labels != out.labels) {
      throw std::invalid_argument("concat_features: tables cover different rows");
    }
    out.dim += part->dim;
    out.source_peer_ids.insert(out.source_peer_ids.end(), part->source_peer_ids.begin(),
                               part->source_peer_ids.end());
  }
  out.features.resize(size_t(out.size()) * out.dim);
  size_t col = 0;
  for (const EmbeddingTable* part : parts) {
    for (int r = 0; r < out.size(); ++r) {
      std::copy(part->row(r), part->row(r) + part->dim,
                out.features.begin() + size_t(r) * out.dim + col);
    }
    col += part->dim;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::string to_string(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::knn: return "knn";
    case ProbeKind::linear: return "linear";
    case ProbeKind::mlp: return "mlp";
  }
  throw std::logic_error("to_string: unhandled ProbeKind");
}

ProbeKind probe_kind_from_string(const std::string& name) {
  if (name == "knn") return ProbeKind::knn;
  if (name == "linear") return ProbeKind::linear;
  if (name == "mlp") return ProbeKind::mlp;
  throw std::invalid_argument("unknown probe kind '" + name + "' (expected knn, linear or mlp)");
}

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("macro_f1: prediction/label length mismatch");
  }
  if (num_classes < 1) throw std::invalid_argument("macro_f1: num_classes must be >= 1");
  std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (size_t j = 0; j < labels.size(); ++j) {
    const int p = predictions[j], y = labels[j];
    if (p < 0 || p >= num_classes || y < 0 || y >= num_classes) {
      throw std::invalid_argument("macro_f1: class id out of range");
    }
    if (p == y) {
      tp[y] += 1;
    } else {
      fp[p] += 1;
      fn[y] += 1;
    }
  }
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const double denom = double(2 * tp[c] + fp[c] + fn[c]);
    sum += denom > 0.0 ? 2.0 * double(tp[c]) / denom : 0.0;
  }
  return 100.0 * sum / double(num_classes);
}

double accuracy_percent(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy_percent: prediction/label length mismatch");
  }
  if (labels.empty()) throw std::invalid_argument("accuracy_percent: empty inputs");
  long correct = 0;
  for (size_t j = 0; j < labels.size(); ++j) {
    if (predictions[j] == labels[j]) ++correct;
  }
  return 100.0 * double(correct) / double(labels.size());
}

// ---------------------------------------------------------------------------
// KNN
// ---------------------------------------------------------------------------

ProbeResult knn_probe(const EmbeddingTable& train, const EmbeddingTable& test, int k,
                      KnnMetric metric) {
  if (train.size() == 0) throw std::invalid_argument("knn_probe: empty fit set");
  if (test.size() == 0) throw std::invalid_argument("knn_probe: empty test set");
  if (train.dim != test.dim) throw std::invalid_argument("knn_probe: dimension mismatch");
  if (k < 1) throw std::invalid_argument("knn_probe: k must be >= 1");
  const int m = train.size(), dim = train.dim;
  const int keep = std::min(k, m);

  // Squared Euclidean via |a|^2 + |b|^2 - 2ab with a GEMM cross term; cosine
  // distance via normalized rows. Both chunked over test rows.
  std::vector<double> fit_norm(m, 0.0);
  for (int i = 0; i < m; ++i) {
    const float* row = train.row(i);
    double s = 0.0;
    for (int j = 0; j < dim; ++j) s += double(row[j]) * double(row[j]);
    fit_norm[i] = s;
  }
  std::vector<int> predictions(test.size());
  constexpr int kChunk = 128;
  std::vector<float> cross(size_t(kChunk) * m);
  std::vector<std::pair<double, int>> order(m);
  std::vector<std::pair<double, int>> nearest;
  for (int start = 0; start < test.size(); start += kChunk) {
    const int rows = std::min(kChunk, test.size() - start);
    gemm<float>(false, true, rows, m, dim, 1.0f, test.row(start), dim, train.features.data(), dim,
                0.0f, cross.data(), m);
    for (int r = 0; r < rows; ++r) {
      const float* trow = test.row(start + r);
      double tnorm = 0.0;
      for (int j = 0; j < dim; ++j) tnorm += double(trow[j]) * double(trow[j]);
      for (int i = 0; i < m; ++i) {
        double d;
        if (metric == KnnMetric::euclidean) {
          d = std::max(0.0, tnorm + fit_norm[i] - 2.0 * double(cross[size_t(r) * m + i]));
        } else {
          const double na = std::max(std::sqrt(tnorm), 1e-12);
          const double nb = std::max(std::sqrt(fit_norm[i]), 1e-12);
          d = 1.0 - double(cross[size_t(r) * m + i]) / (na * nb);
        }
        order[i] = {d, i};
      }
      nearest.assign(order.begin(), order.end());
      std::partial_sort(nearest.begin(), nearest.begin() + keep, nearest.end());
      // Majority vote over the k nearest, then the documented tie-breaks.
      std::vector<int> votes(kNumClasses, 0);
      std::vector<double> class_dist(kNumClasses, 0.0);
      for (int j = 0; j < keep; ++j) {
        const int cls = train.labels[nearest[j].second];
        votes[cls] += 1;
        class_dist[cls] += metric == KnnMetric::euclidean ? std::sqrt(nearest[j].first)
                                                          : nearest[j].first;
      }
      int best = -1;
      for (int c = 0; c < kNumClasses; ++c) {
        if (votes[c] == 0) continue;
        if (best < 0 || votes[c] > votes[best] ||
            (votes[c] == votes[best] && class_dist[c] < class_dist[best])) {
          best = c;
        }
      }
      predictions[start + r] = best;
    }
  }
  ProbeResult result;
  result.probe_kind = ProbeKind::knn;
  result.macro_f1 = macro_f1(predictions, test.labels, kNumClasses);
  result.accuracy = accuracy_percent(predictions, test.labels);
  result.train_size = train.size();
  result.test_size = test.size();
  return result;
}

// ---------------------------------------------------------------------------
// Linear / MLP probes (shared SGD softmax-cross-entropy trainer)
// ---------------------------------------------------------------------------

namespace {

// One affine layer's parameters and activations for the probe trainer.
struct Affine {
  int in = 0, out = 0;
  std::vector<float> w;  // in x out, row-major
  std::vector<float> b;  // out
};

// logits = x @ w + b for `rows` examples.
void affine_forward(const Affine& layer, const float* x, int rows, float* out) {
  for (int r = 0; r < rows; ++r) {
    std::copy(layer.b.begin(), layer.b.end(), out + size_t(r) * layer.out);
  }
  gemm<float>(false, false, rows, layer.out, layer.in, 1.0f, x, layer.in, layer.w.data(),
              layer.out, 1.0f, out, layer.out);
}

// Accumulates dW/db and (optionally) dX for a minibatch.
void affine_backward(const Affine& layer, const float* x, const float* d_out, int rows,
                     std::vector<float>& dw, std::vector<float>& db, float* d_x) {
  gemm<float>(true, false, layer.in, layer.out, rows, 1.0f, x, layer.in, d_out, layer.out, 0.0f,
              dw.data(), layer.out);
  std::fill(db.begin(), db.end(), 0.0f);
  for (int r = 0; r < rows; ++r) {
    const float* row = d_out + size_t(r) * layer.out;
    for (int j = 0; j < layer.out; ++j) db[j] += row[j];
  }
  if (d_x) {
    gemm<float>(false, true, rows, layer.in, layer.out, 1.0f, d_out, layer.out, layer.w.data(),
                layer.out, 0.0f, d_x, layer.in);
  }
}

void sgd_update(Affine& layer, const std::vector<float>& dw, const std::vector<float>& db,
                double lr) {
  for (size_t j = 0; j < layer.w.size(); ++j) layer.w[j] -= float(lr) * dw[j];
  for (size_t j = 0; j < layer.b.size(); ++j) layer.b[j] -= float(lr) * db[j];
}

// Softmax cross-entropy: fills d_logits with (softmax - onehot)/rows and
// returns the mean loss.
double softmax_xent(const float* logits, const int* labels, int rows, int classes,
                    float* d_logits) {
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const float* row = logits + size_t(r) * classes;
    float* drow = d_logits + size_t(r) * classes;
    float peak = row[0];
    for (int c = 1; c < classes; ++c) peak = std::max(peak, row[c]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(double(row[c]) - peak);
    for (int c = 0; c < classes; ++c) {
      const double p = std::exp(double(row[c]) - peak) / denom;
      drow[c] = float((p - (c == labels[r] ? 1.0 : 0.0)) / rows);
    }
    total += -(double(row[labels[r]]) - peak - std::log(denom));
  }
  return total / rows;
}

std::vector<int> predict_argmax(const float* logits, int rows, int classes) {
  std::vector<int> out(rows);
  for (int r = 0; r < rows; ++r) {
    const float* row = logits + size_t(r) * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

// Trains a (linear | one-hidden-layer) softmax classifier head on the train
// table and evaluates on the test table. Layers arrive initialized.
ProbeResult run_probe_head(std::vector<Affine> layers, const EmbeddingTable& train,
                           const EmbeddingTable& test, const ProbeConfig& cfg, uint64_t seed,
                           ProbeKind kind) {
  if (train.size() == 0 || test.size() == 0) {
    throw std::invalid_argument("probe: empty embedding table");
  }
  if (train.dim != test.dim) throw std::invalid_argument("probe: dimension mismatch");
  const bool has_hidden = layers.size() == 2;
  const int hidden = has_hidden ? layers[0].out : 0;
  const float slope = float(ModelArch::kLeakySlope);
  Rng rng(seed);
  std::vector<int> order(train.size());
  for (int i = 0; i < train.size(); ++i) order[i] = i;

  const int bsz = cfg.probe_batch_size;
  std::vector<float> x(size_t(bsz) * train.dim);
  std::vector<int> y(bsz);
  std::vector<float> h(size_t(bsz) * std::max(hidden, 1)), dh(h.size());
  std::vector<float> logits(size_t(bsz) * kNumClasses), d_logits(logits.size());
  std::vector<std::vector<float>> dw, db;
  for (const Affine& l : layers) {
    dw.emplace_back(l.w.size());
    db.emplace_back(l.b.size());
  }

  for (int epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < train.size(); start += bsz) {
      const int rows = std::min(bsz, train.size() - start);
      for (int r = 0; r < rows; ++r) {
        const int idx = order[start + r];
        std::copy(train.row(idx), train.row(idx) + train.dim, x.data() + size_t(r) * train.dim);
        y[r] = train.labels[idx];
      }
      const float* features = x.data();
      if (has_hidden) {
        affine_forward(layers[0], features, rows, h.data());
        for (size_t j = 0; j < size_t(rows) * hidden; ++j) {
          if (h[j] < 0.0f) h[j] *= slope;
        }
        affine_forward(layers[1], h.data(), rows, logits.data());
      } else {
        affine_forward(layers[0], features, rows, logits.data());
      }
      const double loss = softmax_xent(logits.data(), y.data(), rows, kNumClasses,
                                       d_logits.data());
      if (!std::isfinite(loss)) throw std::runtime_error("probe: non-finite training loss");
      if (has_hidden) {
        affine_backward(layers[1], h.data(), d_logits.data(), rows, dw[1], db[1], dh.data());
        for (size_t j = 0; j < size_t(rows) * hidden; ++j) {
          if (h[j] < 0.0f) dh[j] *= slope;
        }
        affine_backward(layers[0], features, dh.data(), rows, dw[0], db[0], nullptr);
        sgd_update(layers[1], dw[1], db[1], cfg.probe_lr);
        sgd_update(layers[0], dw[0], db[0], cfg.probe_lr);
      } else {
        affine_backward(layers[0], features, d_logits.data(), rows, dw[0], db[0], nullptr);
        sgd_update(layers[0], dw[0], db[0], cfg.probe_lr);
      }
    }
  }

  // Evaluation in probe-batch chunks.
  std::vector<int> predictions;
  predictions.reserve(test.size());
  for (int start = 0; start < test.size(); start += bsz) {
    const int rows = std::min(bsz, test.size() - start);
    const float* features = test.row(start);
    if (has_hidden) {
      affine_forward(layers[0], features, rows, h.data());
      for (size_t j = 0; j < size_t(rows) * hidden; ++j) {
        if (h[j] < 0.0f) h[j] *= slope;
      }
      affine_forward(layers[1], h.data(), rows, logits.data());
    } else {
      affine_forward(layers[0], features, rows, logits.data());
    }
    const std::vector<int> chunk = predict_argmax(logits.data(), rows, kNumClasses);
    predictions.insert(predictions.end(), chunk.begin(), chunk.end());
  }

  ProbeResult result;
  result.probe_kind = kind;
  result.macro_f1 = macro_f1(predictions, test.labels, kNumClasses);
  result.accuracy = accuracy_percent(predictions, test.labels);
  result.train_size = train.size();
  result.test_size = test.size();
  return result;
}

}  // namespace

ProbeResult linear_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                         const ProbeConfig& cfg, uint64_t seed) {
  cfg.validate();
  Affine head;
  head.in = train.dim;
  head.out = kNumClasses;
  head.w.assign(size_t(head.in) * head.out, 0.0f);  // zero-initialized by contract
  head.b.assign(head.out, 0.0f);
  return run_probe_head({std::move(head)}, train, test, cfg, seed, ProbeKind::linear);
}

ProbeResult mlp_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                      const ProbeConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "mlp-init"));
  Affine first, second;
  first.in = train.dim;
  first.out = cfg.mlp_hidden;
  const double bound1 = std::sqrt(1.0 / first.in);
  first.w.resize(size_t(first.in) * first.out);
  for (float& w : first.w) w = float(rng.uniform_range(-bound1, bound1));
  first.b.assign(first.out, 0.0f);
  second.in = cfg.mlp_hidden;
  second.out = kNumClasses;
  const double bound2 = std::sqrt(1.0 / second.in);
  second.w.resize(size_t(second.in) * second.out);
  for (float& w : second.w) w = float(rng.uniform_range(-bound2, bound2));
  second.b.assign(second.out, 0.0f);
  return run_probe_head({std::move(first), std::move(second)}, train, test, cfg, seed,
                        ProbeKind::mlp);
}

// ---------------------------------------------------------------------------
// Periodic evaluation hook
// ---------------------------------------------------------------------------

void evaluation_hook(const std::vector<Model<float>>& peers, long step,
                     const ExperimentConfig& cfg, const Dataset& fit_data,
                     const Dataset& test_data, MetricsLog& log, std::ostream* probe_csv) {
  const ProbeConfig& pc = cfg.probe_config;
  const int fit_subset = pc.fit_subset > 0 ? pc.fit_subset : 10000;
  const int test_subset = pc.test_subset;  // 0 = whole test split
  for (size_t i = 0; i < peers.size(); ++i) {
    const EmbeddingTable fit = extract_embeddings(peers[i], fit_data, fit_subset);
    const EmbeddingTable test = extract_embeddings(peers[i], test_data, test_subset);
    const uint64_t seed = derive_seed(
        cfg.master_seed, "probe-" + std::to_string(step) + "-peer-" + std::to_string(i));
    const ProbeResult r = linear_probe(fit, test, pc, seed);
    log.append(step, std::to_string(i), "linear_f1", r.macro_f1);
    log.append(step, std::to_string(i), "linear_acc", r.accuracy);
    if (probe_csv) {
      (*probe_csv) << step << ',' << i << ",linear," << format_real(r.macro_f1) << ','
                   << format_real(r.accuracy) << ',' << r.train_size << ',' << r.test_size
                   << '\n';
    }
  }
}

}  // namespace herdkit
