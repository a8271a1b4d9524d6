#pragma once

#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/model.hpp"

namespace herdkit {

// All losses compare a student embedding batch against a constant target
// (teacher) batch of identical shape. Values are always >= 0.

// Mean over all B*D elements of (a - b)^2.
template <typename T>
double mse_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b);

// Mean over the batch of (1 - cosine similarity) of paired rows; row norms
// are guarded below 1e-12.
template <typename T>
double cosine_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b);

// For each sample, the maximum over dimensions of the squared difference;
// mean over the batch. Satisfies mse <= salient <= D * mse.
template <typename T>
double salient_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b);

template <typename T>
double loss_value(LossKind kind, const EmbeddingBatch<T>& student,
                  const EmbeddingBatch<T>& teacher);

// Loss averaged over several teachers plus its gradient with respect to the
// student embedding (teachers are constants: the stop-gradient boundary).
template <typename T>
struct LossWithGrad {
  double value = 0.0;
  std::vector<T> d_student;  // B x D, row-major
};

template <typename T>
LossWithGrad<T> distillation_loss(LossKind kind, const EmbeddingBatch<T>& student,
                                  const std::vector<EmbeddingBatch<T>>& teachers);

}  // namespace herdkit
