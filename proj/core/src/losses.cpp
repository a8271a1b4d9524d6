#include "herdkit/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace herdkit {

namespace {

constexpr double kNormGuard = 1e-12;

template <typename T>
void check_shapes(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b, const char* who) {
  if (a.batch != b.batch || a.dim != b.dim || a.values.size() != b.values.size()) {
    throw std::invalid_argument(std::string(who) + ": embedding shape mismatch");
  }
  if (a.batch < 1) throw std::invalid_argument(std::string(who) + ": empty batch");
}

}  // namespace

template <typename T>
double mse_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b) {
  check_shapes(a, b, "mse_loss");
  double sum = 0.0;
  for (size_t j = 0; j < a.values.size(); ++j) {
    const double d = double(a.values[j]) - double(b.values[j]);
    sum += d * d;
  }
  return sum / double(a.values.size());
}

template <typename T>
double cosine_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b) {
  check_shapes(a, b, "cosine_loss");
  double total = 0.0;
  for (int r = 0; r < a.batch; ++r) {
    const T* x = a.row(r);
    const T* y = b.row(r);
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (int j = 0; j < a.dim; ++j) {
      dot += double(x[j]) * double(y[j]);
      nx += double(x[j]) * double(x[j]);
      ny += double(y[j]) * double(y[j]);
    }
    const double na = std::max(std::sqrt(nx), kNormGuard);
    const double nb = std::max(std::sqrt(ny), kNormGuard);
    total += 1.0 - dot / (na * nb);
  }
  return total / double(a.batch);
}

template <typename T>
double salient_loss(const EmbeddingBatch<T>& a, const EmbeddingBatch<T>& b) {
  check_shapes(a, b, "salient_loss");
  double total = 0.0;
  for (int r = 0; r < a.batch; ++r) {
    const T* x = a.row(r);
    const T* y = b.row(r);
    double best = 0.0;
    for (int j = 0; j < a.dim; ++j) {
      const double d = double(x[j]) - double(y[j]);
      const double sq = d * d;
      if (sq > best) best = sq;
    }
    total += best;
  }
  return total / double(a.batch);
}

template <typename T>
double loss_value(LossKind kind, const EmbeddingBatch<T>& student,
                  const EmbeddingBatch<T>& teacher) {
  switch (kind) {
    case LossKind::mse: return mse_loss(student, teacher);
    case LossKind::cosine: return cosine_loss(student, teacher);
    case LossKind::salient: return salient_loss(student, teacher);
  }
  throw std::logic_error("loss_value: unhandled LossKind");
}

namespace {

// Adds scale * d(loss)/d(student) for one teacher into grad.
template <typename T>
void add_loss_grad(LossKind kind, const EmbeddingBatch<T>& s, const EmbeddingBatch<T>& t,
                   double scale, std::vector<T>& grad) {
  const int batch = s.batch, dim = s.dim;
  switch (kind) {
    case LossKind::mse: {
      const double c = scale * 2.0 / (double(batch) * dim);
      for (size_t j = 0; j < s.values.size(); ++j) {
        grad[j] += static_cast<T>(c * (double(s.values[j]) - double(t.values[j])));
      }
      return;
    }
    case LossKind::cosine: {
      for (int r = 0; r < batch; ++r) {
        const T* x = s.row(r);
        const T* y = t.row(r);
        T* g = grad.data() + size_t(r) * dim;
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (int j = 0; j < dim; ++j) {
          dot += double(x[j]) * double(y[j]);
          nx += double(x[j]) * double(x[j]);
          ny += double(y[j]) * double(y[j]);
        }
        const double na = std::max(std::sqrt(nx), kNormGuard);
        const double nb = std::max(std::sqrt(ny), kNormGuard);
        const double cos = dot / (na * nb);
        const double c = scale / double(batch);
        if (std::sqrt(nx) > kNormGuard) {
          // d(1-cos)/dx = -y/(na*nb) + cos * x/na^2
          for (int j = 0; j < dim; ++j) {
            g[j] += static_cast<T>(c * (-double(y[j]) / (na * nb) + cos * double(x[j]) / (na * na)));
          }
        } else {
          // Clamped norm: na is a constant, only the dot term survives.
          for (int j = 0; j < dim; ++j) {
            g[j] += static_cast<T>(c * (-double(y[j]) / (na * nb)));
          }
        }
      }
      return;
    }
    case LossKind::salient: {
      for (int r = 0; r < batch; ++r) {
        const T* x = s.row(r);
        const T* y = t.row(r);
        double best = -1.0;
        int arg = 0;
        for (int j = 0; j < dim; ++j) {
          const double d = double(x[j]) - double(y[j]);
          const double sq = d * d;
          if (sq > best) {
            best = sq;
            arg = j;
          }
        }
        grad[size_t(r) * dim + arg] += static_cast<T>(
            scale * 2.0 * (double(x[arg]) - double(y[arg])) / double(batch));
      }
      return;
    }
  }
  throw std::logic_error("add_loss_grad: unhandled LossKind");
}

}  // namespace

template <typename T>
LossWithGrad<T> distillation_loss(LossKind kind, const EmbeddingBatch<T>& student,
                                  const std::vector<EmbeddingBatch<T>>& teachers) {
  if (teachers.empty()) throw std::invalid_argument("distillation_loss: no teachers");
  LossWithGrad<T> out;
  out.d_student.assign(student.values.size(), T(0));
  const double w = 1.0 / double(teachers.size());
  for (const EmbeddingBatch<T>& teacher : teachers) {
    out.value += w * loss_value(kind, student, teacher);
    add_loss_grad(kind, student, teacher, w, out.d_student);
  }
  return out;
}

template double mse_loss(const EmbeddingBatch<float>&, const EmbeddingBatch<float>&);
template double mse_loss(const EmbeddingBatch<double>&, const EmbeddingBatch<double>&);
template double cosine_loss(const EmbeddingBatch<float>&, const EmbeddingBatch<float>&);
template double cosine_loss(const EmbeddingBatch<double>&, const EmbeddingBatch<double>&);
template double salient_loss(const EmbeddingBatch<float>&, const EmbeddingBatch<float>&);
template double salient_loss(const EmbeddingBatch<double>&, const EmbeddingBatch<double>&);
template double loss_value(LossKind, const EmbeddingBatch<float>&, const EmbeddingBatch<float>&);
template double loss_value(LossKind, const EmbeddingBatch<double>&, const EmbeddingBatch<double>&);
template struct LossWithGrad<float>;
template struct LossWithGrad<double>;
template LossWithGrad<float> distillation_loss(LossKind, const EmbeddingBatch<float>&,
                                               const std::vector<EmbeddingBatch<float>>&);
template LossWithGrad<double> distillation_loss(LossKind, const EmbeddingBatch<double>&,
                                                const std::vector<EmbeddingBatch<double>>&);

}  // namespace herdkit
