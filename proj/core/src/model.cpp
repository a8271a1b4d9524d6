#include "herdkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "herdkit/blas.hpp"
#include "herdkit/seed.hpp"

namespace herdkit {

// ---------------------------------------------------------------------------
// Architecture registry
// ---------------------------------------------------------------------------

namespace {

ModelArch build_simple_cnn() {
  ModelArch arch;
  arch.arch_id = ArchId::simple_cnn;
  arch.input_channels = 3;
  arch.input_side = 32;
  int channels = arch.input_channels;
  int side = arch.input_side;
  auto conv = [&](int out_ch) {
    arch.layers.push_back({LayerKind::conv, channels, out_ch, side, side});
    channels = out_ch;
  };
  auto bn_relu = [&] {
    arch.layers.push_back({LayerKind::batchnorm, channels, channels, side, side});
    arch.layers.push_back({LayerKind::leaky_relu, channels, channels, side, side});
  };
  auto pool = [&] {
    arch.layers.push_back({LayerKind::maxpool, channels, channels, side, side / 2});
    side /= 2;
  };
  conv(64);
  bn_relu();
  conv(128);
  bn_relu();
  pool();
  conv(256);
  bn_relu();
  conv(256);
  bn_relu();
  pool();
  arch.embedding_dim = channels * side * side;  // 256 * 8 * 8 = 16384
  return arch;
}

}  // namespace

const ModelArch& arch_spec(ArchId arch_id) {
  static const ModelArch simple_cnn = build_simple_cnn();
  switch (arch_id) {
    case ArchId::simple_cnn: return simple_cnn;
  }
  throw std::invalid_argument("arch_spec: unregistered architecture");
}

// ---------------------------------------------------------------------------
// Construction and tensor bookkeeping
// ---------------------------------------------------------------------------

template <typename T>
Model<T> init_model(ArchId arch_id, uint64_t seed) {
  const ModelArch& arch = arch_spec(arch_id);
  Model<T> model;
  model.arch_id = arch_id;
  model.init_seed = seed;
  Rng rng(seed);
  for (const LayerDesc& layer : arch.layers) {
    if (layer.kind == LayerKind::conv) {
      ConvLayer<T> conv;
      conv.in_channels = layer.in_channels;
      conv.out_channels = layer.out_channels;
      const int fan_in = layer.in_channels * ModelArch::kKernel * ModelArch::kKernel;
      const double bound = std::sqrt(1.0 / fan_in);
      conv.weight.resize(size_t(layer.out_channels) * fan_in);
      for (T& w : conv.weight) w = static_cast<T>(rng.uniform_range(-bound, bound));
      conv.bias.assign(layer.out_channels, T(0));
      model.convs.push_back(std::move(conv));
    } else if (layer.kind == LayerKind::batchnorm) {
      BnLayer<T> bn;
      bn.channels = layer.out_channels;
      bn.gamma.assign(bn.channels, T(1));
      bn.beta.assign(bn.channels, T(0));
      bn.running_mean.assign(bn.channels, T(0));
      bn.running_var.assign(bn.channels, T(1));
      model.bns.push_back(std::move(bn));
    }
  }
  return model;
}

template <typename T>
std::vector<NamedTensor<T>> learnable_tensors(Model<T>& model) {
  std::vector<NamedTensor<T>> out;
  for (size_t k = 0; k < model.convs.size(); ++k) {
    ConvLayer<T>& conv = model.convs[k];
    const std::string base = "conv" + std::to_string(k + 1);
    out.push_back({base + ".weight",
                   {conv.out_channels, conv.in_channels, ModelArch::kKernel, ModelArch::kKernel},
                   &conv.weight});
    out.push_back({base + ".bias", {conv.out_channels}, &conv.bias});
  }
  for (size_t k = 0; k < model.bns.size(); ++k) {
    BnLayer<T>& bn = model.bns[k];
    const std::string base = "bn" + std::to_string(k + 1);
    out.push_back({base + ".gamma", {bn.channels}, &bn.gamma});
    out.push_back({base + ".beta", {bn.channels}, &bn.beta});
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> all_tensors(Model<T>& model) {
  std::vector<NamedTensor<T>> out = learnable_tensors(model);
  for (size_t k = 0; k < model.bns.size(); ++k) {
    BnLayer<T>& bn = model.bns[k];
    const std::string base = "bn" + std::to_string(k + 1);
    out.push_back({base + ".running_mean", {bn.channels}, &bn.running_mean});
    out.push_back({base + ".running_var", {bn.channels}, &bn.running_var});
  }
  return out;
}

template <typename T>
void ParamGrads<T>::zero() {
  for (std::vector<T>& g : tensors) std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
double ParamGrads<T>::l2_norm() const {
  double sum = 0.0;
  for (const std::vector<T>& g : tensors) {
    for (T v : g) sum += double(v) * double(v);
  }
  return std::sqrt(sum);
}

template <typename T>
ParamGrads<T> make_grads(Model<T>& model) {
  ParamGrads<T> grads;
  for (const NamedTensor<T>& t : learnable_tensors(model)) {
    grads.tensors.emplace_back(t.data->size(), T(0));
  }
  return grads;
}

template <typename T>
long param_count(const Model<T>& model) {
  long count = 0;
  for (const NamedTensor<T>& t : learnable_tensors(const_cast<Model<T>&>(model))) {
    count += static_cast<long>(t.data->size());
  }
  return count;
}

template <typename Dst, typename Src>
Model<Dst> cast_model(const Model<Src>& model) {
  Model<Dst> out;
  out.arch_id = model.arch_id;
  out.init_seed = model.init_seed;
  for (const ConvLayer<Src>& conv : model.convs) {
    ConvLayer<Dst> c;
    c.in_channels = conv.in_channels;
    c.out_channels = conv.out_channels;
    c.weight.assign(conv.weight.begin(), conv.weight.end());
    c.bias.assign(conv.bias.begin(), conv.bias.end());
    out.convs.push_back(std::move(c));
  }
  for (const BnLayer<Src>& bn : model.bns) {
    BnLayer<Dst> b;
    b.channels = bn.channels;
    b.gamma.assign(bn.gamma.begin(), bn.gamma.end());
    b.beta.assign(bn.beta.begin(), bn.beta.end());
    b.running_mean.assign(bn.running_mean.begin(), bn.running_mean.end());
    b.running_var.assign(bn.running_var.begin(), bn.running_var.end());
    b.update_count = bn.update_count;
    out.bns.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer kernels. Activations live in channel-major layout: a buffer for a
// layer with C channels and side S holds C rows of B*S*S contiguous scalars,
// element (c, b, y, x) at c*(B*S*S) + b*(S*S) + y*S + x. This makes BN a
// per-row reduction and lets conv GEMMs span many images at once.
// ---------------------------------------------------------------------------

namespace {

enum class BnMode { batch_update, batch_frozen, running };

// Bound on the im2col buffer so a conv group never allocates more than this.
constexpr size_t kColsBudgetBytes = size_t(192) << 20;

int conv_group_size(int k_rows, size_t ss, int batch, size_t scalar_bytes) {
  const size_t per_image = size_t(k_rows) * ss * scalar_bytes;
  const size_t g = std::max<size_t>(1, kColsBudgetBytes / per_image);
  return static_cast<int>(std::min<size_t>(g, size_t(batch)));
}

// Gathers 3x3 stride-1 pad-1 patches for images [b0, b0+g) into a
// (C*9) x (g*S*S) matrix.
template <typename T>
void im2col(const T* src, int channels, int batch, int side, int b0, int g, T* cols) {
  const size_t ss = size_t(side) * side;
  const size_t chan_stride = size_t(batch) * ss;
  const size_t col_width = size_t(g) * ss;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + (size_t(c) * 9 + size_t(ky) * 3 + kx) * col_width;
        const int dx = kx - 1;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(side, side - dx);
        for (int i = 0; i < g; ++i) {
          const T* img = src + size_t(c) * chan_stride + (size_t(b0) + i) * ss;
          T* dst = row + size_t(i) * ss;
          for (int y = 0; y < side; ++y) {
            const int iy = y + ky - 1;
            T* out_line = dst + size_t(y) * side;
            if (iy < 0 || iy >= side) {
              std::fill(out_line, out_line + side, T(0));
              continue;
            }
            const T* in_line = img + size_t(iy) * side;
            if (x_lo > 0) out_line[0] = T(0);
            std::copy(in_line + x_lo + dx, in_line + x_hi + dx, out_line + x_lo);
            if (x_hi < side) out_line[side - 1] = T(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds patch gradients back onto the image grid.
template <typename T>
void col2im_add(const T* cols, int channels, int batch, int side, int b0, int g, T* dst) {
  const size_t ss = size_t(side) * side;
  const size_t chan_stride = size_t(batch) * ss;
  const size_t col_width = size_t(g) * ss;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (size_t(c) * 9 + size_t(ky) * 3 + kx) * col_width;
        const int dx = kx - 1;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(side, side - dx);
        for (int i = 0; i < g; ++i) {
          T* img = dst + size_t(c) * chan_stride + (size_t(b0) + i) * ss;
          const T* src_img = row + size_t(i) * ss;
          for (int y = 0; y < side; ++y) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= side) continue;
            const T* in_line = src_img + size_t(y) * side;
            T* out_line = img + size_t(iy) * side;
            for (int x = x_lo; x < x_hi; ++x) out_line[x + dx] += in_line[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvLayer<T>& conv, const T* in, int batch, int side, T* out,
                  std::vector<T>& cols) {
  const int k_rows = conv.in_channels * 9;
  const size_t ss = size_t(side) * side;
  const size_t out_stride = size_t(batch) * ss;
  const int group = conv_group_size(k_rows, ss, batch, sizeof(T));
  cols.resize(size_t(k_rows) * group * ss);
  for (int b0 = 0; b0 < batch; b0 += group) {
    const int g = std::min(group, batch - b0);
    im2col(in, conv.in_channels, batch, side, b0, g, cols.data());
    gemm<T>(false, false, conv.out_channels, int(g * ss), k_rows, T(1), conv.weight.data(),
            k_rows, cols.data(), int(g * ss), T(0), out + size_t(b0) * ss, int(out_stride));
  }
  for (int oc = 0; oc < conv.out_channels; ++oc) {
    const T bias = conv.bias[oc];
    T* row = out + size_t(oc) * out_stride;
    for (size_t j = 0; j < out_stride; ++j) row[j] += bias;
  }
}

// d_in may be null for the first layer, where the input gradient is unused.
template <typename T>
void conv_backward(const ConvLayer<T>& conv, const T* in, const T* d_out, int batch, int side,
                   T* d_in, std::vector<T>& w_grad, std::vector<T>& b_grad, std::vector<T>& cols,
                   std::vector<T>& dcols) {
  const int k_rows = conv.in_channels * 9;
  const size_t ss = size_t(side) * side;
  const size_t out_stride = size_t(batch) * ss;
  const int group = conv_group_size(k_rows, ss, batch, sizeof(T));
  cols.resize(size_t(k_rows) * group * ss);
  if (d_in) {
    dcols.resize(size_t(k_rows) * group * ss);
    std::fill(d_in, d_in + size_t(conv.in_channels) * out_stride, T(0));
  }
  for (int b0 = 0; b0 < batch; b0 += group) {
    const int g = std::min(group, batch - b0);
    im2col(in, conv.in_channels, batch, side, b0, g, cols.data());
    gemm<T>(false, true, conv.out_channels, k_rows, int(g * ss), T(1), d_out + size_t(b0) * ss,
            int(out_stride), cols.data(), int(g * ss), T(1), w_grad.data(), k_rows);
    if (d_in) {
      gemm<T>(true, false, k_rows, int(g * ss), conv.out_channels, T(1), conv.weight.data(),
              k_rows, d_out + size_t(b0) * ss, int(out_stride), T(0), dcols.data(), int(g * ss));
      col2im_add(dcols.data(), conv.in_channels, batch, side, b0, g, d_in);
    }
  }
  for (int oc = 0; oc < conv.out_channels; ++oc) {
    const T* row = d_out + size_t(oc) * out_stride;
    double sum = 0.0;
    for (size_t j = 0; j < out_stride; ++j) sum += double(row[j]);
    b_grad[oc] += static_cast<T>(sum);
  }
}

// `stats` receives the batch mean/inv_std when non-null (training trace).
template <typename T>
void bn_forward(BnLayer<T>& bn, const T* in, int batch, int side, T* out, BnMode mode,
                typename ForwardTrace<T>::BnStats* stats) {
  const size_t n = size_t(batch) * side * side;
  const double eps = ModelArch::kBnEpsilon;
  const double momentum = ModelArch::kBnMomentum;
  if (stats) {
    stats->mean.resize(bn.channels);
    stats->inv_std.resize(bn.channels);
  }
  for (int c = 0; c < bn.channels; ++c) {
    const T* x = in + size_t(c) * n;
    T* y = out + size_t(c) * n;
    if (mode == BnMode::running) {
      const double scale = double(bn.gamma[c]) / std::sqrt(double(bn.running_var[c]) + eps);
      const double shift = double(bn.beta[c]) - double(bn.running_mean[c]) * scale;
      for (size_t j = 0; j < n; ++j) y[j] = static_cast<T>(double(x[j]) * scale + shift);
      continue;
    }
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) sum += double(x[j]);
    const double mean = sum / double(n);
    double sq = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double d = double(x[j]) - mean;
      sq += d * d;
    }
    const double var = sq / double(n);  // biased, used for normalization
    const double inv_std = 1.0 / std::sqrt(var + eps);
    const double scale = double(bn.gamma[c]) * inv_std;
    const double shift = double(bn.beta[c]) - mean * scale;
    for (size_t j = 0; j < n; ++j) y[j] = static_cast<T>(double(x[j]) * scale + shift);
    if (mode == BnMode::batch_update) {
      const double unbiased = n > 1 ? sq / double(n - 1) : var;
      bn.running_mean[c] =
          static_cast<T>((1.0 - momentum) * double(bn.running_mean[c]) + momentum * mean);
      bn.running_var[c] =
          static_cast<T>((1.0 - momentum) * double(bn.running_var[c]) + momentum * unbiased);
    }
    if (stats) {
      stats->mean[c] = static_cast<T>(mean);
      stats->inv_std[c] = static_cast<T>(inv_std);
    }
  }
  if (mode == BnMode::batch_update) bn.update_count += 1;
}

// Backward through train-mode BN, in place on d (reads the stored layer input
// x and the recorded batch statistics).
template <typename T>
void bn_backward(const BnLayer<T>& bn, const typename ForwardTrace<T>::BnStats& stats,
                 const T* x, int batch, int side, T* d, std::vector<T>& gamma_grad,
                 std::vector<T>& beta_grad) {
  const size_t n = size_t(batch) * side * side;
  for (int c = 0; c < bn.channels; ++c) {
    const T* xc = x + size_t(c) * n;
    T* dc = d + size_t(c) * n;
    const double mean = double(stats.mean[c]);
    const double inv_std = double(stats.inv_std[c]);
    double s1 = 0.0, s2 = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double dy = double(dc[j]);
      s1 += dy;
      s2 += dy * (double(xc[j]) - mean) * inv_std;
    }
    gamma_grad[c] += static_cast<T>(s2);
    beta_grad[c] += static_cast<T>(s1);
    const double g_istd = double(bn.gamma[c]) * inv_std;
    const double mean_dy = s1 / double(n);
    const double mean_dyxh = s2 / double(n);
    for (size_t j = 0; j < n; ++j) {
      const double xhat = (double(xc[j]) - mean) * inv_std;
      dc[j] = static_cast<T>(g_istd * (double(dc[j]) - mean_dy - xhat * mean_dyxh));
    }
  }
}

template <typename T>
void leaky_relu_inplace(T* x, size_t count) {
  const T slope = static_cast<T>(ModelArch::kLeakySlope);
  for (size_t j = 0; j < count; ++j) {
    if (x[j] < T(0)) x[j] *= slope;
  }
}

// Backward through LeakyReLU using the stored post-activation values: the
// slope is positive, so output sign equals input sign.
template <typename T>
void leaky_relu_backward_inplace(const T* out, T* d, size_t count) {
  const T slope = static_cast<T>(ModelArch::kLeakySlope);
  for (size_t j = 0; j < count; ++j) {
    if (out[j] < T(0)) d[j] *= slope;
  }
}

// 2x2 max pooling; `argmax` (optional) records the winning window slot
// (2*ky + kx) for backward. Ties keep the first maximum in scan order.
template <typename T>
void maxpool_forward(const T* in, int channels, int batch, int side, T* out, uint8_t* argmax) {
  const int out_side = side / 2;
  const size_t in_ss = size_t(side) * side;
  const size_t out_ss = size_t(out_side) * out_side;
  const size_t in_stride = size_t(batch) * in_ss;
  const size_t out_stride = size_t(batch) * out_ss;
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      const T* src = in + size_t(c) * in_stride + size_t(b) * in_ss;
      T* dst = out + size_t(c) * out_stride + size_t(b) * out_ss;
      uint8_t* amax = argmax ? argmax + size_t(c) * out_stride + size_t(b) * out_ss : nullptr;
      for (int oy = 0; oy < out_side; ++oy) {
        for (int ox = 0; ox < out_side; ++ox) {
          const T* w0 = src + size_t(2 * oy) * side + 2 * ox;
          T best = w0[0];
          uint8_t slot = 0;
          if (w0[1] > best) { best = w0[1]; slot = 1; }
          if (w0[side] > best) { best = w0[side]; slot = 2; }
          if (w0[side + 1] > best) { best = w0[side + 1]; slot = 3; }
          dst[size_t(oy) * out_side + ox] = best;
          if (amax) amax[size_t(oy) * out_side + ox] = slot;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* d_out, const uint8_t* argmax, int channels, int batch, int side,
                      T* d_in) {
  const int out_side = side / 2;
  const size_t in_ss = size_t(side) * side;
  const size_t out_ss = size_t(out_side) * out_side;
  const size_t in_stride = size_t(batch) * in_ss;
  const size_t out_stride = size_t(batch) * out_ss;
  std::fill(d_in, d_in + size_t(channels) * in_stride, T(0));
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      const T* dsrc = d_out + size_t(c) * out_stride + size_t(b) * out_ss;
      const uint8_t* amax = argmax + size_t(c) * out_stride + size_t(b) * out_ss;
      T* ddst = d_in + size_t(c) * in_stride + size_t(b) * in_ss;
      for (int oy = 0; oy < out_side; ++oy) {
        for (int ox = 0; ox < out_side; ++ox) {
          const uint8_t slot = amax[size_t(oy) * out_side + ox];
          const size_t pos = size_t(2 * oy + slot / 2) * side + size_t(2 * ox + slot % 2);
          ddst[pos] += dsrc[size_t(oy) * out_side + ox];
        }
      }
    }
  }
}

// Image-major [0,1] pixels -> channel-major activations of scalar type T.
template <typename T>
void input_to_channel_major(const ImageBatch& batch, std::vector<T>& out) {
  const int b_count = batch.size();
  const size_t ss = size_t(kImageSide) * kImageSide;
  out.resize(size_t(kImageChannels) * b_count * ss);
  for (int c = 0; c < kImageChannels; ++c) {
    for (int b = 0; b < b_count; ++b) {
      const float* src = batch.pixels.data() + (size_t(b) * kImageChannels + c) * ss;
      T* dst = out.data() + (size_t(c) * b_count + b) * ss;
      for (size_t j = 0; j < ss; ++j) dst[j] = static_cast<T>(src[j]);
    }
  }
}

// Channel-major final feature map -> image-major B x D embedding rows.
template <typename T>
void gather_embedding(const T* act, int channels, int batch, int side, std::vector<T>& out) {
  const size_t ss = size_t(side) * side;
  const size_t stride = size_t(batch) * ss;
  const size_t dim = size_t(channels) * ss;
  out.resize(size_t(batch) * dim);
  for (int b = 0; b < batch; ++b) {
    T* row = out.data() + size_t(b) * dim;
    for (int c = 0; c < channels; ++c) {
      const T* src = act + size_t(c) * stride + size_t(b) * ss;
      std::copy(src, src + ss, row + size_t(c) * ss);
    }
  }
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* where) {
  for (T v : values) {
    if (!std::isfinite(double(v))) {
      throw std::runtime_error(std::string(where) + ": non-finite activations (divergence?)");
    }
  }
}

template <typename T>
void check_input(const ModelArch& arch, const ImageBatch& batch) {
  if (batch.size() < 1) throw std::invalid_argument("embed: batch must contain at least 1 image");
  const size_t expect =
      size_t(batch.size()) * arch.input_channels * arch.input_side * arch.input_side;
  if (batch.pixels.size() != expect) {
    throw std::invalid_argument("embed: batch pixel count does not match architecture input");
  }
  (void)sizeof(T);
}

// Forward walk without a trace, ping-ponging between two scratch buffers.
// Used by embed/embed_eval/embed_teacher; BN and LeakyReLU run in place.
template <typename T>
void forward_no_trace(Model<T>& model, const ImageBatch& batch, BnMode bn_mode,
                      EmbedScratch<T>& scratch, std::vector<T>& embedding) {
  const ModelArch& arch = model.arch();
  check_input<T>(arch, batch);
  const int b_count = batch.size();
  input_to_channel_major(batch, scratch.input_cm);
  T* cur = scratch.input_cm.data();
  bool cur_is_a = false;  // input buffer is separate; first conv writes to a
  size_t conv_i = 0, bn_i = 0;
  int final_channels = arch.input_channels, final_side = arch.input_side;
  for (const LayerDesc& layer : arch.layers) {
    const size_t out_count = size_t(layer.out_channels) * b_count * layer.out_side * layer.out_side;
    switch (layer.kind) {
      case LayerKind::conv: {
        std::vector<T>& out = cur_is_a ? scratch.b : scratch.a;
        out.resize(out_count);
        conv_forward(model.convs[conv_i], cur, b_count, layer.in_side, out.data(), scratch.cols);
        cur = out.data();
        cur_is_a = !cur_is_a;
        ++conv_i;
        break;
      }
      case LayerKind::batchnorm:
        bn_forward(model.bns[bn_i], cur, b_count, layer.in_side, cur, bn_mode, nullptr);
        ++bn_i;
        break;
      case LayerKind::leaky_relu:
        leaky_relu_inplace(cur, out_count);
        break;
      case LayerKind::maxpool: {
        std::vector<T>& out = cur_is_a ? scratch.b : scratch.a;
        out.resize(out_count);
        maxpool_forward(cur, layer.in_channels, b_count, layer.in_side, out.data(), nullptr);
        cur = out.data();
        cur_is_a = !cur_is_a;
        break;
      }
    }
    final_channels = layer.out_channels;
    final_side = layer.out_side;
  }
  gather_embedding(cur, final_channels, b_count, final_side, embedding);
  check_finite(embedding, "embed");
}

}  // namespace

// ---------------------------------------------------------------------------
// Public forward entry points
// ---------------------------------------------------------------------------

template <typename T>
EmbeddingBatch<T> embed(Model<T>& model, const ImageBatch& batch, RunMode mode,
                        EmbedScratch<T>* scratch) {
  EmbedScratch<T> local;
  EmbedScratch<T>& ws = scratch ? *scratch : local;
  EmbeddingBatch<T> out;
  out.batch = batch.size();
  out.dim = model.arch().embedding_dim;
  out.step_id = batch.step_id;
  forward_no_trace(model, batch,
                   mode == RunMode::train ? BnMode::batch_update : BnMode::running, ws,
                   out.values);
  return out;
}

template <typename T>
EmbeddingBatch<T> embed_eval(const Model<T>& model, const ImageBatch& batch,
                             EmbedScratch<T>* scratch) {
  // BnMode::running never mutates the model, so the cast is safe.
  EmbedScratch<T> local;
  EmbedScratch<T>& ws = scratch ? *scratch : local;
  EmbeddingBatch<T> out;
  out.batch = batch.size();
  out.dim = model.arch().embedding_dim;
  out.step_id = batch.step_id;
  forward_no_trace(const_cast<Model<T>&>(model), batch, BnMode::running, ws, out.values);
  return out;
}

template <typename T>
EmbeddingBatch<T> embed_teacher(const Model<T>& model, const ImageBatch& batch,
                                EmbedScratch<T>* scratch) {
  // Batch statistics are computed but never written back: side-effect-free.
  EmbedScratch<T> local;
  EmbedScratch<T>& ws = scratch ? *scratch : local;
  EmbeddingBatch<T> out;
  out.batch = batch.size();
  out.dim = model.arch().embedding_dim;
  out.step_id = batch.step_id;
  forward_no_trace(const_cast<Model<T>&>(model), batch, BnMode::batch_frozen, ws, out.values);
  return out;
}

template <typename T>
void forward_train(Model<T>& model, const ImageBatch& batch, bool update_running_stats,
                   ForwardTrace<T>& trace) {
  const ModelArch& arch = model.arch();
  check_input<T>(arch, batch);
  const int b_count = batch.size();
  trace.batch = b_count;
  trace.layer_out.resize(arch.layers.size());
  size_t n_pool = 0, n_bn = 0;
  for (const LayerDesc& layer : arch.layers) {
    if (layer.kind == LayerKind::maxpool) ++n_pool;
    if (layer.kind == LayerKind::batchnorm) ++n_bn;
  }
  trace.pool_argmax.resize(n_pool);
  trace.bn_stats.resize(n_bn);
  input_to_channel_major(batch, trace.input_cm);
  const T* cur = trace.input_cm.data();
  size_t conv_i = 0, bn_i = 0, pool_i = 0;
  int final_channels = arch.input_channels, final_side = arch.input_side;
  // Trace buffer reuse: conv and BN outputs are stored per layer; LeakyReLU
  // runs in place on the BN output (its own slot stays empty).
  static thread_local std::vector<T> cols_scratch;
  for (size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerDesc& layer = arch.layers[i];
    const size_t out_count = size_t(layer.out_channels) * b_count * layer.out_side * layer.out_side;
    switch (layer.kind) {
      case LayerKind::conv: {
        trace.layer_out[i].resize(out_count);
        conv_forward(model.convs[conv_i], cur, b_count, layer.in_side, trace.layer_out[i].data(),
                     cols_scratch);
        cur = trace.layer_out[i].data();
        ++conv_i;
        break;
      }
      case LayerKind::batchnorm: {
        trace.layer_out[i].resize(out_count);
        bn_forward(model.bns[bn_i], cur, b_count, layer.in_side, trace.layer_out[i].data(),
                   update_running_stats ? BnMode::batch_update : BnMode::batch_frozen,
                   &trace.bn_stats[bn_i]);
        cur = trace.layer_out[i].data();
        ++bn_i;
        break;
      }
      case LayerKind::leaky_relu: {
        trace.layer_out[i].clear();
        leaky_relu_inplace(const_cast<T*>(cur), out_count);
        break;
      }
      case LayerKind::maxpool: {
        trace.layer_out[i].resize(out_count);
        trace.pool_argmax[pool_i].resize(out_count);
        maxpool_forward(cur, layer.in_channels, b_count, layer.in_side, trace.layer_out[i].data(),
                        trace.pool_argmax[pool_i].data());
        cur = trace.layer_out[i].data();
        ++pool_i;
        break;
      }
    }
    final_channels = layer.out_channels;
    final_side = layer.out_side;
  }
  gather_embedding(cur, final_channels, b_count, final_side, trace.embedding);
  check_finite(trace.embedding, "forward_train");
}

template <typename T>
void backward(const Model<T>& model, const ForwardTrace<T>& trace,
              const std::vector<T>& d_embedding, ParamGrads<T>& grads,
              BackwardScratch<T>& scratch) {
  const ModelArch& arch = model.arch();
  const int b_count = trace.batch;
  if (d_embedding.size() != size_t(b_count) * arch.embedding_dim) {
    throw std::invalid_argument("backward: d_embedding shape mismatch");
  }
  grads.zero();
  // Tensor order in grads: conv1.w, conv1.b, ..., then bn1.gamma, bn1.beta...
  const size_t n_convs = model.convs.size();
  auto conv_w = [&](size_t k) -> std::vector<T>& { return grads.tensors[2 * k]; };
  auto conv_b = [&](size_t k) -> std::vector<T>& { return grads.tensors[2 * k + 1]; };
  auto bn_g = [&](size_t k) -> std::vector<T>& { return grads.tensors[2 * n_convs + 2 * k]; };
  auto bn_b = [&](size_t k) -> std::vector<T>& { return grads.tensors[2 * n_convs + 2 * k + 1]; };

  // Scatter d_embedding back into channel-major layout for the last layer.
  const LayerDesc& last = arch.layers.back();
  const size_t last_ss = size_t(last.out_side) * last.out_side;
  const size_t last_stride = size_t(b_count) * last_ss;
  std::vector<T>& d_last = scratch.da;
  d_last.resize(size_t(last.out_channels) * last_stride);
  for (int b = 0; b < b_count; ++b) {
    const T* row = d_embedding.data() + size_t(b) * arch.embedding_dim;
    for (int c = 0; c < last.out_channels; ++c) {
      std::copy(row + size_t(c) * last_ss, row + size_t(c + 1) * last_ss,
                d_last.data() + size_t(c) * last_stride + size_t(b) * last_ss);
    }
  }

  T* d_cur = d_last.data();
  bool d_is_a = true;
  size_t conv_i = n_convs, bn_i = model.bns.size(), pool_i = trace.pool_argmax.size();
  for (size_t i = arch.layers.size(); i-- > 0;) {
    const LayerDesc& layer = arch.layers[i];
    // Input to layer i as recorded by the trace (LeakyReLU slots are empty —
    // they alias the preceding BN output).
    const T* layer_in = trace.input_cm.data();
    for (size_t j = i; j-- > 0;) {
      if (!trace.layer_out[j].empty()) {
        layer_in = trace.layer_out[j].data();
        break;
      }
    }
    switch (layer.kind) {
      case LayerKind::maxpool: {
        --pool_i;
        std::vector<T>& d_in = d_is_a ? scratch.db : scratch.da;
        d_in.resize(size_t(layer.in_channels) * b_count * layer.in_side * layer.in_side);
        maxpool_backward(d_cur, trace.pool_argmax[pool_i].data(), layer.in_channels, b_count,
                         layer.in_side, d_in.data());
        d_cur = d_in.data();
        d_is_a = !d_is_a;
        break;
      }
      case LayerKind::leaky_relu: {
        // trace.layer_out[i-1] holds the post-activation values (in-place op).
        const std::vector<T>& post = trace.layer_out[i - 1];
        leaky_relu_backward_inplace(post.data(), d_cur, post.size());
        break;
      }
      case LayerKind::batchnorm: {
        --bn_i;
        bn_backward(model.bns[bn_i], trace.bn_stats[bn_i], layer_in, b_count, layer.in_side,
                    d_cur, bn_g(bn_i), bn_b(bn_i));
        break;
      }
      case LayerKind::conv: {
        --conv_i;
        T* d_in = nullptr;
        if (i > 0) {
          std::vector<T>& buf = d_is_a ? scratch.db : scratch.da;
          buf.resize(size_t(layer.in_channels) * b_count * layer.in_side * layer.in_side);
          d_in = buf.data();
          d_is_a = !d_is_a;
        }
        conv_backward(model.convs[conv_i], layer_in, d_cur, b_count, layer.in_side, d_in,
                      conv_w(conv_i), conv_b(conv_i), scratch.cols, scratch.dcols);
        d_cur = d_in;
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Explicit instantiations (float for training, double for numerics tests)
// ---------------------------------------------------------------------------

template Model<float> init_model<float>(ArchId, uint64_t);
template Model<double> init_model<double>(ArchId, uint64_t);
template std::vector<NamedTensor<float>> learnable_tensors(Model<float>&);
template std::vector<NamedTensor<double>> learnable_tensors(Model<double>&);
template std::vector<NamedTensor<float>> all_tensors(Model<float>&);
template std::vector<NamedTensor<double>> all_tensors(Model<double>&);
template struct ParamGrads<float>;
template struct ParamGrads<double>;
template ParamGrads<float> make_grads(Model<float>&);
template ParamGrads<double> make_grads(Model<double>&);
template long param_count(const Model<float>&);
template long param_count(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<double> cast_model<double, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);
template EmbeddingBatch<float> embed(Model<float>&, const ImageBatch&, RunMode, EmbedScratch<float>*);
template EmbeddingBatch<double> embed(Model<double>&, const ImageBatch&, RunMode, EmbedScratch<double>*);
template EmbeddingBatch<float> embed_eval(const Model<float>&, const ImageBatch&, EmbedScratch<float>*);
template EmbeddingBatch<double> embed_eval(const Model<double>&, const ImageBatch&, EmbedScratch<double>*);
template EmbeddingBatch<float> embed_teacher(const Model<float>&, const ImageBatch&, EmbedScratch<float>*);
template EmbeddingBatch<double> embed_teacher(const Model<double>&, const ImageBatch&, EmbedScratch<double>*);
template void forward_train(Model<float>&, const ImageBatch&, bool, ForwardTrace<float>&);
template void forward_train(Model<double>&, const ImageBatch&, bool, ForwardTrace<double>&);
template void backward(const Model<float>&, const ForwardTrace<float>&, const std::vector<float>&,
                       ParamGrads<float>&, BackwardScratch<float>&);
template void backward(const Model<double>&, const ForwardTrace<double>&,
                       const std::vector<double>&, ParamGrads<double>&, BackwardScratch<double>&);

}  // namespace herdkit
