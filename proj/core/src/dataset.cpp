#include "herdkit/dataset.hpp"

#include <fstream>
#include <stdexcept>

#include "herdkit/seed.hpp"

namespace herdkit {

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Dataset Dataset::head(int k) const {
  if (k < 0 || k > size()) {
    throw std::invalid_argument("Dataset::head: k must be in [0, " + std::to_string(size()) + "]");
  }
  Dataset out;
  out.split = split;
  out.labels.assign(labels.begin(), labels.begin() + k);
  out.images.assign(images.begin(), images.begin() + size_t(k) * kImagePixels);
  return out;
}

std::array<int, kNumClasses> Dataset::label_histogram() const {
  std::array<int, kNumClasses> hist{};
  for (int label : labels) hist[label] += 1;
  return hist;
}

namespace {

void append_records(Dataset& out, const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("load_cifar10: missing file '" + path + "'");
  const std::streamoff bytes = in.tellg();
  if (bytes % kRecordBytes != 0) {
    throw std::runtime_error("load_cifar10: '" + path + "' is " + std::to_string(bytes) +
                             " bytes, not a multiple of the 3073-byte record size");
  }
  const size_t records = static_cast<size_t>(bytes) / kRecordBytes;
  in.seekg(0);
  std::vector<uint8_t> record(kRecordBytes);
  out.labels.reserve(out.labels.size() + records);
  out.images.reserve(out.images.size() + records * kImagePixels);
  for (size_t r = 0; r < records; ++r) {
    if (!in.read(reinterpret_cast<char*>(record.data()), kRecordBytes)) {
      throw std::runtime_error("load_cifar10: short read in '" + path + "'");
    }
    if (record[0] > 9) {
      throw std::runtime_error("load_cifar10: '" + path + "' record " + std::to_string(r) +
                               " has label byte " + std::to_string(record[0]) + " > 9");
    }
    out.labels.push_back(record[0]);
    out.images.insert(out.images.end(), record.begin() + 1, record.end());
  }
}

}  // namespace

Dataset load_cifar10(const std::string& dataset_dir, Split split) {
  Dataset out;
  out.split = split;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) {
      append_records(out, dataset_dir + "/data_batch_" + std::to_string(i) + ".bin");
    }
  } else {
    append_records(out, dataset_dir + "/test_batch.bin");
  }
  return out;
}

ImageBatch make_batch(const Dataset& dataset, const std::vector<int>& indices, long step_id) {
  ImageBatch batch;
  batch.step_id = step_id;
  batch.labels.reserve(indices.size());
  batch.pixels.resize(indices.size() * size_t(kImagePixels));
  float* dst = batch.pixels.data();
  for (int index : indices) {
    if (index < 0 || index >= dataset.size()) {
      throw std::invalid_argument("make_batch: index " + std::to_string(index) + " out of range");
    }
    batch.labels.push_back(dataset.labels[index]);
    const uint8_t* src = dataset.image(index);
    for (int p = 0; p < kImagePixels; ++p) dst[p] = normalize(src[p]);
    dst += kImagePixels;
  }
  return batch;
}

std::vector<std::vector<int>> epoch_index_batches(const Dataset& dataset, int batch_size,
                                                  uint64_t rng_seed) {
  if (batch_size < 1) throw std::invalid_argument("epoch_index_batches: batch_size must be >= 1");
  if (dataset.size() == 0) throw std::invalid_argument("epoch_index_batches: dataset is empty");
  std::vector<int> order(dataset.size());
  for (int i = 0; i < dataset.size(); ++i) order[i] = i;
  Rng rng(rng_seed);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    const size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::vector<ImageBatch> epoch_batches(const Dataset& dataset, int batch_size, uint64_t rng_seed) {
  std::vector<ImageBatch> out;
  long step = 0;
  for (const std::vector<int>& indices : epoch_index_batches(dataset, batch_size, rng_seed)) {
    out.push_back(make_batch(dataset, indices, step++));
  }
  return out;
}

ImageBatch random_hflip(const ImageBatch& batch, double p, uint64_t rng_seed) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("random_hflip: p must be in [0, 1]");
  ImageBatch out = batch;
  Rng rng(rng_seed);
  for (int b = 0; b < batch.size(); ++b) {
    if (!rng.bernoulli(p)) continue;
    float* img = out.pixels.data() + size_t(b) * kImagePixels;
    for (int c = 0; c < kImageChannels; ++c) {
      float* plane = img + c * kImageSide * kImageSide;
      for (int row = 0; row < kImageSide; ++row) {
        float* line = plane + row * kImageSide;
        for (int col = 0; col < kImageSide / 2; ++col) {
          std::swap(line[col], line[kImageSide - 1 - col]);
        }
      }
    }
  }
  return out;
}

}  // namespace herdkit
