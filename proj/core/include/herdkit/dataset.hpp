#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace herdkit {

inline constexpr int kImageChannels = 3;
inline constexpr int kImageSide = 32;
inline constexpr int kImagePixels = kImageChannels * kImageSide * kImageSide;  // 3072
inline constexpr int kRecordBytes = 1 + kImagePixels;                          // 3073
inline constexpr int kNumClasses = 10;

enum class Split { train, test };

std::string to_string(Split split);

// Raw 8-bit pixel store, one record per image in canonical file order.
// Pixel layout per image: 1024 red, 1024 green, 1024 blue bytes, row-major.
struct Dataset {
  std::vector<uint8_t> images;  // size() == labels.size() * kImagePixels
  std::vector<int> labels;      // values 0..9
  Split split = Split::train;

  int size() const { return static_cast<int>(labels.size()); }
  const uint8_t* image(int index) const { return images.data() + size_t(index) * kImagePixels; }

  // First k records of the canonical order (desk-scale truncation).
  Dataset head(int k) const;

  // Per-class record counts; 5000 (train) / 1000 (test) each for full files.
  std::array<int, kNumClasses> label_histogram() const;
};

// One training/evaluation batch with pixels already normalized to [0,1].
struct ImageBatch {
  std::vector<float> pixels;  // B x 3 x 32 x 32, image-major
  std::vector<int> labels;
  long step_id = 0;

  int size() const { return static_cast<int>(labels.size()); }
};

// Loads the canonical binary files (data_batch_1..5.bin or test_batch.bin)
// from dataset_dir. Each 3073-byte record is 1 label byte + 3072 pixel bytes;
// record order is preserved. Throws std::runtime_error on a missing file, a
// file whose length is not a multiple of 3073, or a label byte > 9.
Dataset load_cifar10(const std::string& dataset_dir, Split split);

// byte / 255.0, the only pixel scaling applied anywhere.
inline float normalize(uint8_t byte) { return static_cast<float>(byte) * (1.0f / 255.0f); }

// Materializes the given records as a normalized batch.
ImageBatch make_batch(const Dataset& dataset, const std::vector<int>& indices, long step_id = 0);

// A seeded permutation of all indices, chunked into batches; the final short
// batch is retained. The same seed reproduces the same sequence exactly.
// Throws std::invalid_argument on batch_size < 1 or an empty dataset.
std::vector<std::vector<int>> epoch_index_batches(const Dataset& dataset, int batch_size,
                                                  uint64_t rng_seed);

// Same plan, but with every batch materialized up front. Convenient for small
// datasets; large runs should materialize batches one at a time.
std::vector<ImageBatch> epoch_batches(const Dataset& dataset, int batch_size, uint64_t rng_seed);

// Mirrors each image independently (column c <-> column 31-c, all channels)
// with probability p. This single view is what both student and teachers see.
// Throws std::invalid_argument unless 0 <= p <= 1.
ImageBatch random_hflip(const ImageBatch& batch, double p, uint64_t rng_seed);

}  // namespace herdkit
