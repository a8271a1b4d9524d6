#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "herdkit/herd.hpp"
#include "herdkit/probes.hpp"

using namespace herdkit;
namespace fs = std::filesystem;

namespace {

// Small synthetic dataset on disk (canonical record format).
struct TempDataset {
  fs::path dir;
  explicit TempDataset(const std::string& name, int records_per_file) {
    dir = fs::temp_directory_path() / name;
    fs::create_directories(dir);
    Rng rng(777);
    auto write = [&](const std::string& file) {
      std::ofstream out(dir / file, std::ios::binary);
      for (int r = 0; r < records_per_file; ++r) {
        out.put(char(rng.uniform_below(10)));
        for (int j = 0; j < kImagePixels; ++j) out.put(char(rng.uniform_below(256)));
      }
    };
    for (int f = 1; f <= 5; ++f) write("data_batch_" + std::to_string(f) + ".bin");
    write("test_batch.bin");
  }
  ~TempDataset() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

std::vector<float> full_state(Model<float>& m) {
  std::vector<float> out;
  for (const auto& t : all_tensors(m)) out.insert(out.end(), t.data->begin(), t.data->end());
  return out;
}

}  // namespace

TEST_SUITE("extraction") {

TEST_CASE("extract_embeddings shapes, subsetting and concatenation order") {
  TempDataset data("herdkit_extract_basic", 6);
  Dataset train = load_cifar10(data.dir.string(), Split::train);  // 30 records

  auto m1 = init_model<float>(ArchId::simple_cnn, 1);
  auto m2 = init_model<float>(ArchId::simple_cnn, 2);

  EmbeddingTable solo = extract_embeddings(m1, train, 10);
  CHECK(solo.size() == 10);
  CHECK(solo.dim == 16384);
  CHECK(solo.source_peer_ids == std::vector<int>{0});
  CHECK(solo.labels == std::vector<int>(train.labels.begin(), train.labels.begin() + 10));

  EmbeddingTable both = extract_embeddings({&m1, &m2}, train, 10);
  CHECK(both.dim == 32768);
  // first 16384 columns equal the single-model extraction
  for (int r = 0; r < 10; ++r) {
    CHECK(std::memcmp(both.row(r), solo.row(r), 16384 * sizeof(float)) == 0);
  }
  // second half equals model 2's own extraction
  EmbeddingTable solo2 = extract_embeddings(m2, train, 10);
  for (int r = 0; r < 10; ++r) {
    CHECK(std::memcmp(both.row(r) + 16384, solo2.row(r), 16384 * sizeof(float)) == 0);
  }

  // repeat extraction is bit-identical
  EmbeddingTable again = extract_embeddings(m1, train, 10);
  CHECK(again.features == solo.features);

  // subset 0 means everything
  CHECK(extract_embeddings(m1, train).size() == 30);
}

TEST_CASE("concat_features matches multi-model extraction") {
  TempDataset data("herdkit_concat", 4);
  Dataset train = load_cifar10(data.dir.string(), Split::train);
  auto m1 = init_model<float>(ArchId::simple_cnn, 21);
  auto m2 = init_model<float>(ArchId::simple_cnn, 22);

  EmbeddingTable t1 = extract_embeddings(m1, train, 8);
  EmbeddingTable t2 = extract_embeddings(m2, train, 8);
  EmbeddingTable spliced = concat_features({&t1, &t2});
  EmbeddingTable joint = extract_embeddings({&m1, &m2}, train, 8);
  CHECK(spliced.dim == joint.dim);
  CHECK(spliced.labels == joint.labels);
  CHECK(spliced.features == joint.features);

  EmbeddingTable mismatched = t2;
  mismatched.labels[0] = (mismatched.labels[0] + 1) % 10;
  CHECK_THROWS_AS(concat_features({&t1, &mismatched}), std::invalid_argument);
  CHECK_THROWS_AS(concat_features({}), std::invalid_argument);
}

TEST_CASE("extract_embeddings_at honors an explicit index list") {
  TempDataset data("herdkit_extract_at", 5);
  Dataset test = load_cifar10(data.dir.string(), Split::test);
  auto model = init_model<float>(ArchId::simple_cnn, 3);

  EmbeddingTable all = extract_embeddings(model, test);
  EmbeddingTable picked = extract_embeddings_at(model, test, {4, 0, 2});
  REQUIRE(picked.size() == 3);
  CHECK(picked.labels[0] == test.labels[4]);
  CHECK(picked.labels[2] == test.labels[2]);
  CHECK(std::memcmp(picked.row(0), all.row(4), 16384 * sizeof(float)) == 0);
  CHECK(std::memcmp(picked.row(1), all.row(0), 16384 * sizeof(float)) == 0);
}

TEST_CASE("probing leaves the pool bit-identical and the hook is deterministic") {
  TempDataset data("herdkit_hook_iso", 8);  // 40 train / 8 test
  Dataset train = load_cifar10(data.dir.string(), Split::train);
  Dataset test = load_cifar10(data.dir.string(), Split::test);

  ExperimentConfig cfg;
  cfg.num_peers = 2;
  cfg.dataset_dir = data.dir.string();
  cfg.master_seed = 5;
  cfg.probe_config.fit_subset = 40;
  cfg.probe_config.test_subset = 8;
  cfg.probe_config.probe_epochs = 3;
  cfg.probe_config.probe_batch_size = 16;

  PeerPool pool = make_pool(cfg);
  std::vector<std::vector<float>> before;
  for (auto& p : pool.peers) before.push_back(full_state(p));

  MetricsLog log1, log2;
  std::ostringstream csv1, csv2;
  evaluation_hook(pool.peers, 0, cfg, train, test, log1, &csv1);
  evaluation_hook(pool.peers, 0, cfg, train, test, log2, &csv2);

  for (size_t i = 0; i < pool.peers.size(); ++i) {
    CHECK(full_state(pool.peers[i]) == before[i]);
  }

  // two rows per peer (f1 + acc)
  REQUIRE(log1.rows().size() == 4);
  CHECK(log1.rows()[0].metric_name == "linear_f1");
  CHECK(log1.rows()[1].metric_name == "linear_acc");
  CHECK(log1.rows()[0].peer_id == "0");
  CHECK(log1.rows()[2].peer_id == "1");
  for (size_t i = 0; i < log1.rows().size(); ++i) CHECK(log1.rows()[i] == log2.rows()[i]);
  CHECK(csv1.str() == csv2.str());
  CHECK(csv1.str().find("0,0,linear,") == 0);
}

}  // TEST_SUITE
