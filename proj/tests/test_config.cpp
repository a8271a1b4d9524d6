#include <stdexcept>
#include <string>

#include "doctest.h"
#include "herdkit/config.hpp"

using namespace herdkit;

namespace {

ExperimentConfig valid_config() {
  ExperimentConfig cfg;
  cfg.dataset_dir = "/tmp/does-not-matter";
  return cfg;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults validate once a dataset dir is present") {
  ExperimentConfig cfg = valid_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.num_peers == 16);
  CHECK(cfg.num_teachers == 1);
  CHECK(cfg.loss_kind == LossKind::salient);
  CHECK(cfg.optimizer_kind == OptimizerKind::adam);
  CHECK(cfg.learning_rate == doctest::Approx(1e-8));
  CHECK(cfg.batch_size == 512);
  CHECK(cfg.epochs == 10);
  CHECK(cfg.probe_config.knn_k == 5);
  CHECK(cfg.probe_config.probe_epochs == 20);
  CHECK(cfg.probe_config.probe_lr == doctest::Approx(0.01));
}

TEST_CASE("validation rejects each broken field") {
  auto broken = [](auto mutate) {
    ExperimentConfig cfg;
    cfg.dataset_dir = "/tmp/x";
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(broken([](auto& c) { c.num_peers = 1; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.num_teachers = 0; }).validate(), std::invalid_argument);
  // teachers + student must fit in the pool
  CHECK_THROWS_AS(broken([](auto& c) { c.num_peers = 3; c.num_teachers = 3; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.learning_rate = 0.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.learning_rate = -1e-8; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.batch_size = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.epochs = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.eval_every_batches = -1; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.train_subset_size = -5; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.dataset_dir = ""; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.probe_config.knn_k = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.probe_config.mlp_hidden = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](auto& c) { c.probe_config.probe_lr = 0.0; }).validate(),
                  std::invalid_argument);
}

TEST_CASE("enum round trips and unknown names throw") {
  CHECK(loss_kind_from_string("salient") == LossKind::salient);
  CHECK(to_string(LossKind::cosine) == "cosine");
  CHECK(optimizer_kind_from_string("adamw") == OptimizerKind::adamw);
  CHECK(to_string(OptimizerKind::sgd) == "sgd");
  CHECK(arch_id_from_string("simple_cnn") == ArchId::simple_cnn);
  CHECK_THROWS_AS(loss_kind_from_string("l2"), std::invalid_argument);
  CHECK_THROWS_AS(optimizer_kind_from_string("rmsprop"), std::invalid_argument);
  CHECK_THROWS_AS(arch_id_from_string("resnet18"), std::invalid_argument);
}

TEST_CASE("parser reads key = value lines with comments and quotes") {
  const std::string text =
      "# experiment\n"
      "num_peers = 4\n"
      "learning_rate = 1e-6   # small\n"
      "loss_kind = \"cosine\"\n"
      "dataset_dir = '/data/cifar'\n"
      "\n"
      "master_seed = 99\n";
  ExperimentConfig cfg = load_config(text);
  CHECK(cfg.num_peers == 4);
  CHECK(cfg.learning_rate == doctest::Approx(1e-6));
  CHECK(cfg.loss_kind == LossKind::cosine);
  CHECK(cfg.dataset_dir == "/data/cifar");
  CHECK(cfg.master_seed == 99);
  // untouched fields keep defaults
  CHECK(cfg.batch_size == 512);
}

TEST_CASE("parser reports the offending line") {
  try {
    load_config("num_peers = 4\nbogus_key = 1\n");
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("bogus_key") != std::string::npos);
  }
}

TEST_CASE("parser rejects malformed and duplicate entries") {
  CHECK_THROWS_AS(load_config("num_peers 4\n"), std::runtime_error);
  CHECK_THROWS_AS(load_config("= 4\n"), std::runtime_error);
  CHECK_THROWS_AS(load_config("num_peers =\n"), std::runtime_error);
  CHECK_THROWS_AS(load_config("num_peers = 4\nnum_peers = 8\n"), std::runtime_error);
  CHECK_THROWS_AS(load_config("num_peers = four\n"), std::runtime_error);
  CHECK_THROWS_AS(load_config("learning_rate = fast\n"), std::runtime_error);
}

TEST_CASE("serialize round trips every field") {
  ExperimentConfig cfg = valid_config();
  cfg.num_peers = 7;
  cfg.num_teachers = 3;
  cfg.loss_kind = LossKind::mse;
  cfg.optimizer_kind = OptimizerKind::adamw;
  cfg.learning_rate = 3.25e-7;
  cfg.batch_size = 33;
  cfg.epochs = 2;
  cfg.master_seed = 123456789;
  cfg.eval_every_batches = 50;
  cfg.train_subset_size = 10000;
  cfg.output_dir = "/tmp/run with space";
  cfg.probe_config.knn_k = 3;
  cfg.probe_config.probe_epochs = 5;
  cfg.probe_config.probe_lr = 0.02;
  cfg.probe_config.probe_batch_size = 64;
  cfg.probe_config.mlp_hidden = 128;
  cfg.probe_config.fit_subset = 2000;
  cfg.probe_config.test_subset = 1000;

  ExperimentConfig back = load_config(serialize(cfg));
  CHECK(back.num_peers == cfg.num_peers);
  CHECK(back.num_teachers == cfg.num_teachers);
  CHECK(back.loss_kind == cfg.loss_kind);
  CHECK(back.optimizer_kind == cfg.optimizer_kind);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.master_seed == cfg.master_seed);
  CHECK(back.eval_every_batches == cfg.eval_every_batches);
  CHECK(back.train_subset_size == cfg.train_subset_size);
  CHECK(back.dataset_dir == cfg.dataset_dir);
  CHECK(back.output_dir == cfg.output_dir);
  CHECK(back.probe_config.knn_k == cfg.probe_config.knn_k);
  CHECK(back.probe_config.probe_epochs == cfg.probe_config.probe_epochs);
  CHECK(back.probe_config.probe_lr == cfg.probe_config.probe_lr);
  CHECK(back.probe_config.probe_batch_size == cfg.probe_config.probe_batch_size);
  CHECK(back.probe_config.mlp_hidden == cfg.probe_config.mlp_hidden);
  CHECK(back.probe_config.fit_subset == cfg.probe_config.fit_subset);
  CHECK(back.probe_config.test_subset == cfg.probe_config.test_subset);
}

TEST_CASE("overrides apply after file values and validate syntax") {
  ExperimentConfig cfg = valid_config();
  apply_overrides(cfg, {"learning_rate=1e-4", "num_peers=8", "loss_kind=mse"});
  CHECK(cfg.learning_rate == doctest::Approx(1e-4));
  CHECK(cfg.num_peers == 8);
  CHECK(cfg.loss_kind == LossKind::mse);
  CHECK_THROWS_AS(apply_overrides(cfg, {"nonsense"}), std::runtime_error);
  CHECK_THROWS_AS(apply_overrides(cfg, {"mystery_key=1"}), std::runtime_error);
}

}  // TEST_SUITE
