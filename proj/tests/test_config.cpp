#include <fstream>

#include "c2f/config.hpp"
#include "doctest.h"

using namespace c2f;
using nlohmann::json;

TEST_CASE("defaults follow the published hyperparameters") {
  RunConfig c;
  c.validate();
  CHECK(c.losses.weights.m == 1.0);
  CHECK(c.losses.weights.n == 1.0);
  CHECK(c.losses.weights.k == 5e-5);
  CHECK(c.losses.n_negatives == 10);
  CHECK(c.schedule.steps == 2000);
  CHECK(c.sample.n_inference_steps == 10);
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.train.batch_size == 4);
  CHECK(c.guidance().n_neighbors == 4);
  CHECK(c.guidance().pyramid_levels == 3);
  CHECK(c.data.drf == 100.0);
}

TEST_CASE("json round trip and partial documents") {
  RunConfig c;
  c.seed = 42;
  c.losses.weights.k = 1e-3;
  c.model.denoiser.base_channels = 12;
  RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  RunConfig partial = RunConfig::from_json(json::parse(R"({"train": {"iterations": 50}})"));
  CHECK(partial.train.iterations == 50);
  CHECK(partial.train.batch_size == 4);
}

TEST_CASE("unknown keys, type mismatches and invalid values are config errors") {
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"trian": {}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train": {"iters": 3}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train": {"iterations": "many"}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train": {"batch_size": 2.5}})")), ConfigError);
  CHECK(RunConfig::from_json(json::parse(R"({"train": {"batch_size": 2.0}})")).train.batch_size == 2);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"losses": {"weights": {"k": -1}}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"sample": {"n_inference_steps": 3000}})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"data": {"size": [64, 60, 64]}})")), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "c2f_bad_config.json";
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(RunConfig::load(path), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/c2f.json"), ConfigError);
}

TEST_CASE("dotted overrides") {
  json tree = RunConfig().to_json();
  apply_override(tree, "train.iterations", "123");
  apply_override(tree, "weights.k", "0.001");
  apply_override(tree, "losses.detach_residual", "true");
  apply_override(tree, "data.dir", "/tmp/x");
  apply_override(tree, "networks.coarse.channel_multipliers", "[1, 2]");
  RunConfig c = RunConfig::from_json(tree);
  CHECK(c.train.iterations == 123);
  CHECK(c.losses.weights.k == 0.001);
  CHECK(c.losses.detach_residual);
  CHECK(c.data.dir == "/tmp/x");
  CHECK(c.model.coarse.channel_multipliers == std::vector<int>{1, 2});

  CHECK_THROWS_AS(apply_override(tree, "train.nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "train.iterations", "ten"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "train", "1"), ConfigError);
}

TEST_CASE("ablation variants add one component at a time") {
  RunConfig base;
  CHECK(all_variants().size() == 6);
  for (auto v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("everything"), ConfigError);

  auto a = apply_variant(base, AblationVariant::baseline_direct);
  auto b = apply_variant(base, AblationVariant::cpm_only);
  auto c = apply_variant(base, AblationVariant::cpm_irm);
  auto d = apply_variant(base, AblationVariant::plus_nas);
  auto e = apply_variant(base, AblationVariant::plus_spectrum);
  auto f = apply_variant(base, AblationVariant::plus_contrastive);

  CHECK_FALSE(a.model.use_cpm);
  CHECK(a.model.use_irm);
  CHECK(a.model.denoiser.base_channels == base.model.coarse.base_channels);
  CHECK(b.model.use_cpm);
  CHECK_FALSE(b.model.use_irm);
  CHECK(c.model.use_cpm);
  CHECK(c.model.use_irm);
  CHECK_FALSE(c.guidance().use_nas);
  CHECK_FALSE(c.guidance().use_spectrum);
  CHECK(c.losses.weights.m == 0.0);
  CHECK(c.losses.weights.k == 0.0);
  CHECK(d.guidance().use_nas);
  CHECK_FALSE(d.guidance().use_spectrum);
  CHECK(d.losses.weights.m == 1.0);
  CHECK(d.losses.weights.n == 0.0);
  CHECK(e.guidance().use_spectrum);
  CHECK(e.losses.weights.k == 0.0);
  CHECK(f.losses.weights.k == 5e-5);
  CHECK(f.to_json() == base.to_json());
  for (const auto* v : {&a, &b, &c, &d, &e, &f}) v->validate();
}

TEST_CASE("learning rate decay") {
  TrainConfig t;
  t.iterations = 100;
  t.learning_rate = 1e-3;
  CHECK(learning_rate_at(t, 0) == 1e-3);
  CHECK(learning_rate_at(t, 99) == 1e-3);
  t.lr_decay_start = 0.5;
  CHECK(learning_rate_at(t, 49) == 1e-3);
  CHECK(learning_rate_at(t, 50) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(t, 75) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(t, 99) == doctest::Approx(2e-5));
  for (long s = 1; s < 100; ++s) CHECK(learning_rate_at(t, s) <= learning_rate_at(t, s - 1));
  RunConfig c;
  c.train.lr_decay_start = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
