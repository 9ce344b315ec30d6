#pragma once

// Run configuration: one JSON document with sections data, guidance,
// networks, losses, schedule, train and sample. Every key can be overridden
// from the command line as --section.key value.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "c2f/diffusion.hpp"
#include "c2f/losses.hpp"
#include "c2f/networks.hpp"
#include "json.hpp"

namespace c2f {

struct DataConfig {
  std::string dir = "data";
  int n_subjects = 20;
  std::array<int, 3> size{64, 64, 64};
  double drf = 100.0;
  double eval_fraction = 0.2;
  double counts = 1e4;
  double blur_sigma = 1.0;
};

struct LossConfig {
  LossWeights weights;
  int n_negatives = 10;
  bool detach_residual = false;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 2000;
  double beta_start = 1e-6;
  double beta_end = 0.01;

  NoiseSchedule build() const { return make_schedule(kind, steps, beta_start, beta_end); }
};

struct TrainConfig {
  long iterations = 20000;
  int batch_size = 4;
  double learning_rate = 1e-4;
  double lr_decay_start = 1.0;   // fraction of iterations; linear decay to 0 after it, 1 = constant
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  long checkpoint_every = 1000;  // 0: only the final checkpoint
  long eval_every = 1000;        // 0: no periodic evaluation
  int eval_slices = 8;           // held-out slices per periodic evaluation
};

/// Learning rate for the step that starts at `step` (0-based).
double learning_rate_at(const TrainConfig& cfg, long step);

struct SampleConfig {
  int n_inference_steps = 10;
  int n_samples_for_ams = 1;
  int threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;  // model.guidance is the "guidance" section
  LossConfig losses;
  ScheduleConfig schedule;
  TrainConfig train;
  SampleConfig sample;

  GuidanceConfig& guidance() { return model.guidance; }
  const GuidanceConfig& guidance() const { return model.guidance; }

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys and type mismatches throw.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

/// Sets tree[a][b]... from "a.b..." with the value parsed to the type of the
/// existing entry. "weights.x" aliases "losses.weights.x".
void apply_override(nlohmann::json& tree, const std::string& dotted_key, const std::string& value);

enum class AblationVariant { baseline_direct, cpm_only, cpm_irm, plus_nas, plus_spectrum, plus_contrastive };

AblationVariant parse_variant(const std::string& name);
std::string variant_name(AblationVariant v);
const std::vector<AblationVariant>& all_variants();

/// Enables the components of one ablation row on top of a base config. The
/// base config's loss weights are used for whichever terms are enabled.
RunConfig apply_variant(const RunConfig& base, AblationVariant v);

}  // namespace c2f
