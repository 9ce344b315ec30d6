#pragma once

// Joint training of the coarse predictor and the refinement network, and
// slice-wise reconstruction with averaged multiple sampling.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/metrics.hpp"
#include "c2f/objective.hpp"

namespace c2f {

struct AdamState {
  std::vector<Mat<float>> m;
  std::vector<Mat<float>> v;
  long t = 0;
};

/// One Adam update of params from grads (bias-corrected).
void adam_update(std::vector<Mat<float>>& params, const std::vector<Mat<float>>& grads, AdamState& state,
                 const TrainConfig& cfg);

struct Checkpoint {
  RunConfig config;
  long step = 0;
  NoiseSchedule schedule;
  std::vector<std::string> names;
  std::vector<Mat<float>> params;
  AdamState adam;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws FormatError for a corrupt file or an unsupported version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Network weights plus everything needed to sample from them.
struct Model {
  RunConfig config;
  NoiseSchedule schedule;
  Networks<float> nets;

  static Model from_checkpoint(const Checkpoint& ck);
};

struct TrainObserver {
  std::function<void(long step, const LossRecord&)> on_step;
  std::function<void(long step)> on_checkpoint;
  std::function<void(long step)> on_eval;
};

/// Owns the networks and the optimizer. Every random draw of step s is keyed
/// by (seed, purpose, s), so a run resumed from a checkpoint reproduces the
/// uninterrupted loss trace.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<PairedVolume> train);
  /// Continues from a checkpoint. Throws ConfigError if cfg's architecture
  /// differs from the checkpoint's.
  Trainer(const Checkpoint& ck, const RunConfig& cfg, std::vector<PairedVolume> train);

  /// Runs step() + 1 and returns the batch-averaged loss terms.
  LossRecord train_step();
  /// Steps until `until` (inclusive), notifying the observer.
  void run(long until, const TrainObserver& obs = {});

  long step() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  Networks<float>& networks() { return nets_; }
  const Networks<float>& networks() const { return nets_; }
  const AdamState& adam() const { return adam_; }

  Checkpoint checkpoint() const;

 private:
  void check_pool() const;

  RunConfig cfg_;
  NoiseSchedule schedule_;
  Networks<float> nets_;
  AdamState adam_;
  std::vector<PairedVolume> train_;
  long step_ = 0;
};

/// y' = x_cp + r0', all [1, H, W] in the normalized range.
struct SliceReconstruction {
  Tensor<float> y;
  Tensor<float> r0;
  Tensor<float> x_cp;
};

/// One coarse pass, then n reverse steps from r_T ~ N(0, I).
SliceReconstruction reconstruct_slice(const Networks<float>& nets, const ConditionInput& c,
                                      const NoiseSchedule& inference, Rng& rng);

struct ReconstructOptions {
  int n_steps = 10;
  int n_samples = 1;
  int threads = 1;
  std::uint64_t seed = 0;
  bool keep_samples = false;
};

struct VolumeReconstruction {
  Volume rpet;                  // AMS mean, [0, 1]
  Volume sd;                    // per-voxel population SD over samples, [0, 1] units
  std::vector<Volume> samples;  // when keep_samples
};

/// Per-slice AMS in [0, 1]: the coarse prediction and guidance features are
/// computed once and shared by the n_samples chains; sample i of slice z uses
/// seed derive_seed(seed, "sample", {hash(subject), z, i}).
struct SliceAms {
  Tensor<float> mean;
  Tensor<float> sd;
  std::vector<Tensor<float>> samples;
};

SliceAms reconstruct_slice_ams(const Networks<float>& nets, const Volume& lpet, int z, const NoiseSchedule& train,
                               const GuidanceConfig& gcfg, const ReconstructOptions& opt,
                               const std::string& subject_id);

VolumeReconstruction reconstruct_volume(const Volume& lpet, const Networks<float>& nets, const NoiseSchedule& train,
                                        const GuidanceConfig& gcfg, const ReconstructOptions& opt,
                                        const std::string& subject_id);

struct VolumeEvaluation {
  std::string subject_id;
  MetricReport rpet;
  MetricReport lpet;
  double sd_mean = 0.0;
};

struct EvaluationSummary {
  std::vector<VolumeEvaluation> volumes;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
  double lpet_psnr_db = 0.0;
  double lpet_ssim = 0.0;
  double lpet_nmse = 0.0;
  double sd_mean = 0.0;
};

/// Reconstructs and scores each pair; means are over volumes.
EvaluationSummary evaluate_model(const Model& model, const std::vector<PairedVolume>& pairs,
                                 const ReconstructOptions& opt);

/// Cheaper held-out check: n_per_volume evenly spaced slices of each volume.
struct SliceScore {
  std::string subject_id;
  int z = 0;
  SliceMetrics rpet;
  SliceMetrics lpet;
  double sd_mean = 0.0;
};

struct SliceEvaluation {
  std::vector<SliceScore> slices;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
  double lpet_psnr_db = 0.0;
  double lpet_ssim = 0.0;
  double lpet_nmse = 0.0;
  double sd_mean = 0.0;
};

SliceEvaluation evaluate_slices(const Model& model, const std::vector<PairedVolume>& pairs, int n_per_volume,
                                const ReconstructOptions& opt);

ReconstructOptions reconstruct_options(const RunConfig& cfg);

void write_json_line(std::ostream& out, const nlohmann::json& record);

}  // namespace c2f
