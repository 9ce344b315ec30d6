#pragma once

// Synthetic phantom volumes, image-domain low-dose simulation, the .pvol
// container, intensity normalization, per-slice samples and the negative set.

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "c2f/guidance.hpp"
#include "c2f/random.hpp"
#include "c2f/tensor.hpp"

namespace c2f {

struct VolumeMeta {
  std::string role;  // "spet", "lpet", "rpet", "sd"
  std::string subject_id;
  double drf = 1.0;
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
};

struct PairedVolume {
  Volume spet;
  Volume lpet;
  std::string subject_id;
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
  double drf = 1.0;

  /// Identical shapes, finite values, drf >= 1. Throws DataError.
  void validate() const;
};

/// Ellipsoids on a low background plus small bright spheres, smoothed and
/// clipped to [0, 1]. Each dimension must be a positive multiple of 8.
Volume generate_phantom(Rng& rng, int depth, int height, int width);

/// Separable Gaussian blur along all three axes with edge replication.
Volume gaussian_blur3d(const Volume& v, double sigma);

struct LowDoseOptions {
  double counts = 1e4;        // expected counts at unit intensity, full dose
  double blur_sigma = 1.0;    // voxels; 0 disables the blur
};

/// Poisson counts at C * x / drf, rescaled by drf / C, blurred and clipped.
Volume simulate_lpet(const Volume& spet, double drf, Rng& rng, const LowDoseOptions& opt = {});

// .pvol: one line of JSON header, '\n', then little-endian float32 voxels in
// z-major order.
void save_volume(const std::filesystem::path& path, const Volume& v, const VolumeMeta& meta);
Volume load_volume(const std::filesystem::path& path, VolumeMeta* meta = nullptr);

enum class NormalizeMode { unit_range_to_signed };

/// x -> scale * x + offset.
struct AffineMap {
  double scale = 1.0;
  double offset = 0.0;

  template <class Derived>
  auto apply(const Eigen::ArrayBase<Derived>& x) const {
    using S = typename Derived::Scalar;
    return x * S(scale) + S(offset);
  }
  template <class Derived>
  auto invert(const Eigen::ArrayBase<Derived>& y) const {
    using S = typename Derived::Scalar;
    return (y - S(offset)) / S(scale);
  }
};

inline AffineMap signed_range_map() { return {2.0, -1.0}; }

/// Maps a [0, 1] volume to [-1, 1]. Throws DataError for values outside [0, 1].
Volume normalize(const Volume& v, NormalizeMode mode, AffineMap* inverse = nullptr);
Volume denormalize(const Volume& v, const AffineMap& map);

/// One axial slice with its guidance (from LPET) and guidance target (from SPET).
struct SliceSample {
  Tensor<float> lpet;  // [1, H, W], [0, 1]
  Tensor<float> spet;
  GuidanceBundle guidance;
  GuidanceBundle guidance_target;
  std::string subject_id;
  int z = 0;
};

SliceSample make_slice_sample(const PairedVolume& pair, int z, const GuidanceConfig& cfg);

/// Network-side condition c in the normalized range: LPET and NAS mapped to
/// [-1, 1], spectrum kept in [0, 1]. pyramid[k-1] stacks the enabled guidance
/// channels at level k, in the same order as the input channels.
struct ConditionInput {
  Tensor<float> channels;  // [1 + aux, H, W]
  std::vector<Tensor<float>> pyramid;
};

ConditionInput make_condition(const Tensor<float>& lpet_slice, const GuidanceBundle& guidance,
                              const GuidanceConfig& cfg);

/// Guidance targets at each level, split into the NAS and spectrum parts and
/// mapped like the inputs. Disabled parts are left empty.
struct GuidanceTargets {
  std::vector<Tensor<float>> nas;
  std::vector<Tensor<float>> spectrum;
};

GuidanceTargets make_guidance_targets(const GuidanceBundle& target, const GuidanceConfig& cfg);

struct NegativeSet {
  std::vector<Tensor<float>> slices;  // [1, H, W], [0, 1]
  std::vector<std::string> subject_ids;

  std::size_t size() const { return slices.size(); }
};

/// N SPET slices from N distinct subjects outside batch_subjects, each at a
/// uniformly drawn z. Throws DataError when fewer than N subjects qualify.
NegativeSet build_negative_set(const std::vector<const PairedVolume*>& pool,
                               const std::set<std::string>& batch_subjects, int n, Rng& rng);

// ---- dataset on disk ----

struct SubjectEntry {
  std::string id;
  std::string split;  // "train" or "eval"
  std::string spet_file;
  std::string lpet_file;
};

struct GenerateOptions {
  int n_subjects = 20;
  std::array<int, 3> size{64, 64, 64};
  double drf = 100.0;
  std::uint64_t seed = 0;
  double eval_fraction = 0.2;
  LowDoseOptions low_dose;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<SubjectEntry> subjects;
  std::array<int, 3> size{0, 0, 0};
  double drf = 1.0;

  static Dataset open(const std::filesystem::path& dir);
  std::vector<std::string> ids(const std::string& split) const;
  const SubjectEntry& entry(const std::string& id) const;
  PairedVolume load(const std::string& id) const;
};

std::string subject_name(int index);

/// Writes subj_XXX.spet.pvol / subj_XXX.lpet.pvol for every subject and
/// manifest.json with a by-subject train/eval split.
Dataset generate_dataset(const std::filesystem::path& dir, const GenerateOptions& opt);

}  // namespace c2f
