#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "c2f/data.hpp"
#include "c2f/log.hpp"
#include "json.hpp"

namespace c2f {

namespace fs = std::filesystem;
using nlohmann::json;

void PairedVolume::validate() const {
  if (spet.empty() || lpet.empty()) throw DataError(subject_id + ": empty volume");
  if (!spet.same_shape(lpet)) throw DataError(subject_id + ": SPET and LPET shapes differ");
  if (!spet.voxels.allFinite() || !lpet.voxels.allFinite()) throw DataError(subject_id + ": non-finite voxels");
  if (!(drf >= 1.0)) throw DataError(subject_id + ": drf must be >= 1");
}

namespace {

Eigen::VectorXd gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  Eigen::VectorXd k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  return k / k.sum();
}

// Convolve along one axis with clamped indices. stride/len describe the axis.
void blur_axis(const Volume& src, Volume& dst, const Eigen::VectorXd& k, int axis) {
  const int r = static_cast<int>(k.size() / 2);
  const int D = src.depth, H = src.height, W = src.width;
  const int len = axis == 0 ? D : axis == 1 ? H : W;
  for (int z = 0; z < D; ++z) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int pos = axis == 0 ? z : axis == 1 ? y : x;
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int p = std::clamp(pos + i, 0, len - 1);
          const float v = axis == 0 ? src.at(p, y, x) : axis == 1 ? src.at(z, p, x) : src.at(z, y, p);
          acc += k[i + r] * v;
        }
        dst.at(z, y, x) = static_cast<float>(acc);
      }
    }
  }
}

void check_unit_range(const Volume& v, const char* who) {
  if (!v.voxels.allFinite()) throw DataError(std::string(who) + ": non-finite voxels");
  if (v.voxels.minCoeff() < 0.0f || v.voxels.maxCoeff() > 1.0f) {
    throw DataError(std::string(who) + ": values must lie in [0, 1]");
  }
}

}  // namespace

Volume gaussian_blur3d(const Volume& v, double sigma) {
  if (sigma <= 0.0) return v;
  const Eigen::VectorXd k = gaussian_kernel(sigma);
  Volume a(v.depth, v.height, v.width), b(v.depth, v.height, v.width);
  blur_axis(v, a, k, 2);
  blur_axis(a, b, k, 1);
  blur_axis(b, a, k, 0);
  return a;
}

Volume generate_phantom(Rng& rng, int depth, int height, int width) {
  if (depth < 1 || height < 8 || width < 8 || height % 8 || width % 8) {
    throw ParameterError("phantom size " + shape_string(depth, height, width) +
                         ": need depth >= 1 and height, width positive multiples of 8");
  }
  Volume v(depth, height, width);
  v.voxels.setConstant(0.02f);
  const double dims[3] = {double(depth), double(height), double(width)};

  struct Ellipsoid {
    double c[3], a[3], cos_t, sin_t, value;
  };
  const long n_ell = rng.uniform_int(3, 8);
  std::vector<Ellipsoid> shapes;
  for (long i = 0; i < n_ell; ++i) {
    Ellipsoid e{};
    // The first ellipsoid is the body outline; later ones are organs inside it.
    const double lo = i == 0 ? 0.30 : 0.08, hi = i == 0 ? 0.45 : 0.25;
    for (int d = 0; d < 3; ++d) {
      e.c[d] = dims[d] * (i == 0 ? 0.5 + rng.uniform(-0.05, 0.05) : rng.uniform(0.3, 0.7));
      e.a[d] = dims[d] * rng.uniform(lo, hi);
    }
    const double theta = rng.uniform(0.0, std::numbers::pi);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    e.value = i == 0 ? rng.uniform(0.2, 0.35) : rng.uniform(0.2, 1.0);
    shapes.push_back(e);
  }
  for (const auto& e : shapes) {
    for (int z = 0; z < depth; ++z) {
      const double dz = (z + 0.5 - e.c[0]) / e.a[0];
      if (dz * dz > 1.0) continue;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double py = y + 0.5 - e.c[1], px = x + 0.5 - e.c[2];
          const double ry = (e.cos_t * py - e.sin_t * px) / e.a[1];
          const double rx = (e.sin_t * py + e.cos_t * px) / e.a[2];
          if (dz * dz + ry * ry + rx * rx <= 1.0) v.at(z, y, x) = static_cast<float>(e.value);
        }
      }
    }
  }

  const long n_lesions = rng.uniform_int(1, 3);
  for (long i = 0; i < n_lesions; ++i) {
    double c[3];
    for (int d = 0; d < 3; ++d) c[d] = dims[d] * rng.uniform(0.3, 0.7);
    const double r = rng.uniform(2.0, 4.0);
    const float value = static_cast<float>(rng.uniform(0.8, 1.0));
    for (int z = std::max(0, int(c[0] - r - 1)); z < std::min(depth, int(c[0] + r + 2)); ++z) {
      for (int y = std::max(0, int(c[1] - r - 1)); y < std::min(height, int(c[1] + r + 2)); ++y) {
        for (int x = std::max(0, int(c[2] - r - 1)); x < std::min(width, int(c[2] + r + 2)); ++x) {
          const double dz = z + 0.5 - c[0], dy = y + 0.5 - c[1], dx = x + 0.5 - c[2];
          if (dz * dz + dy * dy + dx * dx <= r * r) v.at(z, y, x) = value;
        }
      }
    }
  }

  Volume s = gaussian_blur3d(v, 0.75);
  s.voxels = s.voxels.max(0.0f).min(1.0f);
  return s;
}

Volume simulate_lpet(const Volume& spet, double drf, Rng& rng, const LowDoseOptions& opt) {
  if (!(drf >= 1.0)) throw ParameterError("drf must be >= 1");
  if (!(opt.counts > 0.0)) throw ParameterError("count scale must be positive");
  check_unit_range(spet, "simulate_lpet");
  Volume out(spet.depth, spet.height, spet.width);
  const double expect = opt.counts / drf;
  for (Eigen::Index i = 0; i < spet.size(); ++i) {
    out.voxels[i] = static_cast<float>(static_cast<double>(rng.poisson(expect * spet.voxels[i])) / expect);
  }
  if (opt.blur_sigma > 0.0) out = gaussian_blur3d(out, opt.blur_sigma);
  out.voxels = out.voxels.max(0.0f).min(1.0f);
  return out;
}

Volume normalize(const Volume& v, NormalizeMode mode, AffineMap* inverse) {
  (void)mode;  // unit_range_to_signed is the only mode
  check_unit_range(v, "normalize");
  const AffineMap m = signed_range_map();
  Volume out = v;
  out.voxels = m.apply(v.voxels);
  if (inverse) *inverse = m;
  return out;
}

Volume denormalize(const Volume& v, const AffineMap& map) {
  Volume out = v;
  out.voxels = map.invert(v.voxels);
  return out;
}

SliceSample make_slice_sample(const PairedVolume& pair, int z, const GuidanceConfig& cfg) {
  SliceSample s;
  s.lpet = pair.lpet.slice_tensor<float>(z);
  s.spet = pair.spet.slice_tensor<float>(z);
  s.guidance = make_guidance(pair.lpet, z, cfg);
  s.guidance_target = make_guidance(pair.spet, z, cfg);
  s.subject_id = pair.subject_id;
  s.z = z;
  return s;
}

namespace {
Tensor<float> to_signed(const Tensor<float>& t) {
  Tensor<float> o = t;
  o.data.array() = signed_range_map().apply(t.data.array());
  return o;
}
}  // namespace

ConditionInput make_condition(const Tensor<float>& lpet_slice, const GuidanceBundle& g, const GuidanceConfig& cfg) {
  if (lpet_slice.channels != 1) throw ShapeError("condition: LPET slice must have one channel");
  ConditionInput c;
  std::vector<Tensor<float>> parts{to_signed(lpet_slice)};
  if (cfg.use_nas) parts.push_back(to_signed(g.nas));
  if (cfg.use_spectrum) parts.push_back(g.spectrum);
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  c.channels = concat_channels(ptrs);
  if (cfg.aux_channels() > 0) {
    for (int k = 0; k < cfg.pyramid_levels; ++k) {
      std::vector<Tensor<float>> lv;
      if (cfg.use_nas) lv.push_back(to_signed(g.nas_pyramid[static_cast<std::size_t>(k)]));
      if (cfg.use_spectrum) lv.push_back(g.spectrum_pyramid[static_cast<std::size_t>(k)]);
      std::vector<const Tensor<float>*> lp;
      for (const auto& p : lv) lp.push_back(&p);
      c.pyramid.push_back(concat_channels(lp));
    }
  }
  return c;
}

GuidanceTargets make_guidance_targets(const GuidanceBundle& target, const GuidanceConfig& cfg) {
  GuidanceTargets t;
  for (int k = 0; k < cfg.pyramid_levels; ++k) {
    if (cfg.use_nas) t.nas.push_back(to_signed(target.nas_pyramid[static_cast<std::size_t>(k)]));
    if (cfg.use_spectrum) t.spectrum.push_back(target.spectrum_pyramid[static_cast<std::size_t>(k)]);
  }
  return t;
}

NegativeSet build_negative_set(const std::vector<const PairedVolume*>& pool, const std::set<std::string>& batch_subjects,
                               int n, Rng& rng) {
  if (n < 0) throw ParameterError("negative set size must be >= 0");
  std::vector<const PairedVolume*> candidates;
  for (const PairedVolume* p : pool) {
    if (!batch_subjects.count(p->subject_id)) candidates.push_back(p);
  }
  if (static_cast<int>(candidates.size()) < n) {
    throw DataError("negative set: need " + std::to_string(n) + " subjects outside the batch but only " +
                    std::to_string(candidates.size()) + " are available; lower losses.n_negatives");
  }
  NegativeSet set;
  for (int i = 0; i < n; ++i) {
    const long j = rng.uniform_int(i, static_cast<long>(candidates.size()) - 1);
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
    const PairedVolume* p = candidates[static_cast<std::size_t>(i)];
    const int z = static_cast<int>(rng.uniform_int(0, p->spet.depth - 1));
    set.slices.push_back(p->spet.slice_tensor<float>(z));
    set.subject_ids.push_back(p->subject_id);
  }
  return set;
}

std::string subject_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subj_%03d", index);
  return buf;
}

Dataset Dataset::open(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw DataError("no dataset manifest at " + mpath.string());
  Dataset ds;
  ds.root = dir;
  try {
    const json m = json::parse(in);
    if (m.at("format") != "c2f-dataset") throw FormatError(mpath.string() + ": not a dataset manifest");
    ds.size = m.at("size").get<std::array<int, 3>>();
    ds.drf = m.at("drf").get<double>();
    for (const auto& s : m.at("subjects")) {
      SubjectEntry e{s.at("id"), s.at("split"), s.at("spet"), s.at("lpet")};
      if (e.split != "train" && e.split != "eval") throw FormatError(mpath.string() + ": bad split '" + e.split + "'");
      ds.subjects.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  return ds;
}

std::vector<std::string> Dataset::ids(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& s : subjects) {
    if (split.empty() || s.split == split) out.push_back(s.id);
  }
  return out;
}

const SubjectEntry& Dataset::entry(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return s;
  }
  throw DataError("subject '" + id + "' not in dataset " + root.string());
}

PairedVolume Dataset::load(const std::string& id) const {
  const SubjectEntry& e = entry(id);
  VolumeMeta ms, ml;
  PairedVolume p;
  p.spet = load_volume(root / e.spet_file, &ms);
  p.lpet = load_volume(root / e.lpet_file, &ml);
  p.subject_id = id;
  p.drf = ml.drf;
  p.voxel_size_mm = ms.voxel_size_mm;
  p.validate();
  return p;
}

Dataset generate_dataset(const fs::path& dir, const GenerateOptions& opt) {
  if (opt.n_subjects < 1) throw ParameterError("n_subjects must be positive");
  if (!(opt.eval_fraction >= 0.0 && opt.eval_fraction < 1.0)) throw ParameterError("eval_fraction must be in [0, 1)");
  fs::create_directories(dir);

  const int n = opt.n_subjects;
  const int n_eval = n >= 2 ? std::max(1, static_cast<int>(std::lround(n * opt.eval_fraction))) : 0;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(derive_seed(opt.seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  std::vector<bool> is_eval(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_eval; ++i) is_eval[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  Dataset ds;
  ds.root = dir;
  ds.size = opt.size;
  ds.drf = opt.drf;
  json subjects = json::array();
  for (int i = 0; i < n; ++i) {
    const std::string id = subject_name(i);
    Rng prng(derive_seed(opt.seed, "phantom", {static_cast<std::uint64_t>(i)}));
    Volume spet = generate_phantom(prng, opt.size[0], opt.size[1], opt.size[2]);
    Rng lrng(derive_seed(opt.seed, "lpet", {static_cast<std::uint64_t>(i)}));
    Volume lpet = simulate_lpet(spet, opt.drf, lrng, opt.low_dose);
    SubjectEntry e{id, is_eval[static_cast<std::size_t>(i)] ? "eval" : "train", id + ".spet.pvol", id + ".lpet.pvol"};
    save_volume(dir / e.spet_file, spet, {"spet", id, 1.0, {1.0, 1.0, 1.0}});
    save_volume(dir / e.lpet_file, lpet, {"lpet", id, opt.drf, {1.0, 1.0, 1.0}});
    subjects.push_back({{"id", e.id}, {"split", e.split}, {"spet", e.spet_file}, {"lpet", e.lpet_file}});
    ds.subjects.push_back(e);
    log_debug("generated " + id + " (" + e.split + ")");
  }
  json m;
  m["format"] = "c2f-dataset";
  m["version"] = 1;
  m["seed"] = opt.seed;
  m["drf"] = opt.drf;
  m["size"] = opt.size;
  m["counts"] = opt.low_dose.counts;
  m["blur_sigma"] = opt.low_dose.blur_sigma;
  m["subjects"] = subjects;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  return ds;
}

}  // namespace c2f
