#include <cstring>
#include <fstream>
#include <sstream>

#include "c2f/pipeline.hpp"
#include "doctest.h"
#include "tiny_model.hpp"

using namespace c2f;
namespace fs = std::filesystem;

namespace {

std::vector<PairedVolume> tiny_pairs(int n, int depth = 6, std::uint64_t seed = 1) {
  std::vector<PairedVolume> out;
  for (int i = 0; i < n; ++i) {
    Rng r(derive_seed(seed, "phantom", {static_cast<std::uint64_t>(i)}));
    PairedVolume p;
    p.spet = generate_phantom(r, depth, 16, 16);
    p.lpet = simulate_lpet(p.spet, 100, r);
    p.subject_id = subject_name(i);
    p.drf = 100;
    out.push_back(std::move(p));
  }
  return out;
}

RunConfig tiny_run() {
  RunConfig c;
  c.seed = 11;
  c.model = testing::tiny_model_config();
  c.data.size = {6, 16, 16};
  c.schedule.steps = 50;
  c.schedule.beta_start = 1e-4;
  c.schedule.beta_end = 0.2;
  c.sample.n_inference_steps = 10;
  c.train.batch_size = 2;
  c.train.learning_rate = 1e-3;
  c.losses.n_negatives = 2;
  c.losses.weights = {1.0, 1.0, 1e-3};
  return c;
}

bool same_params(const Networks<float>& a, const Networks<float>& b) {
  const auto &va = a.params().values(), &vb = b.params().values();
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size() != vb[i].size()) return false;
    if (std::memcmp(va[i].data(), vb[i].data(), sizeof(float) * va[i].size()) != 0) return false;
  }
  return true;
}

bool same_record(const LossRecord& a, const LossRecord& b) {
  return a.main == b.main && a.nas == b.nas && a.spectrum == b.spectrum && a.contrastive == b.contrastive &&
         a.total == b.total;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("c2f_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("adam: first step moves each weight by lr against the gradient sign") {
  TrainConfig t;
  t.learning_rate = 0.01;
  std::vector<Mat<float>> p{Mat<float>::Zero(2, 2)}, g{Mat<float>(2, 2)};
  g[0] << 1.0f, -2.0f, 0.5f, -3.0f;
  AdamState st;
  adam_update(p, g, st, t);
  CHECK(st.t == 1);
  for (int i = 0; i < 4; ++i) CHECK(p[0].data()[i] == doctest::Approx(g[0].data()[i] > 0 ? -0.01 : 0.01).epsilon(1e-5));
  // Minimizes a quadratic.
  std::vector<Mat<float>> x{Mat<float>::Constant(1, 3, 2.0f)};
  AdamState s2;
  t.learning_rate = 0.05;
  for (int i = 0; i < 500; ++i) {
    std::vector<Mat<float>> grad{2.0f * x[0]};
    adam_update(x, grad, s2, t);
  }
  CHECK(x[0].cwiseAbs().maxCoeff() < 0.05f);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto pairs = tiny_pairs(5);
  RunConfig cfg = tiny_run();
  Trainer a(cfg, pairs), b(cfg, pairs);
  for (int s = 0; s < 100; ++s) {
    const LossRecord ra = a.train_step(), rb = b.train_step();
    REQUIRE(same_record(ra, rb));
    REQUIRE(std::isfinite(ra.total));
  }
  CHECK(same_params(a.networks(), b.networks()));
  CHECK(a.step() == 100);

  RunConfig other = cfg;
  other.seed = 12;
  Trainer c(other, pairs);
  CHECK_FALSE(same_record(Trainer(cfg, pairs).train_step(), c.train_step()));
}

TEST_CASE("zero auxiliary weights reduce the total to the main loss") {
  auto pairs = tiny_pairs(5);
  RunConfig cfg = tiny_run();
  cfg.losses.weights = {0.0, 0.0, 0.0};
  Trainer t(cfg, pairs);
  for (int s = 0; s < 5; ++s) {
    const LossRecord r = t.train_step();
    CHECK(r.total == r.main);
    CHECK(r.nas > 0.0);
  }
}

TEST_CASE("negative pool must exclude the batch") {
  auto pairs = tiny_pairs(3);
  RunConfig cfg = tiny_run();
  CHECK_THROWS_AS(Trainer(cfg, pairs), DataError);
  cfg.losses.weights.k = 0.0;
  CHECK_NOTHROW(Trainer(cfg, pairs));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  auto pairs = tiny_pairs(5);
  RunConfig cfg = tiny_run();
  const fs::path dir = scratch("resume");

  Trainer full(cfg, pairs);
  std::vector<LossRecord> trace;
  for (int s = 0; s < 20; ++s) trace.push_back(full.train_step());

  Trainer first(cfg, pairs);
  for (int s = 0; s < 10; ++s) first.train_step();
  save_checkpoint(dir / "ck.bin", first.checkpoint());
  Checkpoint ck = load_checkpoint(dir / "ck.bin");
  CHECK(ck.step == 10);
  CHECK(ck.adam.t == 10);
  Trainer resumed(ck, cfg, pairs);
  for (int s = 10; s < 20; ++s) CHECK(same_record(resumed.train_step(), trace[static_cast<std::size_t>(s)]));
  CHECK(same_params(resumed.networks(), full.networks()));

  RunConfig wrong = cfg;
  wrong.model.denoiser.base_channels = 4;
  CHECK_THROWS_AS(Trainer(ck, wrong, pairs), ConfigError);
  RunConfig reseeded = cfg;
  reseeded.seed = 99;
  CHECK(Trainer(ck, reseeded, pairs).config().seed == cfg.seed);

  // Model built from the checkpoint carries the same weights.
  Model m = Model::from_checkpoint(ck);
  CHECK(same_params(m.nets, first.networks()));
}

TEST_CASE("checkpoint format errors") {
  auto pairs = tiny_pairs(5);
  RunConfig cfg = tiny_run();
  Trainer t(cfg, pairs);
  t.train_step();
  const fs::path dir = scratch("format");
  save_checkpoint(dir / "ck.bin", t.checkpoint());
  std::ifstream in(dir / "ck.bin", std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.bin"), FormatError);
  std::ofstream(dir / "long.bin", std::ios::binary) << bytes << "xxxx";
  CHECK_THROWS_AS(load_checkpoint(dir / "long.bin"), FormatError);

  std::string header = bytes.substr(0, bytes.find('\n'));
  const auto pos = header.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  header.replace(pos, 11, "\"version\":2");
  std::ofstream(dir / "ver.bin", std::ios::binary) << header << bytes.substr(bytes.find('\n'));
  try {
    load_checkpoint(dir / "ver.bin");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), DataError);
}

TEST_CASE("inference cost: one coarse pass and n_steps denoiser passes per slice") {
  RunConfig cfg = tiny_run();
  auto nets = Networks<float>::create(cfg.model, 3);
  testing::randomize(nets, 5, 0.2);
  auto pairs = tiny_pairs(1);
  const NoiseSchedule train = cfg.schedule.build();
  const GuidanceBundle g = make_guidance(pairs[0].lpet, 2, cfg.guidance());
  const ConditionInput c = make_condition(pairs[0].lpet.slice_tensor<float>(2), g, cfg.guidance());

  nets.counters().reset();
  Rng rng(1);
  SliceReconstruction r = reconstruct_slice(nets, c, make_inference_schedule(train, 10), rng);
  CHECK(nets.counters().cpm == 1);
  CHECK(nets.counters().denoiser == 10);
  CHECK(nets.counters().aux == 1);
  CHECK(r.y.data.allFinite());
  CHECK(r.y.data.cwiseAbs().maxCoeff() <= 1.0f);

  ReconstructOptions opt;
  opt.n_samples = 4;
  nets.counters().reset();
  reconstruct_slice_ams(nets, pairs[0].lpet, 2, train, cfg.guidance(), opt, "s");
  CHECK(nets.counters().cpm == 1);
  CHECK(nets.counters().denoiser == 40);

  RunConfig only = apply_variant(cfg, AblationVariant::cpm_only);
  auto cpm = Networks<float>::create(only.model, 3);
  cpm.counters().reset();
  const ConditionInput bare = make_condition(pairs[0].lpet.slice_tensor<float>(2), g, only.guidance());
  Rng r2(1);
  SliceReconstruction rc = reconstruct_slice(cpm, bare, make_inference_schedule(train, 10), r2);
  CHECK(cpm.counters().cpm == 1);
  CHECK(cpm.counters().denoiser == 0);
  CHECK(rc.r0.data.isZero());
}

TEST_CASE("AMS: mean of retained samples, population SD, zero SD for one sample") {
  RunConfig cfg = tiny_run();
  auto nets = Networks<float>::create(cfg.model, 3);
  testing::randomize(nets, 6, 0.2);
  auto pairs = tiny_pairs(1);
  const NoiseSchedule train = cfg.schedule.build();

  ReconstructOptions one;
  one.seed = 4;
  VolumeReconstruction r1 = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), one, "a");
  CHECK(r1.sd.voxels.isZero());
  CHECK(r1.rpet.voxels.allFinite());
  CHECK(r1.rpet.voxels.minCoeff() >= 0.0f);
  CHECK(r1.rpet.voxels.maxCoeff() <= 1.0f);

  ReconstructOptions four = one;
  four.n_samples = 4;
  four.keep_samples = true;
  VolumeReconstruction r4 = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), four, "a");
  REQUIRE(r4.samples.size() == 4);
  Eigen::ArrayXf mean = Eigen::ArrayXf::Zero(r4.rpet.size());
  for (const auto& s : r4.samples) mean += s.voxels;
  mean /= 4.0f;
  CHECK((r4.rpet.voxels - mean).abs().maxCoeff() < 1e-6f);
  const Volume sd = population_sd(r4.samples);
  CHECK((r4.sd.voxels - sd.voxels).abs().maxCoeff() < 1e-5f);
  CHECK(r4.sd.voxels.allFinite());
  CHECK(sd_summary(r4.sd) > 0.0);
  // Sample 0 of the 4-sample run is the 1-sample run.
  CHECK((r4.samples[0].voxels == r1.rpet.voxels).all());

  VolumeReconstruction again = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), four, "a");
  CHECK((again.rpet.voxels == r4.rpet.voxels).all());
  VolumeReconstruction other = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), four, "b");
  CHECK_FALSE((other.rpet.voxels == r4.rpet.voxels).all());
}

TEST_CASE("parallel slice reconstruction equals serial") {
  RunConfig cfg = tiny_run();
  auto nets = Networks<float>::create(cfg.model, 3);
  testing::randomize(nets, 7, 0.2);
  auto pairs = tiny_pairs(1, 7);
  const NoiseSchedule train = cfg.schedule.build();
  ReconstructOptions serial;
  serial.n_samples = 2;
  serial.seed = 9;
  ReconstructOptions parallel = serial;
  parallel.threads = 3;
  auto a = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), serial, "x");
  auto b = reconstruct_volume(pairs[0].lpet, nets, train, cfg.guidance(), parallel, "x");
  CHECK((a.rpet.voxels == b.rpet.voxels).all());
  CHECK((a.sd.voxels == b.sd.voxels).all());

  Volume odd(2, 10, 10);
  CHECK_THROWS_AS(reconstruct_volume(odd, nets, train, cfg.guidance(), serial, "x"), ShapeError);
}

TEST_CASE("detached residual with k = 0 leaves the coarse predictor untouched") {
  auto pairs = tiny_pairs(5);
  RunConfig cfg = tiny_run();
  cfg.losses.weights.k = 0.0;
  cfg.losses.detach_residual = true;
  Trainer t(cfg, pairs);
  const auto before = t.networks().params().values();
  const auto& names = t.networks().params().names();
  for (int s = 0; s < 3; ++s) t.train_step();
  const auto& after = t.networks().params().values();
  bool denoiser_moved = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("cpm.", 0) == 0) {
      CHECK((before[i].array() == after[i].array()).all());
    } else if (names[i].rfind("denoiser.", 0) == 0) {
      denoiser_moved = denoiser_moved || !(before[i].array() == after[i].array()).all();
    }
  }
  CHECK(denoiser_moved);

  RunConfig attached = cfg;
  attached.losses.detach_residual = false;
  Trainer u(attached, pairs);
  const auto b2 = u.networks().params().values();
  // Zero-initialized output layers block the path on the first step.
  for (int s = 0; s < 3; ++s) u.train_step();
  bool cpm_moved = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("cpm.", 0) == 0) cpm_moved = cpm_moved || !(b2[i].array() == u.networks().params().values()[i].array()).all();
  }
  CHECK(cpm_moved);
}

TEST_CASE("every ablation variant trains and reconstructs") {
  auto pairs = tiny_pairs(5);
  for (auto v : all_variants()) {
    CAPTURE(variant_name(v));
    RunConfig cfg = apply_variant(tiny_run(), v);
    Trainer t(cfg, pairs);
    const LossRecord r = t.train_step();
    CHECK(std::isfinite(r.total));
    Model m{cfg, t.schedule(), t.networks()};
    ReconstructOptions o;
    o.n_steps = 3;
    EvaluationSummary s = evaluate_model(m, {pairs[0]}, o);
    CHECK(std::isfinite(s.psnr_db));
    CHECK(s.volumes.size() == 1);
  }
}
