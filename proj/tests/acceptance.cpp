// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--cache DIR] [--no-cache] [--c10-iterations N]
//
// Criteria 5-7 train the desk configuration (configs/desk.json) on a
// generated 20-subject dataset. Trained checkpoints are cached under the
// cache directory, keyed by a hash of the configuration, so a rerun only
// re-evaluates. Criterion 10 drives the c2fdiff executable with the desk
// configuration cut to --c10-iterations (default 200).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/diffusion.hpp"
#include "c2f/log.hpp"
#include "c2f/metrics.hpp"
#include "c2f/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tiny_model.hpp"

using namespace c2f;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Env {
  fs::path cache;
  bool use_cache = true;
  long c10_iterations = 200;
  RunConfig desk;
};

// ------------------------------------------------------------ criterion 1

Outcome c1_round_trip() {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Mat<double> x0(4, 16), eps(4, 16);
    rng.fill_normal(x0);
    rng.fill_normal(eps);
    const double gamma = rng.uniform(1e-4, 1.0);
    const Mat<double> back = predict_x0_from_eps(forward_sample(x0, gamma, eps), eps, gamma);
    worst = std::max(worst, (back - x0).cwiseAbs().maxCoeff() / std::max(1.0, x0.cwiseAbs().maxCoeff()));
  }
  return {worst <= 1e-5, "max relative error " + num(worst, 3) + " over 1000 triples (tol 1e-5)"};
}

// ------------------------------------------------------------ criterion 2

Outcome c2_posterior() {
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 2000, 1e-6, 0.01);
  const int n = 100000;
  Rng rng(202);
  std::ostringstream d;
  bool ok = true;
  double worst = 0.0;
  for (int t : {2, 50, 400, 1200, 2000}) {
    Mat<double> rt(1, 1), eps_hat(1, 1);
    rt(0, 0) = rng.normal();
    eps_hat(0, 0) = rng.normal();
    const Mat<double> x0 = predict_x0_from_eps(rt, eps_hat, s.gamma(t)).cwiseMax(-1.0).cwiseMin(1.0);
    const PosteriorParams post = posterior_params(x0, rt, t, s);
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      const double v = reverse_step(rt, eps_hat, t, s, rng)(0, 0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    const double se_mean = std::sqrt(post.variance / n), se_var = post.variance * std::sqrt(2.0 / (n - 1));
    const double zm = std::abs(mean - post.mean(0, 0)) / se_mean, zv = std::abs(var - post.variance) / se_var;
    worst = std::max({worst, zm, zv});
    ok = ok && zm < 3.0 && zv < 3.0;
  }
  d << "max deviation " << num(worst, 3) << " standard errors at t in {2,50,400,1200,2000}, 1e5 draws each (tol 3)";
  return {ok, d.str()};
}

// ------------------------------------------------------------ criterion 3

Outcome c3_schedule() {
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 2000, 1e-6, 0.01);
  bool mono = true;
  for (int t = 1; t <= 2000; ++t) mono = mono && s.gamma(t) < s.gamma(t - 1);
  const NoiseSchedule inf = make_inference_schedule(s, 10);
  bool mono10 = inf.steps() == 10;
  for (int t = 1; t <= inf.steps(); ++t) mono10 = mono10 && inf.gamma(t) < inf.gamma(t - 1);
  const bool terminal = inf.gamma(10) == s.gamma(2000);
  const bool ok = mono && s.gamma(2000) < 1e-3 && mono10 && terminal;
  return {ok, "gamma_T = " + num(s.gamma(2000), 4) + ", strictly decreasing " + (mono ? "yes" : "no") +
                  "; 10-step schedule decreasing " + (mono10 ? "yes" : "no") + ", terminal gamma preserved " +
                  (terminal ? "yes" : "no")};
}

// ------------------------------------------------------------ criterion 4

Outcome c4_gradients() {
  const ModelConfig cfg = testing::tiny_model_config();
  auto nets = Networks<double>::create(cfg, 5);
  testing::randomize(nets, 6);
  const Eigen::Index n_params = nets.params().count();
  const auto ex = testing::random_example<double>(cfg, 8, 8, 3, 7);
  Rng rng(8);
  Mat<double> eps(1, 64);
  rng.fill_normal(eps);
  const ObjectiveOptions opt{LossWeights{1.0, 1.0, 0.5}, false};
  const double gamma = 0.3;

  using Pick = std::function<ag::Var<double>(const ObjectiveResult<double>&)>;
  const std::vector<std::pair<std::string, Pick>> terms{
      {"L_main", [](const auto& r) { return r.parts.main; }},
      {"L_G^NAS", [](const auto& r) { return r.parts.nas; }},
      {"L_G^spectrum", [](const auto& r) { return r.parts.spectrum; }},
      {"L_CL", [](const auto& r) { return r.parts.contrastive; }},
      {"L_total", [](const auto& r) { return r.total; }}};
  bool ok = n_params <= 10000;
  std::ostringstream d;
  d << n_params << " params, all checked, 8x8 input;";
  for (const auto& [name, pick] : terms) {
    auto analytic = nets.params().zeros_like();
    {
      ag::Tape<double> tape;
      nn::Binder<double> b(tape, nets.params(), true);
      const auto r = evaluate_objective(b, nets, ex, gamma, eps, opt);
      tape.backward(pick(r));
      b.accumulate(analytic);
    }
    std::vector<Mat<double>*> ptrs;
    for (auto& v : nets.params().values()) ptrs.push_back(&v);
    auto f = [&, &pick = pick]() {
      ag::Tape<double> tape;
      nn::Binder<double> b(tape, nets.params(), false);
      return pick(evaluate_objective(b, nets, ex, gamma, eps, opt)).item();
    };
    const auto res = testing::check_gradients(ptrs, analytic, f, 1e-6, 1e-6, 1);
    ok = ok && res.max_rel_error < 1e-3 && res.nonzero > 0;
    d << " " << name << " " << num(res.max_rel_error, 2);
  }
  d << " (max relative error, tol 1e-3)";
  return {ok, d.str()};
}

// ------------------------------------------------------------ criterion 8

Outcome c8_counters(const Env& env) {
  RunConfig cfg = env.desk;
  auto nets = Networks<float>::create(cfg.model, cfg.seed);
  Rng prng(3);
  PairedVolume p;
  p.spet = generate_phantom(prng, 4, cfg.data.size[1], cfg.data.size[2]);
  p.lpet = simulate_lpet(p.spet, 100, prng);
  ReconstructOptions opt;
  opt.n_steps = cfg.sample.n_inference_steps;
  bool ok = opt.n_steps == 10;
  long cpm = 0, den = 0;
  for (int z = 0; z < p.lpet.depth; ++z) {
    nets.counters().reset();
    reconstruct_slice_ams(nets, p.lpet, z, cfg.schedule.build(), cfg.guidance(), opt, "c8");
    cpm = nets.counters().cpm;
    den = nets.counters().denoiser;
    ok = ok && cpm == 1 && den == 10;
  }
  return {ok, "per slice: CPM forwards " + std::to_string(cpm) + ", denoiser forwards " + std::to_string(den) +
                  " (n_inference_steps " + std::to_string(opt.n_steps) + ")"};
}

// ------------------------------------------------------------ criterion 9

Outcome c9_metrics() {
  Rng rng(909);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Mat<double> p(16, 16), t(16, 16);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      p.data()[k] = rng.uniform();
      t.data()[k] = rng.uniform();
    }
    if (i % 2) p = (t.array() + 0.1 * (p.array() - 0.5)).matrix();
    worst = std::max({worst, std::abs(psnr(p, t) - testing::brute_psnr(p, t)),
                      std::abs(ssim(p, t) - testing::brute_ssim(p, t)),
                      std::abs(nmse(p, t) - testing::brute_nmse(p, t))});
  }
  return {worst <= 1e-6, "max |library - brute force| " + num(worst, 3) + " over 100 random 16x16 pairs (tol 1e-6)"};
}

// ------------------------------------------------------ desk-scale training

struct DeskData {
  Dataset ds;
  std::vector<PairedVolume> train, eval;
};

std::string hash_key(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_key(const RunConfig& cfg) { return hash_key(cfg.to_json()); }

DeskData desk_data(const Env& env) {
  const json j = env.desk.to_json();
  const fs::path dir = env.cache / ("desk_data-" + hash_key(json{{"data", j.at("data")}, {"seed", j.at("seed")}}));
  GenerateOptions g;
  g.n_subjects = env.desk.data.n_subjects;
  g.size = env.desk.data.size;
  g.drf = env.desk.data.drf;
  g.seed = env.desk.seed;
  g.eval_fraction = env.desk.data.eval_fraction;
  g.low_dose.counts = env.desk.data.counts;
  g.low_dose.blur_sigma = env.desk.data.blur_sigma;
  if (!env.use_cache || !fs::exists(dir / "manifest.json")) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    generate_dataset(dir, g);
  }
  DeskData d;
  d.ds = Dataset::open(dir);
  for (const auto& id : d.ds.ids("train")) d.train.push_back(d.ds.load(id));
  for (const auto& id : d.ds.ids("eval")) d.eval.push_back(d.ds.load(id));
  return d;
}

Model train_or_load(const Env& env, const RunConfig& cfg, const std::vector<PairedVolume>& train,
                    const std::string& tag, std::string& note) {
  const fs::path ck_path = env.cache / (tag + "-" + config_key(cfg) + ".ckpt");
  if (env.use_cache && fs::exists(ck_path)) {
    Checkpoint ck = load_checkpoint(ck_path);
    if (ck.step == cfg.train.iterations && ck.config.to_json() == cfg.to_json()) {
      note = "cached " + ck_path.filename().string();
      return Model::from_checkpoint(ck);
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  Trainer t(cfg, train);
  TrainObserver obs;
  double acc = 0.0;
  obs.on_step = [&](long step, const LossRecord& r) {
    acc += r.main;
    if (step % 1000 == 0) {
      std::cerr << "  [" << tag << "] step " << step << " mean L_main " << num(acc / 1000, 4) << " ("
                << num(seconds_since(t0), 4) << " s)" << std::endl;
      acc = 0.0;
    }
  };
  t.run(cfg.train.iterations, obs);
  save_checkpoint(ck_path, t.checkpoint());
  note = "trained " + std::to_string(cfg.train.iterations) + " iterations in " + num(seconds_since(t0) / 60.0, 3) +
         " min";
  return Model{cfg, t.schedule(), t.networks()};
}

struct DeskState {
  std::optional<DeskData> data;
  std::optional<Model> full;
  std::string full_note;
  std::optional<EvaluationSummary> full_eval;
};

const DeskData& ensure_data(const Env& env, DeskState& st) {
  if (!st.data) st.data = desk_data(env);
  return *st.data;
}

const Model& ensure_full(const Env& env, DeskState& st) {
  if (!st.full) st.full = train_or_load(env, env.desk, ensure_data(env, st).train, "full", st.full_note);
  return *st.full;
}

const EvaluationSummary& ensure_full_eval(const Env& env, DeskState& st) {
  if (!st.full_eval) st.full_eval = evaluate_model(ensure_full(env, st), ensure_data(env, st).eval,
                                                   reconstruct_options(env.desk));
  return *st.full_eval;
}

// ------------------------------------------------------------ criterion 5

Outcome c5_smoke(const Env& env, DeskState& st) {
  ensure_full(env, st);
  const auto t0 = std::chrono::steady_clock::now();
  const EvaluationSummary& e = ensure_full_eval(env, st);
  ReconstructOptions single = reconstruct_options(env.desk);
  single.n_samples = 1;
  const EvaluationSummary s = evaluate_model(ensure_full(env, st), ensure_data(env, st).eval, single);
  const double gain = e.psnr_db - e.lpet_psnr_db;
  const bool ok = env.desk.train.iterations <= 20000 && gain >= 2.0 && e.nmse < e.lpet_nmse;
  std::ostringstream d;
  d << e.volumes.size() << " held-out volumes, " << env.desk.train.iterations << " iterations (" << st.full_note
    << "), AMS " << env.desk.sample.n_samples_for_ams << ": PSNR RPET " << num(e.psnr_db, 5) << " vs LPET "
    << num(e.lpet_psnr_db, 5) << " dB (gain " << num(gain, 3) << ", need >= 2); NMSE RPET " << num(e.nmse, 4)
    << " vs LPET " << num(e.lpet_nmse, 4) << "; single sample: PSNR " << num(s.psnr_db, 5) << " dB, NMSE "
    << num(s.nmse, 4) << "; eval " << num(seconds_since(t0), 3) << " s";
  return {ok, d.str()};
}

// ------------------------------------------------------------ criterion 6

Outcome c6_ablation(const Env& env, DeskState& st) {
  const int h = env.desk.data.size[1], w = env.desk.data.size[2], steps = env.desk.sample.n_inference_steps;
  const RunConfig a_cfg = apply_variant(env.desk, AblationVariant::baseline_direct);
  const RunConfig c_cfg = apply_variant(env.desk, AblationVariant::cpm_irm);
  const auto a = Networks<float>::create(a_cfg.model, a_cfg.seed);
  const auto c = Networks<float>::create(c_cfg.model, c_cfg.seed);
  const Eigen::Index pa = a.denoiser_parameters(), pc = c.denoiser_parameters();
  const long long ma = a.inference_macs(h, w, steps), mc = c.inference_macs(h, w, steps);
  const bool structural = pc < pa && mc < ma && c.denoiser_macs(h, w) < a.denoiser_macs(h, w);

  const EvaluationSummary& f_eval = ensure_full_eval(env, st);
  std::string note;
  const Model c_model = train_or_load(env, c_cfg, ensure_data(env, st).train, "cpm_irm", note);
  const EvaluationSummary c_eval = evaluate_model(c_model, ensure_data(env, st).eval, reconstruct_options(c_cfg));
  const bool ordered = f_eval.psnr_db >= c_eval.psnr_db;
  std::ostringstream d;
  d << "denoiser params (a) " << pa << " > (c) " << pc << "; per-slice MACs (a) " << num(ma / 1e9, 4) << "G > (c) "
    << num(mc / 1e9, 4) << "G; PSNR (f) " << num(f_eval.psnr_db, 5) << " >= (c) " << num(c_eval.psnr_db, 5)
    << " dB (" << note << ")";
  return {structural && ordered, d.str()};
}

// ------------------------------------------------------------ criterion 7

Outcome c7_ams(const Env& env, DeskState& st) {
  const Model& m = ensure_full(env, st);
  const auto& eval = ensure_data(env, st).eval;
  const int per_volume = std::max(1, (20 + static_cast<int>(eval.size()) - 1) / static_cast<int>(eval.size()));
  ReconstructOptions one = reconstruct_options(env.desk);
  one.n_samples = 1;
  ReconstructOptions four = one;
  four.n_samples = 4;
  const SliceEvaluation s1 = evaluate_slices(m, eval, std::max(per_volume, 8), one);
  const SliceEvaluation s4 = evaluate_slices(m, eval, std::max(per_volume, 8), four);
  const bool sd_zero = s1.sd_mean == 0.0;
  const bool sd_ok = std::isfinite(s4.sd_mean) && s4.sd_mean > 0.0;
  const bool ok = s1.slices.size() >= 20 && s4.psnr_db >= s1.psnr_db && sd_zero && sd_ok;
  std::ostringstream d;
  d << s1.slices.size() << " held-out slices: PSNR AMS-4 " << num(s4.psnr_db, 5) << " >= single " << num(s1.psnr_db, 5)
    << " dB; mean SD AMS-4 " << num(s4.sd_mean, 4) << ", n=1 " << num(s1.sd_mean, 4);
  return {ok, d.str()};
}

// ----------------------------------------------------------- criterion 10

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<json> stream_without_wall(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    json j = json::parse(line);
    j.erase("wall_s");
    out.push_back(j);
  }
  return out;
}

Outcome c10_reproducibility(const Env& env) {
  const fs::path dir = env.cache / "c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = C2F_CLI_PATH;
  const std::string cfg = std::string(C2F_SOURCE_DIR) + "/configs/desk.json";
  const long iters = std::max(2L, env.c10_iterations), half = iters / 2;
  const std::string every = " --train.eval_every " + std::to_string(half) +
                            " --train.eval_slices 2 --train.checkpoint_every " + std::to_string(half);
  const std::string budget = " --train.iterations " + std::to_string(iters) + every;
  char ck_name[64];
  std::snprintf(ck_name, sizeof(ck_name), "checkpoints/step_%08ld.ckpt", half);
  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };

  bool ok = true;
  std::ostringstream d;
  for (const char* name : {"data_a", "data_b"}) {
    ok = ok && run(cli + " --config " + cfg + " --seed 7 --out-dir " + q(dir / name) + " gen-data") == 0;
  }
  bool data_same = ok;
  for (const auto& e : fs::directory_iterator(dir / "data_a")) {
    data_same = data_same && slurp(e.path()) == slurp(dir / "data_b" / e.path().filename());
  }
  for (const char* name : {"run_a", "run_b"}) {
    ok = ok && run(cli + " --config " + cfg + " --seed 7 --out-dir " + q(dir / name) + budget + " train --data " +
                   q(dir / "data_a")) == 0;
  }
  // Interrupted run: run_a's directory as a crash ten steps after the halfway
  // checkpoint would leave it, then resumed.
  if (ok) {
    fs::create_directories(dir / "run_c/checkpoints");
    fs::copy_file(dir / "run_a/config.json", dir / "run_c/config.json");
    fs::copy_file(dir / "run_a" / ck_name, dir / "run_c" / ck_name);
    std::ifstream in(dir / "run_a/metrics.jsonl");
    std::ofstream out(dir / "run_c/metrics.jsonl");
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && json::parse(line).at("step").get<long>() <= half + 10) out << line << '\n';
    }
  }
  ok = ok && run(cli + " --out-dir " + q(dir / "run_c") + " train --data " + q(dir / "data_a") + " --resume " +
                 q(dir / "run_c" / ck_name)) == 0;
  if (!ok) return {false, "a CLI invocation failed (see " + dir.string() + ")"};

  const auto sa = stream_without_wall(dir / "run_a/metrics.jsonl");
  const auto sb = stream_without_wall(dir / "run_b/metrics.jsonl");
  const auto sc = stream_without_wall(dir / "run_c/metrics.jsonl");
  const bool streams_same = !sa.empty() && sa == sb;
  const bool resume_same = sa == sc;

  const Dataset ds = Dataset::open(dir / "data_a");
  const std::string vol = (ds.root / ds.entry(ds.ids("eval").front()).lpet_file).string();
  for (const char* name : {"run_a", "run_b"}) {
    ok = ok && run(cli + " --seed 3 --out-dir " + q(dir / (std::string("rec_") + name)) +
                   " reconstruct --ams 2 --threads 2 --checkpoint " + q(dir / name / "final.ckpt") + " " + q(vol)) == 0;
  }
  bool volumes_same = ok;
  for (const char* role : {".rpet.pvol", ".sd.pvol"}) {
    const std::string f = ds.ids("eval").front() + role;
    volumes_same = volumes_same && fs::exists(dir / "rec_run_a" / f) &&
                   slurp(dir / "rec_run_a" / f) == slurp(dir / "rec_run_b" / f);
  }
  d << "desk config, " << iters << " iterations x2: datasets byte-identical " << (data_same ? "yes" : "no")
    << ", metrics streams identical (" << sa.size() << " records, wall_s excluded) " << (streams_same ? "yes" : "no")
    << ", resumed-at-" << half << " stream identical " << (resume_same ? "yes" : "no")
    << ", reconstructions bit-identical " << (volumes_same ? "yes" : "no");
  return {data_same && streams_same && resume_same && volumes_same, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  Env env;
  env.cache = fs::path(C2F_BINARY_DIR) / "acceptance_cache";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream s(argv[++i]);
      for (std::string t; std::getline(s, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--cache" && i + 1 < argc) {
      env.cache = argv[++i];
    } else if (a == "--c10-iterations" && i + 1 < argc) {
      env.c10_iterations = std::stol(argv[++i]);
    } else if (a == "--no-cache") {
      env.use_cache = false;
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--cache DIR] [--no-cache] [--c10-iterations N]\n";
      return 2;
    }
  }
  set_log_level(LogLevel::warn);
  fs::create_directories(env.cache);
  env.desk = RunConfig::load(fs::path(C2F_SOURCE_DIR) / "configs/desk.json");
  DeskState st;

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, c1_round_trip},
      {2, c2_posterior},
      {3, c3_schedule},
      {4, c4_gradients},
      {8, [&] { return c8_counters(env); }},
      {9, c9_metrics},
      {10, [&] { return c10_reproducibility(env); }},
      {5, [&] { return c5_smoke(env, st); }},
      {7, [&] { return c7_ams(env, st); }},
      {6, [&] { return c6_ablation(env, st); }},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail << " ["
              << num(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
