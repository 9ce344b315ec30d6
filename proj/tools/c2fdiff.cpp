// c2fdiff: gen-data, train, reconstruct, evaluate, ablate.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/log.hpp"
#include "c2f/pipeline.hpp"

using namespace c2f;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string log_level = "info";
  bool force = false;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Pulls every --section.key [value] pair out of argv; CLI11 sees the rest.
std::vector<std::string> split_overrides(int argc, char** argv, Globals& g) {
  std::vector<std::string> rest;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    std::string key = a.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    }
    if (key.find('.') == std::string::npos) {
      rest.push_back(a);
      continue;
    }
    if (eq == std::string::npos) {
      if (i + 1 >= argc) throw ConfigError("--" + key + " needs a value");
      value = argv[++i];
    }
    g.overrides.emplace_back(key, value);
  }
  return rest;
}

std::uint64_t pick_seed(const Globals& g) {
  if (g.seed) return *g.seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cout << "seed: " << s << std::endl;
  return s;
}

// Defaults, then --config, then dotted overrides, then --seed.
RunConfig build_config(const Globals& g, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  json tree = RunConfig().to_json();
  bool seeded = false;
  if (!g.config_path.empty()) {
    const RunConfig file = RunConfig::load(g.config_path);
    tree = file.to_json();
    std::ifstream in(g.config_path);
    seeded = json::parse(in, nullptr, false).contains("seed");
  }
  for (const auto& [k, v] : g.overrides) apply_override(tree, k, v);
  for (const auto& [k, v] : extra) apply_override(tree, k, v);
  RunConfig cfg = RunConfig::from_json(tree);
  if (g.seed || !seeded) cfg.seed = pick_seed(g);
  return cfg;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void prepare_out_dir(const fs::path& dir, bool force, const std::string& what) {
  if (non_empty_dir(dir) && !force) {
    throw DataError(what + " directory " + dir.string() + " is not empty (pass --force to overwrite)");
  }
  fs::create_directories(dir);
}

std::vector<PairedVolume> load_split(const Dataset& ds, const std::string& split) {
  std::vector<PairedVolume> out;
  for (const auto& id : ds.ids(split)) out.push_back(ds.load(id));
  if (out.empty()) throw DataError("dataset " + ds.root.string() + " has no '" + split + "' subjects");
  return out;
}

void check_dataset_shape(const Dataset& ds, const RunConfig& cfg) {
  const int f = 1 << cfg.model.levels();
  if (ds.size[1] % f || ds.size[2] % f) {
    throw DataError("dataset slices are " + std::to_string(ds.size[1]) + "x" + std::to_string(ds.size[2]) +
                    " but the networks need multiples of " + std::to_string(f));
  }
}

std::string fmt(double v, int prec = 4) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

json metric_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::optional<int> n_subjects;
  std::vector<int> size;
  std::optional<double> drf;
  std::optional<double> eval_fraction;
};

// The data section of the configuration supplies the defaults.
int cmd_gen_data(const Globals& g, const GenArgs& a) {
  const RunConfig cfg = build_config(g);
  GenerateOptions opt;
  opt.n_subjects = a.n_subjects.value_or(cfg.data.n_subjects);
  opt.size = cfg.data.size;
  if (!a.size.empty()) {
    if (a.size.size() != 3) throw ConfigError("--size takes D H W");
    opt.size = {a.size[0], a.size[1], a.size[2]};
  }
  opt.drf = a.drf.value_or(cfg.data.drf);
  opt.eval_fraction = a.eval_fraction.value_or(cfg.data.eval_fraction);
  opt.low_dose.counts = cfg.data.counts;
  opt.low_dose.blur_sigma = cfg.data.blur_sigma;
  opt.seed = cfg.seed;
  if (opt.n_subjects < 1) throw ConfigError("--n-subjects must be positive");
  if (!(opt.drf >= 1.0)) throw ConfigError("--drf must be >= 1");
  if (opt.size[0] < 1 || opt.size[1] < 8 || opt.size[2] < 8 || opt.size[1] % 8 || opt.size[2] % 8) {
    throw ConfigError("--size: depth must be positive and height/width multiples of 8");
  }
  const fs::path dir = g.out_dir.empty() ? fs::path(cfg.data.dir) : fs::path(g.out_dir);
  prepare_out_dir(dir, g.force, "output");
  const Dataset ds = generate_dataset(dir, opt);
  log_info("wrote " + std::to_string(ds.subjects.size()) + " subjects to " + dir.string() + " (" +
           std::to_string(ds.ids("train").size()) + " train, " + std::to_string(ds.ids("eval").size()) + " eval)");
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string resume;
  bool resume_latest = false;
  bool detach_residual = false;
};

json step_record(long step, const LossRecord& r, double seconds) {
  return {{"kind", "train"}, {"step", step},       {"main", r.main},
          {"nas", r.nas},    {"spectrum", r.spectrum}, {"contrastive", r.contrastive},
          {"total", r.total}, {"wall_s", seconds}};
}

// Keeps the records with step <= last so that a resumed stream has no
// duplicates and no gaps.
void truncate_metrics(const fs::path& path, long last) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<long>() <= last) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (a.detach_residual) extra.emplace_back("losses.detach_residual", "true");
  const fs::path run = g.out_dir.empty() ? fs::path("run") : fs::path(g.out_dir);
  const bool resuming = a.resume_latest || !a.resume.empty();

  std::optional<Checkpoint> ck;
  RunConfig cfg;
  if (resuming) {
    const fs::path from = a.resume.empty() ? run / "latest.ckpt" : fs::path(a.resume);
    ck = load_checkpoint(from);
    json tree = ck->config.to_json();
    if (!g.config_path.empty()) tree = RunConfig::load(g.config_path).to_json();
    for (const auto& [k, v] : g.overrides) apply_override(tree, k, v);
    for (const auto& [k, v] : extra) apply_override(tree, k, v);
    cfg = RunConfig::from_json(tree);
    cfg.seed = ck->config.seed;
    log_info("resuming from " + from.string() + " at step " + std::to_string(ck->step));
  } else {
    cfg = build_config(g, extra);
  }
  if (!a.data.empty()) cfg.data.dir = a.data;
  cfg.validate();

  const Dataset ds = Dataset::open(cfg.data.dir);
  check_dataset_shape(ds, cfg);
  if (!resuming) prepare_out_dir(run, g.force, "run");
  fs::create_directories(run / "checkpoints");

  std::vector<PairedVolume> train = load_split(ds, "train");
  std::vector<PairedVolume> held_out;
  if (cfg.train.eval_every > 0 && !ds.ids("eval").empty()) held_out = load_split(ds, "eval");

  Trainer trainer = ck ? Trainer(*ck, cfg, std::move(train)) : Trainer(cfg, std::move(train));
  {
    std::ofstream c(run / "config.json");
    c << trainer.config().to_json().dump(2) << '\n';
  }
  const fs::path metrics_path = run / "metrics.jsonl";
  if (resuming) truncate_metrics(metrics_path, trainer.step());
  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&]() { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto save = [&](const std::string& name) {
    const Checkpoint c = trainer.checkpoint();
    save_checkpoint(run / name, c);
    save_checkpoint(run / "latest.ckpt", c);
  };

  TrainObserver obs;
  obs.on_step = [&](long step, const LossRecord& r) {
    write_json_line(metrics, step_record(step, r, elapsed()));
    if (step % 100 == 0) {
      log_info("step " + std::to_string(step) + " main " + fmt(r.main) + " nas " + fmt(r.nas) + " spectrum " +
               fmt(r.spectrum) + " cl " + fmt(r.contrastive) + " total " + fmt(r.total));
    }
    const long every = trainer.config().train.checkpoint_every;
    if (every > 0 && step % every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoints/step_%08ld.ckpt", step);
      save(name);
    }
    const long ev = trainer.config().train.eval_every;
    if (ev > 0 && step % ev == 0 && !held_out.empty()) {
      const Model m{trainer.config(), trainer.schedule(), trainer.networks()};
      ReconstructOptions o = reconstruct_options(trainer.config());
      o.n_samples = 1;
      const SliceEvaluation e = evaluate_slices(m, held_out, trainer.config().train.eval_slices, o);
      write_json_line(metrics, {{"kind", "eval"},
                                {"step", step},
                                {"psnr", metric_json(e.psnr_db)},
                                {"ssim", e.ssim},
                                {"nmse", e.nmse},
                                {"lpet_psnr", metric_json(e.lpet_psnr_db)},
                                {"lpet_ssim", e.lpet_ssim},
                                {"lpet_nmse", e.lpet_nmse},
                                {"n_slices", e.slices.size()}});
      log_info("eval step " + std::to_string(step) + " psnr " + fmt(e.psnr_db, 2) + " (lpet " +
               fmt(e.lpet_psnr_db, 2) + ") nmse " + fmt(e.nmse) + " (lpet " + fmt(e.lpet_nmse) + ")");
    }
  };
  trainer.run(trainer.config().train.iterations, obs);
  save("final.ckpt");
  log_info("final checkpoint " + (run / "final.ckpt").string() + " at step " + std::to_string(trainer.step()));
  return kOk;
}

// ------------------------------------------------------------- reconstruct

struct ReconArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::optional<int> steps;
  std::optional<int> ams;
  std::optional<int> threads;
};

fs::path output_path(const fs::path& input, const fs::path& out_dir, const std::string& role) {
  std::string stem = input.filename().string();
  if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".pvol") stem.resize(stem.size() - 5);
  if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".lpet") stem.resize(stem.size() - 5);
  const fs::path dir = out_dir.empty() ? input.parent_path() : out_dir;
  return dir / (stem + "." + role + ".pvol");
}

int cmd_reconstruct(const Globals& g, const ReconArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  json tree = ck.config.to_json();
  for (const auto& [k, v] : g.overrides) {
    if (k.rfind("sample.", 0) != 0) throw ConfigError("reconstruct only accepts sample.* overrides, got --" + k);
    apply_override(tree, k, v);
  }
  if (a.steps) apply_override(tree, "sample.n_inference_steps", std::to_string(*a.steps));
  if (a.ams) apply_override(tree, "sample.n_samples_for_ams", std::to_string(*a.ams));
  if (a.threads) apply_override(tree, "sample.threads", std::to_string(*a.threads));
  ck.config = RunConfig::from_json(tree);
  ck.config.seed = pick_seed(g);
  const Model model = Model::from_checkpoint(ck);
  const ReconstructOptions opt = reconstruct_options(model.config);
  if (a.inputs.empty()) throw ConfigError("reconstruct: no input volumes");
  const fs::path out_dir = g.out_dir;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  for (const auto& in : a.inputs) {
    VolumeMeta meta;
    const Volume lpet = load_volume(in, &meta);
    const std::string id = meta.subject_id.empty() ? fs::path(in).stem().string() : meta.subject_id;
    const auto t0 = std::chrono::steady_clock::now();
    const VolumeReconstruction rec =
        reconstruct_volume(lpet, model.nets, model.schedule, model.config.guidance(), opt, id);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path rp = output_path(in, out_dir, "rpet"), sp = output_path(in, out_dir, "sd");
    for (const auto& p : {rp, sp}) {
      if (fs::exists(p) && !g.force) throw DataError(p.string() + " exists (pass --force to overwrite)");
    }
    save_volume(rp, rec.rpet, {"rpet", id, meta.drf, meta.voxel_size_mm});
    save_volume(sp, rec.sd, {"sd", id, meta.drf, meta.voxel_size_mm});
    log_info(id + ": wrote " + rp.string() + " and " + sp.string() + " (" + std::to_string(opt.n_steps) +
             " steps, " + std::to_string(opt.n_samples) + " samples, mean sd " + fmt(sd_summary(rec.sd), 5) + ", " +
             fmt(secs, 1) + " s)");
  }
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct EvalArgs {
  std::string pred;
  std::string target;
  std::string jsonl;
  std::string split = "all";
};

struct EvalRow {
  std::string subject;
  std::string kind;
  MetricReport m;
  std::optional<double> sd;
};

int cmd_evaluate(const Globals& g, const EvalArgs& a) {
  const Dataset ds = Dataset::open(a.target);
  std::map<std::string, std::vector<fs::path>> preds;  // subject -> files
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.pred)) {
    if (e.path().extension() == ".pvol") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::string> subjects;
  for (const auto& s : ds.subjects) {
    if (a.split == "all" || s.split == a.split) subjects.push_back(s.id);
  }
  std::sort(subjects.begin(), subjects.end());
  if (subjects.empty()) throw DataError("no subjects in split '" + a.split + "'");

  std::map<std::string, std::map<std::string, fs::path>> by_subject;  // id -> role -> path
  for (const auto& f : files) {
    VolumeMeta meta;
    load_volume(f, &meta);
    by_subject[meta.subject_id][meta.role] = f;
  }

  std::vector<EvalRow> rows;
  for (const auto& id : subjects) {
    const PairedVolume p = ds.load(id);
    rows.push_back({id, "lpet", evaluate_volume(p.lpet, p.spet), std::nullopt});
    const auto it = by_subject.find(id);
    if (it == by_subject.end()) continue;
    for (const auto& [role, path] : it->second) {
      if (role == "sd" || (role == "lpet" && fs::equivalent(path, ds.root / ds.entry(id).lpet_file))) continue;
      EvalRow r{id, role, evaluate_volume(load_volume(path), p.spet), std::nullopt};
      const auto sd = it->second.find("sd");
      if (role == "rpet" && sd != it->second.end()) r.sd = sd_summary(load_volume(sd->second));
      rows.push_back(std::move(r));
    }
  }

  std::cout << std::left << std::setw(12) << "subject" << std::setw(8) << "kind" << std::right << std::setw(10)
            << "psnr_db" << std::setw(10) << "ssim" << std::setw(12) << "nmse" << std::setw(10) << "sd" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(12) << r.subject << std::setw(8) << r.kind << std::right << std::setw(10)
              << fmt(r.m.psnr_db, 3) << std::setw(10) << fmt(r.m.ssim, 4) << std::setw(12) << fmt(r.m.nmse, 6)
              << std::setw(10) << (r.sd ? fmt(*r.sd, 5) : std::string("-")) << '\n';
  }
  std::map<std::string, std::array<double, 4>> mean;  // kind -> psnr, ssim, nmse, n
  for (const auto& r : rows) {
    auto& m = mean[r.kind];
    m[0] += r.m.psnr_db;
    m[1] += r.m.ssim;
    m[2] += r.m.nmse;
    m[3] += 1;
  }
  for (const auto& [kind, m] : mean) {
    std::cout << std::left << std::setw(12) << "mean" << std::setw(8) << kind << std::right << std::setw(10)
              << fmt(m[0] / m[3], 3) << std::setw(10) << fmt(m[1] / m[3], 4) << std::setw(12) << fmt(m[2] / m[3], 6)
              << std::setw(10) << "-" << '\n';
  }

  fs::path jp = a.jsonl;
  if (jp.empty()) jp = (g.out_dir.empty() ? fs::path(a.pred) : fs::path(g.out_dir)) / "evaluation.jsonl";
  if (!jp.parent_path().empty()) fs::create_directories(jp.parent_path());
  std::ofstream out(jp, std::ios::trunc);
  for (const auto& r : rows) {
    json j{{"subject", r.subject},
           {"kind", r.kind},
           {"psnr", metric_json(r.m.psnr_db)},
           {"ssim", r.m.ssim},
           {"nmse", r.m.nmse},
           {"n_slices", r.m.n_slices}};
    j["sd"] = r.sd ? json(*r.sd) : json(nullptr);
    write_json_line(out, j);
  }
  log_info("wrote " + jp.string());
  return kOk;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string data;
  std::vector<std::string> variants;
  int ams = 4;
  int eval_slices = 0;  // 0: full held-out volumes
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  std::vector<AblationVariant> variants;
  for (const auto& v : a.variants) variants.push_back(parse_variant(v));
  if (variants.empty()) variants = all_variants();
  if (a.ams < 1) throw ConfigError("--ams must be >= 1");
  RunConfig base = build_config(g);
  if (!a.data.empty()) base.data.dir = a.data;
  std::vector<RunConfig> cfgs;
  for (auto v : variants) {
    cfgs.push_back(apply_variant(base, v));
    cfgs.back().validate();
  }

  const Dataset ds = Dataset::open(base.data.dir);
  check_dataset_shape(ds, base);
  const std::vector<PairedVolume> train = load_split(ds, "train"), held_out = load_split(ds, "eval");
  const fs::path out = g.out_dir.empty() ? fs::path("ablation") : fs::path(g.out_dir);
  prepare_out_dir(out, g.force, "ablation");
  std::ofstream report(out / "ablation.jsonl", std::ios::trunc);
  const int h = ds.size[1], w = ds.size[2];

  struct Row {
    std::string name;
    Eigen::Index params, denoiser_params;
    long long denoiser_macs, slice_macs;
    double psnr, ssim, nmse, sd;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const RunConfig& cfg = cfgs[i];
    const std::string name = variant_name(variants[i]);
    log_info("variant " + name + ": training " + std::to_string(cfg.train.iterations) + " iterations");
    Trainer t(cfg, train);
    TrainObserver obs;
    obs.on_step = [&](long step, const LossRecord& r) {
      if (step % 500 == 0) log_info(name + " step " + std::to_string(step) + " main " + fmt(r.main));
    };
    t.run(cfg.train.iterations, obs);
    save_checkpoint(out / (name + ".ckpt"), t.checkpoint());

    const Model m{cfg, t.schedule(), t.networks()};
    ReconstructOptions o = reconstruct_options(cfg);
    o.n_samples = cfg.model.use_irm ? a.ams : 1;
    Row r{name,
          m.nets.params().count(),
          m.nets.denoiser_parameters(),
          m.nets.denoiser_macs(h, w),
          m.nets.inference_macs(h, w, cfg.sample.n_inference_steps),
          0, 0, 0, 0};
    if (a.eval_slices > 0) {
      const SliceEvaluation e = evaluate_slices(m, held_out, a.eval_slices, o);
      r.psnr = e.psnr_db, r.ssim = e.ssim, r.nmse = e.nmse, r.sd = e.sd_mean;
    } else {
      const EvaluationSummary e = evaluate_model(m, held_out, o);
      r.psnr = e.psnr_db, r.ssim = e.ssim, r.nmse = e.nmse, r.sd = e.sd_mean;
    }
    write_json_line(report, {{"variant", r.name},
                             {"iterations", cfg.train.iterations},
                             {"params", r.params},
                             {"denoiser_params", r.denoiser_params},
                             {"denoiser_macs", r.denoiser_macs},
                             {"slice_macs", r.slice_macs},
                             {"psnr", metric_json(r.psnr)},
                             {"ssim", r.ssim},
                             {"nmse", r.nmse},
                             {"ams", o.n_samples},
                             {"sd", r.sd}});
    rows.push_back(r);
  }

  std::cout << std::left << std::setw(18) << "variant" << std::right << std::setw(12) << "params_M" << std::setw(14)
            << "denoiser_M" << std::setw(14) << "den_GMAC" << std::setw(14) << "slice_GMAC" << std::setw(10) << "psnr"
            << std::setw(9) << "ssim" << std::setw(11) << "nmse" << std::setw(10) << "sd" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(18) << r.name << std::right << std::setw(12) << fmt(r.params / 1e6, 4)
              << std::setw(14) << fmt(r.denoiser_params / 1e6, 4) << std::setw(14) << fmt(r.denoiser_macs / 1e9, 4)
              << std::setw(14) << fmt(r.slice_macs / 1e9, 4) << std::setw(10) << fmt(r.psnr, 3) << std::setw(9)
              << fmt(r.ssim, 4) << std::setw(11) << fmt(r.nmse, 6) << std::setw(10) << fmt(r.sd, 5) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  GenArgs gen;
  TrainArgs tr;
  ReconArgs rc;
  EvalArgs ev;
  AblateArgs ab;

  CLI::App app{"Coarse-to-fine diffusion reconstruction of low-dose volumes"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", g.config_path, "JSON run configuration");
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "master seed (random and printed when omitted)");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.footer("Any configuration key can be overridden as --section.key value, e.g. --train.iterations 500 "
             "or --weights.k 0.");

  auto* gd = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  gd->add_option("--n-subjects", gen.n_subjects);
  gd->add_option("--size", gen.size, "D H W")->expected(3);
  gd->add_option("--drf", gen.drf, "dose reduction factor");
  gd->add_option("--eval-fraction", gen.eval_fraction);

  auto* trc = app.add_subcommand("train", "train the coarse predictor and the refinement network jointly");
  trc->add_option("--data", tr.data, "dataset directory (default data.dir)");
  auto* resume = trc->add_option("--resume", tr.resume, "checkpoint to continue from (default <out-dir>/latest.ckpt)")
                     ->expected(0, 1);
  trc->add_flag("--detach-residual", tr.detach_residual, "stop gradients from the noised residual into the CPM");

  auto* rcc = app.add_subcommand("reconstruct", "reconstruct low-dose volumes");
  rcc->add_option("--checkpoint", rc.checkpoint)->required();
  rcc->add_option("--steps", rc.steps, "reverse steps (default 10)");
  rcc->add_option("--ams", rc.ams, "samples averaged per slice");
  rcc->add_option("--threads", rc.threads);
  rcc->add_option("inputs", rc.inputs, ".pvol volumes")->required();

  auto* evc = app.add_subcommand("evaluate", "score reconstructions against a dataset");
  evc->add_option("--pred", ev.pred, "directory of .pvol predictions")->required();
  evc->add_option("--target", ev.target, "dataset directory")->required();
  evc->add_option("--jsonl", ev.jsonl, "record file (default <out-dir or pred>/evaluation.jsonl)");
  evc->add_option("--split", ev.split, "all, train or eval");

  auto* abc = app.add_subcommand("ablate", "train and compare the ablation variants");
  abc->add_option("--data", ab.data, "dataset directory (default data.dir)");
  abc->add_option("--variants", ab.variants, "subset of baseline_direct cpm_only cpm_irm plus_nas plus_spectrum "
                                             "plus_contrastive")
      ->delimiter(',');
  abc->add_option("--ams", ab.ams, "samples for the AMS columns");
  abc->add_option("--eval-slices", ab.eval_slices, "slices per held-out volume (0: all)");

  try {
    std::vector<std::string> rest = split_overrides(argc, argv, g);
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  }

  try {
    set_log_level(parse_log_level(g.log_level));
    if (seed_opt->count() > 0) g.seed = seed;
    if (*resume) tr.resume_latest = true;
    if (*gd) return cmd_gen_data(g, gen);
    if (*trc) return cmd_train(g, tr);
    if (*rcc) return cmd_reconstruct(g, rc);
    if (*evc) return cmd_evaluate(g, ev);
    if (*abc) return cmd_ablate(g, ab);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParameterError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
