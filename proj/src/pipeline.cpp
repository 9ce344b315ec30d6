#include "c2f/pipeline.hpp"

#include <atomic>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "c2f/log.hpp"

namespace c2f {

namespace fs = std::filesystem;
using nlohmann::json;

void adam_update(std::vector<Mat<float>>& params, const std::vector<Mat<float>>& grads, AdamState& st,
                 const TrainConfig& cfg) {
  if (st.m.size() != params.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& p : params) {
      st.m.push_back(Mat<float>::Zero(p.rows(), p.cols()));
      st.v.push_back(Mat<float>::Zero(p.rows(), p.cols()));
    }
  }
  ++st.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(b1, static_cast<double>(st.t))));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(b2, static_cast<double>(st.t))));
  const float lr = static_cast<float>(cfg.learning_rate), eps = static_cast<float>(cfg.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = st.m[i].array();
    auto v = st.v[i].array();
    const auto g = grads[i].array();
    m = float(b1) * m + float(1.0 - b1) * g;
    v = float(b2) * v + float(1.0 - b2) * g.square();
    params[i].array() -= lr * (m * c1) / ((v * c2).sqrt() + eps);
  }
}

// ---- checkpoints ----

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  json h;
  h["format"] = "c2f-checkpoint";
  h["version"] = kCheckpointVersion;
  h["step"] = ck.step;
  h["seed"] = ck.config.seed;
  h["config"] = ck.config.to_json();
  h["schedule"] = {{"alphas", std::vector<double>(ck.schedule.alphas().begin(), ck.schedule.alphas().end())},
                   {"gammas", std::vector<double>(ck.schedule.gammas().begin(), ck.schedule.gammas().end())}};
  json params = json::array();
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    params.push_back({{"name", ck.names[i]}, {"rows", ck.params[i].rows()}, {"cols", ck.params[i].cols()}});
  }
  h["params"] = params;
  h["adam"] = {{"t", ck.adam.t}, {"has_moments", !ck.adam.m.empty()}};

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    const std::string header = h.dump();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.put('\n');
    auto dump = [&](const std::vector<Mat<float>>& mats) {
      for (const auto& m : mats) {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
      }
    };
    dump(ck.params);
    dump(ck.adam.m);
    dump(ck.adam.v);
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path.string() + ": missing checkpoint header");
  Checkpoint ck;
  bool has_moments = false;
  try {
    const json h = json::parse(header);
    if (h.at("format") != "c2f-checkpoint") throw FormatError(path.string() + ": not a checkpoint");
    const int version = h.at("version");
    if (version != kCheckpointVersion) {
      throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) +
                        " cannot be read by this build (expects version " + std::to_string(kCheckpointVersion) +
                        "); migrate it or retrain");
    }
    ck.config = RunConfig::from_json(h.at("config"));
    ck.step = h.at("step");
    const auto alphas = h.at("schedule").at("alphas").get<std::vector<double>>();
    const auto gammas = h.at("schedule").at("gammas").get<std::vector<double>>();
    ck.schedule = NoiseSchedule(Eigen::Map<const Eigen::VectorXd>(alphas.data(), Eigen::Index(alphas.size())),
                                Eigen::Map<const Eigen::VectorXd>(gammas.data(), Eigen::Index(gammas.size())));
    for (const auto& p : h.at("params")) {
      ck.names.push_back(p.at("name"));
      ck.params.push_back(Mat<float>(p.at("rows").get<Eigen::Index>(), p.at("cols").get<Eigen::Index>()));
    }
    ck.adam.t = h.at("adam").at("t");
    has_moments = h.at("adam").at("has_moments");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  auto read = [&](std::vector<Mat<float>>& mats) {
    for (auto& m : mats) {
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
      if (!in) throw FormatError(path.string() + ": truncated checkpoint payload");
    }
  };
  read(ck.params);
  if (has_moments) {
    for (const auto& p : ck.params) {
      ck.adam.m.push_back(Mat<float>(p.rows(), p.cols()));
      ck.adam.v.push_back(Mat<float>(p.rows(), p.cols()));
    }
    read(ck.adam.m);
    read(ck.adam.v);
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw FormatError(path.string() + ": trailing bytes");
  return ck;
}

namespace {

void load_params(Networks<float>& nets, const Checkpoint& ck) {
  auto& ps = nets.params();
  if (ps.size() != static_cast<int>(ck.params.size())) {
    throw ConfigError("checkpoint has " + std::to_string(ck.params.size()) + " parameter tensors, the model expects " +
                      std::to_string(ps.size()));
  }
  for (int i = 0; i < ps.size(); ++i) {
    const auto& src = ck.params[static_cast<std::size_t>(i)];
    if (ps.name(i) != ck.names[static_cast<std::size_t>(i)] || ps.value(i).rows() != src.rows() ||
        ps.value(i).cols() != src.cols()) {
      throw ConfigError("checkpoint parameter '" + ck.names[static_cast<std::size_t>(i)] +
                        "' does not match the model layout");
    }
    ps.value(i) = src;
  }
}

json architecture(const RunConfig& c) {
  const json j = c.to_json();
  return {{"networks", j["networks"]}, {"guidance", j["guidance"]}, {"schedule", j["schedule"]}};
}

}  // namespace

Model Model::from_checkpoint(const Checkpoint& ck) {
  ck.config.validate();
  Model m{ck.config, ck.schedule, Networks<float>::create(ck.config.model, ck.config.seed)};
  load_params(m.nets, ck);
  return m;
}

// ---- training ----

Trainer::Trainer(const RunConfig& cfg, std::vector<PairedVolume> train)
    : cfg_(cfg), schedule_(cfg.schedule.build()), train_(std::move(train)) {
  cfg_.validate();
  nets_ = Networks<float>::create(cfg_.model, cfg_.seed);
  check_pool();
}

Trainer::Trainer(const Checkpoint& ck, const RunConfig& cfg, std::vector<PairedVolume> train)
    : cfg_(cfg), schedule_(ck.schedule), train_(std::move(train)) {
  cfg_.validate();
  if (architecture(cfg) != architecture(ck.config)) {
    throw ConfigError("configuration does not match the checkpoint's networks/guidance/schedule sections");
  }
  if (cfg_.seed != ck.config.seed) {
    log_warn("resuming with the checkpoint's seed " + std::to_string(ck.config.seed));
    cfg_.seed = ck.config.seed;
  }
  nets_ = Networks<float>::create(cfg_.model, cfg_.seed);
  load_params(nets_, ck);
  adam_ = ck.adam;
  step_ = ck.step;
  check_pool();
}

void Trainer::check_pool() const {
  if (train_.empty()) throw DataError("no training volumes");
  const PairedVolume& first = train_.front();
  for (const auto& p : train_) {
    p.validate();
    if (!p.spet.same_shape(first.spet)) throw DataError("training volumes differ in shape");
  }
  const int f = 1 << cfg_.model.levels();
  if (first.spet.height % f || first.spet.width % f) {
    throw DataError("volume slices " + std::to_string(first.spet.height) + "x" + std::to_string(first.spet.width) +
                    " are not divisible by 2^" + std::to_string(cfg_.model.levels()));
  }
  if (cfg_.model.use_irm && cfg_.losses.weights.k > 0.0 && cfg_.losses.n_negatives > 0) {
    const std::size_t need = static_cast<std::size_t>(cfg_.losses.n_negatives + cfg_.train.batch_size);
    if (train_.size() < need) {
      throw DataError("contrastive loss needs n_negatives + batch_size = " + std::to_string(need) +
                      " training subjects, found " + std::to_string(train_.size()) + "; lower losses.n_negatives");
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.step = step_;
  ck.schedule = schedule_;
  const auto& ps = nets_.params();
  for (int i = 0; i < ps.size(); ++i) {
    ck.names.push_back(ps.name(i));
    ck.params.push_back(ps.value(i));
  }
  ck.adam = adam_;
  return ck;
}

LossRecord Trainer::train_step() {
  const auto s = static_cast<std::uint64_t>(step_);
  const int B = cfg_.train.batch_size;
  const GuidanceConfig& gcfg = cfg_.guidance();

  Rng batch_rng(derive_seed(cfg_.seed, "batch", {s}));
  std::vector<std::pair<std::size_t, int>> picks;
  std::set<std::string> batch_ids;
  for (int i = 0; i < B; ++i) {
    const auto subj = static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<long>(train_.size()) - 1));
    const int z = static_cast<int>(batch_rng.uniform_int(0, train_[subj].spet.depth - 1));
    picks.emplace_back(subj, z);
    batch_ids.insert(train_[subj].subject_id);
  }

  NegativeSet negs;
  if (nets_.has_irm() && cfg_.losses.weights.k > 0.0) {
    std::vector<const PairedVolume*> pool;
    for (const auto& p : train_) pool.push_back(&p);
    Rng neg_rng(derive_seed(cfg_.seed, "negatives", {s}));
    negs = build_negative_set(pool, batch_ids, cfg_.losses.n_negatives, neg_rng);
  }

  const ObjectiveOptions opt{cfg_.losses.weights, cfg_.losses.detach_residual};
  auto& ps = nets_.params();
  nn::Grads<float> grads = ps.zeros_like();
  LossRecord avg;
  for (int i = 0; i < B; ++i) {
    const auto& [subj, z] = picks[static_cast<std::size_t>(i)];
    const SliceSample sample = make_slice_sample(train_[subj], z, gcfg);
    const TrainingExample<float> ex = make_example<float>(sample, negs, gcfg);

    Rng noise_rng(derive_seed(cfg_.seed, "noise", {s, static_cast<std::uint64_t>(i)}));
    const GammaSample g = sample_gamma_train(schedule_, noise_rng);
    Mat<float> eps(1, ex.target.data.cols());
    noise_rng.fill_normal(eps);

    ag::Tape<float> tape;
    nn::Binder<float> b(tape, ps, true);
    const ObjectiveResult<float> r = evaluate_objective(b, nets_, ex, g.gamma, eps, opt);
    tape.backward(ag::scale(r.total, 1.0f / static_cast<float>(B)));
    b.accumulate(grads);

    const LossRecord rec = record_of(r.parts, r.total);
    avg.main += rec.main / B;
    avg.nas += rec.nas / B;
    avg.spectrum += rec.spectrum / B;
    avg.contrastive += rec.contrastive / B;
    avg.total += rec.total / B;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) throw TrainingError("non-finite gradient for parameter '" + ps.name(int(i)) + "'");
  }
  TrainConfig step_cfg = cfg_.train;
  step_cfg.learning_rate = learning_rate_at(cfg_.train, step_);
  adam_update(ps.values(), grads, adam_, step_cfg);
  ++step_;
  return avg;
}

void Trainer::run(long until, const TrainObserver& obs) {
  while (step_ < until) {
    const LossRecord rec = train_step();
    if (obs.on_step) obs.on_step(step_, rec);
    if (obs.on_eval && cfg_.train.eval_every > 0 && step_ % cfg_.train.eval_every == 0) obs.on_eval(step_);
    if (obs.on_checkpoint && cfg_.train.checkpoint_every > 0 && step_ % cfg_.train.checkpoint_every == 0) {
      obs.on_checkpoint(step_);
    }
  }
}

// ---- inference ----

namespace {

ag::Var<float> const_var(ag::Tape<float>& t, const Tensor<float>& x) {
  return t.constant(ag::Shape{x.channels, x.height, x.width}, x.data);
}

struct Prepared {
  Tensor<float> x_cp;
  std::vector<Tensor<float>> feats;
};

Prepared prepare(const Networks<float>& nets, const ConditionInput& c) {
  ag::Tape<float> tape;
  nn::Binder<float> b(tape, nets.params(), false);
  Prepared p;
  p.x_cp = nets.cpm_forward(b, const_var(tape, c.channels)).tensor();
  if (nets.has_irm()) {
    std::vector<ag::Var<float>> pyr;
    for (const auto& t : c.pyramid) pyr.push_back(const_var(tape, t));
    for (const auto& f : nets.extract_aux_features(b, pyr)) p.feats.push_back(f.tensor());
  }
  return p;
}

Tensor<float> refine(const Networks<float>& nets, const ConditionInput& c, const Prepared& p,
                     const NoiseSchedule& inference, Rng& rng) {
  Tensor<float> r(1, c.channels.height, c.channels.width);
  if (!nets.has_irm()) return r;
  rng.fill_normal(r.data);
  for (int t = inference.steps(); t >= 1; --t) {
    ag::Tape<float> tape;
    nn::Binder<float> b(tape, nets.params(), false);
    std::vector<ag::Var<float>> feats;
    for (const auto& f : p.feats) feats.push_back(const_var(tape, f));
    const Mat<float> eps_hat =
        nets.irm_denoise(b, const_var(tape, c.channels), const_var(tape, r), inference.gamma(t), feats).value();
    r.data = reverse_step(r.data, eps_hat, t, inference, rng);
  }
  return r;
}

}  // namespace

SliceReconstruction reconstruct_slice(const Networks<float>& nets, const ConditionInput& c,
                                      const NoiseSchedule& inference, Rng& rng) {
  const Prepared p = prepare(nets, c);
  SliceReconstruction out;
  out.x_cp = p.x_cp;
  out.r0 = refine(nets, c, p, inference, rng);
  out.y = p.x_cp;
  out.y.data = (p.x_cp.data + out.r0.data).cwiseMax(-1.0f).cwiseMin(1.0f);
  return out;
}

SliceAms reconstruct_slice_ams(const Networks<float>& nets, const Volume& lpet, int z, const NoiseSchedule& train,
                               const GuidanceConfig& gcfg, const ReconstructOptions& opt,
                               const std::string& subject_id) {
  if (opt.n_samples < 1) throw ParameterError("n_samples must be >= 1");
  const NoiseSchedule inference = make_inference_schedule(train, opt.n_steps);
  const GuidanceBundle g = make_guidance(lpet, z, gcfg);
  const ConditionInput c = make_condition(lpet.slice_tensor<float>(z), g, gcfg);
  const Prepared p = prepare(nets, c);
  const AffineMap map = signed_range_map();

  SliceAms out;
  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(1, c.channels.data.cols()), sq = sum;
  for (int i = 0; i < opt.n_samples; ++i) {
    Rng rng(derive_seed(opt.seed, "sample",
                        {hash_string(subject_id), static_cast<std::uint64_t>(z), static_cast<std::uint64_t>(i)}));
    const Tensor<float> r0 = refine(nets, c, p, inference, rng);
    Tensor<float> y = r0;
    y.data = (p.x_cp.data + r0.data).cwiseMax(-1.0f).cwiseMin(1.0f);
    y.data.array() = map.invert(y.data.array()).max(0.0f).min(1.0f);
    sum += y.data.array().cast<double>();
    sq += y.data.array().cast<double>().square();
    out.samples.push_back(std::move(y));
  }
  const double n = opt.n_samples;
  out.mean = Tensor<float>(1, c.channels.height, c.channels.width);
  out.mean.data = (sum / n).cast<float>().matrix();
  out.sd = Tensor<float>(1, c.channels.height, c.channels.width);
  if (opt.n_samples > 1) out.sd.data = (sq / n - (sum / n).square()).max(0.0).sqrt().cast<float>().matrix();
  return out;
}

VolumeReconstruction reconstruct_volume(const Volume& lpet, const Networks<float>& nets, const NoiseSchedule& train,
                                        const GuidanceConfig& gcfg, const ReconstructOptions& opt,
                                        const std::string& subject_id) {
  if (lpet.empty()) throw DataError("reconstruct_volume: empty input");
  const int f = 1 << gcfg.pyramid_levels;
  if (lpet.height % f || lpet.width % f) {
    throw ShapeError("input slices are " + std::to_string(lpet.height) + "x" + std::to_string(lpet.width) +
                     "; height and width must be divisible by 2^" + std::to_string(gcfg.pyramid_levels) + " = " +
                     std::to_string(f) + " (crop or pad the volume)");
  }
  VolumeReconstruction out;
  out.rpet = Volume(lpet.depth, lpet.height, lpet.width);
  out.sd = Volume(lpet.depth, lpet.height, lpet.width);
  if (opt.keep_samples) out.samples.assign(static_cast<std::size_t>(opt.n_samples), out.rpet);

  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int z = next++; z < lpet.depth; z = next++) {
      try {
        SliceAms s = reconstruct_slice_ams(nets, lpet, z, train, gcfg, opt, subject_id);
        out.rpet.slice(z) = s.mean.plane(0);
        out.sd.slice(z) = s.sd.plane(0);
        if (opt.keep_samples) {
          for (std::size_t i = 0; i < s.samples.size(); ++i) out.samples[i].slice(z) = s.samples[i].plane(0);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = lpet.depth;
      }
    }
  };
  const int n_threads = std::max(1, std::min(opt.threads, lpet.depth));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

ReconstructOptions reconstruct_options(const RunConfig& cfg) {
  ReconstructOptions o;
  o.n_steps = cfg.sample.n_inference_steps;
  o.n_samples = cfg.sample.n_samples_for_ams;
  o.threads = cfg.sample.threads;
  o.seed = cfg.seed;
  return o;
}

EvaluationSummary evaluate_model(const Model& model, const std::vector<PairedVolume>& pairs,
                                 const ReconstructOptions& opt) {
  if (pairs.empty()) throw DataError("evaluate_model: no volumes");
  EvaluationSummary s;
  for (const auto& p : pairs) {
    const VolumeReconstruction rec =
        reconstruct_volume(p.lpet, model.nets, model.schedule, model.config.guidance(), opt, p.subject_id);
    VolumeEvaluation e;
    e.subject_id = p.subject_id;
    e.rpet = evaluate_volume(rec.rpet, p.spet);
    e.lpet = evaluate_volume(p.lpet, p.spet);
    e.sd_mean = sd_summary(rec.sd);
    s.psnr_db += e.rpet.psnr_db;
    s.ssim += e.rpet.ssim;
    s.nmse += e.rpet.nmse;
    s.lpet_psnr_db += e.lpet.psnr_db;
    s.lpet_ssim += e.lpet.ssim;
    s.lpet_nmse += e.lpet.nmse;
    s.sd_mean += e.sd_mean;
    s.volumes.push_back(std::move(e));
  }
  const double n = static_cast<double>(pairs.size());
  s.psnr_db /= n;
  s.ssim /= n;
  s.nmse /= n;
  s.lpet_psnr_db /= n;
  s.lpet_ssim /= n;
  s.lpet_nmse /= n;
  s.sd_mean /= n;
  return s;
}

SliceEvaluation evaluate_slices(const Model& model, const std::vector<PairedVolume>& pairs, int n_per_volume,
                                const ReconstructOptions& opt) {
  if (pairs.empty()) throw DataError("evaluate_slices: no volumes");
  if (n_per_volume < 1) throw ParameterError("evaluate_slices: need at least one slice per volume");
  SliceEvaluation s;
  for (const auto& p : pairs) {
    const int d = p.spet.depth, n = std::min(n_per_volume, d);
    for (int i = 0; i < n; ++i) {
      const int z = static_cast<int>((2L * i + 1) * d / (2L * n));
      const Mat<double> t = p.spet.slice(z).cast<double>();
      if (t.squaredNorm() <= 1e-6) continue;
      const SliceAms a = reconstruct_slice_ams(model.nets, p.lpet, z, model.schedule, model.config.guidance(), opt,
                                               p.subject_id);
      const Eigen::Map<const Mat<float>> pred(a.mean.data.data(), p.spet.height, p.spet.width);
      SliceScore sc;
      sc.subject_id = p.subject_id;
      sc.z = z;
      const Mat<double> y = pred.cast<double>(), l = p.lpet.slice(z).cast<double>();
      sc.rpet = {z, psnr(y, t), ssim(y, t), nmse(y, t)};
      sc.lpet = {z, psnr(l, t), ssim(l, t), nmse(l, t)};
      sc.sd_mean = a.sd.data.cast<double>().mean();
      s.psnr_db += sc.rpet.psnr_db;
      s.ssim += sc.rpet.ssim;
      s.nmse += sc.rpet.nmse;
      s.lpet_psnr_db += sc.lpet.psnr_db;
      s.lpet_ssim += sc.lpet.ssim;
      s.lpet_nmse += sc.lpet.nmse;
      s.sd_mean += sc.sd_mean;
      s.slices.push_back(sc);
    }
  }
  if (s.slices.empty()) throw DataError("evaluate_slices: every selected slice is empty");
  const double n = static_cast<double>(s.slices.size());
  for (double* v : {&s.psnr_db, &s.ssim, &s.nmse, &s.lpet_psnr_db, &s.lpet_ssim, &s.lpet_nmse, &s.sd_mean}) *v /= n;
  return s;
}

void write_json_line(std::ostream& out, const json& record) {
  out << record.dump() << '\n';
  out.flush();
}

}  // namespace c2f
