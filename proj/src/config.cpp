#include "c2f/config.hpp"

#include <cmath>
#include <fstream>

namespace c2f {

using nlohmann::json;

namespace {

const char* spectrum_mode_name(SpectrumMode) { return "log_magnitude"; }

SpectrumMode parse_spectrum_mode(const std::string& s) {
  if (s == "log_magnitude") return SpectrumMode::log_magnitude;
  throw ConfigError("unknown guidance.spectrum_mode '" + s + "'");
}

// Overlay `user` onto `base`, which holds every known key with its default.
void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown configuration key '" + key + "'");
    json& slot = base[it.key()];
    const json& v = it.value();
    if (slot.is_object()) {
      merge_checked(slot, v, key);
    } else if (slot.is_number() && v.is_number()) {
      if (slot.is_number_integer() && !v.is_number_integer()) {
        const double d = v.get<double>();
        if (d != std::floor(d)) throw ConfigError(key + ": expected an integer, got " + v.dump());
        slot = static_cast<long long>(d);
      } else {
        slot = v;
      }
    } else if (slot.type() == v.type() || (slot.is_null())) {
      slot = v;
    } else {
      throw ConfigError(key + ": expected " + std::string(slot.type_name()) + ", got " + v.dump());
    }
  }
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["data"] = {{"dir", data.dir},       {"n_subjects", data.n_subjects},       {"size", data.size},
               {"drf", data.drf},       {"eval_fraction", data.eval_fraction}, {"counts", data.counts},
               {"blur_sigma", data.blur_sigma}};
  const GuidanceConfig& g = model.guidance;
  j["guidance"] = {{"n_neighbors", g.n_neighbors},
                   {"pyramid_levels", g.pyramid_levels},
                   {"spectrum_mode", spectrum_mode_name(g.spectrum_mode)},
                   {"use_nas", g.use_nas},
                   {"use_spectrum", g.use_spectrum}};
  j["networks"] = {
      {"use_cpm", model.use_cpm},
      {"use_irm", model.use_irm},
      {"attention", model.attention},
      {"aux_feature_channels", model.aux_feature_channels},
      {"coarse",
       {{"base_channels", model.coarse.base_channels},
        {"channel_multipliers", model.coarse.channel_multipliers},
        {"input_skip", model.coarse.input_skip}}},
      {"denoiser",
       {{"base_channels", model.denoiser.base_channels},
        {"channel_multipliers", model.denoiser.channel_multipliers},
        {"gamma_embedding_dim", model.denoiser.gamma_embedding_dim},
        {"noise_skip", model.denoiser.noise_skip}}}};
  j["losses"] = {{"weights", {{"m", losses.weights.m}, {"n", losses.weights.n}, {"k", losses.weights.k}}},
                 {"n_negatives", losses.n_negatives},
                 {"detach_residual", losses.detach_residual}};
  j["schedule"] = {{"kind", "linear"},
                   {"steps", schedule.steps},
                   {"beta_start", schedule.beta_start},
                   {"beta_end", schedule.beta_end}};
  j["train"] = {{"iterations", train.iterations},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"lr_decay_start", train.lr_decay_start},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"checkpoint_every", train.checkpoint_every},
                {"eval_every", train.eval_every},
                {"eval_slices", train.eval_slices}};
  j["sample"] = {{"n_inference_steps", sample.n_inference_steps},
                 {"n_samples_for_ams", sample.n_samples_for_ams},
                 {"threads", sample.threads}};
  return j;
}

RunConfig RunConfig::from_json(const json& user) {
  json t = RunConfig{}.to_json();
  merge_checked(t, user, "");
  RunConfig c;
  try {
    c.seed = t.at("seed").get<std::uint64_t>();
    const json& d = t.at("data");
    c.data.dir = d.at("dir");
    c.data.n_subjects = d.at("n_subjects");
    c.data.size = d.at("size").get<std::array<int, 3>>();
    c.data.drf = d.at("drf");
    c.data.eval_fraction = d.at("eval_fraction");
    c.data.counts = d.at("counts");
    c.data.blur_sigma = d.at("blur_sigma");

    const json& g = t.at("guidance");
    c.model.guidance.n_neighbors = g.at("n_neighbors");
    c.model.guidance.pyramid_levels = g.at("pyramid_levels");
    c.model.guidance.spectrum_mode = parse_spectrum_mode(g.at("spectrum_mode"));
    c.model.guidance.use_nas = g.at("use_nas");
    c.model.guidance.use_spectrum = g.at("use_spectrum");

    const json& n = t.at("networks");
    c.model.use_cpm = n.at("use_cpm");
    c.model.use_irm = n.at("use_irm");
    c.model.attention = n.at("attention");
    c.model.aux_feature_channels = n.at("aux_feature_channels");
    c.model.coarse.base_channels = n.at("coarse").at("base_channels");
    c.model.coarse.channel_multipliers = n.at("coarse").at("channel_multipliers").get<std::vector<int>>();
    c.model.coarse.input_skip = n.at("coarse").at("input_skip");
    c.model.denoiser.base_channels = n.at("denoiser").at("base_channels");
    c.model.denoiser.channel_multipliers = n.at("denoiser").at("channel_multipliers").get<std::vector<int>>();
    c.model.denoiser.gamma_embedding_dim = n.at("denoiser").at("gamma_embedding_dim");
    c.model.denoiser.noise_skip = n.at("denoiser").at("noise_skip");

    const json& l = t.at("losses");
    c.losses.weights.m = l.at("weights").at("m");
    c.losses.weights.n = l.at("weights").at("n");
    c.losses.weights.k = l.at("weights").at("k");
    c.losses.n_negatives = l.at("n_negatives");
    c.losses.detach_residual = l.at("detach_residual");

    const json& s = t.at("schedule");
    c.schedule.kind = parse_schedule_kind(s.at("kind").get<std::string>());
    c.schedule.steps = s.at("steps");
    c.schedule.beta_start = s.at("beta_start");
    c.schedule.beta_end = s.at("beta_end");

    const json& tr = t.at("train");
    c.train.iterations = tr.at("iterations");
    c.train.batch_size = tr.at("batch_size");
    c.train.learning_rate = tr.at("learning_rate");
    c.train.lr_decay_start = tr.at("lr_decay_start");
    c.train.adam_beta1 = tr.at("adam_beta1");
    c.train.adam_beta2 = tr.at("adam_beta2");
    c.train.adam_eps = tr.at("adam_eps");
    c.train.checkpoint_every = tr.at("checkpoint_every");
    c.train.eval_every = tr.at("eval_every");
    c.train.eval_slices = tr.at("eval_slices");

    const json& sm = t.at("sample");
    c.sample.n_inference_steps = sm.at("n_inference_steps");
    c.sample.n_samples_for_ams = sm.at("n_samples_for_ams");
    c.sample.threads = sm.at("threads");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

double learning_rate_at(const TrainConfig& cfg, long step) {
  const double start = cfg.lr_decay_start * static_cast<double>(cfg.iterations);
  const double span = static_cast<double>(cfg.iterations) - start;
  if (cfg.lr_decay_start >= 1.0 || span <= 0.0 || step < start) return cfg.learning_rate;
  return cfg.learning_rate * std::max(0.0, (static_cast<double>(cfg.iterations) - step) / span);
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  model.validate();
  try {
    schedule.build();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  losses.weights.validate();
  require(losses.n_negatives >= 0, "losses.n_negatives must be >= 0");

  require(data.n_subjects >= 1, "data.n_subjects must be positive");
  require(data.drf >= 1.0, "data.drf must be >= 1");
  require(data.counts > 0.0, "data.counts must be positive");
  require(data.blur_sigma >= 0.0, "data.blur_sigma must be >= 0");
  require(data.eval_fraction >= 0.0 && data.eval_fraction < 1.0, "data.eval_fraction must lie in [0, 1)");
  const int f = 1 << model.levels();
  require(data.size[0] >= 1 && data.size[1] >= 8 && data.size[2] >= 8 && data.size[1] % 8 == 0 &&
              data.size[2] % 8 == 0,
          "data.size: height and width must be positive multiples of 8");
  require(data.size[1] % f == 0 && data.size[2] % f == 0,
          "data.size: height and width must be divisible by 2^guidance.pyramid_levels = " + std::to_string(f));

  require(train.iterations >= 0, "train.iterations must be >= 0");
  require(train.batch_size >= 1, "train.batch_size must be positive");
  require(train.learning_rate > 0.0, "train.learning_rate must be positive");
  require(train.lr_decay_start >= 0.0 && train.lr_decay_start <= 1.0, "train.lr_decay_start must lie in [0, 1]");
  require(train.adam_beta1 >= 0.0 && train.adam_beta1 < 1.0 && train.adam_beta2 >= 0.0 && train.adam_beta2 < 1.0,
          "train.adam_beta1/2 must lie in [0, 1)");
  require(train.adam_eps > 0.0, "train.adam_eps must be positive");
  require(train.checkpoint_every >= 0 && train.eval_every >= 0, "train.checkpoint_every/eval_every must be >= 0");
  require(train.eval_slices >= 1, "train.eval_slices must be positive");

  require(sample.n_inference_steps >= 1 && sample.n_inference_steps <= schedule.steps,
          "sample.n_inference_steps must lie in [1, schedule.steps]");
  require(sample.n_samples_for_ams >= 1, "sample.n_samples_for_ams must be positive");
  require(sample.threads >= 1, "sample.threads must be positive");
}

void apply_override(json& tree, const std::string& dotted_key, const std::string& value) {
  std::string key = dotted_key;
  if (key.rfind("weights.", 0) == 0) key = "losses." + key;
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown configuration key '" + dotted_key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("'" + dotted_key + "' names a section, not a key");
  json v;
  if (node->is_string()) {
    v = value;
  } else {
    try {
      v = json::parse(value);
    } catch (const json::exception&) {
      throw ConfigError("cannot parse value '" + value + "' for " + dotted_key);
    }
  }
  // Reuse the merge rules for type checking.
  json wrapper = json::object();
  json base = json::object();
  base["v"] = *node;
  wrapper["v"] = v;
  merge_checked(base, wrapper, "");
  *node = base["v"];
}

AblationVariant parse_variant(const std::string& name) {
  for (AblationVariant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + name +
                    "' (expected baseline_direct, cpm_only, cpm_irm, plus_nas, plus_spectrum, plus_contrastive)");
}

std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::baseline_direct: return "baseline_direct";
    case AblationVariant::cpm_only: return "cpm_only";
    case AblationVariant::cpm_irm: return "cpm_irm";
    case AblationVariant::plus_nas: return "plus_nas";
    case AblationVariant::plus_spectrum: return "plus_spectrum";
    case AblationVariant::plus_contrastive: return "plus_contrastive";
  }
  return "?";
}

const std::vector<AblationVariant>& all_variants() {
  static const std::vector<AblationVariant> v{AblationVariant::baseline_direct, AblationVariant::cpm_only,
                                              AblationVariant::cpm_irm,         AblationVariant::plus_nas,
                                              AblationVariant::plus_spectrum,   AblationVariant::plus_contrastive};
  return v;
}

RunConfig apply_variant(const RunConfig& base, AblationVariant v) {
  RunConfig c = base;
  const LossWeights w = base.losses.weights;
  c.model.use_cpm = v != AblationVariant::baseline_direct;
  c.model.use_irm = v != AblationVariant::cpm_only;
  c.model.guidance.use_nas = v >= AblationVariant::plus_nas;
  c.model.guidance.use_spectrum = v >= AblationVariant::plus_spectrum;
  c.losses.weights.m = c.model.guidance.use_nas ? w.m : 0.0;
  c.losses.weights.n = c.model.guidance.use_spectrum ? w.n : 0.0;
  c.losses.weights.k = v == AblationVariant::plus_contrastive ? w.k : 0.0;
  if (v == AblationVariant::baseline_direct) {
    // A single full-size diffusion network on the image itself.
    c.model.denoiser.base_channels = base.model.coarse.base_channels;
    c.model.denoiser.channel_multipliers = base.model.coarse.channel_multipliers;
  }
  return c;
}

}  // namespace c2f
