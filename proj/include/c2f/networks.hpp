#pragma once

// The two U-shaped networks (coarse predictor and noise-level conditioned
// denoiser), the auxiliary feature extractor with its per-level
// reconstruction heads, and the bundle that owns their parameters.

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "c2f/guidance.hpp"
#include "c2f/nn.hpp"

namespace c2f {

struct CoarsePredictorConfig {
  int base_channels = 96;
  std::vector<int> channel_multipliers{1, 2, 4};
  int out_channels = 1;
  bool input_skip = false;  // x_cp = LPET channel + U-Net output
};

struct DenoiserConfig {
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4};
  int gamma_embedding_dim = 32;
  bool noise_skip = false;  // eps_hat = sqrt(1 - gamma) * r_t + U-Net output
};

/// Everything needed to rebuild the parameter layout. The number of encoder
/// downsamplings equals guidance.pyramid_levels.
struct ModelConfig {
  CoarsePredictorConfig coarse;
  DenoiserConfig denoiser;
  GuidanceConfig guidance;
  int aux_feature_channels = 16;
  bool use_cpm = true;
  bool use_irm = true;
  bool attention = true;

  int levels() const { return guidance.pyramid_levels; }
  int aux_channels() const { return guidance.aux_channels(); }
  /// LPET slice plus the guidance channels.
  int condition_channels() const { return 1 + aux_channels(); }
  bool guided() const { return aux_channels() > 0; }

  void validate() const;
};

struct UNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4};
  int levels = 3;
  int gamma_embedding_dim = 0;  // 0: no noise-level conditioning
  std::vector<int> guide_channels;  // per encoder level k = 1..M; 0 = plain block
  bool attention = true;

  int channels_at(int level) const {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(level), channel_multipliers.size() - 1);
    return base_channels * channel_multipliers[i];
  }
};

/// Encoder: conv_in and a block at full resolution, then M (avg-pool, block)
/// stages, block k being guided when guide_channels[k-1] > 0. Bottleneck
/// block plus attention. Decoder mirrors with skip concatenation and
/// nearest upsampling; the output convolution starts at zero.
template <class S>
class UNet {
 public:
  static UNet create(nn::ParamSet<S>& ps, const std::string& prefix, const UNetConfig& cfg, Rng& rng) {
    if (cfg.channel_multipliers.empty()) throw ConfigError(prefix + ": channel_multipliers must not be empty");
    UNet u;
    u.cfg_ = cfg;
    const int M = cfg.levels;
    int emb_out = 0;
    if (cfg.gamma_embedding_dim > 0) {
      emb_out = 2 * cfg.gamma_embedding_dim;
      u.emb1_ = nn::Conv2d<S>::create(ps, prefix + ".emb.fc1", cfg.gamma_embedding_dim, emb_out, 1, rng);
      u.emb2_ = nn::Conv2d<S>::create(ps, prefix + ".emb.fc2", emb_out, emb_out, 1, rng);
    }
    const int c0 = cfg.channels_at(0);
    u.conv_in_ = nn::Conv2d<S>::create(ps, prefix + ".conv_in", cfg.in_channels, c0, 3, rng);
    u.down_.push_back(nn::ResBlock<S>::create(ps, prefix + ".down0", c0, c0, 0, emb_out, rng));
    for (int k = 1; k <= M; ++k) {
      const int g = k - 1 < static_cast<int>(cfg.guide_channels.size()) ? cfg.guide_channels[k - 1] : 0;
      u.down_.push_back(nn::ResBlock<S>::create(ps, prefix + ".down" + std::to_string(k), cfg.channels_at(k - 1),
                                                cfg.channels_at(k), g, emb_out, rng));
    }
    const int cm = cfg.channels_at(M);
    u.mid_ = nn::ResBlock<S>::create(ps, prefix + ".mid", cm, cm, 0, emb_out, rng);
    if (cfg.attention) u.attn_ = nn::Attention<S>::create(ps, prefix + ".mid.attn", cm, rng);
    for (int k = M; k >= 0; --k) {
      const int cin = cfg.channels_at(std::min(k + 1, M)) + cfg.channels_at(k);
      u.up_.push_back(
          nn::ResBlock<S>::create(ps, prefix + ".up" + std::to_string(k), cin, cfg.channels_at(k), 0, emb_out, rng));
    }
    u.norm_out_ = nn::GroupNorm<S>::create(ps, prefix + ".norm_out", c0);
    u.conv_out_ = nn::Conv2d<S>::create(ps, prefix + ".conv_out", c0, cfg.out_channels, 3, rng, /*zero_init=*/true);
    return u;
  }

  const UNetConfig& config() const { return cfg_; }

  /// guides: empty, or one feature map per encoder level k = 1..M (invalid
  /// Vars are skipped).
  ag::Var<S> forward(nn::Binder<S>& b, ag::Var<S> x, std::optional<double> gamma,
                 const std::vector<ag::Var<S>>& guides = {}) const {
    const ag::Shape sh = x.shape();
    if (sh.c != cfg_.in_channels) {
      throw ShapeError("unet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(sh.c));
    }
    const int M = cfg_.levels;
    if (sh.h % (1 << M) || sh.w % (1 << M)) {
      throw ShapeError("unet: spatial size " + shape_string(sh.c, sh.h, sh.w) + " not divisible by 2^" +
                       std::to_string(M));
    }
    if (!guides.empty() && static_cast<int>(guides.size()) != M) throw ShapeError("unet: guide level count mismatch");

    ag::Var<S> emb;
    if (cfg_.gamma_embedding_dim > 0) {
      if (!gamma) throw ParameterError("unet: noise level required by a conditioned network");
      const int d = cfg_.gamma_embedding_dim;
      ag::Var<S> e = b.tape().constant(ag::Shape{d, 1, 1}, nn::noise_level_embedding<S>(*gamma, d));
      e = (*emb2_)(b, ag::silu((*emb1_)(b, e)));
      emb = ag::silu(e);
    }

    std::vector<ag::Var<S>> skips;
    ag::Var<S> h = conv_in_(b, x);
    h = down_[0](b, h, emb, {});
    skips.push_back(h);
    for (int k = 1; k <= M; ++k) {
      h = ag::avg_pool2(h);
      const ag::Var<S> g = guides.empty() ? ag::Var<S>{} : guides[static_cast<std::size_t>(k - 1)];
      h = down_[static_cast<std::size_t>(k)](b, h, emb, g);
      skips.push_back(h);
    }
    h = mid_(b, h, emb, {});
    if (attn_) h = (*attn_)(b, h);
    for (int k = M, i = 0; k >= 0; --k, ++i) {
      h = up_[static_cast<std::size_t>(i)](b, ag::concat<S>({h, skips[static_cast<std::size_t>(k)]}), emb, {});
      if (k > 0) h = ag::upsample2(h);
    }
    return conv_out_(b, ag::silu(norm_out_(b, h)));
  }

  /// Multiply-accumulates of one forward pass at the given input size.
  long long macs(int height, int width) const {
    const int M = cfg_.levels;
    long long m = conv_in_.macs(height, width) + down_[0].macs(height, width);
    if (emb1_) m += emb1_->macs(1, 1) + emb2_->macs(1, 1);
    for (int k = 1; k <= M; ++k) m += down_[static_cast<std::size_t>(k)].macs(height >> k, width >> k);
    m += mid_.macs(height >> M, width >> M);
    if (attn_) m += attn_->macs(height >> M, width >> M);
    for (int k = M, i = 0; k >= 0; --k, ++i) m += up_[static_cast<std::size_t>(i)].macs(height >> k, width >> k);
    return m + conv_out_.macs(height, width);
  }

 private:
  UNetConfig cfg_;
  std::optional<nn::Conv2d<S>> emb1_, emb2_;
  nn::Conv2d<S> conv_in_;
  std::vector<nn::ResBlock<S>> down_;
  nn::ResBlock<S> mid_;
  std::optional<nn::Attention<S>> attn_;
  std::vector<nn::ResBlock<S>> up_;
  nn::GroupNorm<S> norm_out_;
  nn::Conv2d<S> conv_out_;
};

/// Shared two-layer convolutional trunk applied to every pyramid level, a
/// per-level 1x1 projection to the encoder width, and per-level 3x3
/// reconstruction heads back to the guidance channels.
template <class S>
class AuxGuidance {
 public:
  static AuxGuidance create(nn::ParamSet<S>& ps, const std::string& prefix, int aux_channels, int feature_channels,
                            const std::vector<int>& level_channels, Rng& rng) {
    AuxGuidance a;
    a.aux_channels_ = aux_channels;
    a.trunk1_ = nn::Conv2d<S>::create(ps, prefix + ".trunk1", aux_channels, feature_channels, 3, rng);
    a.trunk2_ = nn::Conv2d<S>::create(ps, prefix + ".trunk2", feature_channels, feature_channels, 3, rng);
    for (std::size_t k = 0; k < level_channels.size(); ++k) {
      a.proj_.push_back(nn::Conv2d<S>::create(ps, prefix + ".proj" + std::to_string(k + 1), feature_channels,
                                              level_channels[k], 1, rng));
    }
    for (std::size_t k = 0; k < level_channels.size(); ++k) {
      a.heads_.push_back(nn::Conv2d<S>::create(ps, prefix + ".head" + std::to_string(k + 1), level_channels[k],
                                               aux_channels, 3, rng));
    }
    return a;
  }

  int levels() const { return static_cast<int>(proj_.size()); }
  int aux_channels() const { return aux_channels_; }

  /// f_aux^k for k = 1..M from the guidance pyramid x_aux^k.
  std::vector<ag::Var<S>> extract(nn::Binder<S>& b, const std::vector<ag::Var<S>>& pyramid) const {
    if (static_cast<int>(pyramid.size()) != levels()) {
      throw ConfigError("aux features: expected " + std::to_string(levels()) + " pyramid levels, got " +
                        std::to_string(pyramid.size()));
    }
    std::vector<ag::Var<S>> out;
    for (int k = 0; k < levels(); ++k) {
      const ag::Var<S>& x = pyramid[static_cast<std::size_t>(k)];
      if (x.shape().c != aux_channels_) throw ShapeError("aux features: guidance channel mismatch");
      ag::Var<S> f = ag::silu(trunk2_(b, ag::silu(trunk1_(b, x))));
      out.push_back(proj_[static_cast<std::size_t>(k)](b, f));
    }
    return out;
  }

  /// Reconstruction of the guidance at level k (1-based) from its features.
  ag::Var<S> head(nn::Binder<S>& b, ag::Var<S> feature, int level) const {
    if (level < 1 || level > levels()) throw ParameterError("aux head: level out of range");
    return heads_[static_cast<std::size_t>(level - 1)](b, feature);
  }

  long long macs(int height, int width) const {
    long long m = 0;
    for (int k = 1; k <= levels(); ++k) {
      const int h = height >> k, w = width >> k;
      m += trunk1_.macs(h, w) + trunk2_.macs(h, w) + proj_[static_cast<std::size_t>(k - 1)].macs(h, w);
    }
    return m;
  }

 private:
  int aux_channels_ = 0;
  nn::Conv2d<S> trunk1_, trunk2_;
  std::vector<nn::Conv2d<S>> proj_;
  std::vector<nn::Conv2d<S>> heads_;
};

/// Forward-pass counters, for the cost-delegation checks.
struct CallCounters {
  std::atomic<long> cpm{0};
  std::atomic<long> denoiser{0};
  std::atomic<long> aux{0};

  CallCounters() = default;
  CallCounters(const CallCounters& o) : cpm(o.cpm.load()), denoiser(o.denoiser.load()), aux(o.aux.load()) {}
  CallCounters& operator=(const CallCounters& o) {
    cpm = o.cpm.load();
    denoiser = o.denoiser.load();
    aux = o.aux.load();
    return *this;
  }
  void reset() { cpm = denoiser = aux = 0; }
};

/// Parameter names are prefixed "cpm.", "denoiser." and "aux.".
template <class S>
class Networks {
 public:
  static Networks create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Networks n;
    n.cfg_ = cfg;
    Rng rng(derive_seed(seed, "init"));
    const int M = cfg.levels();
    if (cfg.use_cpm) {
      UNetConfig u;
      u.in_channels = cfg.condition_channels();
      u.out_channels = cfg.coarse.out_channels;
      u.base_channels = cfg.coarse.base_channels;
      u.channel_multipliers = cfg.coarse.channel_multipliers;
      u.levels = M;
      u.attention = cfg.attention;
      n.cpm_ = UNet<S>::create(n.params_, "cpm", u, rng);
    }
    if (cfg.use_irm) {
      UNetConfig u;
      u.in_channels = cfg.condition_channels() + 1;
      u.out_channels = 1;
      u.base_channels = cfg.denoiser.base_channels;
      u.channel_multipliers = cfg.denoiser.channel_multipliers;
      u.levels = M;
      u.gamma_embedding_dim = cfg.denoiser.gamma_embedding_dim;
      u.attention = cfg.attention;
      std::vector<int> level_channels;
      for (int k = 1; k <= M; ++k) level_channels.push_back(u.channels_at(k));
      if (cfg.guided()) u.guide_channels = level_channels;
      n.denoiser_ = UNet<S>::create(n.params_, "denoiser", u, rng);
      if (cfg.guided()) {
        n.aux_ = AuxGuidance<S>::create(n.params_, "aux", cfg.aux_channels(), cfg.aux_feature_channels,
                                        level_channels, rng);
      }
    }
    return n;
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet<S>& params() { return params_; }
  const nn::ParamSet<S>& params() const { return params_; }
  CallCounters& counters() const { return counters_; }

  bool has_cpm() const { return cpm_.has_value(); }
  bool has_irm() const { return denoiser_.has_value(); }
  bool has_aux() const { return aux_.has_value(); }
  const UNet<S>& cpm() const { return *cpm_; }
  const UNet<S>& denoiser() const { return *denoiser_; }
  const AuxGuidance<S>& aux() const { return *aux_; }

  /// Coarse prediction x_cp from the condition channels. Zero when the
  /// variant has no coarse predictor.
  ag::Var<S> cpm_forward(nn::Binder<S>& b, ag::Var<S> condition) const {
    if (condition.shape().c != cfg_.condition_channels()) {
      throw ShapeError("cpm: expected " + std::to_string(cfg_.condition_channels()) + " condition channels, got " +
                       std::to_string(condition.shape().c));
    }
    if (!cpm_) {
      const ag::Shape sh = condition.shape();
      return b.tape().constant(ag::Shape{1, sh.h, sh.w}, Mat<S>::Zero(1, sh.pixels()));
    }
    ++counters_.cpm;
    ag::Var<S> out = cpm_->forward(b, condition, std::nullopt);
    if (cfg_.coarse.input_skip) out = ag::add(out, ag::slice_channels(condition, 0, 1));
    return out;
  }

  std::vector<ag::Var<S>> extract_aux_features(nn::Binder<S>& b, const std::vector<ag::Var<S>>& pyramid) const {
    if (!aux_) return {};
    ++counters_.aux;
    return aux_->extract(b, pyramid);
  }

  ag::Var<S> aux_head(nn::Binder<S>& b, ag::Var<S> feature, int level) const {
    if (!aux_) throw ConfigError("aux head requested but guidance is disabled");
    return aux_->head(b, feature, level);
  }

  /// Noise prediction from the condition, the noisy residual and gamma.
  ag::Var<S> irm_denoise(nn::Binder<S>& b, ag::Var<S> condition, ag::Var<S> r_t, double gamma,
                         const std::vector<ag::Var<S>>& aux_features) const {
    if (!denoiser_) throw ConfigError("denoiser requested but the iterative refinement module is disabled");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("irm_denoise: gamma must lie in (0, 1]");
    if (r_t.shape().c != 1 || r_t.shape().h != condition.shape().h || r_t.shape().w != condition.shape().w) {
      throw ShapeError("irm_denoise: residual must be a single channel matching the condition");
    }
    ++counters_.denoiser;
    ag::Var<S> out = denoiser_->forward(b, ag::concat<S>({condition, r_t}), gamma, aux_features);
    if (cfg_.denoiser.noise_skip) out = ag::add(out, ag::scale(r_t, static_cast<S>(std::sqrt(1.0 - gamma))));
    return out;
  }

  Eigen::Index cpm_parameters() const { return params_.count("cpm."); }
  Eigen::Index denoiser_parameters() const { return params_.count("denoiser."); }
  Eigen::Index aux_parameters() const { return params_.count("aux."); }

  long long denoiser_macs(int height, int width) const { return denoiser_ ? denoiser_->macs(height, width) : 0; }

  /// Per-slice inference cost: one coarse pass, one guidance extraction and
  /// n_steps denoiser passes.
  long long inference_macs(int height, int width, int n_steps) const {
    long long m = 0;
    if (cpm_) m += cpm_->macs(height, width);
    if (aux_) m += aux_->macs(height, width);
    if (denoiser_) m += static_cast<long long>(n_steps) * denoiser_->macs(height, width);
    return m;
  }

 private:
  ModelConfig cfg_;
  nn::ParamSet<S> params_;
  std::optional<UNet<S>> cpm_;
  std::optional<UNet<S>> denoiser_;
  std::optional<AuxGuidance<S>> aux_;
  mutable CallCounters counters_;
};

}  // namespace c2f
