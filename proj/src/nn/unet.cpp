#include "patchdiff/nn/unet.hpp"

#include <cmath>

#include "patchdiff/errors.hpp"
#include "patchdiff/rng.hpp"

namespace patchdiff::nn {

void UNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("unet config: " + msg); };
  if (patch_size < 1) fail("patch_size must be positive");
  if (base_channels < 2 || base_channels % 2 != 0) fail("base_channels must be even and >= 2");
  if (channel_multipliers.empty()) fail("channel_multipliers must not be empty");
  for (int m : channel_multipliers) {
    if (m < 1) fail("channel multipliers must be positive");
  }
  if (patch_size % (1 << (levels() - 1)) != 0) {
    fail("patch_size " + std::to_string(patch_size) + " not divisible by 2^(levels-1)");
  }
  if (num_res_blocks < 1) fail("num_res_blocks must be >= 1");
  if (groupnorm_groups < 1) fail("groupnorm_groups must be >= 1");
  if (time_embed_dim < 1) fail("time_embed_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  // Every normalised width: stage outputs and decoder concatenations.
  std::vector<int> skips{base_channels};
  int ch = base_channels;
  auto check_groups = [&](int c) {
    if (c % groupnorm_groups != 0) {
      fail(std::to_string(c) + " channels not divisible by groupnorm_groups=" + std::to_string(groupnorm_groups));
    }
  };
  for (int i = 0; i < levels(); ++i) {
    for (int b = 0; b < num_res_blocks; ++b) {
      check_groups(ch);
      ch = base_channels * channel_multipliers[i];
      skips.push_back(ch);
    }
    if (i + 1 < levels()) skips.push_back(ch);
  }
  check_groups(ch);
  for (int i = levels() - 1; i >= 0; --i) {
    for (int b = 0; b <= num_res_blocks; ++b) {
      check_groups(ch + skips.back());
      skips.pop_back();
      ch = base_channels * channel_multipliers[i];
    }
  }
  check_groups(ch);
}

UNetConfig default_unet_config(int patch_size) {
  UNetConfig cfg;
  cfg.patch_size = patch_size;
  if (patch_size == 128) {
    cfg.channel_multipliers = {1, 1, 2, 2, 4};
  } else if (patch_size != 64) {
    throw ConfigError("no default backbone for patch size " + std::to_string(patch_size));
  }
  return cfg;
}

std::vector<double> time_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw RangeError("time embedding dimension must be even and >= 2, got " + std::to_string(dim));
  }
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int k = 0; k < half; ++k) {
    const double exponent = half == 1 ? 0.0 : static_cast<double>(k) / (half - 1);
    const double freq = std::pow(10000.0, -exponent);
    out[2 * k] = std::sin(t * freq);
    out[2 * k + 1] = std::cos(t * freq);
  }
  return out;
}

enum class Init { kFanIn, kZero, kOne };

struct ParamSpec {
  std::string name;
  std::vector<int> shape;  // n, c, h, w
  Init init;
};

struct ConvRef {
  int weight = -1, bias = -1;
  ConvGeometry geom;
};
struct NormRef {
  int gamma = -1, beta = -1;
};
struct LinearRef {
  int weight = -1, bias = -1;
};
struct ResBlockRef {
  NormRef norm1;
  ConvRef conv1;
  LinearRef time_proj;
  NormRef norm2;
  ConvRef conv2;
  std::optional<ConvRef> skip;
};
struct AttentionRef {
  NormRef norm;
  ConvRef q, k, v, proj;
};
struct Stage {
  std::vector<ResBlockRef> blocks;
  std::vector<std::optional<AttentionRef>> attention;
  std::optional<ConvRef> resample;
};

struct UNetLayout {
  std::vector<ParamSpec> specs;
  LinearRef time_fc1, time_fc2;
  ConvRef conv_in;
  std::vector<Stage> down;
  ResBlockRef mid1, mid2;
  std::optional<AttentionRef> mid_attention;
  std::vector<Stage> up;  // deepest level first
  NormRef out_norm;
  ConvRef conv_out;
};

namespace {

class LayoutBuilder {
 public:
  explicit LayoutBuilder(const UNetConfig& cfg) : cfg_(cfg) {}

  std::shared_ptr<UNetLayout> build() {
    auto layout = std::make_shared<UNetLayout>();
    layout_ = layout.get();
    const int base = cfg_.base_channels;
    layout_->time_fc1 = linear("time.fc1", base, cfg_.time_embed_dim);
    layout_->time_fc2 = linear("time.fc2", cfg_.time_embed_dim, cfg_.time_embed_dim);
    layout_->conv_in = conv("conv_in", UNetConfig::kInputChannels, base, 3, {1, 1});

    std::vector<int> skips{base};
    int ch = base;
    int res = cfg_.patch_size;
    for (int i = 0; i < cfg_.levels(); ++i) {
      Stage stage;
      const int out = base * cfg_.channel_multipliers[i];
      for (int b = 0; b < cfg_.num_res_blocks; ++b) {
        const std::string prefix = "down." + std::to_string(i) + "." + std::to_string(b);
        stage.blocks.push_back(res_block(prefix + ".res", ch, out));
        ch = out;
        stage.attention.push_back(res == cfg_.attention_resolution
                                      ? std::optional(attention(prefix + ".attn", ch))
                                      : std::nullopt);
        skips.push_back(ch);
      }
      if (i + 1 < cfg_.levels()) {
        stage.resample = conv("down." + std::to_string(i) + ".downsample", ch, ch, 3, {2, 1});
        res /= 2;
        skips.push_back(ch);
      }
      layout_->down.push_back(std::move(stage));
    }

    layout_->mid1 = res_block("mid.res1", ch, ch);
    if (res == cfg_.attention_resolution) layout_->mid_attention = attention("mid.attn", ch);
    layout_->mid2 = res_block("mid.res2", ch, ch);

    for (int i = cfg_.levels() - 1; i >= 0; --i) {
      Stage stage;
      const int out = base * cfg_.channel_multipliers[i];
      for (int b = 0; b <= cfg_.num_res_blocks; ++b) {
        const std::string prefix = "up." + std::to_string(i) + "." + std::to_string(b);
        stage.blocks.push_back(res_block(prefix + ".res", ch + skips.back(), out));
        skips.pop_back();
        ch = out;
        stage.attention.push_back(res == cfg_.attention_resolution
                                      ? std::optional(attention(prefix + ".attn", ch))
                                      : std::nullopt);
      }
      if (i > 0) {
        stage.resample = conv("up." + std::to_string(i) + ".upsample", ch, ch, 3, {1, 1});
        res *= 2;
      }
      layout_->up.push_back(std::move(stage));
    }

    layout_->out_norm = norm("out.norm", ch);
    layout_->conv_out = conv("out.conv", ch, UNetConfig::kOutputChannels, 3, {1, 1}, Init::kZero);
    return layout;
  }

 private:
  int add(std::string name, std::vector<int> shape, Init init) {
    layout_->specs.push_back(ParamSpec{std::move(name), std::move(shape), init});
    return static_cast<int>(layout_->specs.size()) - 1;
  }

  ConvRef conv(const std::string& name, int in, int out, int k, ConvGeometry geom, Init init = Init::kFanIn) {
    ConvRef ref;
    ref.weight = add(name + ".weight", {out, in, k, k}, init);
    ref.bias = add(name + ".bias", {1, out, 1, 1}, Init::kZero);
    ref.geom = geom;
    return ref;
  }

  LinearRef linear(const std::string& name, int in, int out) {
    LinearRef ref;
    ref.weight = add(name + ".weight", {out, in, 1, 1}, Init::kFanIn);
    ref.bias = add(name + ".bias", {1, out, 1, 1}, Init::kZero);
    return ref;
  }

  NormRef norm(const std::string& name, int ch) {
    NormRef ref;
    ref.gamma = add(name + ".weight", {1, ch, 1, 1}, Init::kOne);
    ref.beta = add(name + ".bias", {1, ch, 1, 1}, Init::kZero);
    return ref;
  }

  ResBlockRef res_block(const std::string& name, int in, int out) {
    ResBlockRef ref;
    ref.norm1 = norm(name + ".norm1", in);
    ref.conv1 = conv(name + ".conv1", in, out, 3, {1, 1});
    ref.time_proj = linear(name + ".time_proj", cfg_.time_embed_dim, out);
    ref.norm2 = norm(name + ".norm2", out);
    ref.conv2 = conv(name + ".conv2", out, out, 3, {1, 1});
    if (in != out) ref.skip = conv(name + ".skip", in, out, 1, {1, 0});
    return ref;
  }

  AttentionRef attention(const std::string& name, int ch) {
    AttentionRef ref;
    ref.norm = norm(name + ".norm", ch);
    ref.q = conv(name + ".q", ch, ch, 1, {1, 0});
    ref.k = conv(name + ".k", ch, ch, 1, {1, 0});
    ref.v = conv(name + ".v", ch, ch, 1, {1, 0});
    ref.proj = conv(name + ".proj", ch, ch, 1, {1, 0});
    return ref;
  }

  const UNetConfig& cfg_;
  UNetLayout* layout_ = nullptr;
};

std::shared_ptr<const UNetLayout> make_layout(const UNetConfig& config) {
  config.validate();
  return LayoutBuilder(config).build();
}

template <typename Real>
class ForwardPass {
 public:
  ForwardPass(Graph<Real>& g, const UNetConfig& cfg, const std::vector<int>& p, Rng* rng)
      : g_(g), cfg_(cfg), p_(p), rng_(rng) {}

  int conv(const ConvRef& ref, int x) { return conv2d(g_, x, p_[ref.weight], p_[ref.bias], ref.geom); }
  int norm(const NormRef& ref, int x) { return group_norm(g_, x, p_[ref.gamma], p_[ref.beta], cfg_.groupnorm_groups); }
  int dense(const LinearRef& ref, int x) { return linear(g_, x, p_[ref.weight], p_[ref.bias]); }

  int res_block(const ResBlockRef& ref, int x, int temb_act) {
    int h = conv(ref.conv1, silu(g_, norm(ref.norm1, x)));
    h = add_channel_bias(g_, h, dense(ref.time_proj, temb_act));
    h = silu(g_, norm(ref.norm2, h));
    if (rng_ && cfg_.dropout > 0.0) h = dropout(g_, h, cfg_.dropout, *rng_);
    h = conv(ref.conv2, h);
    const int skip = ref.skip ? conv(*ref.skip, x) : x;
    return add(g_, skip, h);
  }

  int attention_block(const AttentionRef& ref, int x) {
    const int h = norm(ref.norm, x);
    const int a = attention(g_, conv(ref.q, h), conv(ref.k, h), conv(ref.v, h));
    return add(g_, x, conv(ref.proj, a));
  }

 private:
  Graph<Real>& g_;
  const UNetConfig& cfg_;
  const std::vector<int>& p_;
  Rng* rng_;
};

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> unet_parameter_shapes(const UNetConfig& config) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  const auto layout = make_layout(config);
  for (const ParamSpec& spec : layout->specs) out.emplace_back(spec.name, spec.shape);
  return out;
}

std::size_t unet_parameter_count(const UNetConfig& config) {
  std::size_t total = 0;
  for (const auto& [name, shape] : unet_parameter_shapes(config)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    total += n;
  }
  return total;
}

template <typename Real>
UNet<Real>::UNet(UNetConfig config, std::uint64_t seed) : config_(std::move(config)), layout_(make_layout(config_)) {
  Rng rng(seed);
  params_.reserve(layout_->specs.size());
  for (const ParamSpec& spec : layout_->specs) {
    Tensor<Real> t(spec.shape[0], spec.shape[1], spec.shape[2], spec.shape[3]);
    switch (spec.init) {
      case Init::kZero:
        break;
      case Init::kOne:
        t.fill(Real(1));
        break;
      case Init::kFanIn: {
        const double std = 1.0 / std::sqrt(static_cast<double>(t.item_size()));
        for (Real& v : t.values()) v = static_cast<Real>(std * rng.normal());
        break;
      }
    }
    params_.push_back(Parameter<Real>{spec.name, std::move(t)});
  }
}

template <typename Real>
UNet<Real>::UNet(UNetConfig config, std::vector<Parameter<Real>> parameters)
    : config_(std::move(config)), layout_(make_layout(config_)), params_(std::move(parameters)) {
  if (params_.size() != layout_->specs.size()) {
    throw FormatError("expected " + std::to_string(layout_->specs.size()) + " parameters, got " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const ParamSpec& spec = layout_->specs[i];
    const Tensor<Real>& t = params_[i].value;
    if (params_[i].name != spec.name || t.n() != spec.shape[0] || t.c() != spec.shape[1] ||
        t.h() != spec.shape[2] || t.w() != spec.shape[3]) {
      throw FormatError("parameter '" + params_[i].name + "' " + t.shape_string() +
                        " does not match layout entry '" + spec.name + "'");
    }
  }
}

template <typename Real>
std::size_t UNet<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Real>
typename UNet<Real>::Trace UNet<Real>::forward(Graph<Real>& g, const Tensor<Real>& input,
                                               std::span<const int> timesteps, Rng* dropout_rng) const {
  const int p = config_.patch_size;
  if (input.c() != UNetConfig::kInputChannels || input.h() != p || input.w() != p) {
    throw ShapeError("unet input " + input.shape_string() + " does not match config (N,6," + std::to_string(p) +
                     "," + std::to_string(p) + ")");
  }
  if (timesteps.size() != static_cast<std::size_t>(input.n())) {
    throw ShapeError("unet: " + std::to_string(timesteps.size()) + " timesteps for batch of " +
                     std::to_string(input.n()));
  }
  const UNetLayout& L = *layout_;
  Trace trace;
  trace.parameter_nodes.reserve(params_.size());
  for (const auto& param : params_) trace.parameter_nodes.push_back(g.parameter(param.value));
  ForwardPass<Real> fp(g, config_, trace.parameter_nodes, dropout_rng);

  Tensor<Real> sinusoid(input.n(), config_.base_channels, 1, 1);
  for (int i = 0; i < input.n(); ++i) {
    const std::vector<double> e = time_embedding(timesteps[i], config_.base_channels);
    for (int j = 0; j < config_.base_channels; ++j) sinusoid.item(i)[j] = static_cast<Real>(e[j]);
  }
  int temb = fp.dense(L.time_fc1, g.constant(std::move(sinusoid)));
  temb = fp.dense(L.time_fc2, silu(g, temb));
  const int temb_act = silu(g, temb);

  int h = fp.conv(L.conv_in, g.constant(input));
  std::vector<int> skips{h};
  for (const Stage& stage : L.down) {
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      h = fp.res_block(stage.blocks[b], h, temb_act);
      if (stage.attention[b]) h = fp.attention_block(*stage.attention[b], h);
      skips.push_back(h);
    }
    if (stage.resample) {
      h = fp.conv(*stage.resample, h);
      skips.push_back(h);
    }
  }
  h = fp.res_block(L.mid1, h, temb_act);
  if (L.mid_attention) h = fp.attention_block(*L.mid_attention, h);
  h = fp.res_block(L.mid2, h, temb_act);
  for (const Stage& stage : L.up) {
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      h = fp.res_block(stage.blocks[b], concat_channels(g, h, skips.back()), temb_act);
      skips.pop_back();
      if (stage.attention[b]) h = fp.attention_block(*stage.attention[b], h);
    }
    if (stage.resample) h = fp.conv(*stage.resample, upsample_nearest2x(g, h));
  }
  h = silu(g, fp.norm(L.out_norm, h));
  trace.output = fp.conv(L.conv_out, h);
  return trace;
}

template <typename Real>
Tensor<Real> UNet<Real>::predict(const Tensor<Real>& input, std::span<const int> timesteps) const {
  Graph<Real> g(false);
  const Trace trace = forward(g, input, timesteps, nullptr);
  return g.value(trace.output);
}

template <typename Real>
double UNet<Real>::loss_and_gradients(const Tensor<Real>& input, std::span<const int> timesteps,
                                      const Tensor<Real>& target, Rng* dropout_rng,
                                      std::vector<Tensor<Real>>& gradients) const {
  Graph<Real> g(true);
  const Trace trace = forward(g, input, timesteps, dropout_rng);
  const int loss = mse(g, trace.output, target);
  g.backward(loss);
  gradients.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) gradients[i] = std::move(g.grad(trace.parameter_nodes[i]));
  return static_cast<double>(g.value(loss).data()[0]);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace patchdiff::nn
