#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "patchdiff/errors.hpp"
#include "patchdiff/trainer.hpp"

namespace patchdiff {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'D', 'I', 'F', 'C', 'K', 'P', 'T'};
constexpr const char* kModelRange = "-1,1";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::vector<std::pair<std::string, std::string>> metadata(const Checkpoint& c) {
  const nn::UNetConfig& u = c.unet;
  const TrainConfig& t = c.train;
  return {
      {"iteration", std::to_string(c.iteration)},
      {"model_range", kModelRange},
      {"unet.patch_size", std::to_string(u.patch_size)},
      {"unet.base_channels", std::to_string(u.base_channels)},
      {"unet.channel_multipliers", join_ints(u.channel_multipliers)},
      {"unet.num_res_blocks", std::to_string(u.num_res_blocks)},
      {"unet.attention_resolution", std::to_string(u.attention_resolution)},
      {"unet.groupnorm_groups", std::to_string(u.groupnorm_groups)},
      {"unet.time_embed_dim", std::to_string(u.time_embed_dim)},
      {"unet.dropout", fmt_double(u.dropout)},
      {"schedule.timesteps", std::to_string(c.schedule.timesteps)},
      {"schedule.beta_start", fmt_double(c.schedule.beta_start)},
      {"schedule.beta_end", fmt_double(c.schedule.beta_end)},
      {"adam.beta1", fmt_double(c.adam.beta1)},
      {"adam.beta2", fmt_double(c.adam.beta2)},
      {"adam.epsilon", fmt_double(c.adam.epsilon)},
      {"train.images_per_iter", std::to_string(t.images_per_iter)},
      {"train.patches_per_image", std::to_string(t.patches_per_image)},
      {"train.patch_size", std::to_string(t.patch_size)},
      {"train.learning_rate", fmt_double(t.learning_rate)},
      {"train.ema_weight", fmt_double(t.ema_weight)},
      {"train.total_iterations", std::to_string(t.total_iterations)},
      {"train.timesteps", std::to_string(t.schedule.timesteps)},
      {"train.beta_start", fmt_double(t.schedule.beta_start)},
      {"train.beta_end", fmt_double(t.schedule.beta_end)},
      {"train.seed", std::to_string(t.seed)},
      {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
      {"train.grad_clip", fmt_double(t.grad_clip)},
  };
}

class MetaReader {
 public:
  explicit MetaReader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("malformed checkpoint metadata line '" + line + "'");
      values_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  }
  template <typename T>
  T get(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      T v;
      if constexpr (std::is_same_v<T, double>) v = std::stod(s, &used);
      else if constexpr (std::is_same_v<T, std::uint64_t>) v = std::stoull(s, &used);
      else if constexpr (std::is_same_v<T, std::int64_t>) v = std::stoll(s, &used);
      else v = static_cast<T>(std::stoi(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError("checkpoint metadata '" + key + "' has bad value '" + s + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(T v) { bytes(&v, sizeof(T)); }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char> take() { return std::move(buf_); }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const char> b) : b_(b) {}
  void bytes(void* dst, std::size_t n) {
    if (n > b_.size() - pos_) throw FormatError("checkpoint is truncated");
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const char> b_;
  std::size_t pos_ = 0;
};

const char* const kGroups[] = {"model/", "ema/", "adam_m/", "adam_v/"};

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(Checkpoint::kFormatVersion);
  std::string meta;
  for (const auto& [k, v] : metadata(ckpt)) meta += k + "=" + v + "\n";
  w.pod<std::uint64_t>(meta.size());
  w.bytes(meta.data(), meta.size());
  const NamedTensors* groups[] = {&ckpt.model, &ckpt.ema, &ckpt.adam_m, &ckpt.adam_v};
  std::uint32_t count = 0;
  for (const NamedTensors* g : groups) count += static_cast<std::uint32_t>(g->size());
  w.pod<std::uint32_t>(count);
  for (int gi = 0; gi < 4; ++gi) {
    for (const auto& p : *groups[gi]) {
      w.str(kGroups[gi] + p.name);
      w.pod<std::uint32_t>(4);
      for (int d : {p.value.n(), p.value.c(), p.value.h(), p.value.w()}) w.pod<std::int32_t>(d);
      w.bytes(p.value.data(), p.value.size() * sizeof(float));
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const char> bytes) {
  Reader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a patchdiff checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  const auto meta_len = r.pod<std::uint64_t>();
  if (meta_len > bytes.size()) throw FormatError("checkpoint is truncated");
  const MetaReader m(r.str(meta_len));

  Checkpoint c;
  if (m.str("model_range") != kModelRange) throw FormatError("checkpoint uses an unsupported model range");
  c.iteration = m.get<std::int64_t>("iteration");
  c.unet.patch_size = m.get<int>("unet.patch_size");
  c.unet.base_channels = m.get<int>("unet.base_channels");
  c.unet.channel_multipliers.clear();
  {
    std::istringstream in(m.str("unet.channel_multipliers"));
    std::string tok;
    while (std::getline(in, tok, ',')) {
      try {
        c.unet.channel_multipliers.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw FormatError("bad channel multiplier '" + tok + "' in checkpoint");
      }
    }
  }
  c.unet.num_res_blocks = m.get<int>("unet.num_res_blocks");
  c.unet.attention_resolution = m.get<int>("unet.attention_resolution");
  c.unet.groupnorm_groups = m.get<int>("unet.groupnorm_groups");
  c.unet.time_embed_dim = m.get<int>("unet.time_embed_dim");
  c.unet.dropout = m.get<double>("unet.dropout");
  c.schedule = {m.get<int>("schedule.timesteps"), m.get<double>("schedule.beta_start"),
                m.get<double>("schedule.beta_end")};
  c.adam = {m.get<double>("adam.beta1"), m.get<double>("adam.beta2"), m.get<double>("adam.epsilon")};
  TrainConfig& t = c.train;
  t.images_per_iter = m.get<int>("train.images_per_iter");
  t.patches_per_image = m.get<int>("train.patches_per_image");
  t.patch_size = m.get<int>("train.patch_size");
  t.learning_rate = m.get<double>("train.learning_rate");
  t.ema_weight = m.get<double>("train.ema_weight");
  t.total_iterations = m.get<std::int64_t>("train.total_iterations");
  t.schedule = {m.get<int>("train.timesteps"), m.get<double>("train.beta_start"), m.get<double>("train.beta_end")};
  t.seed = m.get<std::uint64_t>("train.seed");
  t.checkpoint_every = m.get<std::int64_t>("train.checkpoint_every");
  t.grad_clip = m.get<double>("train.grad_clip");
  try {
    c.unet.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid network config: ") + e.what());
  }

  NamedTensors* groups[] = {&c.model, &c.ema, &c.adam_m, &c.adam_v};
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > bytes.size()) throw FormatError("checkpoint is truncated");
    std::string name = r.str(name_len);
    int group = -1;
    for (int gi = 0; gi < 4; ++gi) {
      if (name.starts_with(kGroups[gi])) {
        group = gi;
        name.erase(0, std::strlen(kGroups[gi]));
        break;
      }
    }
    if (group < 0) throw FormatError("checkpoint tensor '" + name + "' has no known group prefix");
    if (r.pod<std::uint32_t>() != 4) throw FormatError("checkpoint tensor '" + name + "' is not rank 4");
    int d[4];
    std::size_t elems = 1;
    for (int& x : d) {
      x = r.pod<std::int32_t>();
      if (x < 0) throw FormatError("checkpoint tensor '" + name + "' has a negative dimension");
      elems *= static_cast<std::size_t>(x);
    }
    if (elems * sizeof(float) > bytes.size()) throw FormatError("checkpoint is truncated");
    nn::Tensor<float> value(d[0], d[1], d[2], d[3]);
    r.bytes(value.data(), elems * sizeof(float));
    groups[group]->push_back({std::move(name), std::move(value)});
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<char> bytes = serialize_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never leaves a truncated file behind.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::shared_ptr<const nn::UNet<float>> ema_model(const Checkpoint& ckpt) {
  return std::make_shared<const nn::UNet<float>>(ckpt.unet, ckpt.ema);
}

std::shared_ptr<const nn::UNet<float>> raw_model(const Checkpoint& ckpt) {
  return std::make_shared<const nn::UNet<float>>(ckpt.unet, ckpt.model);
}

}  // namespace patchdiff
