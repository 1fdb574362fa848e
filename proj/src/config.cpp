#include "patchdiff/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "patchdiff/errors.hpp"

namespace patchdiff {
namespace {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "schema_version",         "data.root",
      "out.checkpoint",         "out.log",
      "train.images_per_iter",  "train.patches_per_image",
      "train.patch_size",       "train.learning_rate",
      "train.ema_weight",       "train.total_iterations",
      "train.seed",             "train.checkpoint_every",
      "train.grad_clip",        "schedule.timesteps",
      "schedule.beta_start",    "schedule.beta_end",
      "unet.base_channels",     "unet.channel_multipliers",
      "unet.num_res_blocks",    "unet.attention_resolution",
      "unet.groupnorm_groups",  "unet.time_embed_dim",
      "unet.dropout",           "sample.steps",
      "sample.grid_step",       "sample.seed",
      "sample.max_patches_in_flight",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_same_v<T, double>) v = std::stod(s, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
      v = std::stoull(s, &used);
    } else if constexpr (std::is_same_v<T, std::int64_t>) v = std::stoll(s, &used);
    else v = static_cast<T>(std::stoi(s, &used));
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has invalid value '" + s + "'");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(parse_number<int>(key, trim(tok)));
  if (out.empty()) throw ConfigError("config key '" + key + "' needs at least one value");
  return out;
}

}  // namespace

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  auto it = kv.find("schema_version");
  if (it == kv.end()) throw ConfigError(origin + ": missing schema_version");
  if (it->second != std::to_string(RunConfig::kSchemaVersion)) {
    throw ConfigError(origin + ": unsupported schema_version " + it->second);
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

RunConfig resolve_config(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  RunConfig cfg;
  TrainConfig& t = cfg.train;
  if (auto* v = get("train.patch_size")) t.patch_size = parse_number<int>("train.patch_size", *v);
  if (t.patch_size != 64 && t.patch_size != 128) {
    // Other sizes start from the p=64 layout with the patch size swapped in.
    cfg.unet = nn::default_unet_config(64);
    cfg.unet.patch_size = t.patch_size;
  } else {
    cfg.unet = nn::default_unet_config(t.patch_size);
  }
  cfg.sample_steps = t.patch_size == 64 ? 10 : 50;

  const std::vector<std::pair<std::string, std::function<void(const std::string&)>>> setters = {
      {"data.root", [&](const std::string& s) { cfg.data_root = s; }},
      {"out.checkpoint", [&](const std::string& s) { cfg.checkpoint_path = s; }},
      {"out.log", [&](const std::string& s) { cfg.log_path = s; }},
      {"train.images_per_iter", [&](const std::string& s) { t.images_per_iter = parse_number<int>("train.images_per_iter", s); }},
      {"train.patches_per_image", [&](const std::string& s) { t.patches_per_image = parse_number<int>("train.patches_per_image", s); }},
      {"train.learning_rate", [&](const std::string& s) { t.learning_rate = parse_number<double>("train.learning_rate", s); }},
      {"train.ema_weight", [&](const std::string& s) { t.ema_weight = parse_number<double>("train.ema_weight", s); }},
      {"train.total_iterations", [&](const std::string& s) { t.total_iterations = parse_number<std::int64_t>("train.total_iterations", s); }},
      {"train.seed", [&](const std::string& s) { t.seed = parse_number<std::uint64_t>("train.seed", s); }},
      {"train.checkpoint_every", [&](const std::string& s) { t.checkpoint_every = parse_number<std::int64_t>("train.checkpoint_every", s); }},
      {"train.grad_clip", [&](const std::string& s) { t.grad_clip = parse_number<double>("train.grad_clip", s); }},
      {"schedule.timesteps", [&](const std::string& s) { t.schedule.timesteps = parse_number<int>("schedule.timesteps", s); }},
      {"schedule.beta_start", [&](const std::string& s) { t.schedule.beta_start = parse_number<double>("schedule.beta_start", s); }},
      {"schedule.beta_end", [&](const std::string& s) { t.schedule.beta_end = parse_number<double>("schedule.beta_end", s); }},
      {"unet.base_channels", [&](const std::string& s) { cfg.unet.base_channels = parse_number<int>("unet.base_channels", s); }},
      {"unet.channel_multipliers", [&](const std::string& s) { cfg.unet.channel_multipliers = parse_int_list("unet.channel_multipliers", s); }},
      {"unet.num_res_blocks", [&](const std::string& s) { cfg.unet.num_res_blocks = parse_number<int>("unet.num_res_blocks", s); }},
      {"unet.attention_resolution", [&](const std::string& s) { cfg.unet.attention_resolution = parse_number<int>("unet.attention_resolution", s); }},
      {"unet.groupnorm_groups", [&](const std::string& s) { cfg.unet.groupnorm_groups = parse_number<int>("unet.groupnorm_groups", s); }},
      {"unet.time_embed_dim", [&](const std::string& s) { cfg.unet.time_embed_dim = parse_number<int>("unet.time_embed_dim", s); }},
      {"unet.dropout", [&](const std::string& s) { cfg.unet.dropout = parse_number<double>("unet.dropout", s); }},
      {"sample.steps", [&](const std::string& s) { cfg.sample_steps = parse_number<int>("sample.steps", s); }},
      {"sample.grid_step", [&](const std::string& s) { cfg.grid_step = parse_number<int>("sample.grid_step", s); }},
      {"sample.seed", [&](const std::string& s) { cfg.sample_seed = parse_number<std::uint64_t>("sample.seed", s); }},
      {"sample.max_patches_in_flight", [&](const std::string& s) { cfg.max_patches_in_flight = parse_number<int>("sample.max_patches_in_flight", s); }},
  };
  for (const auto& [key, set] : setters)
    if (auto* v = get(key)) set(*v);

  t.validate();
  cfg.unet.validate();
  if (cfg.sample_steps < 1) throw ConfigError("sample.steps must be positive");
  if (cfg.grid_step < 1) throw ConfigError("sample.grid_step must be positive");
  if (cfg.max_patches_in_flight < 1) throw ConfigError("sample.max_patches_in_flight must be positive");
  return cfg;
}

std::string format_config(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const nn::UNetConfig& u = cfg.unet;
  std::string mults;
  for (std::size_t i = 0; i < u.channel_multipliers.size(); ++i) {
    mults += (i ? "," : "") + std::to_string(u.channel_multipliers[i]);
  }
  std::ostringstream out;
  out << "schema_version = " << RunConfig::kSchemaVersion << '\n'
      << "data.root = " << cfg.data_root.string() << '\n'
      << "out.checkpoint = " << cfg.checkpoint_path.string() << '\n'
      << "out.log = " << cfg.log_path.string() << '\n'
      << "train.images_per_iter = " << t.images_per_iter << '\n'
      << "train.patches_per_image = " << t.patches_per_image << '\n'
      << "train.patch_size = " << t.patch_size << '\n'
      << "train.learning_rate = " << fmt_double(t.learning_rate) << '\n'
      << "train.ema_weight = " << fmt_double(t.ema_weight) << '\n'
      << "train.total_iterations = " << t.total_iterations << '\n'
      << "train.seed = " << t.seed << '\n'
      << "train.checkpoint_every = " << t.checkpoint_every << '\n'
      << "train.grad_clip = " << fmt_double(t.grad_clip) << '\n'
      << "schedule.timesteps = " << t.schedule.timesteps << '\n'
      << "schedule.beta_start = " << fmt_double(t.schedule.beta_start) << '\n'
      << "schedule.beta_end = " << fmt_double(t.schedule.beta_end) << '\n'
      << "unet.base_channels = " << u.base_channels << '\n'
      << "unet.channel_multipliers = " << mults << '\n'
      << "unet.num_res_blocks = " << u.num_res_blocks << '\n'
      << "unet.attention_resolution = " << u.attention_resolution << '\n'
      << "unet.groupnorm_groups = " << u.groupnorm_groups << '\n'
      << "unet.time_embed_dim = " << u.time_embed_dim << '\n'
      << "unet.dropout = " << fmt_double(u.dropout) << '\n'
      << "sample.steps = " << cfg.sample_steps << '\n'
      << "sample.grid_step = " << cfg.grid_step << '\n'
      << "sample.seed = " << cfg.sample_seed << '\n'
      << "sample.max_patches_in_flight = " << cfg.max_patches_in_flight << '\n';
  return out.str();
}

}  // namespace patchdiff
