#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "patchdiff/nn/unet.hpp"
#include "patchdiff/trainer.hpp"

namespace patchdiff {

/// Flat `key = value` text. `#` starts a comment. The file must declare
/// `schema_version = 1`. Keys (type, default):
///
///   data.root                  path    (required for train)
///   out.checkpoint             path    checkpoint.pdck
///   out.log                    path    train_log.jsonl
///   train.images_per_iter      int     16
///   train.patches_per_image    int     16
///   train.patch_size           int     64     (64 or 128 select network defaults)
///   train.learning_rate        real    2e-5
///   train.ema_weight           real    0.999
///   train.total_iterations     int     2000000
///   train.seed                 uint    0
///   train.checkpoint_every     int     10000
///   train.grad_clip            real    0 (off)
///   schedule.timesteps         int     1000
///   schedule.beta_start        real    1e-4
///   schedule.beta_end          real    0.02
///   unet.base_channels         int     per patch size
///   unet.channel_multipliers   ints    per patch size, comma separated
///   unet.num_res_blocks        int     2
///   unet.attention_resolution  int     16
///   unet.groupnorm_groups      int     32
///   unet.time_embed_dim        int     512
///   unet.dropout               real    0
///   sample.steps               int     10 for p=64, 50 otherwise
///   sample.grid_step           int     16
///   sample.seed                uint    0
///   sample.max_patches_in_flight int   64
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::filesystem::path data_root;
  std::filesystem::path checkpoint_path = "checkpoint.pdck";
  std::filesystem::path log_path = "train_log.jsonl";
  TrainConfig train;
  nn::UNetConfig unet;
  int sample_steps = 10;
  int grid_step = 16;
  std::uint64_t sample_seed = 0;
  int max_patches_in_flight = 64;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses the text format. Throws ConfigError on syntax errors, duplicate
/// keys, unknown keys or a missing/unsupported schema_version.
KeyValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
KeyValues read_config_file(const std::filesystem::path& path);

/// Applies `kv` over the defaults and validates the result.
RunConfig resolve_config(const KeyValues& kv);

/// Every key with its resolved value, in the documented order; parses back
/// to the same RunConfig.
std::string format_config(const RunConfig& cfg);

}  // namespace patchdiff
