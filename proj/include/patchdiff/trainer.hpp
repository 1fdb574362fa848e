#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "patchdiff/data.hpp"
#include "patchdiff/image.hpp"
#include "patchdiff/nn/unet.hpp"
#include "patchdiff/rng.hpp"
#include "patchdiff/schedule.hpp"

namespace patchdiff {

struct TrainConfig {
  int images_per_iter = 16;
  int patches_per_image = 16;
  int patch_size = 64;
  double learning_rate = 2e-5;
  double ema_weight = 0.999;
  std::int64_t total_iterations = 2'000'000;
  ScheduleParams schedule;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 10'000;
  /// Global gradient-norm limit; 0 disables clipping.
  double grad_clip = 0.0;

  int batch_size() const { return images_per_iter * patches_per_image; }
  /// Throws ConfigError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamParams&) const = default;
};

using NamedTensors = std::vector<nn::Parameter<float>>;

/// Everything needed to resume training or to restore images.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  nn::UNetConfig unet;
  ScheduleParams schedule;
  TrainConfig train;
  AdamParams adam;
  std::int64_t iteration = 0;
  NamedTensors model;
  NamedTensors ema;
  NamedTensors adam_m;
  NamedTensors adam_v;
};

/// Byte layout (little-endian):
///   8 bytes   magic "PDIFCKPT"
///   u32       format version
///   u64 + n   metadata text, one key=value per line in a fixed order
///   u32       tensor count
///   per tensor: u32 name length, name, u32 rank, rank x i32 dims, float32 data
/// Tensor names carry a group prefix: model/, ema/, adam_m/, adam_v/.
std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const char> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Inference models built from a checkpoint's weights.
std::shared_ptr<const nn::UNet<float>> ema_model(const Checkpoint& ckpt);
std::shared_ptr<const nn::UNet<float>> raw_model(const Checkpoint& ckpt);

struct PatchPair {
  ImageTensor clean;
  ImageTensor degraded;
  int row = 0;
  int col = 0;
};

/// images_per_iter pairs drawn with replacement, then patches_per_image
/// uniformly placed p x p crops from each, taken at the same offsets in both
/// images.
std::vector<PatchPair> sample_patch_batch(const PairedDataset& dataset, const TrainConfig& cfg, Rng& rng);

/// Per-element timestep and noise for one step.
struct StepDraws {
  std::vector<int> t;
  std::vector<ImageTensor> eps;
};

StepDraws draw_step_noise(std::size_t batch, int patch_size, int timesteps, Rng& rng);

/// Network input (x_t ++ cond) and regression target eps as float tensors.
struct TrainingBatch {
  nn::Tensor<float> input;
  nn::Tensor<float> target;
  std::vector<int> t;
};

TrainingBatch make_training_batch(std::span<const PatchPair> batch, const StepDraws& draws,
                                  const NoiseSchedule& schedule);

/// Mean squared noise-prediction error over the whole batch.
double batch_loss(const nn::UNet<float>& model, const TrainingBatch& batch);

template <typename Real>
void ema_update(std::span<Real> ema, std::span<const Real> weights, double ema_weight) {
  for (std::size_t i = 0; i < ema.size(); ++i) {
    ema[i] = static_cast<Real>(ema_weight * ema[i] + (1.0 - ema_weight) * weights[i]);
  }
}

/// Mutable optimisation state owned by the training thread.
class TrainState {
 public:
  TrainState(nn::UNetConfig unet, const TrainConfig& cfg);
  explicit TrainState(const Checkpoint& ckpt);

  nn::UNet<float>& model() { return model_; }
  const nn::UNet<float>& model() const { return model_; }
  NamedTensors& ema() { return ema_; }
  const NamedTensors& ema() const { return ema_; }
  std::int64_t iteration() const { return iteration_; }
  const AdamParams& adam() const { return adam_; }

  /// One Adam update from precomputed draws followed by the EMA update.
  /// Returns the batch loss before the update. Throws NumericError on a
  /// non-finite loss.
  double step(const TrainingBatch& batch, const TrainConfig& cfg, Rng* dropout_rng = nullptr);

  Checkpoint to_checkpoint(const TrainConfig& cfg) const;

 private:
  nn::UNet<float> model_;
  NamedTensors ema_;
  std::vector<nn::Tensor<float>> m_, v_, grads_;
  AdamParams adam_;
  std::int64_t iteration_ = 0;
};

/// Draws t ~ U{1..T} and eps ~ N(0, I) per element from `rng`, then steps.
double train_step(TrainState& state, std::span<const PatchPair> batch, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, Rng& rng);

struct TrainLoopOptions {
  /// Written every checkpoint_every iterations and at the end when set.
  std::optional<std::filesystem::path> checkpoint_path;
  /// JSON-lines records {"iter", "loss", "wall_s"}.
  std::ostream* log = nullptr;
  std::function<void(std::int64_t iteration, double loss)> on_iteration;
};

/// Runs until the iteration counter reaches cfg.total_iterations. Iteration i
/// draws everything from derive_seed(cfg.seed, i), so an interrupted run that
/// is resumed follows the uninterrupted trajectory exactly.
Checkpoint train_loop(const TrainConfig& cfg, const nn::UNetConfig& unet, const PairedDataset& dataset,
                      const std::optional<Checkpoint>& resume, const TrainLoopOptions& options = {});

}  // namespace patchdiff
