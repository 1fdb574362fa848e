#include "patchdiff/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "patchdiff/diffusion.hpp"
#include "patchdiff/errors.hpp"
#include "patchdiff/unet_estimator.hpp"

namespace patchdiff {
namespace {

// Stream reserved for weight initialisation; iterations use streams 0, 1, 2, ...
constexpr std::uint64_t kInitStream = ~std::uint64_t{0};

NamedTensors zeros_like(const NamedTensors& ps) {
  NamedTensors out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back({p.name, p.value.zeros_like()});
  return out;
}

std::vector<nn::Tensor<float>> values_of(const NamedTensors& ps) {
  std::vector<nn::Tensor<float>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.value);
  return out;
}

NamedTensors named(const NamedTensors& names, const std::vector<nn::Tensor<float>>& values) {
  NamedTensors out;
  out.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i].name, values[i]});
  return out;
}

void require_matching(const NamedTensors& ref, const NamedTensors& other, const char* what) {
  if (ref.size() != other.size()) throw FormatError(std::string("checkpoint ") + what + " has the wrong tensor count");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i].name != other[i].name || !ref[i].value.same_shape(other[i].value)) {
      throw FormatError(std::string("checkpoint ") + what + " tensor '" + other[i].name + "' does not match the model");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (images_per_iter < 1 || patches_per_image < 1) throw ConfigError("batch size must be positive");
  if (patch_size < 1) throw ConfigError("patch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(ema_weight >= 0.0 && ema_weight <= 1.0)) throw ConfigError("ema_weight must lie in [0, 1]");
  if (total_iterations < 0) throw ConfigError("total_iterations must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
  try {
    NoiseSchedule check(schedule);
  } catch (const RangeError& e) {
    throw ConfigError(std::string("invalid schedule: ") + e.what());
  }
}

std::vector<PatchPair> sample_patch_batch(const PairedDataset& dataset, const TrainConfig& cfg, Rng& rng) {
  if (dataset.empty()) throw RangeError("cannot sample patches from an empty dataset");
  const int p = cfg.patch_size;
  std::vector<PatchPair> out;
  out.reserve(static_cast<std::size_t>(cfg.batch_size()));
  for (int i = 0; i < cfg.images_per_iter; ++i) {
    const std::size_t idx = rng.uniform_int(dataset.size());
    const auto [clean, degraded] = dataset.pair(idx);
    if (clean.height() < p || clean.width() < p) {
      throw ShapeError("image '" + dataset.name(idx) + "' (" + shape_string(clean) + ") is smaller than patch size " +
                       std::to_string(p));
    }
    for (int j = 0; j < cfg.patches_per_image; ++j) {
      const int row = rng.uniform_int(0, clean.height() - p);
      const int col = rng.uniform_int(0, clean.width() - p);
      out.push_back({clean.crop(row, col, p, p), degraded.crop(row, col, p, p), row, col});
    }
  }
  return out;
}

StepDraws draw_step_noise(std::size_t batch, int patch_size, int timesteps, Rng& rng) {
  StepDraws d;
  d.t.reserve(batch);
  d.eps.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    d.t.push_back(rng.uniform_int(1, timesteps));
    d.eps.push_back(normal_image(patch_size, patch_size, 3, rng));
  }
  return d;
}

TrainingBatch make_training_batch(std::span<const PatchPair> batch, const StepDraws& draws,
                                  const NoiseSchedule& schedule) {
  if (batch.empty() || draws.t.size() != batch.size() || draws.eps.size() != batch.size()) {
    throw ShapeError("batch and draws disagree in size");
  }
  const int p = batch[0].clean.height();
  const int n = static_cast<int>(batch.size());
  TrainingBatch out{nn::Tensor<float>(n, 6, p, p), nn::Tensor<float>(n, 3, p, p), draws.t};
  for (int i = 0; i < n; ++i) {
    const ImageTensor x_t = forward_sample(batch[i].clean, draws.t[i], draws.eps[i], schedule);
    write_item(x_t, out.input, i, 0);
    write_item(batch[i].degraded, out.input, i, 3);
    write_item(draws.eps[i], out.target, i, 0);
  }
  return out;
}

double batch_loss(const nn::UNet<float>& model, const TrainingBatch& batch) {
  const nn::Tensor<float> pred = model.predict(batch.input, batch.t);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - batch.target.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

TrainState::TrainState(nn::UNetConfig unet, const TrainConfig& cfg)
    : model_(std::move(unet), derive_seed(cfg.seed, kInitStream)) {
  if (model_.config().patch_size != cfg.patch_size) {
    throw ConfigError("network patch size " + std::to_string(model_.config().patch_size) +
                      " differs from training patch size " + std::to_string(cfg.patch_size));
  }
  ema_ = model_.parameters();
  m_ = values_of(zeros_like(ema_));
  v_ = m_;
}

TrainState::TrainState(const Checkpoint& ckpt)
    : model_(ckpt.unet, ckpt.model), ema_(ckpt.ema), adam_(ckpt.adam), iteration_(ckpt.iteration) {
  require_matching(model_.parameters(), ema_, "ema");
  require_matching(model_.parameters(), ckpt.adam_m, "adam_m");
  require_matching(model_.parameters(), ckpt.adam_v, "adam_v");
  m_ = values_of(ckpt.adam_m);
  v_ = values_of(ckpt.adam_v);
}

double TrainState::step(const TrainingBatch& batch, const TrainConfig& cfg, Rng* dropout_rng) {
  const double loss = model_.loss_and_gradients(batch.input, batch.t, batch.target, dropout_rng, grads_);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite training loss at iteration " << iteration_ << " (timesteps:";
    for (int t : batch.t) msg << ' ' << t;
    msg << ")";
    throw NumericError(msg.str());
  }
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads_)
      for (float x : g.values()) sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }

  ++iteration_;
  const double k = static_cast<double>(iteration_);
  const double c1 = 1.0 - std::pow(adam_.beta1, k);
  const double c2 = 1.0 - std::pow(adam_.beta2, k);
  const float b1 = static_cast<float>(adam_.beta1), b2 = static_cast<float>(adam_.beta2);
  const float step = static_cast<float>(cfg.learning_rate / c1);
  const float rc2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(adam_.epsilon);
  auto& params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* w = params[i].value.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const float* g = grads_[i].data();
    const std::size_t n = params[i].value.size();
    const float s = static_cast<float>(scale);
    for (std::size_t j = 0; j < n; ++j) {
      const float gj = g[j] * s;
      m[j] = b1 * m[j] + (1.0f - b1) * gj;
      v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
      w[j] -= step * m[j] / (std::sqrt(v[j]) * rc2 + eps);
    }
    ema_update<float>(ema_[i].value.values(), params[i].value.values(), cfg.ema_weight);
  }
  return loss;
}

Checkpoint TrainState::to_checkpoint(const TrainConfig& cfg) const {
  Checkpoint c;
  c.unet = model_.config();
  c.schedule = cfg.schedule;
  c.train = cfg;
  c.adam = adam_;
  c.iteration = iteration_;
  c.model = model_.parameters();
  c.ema = ema_;
  c.adam_m = named(c.model, m_);
  c.adam_v = named(c.model, v_);
  return c;
}

double train_step(TrainState& state, std::span<const PatchPair> batch, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ShapeError("empty training batch");
  const StepDraws draws = draw_step_noise(batch.size(), batch[0].clean.height(), schedule.timesteps(), rng);
  const TrainingBatch tb = make_training_batch(batch, draws, schedule);
  return state.step(tb, cfg, state.model().config().dropout > 0.0 ? &rng : nullptr);
}

Checkpoint train_loop(const TrainConfig& cfg, const nn::UNetConfig& unet, const PairedDataset& dataset,
                      const std::optional<Checkpoint>& resume, const TrainLoopOptions& options) {
  cfg.validate();
  unet.validate();
  if (resume) {
    if (!(resume->unet == unet)) throw ConfigError("config mismatch: network config differs from the resumed checkpoint");
    if (!(resume->schedule == cfg.schedule)) {
      throw ConfigError("config mismatch: schedule differs from the resumed checkpoint");
    }
    if (resume->iteration >= cfg.total_iterations) return *resume;
  } else if (cfg.total_iterations == 0) {
    return TrainState(unet, cfg).to_checkpoint(cfg);
  }
  if (dataset.empty()) throw RangeError("training dataset is empty");

  TrainState state = resume ? TrainState(*resume) : TrainState(unet, cfg);
  const NoiseSchedule schedule(cfg.schedule);
  const auto start = std::chrono::steady_clock::now();
  while (state.iteration() < cfg.total_iterations) {
    const std::int64_t iter = state.iteration();
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iter)));
    const std::vector<PatchPair> batch = sample_patch_batch(dataset, cfg, rng);
    const double loss = train_step(state, batch, schedule, cfg, rng);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.log) *options.log << "{\"iter\":" << iter + 1 << ",\"loss\":" << loss << ",\"wall_s\":" << wall << "}" << std::endl;
    if (options.on_iteration) options.on_iteration(iter + 1, loss);
    if (options.checkpoint_path && state.iteration() % cfg.checkpoint_every == 0 &&
        state.iteration() != cfg.total_iterations) {
      save_checkpoint(state.to_checkpoint(cfg), *options.checkpoint_path);
    }
  }
  Checkpoint out = state.to_checkpoint(cfg);
  if (options.checkpoint_path) save_checkpoint(out, *options.checkpoint_path);
  if (options.log) options.log->flush();
  return out;
}

}  // namespace patchdiff
