#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "patchdiff/errors.hpp"
#include "patchdiff/trainer.hpp"
#include "support.hpp"
#include "tiny_unet.hpp"

using namespace patchdiff;

namespace {

PairedDataset small_dataset(int n, int size, std::uint64_t seed) {
  std::vector<std::pair<ImageTensor, ImageTensor>> pairs;
  for (int i = 0; i < n; ++i) {
    const ImageTensor clean = test::uniform_image(size, size, 3, seed + 2 * i, -0.8, 0.8);
    ImageTensor degraded = clean;
    for (double& v : degraded.values()) v = 0.5 * v + 0.3;
    pairs.emplace_back(clean, degraded);
  }
  return PairedDataset::from_pairs(std::move(pairs));
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.images_per_iter = 2;
  cfg.patches_per_image = 2;
  cfg.patch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.total_iterations = 4;
  cfg.seed = 11;
  return cfg;
}

bool same_weights(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].value.values().size() != b[i].value.values().size()) return false;
    const auto x = a[i].value.values();
    const auto y = b[i].value.values();
    for (std::size_t j = 0; j < x.size(); ++j)
      if (x[j] != y[j]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("batch size is images times patches per image") {
  TrainConfig cfg;
  CHECK(cfg.batch_size() == 256);
  cfg.images_per_iter = 8;
  cfg.patches_per_image = 8;
  cfg.patch_size = 128;
  CHECK(cfg.batch_size() == 64);
  const PairedDataset ds = small_dataset(1, 128, 1);
  Rng rng(1);
  CHECK(sample_patch_batch(ds, cfg, rng).size() == 64u);
}

TEST_CASE("config validation") {
  TrainConfig cfg = tiny_train();
  CHECK_NOTHROW(cfg.validate());
  cfg.images_per_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.ema_weight = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.schedule.beta_end = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("patch offsets are uniform and shared between clean and degraded") {
  const PairedDataset ds = small_dataset(1, 100, 1);
  TrainConfig cfg = tiny_train();
  cfg.images_per_iter = 1;
  cfg.patches_per_image = 1000;
  const int range = 100 - 16 + 1;
  std::vector<long> rows(range), cols(range);
  Rng rng(42);
  const auto [clean, degraded] = ds.pair(0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::vector<PatchPair> batch = sample_patch_batch(ds, cfg, rng);
    REQUIRE(batch.size() == 1000u);
    for (const PatchPair& pp : batch) {
      ++rows[pp.row];
      ++cols[pp.col];
      if (rep == 0) {
        REQUIRE(pp.clean == clean.crop(pp.row, pp.col, 16, 16));
        REQUIRE(pp.degraded == degraded.crop(pp.row, pp.col, 16, 16));
      }
    }
  }
  const double crit = test::chi_square_critical(range - 1, 1e-3);
  CHECK(test::chi_square_uniform(rows) < crit);
  CHECK(test::chi_square_uniform(cols) < crit);
}

TEST_CASE("images are drawn uniformly with replacement") {
  const PairedDataset ds = small_dataset(8, 16, 2);
  TrainConfig cfg = tiny_train();
  cfg.images_per_iter = 16;
  cfg.patches_per_image = 1;
  std::vector<long> counts(8);
  Rng rng(3);
  for (int rep = 0; rep < 2000; ++rep)
    for (const PatchPair& pp : sample_patch_batch(ds, cfg, rng)) {
      for (int i = 0; i < 8; ++i)
        if (pp.clean == ds.pair(i).first) ++counts[i];
    }
  long total = 0;
  for (long c : counts) total += c;
  CHECK(total == 32000);
  CHECK(test::chi_square_uniform(counts) < test::chi_square_critical(7, 1e-3));
}

TEST_CASE("training timesteps are uniform on 1..T") {
  Rng rng(5);
  const StepDraws d = draw_step_noise(100'000, 1, 1000, rng);
  std::vector<long> counts(1000);
  for (int t : d.t) {
    REQUIRE(t >= 1);
    REQUIRE(t <= 1000);
    ++counts[t - 1];
  }
  CHECK(test::chi_square_uniform(counts) < test::chi_square_critical(999, 1e-3));
  double mean = 0, sq = 0;
  for (const ImageTensor& e : d.eps)
    for (double v : e.values()) {
      mean += v;
      sq += v * v;
    }
  mean /= 300'000;
  sq /= 300'000;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq - 1.0) < 0.02);
}

TEST_CASE("training batch layout") {
  const PairedDataset ds = small_dataset(2, 32, 3);
  Rng rng(9);
  const std::vector<PatchPair> batch = sample_patch_batch(ds, tiny_train(), rng);
  const StepDraws draws = draw_step_noise(batch.size(), 16, 1000, rng);
  const NoiseSchedule schedule(ScheduleParams{});
  const TrainingBatch tb = make_training_batch(batch, draws, schedule);
  CHECK(tb.input.n() == 4);
  CHECK(tb.input.c() == 6);
  CHECK(tb.target.c() == 3);
  CHECK(tb.t == draws.t);
  const double a = schedule.alpha_bar(draws.t[2]);
  for (int c = 0; c < 3; ++c) {
    const double expect = std::sqrt(a) * batch[2].clean.at(5, 7, c) + std::sqrt(1 - a) * draws.eps[2].at(5, 7, c);
    CHECK(tb.input.at(2, c, 5, 7) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(tb.input.at(2, 3 + c, 5, 7) == doctest::Approx(batch[2].degraded.at(5, 7, c)).epsilon(1e-6));
    CHECK(tb.target.at(2, c, 5, 7) == doctest::Approx(draws.eps[2].at(5, 7, c)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(make_training_batch(std::span(batch).first(3), draws, schedule), ShapeError);
}

TEST_CASE("ema update matches the closed form") {
  std::vector<double> ema(3, 0.0);
  const std::vector<double> w(3, 1.0);
  for (int n = 1; n <= 5000; ++n) {
    ema_update<double>(ema, w, 0.999);
    if (n % 1000 == 0) {
      CAPTURE(n);
      CHECK(std::abs(ema[0] - (1.0 - std::pow(0.999, n))) <= 1e-12);
    }
  }
  std::vector<double> frozen{0.25, -1.0, 3.0};
  const std::vector<double> other{9.0, 9.0, 9.0};
  ema_update<double>(frozen, other, 1.0);
  CHECK(frozen == std::vector<double>{0.25, -1.0, 3.0});
  ema_update<double>(frozen, other, 0.0);
  CHECK(frozen == other);
}

TEST_CASE("adam steps reduce the loss on a fixed batch") {
  const PairedDataset ds = small_dataset(2, 16, 4);
  TrainConfig cfg = tiny_train();
  cfg.learning_rate = 1e-3;
  Rng rng(10);
  const std::vector<PatchPair> batch = sample_patch_batch(ds, cfg, rng);
  const NoiseSchedule schedule(cfg.schedule);
  const TrainingBatch tb = make_training_batch(batch, draw_step_noise(batch.size(), 16, 1000, rng), schedule);
  TrainState state(test::tiny_unet(), cfg);
  const double before = batch_loss(state.model(), tb);
  double first = 0;
  for (int i = 0; i < 100; ++i) {
    const double l = state.step(tb, cfg);
    if (i == 0) first = l;
  }
  CHECK(first == doctest::Approx(before).epsilon(1e-5));
  CHECK(state.iteration() == 100);
  CHECK(batch_loss(state.model(), tb) < 0.5 * before);
  // The EMA trails the raw weights.
  CHECK(!same_weights(state.ema(), state.model().parameters()));
}

TEST_CASE("a single small adam step decreases the loss on the same draws") {
  const PairedDataset ds = small_dataset(2, 16, 5);
  TrainConfig cfg = tiny_train();
  cfg.learning_rate = 1e-4;
  Rng rng(12);
  const std::vector<PatchPair> batch = sample_patch_batch(ds, cfg, rng);
  const TrainingBatch tb = make_training_batch(batch, draw_step_noise(batch.size(), 16, 1000, rng), NoiseSchedule{{}});
  TrainState state(test::tiny_unet(), cfg);
  const double before = state.step(tb, cfg);
  CHECK(batch_loss(state.model(), tb) < before);
}

TEST_CASE("ema weight of one keeps the initial weights") {
  const PairedDataset ds = small_dataset(2, 16, 4);
  TrainConfig cfg = tiny_train();
  cfg.ema_weight = 1.0;
  TrainState state(test::tiny_unet(), cfg);
  const NamedTensors init = state.model().parameters();
  const NoiseSchedule schedule(cfg.schedule);
  Rng rng(1);
  for (int i = 0; i < 3; ++i) train_step(state, sample_patch_batch(ds, cfg, rng), schedule, cfg, rng);
  CHECK(same_weights(state.ema(), init));
  CHECK(!same_weights(state.model().parameters(), init));
}

TEST_CASE("non-finite loss is reported") {
  const PairedDataset ds = small_dataset(1, 16, 4);
  TrainConfig cfg = tiny_train();
  Rng rng(1);
  const std::vector<PatchPair> batch = sample_patch_batch(ds, cfg, rng);
  TrainingBatch tb = make_training_batch(batch, draw_step_noise(batch.size(), 16, 1000, rng), NoiseSchedule{{}});
  tb.input.at(0, 0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
  TrainState state(test::tiny_unet(), cfg);
  CHECK_THROWS_AS(state.step(tb, cfg), NumericError);
  CHECK(state.iteration() == 0);
}

TEST_CASE("network and training patch sizes must agree") {
  TrainConfig cfg = tiny_train();
  cfg.patch_size = 32;
  CHECK_THROWS_AS(TrainState(test::tiny_unet(), cfg), ConfigError);
}

TEST_CASE("train loop is deterministic and resumes exactly") {
  const PairedDataset ds = small_dataset(3, 24, 6);
  const TrainConfig cfg = tiny_train();
  std::ostringstream log;
  std::vector<double> losses;
  TrainLoopOptions opts;
  opts.log = &log;
  opts.on_iteration = [&](std::int64_t, double l) { losses.push_back(l); };
  const Checkpoint full = train_loop(cfg, test::tiny_unet(), ds, std::nullopt, opts);
  CHECK(full.iteration == 4);
  CHECK(losses.size() == 4u);
  std::string line;
  int lines = 0;
  std::istringstream in(log.str());
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.find("\"iter\":" + std::to_string(lines)) != std::string::npos);
    CHECK(line.find("\"wall_s\":") != std::string::npos);
  }
  CHECK(lines == 4);

  TrainConfig half = cfg;
  half.total_iterations = 2;
  std::vector<double> resumed_losses;
  TrainLoopOptions record;
  record.on_iteration = [&](std::int64_t, double l) { resumed_losses.push_back(l); };
  const Checkpoint mid = train_loop(half, test::tiny_unet(), ds, std::nullopt, record);
  const Checkpoint resumed = train_loop(cfg, test::tiny_unet(), ds, mid, record);
  CHECK(resumed_losses == losses);
  CHECK(resumed.iteration == 4);
  CHECK(same_weights(resumed.model, full.model));
  CHECK(same_weights(resumed.ema, full.ema));
  CHECK(same_weights(resumed.adam_v, full.adam_v));

  const Checkpoint again = train_loop(cfg, test::tiny_unet(), ds, std::nullopt);
  CHECK(same_weights(again.model, full.model));
}

TEST_CASE("train loop edge cases") {
  const PairedDataset ds = small_dataset(2, 24, 7);
  TrainConfig cfg = tiny_train();

  SUBCASE("zero iterations with a resume point returns it unchanged") {
    const Checkpoint c = train_loop(cfg, test::tiny_unet(), ds, std::nullopt);
    TrainConfig zero = cfg;
    zero.total_iterations = 0;
    const Checkpoint out = train_loop(zero, test::tiny_unet(), ds, c);
    CHECK(serialize_checkpoint(out) == serialize_checkpoint(c));
  }
  SUBCASE("zero iterations from scratch gives the initial weights") {
    cfg.total_iterations = 0;
    const Checkpoint c = train_loop(cfg, test::tiny_unet(), PairedDataset::from_pairs({}), std::nullopt);
    CHECK(c.iteration == 0);
    CHECK(same_weights(c.model, c.ema));
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS_AS(train_loop(cfg, test::tiny_unet(), PairedDataset::from_pairs({}), std::nullopt), RangeError);
  }
  SUBCASE("images smaller than the patch") {
    CHECK_THROWS_AS(train_loop(cfg, test::tiny_unet(), small_dataset(2, 12, 1), std::nullopt), ShapeError);
  }
  SUBCASE("resuming with a different network") {
    const Checkpoint c = train_loop(cfg, test::tiny_unet(), ds, std::nullopt);
    nn::UNetConfig other = test::tiny_unet();
    other.base_channels = 16;
    cfg.total_iterations = 8;
    try {
      train_loop(cfg, other, ds, c);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("config mismatch") != std::string::npos);
    }
  }
  SUBCASE("periodic checkpoints") {
    const auto dir = test::scratch_dir("trainer_ckpt");
    cfg.checkpoint_every = 2;
    TrainLoopOptions opts;
    opts.checkpoint_path = dir / "run.pdck";
    std::vector<std::int64_t> on_disk;
    opts.on_iteration = [&](std::int64_t it, double) {
      if (std::filesystem::exists(*opts.checkpoint_path)) on_disk.push_back(load_checkpoint(*opts.checkpoint_path).iteration);
    };
    const Checkpoint c = train_loop(cfg, test::tiny_unet(), ds, std::nullopt, opts);
    CHECK(on_disk == std::vector<std::int64_t>{2, 2});
    CHECK(load_checkpoint(*opts.checkpoint_path).iteration == 4);
    CHECK(serialize_checkpoint(load_checkpoint(*opts.checkpoint_path)) == serialize_checkpoint(c));
  }
}
