#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>

#include "patchdiff/config.hpp"
#include "patchdiff/data.hpp"
#include "patchdiff/errors.hpp"
#include "patchdiff/metrics.hpp"
#include "patchdiff/patch.hpp"
#include "patchdiff/trainer.hpp"
#include "patchdiff/unet_estimator.hpp"

namespace patchdiff::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const RangeError*>(&e) ||
      dynamic_cast<const GeometryError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitInternal;
}

std::string format_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

json psnr_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string resume;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  KeyValues kv = read_config_file(a.config);
  for (const std::string& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    KeyValues one = parse_config_text("schema_version = 1\n" + o, "--set");
    one.erase("schema_version");
    for (auto& [k, v] : one) kv[k] = v;
  }
  const RunConfig cfg = resolve_config(kv);
  const std::string resolved = format_config(cfg);
  out << "# resolved config\n" << resolved << std::flush;
  {
    fs::path echo = cfg.checkpoint_path;
    echo += ".config";
    std::ofstream f(echo);
    if (!f) throw IoError("cannot write " + echo.string());
    f << resolved;
  }

  if (cfg.data_root.empty()) throw ConfigError("data.root is required for training");
  const PairedDataset dataset = PairedDataset::open(cfg.data_root);
  if (dataset.empty()) throw IoError("dataset " + cfg.data_root.string() + " contains no image pairs");

  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    if (!(resume->unet == cfg.unet)) {
      throw ConfigError("config mismatch: network settings differ from checkpoint " + a.resume);
    }
  }
  std::ofstream log(cfg.log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open training log " + cfg.log_path.string());

  TrainLoopOptions options;
  options.checkpoint_path = cfg.checkpoint_path;
  options.log = &log;
  const Checkpoint final_ckpt = train_loop(cfg.train, cfg.unet, dataset, resume, options);
  if (resume && final_ckpt.iteration == resume->iteration) save_checkpoint(final_ckpt, cfg.checkpoint_path);
  out << "trained to iteration " << final_ckpt.iteration << ", checkpoint " << cfg.checkpoint_path.string() << "\n";
  return kExitOk;
}

// ---- restore ----------------------------------------------------------------

struct RestoreArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  std::optional<int> steps;
  int grid_step = 16;
  std::uint64_t seed = 0;
  bool naive = false;
  bool raw_weights = false;
  int max_patches = 64;
};

int cmd_restore(const RestoreArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const std::string digest = file_sha256(a.ckpt);
  const UNetEstimator<float> estimator(a.raw_weights ? raw_model(ckpt) : ema_model(ckpt));
  const NoiseSchedule schedule(ckpt.schedule);
  const int p = ckpt.unet.patch_size;
  const int steps = a.steps.value_or(p == 128 ? 50 : 10);
  const TimestepSubsequence sub(schedule.timesteps(), steps);
  RestoreOptions opts;
  opts.patch_size = p;
  opts.grid_step = a.grid_step;
  opts.seed = a.seed;
  opts.blend.max_patches_in_flight = a.max_patches;

  out << "restore: steps=" << steps << " grid_step=" << a.grid_step << " patch_size=" << p << " seed=" << a.seed
      << " mode=" << (a.naive ? "naive" : "blended") << " weights=" << (a.raw_weights ? "raw" : "ema")
      << " checkpoint_sha256=" << digest << "\n";

  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.in)) {
    fs::create_directories(a.out);
    for (const fs::path& f : list_pngs(a.in)) jobs.emplace_back(f, fs::path(a.out) / f.filename());
  } else {
    if (!fs::exists(a.in)) throw IoError("input " + a.in + " does not exist");
    fs::path dst = a.out;
    if (fs::is_directory(dst)) dst /= fs::path(a.in).filename();
    jobs.emplace_back(a.in, dst);
  }

  std::vector<std::string> failures;
  for (const auto& [src, dst] : jobs) {
    try {
      const ImageTensor input = load_png(src);
      const ImageTensor cond = resize_to_multiple(input, 16);
      const ImageTensor result = a.naive ? naive_restore(estimator, cond, schedule, sub, opts)
                                         : restore(estimator, cond, schedule, sub, opts);
      save_png(result, dst);
      json side;
      side["input"] = src.string();
      side["input_size"] = {input.height(), input.width()};
      side["output_size"] = {result.height(), result.width()};
      side["steps"] = steps;
      side["grid_step"] = a.grid_step;
      side["patch_size"] = p;
      side["seed"] = a.seed;
      side["mode"] = a.naive ? "naive" : "blended";
      side["weights"] = a.raw_weights ? "raw" : "ema";
      side["checkpoint_sha256"] = digest;
      fs::path side_path = dst;
      side_path.replace_extension(".json");
      std::ofstream s(side_path);
      if (!s) throw IoError("cannot write " + side_path.string());
      s << side.dump(2) << "\n";
      out << "restored " << src.string() << " -> " << dst.string() << "\n";
    } catch (const std::exception& e) {
      failures.push_back(src.string() + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    err << failures.size() << " of " << jobs.size() << " file(s) failed:\n";
    for (const std::string& f : failures) err << "  " << f << "\n";
    return jobs.size() == 1 ? kExitIo : kExitPartial;
  }
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string report;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  for (const std::string& d : {a.pred, a.gt}) {
    if (!fs::is_directory(d)) throw IoError("folder " + d + " does not exist");
  }
  std::unique_ptr<std::ofstream> report;
  if (!a.report.empty()) {
    report = std::make_unique<std::ofstream>(a.report);
    if (!*report) throw IoError("cannot write report " + a.report);
  }
  std::vector<std::string> problems;
  for (const fs::path& f : list_pngs(a.pred)) {
    if (!fs::exists(fs::path(a.gt) / f.filename())) problems.push_back(f.filename().string() + ": no ground truth");
  }

  char line[256];
  std::snprintf(line, sizeof(line), "%-32s %10s %8s\n", "image", "PSNR(dB)", "SSIM");
  out << line;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  int n = 0;
  for (const fs::path& g : list_pngs(a.gt)) {
    const std::string name = g.filename().string();
    const fs::path p = fs::path(a.pred) / name;
    if (!fs::exists(p)) {
      problems.push_back(name + ": no prediction");
      continue;
    }
    try {
      const QualityScore s = score_model_rgb(load_png(p), load_png(g));
      psnr_sum += s.psnr_db;
      ssim_sum += s.ssim;
      ++n;
      std::snprintf(line, sizeof(line), "%-32s %10s %8.4f\n", name.c_str(), format_psnr(s.psnr_db).c_str(), s.ssim);
      out << line;
      if (report) *report << json{{"name", name}, {"psnr", psnr_json(s.psnr_db)}, {"ssim", s.ssim}}.dump() << "\n";
    } catch (const Error& e) {
      problems.push_back(name + ": " + e.what());
    }
  }
  const double mean_psnr = n ? psnr_sum / n : 0.0;
  const double mean_ssim = n ? ssim_sum / n : 0.0;
  std::snprintf(line, sizeof(line), "%-32s %10s %8.4f\n", ("mean (" + std::to_string(n) + ")").c_str(),
                format_psnr(mean_psnr).c_str(), mean_ssim);
  out << line;
  if (report) {
    *report << json{{"mean_psnr", psnr_json(mean_psnr)}, {"mean_ssim", mean_ssim}, {"count", n}}.dump() << "\n";
  }
  if (!problems.empty()) {
    err << problems.size() << " file(s) could not be scored:\n";
    for (const std::string& s : problems) err << "  " << s << "\n";
    return kExitPartial;
  }
  return kExitOk;
}

// ---- make-toy-data ----------------------------------------------------------

struct ToyArgs {
  int n = 200;
  int size = 64;
  std::string kinds = "speckle-snow";
  std::uint64_t seed = 0;
  double severity = 0.5;
  std::string out;
};

int cmd_make_toy_data(const ToyArgs& a, std::ostream& out) {
  std::vector<CorruptionKind> kinds;
  std::istringstream in(a.kinds);
  std::string tok;
  while (std::getline(in, tok, ',')) kinds.push_back(parse_corruption_kind(tok));
  const auto entries = make_toy_dataset(a.n, a.size, kinds, a.seed, a.out, a.severity);
  out << "wrote " << entries.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof(b), "%02x", md[i]);
    hex += b;
  }
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Patch-based conditional diffusion restoration"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", ta.config, "Config file")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--set", ta.overrides, "Override a config key (key=value), repeatable");

  RestoreArgs ra;
  auto* rest = app.add_subcommand("restore", "Restore an image or a folder of images");
  rest->add_option("--ckpt", ra.ckpt, "Checkpoint file")->required();
  rest->add_option("--in", ra.in, "Input PNG or folder")->required();
  rest->add_option("--out", ra.out, "Output PNG or folder")->required();
  rest->add_option("--steps", ra.steps, "Sampling steps S (default 10, or 50 for p=128)");
  rest->add_option("--grid-step", ra.grid_step, "Patch grid step r")->capture_default_str();
  rest->add_option("--seed", ra.seed, "Sampling seed")->capture_default_str();
  rest->add_flag("--naive", ra.naive, "Sample patches independently and average the results");
  rest->add_flag("--raw-weights", ra.raw_weights, "Use the raw weights instead of the EMA weights");
  rest->add_option("--max-patches", ra.max_patches, "Patch estimates held in memory at once")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score restored images against ground truth");
  eval->add_option("--pred", ea.pred, "Folder of restored PNGs")->required();
  eval->add_option("--gt", ea.gt, "Folder of ground-truth PNGs")->required();
  eval->add_option("--report", ea.report, "JSON-lines report file");

  ToyArgs ya;
  auto* toy = app.add_subcommand("make-toy-data", "Generate a synthetic paired dataset");
  toy->add_option("--n", ya.n, "Number of pairs")->capture_default_str();
  toy->add_option("--size", ya.size, "Image side length (multiple of 16)")->capture_default_str();
  toy->add_option("--kinds", ya.kinds, "Comma-separated corruption kinds")->capture_default_str();
  toy->add_option("--seed", ya.seed, "Generator seed")->capture_default_str();
  toy->add_option("--severity", ya.severity, "Corruption severity in [0, 1]")->capture_default_str();
  toy->add_option("--out", ya.out, "Output folder")->required();

  std::vector<const char*> argv;
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(ta, out);
    if (*rest) return cmd_restore(ra, out, err);
    if (*eval) return cmd_eval(ea, out, err);
    return cmd_make_toy_data(ya, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace patchdiff::cli
