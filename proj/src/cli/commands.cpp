#include "ssvp/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "ssvp/evaluate.hpp"
#include "ssvp/grad_check.hpp"
#include "ssvp/io.hpp"

namespace ssvp::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Grid parse_grid(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("grid must look like HxW, got '" + s + "'");
  return {std::stoul(m[1].str()), std::stoul(m[2].str())};
}

void log_config(const std::string& command, const json& resolved) {
  fmt::print(stderr, "[{}] config {}\n", command, resolved.dump());
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Config file: {"model": {...}, "train": {...}}, both optional. Encoder
/// widths default to the dataset's.
RunConfig load_run_config(const std::string& path, const io::SynthSpec& data) {
  RunConfig rc;
  rc.model.d_clip = data.d_clip;
  rc.model.d_dino = data.d_dino;
  rc.model.layers = data.layers;
  if (path.empty()) return rc;
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        json merged = rc.model;
        merged.update(value);
        rc.model = merged.get<ModelConfig>();
      } else if (key == "train") {
        json merged = rc.train;
        merged.update(value);
        rc.train = merged.get<TrainConfig>();
      } else {
        throw UsageError("config " + path + ": unknown section '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return rc;
}

struct TrainOutcome {
  SsvpModel model;
  TrainResult result;
};

TrainOutcome run_training(const RunConfig& rc, const std::vector<FeatureBundle>& data) {
  SsvpModel model(rc.model, rc.train.seed);
  TrainResult result = train(model, data, rc.train);
  return {std::move(model), std::move(result)};
}

json report_config(const RunConfig& rc, const json& extra) {
  json j = {{"model", rc.model},
            {"train", rc.train},
            {"bundle_format_version", io::kBundleVersion},
            {"checkpoint_format_version", io::kCheckpointVersion}};
  j.update(extra);
  return j;
}

int cmd_gen_synth(const std::string& out, io::SynthSpec spec, const std::string& grid) {
  spec.grid = parse_grid(grid);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  log_config("gen-synth", json(spec));
  const io::SynthDataset ds = io::gen_synthetic(spec);
  const io::Manifest m = io::write_dataset(ds, spec, out);
  fmt::print("wrote {} bundles to {}\n", m.entries.size(), out);
  return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& config, const std::string& out,
              std::optional<std::uint64_t> seed, const std::vector<std::string>& exclude,
              std::string history) {
  const io::Manifest manifest = io::read_manifest(data_dir);
  RunConfig rc = load_run_config(config, manifest.spec);
  if (seed) rc.train.seed = *seed;
  if (history.empty()) history = out + ".history.jsonl";
  log_config("train", {{"model", rc.model}, {"train", rc.train}, {"data", data_dir},
                       {"exclude_category", exclude}, {"out", out}, {"history", history}});
  const auto data = io::load_dataset(data_dir, {"train", {}, exclude});
  if (data.empty()) throw UsageError("no training bundles selected");

  SsvpModel model(rc.model, rc.train.seed);
  std::ofstream hist(history, std::ios::trunc);
  if (!hist) throw io::FormatError(io::Errc::kIo, "cannot write " + history);
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train(model, data, rc.train, [&](const StepRecord& r) {
    hist << to_json(r).dump() << '\n';
  });
  hist.flush();
  io::save_checkpoint(io::snapshot(model, rc.train, rc.train.seed, result.rng_state, history), out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fmt::print("trained {} steps in {:.1f}s, final loss {:.6f}\n", result.history.size(), secs,
             result.history.back().total);
  return kOk;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt, const std::string& report_path,
             const std::string& heatmaps, const std::string& split,
             const std::vector<std::string>& categories, std::size_t pro_thresholds) {
  const io::Checkpoint c = io::load_checkpoint(ckpt);
  const SsvpModel model = io::restore_model(c);
  const auto data = io::load_dataset(data_dir, {split, categories, {}});
  if (data.empty()) throw UsageError("no bundles selected for evaluation");
  metrics::ProOptions pro;
  pro.thresholds = pro_thresholds;
  const RunConfig rc{c.model, c.train};
  const json extra = {{"checkpoint", ckpt},
                      {"data", data_dir},
                      {"split", split},
                      {"categories", categories},
                      {"pro_fpr_limit", pro.fpr_limit},
                      {"pro_thresholds", pro.thresholds},
                      {"eps", 0.0}};
  log_config("eval", report_config(rc, extra));
  HeatmapSink sink;
  if (!heatmaps.empty()) {
    sink = [&heatmaps](const FeatureBundle& b, const Tensor& p) {
      io::write_heatmap(p, fs::path(heatmaps) / (b.source_id + ".pgm"));
    };
  }
  metrics::EvalReport report = evaluate(model, data, c.train.scoring(), pro, sink);
  report.config = report_config(rc, extra);
  io::write_file(report_path, metrics::report_to_json(report) + "\n");
  fmt::print("image auroc {:.6f}  pixel auroc {:.6f}  pro {:.6f}\n", report.overall.image.auroc,
             report.overall.pixel.auroc, report.overall.pixel.pro);
  return kOk;
}

int cmd_infer(const std::string& ckpt, const std::string& bundle, const std::string& heatmap) {
  const io::Checkpoint c = io::load_checkpoint(ckpt);
  const SsvpModel model = io::restore_model(c);
  const FeatureBundle b = io::read_bundle(bundle);
  const Inference r = infer(model, b, c.train.scoring());
  if (!heatmap.empty()) io::write_heatmap(r.p_map, heatmap);
  fmt::print("{:.6f}\n", r.s_final);
  return kOk;
}

int cmd_grad_check(std::uint64_t seed, double tol) {
  log_config("grad-check", {{"seed", seed}, {"tol", tol}, {"h", GradCheckOptions{}.h},
                            {"model", grad_check_model_config()},
                            {"train", grad_check_train_config()}});
  const auto start = std::chrono::steady_clock::now();
  const GradCheckResult r = grad_check({seed, GradCheckOptions{}.h, tol});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& [module, err] : r.worst) fmt::print("{:<6} worst relative error {:.3e}\n", module, err);
  fmt::print("{} tensors checked in {:.2f}s: {}\n", r.tensors.size(), secs, r.passed ? "PASS" : "FAIL");
  if (!r.passed) {
    for (const auto& t : r.tensors) {
      if (t.error >= tol) fmt::print(stderr, "  {} error {:.3e}\n", t.name, t.error);
    }
    return kNumericError;
  }
  return kOk;
}

int cmd_sweep(const std::string& param, const std::vector<double>& values, const std::string& data_dir,
              const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
              const std::vector<std::string>& exclude) {
  if (param != "gamma" && param != "xi") throw UsageError("--param must be gamma or xi");
  const io::Manifest manifest = io::read_manifest(data_dir);
  RunConfig base = load_run_config(config, manifest.spec);
  if (seed) base.train.seed = *seed;
  log_config("sweep", {{"param", param}, {"values", values}, {"model", base.model},
                       {"train", base.train}, {"exclude_category", exclude}});
  const auto train_set = io::load_dataset(data_dir, {"train", {}, exclude});
  const auto test_set = io::load_dataset(data_dir, {"test", exclude, {}});
  if (train_set.empty() || test_set.empty()) throw UsageError("sweep needs train and test bundles");

  json rows = json::array();
  for (double v : values) {
    RunConfig rc = base;
    (param == "gamma" ? rc.train.gamma : rc.train.xi) = v;
    rc.train.validate();
    TrainOutcome run = run_training(rc, train_set);
    const auto rep = evaluate(run.model, test_set, rc.train.scoring());
    rows.push_back({{param, v},
                    {"image_auroc", rep.overall.image.auroc},
                    {"image_f1_max", rep.overall.image.f1_max},
                    {"image_ap", rep.overall.image.ap},
                    {"pixel_auroc", rep.overall.pixel.auroc},
                    {"pixel_pro", rep.overall.pixel.pro},
                    {"pixel_ap", rep.overall.pixel.ap}});
    fmt::print("{}={} image auroc {:.6f} pixel auroc {:.6f}\n", param, v, rep.overall.image.auroc,
               rep.overall.pixel.auroc);
  }
  std::string text;
  if (fs::path(out).extension() == ".csv") {
    text = fmt::format("{},image_auroc,image_f1_max,image_ap,pixel_auroc,pixel_pro,pixel_ap\n", param);
    for (const auto& r : rows) {
      text += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r[param].get<double>(),
                          r["image_auroc"].get<double>(), r["image_f1_max"].get<double>(),
                          r["image_ap"].get<double>(), r["pixel_auroc"].get<double>(),
                          r["pixel_pro"].get<double>(), r["pixel_ap"].get<double>());
    }
  } else {
    text = json{{"param", param}, {"rows", rows}}.dump(2) + "\n";
  }
  io::write_file(out, text);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Synergistic visual prompting for zero-shot anomaly detection"};
  app.require_subcommand(1);
  app.allow_extras(false);

  io::SynthSpec spec;
  std::string out, grid = "12x12", data, config, ckpt, report, heatmaps, bundle, heatmap, history,
              split = "test", param;
  std::vector<std::string> exclude, categories;
  std::vector<double> values;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  std::size_t pro_thresholds = 0;

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic feature-bundle dataset");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--categories", spec.n_categories)->capture_default_str();
  gen->add_option("--samples", spec.samples_per_split, "bundles per split and category")->capture_default_str();
  gen->add_option("--anomaly-rate", spec.anomaly_rate)->capture_default_str();
  gen->add_option("--grid", grid, "HxW")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--d-clip", spec.d_clip)->capture_default_str();
  gen->add_option("--d-dino", spec.d_dino)->capture_default_str();
  gen->add_option("--layers", spec.layers)->capture_default_str();
  gen->add_option("--offset", spec.anomaly_offset)->capture_default_str();
  gen->add_option("--region-min", spec.region_size.first)->capture_default_str();
  gen->add_option("--region-max", spec.region_size.second)->capture_default_str();

  auto* tr = app.add_subcommand("train", "train a model on the train split");
  tr->add_option("--data", data)->required();
  tr->add_option("--config", config, "JSON with optional model/train sections");
  tr->add_option("--out", out, "checkpoint path")->required();
  auto* tr_seed = tr->add_option("--seed", seed);
  tr->add_option("--exclude-category", exclude, "hold a category out of training");
  tr->add_option("--history", history, "loss history path (default <out>.history.jsonl)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--data", data)->required();
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--report", report)->required();
  ev->add_option("--heatmaps", heatmaps, "directory for per-image PGM heatmaps");
  ev->add_option("--split", split)->capture_default_str();
  ev->add_option("--category", categories, "restrict to these categories");
  ev->add_option("--pro-thresholds", pro_thresholds, "0 sweeps every distinct score")->capture_default_str();

  auto* inf = app.add_subcommand("infer", "score one bundle");
  inf->add_option("--ckpt", ckpt)->required();
  inf->add_option("--bundle", bundle)->required();
  inf->add_option("--heatmap", heatmap);

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  gc->add_option("--seed", seed)->capture_default_str();
  gc->add_option("--tol", tol)->capture_default_str();

  auto* sw = app.add_subcommand("sweep", "train and evaluate over one hyperparameter");
  sw->add_option("--param", param)->required()->check(CLI::IsMember({"gamma", "xi"}));
  sw->add_option("--values", values)->required()->delimiter(',');
  sw->add_option("--data", data)->required();
  sw->add_option("--config", config);
  sw->add_option("--out", out, ".json or .csv")->required();
  auto* sw_seed = sw->add_option("--seed", seed);
  sw->add_option("--exclude-category", exclude, "held-out categories; evaluation uses only these");

  std::vector<const char*> argv{"ssvp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(out, spec, grid);
    if (tr->parsed()) {
      return cmd_train(data, config, out, tr_seed->count() ? std::optional(seed) : std::nullopt,
                       exclude, history);
    }
    if (ev->parsed()) return cmd_eval(data, ckpt, report, heatmaps, split, categories, pro_thresholds);
    if (inf->parsed()) return cmd_infer(ckpt, bundle, heatmap);
    if (gc->parsed()) return cmd_grad_check(seed, tol);
    if (sw->parsed()) {
      return cmd_sweep(param, values, data, config, out,
                       sw_seed->count() ? std::optional(seed) : std::nullopt, exclude);
    }
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const io::FormatError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kDataError;
  } catch (const nc::ShapeError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kDataError;
  } catch (const TrainingError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kNumericError;
  } catch (const nc::NumericError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kDataError;
  }
  return kUsage;
}

}  // namespace ssvp::cli
