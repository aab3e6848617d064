#include "mcgkt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcgkt/gradcheck.hpp"
#include "mcgkt/image.hpp"
#include "mcgkt/metrics.hpp"
#include "mcgkt/rain.hpp"
#include "mcgkt/trainer.hpp"
#include "mcgkt/weight_archive.hpp"

namespace mcgkt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Removes files this invocation created if it fails partway.
class OutputTracker {
 public:
  void created(const fs::path& p) { files_.push_back(p); }
  void created_dir(const fs::path& p) { dirs_.push_back(p); }
  void commit() { files_.clear(); dirs_.clear(); }
  ~OutputTracker() {
    std::error_code ec;
    for (const fs::path& p : files_) fs::remove(p, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it)
      if (fs::is_directory(*it, ec) && fs::is_empty(*it, ec)) fs::remove(*it, ec);
  }

 private:
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
};

void write_text(const fs::path& path, const std::string& text, OutputTracker& tracker) {
  std::ofstream f(path);
  if (!f) throw IoError("cli: cannot write " + path.string());
  tracker.created(path);
  f << text;
  if (!f) throw IoError("cli: write failed for " + path.string());
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("cli: " + dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_dir(const fs::path& dir, OutputTracker& tracker) {
  if (fs::exists(dir)) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cli: cannot create directory " + dir.string());
  tracker.created_dir(dir);
}

// Edge-replicates an image up to H,W divisible by 8; forward requires it.
Tensor pad_to_multiple8(const Tensor& image, Index& orig_h, Index& orig_w) {
  const Shape& s = image.shape();
  orig_h = s.h;
  orig_w = s.w;
  const Index ph = (8 - s.h % 8) % 8, pw = (8 - s.w % 8) % 8;
  if (ph == 0 && pw == 0) return image;
  Shape os{s.n, s.c, s.h + ph, s.w + pw};
  Array v(os.numel());
  for (Index c = 0; c < s.c; ++c)
    for (Index y = 0; y < os.h; ++y)
      for (Index x = 0; x < os.w; ++x)
        v[c * os.plane() + y * os.w + x] =
            image.values()[c * s.plane() + std::min(y, s.h - 1) * s.w + std::min(x, s.w - 1)];
  return Tensor::from(os, std::move(v));
}

Tensor crop_to(const Tensor& image, Index h, Index w) {
  const Shape& s = image.shape();
  if (s.h == h && s.w == w) return image;
  Shape os{s.n, s.c, h, w};
  Array v(os.numel());
  for (Index c = 0; c < s.c; ++c)
    for (Index y = 0; y < h; ++y)
      v.segment(c * os.plane() + y * w, w) = image.values().segment(c * s.plane() + y * s.w, w);
  return Tensor::from(os, std::move(v));
}

struct CliOptions {
  // synth
  std::string clean_dir, out_dir, mode = "regular";
  RainConfig rain;
  // train / ablate
  std::string data_dir, eval_dir, out_path, resume_path, ekt_path;
  int c0 = 8;
  int se_ratio = 4;
  bool ikt = true, mlcg = true;
  bool residual = false;
  std::string fusion = "sum";
  TrainConfig tc;
  // derain / eval / import
  std::string model_path, in_dir, csv_path, derained_dir, archive_path, import_out;
  // gradcheck
  int trials = 20;
  std::uint64_t seed = 0;
};

void add_model_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--c0", o.c0, "Base channel count")->capture_default_str();
  cmd->add_option("--se-ratio", o.se_ratio, "SE reduction ratio")->capture_default_str();
  cmd->add_flag("--ikt,!--no-ikt", o.ikt, "ConvLSTM skip fusion (IKT)")->capture_default_str();
  cmd->add_flag("--mlcg,!--no-mlcg", o.mlcg, "SE context gating (MLCG)")->capture_default_str();
  cmd->add_option("--fusion", o.fusion, "Skip fusion when IKT is off: sum|concat")
      ->check(CLI::IsMember({"sum", "concat"}))
      ->capture_default_str();
  cmd->add_flag("--residual", o.residual, "Predict the rain layer and subtract")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--lr", o.tc.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--batch", o.tc.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--epochs", o.tc.epochs, "Epochs (0: use --steps)")->capture_default_str();
  cmd->add_option("--steps", o.tc.max_steps, "Step budget (overrides --epochs)")
      ->capture_default_str();
  cmd->add_option("--patch", o.tc.patch_size, "Patch size (multiple of 8)")->capture_default_str();
  cmd->add_option("--patches-per-pair", o.tc.patches_per_pair, "Patches sampled per pair per epoch")
      ->capture_default_str();
  cmd->add_option("--seed", o.tc.seed, "Random seed")->capture_default_str();
  cmd->add_option("--ekt", o.ekt_path, "Weight archive for external knowledge transfer");
}

ModelConfig model_config_from(const CliOptions& o) {
  ModelConfig mc;
  mc.base_channels = o.c0;
  mc.se_ratio = o.se_ratio;
  mc.enable_ikt = o.ikt;
  mc.enable_mlcg = o.mlcg;
  mc.skip_fusion = o.fusion == "sum" ? SkipFusion::sum : SkipFusion::concat;
  mc.residual_output = o.residual;
  return mc;
}

json model_config_json(const CliOptions& o) {
  return json{{"c0", o.c0},         {"se_ratio", o.se_ratio}, {"ikt", o.ikt},
              {"mlcg", o.mlcg},     {"fusion", o.fusion},     {"residual", o.residual}};
}

json train_config_json(const CliOptions& o) {
  return json{{"lr", o.tc.learning_rate},
              {"batch", o.tc.batch_size},
              {"epochs", o.tc.epochs},
              {"steps", o.tc.max_steps},
              {"patch", o.tc.patch_size},
              {"patches_per_pair", o.tc.patches_per_pair},
              {"seed", o.tc.seed},
              {"ekt", o.ekt_path}};
}

void echo_config(std::ostream& out, const std::string& command, json j) {
  j["command"] = command;
  out << j.dump() << "\n";
}

int run_synth(const CliOptions& o, std::ostream& out) {
  OutputTracker tracker;
  const fs::path out_root(o.out_dir);
  ensure_dir(out_root, tracker);
  ensure_dir(out_root / "rainy", tracker);
  ensure_dir(out_root / "clean", tracker);

  RainConfig rc = o.rain;
  rc.mode = o.mode == "regular" ? RainConfig::Mode::regular : RainConfig::Mode::irregular;
  rc.validate();

  const std::vector<fs::path> cleans = list_pngs(o.clean_dir);
  if (cleans.empty()) throw IoError("synth: no PNG files in " + o.clean_dir);

  std::size_t i = 0;
  for (const fs::path& path : cleans) {
    Tensor clean = load_image(path);
    RainConfig per_image = rc;
    per_image.seed = mix_seed(rc.seed, 0x5A17, i++);
    ImagePair pair = synthesize_rain(clean, per_image);
    const std::string name = path.stem().string() + ".png";
    save_image(pair.rainy, out_root / "rainy" / name);
    tracker.created(out_root / "rainy" / name);
    save_image(pair.clean, out_root / "clean" / name);
    tracker.created(out_root / "clean" / name);
  }
  out << "synthesized " << cleans.size() << " pair(s) into " << out_root.string() << "\n";
  tracker.commit();
  return 0;
}

std::vector<ImagePair> load_dataset_warn(const fs::path& root, std::ostream& out) {
  PairListing listing = discover_pairs(root);
  if (!listing.unmatched.empty())
    out << "warning: " << listing.unmatched.size() << " unmatched stem(s) in " << root.string()
        << " excluded\n";
  std::vector<ImagePair> dataset;
  for (const PairPaths& p : listing.pairs) dataset.push_back(load_pair(p.rainy, p.clean));
  return dataset;
}

int run_train(CliOptions& o, std::ostream& out) {
  OutputTracker tracker;
  const fs::path out_dir(o.out_path);
  ensure_dir(out_dir, tracker);

  o.tc.enable_ekt = !o.ekt_path.empty();
  o.tc.ekt_archive = o.ekt_path;
  if (o.tc.checkpoint_interval > 0) o.tc.checkpoint_dir = out_dir;
  if (o.tc.epochs == 0 && o.tc.max_steps == 0) o.tc.max_steps = 2000;

  std::vector<ImagePair> dataset = load_dataset_warn(o.data_dir, out);
  auto progress = [&out](std::int64_t step, float loss) {
    if (step % 100 == 0) out << "step " << step << " loss " << loss << "\n";
  };

  TrainResult result;
  if (!o.resume_path.empty())
    result = resume_training(o.resume_path, dataset, o.tc, progress);
  else
    result = train(dataset, model_config_from(o), o.tc, progress);

  save_model(result.model, out_dir / "model.mcgw");
  tracker.created(out_dir / "model.mcgw");
  write_text(out_dir / "loss.csv", loss_history_csv(result.loss_history), tracker);
  out << "trained " << result.loss_history.size() << " step(s); model written to "
      << (out_dir / "model.mcgw").string() << "\n";
  tracker.commit();
  return 0;
}

int run_derain(const CliOptions& o, std::ostream& out) {
  OutputTracker tracker;
  MCGKTModel model = load_model(o.model_path);
  const fs::path out_dir(o.out_path);
  ensure_dir(out_dir, tracker);

  const std::vector<fs::path> inputs = list_pngs(o.in_dir);
  if (inputs.empty()) throw IoError("derain: no PNG files in " + o.in_dir);
  for (const fs::path& path : inputs) {
    Tensor rainy = load_image(path);
    Index h = 0, w = 0;
    Tensor padded = pad_to_multiple8(rainy, h, w);
    Tensor derained = crop_to(model.derain(padded), h, w);
    save_image(derained, out_dir / path.filename());
    tracker.created(out_dir / path.filename());
  }
  out << "derained " << inputs.size() << " image(s) into " << out_dir.string() << "\n";
  tracker.commit();
  return 0;
}

int run_eval(const CliOptions& o, std::ostream& out) {
  OutputTracker tracker;
  EvalReport report = evaluate_dir(o.derained_dir, o.clean_dir);
  out << report.table();
  if (!o.csv_path.empty()) write_text(o.csv_path, report.csv(), tracker);
  tracker.commit();
  return 0;
}

int run_ablate(CliOptions& o, std::ostream& out) {
  OutputTracker tracker;
  o.tc.enable_ekt = !o.ekt_path.empty();
  o.tc.ekt_archive = o.ekt_path;
  if (o.tc.epochs == 0 && o.tc.max_steps == 0) o.tc.max_steps = 2000;

  std::vector<ImagePair> train_pairs = load_dataset_warn(o.data_dir, out);
  std::vector<ImagePair> eval_pairs = load_dataset_warn(o.eval_dir, out);
  AblationTable table =
      run_ablation(train_pairs, eval_pairs, model_config_from(o), o.tc);
  out << table.table();
  if (!o.csv_path.empty()) write_text(o.csv_path, table.csv(), tracker);
  tracker.commit();
  return 0;
}

int run_gradcheck(const CliOptions& o, std::ostream& out) {
  bool ok = true;
  out << "op                         worst normalized error (" << o.trials << " instances)\n";
  for (const OpGradCheck& r : gradcheck_ops(o.trials, o.seed)) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-26s %.3e %s\n", r.op.c_str(), r.worst_err,
                  r.pass() ? "ok" : "FAIL");
    out << buf;
    ok = ok && r.pass();
  }
  ModelConfig tiny;
  tiny.base_channels = 2;
  tiny.se_ratio = 4;
  OpGradCheck m = gradcheck_model(tiny, 50, o.seed);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%-26s %.3e %s\n", m.op.c_str(), m.worst_err,
                m.pass() ? "ok" : "FAIL");
  out << buf;
  ok = ok && m.pass();
  if (!ok) throw NumericError("gradcheck: at least one operation exceeded tolerance 1e-3");
  return 0;
}

int run_import(const CliOptions& o, std::ostream& out) {
  MCGKTModel model = load_model(o.model_path);
  WeightArchive archive = WeightArchive::load(o.archive_path);
  ImportReport report = import_ekt(model, archive);
  const std::string dest = o.import_out.empty() ? o.model_path : o.import_out;
  save_model(model, dest);
  out << report.str();
  out << "model written to " << dest << "\n";
  return 0;
}

std::unique_ptr<CLI::App> build_app(CliOptions& o) {
  auto app = std::make_unique<CLI::App>("MCGKT-Net single-image deraining toolkit");
  app->require_subcommand(1);

  CLI::App* synth = app->add_subcommand("synth", "Build a rainy/clean pair dataset");
  synth->add_option("--clean-dir", o.clean_dir, "Directory of clean PNGs")->required();
  synth->add_option("--out-dir", o.out_dir, "Output dataset root (rainy/ + clean/)")->required();
  synth->add_option("--mode", o.mode, "Streak style: regular|irregular")
      ->check(CLI::IsMember({"regular", "irregular"}))
      ->capture_default_str();
  synth->add_option("--seed", o.rain.seed, "Random seed")->capture_default_str();
  synth->add_option("--density", o.rain.density_per_mpx, "Streaks per megapixel")
      ->capture_default_str();
  synth->add_option("--angle-min", o.rain.angle_min_deg, "Min angle from vertical (deg)")
      ->capture_default_str();
  synth->add_option("--angle-max", o.rain.angle_max_deg, "Max angle from vertical (deg)")
      ->capture_default_str();
  synth->add_option("--length-min", o.rain.length_min, "Min streak length (px)")
      ->capture_default_str();
  synth->add_option("--length-max", o.rain.length_max, "Max streak length (px)")
      ->capture_default_str();
  synth->add_option("--width-min", o.rain.width_min, "Min streak width (px)")
      ->capture_default_str();
  synth->add_option("--width-max", o.rain.width_max, "Max streak width (px)")
      ->capture_default_str();
  synth->add_option("--intensity-min", o.rain.intensity_min, "Min streak intensity")
      ->capture_default_str();
  synth->add_option("--intensity-max", o.rain.intensity_max, "Max streak intensity")
      ->capture_default_str();
  synth->add_option("--blur", o.rain.blur_sigma, "Gaussian blur sigma (px)")
      ->capture_default_str();

  CLI::App* train = app->add_subcommand("train", "Train a deraining model");
  train->add_option("--data", o.data_dir, "Dataset root (rainy/ + clean/)")->required();
  train->add_option("--out", o.out_path, "Output directory for model.mcgw and loss.csv")
      ->required();
  add_model_flags(train, o);
  add_train_flags(train, o);
  train->add_option("--checkpoint-interval", o.tc.checkpoint_interval,
                    "Checkpoint every N steps (0: off)")
      ->capture_default_str();
  train->add_option("--resume", o.resume_path, "Checkpoint archive to resume from");

  CLI::App* derain = app->add_subcommand("derain", "Run inference on a directory of PNGs");
  derain->add_option("--model", o.model_path, "Model archive")->required();
  derain->add_option("--in", o.in_dir, "Input directory")->required();
  derain->add_option("--out", o.out_path, "Output directory")->required();

  CLI::App* eval = app->add_subcommand("eval", "PSNR/SSIM report for two directories");
  eval->add_option("--derained", o.derained_dir, "Derained image directory")->required();
  eval->add_option("--clean", o.clean_dir, "Clean reference directory")->required();
  eval->add_option("--csv", o.csv_path, "Write the report as CSV to this path");

  CLI::App* ablate = app->add_subcommand("ablate", "Module-toggle ablation table");
  ablate->add_option("--data", o.data_dir, "Training dataset root")->required();
  ablate->add_option("--eval", o.eval_dir, "Held-out dataset root")->required();
  ablate->add_option("--csv", o.csv_path, "Write the table as CSV to this path");
  add_model_flags(ablate, o);
  add_train_flags(ablate, o);

  CLI::App* gradcheck = app->add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--trials", o.trials, "Instances per operation")->capture_default_str();
  gradcheck->add_option("--seed", o.seed, "Random seed")->capture_default_str();

  CLI::App* import = app->add_subcommand("import-weights", "Apply external knowledge transfer");
  import->add_option("--archive", o.archive_path, "Weight archive to import")->required();
  import->add_option("--model", o.model_path, "Model archive to update")->required();
  import->add_option("--out", o.import_out, "Destination (default: overwrite --model)");

  return app;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliOptions o;
  auto app = build_app(o);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* scope = app.get();
    while (!scope->get_subcommands().empty()) scope = scope->get_subcommands().front();
    out << scope->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app->got_subcommand("synth")) {
      echo_config(out, "synth",
                  json{{"clean_dir", o.clean_dir},
                       {"out_dir", o.out_dir},
                       {"mode", o.mode},
                       {"seed", o.rain.seed},
                       {"density", o.rain.density_per_mpx},
                       {"angle", {o.rain.angle_min_deg, o.rain.angle_max_deg}},
                       {"length", {o.rain.length_min, o.rain.length_max}},
                       {"width", {o.rain.width_min, o.rain.width_max}},
                       {"intensity", {o.rain.intensity_min, o.rain.intensity_max}},
                       {"blur", o.rain.blur_sigma}});
      return run_synth(o, out);
    }
    if (app->got_subcommand("train")) {
      json j = train_config_json(o);
      j.update(model_config_json(o));
      j["data"] = o.data_dir;
      j["out"] = o.out_path;
      j["checkpoint_interval"] = o.tc.checkpoint_interval;
      j["resume"] = o.resume_path;
      echo_config(out, "train", j);
      return run_train(o, out);
    }
    if (app->got_subcommand("derain")) {
      echo_config(out, "derain",
                  json{{"model", o.model_path}, {"in", o.in_dir}, {"out", o.out_path}});
      return run_derain(o, out);
    }
    if (app->got_subcommand("eval")) {
      echo_config(out, "eval",
                  json{{"derained", o.derained_dir}, {"clean", o.clean_dir}, {"csv", o.csv_path}});
      return run_eval(o, out);
    }
    if (app->got_subcommand("ablate")) {
      json j = train_config_json(o);
      j.update(model_config_json(o));
      j["data"] = o.data_dir;
      j["eval"] = o.eval_dir;
      j["csv"] = o.csv_path;
      echo_config(out, "ablate", j);
      return run_ablate(o, out);
    }
    if (app->got_subcommand("gradcheck")) {
      echo_config(out, "gradcheck", json{{"trials", o.trials}, {"seed", o.seed}});
      return run_gradcheck(o, out);
    }
    if (app->got_subcommand("import-weights")) {
      echo_config(out, "import-weights",
                  json{{"archive", o.archive_path}, {"model", o.model_path}, {"out", o.import_out}});
      return run_import(o, out);
    }
    err << "error: usage: no subcommand selected\n";
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

std::map<std::string, std::vector<std::string>> cli_flag_table() {
  CliOptions o;
  auto app = build_app(o);
  std::map<std::string, std::vector<std::string>> table;
  for (const CLI::App* sub : app->get_subcommands([](const CLI::App*) { return true; })) {
    std::vector<std::string> names;
    for (const CLI::Option* opt : sub->get_options())
      if (opt->get_name() != "--help") names.push_back(opt->get_name());
    std::sort(names.begin(), names.end());
    table[sub->get_name()] = names;
  }
  return table;
}

}  // namespace mcgkt
