#include "mcgkt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mcgkt/metrics.hpp"
#include "mcgkt/ops.hpp"
#include "mcgkt/weight_archive.hpp"

namespace mcgkt {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0f) throw ConfigError("train config: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
  if (patch_size < 8 || patch_size % 8 != 0)
    throw ConfigError("train config: patch size must be a positive multiple of 8");
  if (patches_per_pair < 1) throw ConfigError("train config: patches_per_pair must be >= 1");
  if (epochs <= 0 && max_steps <= 0)
    throw ConfigError("train config: set epochs or max_steps");
  if (checkpoint_interval > 0 && checkpoint_dir.empty())
    throw ConfigError("train config: checkpoint interval set without a checkpoint directory");
  if (enable_ekt && ekt_archive.empty())
    throw ConfigError("train config: EKT enabled without an archive path");
}

void adam_step(ParamStore& params, AdamState& state, float learning_rate) {
  for (const std::string& name : params.names())
    if (!params.at(name).has_grad())
      throw UsageError("adam: parameter " + name + " has no gradient");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const float m_corr = static_cast<float>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const float v_corr = static_cast<float>(1.0 / (1.0 - std::pow(state.beta2, t)));

  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    auto [it, fresh] = state.moments.try_emplace(name);
    AdamState::Moments& mom = it->second;
    if (fresh) {
      mom.m = Array::Zero(p.numel());
      mom.v = Array::Zero(p.numel());
    }
    const Array& g = p.grad();
    mom.m = state.beta1 * mom.m + (1.0f - state.beta1) * g;
    mom.v = state.beta2 * mom.v + (1.0f - state.beta2) * g * g;
    p.values() -= learning_rate * (mom.m * m_corr) / ((mom.v * v_corr).sqrt() + state.epsilon);
    p.clear_grad();
  }
}

namespace {

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"learning_rate", c.learning_rate},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"max_steps", c.max_steps},
                        {"patch_size", c.patch_size},
                        {"patches_per_pair", c.patches_per_pair},
                        {"seed", c.seed},
                        {"checkpoint_interval", c.checkpoint_interval},
                        {"enable_ekt", c.enable_ekt},
                        {"ekt_archive", c.ekt_archive.string()}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate");
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.max_steps = j.at("max_steps");
  c.patch_size = j.at("patch_size");
  c.patches_per_pair = j.at("patches_per_pair");
  c.seed = j.at("seed");
  c.checkpoint_interval = j.at("checkpoint_interval");
  c.enable_ekt = j.at("enable_ekt");
  c.ekt_archive = std::string(j.at("ekt_archive"));
  return c;
}

// Epoch batch schedule derived purely from (seed, epoch): patch offsets per
// pair, then a shuffled visit order. Resume needs no RNG state.
std::vector<ImagePair> epoch_patches(const std::vector<ImagePair>& dataset,
                                     const TrainConfig& cfg, std::int64_t epoch) {
  std::vector<ImagePair> patches;
  patches.reserve(dataset.size() * cfg.patches_per_pair);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto ps = sample_patches(dataset[i], cfg.patch_size, cfg.patches_per_pair,
                             mix_seed(cfg.seed, 0x70A7C4E5ULL + epoch, i));
    for (auto& p : ps) patches.push_back(std::move(p));
  }
  // Fisher-Yates with a platform-independent bounded draw
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5EEDBA7CULL, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = patches.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(patches[i - 1], patches[j]);
  }
  return patches;
}

struct Batch {
  Tensor rainy, clean;
};

Batch stack_batch(const std::vector<ImagePair>& patches, std::size_t begin, std::size_t end) {
  const Shape& s = patches[begin].rainy.shape();
  const Index per = s.c * s.plane();
  Shape bs{static_cast<Index>(end - begin), s.c, s.h, s.w};
  Array rv(bs.numel()), cv(bs.numel());
  for (std::size_t i = begin; i < end; ++i) {
    rv.segment(static_cast<Index>(i - begin) * per, per) = patches[i].rainy.values();
    cv.segment(static_cast<Index>(i - begin) * per, per) = patches[i].clean.values();
  }
  return Batch{Tensor::from(bs, std::move(rv)), Tensor::from(bs, std::move(cv))};
}

TrainResult train_loop(MCGKTModel model, AdamState adam, std::int64_t start_step,
                       const std::vector<ImagePair>& dataset, const TrainConfig& cfg,
                       const StepCallback& on_step) {
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  for (const ImagePair& p : dataset) {
    if (p.rainy.shape().h < cfg.patch_size || p.rainy.shape().w < cfg.patch_size)
      throw ConfigError("train: patch size " + std::to_string(cfg.patch_size) +
                        " exceeds image " + p.rainy.shape().str());
  }

  const std::int64_t patches_per_epoch =
      static_cast<std::int64_t>(dataset.size()) * cfg.patches_per_pair;
  const std::int64_t steps_per_epoch =
      (patches_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps =
      cfg.max_steps > 0 ? cfg.max_steps : static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

  TrainResult result;
  std::vector<ImagePair> patches;
  std::int64_t patches_epoch = -1;

  for (std::int64_t step = start_step; step < total_steps; ++step) {
    const std::int64_t epoch = step / steps_per_epoch;
    const std::int64_t within = step % steps_per_epoch;
    if (epoch != patches_epoch) {
      patches = epoch_patches(dataset, cfg, epoch);
      patches_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(within * cfg.batch_size);
    const std::size_t end =
        std::min(patches.size(), begin + static_cast<std::size_t>(cfg.batch_size));
    Batch batch = stack_batch(patches, begin, end);

    Tape tape;
    Tensor pred = model.forward(tape, batch.rainy);
    Tensor loss = mse_loss(tape, pred, batch.clean);
    const float loss_value = loss.values()[0];
    if (!std::isfinite(loss_value))
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         " (epoch " + std::to_string(epoch) + ")");
    tape.backward(loss);
    adam_step(model.params(), adam, cfg.learning_rate);

    result.loss_history.emplace_back(step, loss_value);
    if (on_step) on_step(step, loss_value);

    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 &&
        step + 1 < total_steps) {
      save_checkpoint(model, adam, cfg, step + 1,
                      cfg.checkpoint_dir / ("checkpoint-" + std::to_string(step + 1) + ".mcgw"));
    }
  }

  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult train(const std::vector<ImagePair>& dataset, const ModelConfig& model_config,
                  const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  model_config.validate();
  MCGKTModel model = MCGKTModel::init(model_config, config.seed);
  if (config.enable_ekt) {
    WeightArchive archive = WeightArchive::load(config.ekt_archive);
    import_ekt(model, archive);
  }
  return train_loop(std::move(model), AdamState{}, 0, dataset, config, on_step);
}

void save_checkpoint(const MCGKTModel& model, const AdamState& adam, const TrainConfig& config,
                     std::int64_t step, const std::filesystem::path& path) {
  WeightArchive a;
  a.set_header("format", "mcgkt-checkpoint/1");
  a.set_header("model_config",
               nlohmann::json{{"base_channels", model.config().base_channels},
                              {"levels", model.config().levels},
                              {"se_ratio", model.config().se_ratio},
                              {"enable_ikt", model.config().enable_ikt},
                              {"enable_mlcg", model.config().enable_mlcg},
                              {"skip_fusion",
                               model.config().skip_fusion == SkipFusion::sum ? "sum" : "concat"},
                              {"residual_output", model.config().residual_output},
                              {"input_channels", model.config().input_channels},
                              {"output_channels", model.config().output_channels}}
                   .dump());
  a.set_header("train_config", train_config_to_json(config).dump());
  a.set_header("step", std::to_string(step));
  for (const std::string& name : model.params().names()) {
    const Tensor& t = model.params().at(name);
    a.add(name, t.shape(), t.values());
    auto it = adam.moments.find(name);
    if (it != adam.moments.end()) {
      a.add("adam.m." + name, t.shape(), it->second.m);
      a.add("adam.v." + name, t.shape(), it->second.v);
    }
  }
  a.save(path);
}

TrainResult resume_training(const std::filesystem::path& checkpoint,
                            const std::vector<ImagePair>& dataset, const TrainConfig& config,
                            const StepCallback& on_step) {
  WeightArchive a = WeightArchive::load(checkpoint);
  const std::string* format = a.header("format");
  if (!format || *format != "mcgkt-checkpoint/1")
    throw FormatError("resume: " + checkpoint.string() + " is not a checkpoint");

  ModelConfig mc;
  TrainConfig tc;
  std::int64_t step = 0;
  try {
    const nlohmann::json mj = nlohmann::json::parse(*a.header("model_config"));
    mc.base_channels = mj.at("base_channels");
    mc.levels = mj.at("levels");
    mc.se_ratio = mj.at("se_ratio");
    mc.enable_ikt = mj.at("enable_ikt");
    mc.enable_mlcg = mj.at("enable_mlcg");
    mc.skip_fusion = mj.at("skip_fusion") == "sum" ? SkipFusion::sum : SkipFusion::concat;
    mc.residual_output = mj.at("residual_output");
    mc.input_channels = mj.at("input_channels");
    mc.output_channels = mj.at("output_channels");
    tc = train_config_from_json(nlohmann::json::parse(*a.header("train_config")));
    step = std::stoll(*a.header("step"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("resume: bad checkpoint headers: ") + e.what());
  }

  // budget and checkpointing follow the caller; the schedule follows the file
  tc.epochs = config.epochs;
  tc.max_steps = config.max_steps;
  tc.checkpoint_interval = config.checkpoint_interval;
  tc.checkpoint_dir = config.checkpoint_dir;
  tc.validate();

  auto factory = [&a, &checkpoint](const std::string& name, const Shape& shape) {
    if (!a.has(name))
      throw FormatError("resume: " + checkpoint.string() + " is missing parameter " + name);
    return Tensor::from(shape, a.values(name));
  };
  MCGKTModel model = MCGKTModel::from_params(mc, factory);

  AdamState adam;
  adam.step_count = step;
  for (const std::string& name : model.params().names()) {
    if (!a.has("adam.m." + name)) continue;
    AdamState::Moments mom;
    mom.m = a.values("adam.m." + name);
    mom.v = a.values("adam.v." + name);
    adam.moments.emplace(name, std::move(mom));
  }

  return train_loop(std::move(model), std::move(adam), step, dataset, tc, on_step);
}

std::string loss_history_csv(const std::vector<std::pair<std::int64_t, float>>& history) {
  std::ostringstream os;
  os << "step,loss\n";
  for (const auto& [step, loss] : history) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", static_cast<long long>(step),
                  static_cast<double>(loss));
    os << buf;
  }
  return os.str();
}

namespace {

std::string toggles_str(const AblationRow& r) {
  std::string s;
  s += r.ikt ? "ikt" : "-";
  s += ",";
  s += r.ekt ? "ekt" : "-";
  s += ",";
  s += r.mlcg ? "mlcg" : "-";
  return s;
}

}  // namespace

std::string AblationTable::csv() const {
  std::ostringstream os;
  os << "ikt,ekt,mlcg,psnr_db,ssim,status\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "rainy,rainy,rainy,%.4f,%.6f,baseline\n", rainy_psnr, rainy_ssim);
  os << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.4f,%.6f,%s\n", r.ikt ? 1 : 0, r.ekt ? 1 : 0,
                  r.mlcg ? 1 : 0, r.psnr_db, r.ssim, r.status.c_str());
    os << buf;
  }
  return os.str();
}

std::string AblationTable::table() const {
  std::ostringstream os;
  os << "modules              psnr (dB)      ssim   status\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-20s %9.2f %9.4f   %s\n", "rainy input", rainy_psnr,
                rainy_ssim, "baseline");
  os << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-20s %9.2f %9.4f   %s\n", toggles_str(r).c_str(), r.psnr_db,
                  r.ssim, r.status.c_str());
    os << buf;
  }
  return os.str();
}

AblationTable run_ablation(const std::vector<ImagePair>& train_pairs,
                           const std::vector<ImagePair>& eval_pairs,
                           const ModelConfig& base_model, const TrainConfig& base_config,
                           const StepCallback& on_step) {
  if (eval_pairs.empty()) throw ConfigError("ablation: evaluation split is empty");

  std::vector<std::tuple<std::string, Tensor, Tensor>> rainy_rows;
  for (std::size_t i = 0; i < eval_pairs.size(); ++i)
    rainy_rows.emplace_back(std::to_string(i), eval_pairs[i].rainy, eval_pairs[i].clean);
  const EvalReport rainy_report = evaluate(rainy_rows);

  AblationTable table;
  table.rainy_psnr = rainy_report.mean_psnr;
  table.rainy_ssim = rainy_report.mean_ssim;

  const bool with_ekt = base_config.enable_ekt;
  for (int mask = 0; mask < 8; ++mask) {
    AblationRow row;
    row.ikt = mask & 1;
    row.ekt = mask & 2;
    row.mlcg = mask & 4;
    if (row.ekt && !with_ekt) continue;  // no archive supplied

    ModelConfig mc = base_model;
    mc.enable_ikt = row.ikt;
    mc.enable_mlcg = row.mlcg;
    TrainConfig tc = base_config;
    tc.enable_ekt = row.ekt;
    if (!row.ekt) tc.ekt_archive.clear();
    tc.checkpoint_interval = 0;

    try {
      TrainResult result = train(train_pairs, mc, tc, on_step);
      std::vector<std::tuple<std::string, Tensor, Tensor>> rows;
      for (std::size_t i = 0; i < eval_pairs.size(); ++i)
        rows.emplace_back(std::to_string(i), result.model.derain(eval_pairs[i].rainy),
                          eval_pairs[i].clean);
      const EvalReport report = evaluate(rows);
      row.psnr_db = report.mean_psnr;
      row.ssim = report.mean_ssim;
      row.status = "ok";
    } catch (const Error& e) {
      row.status = std::string("failed: ") + e.what();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mcgkt
