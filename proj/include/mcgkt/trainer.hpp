#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcgkt/model.hpp"
#include "mcgkt/rain.hpp"

namespace mcgkt {

struct TrainConfig {
  float learning_rate = 2e-4f;
  int batch_size = 4;
  int epochs = 0;             // 0: run until max_steps
  std::int64_t max_steps = 0; // takes precedence over epochs when > 0
  int patch_size = 64;
  int patches_per_pair = 1;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  // steps; 0 disables
  std::filesystem::path checkpoint_dir;
  bool enable_ekt = false;
  std::filesystem::path ekt_archive;

  void validate() const;
};

struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::int64_t step_count = 0;  // shared t
  struct Moments {
    Array m, v;
  };
  std::unordered_map<std::string, Moments> moments;
};

// One Adam update over every parameter in the store. Every parameter must
// carry a gradient; gradients are cleared afterwards.
void adam_step(ParamStore& params, AdamState& state, float learning_rate);

struct TrainResult {
  MCGKTModel model;
  std::vector<std::pair<std::int64_t, float>> loss_history;  // (step, loss)
};

using StepCallback = std::function<void(std::int64_t step, float loss)>;

// Seed-deterministic training loop: per epoch, sample aligned patches from
// every pair, shuffle, batch, forward, MSE loss on the unclamped output,
// backward, Adam. Loss history is recorded per step; checkpoints are written
// at the configured interval.
TrainResult train(const std::vector<ImagePair>& dataset, const ModelConfig& model_config,
                  const TrainConfig& config, const StepCallback& on_step = {});

// Continues a checkpointed run. Schedule-determining fields (seed, batch,
// patch sizes) come from the checkpoint; budget fields from `config`. The
// loss history continues bit-identically to an uninterrupted run.
TrainResult resume_training(const std::filesystem::path& checkpoint,
                            const std::vector<ImagePair>& dataset, const TrainConfig& config,
                            const StepCallback& on_step = {});

void save_checkpoint(const MCGKTModel& model, const AdamState& adam, const TrainConfig& config,
                     std::int64_t step, const std::filesystem::path& path);

std::string loss_history_csv(const std::vector<std::pair<std::int64_t, float>>& history);

// Table-2-shaped ablation harness: trains the requested module combinations
// under identical seeds and budgets and evaluates each on held-out pairs.
struct AblationRow {
  bool ikt = false, ekt = false, mlcg = false;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string status;  // "ok" or the failure message
};

struct AblationTable {
  double rainy_psnr = 0.0;  // baseline: the rainy inputs themselves
  double rainy_ssim = 0.0;
  std::vector<AblationRow> rows;
  std::string csv() const;
  std::string table() const;
};

AblationTable run_ablation(const std::vector<ImagePair>& train_pairs,
                           const std::vector<ImagePair>& eval_pairs,
                           const ModelConfig& base_model, const TrainConfig& base_config,
                           const StepCallback& on_step = {});

}  // namespace mcgkt
