// Acceptance suite: one criterion per run ("acceptance <n>") or all in
// sequence ("acceptance"). Prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcgkt/gradcheck.hpp"
#include "mcgkt/metrics.hpp"
#include "mcgkt/trainer.hpp"
#include "mcgkt/weight_archive.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace mcgkt;
namespace fs = std::filesystem;

namespace {

struct Line {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

ModelConfig desk_model(bool residual = false) {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.se_ratio = 4;
  cfg.residual_output = residual;
  return cfg;
}

// ---------------------------------------------------------------- criterion 1
bool criterion_gradients() {
  Line line;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  for (const OpGradCheck& r : gradcheck_ops(20, 20240)) {
    if (r.worst_err > worst) {
      worst = r.worst_err;
      worst_op = r.op;
    }
    line.require(r.pass(), r.op + " err " + std::to_string(r.worst_err));
  }
  ModelConfig tiny;
  tiny.base_channels = 2;
  tiny.se_ratio = 4;
  OpGradCheck model = gradcheck_model(tiny, 60, 20240);
  line.require(model.pass(), model.op + " err " + std::to_string(model.worst_err));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  line.require(secs < 120.0, "runtime " + std::to_string(secs) + " s");

  std::printf("[%s] criterion 1 gradient correctness: 20 instances/op, worst %.2e (%s), "
              "tiny-model worst %.2e, %.1f s%s\n",
              line.pass ? "PASS" : "FAIL", worst, worst_op.c_str(), model.worst_err, secs,
              line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 2
bool criterion_oracles() {
  Line line;
  std::mt19937_64 rng(31337);

  double conv_worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    Tensor x = testutil::random_tensor(Shape{2, 2, 6, 6}, rng);
    Tensor w = testutil::random_tensor(Shape{3, 2, 3, 3}, rng);
    Tensor b = testutil::random_tensor(Shape{1, 3, 1, 1}, rng);
    for (bool same : {true, false}) {
      Tape tape;
      Tensor y = conv2d(tape, x, w, b, same ? Padding::same : Padding::valid);
      const auto ref = oracle::conv2d_ref(x, w, b, same);
      for (Index i = 0; i < y.numel(); ++i)
        conv_worst = std::max(conv_worst, std::fabs(y.values()[i] - ref[i]));
    }
  }
  line.require(conv_worst < 1e-5, "conv2d vs oracle " + std::to_string(conv_worst));

  bool pool_exact = true;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor x = testutil::random_tensor(Shape{1, 3, 8, 8}, rng);
    Tape tape;
    Tensor y = maxpool2x2(tape, x);
    const auto ref = oracle::maxpool_ref(x);
    for (Index i = 0; i < y.numel(); ++i)
      pool_exact = pool_exact && y.values()[i] == static_cast<float>(ref[i]);
  }
  line.require(pool_exact, "maxpool vs window scan");

  double lstm_worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    ConvLstmParams p;
    auto k = [&] { return testutil::random_tensor(Shape{2, 2, 3, 3}, rng, -0.4f, 0.4f); };
    auto bias = [&] { return testutil::random_tensor(Shape{1, 2, 1, 1}, rng, -0.2f, 0.2f); };
    p.wxi = k(); p.whi = k(); p.wxf = k(); p.whf = k();
    p.wxo = k(); p.who = k(); p.wxg = k(); p.whg = k();
    p.bi = bias(); p.bf = bias(); p.bo = bias(); p.bg = bias();
    Tensor e = testutil::random_tensor(Shape{2, 2, 4, 4}, rng);
    Tensor d = testutil::random_tensor(Shape{2, 2, 4, 4}, rng);
    Tape tape;
    Tensor h = ikt_fuse(tape, e, d, p);
    const auto ref = oracle::convlstm_ref(e, d, p);
    for (Index i = 0; i < h.numel(); ++i)
      lstm_worst = std::max(lstm_worst, std::fabs(h.values()[i] - ref[i]));
  }
  line.require(lstm_worst < 1e-5, "convlstm vs scalar ref " + std::to_string(lstm_worst));

  double se_worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    SEParams p{testutil::random_tensor(Shape{2, 4, 1, 1}, rng),
               testutil::random_tensor(Shape{1, 2, 1, 1}, rng),
               testutil::random_tensor(Shape{4, 2, 1, 1}, rng),
               testutil::random_tensor(Shape{1, 4, 1, 1}, rng)};
    Tensor x = testutil::random_tensor(Shape{2, 4, 5, 5}, rng);
    Tape tape;
    Tensor y = se_gate(tape, x, p);
    const auto ref = oracle::se_ref(x, p);
    for (Index i = 0; i < y.numel(); ++i)
      se_worst = std::max(se_worst, std::fabs(y.values()[i] - ref[i]));
  }
  line.require(se_worst < 1e-5, "se gate vs scalar ref " + std::to_string(se_worst));

  double psnr_worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor a = testutil::random_tensor(Shape{1, 3, 12, 12}, rng, 0.0f, 1.0f);
    Tensor b = testutil::random_tensor(Shape{1, 3, 12, 12}, rng, 0.0f, 1.0f);
    psnr_worst = std::max(psnr_worst, std::fabs(psnr(a, b) - oracle::psnr_ref(a, b)));
  }
  line.require(psnr_worst < 1e-6, "psnr vs ref " + std::to_string(psnr_worst));

  double ssim_worst = 0.0;
  for (auto [v1, v2] : {std::pair{0.25f, 0.75f}, std::pair{0.4f, 0.45f}, std::pair{0.9f, 0.2f}}) {
    Tensor a = Tensor::full(Shape{1, 3, 16, 16}, v1);
    Tensor b = Tensor::full(Shape{1, 3, 16, 16}, v2);
    const double expected =
        oracle::ssim_const_ref(static_cast<double>(v1) * 255.0, static_cast<double>(v2) * 255.0);
    ssim_worst = std::max(ssim_worst, std::fabs(ssim(a, b) - expected));
  }
  line.require(ssim_worst < 1e-6, "ssim vs closed form " + std::to_string(ssim_worst));

  std::printf("[%s] criterion 2 oracle equivalence: conv %.1e, pool exact, convlstm %.1e, "
              "se %.1e, psnr %.1e dB, ssim %.1e%s\n",
              line.pass ? "PASS" : "FAIL", conv_worst, lstm_worst, se_worst, psnr_worst,
              ssim_worst, line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 3
bool criterion_layer_invariants() {
  Line line;
  std::mt19937_64 rng(777);

  auto zero_lstm = [](Index c) {
    ConvLstmParams p;
    auto k = [&] { return Tensor::zeros(Shape{c, c, 3, 3}); };
    auto b = [&] { return Tensor::zeros(Shape{1, c, 1, 1}); };
    p.wxi = k(); p.whi = k(); p.wxf = k(); p.whf = k();
    p.wxo = k(); p.who = k(); p.wxg = k(); p.whg = k();
    p.bi = b(); p.bf = b(); p.bo = b(); p.bg = b();
    return p;
  };
  Tensor e = testutil::random_tensor(Shape{1, 3, 6, 6}, rng);
  Tensor d = testutil::random_tensor(Shape{1, 3, 6, 6}, rng);
  Tape tape;
  Tensor h = ikt_fuse(tape, e, d, zero_lstm(3));
  line.require((h.values() == 0.0f).all(), "zero-weight convlstm output not exactly 0");

  Tensor x = testutil::random_tensor(Shape{2, 4, 5, 5}, rng);
  SEParams half{Tensor::zeros(Shape{2, 4, 1, 1}), Tensor::zeros(Shape{1, 2, 1, 1}),
                Tensor::zeros(Shape{4, 2, 1, 1}), Tensor::zeros(Shape{1, 4, 1, 1})};
  Tensor halved = se_gate(tape, x, half);
  line.require(testutil::bit_equal(halved.values(), (x.values() * 0.5f).eval()),
               "zeroed-FC se gate is not exactly 0.5x");

  SEParams sat{Tensor::zeros(Shape{2, 4, 1, 1}), Tensor::zeros(Shape{1, 2, 1, 1}),
               Tensor::zeros(Shape{4, 2, 1, 1}), Tensor::full(Shape{1, 4, 1, 1}, 40.0f)};
  Tensor saturated = se_gate(tape, x, sat);
  const double sat_err = testutil::max_abs_diff(saturated.values(), x.values());
  line.require(sat_err < 1e-4, "saturated se gate err " + std::to_string(sat_err));

  auto identity = [](Index c) {
    Tensor w = Tensor::zeros(Shape{c, c, 3, 3});
    for (Index i = 0; i < c; ++i) w.at(i, i, 1, 1) = 1.0f;
    return Conv2dParams{w, Tensor::zeros(Shape{1, c, 1, 1})};
  };
  ConvBlockParams eye{identity(3), identity(3), identity(3)};
  Tensor pos = testutil::random_tensor(Shape{1, 3, 6, 6}, rng, 0.0f, 1.0f);
  line.require(testutil::bit_equal(conv_block(tape, pos, eye).values(), pos.values()),
               "identity conv block not exact on nonnegative input");

  std::printf("[%s] criterion 3 analytic layer invariants: zero convlstm, 0.5x gate, "
              "saturated gate (%.1e), identity block%s\n",
              line.pass ? "PASS" : "FAIL", sat_err, line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 4
bool criterion_shapes() {
  Line line;
  std::mt19937_64 rng(4242);
  MCGKTModel m = MCGKTModel::init(desk_model(), 4);
  for (Shape s : {Shape{1, 3, 64, 64}, Shape{2, 3, 32, 32}, Shape{1, 3, 8, 8},
                  Shape{3, 3, 16, 48}}) {
    Tape tape;
    Tensor y = m.forward(tape, testutil::random_tensor(s, rng, 0.0f, 1.0f));
    line.require(y.shape() == s, "forward shape for " + s.str());
  }

  Tape tape;
  ForwardTrace trace;
  m.forward(tape, testutil::random_tensor(Shape{1, 3, 64, 64}, rng, 0.0f, 1.0f), &trace);
  const Shape expect_enc[4] = {{1, 8, 64, 64}, {1, 16, 32, 32}, {1, 32, 16, 16}, {1, 64, 8, 8}};
  for (int j = 0; j < 4; ++j)
    line.require(trace.encoder_out[j] == expect_enc[j],
                 "encoder level " + std::to_string(j + 1) + " shape");
  const Shape expect_dec[4] = {{1, 64, 8, 8}, {1, 32, 16, 16}, {1, 16, 32, 32}, {1, 8, 64, 64}};
  for (int j = 0; j < 4; ++j)
    line.require(trace.decoder_out[j] == expect_dec[j],
                 "decoder stage " + std::to_string(4 - j) + " shape");

  int combos_checked = 0;
  for (int mask = 0; mask < 4; ++mask) {
    ModelConfig cfg = desk_model();
    cfg.enable_ikt = mask & 1;
    cfg.enable_mlcg = mask & 2;
    MCGKTModel model = MCGKTModel::init(cfg, 9);
    line.require(model.params().total_parameters() == expected_param_count(cfg).total(),
                 "param count for toggle mask " + std::to_string(mask));
    ++combos_checked;
  }
  ModelConfig concat = desk_model();
  concat.enable_ikt = false;
  concat.skip_fusion = SkipFusion::concat;
  MCGKTModel cm = MCGKTModel::init(concat, 9);
  line.require(cm.params().total_parameters() == expected_param_count(concat).total(),
               "param count with concat fusion");

  std::printf("[%s] criterion 4 shape/topology laws: 4 sizes, halving/doubling trace, "
              "param counts for %d toggle combos + concat%s\n",
              line.pass ? "PASS" : "FAIL", combos_checked, line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 5
bool criterion_overfit() {
  Line line;
  const auto start = std::chrono::steady_clock::now();

  RainConfig rc;
  rc.density_per_mpx = 3000.0f;
  rc.intensity_min = 0.2f;
  rc.intensity_max = 0.5f;
  rc.seed = 3;
  Tensor clean = testutil::procedural_clean(32, 32, 5005);
  ImagePair pair = synthesize_rain(clean, rc);

  // residual head configuration (spec-documented output-head option); the
  // direct head cannot traverse its initial offset within 500 steps at this
  // learning rate — see the project notes
  TrainConfig tc;
  tc.max_steps = 500;
  tc.patch_size = 32;
  tc.seed = 1;
  tc.learning_rate = 2e-4f;
  TrainResult r = train({pair}, desk_model(true), tc);
  const float final_mse = r.loss_history.back().second;
  const double psnr_db = psnr(r.model.derain(pair.rainy), pair.clean);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  line.require(final_mse < 1e-3f, "final mse " + std::to_string(final_mse));
  line.require(psnr_db > 30.0, "psnr " + std::to_string(psnr_db));
  line.require(secs < 300.0, "runtime " + std::to_string(secs) + " s");

  std::printf("[%s] criterion 5 overfit convergence: mse %.2e (< 1e-3), psnr %.2f dB (> 30), "
              "%zu steps, %.1f s%s\n",
              line.pass ? "PASS" : "FAIL", final_mse, psnr_db, r.loss_history.size(), secs,
              line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 6
bool criterion_desk_improvement() {
  Line line;
  const auto start = std::chrono::steady_clock::now();

  RainConfig rc;  // regular-mode defaults
  std::vector<ImagePair> train_pairs = testutil::synthetic_dataset(50, 64, 64, 100, rc);
  std::vector<ImagePair> eval_pairs = testutil::synthetic_dataset(10, 64, 64, 999, rc);

  std::vector<std::tuple<std::string, Tensor, Tensor>> rainy_rows;
  for (std::size_t i = 0; i < eval_pairs.size(); ++i)
    rainy_rows.emplace_back(std::to_string(i), eval_pairs[i].rainy, eval_pairs[i].clean);
  const EvalReport baseline = evaluate(rainy_rows);

  TrainConfig tc;
  tc.max_steps = 2000;
  tc.patch_size = 64;
  tc.batch_size = 4;
  tc.seed = 7;
  TrainResult r = train(train_pairs, desk_model(true), tc);

  std::vector<std::tuple<std::string, Tensor, Tensor>> rows;
  for (std::size_t i = 0; i < eval_pairs.size(); ++i)
    rows.emplace_back(std::to_string(i), r.model.derain(eval_pairs[i].rainy),
                      eval_pairs[i].clean);
  const EvalReport derained = evaluate(rows);
  const double gain = derained.mean_psnr - baseline.mean_psnr;
  const double ssim_gain = derained.mean_ssim - baseline.mean_ssim;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  line.require(gain >= 2.0, "psnr gain " + std::to_string(gain));
  line.require(ssim_gain > 0.0, "ssim gain " + std::to_string(ssim_gain));
  line.require(secs < 1800.0, "runtime " + std::to_string(secs) + " s");

  std::printf("[%s] criterion 6 desk-scale improvement: rainy %.2f dB / %.4f -> derained "
              "%.2f dB / %.4f (gain %+.2f dB, %+.4f ssim), %.0f s%s\n",
              line.pass ? "PASS" : "FAIL", baseline.mean_psnr, baseline.mean_ssim,
              derained.mean_psnr, derained.mean_ssim, gain, ssim_gain, secs,
              line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 7
bool criterion_determinism() {
  Line line;
  const fs::path tmp =
      fs::temp_directory_path() / ("mcgkt_acc7_" + std::to_string(std::random_device{}()));
  fs::create_directories(tmp);

  std::vector<ImagePair> data = testutil::synthetic_dataset(4, 24, 24, 77);
  ModelConfig mc;
  mc.base_channels = 4;
  mc.se_ratio = 4;
  TrainConfig tc;
  tc.max_steps = 20;
  tc.patch_size = 16;
  tc.batch_size = 3;
  tc.seed = 5;

  TrainResult a = train(data, mc, tc);
  TrainResult b = train(data, mc, tc);
  bool histories_equal = a.loss_history.size() == b.loss_history.size();
  for (std::size_t i = 0; histories_equal && i < a.loss_history.size(); ++i)
    histories_equal = a.loss_history[i] == b.loss_history[i];
  line.require(histories_equal, "fixed-seed loss histories differ");

  save_model(a.model, tmp / "model.mcgw");
  MCGKTModel loaded = load_model(tmp / "model.mcgw");
  bool roundtrip = true;
  for (const std::string& name : a.model.params().names())
    roundtrip = roundtrip && testutil::bit_equal(a.model.params().at(name).values(),
                                                 loaded.params().at(name).values());
  line.require(roundtrip, "save/load round trip not bit-identical");

  TrainConfig with_ckpt = tc;
  with_ckpt.checkpoint_interval = 10;
  with_ckpt.checkpoint_dir = tmp;
  train(data, mc, with_ckpt);
  TrainConfig resume_cfg;
  resume_cfg.max_steps = 20;
  TrainResult resumed = resume_training(tmp / "checkpoint-10.mcgw", data, resume_cfg);
  bool resume_equal = resumed.loss_history.size() == 10;
  for (std::size_t i = 0; resume_equal && i < resumed.loss_history.size(); ++i)
    resume_equal = resumed.loss_history[i] == a.loss_history[10 + i];
  for (const std::string& name : a.model.params().names())
    resume_equal = resume_equal && testutil::bit_equal(a.model.params().at(name).values(),
                                                       resumed.model.params().at(name).values());
  line.require(resume_equal, "checkpoint resume diverges from uninterrupted run");

  fs::remove_all(tmp);
  std::printf("[%s] criterion 7 determinism & persistence: bit-identical histories, "
              "round trip, resume continuation%s\n",
              line.pass ? "PASS" : "FAIL", line.detail.str().c_str());
  return line.pass;
}

// ---------------------------------------------------------------- criterion 8
bool criterion_ekt() {
  Line line;
  std::mt19937_64 rng(808);

  // VGG-16-style shallow stages: 2 + 2 + 3 convolutions with biases
  WeightArchive archive;
  auto add_conv = [&](const std::string& name, Index out, Index in) {
    Tensor w = testutil::random_tensor(Shape{out, in, 3, 3}, rng);
    Tensor b = testutil::random_tensor(Shape{1, out, 1, 1}, rng);
    archive.add(name + ".weight", w.shape(), w.values());
    archive.add(name + ".bias", {out}, b.values().data());
  };
  add_conv("conv1_1", 64, 3);
  add_conv("conv1_2", 64, 64);
  add_conv("conv2_1", 128, 64);
  add_conv("conv2_2", 128, 128);
  add_conv("conv3_1", 256, 128);
  add_conv("conv3_2", 256, 256);
  add_conv("conv3_3", 256, 256);

  ModelConfig full;
  full.base_channels = 64;
  MCGKTModel big = MCGKTModel::init(full, 1);
  ImportReport report = import_ekt(big, archive);
  line.require(report.copied.size() == 14, "copied " + std::to_string(report.copied.size()));
  line.require(report.skipped_by_shape.empty(),
               "skipped " + std::to_string(report.skipped_by_shape.size()));
  line.require(report.unmapped_slots == std::vector<std::string>{"enc1.conv3", "enc2.conv3"},
               "unmapped slot list");

  bool exact = true;
  const std::pair<const char*, const char*> mapped[] = {
      {"conv1_1", "enc1.conv1"}, {"conv1_2", "enc1.conv2"}, {"conv2_1", "enc2.conv1"},
      {"conv2_2", "enc2.conv2"}, {"conv3_1", "enc3.conv1"}, {"conv3_2", "enc3.conv2"},
      {"conv3_3", "enc3.conv3"}};
  for (const auto& [src, slot] : mapped) {
    exact = exact && testutil::bit_equal(big.params().at(std::string(slot) + ".weight").values(),
                                         Array(archive.values(std::string(src) + ".weight")));
    exact = exact && testutil::bit_equal(big.params().at(std::string(slot) + ".bias").values(),
                                         Array(archive.values(std::string(src) + ".bias")));
  }
  line.require(exact, "copied tensors not bit-exact");

  // mismatched desk-scale model: everything skipped, nothing overwritten
  ModelConfig small = desk_model();
  MCGKTModel little = MCGKTModel::init(small, 2);
  const Array before = little.params().at("enc1.conv1.weight").values();
  ImportReport skipped = import_ekt(little, archive);
  line.require(skipped.copied.empty(), "copied into mismatched model");
  line.require(skipped.skipped_by_shape.size() == 14,
               "skip count " + std::to_string(skipped.skipped_by_shape.size()));
  line.require(testutil::bit_equal(little.params().at("enc1.conv1.weight").values(), before),
               "mismatched import mutated the model");

  std::printf("[%s] criterion 8 EKT import contract: 14 copied bit-exact, conv-3 of blocks "
              "1-2 unmapped, 14 skipped on C0=8%s\n",
              line.pass ? "PASS" : "FAIL", line.detail.str().c_str());
  return line.pass;
}

}  // namespace

int main(int argc, char** argv) {
  using Criterion = bool (*)();
  const Criterion criteria[] = {criterion_gradients,  criterion_oracles,
                                criterion_layer_invariants, criterion_shapes,
                                criterion_overfit,    criterion_desk_improvement,
                                criterion_determinism, criterion_ekt};

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  if (only < 0 || only > 8) {
    std::fprintf(stderr, "usage: acceptance [1-8]\n");
    return 2;
  }

  bool all_pass = true;
  for (int i = 1; i <= 8; ++i) {
    if (only != 0 && i != only) continue;
    all_pass = criteria[i - 1]() && all_pass;
  }
  return all_pass ? 0 : 1;
}
