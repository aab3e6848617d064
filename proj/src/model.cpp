#include "mcgkt/model.hpp"

#include <cmath>
#include <random>

namespace mcgkt {

void ModelConfig::validate() const {
  if (base_channels < 2)
    throw ConfigError("model config: base_channels must be >= 2, got " +
                      std::to_string(base_channels));
  if (levels != 4)
    throw ConfigError("model config: the architecture is fixed at 4 levels, got " +
                      std::to_string(levels));
  if (se_ratio < 1)
    throw ConfigError("model config: se_ratio must be >= 1, got " + std::to_string(se_ratio));
  if (input_channels < 1 || output_channels < 1)
    throw ConfigError("model config: channel counts must be positive");
  if (residual_output && input_channels != output_channels)
    throw ConfigError("model config: residual output requires matching input/output channels");
}

int ModelConfig::channels_at(int level) const {
  return base_channels << (level - 1);
}

int ModelConfig::decoder_input_channels(int level) const {
  const bool doubled = level < levels && !enable_ikt && skip_fusion == SkipFusion::concat;
  return doubled ? 2 * channels_at(level) : channels_at(level);
}

int ModelConfig::reduced_at(int level) const {
  return std::max(decoder_input_channels(level) / se_ratio, 1);
}

namespace {

std::int64_t conv_count(std::int64_t out, std::int64_t in) {
  return out * in * 9 + out;
}

}  // namespace

ParamCounts expected_param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParamCounts pc;
  const int L = cfg.levels;
  for (int j = 1; j <= L; ++j) {
    const std::int64_t c = cfg.channels_at(j);
    const std::int64_t enc_in = j == 1 ? cfg.input_channels : cfg.channels_at(j - 1);
    pc.mainstream += conv_count(c, enc_in) + 2 * conv_count(c, c);
    pc.mainstream += conv_count(c, cfg.decoder_input_channels(j)) + 2 * conv_count(c, c);
    if (j < L) pc.mainstream += conv_count(c, cfg.channels_at(j + 1));  // up transition
  }
  pc.mainstream += conv_count(cfg.output_channels, cfg.channels_at(1));  // head

  if (cfg.enable_ikt) {
    for (int j = 1; j <= L - 1; ++j) {
      const std::int64_t c = cfg.channels_at(j);
      pc.ikt += 8 * (c * c * 9) + 4 * c;
    }
  }
  if (cfg.enable_mlcg) {
    for (int j = 1; j <= L; ++j) {
      const std::int64_t c = cfg.decoder_input_channels(j);
      const std::int64_t r = cfg.reduced_at(j);
      pc.mlcg += (r * c + r) + (c * r + c);
    }
  }
  return pc;
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = map_.emplace(name, std::move(t));
  if (!inserted) throw UsageError("param store: duplicate parameter name " + name);
  order_.push_back(name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw UsageError("param store: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw UsageError("param store: unknown parameter " + name);
  return it->second;
}

std::int64_t ParamStore::total_parameters() const {
  std::int64_t total = 0;
  for (const auto& name : order_) total += map_.at(name).numel();
  return total;
}

MCGKTModel MCGKTModel::init(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Hand-rolled uniform: 24 high bits -> [0,1), identical on every platform.
  auto uniform01 = [&rng]() {
    return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
  };
  auto factory = [&](const std::string& name, const Shape& shape) {
    if (name.ends_with(".bias")) return Tensor::zeros(shape, true);
    const Index fan_in = shape.c * shape.h * shape.w;
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    Array v(shape.numel());
    for (Index i = 0; i < v.size(); ++i) v[i] = bound * (2.0f * uniform01() - 1.0f);
    return Tensor::from(shape, std::move(v), true);
  };
  return from_params(config, factory);
}

MCGKTModel MCGKTModel::from_params(const ModelConfig& config, const ParamFactory& factory) {
  config.validate();
  MCGKTModel m;
  m.cfg_ = config;
  m.build(factory);
  return m;
}

void MCGKTModel::build(const ParamFactory& factory) {
  const ModelConfig& cfg = cfg_;
  const int L = cfg.levels;

  auto param = [&](const std::string& name, const Shape& shape) -> Tensor {
    Tensor t = factory(name, shape);
    if (!(t.shape() == shape))
      throw FormatError("model: parameter " + name + " has shape " + t.shape().str() +
                        ", expected " + shape.str());
    t.set_requires_grad(true);
    return store_.add(name, std::move(t));
  };
  auto conv = [&](const std::string& name, Index out, Index in) {
    return Conv2dParams{param(name + ".weight", Shape{out, in, 3, 3}),
                        param(name + ".bias", Shape{1, out, 1, 1})};
  };
  auto block = [&](const std::string& name, Index out, Index in) {
    return ConvBlockParams{conv(name + ".conv1", out, in), conv(name + ".conv2", out, out),
                           conv(name + ".conv3", out, out)};
  };

  enc_.clear();
  for (int j = 1; j <= L; ++j)
    enc_.push_back(block("enc" + std::to_string(j), cfg.channels_at(j),
                         j == 1 ? cfg.input_channels : cfg.channels_at(j - 1)));

  dec_.resize(L);
  for (int j = L; j >= 1; --j)
    dec_[j - 1] =
        block("dec" + std::to_string(j), cfg.channels_at(j), cfg.decoder_input_channels(j));

  up_.resize(L - 1);
  for (int j = L - 1; j >= 1; --j)
    up_[j - 1] =
        UpTransitionParams{conv("up" + std::to_string(j), cfg.channels_at(j), cfg.channels_at(j + 1))};

  ikt_.clear();
  if (cfg.enable_ikt) {
    for (int j = 1; j <= L - 1; ++j) {
      const Index c = cfg.channels_at(j);
      const std::string b = "ikt" + std::to_string(j);
      ConvLstmParams p;
      p.wxi = param(b + ".wxi.weight", Shape{c, c, 3, 3});
      p.whi = param(b + ".whi.weight", Shape{c, c, 3, 3});
      p.wxf = param(b + ".wxf.weight", Shape{c, c, 3, 3});
      p.whf = param(b + ".whf.weight", Shape{c, c, 3, 3});
      p.wxo = param(b + ".wxo.weight", Shape{c, c, 3, 3});
      p.who = param(b + ".who.weight", Shape{c, c, 3, 3});
      p.wxg = param(b + ".wxg.weight", Shape{c, c, 3, 3});
      p.whg = param(b + ".whg.weight", Shape{c, c, 3, 3});
      p.bi = param(b + ".i.bias", Shape{1, c, 1, 1});
      p.bf = param(b + ".f.bias", Shape{1, c, 1, 1});
      p.bo = param(b + ".o.bias", Shape{1, c, 1, 1});
      p.bg = param(b + ".g.bias", Shape{1, c, 1, 1});
      ikt_.push_back(std::move(p));
    }
  }

  se_.clear();
  if (cfg.enable_mlcg) {
    for (int j = 1; j <= L; ++j) {
      const Index c = cfg.decoder_input_channels(j);
      const Index r = cfg.reduced_at(j);
      const std::string b = "se" + std::to_string(j);
      SEParams p;
      p.fc1_weight = param(b + ".fc1.weight", Shape{r, c, 1, 1});
      p.fc1_bias = param(b + ".fc1.bias", Shape{1, r, 1, 1});
      p.fc2_weight = param(b + ".fc2.weight", Shape{c, r, 1, 1});
      p.fc2_bias = param(b + ".fc2.bias", Shape{1, c, 1, 1});
      se_.push_back(std::move(p));
    }
  }

  head_ = conv("head", cfg.output_channels, cfg.channels_at(1));
}

Tensor MCGKTModel::forward(Tape& tape, const Tensor& rainy, ForwardTrace* trace) const {
  const Shape& s = rainy.shape();
  const Index div = Index{1} << (cfg_.levels - 1);
  if (s.c != cfg_.input_channels)
    throw ShapeError("forward: input has " + std::to_string(s.c) + " channels, expected " +
                     std::to_string(cfg_.input_channels));
  if (s.h % div != 0 || s.w % div != 0)
    throw ShapeError("forward: input H and W must be divisible by " + std::to_string(div) +
                     ", got " + s.str());
  const int L = cfg_.levels;

  std::vector<Tensor> enc_out(L);
  Tensor h = rainy;
  for (int j = 1; j <= L; ++j) {
    if (j > 1) h = down_transition(tape, h);
    h = conv_block(tape, h, enc_[j - 1]);
    enc_out[j - 1] = h;
    if (trace) trace->encoder_out.push_back(h.shape());
  }

  // Decoder block L consumes the (gated) deepest encoder output directly.
  Tensor d_in = cfg_.enable_mlcg ? se_gate(tape, enc_out[L - 1], se_[L - 1]) : enc_out[L - 1];
  if (trace) trace->decoder_in.push_back(d_in.shape());
  Tensor d = conv_block(tape, d_in, dec_[L - 1]);
  if (trace) trace->decoder_out.push_back(d.shape());

  for (int j = L - 1; j >= 1; --j) {
    Tensor di = up_transition(tape, d, up_[j - 1]);
    Tensor fused;
    if (cfg_.enable_ikt)
      fused = ikt_fuse(tape, enc_out[j - 1], di, ikt_[j - 1]);
    else if (cfg_.skip_fusion == SkipFusion::sum)
      fused = add(tape, enc_out[j - 1], di);
    else
      fused = concat_channels(tape, enc_out[j - 1], di);
    Tensor gated = cfg_.enable_mlcg ? se_gate(tape, fused, se_[j - 1]) : fused;
    if (trace) trace->decoder_in.push_back(gated.shape());
    d = conv_block(tape, gated, dec_[j - 1]);
    if (trace) trace->decoder_out.push_back(d.shape());
  }

  Tensor out = conv2d(tape, d, head_.weight, head_.bias);  // linear head
  if (cfg_.residual_output) {
    Tensor minus_one = Tensor::full(out.shape(), -1.0f);
    out = add(tape, rainy, mul(tape, out, minus_one));
  }
  return out;
}

Tensor MCGKTModel::derain(const Tensor& rainy) const {
  Tape tape;
  Tensor out = forward(tape, rainy);
  return Tensor::from(out.shape(), out.values().min(1.0f).max(0.0f));
}

Conv2dParams& MCGKTModel::encoder_conv(int block, int k) {
  if (block < 1 || block > cfg_.levels || k < 1 || k > 3)
    throw UsageError("model: no encoder conv (" + std::to_string(block) + "," +
                     std::to_string(k) + ")");
  ConvBlockParams& b = enc_[block - 1];
  return k == 1 ? b.conv1 : (k == 2 ? b.conv2 : b.conv3);
}

}  // namespace mcgkt
