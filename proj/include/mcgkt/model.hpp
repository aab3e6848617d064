#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcgkt/layers.hpp"
#include "mcgkt/tensor.hpp"

namespace mcgkt {

// How encoder and decoder features merge when the ConvLSTM fusion is off:
// elementwise sum keeps parameter shapes identical across ablations; concat is
// the conventional skip-connection baseline (doubles the first decoder
// convolution's input channels).
enum class SkipFusion { sum, concat };

struct ModelConfig {
  int base_channels = 64;  // C0; desk-scale runs use 8
  int levels = 4;          // the architecture is fixed at four blocks per path
  int se_ratio = 16;       // reduction ratio r, clamped so C/r >= 1
  bool enable_ikt = true;
  bool enable_mlcg = true;
  SkipFusion skip_fusion = SkipFusion::sum;
  bool residual_output = false;  // predict the rain layer and subtract from the input
  int input_channels = 3;
  int output_channels = 3;

  void validate() const;
  int channels_at(int level) const;  // C0 * 2^(level-1), level 1-based
  // Width of the decoder-block input at a level: doubled below the deepest
  // level when concatenating skip features. The SE gate sits on this tensor.
  int decoder_input_channels(int level) const;
  int reduced_at(int level) const;  // max(decoder_input_channels/r, 1)
};

struct ParamCounts {
  std::int64_t mainstream = 0;  // encoder + decoder + transitions + head
  std::int64_t ikt = 0;
  std::int64_t mlcg = 0;
  std::int64_t total() const { return mainstream + ikt + mlcg; }
};

// Closed-form parameter counts implied by a config; asserted against the
// actual store in tests.
ParamCounts expected_param_count(const ModelConfig& config);

// Named collection of trainable tensors, iterated in registration order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::int64_t total_parameters() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

// Per-level shapes observed during one forward pass.
struct ForwardTrace {
  std::vector<Shape> encoder_out;  // E_o^1..E_o^4
  std::vector<Shape> decoder_in;   // inputs of decoder blocks 4..1 in run order
  std::vector<Shape> decoder_out;  // D_o^4..D_o^1 in run order
};

class MCGKTModel {
 public:
  MCGKTModel() = default;

  // He-uniform weights (bound sqrt(6/fan_in)) and zero biases; bit-identical
  // for a given seed.
  static MCGKTModel init(const ModelConfig& config, std::uint64_t seed);

  // Builds the parameter set through a factory, e.g. an archive lookup.
  using ParamFactory = std::function<Tensor(const std::string& name, const Shape& shape)>;
  static MCGKTModel from_params(const ModelConfig& config, const ParamFactory& factory);

  // Unclamped prediction of the clean image. Input H and W must be divisible
  // by 8. Records onto `tape` for backpropagation.
  Tensor forward(Tape& tape, const Tensor& rainy, ForwardTrace* trace = nullptr) const;

  // Inference: forward pass with the output clamped to [0,1]; nothing kept.
  Tensor derain(const Tensor& rainy) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // 1-based encoder block / conv indices; used by the weight importer.
  Conv2dParams& encoder_conv(int block, int k);

 private:
  void build(const ParamFactory& factory);

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<ConvBlockParams> enc_, dec_;   // index 0 -> level 1
  std::vector<UpTransitionParams> up_;       // index 0 -> transition into level 1
  std::vector<ConvLstmParams> ikt_;          // levels 1..3
  std::vector<SEParams> se_;                 // levels 1..4
  Conv2dParams head_;
};

}  // namespace mcgkt
