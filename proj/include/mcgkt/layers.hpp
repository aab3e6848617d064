#pragma once

#include "mcgkt/ops.hpp"
#include "mcgkt/tensor.hpp"

namespace mcgkt {

struct Conv2dParams {
  Tensor weight;  // [out, in, kh, kw]
  Tensor bias;    // [1, out, 1, 1]
};

// Three 3x3 convolutions, each followed by ReLU. The first maps in->out
// channels, the second and third out->out.
struct ConvBlockParams {
  Conv2dParams conv1, conv2, conv3;
  Index in_channels() const { return conv1.weight.shape().c; }
  Index out_channels() const { return conv1.weight.shape().n; }
};

Tensor conv_block(Tape& tape, const Tensor& x, const ConvBlockParams& params);

// Encoder transition to the next level: 2x2 max pooling.
Tensor down_transition(Tape& tape, const Tensor& x);

// Decoder transition: nearest-neighbor 2x upsample, then a learned 3x3
// convolution halving the channel count, then ReLU.
struct UpTransitionParams {
  Conv2dParams conv;  // [C/2, C, 3, 3]
};

Tensor up_transition(Tape& tape, const Tensor& x, const UpTransitionParams& params);

// Convolutional LSTM gate parameters: per gate, one 3x3 convolution for the
// input-to-state path, one for the hidden-to-state path, and one bias. Hidden
// channels equal input channels.
struct ConvLstmParams {
  Tensor wxi, whi, wxf, whf, wxo, who, wxg, whg;  // [C, C, 3, 3]
  Tensor bi, bf, bo, bg;                          // [1, C, 1, 1]
};

// Backward-order two-step ConvLSTM fusing one level's features: step 1
// consumes the decoder input, step 2 the encoder output; hidden and cell
// states start at zero. Returns the hidden state after step 2.
Tensor ikt_fuse(Tape& tape, const Tensor& encoder_out, const Tensor& decoder_in,
                const ConvLstmParams& params);

// Squeeze-and-excitation gate: global average pool, FC to C/r, ReLU, FC back
// to C, sigmoid, then per-channel rescale of the input.
struct SEParams {
  Tensor fc1_weight, fc1_bias;  // [C/r, C, 1, 1], [1, C/r, 1, 1]
  Tensor fc2_weight, fc2_bias;  // [C, C/r, 1, 1], [1, C, 1, 1]
};

Tensor se_gate(Tape& tape, const Tensor& x, const SEParams& params);

}  // namespace mcgkt
