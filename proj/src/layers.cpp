#include "mcgkt/layers.hpp"

namespace mcgkt {

Tensor conv_block(Tape& tape, const Tensor& x, const ConvBlockParams& params) {
  Tensor h = relu(tape, conv2d(tape, x, params.conv1.weight, params.conv1.bias));
  h = relu(tape, conv2d(tape, h, params.conv2.weight, params.conv2.bias));
  return relu(tape, conv2d(tape, h, params.conv3.weight, params.conv3.bias));
}

Tensor down_transition(Tape& tape, const Tensor& x) {
  return maxpool2x2(tape, x);
}

Tensor up_transition(Tape& tape, const Tensor& x, const UpTransitionParams& params) {
  if (x.shape().c % 2 != 0)
    throw ShapeError("up_transition: channel count must be even, got " + x.shape().str());
  Tensor up = upsample_nearest2x(tape, x);
  return relu(tape, conv2d(tape, up, params.conv.weight, params.conv.bias));
}

Tensor ikt_fuse(Tape& tape, const Tensor& encoder_out, const Tensor& decoder_in,
                const ConvLstmParams& params) {
  if (!(encoder_out.shape() == decoder_in.shape()))
    throw ShapeError("ikt_fuse: encoder output " + encoder_out.shape().str() +
                     " and decoder input " + decoder_in.shape().str() +
                     " must agree; the surrounding wiring is inconsistent");

  // Step 1: zero initial state, so hidden-path convolutions and the
  // forget-gate term vanish identically and are skipped.
  const Tensor& x1 = decoder_in;
  Tensor i1 = sigmoid(tape, conv2d(tape, x1, params.wxi, params.bi));
  Tensor o1 = sigmoid(tape, conv2d(tape, x1, params.wxo, params.bo));
  Tensor g1 = tanh(tape, conv2d(tape, x1, params.wxg, params.bg));
  Tensor c1 = mul(tape, i1, g1);
  Tensor h1 = mul(tape, o1, tanh(tape, c1));

  // Step 2: full gate equations on the encoder output.
  const Tensor& x2 = encoder_out;
  auto gate = [&](const Tensor& wx, const Tensor& b, const Tensor& wh) {
    return add(tape, conv2d(tape, x2, wx, b), conv2d(tape, h1, wh, Tensor{}));
  };
  Tensor i2 = sigmoid(tape, gate(params.wxi, params.bi, params.whi));
  Tensor f2 = sigmoid(tape, gate(params.wxf, params.bf, params.whf));
  Tensor o2 = sigmoid(tape, gate(params.wxo, params.bo, params.who));
  Tensor g2 = tanh(tape, gate(params.wxg, params.bg, params.whg));
  Tensor c2 = add(tape, mul(tape, f2, c1), mul(tape, i2, g2));
  return mul(tape, o2, tanh(tape, c2));
}

Tensor se_gate(Tape& tape, const Tensor& x, const SEParams& params) {
  Tensor s = global_avg_pool(tape, x);
  Tensor e = relu(tape, dense(tape, s, params.fc1_weight, params.fc1_bias));
  Tensor z = sigmoid(tape, dense(tape, e, params.fc2_weight, params.fc2_bias));
  return channel_scale(tape, x, z);
}

}  // namespace mcgkt
