#pragma once

#include "mcgkt/tensor.hpp"

namespace mcgkt {

enum class Padding { same, valid };

// 2-D convolution, stride 1. weight is [out_channels, in_channels, kh, kw];
// bias is [1, out_channels, 1, 1] or an undefined tensor for no bias. Same
// padding requires odd kernel extents and zero-pads the borders.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding = Padding::same);

// Non-overlapping 2x2 max pooling; H and W must be even. Gradient flows to the
// argmax only, ties broken to the first element in row-major scan order.
Tensor maxpool2x2(Tape& tape, const Tensor& input);

// Each element replicated into a 2x2 block.
Tensor upsample_nearest2x(Tape& tape, const Tensor& input);

// Affine map on the flattened (c*h*w) feature axis. weight is
// [out_features, in_features, 1, 1]; bias is [1, out_features, 1, 1].
Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(Tape& tape, const Tensor& input);     // relu'(0) := 0
Tensor sigmoid(Tape& tape, const Tensor& input);  // overflow-safe on both tails
Tensor tanh(Tape& tape, const Tensor& input);

// Per-channel spatial mean, [N,C,H,W] -> [N,C,1,1].
Tensor global_avg_pool(Tape& tape, const Tensor& input);

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// Scales channel c of x by gate value z[n,c]; z is [N,C,1,1].
Tensor channel_scale(Tape& tape, const Tensor& x, const Tensor& z);

// Mean over all elements of the squared difference; scalar output.
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target);

// Sum of all elements; scalar output.
Tensor sum(Tape& tape, const Tensor& input);

}  // namespace mcgkt
