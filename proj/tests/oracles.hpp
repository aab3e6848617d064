#pragma once

// Independent brute-force references used to pin expected values. Everything
// here is scalar loops with double accumulation, deliberately sharing no code
// with the library implementations.

#include <cmath>
#include <limits>
#include <vector>

#include "mcgkt/layers.hpp"
#include "mcgkt/tensor.hpp"

namespace oracle {

using mcgkt::Index;
using mcgkt::Shape;
using mcgkt::Tensor;

// Quadruple-loop convolution, stride 1.
inline std::vector<double> conv2d_ref(const Tensor& input, const Tensor& weight,
                                      const Tensor& bias, bool same_padding) {
  const Shape& in = input.shape();
  const Shape& wt = weight.shape();
  const Index pad_h = same_padding ? (wt.h - 1) / 2 : 0;
  const Index pad_w = same_padding ? (wt.w - 1) / 2 : 0;
  const Index hout = same_padding ? in.h : in.h - wt.h + 1;
  const Index wout = same_padding ? in.w : in.w - wt.w + 1;

  std::vector<double> out(static_cast<std::size_t>(in.n) * wt.n * hout * wout, 0.0);
  for (Index n = 0; n < in.n; ++n)
    for (Index co = 0; co < wt.n; ++co)
      for (Index y = 0; y < hout; ++y)
        for (Index x = 0; x < wout; ++x) {
          double acc = bias.defined() ? static_cast<double>(bias.values()[co]) : 0.0;
          for (Index ci = 0; ci < in.c; ++ci)
            for (Index ky = 0; ky < wt.h; ++ky)
              for (Index kx = 0; kx < wt.w; ++kx) {
                const Index iy = y + ky - pad_h;
                const Index ix = x + kx - pad_w;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(input.at(n, ci, iy, ix)) *
                       weight.at(co, ci, ky, kx);
              }
          out[((n * wt.n + co) * hout + y) * wout + x] = acc;
        }
  return out;
}

inline std::vector<double> maxpool_ref(const Tensor& input) {
  const Shape& s = input.shape();
  std::vector<double> out(static_cast<std::size_t>(s.n) * s.c * (s.h / 2) * (s.w / 2));
  std::size_t o = 0;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h / 2; ++y)
        for (Index x = 0; x < s.w / 2; ++x) {
          double best = input.at(n, c, 2 * y, 2 * x);
          best = std::max(best, static_cast<double>(input.at(n, c, 2 * y, 2 * x + 1)));
          best = std::max(best, static_cast<double>(input.at(n, c, 2 * y + 1, 2 * x)));
          best = std::max(best, static_cast<double>(input.at(n, c, 2 * y + 1, 2 * x + 1)));
          out[o++] = best;
        }
  return out;
}

inline std::vector<double> dense_ref(const Tensor& input, const Tensor& weight,
                                     const Tensor& bias) {
  const Index n = input.shape().n;
  const Index din = input.numel() / n;
  const Index dout = weight.shape().n;
  std::vector<double> out(static_cast<std::size_t>(n) * dout);
  for (Index i = 0; i < n; ++i)
    for (Index o = 0; o < dout; ++o) {
      double acc = bias.values()[o];
      for (Index k = 0; k < din; ++k)
        acc += static_cast<double>(input.values()[i * din + k]) * weight.values()[o * din + k];
      out[i * dout + o] = acc;
    }
  return out;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Full two-step ConvLSTM gate equations (including the step-1 forget term the
// implementation folds away), scalar convolutions in double.
inline std::vector<double> convlstm_ref(const Tensor& encoder_out, const Tensor& decoder_in,
                                        const mcgkt::ConvLstmParams& p) {
  const Shape& s = decoder_in.shape();
  const Index C = s.c, H = s.h, W = s.w, N = s.n;
  const auto plane = static_cast<std::size_t>(H * W);
  const std::size_t state_size = static_cast<std::size_t>(N) * C * plane;

  auto conv_same = [&](const std::vector<double>& x, const Tensor& w) {
    std::vector<double> out(state_size, 0.0);
    for (Index n = 0; n < N; ++n)
      for (Index co = 0; co < C; ++co)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx) {
            double acc = 0.0;
            for (Index ci = 0; ci < C; ++ci)
              for (Index ky = 0; ky < 3; ++ky)
                for (Index kx = 0; kx < 3; ++kx) {
                  const Index iy = y + ky - 1, ix = xx + kx - 1;
                  if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                  acc += x[((n * C + ci) * H + iy) * W + ix] * w.at(co, ci, ky, kx);
                }
            out[((n * C + co) * H + y) * W + xx] = acc;
          }
    return out;
  };
  auto to_double = [&](const Tensor& t) {
    std::vector<double> out(state_size);
    for (std::size_t i = 0; i < state_size; ++i) out[i] = t.values()[i];
    return out;
  };

  std::vector<double> h(state_size, 0.0), c(state_size, 0.0);
  const std::vector<double> steps[2] = {to_double(decoder_in), to_double(encoder_out)};
  for (const auto& x : steps) {
    const auto xi = conv_same(x, p.wxi), hi = conv_same(h, p.whi);
    const auto xf = conv_same(x, p.wxf), hf = conv_same(h, p.whf);
    const auto xo = conv_same(x, p.wxo), ho = conv_same(h, p.who);
    const auto xg = conv_same(x, p.wxg), hg = conv_same(h, p.whg);
    for (std::size_t idx = 0; idx < state_size; ++idx) {
      const Index ch = static_cast<Index>(idx / plane) % C;
      const double i_g = sigmoid_ref(xi[idx] + hi[idx] + p.bi.values()[ch]);
      const double f_g = sigmoid_ref(xf[idx] + hf[idx] + p.bf.values()[ch]);
      const double o_g = sigmoid_ref(xo[idx] + ho[idx] + p.bo.values()[ch]);
      const double g_g = std::tanh(xg[idx] + hg[idx] + p.bg.values()[ch]);
      c[idx] = f_g * c[idx] + i_g * g_g;
      h[idx] = o_g * std::tanh(c[idx]);
    }
  }
  return h;
}

inline std::vector<double> se_ref(const Tensor& x, const mcgkt::SEParams& p) {
  const Shape& s = x.shape();
  const Index C = s.c, R = p.fc1_weight.shape().n;
  std::vector<double> out(static_cast<std::size_t>(s.numel()));
  for (Index n = 0; n < s.n; ++n) {
    std::vector<double> squeeze(C, 0.0);
    for (Index c = 0; c < C; ++c) {
      double acc = 0.0;
      for (Index y = 0; y < s.h; ++y)
        for (Index xx = 0; xx < s.w; ++xx) acc += x.at(n, c, y, xx);
      squeeze[c] = acc / static_cast<double>(s.h * s.w);
    }
    std::vector<double> hidden(R, 0.0);
    for (Index r = 0; r < R; ++r) {
      double acc = p.fc1_bias.values()[r];
      for (Index c = 0; c < C; ++c) acc += p.fc1_weight.values()[r * C + c] * squeeze[c];
      hidden[r] = std::max(0.0, acc);
    }
    for (Index c = 0; c < C; ++c) {
      double acc = p.fc2_bias.values()[c];
      for (Index r = 0; r < R; ++r) acc += p.fc2_weight.values()[c * R + r] * hidden[r];
      const double z = sigmoid_ref(acc);
      for (Index y = 0; y < s.h; ++y)
        for (Index xx = 0; xx < s.w; ++xx)
          out[((n * C + c) * s.h + y) * s.w + xx] = z * x.at(n, c, y, xx);
    }
  }
  return out;
}

inline double psnr_ref(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    const double d = 255.0 * (static_cast<double>(a.values()[i]) - b.values()[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// SSIM of two constant images, zero variances.
inline double ssim_const_ref(double v1, double v2) {
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  return ((2.0 * v1 * v2 + c1) * c2) / ((v1 * v1 + v2 * v2 + c1) * c2);
}

}  // namespace oracle
