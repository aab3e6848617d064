#pragma once

#include <cmath>
#include <random>

#include "mcgkt/rain.hpp"
#include "mcgkt/tensor.hpp"

namespace testutil {

using mcgkt::Array;
using mcgkt::Index;
using mcgkt::Shape;
using mcgkt::Tensor;

inline float urand(std::mt19937_64& rng) {
  return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float lo = -1.0f,
                            float hi = 1.0f, bool requires_grad = false) {
  Array v(shape.numel());
  for (Index i = 0; i < v.size(); ++i) v[i] = lo + (hi - lo) * urand(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

inline bool bit_equal(const Array& a, const Array& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Smooth low-frequency RGB test image: mixed gradients and soft blobs, values
// kept inside [0.05, 0.95].
inline Tensor procedural_clean(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Shape s{1, 3, h, w};
  Array v(s.numel());
  for (Index c = 0; c < 3; ++c) {
    const float gx = 0.5f * (urand(rng) - 0.5f);
    const float gy = 0.5f * (urand(rng) - 0.5f);
    const float fx = 1.0f + 2.0f * urand(rng);
    const float fy = 1.0f + 2.0f * urand(rng);
    const float phase = 6.28318f * urand(rng);
    const float amp = 0.1f + 0.15f * urand(rng);
    const float cx = urand(rng), cy = urand(rng), rad = 0.15f + 0.25f * urand(rng);
    const float blob = 0.2f + 0.3f * urand(rng);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const float u = static_cast<float>(x) / static_cast<float>(w);
        const float t = static_cast<float>(y) / static_cast<float>(h);
        float val = 0.5f + gx * (u - 0.5f) + gy * (t - 0.5f) +
                    amp * std::cos(6.28318f * (fx * u + fy * t) + phase);
        const float d2 = (u - cx) * (u - cx) + (t - cy) * (t - cy);
        val += blob * std::exp(-d2 / (rad * rad));
        v[c * s.plane() + y * w + x] = std::min(0.95f, std::max(0.05f, val));
      }
    }
  }
  return Tensor::from(s, std::move(v));
}

inline std::vector<mcgkt::ImagePair> synthetic_dataset(int count, Index h, Index w,
                                                       std::uint64_t seed,
                                                       mcgkt::RainConfig rain = {}) {
  std::vector<mcgkt::ImagePair> out;
  for (int i = 0; i < count; ++i) {
    Tensor clean = procedural_clean(h, w, mcgkt::mix_seed(seed, 0xC1EA, i));
    rain.seed = mcgkt::mix_seed(seed, 0x5A17, i);
    out.push_back(mcgkt::synthesize_rain(clean, rain));
  }
  return out;
}

}  // namespace testutil
