#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcgkt/tensor.hpp"

namespace mcgkt {

// Paired observation: rainy = clamp(clean + rain, 0, 1) with the rain layer
// broadcast across RGB. `rain` is undefined for pairs loaded from disk.
struct ImagePair {
  Tensor clean;  // [1,3,H,W] in [0,1]
  Tensor rain;   // [1,1,H,W] nonnegative, when synthesized
  Tensor rainy;  // [1,3,H,W] in [0,1]
};

struct RainConfig {
  enum class Mode { regular, irregular };

  float density_per_mpx = 4000.0f;  // streak count per megapixel
  float angle_min_deg = -30.0f;     // degrees from vertical
  float angle_max_deg = 30.0f;
  float length_min = 8.0f;  // pixels
  float length_max = 20.0f;
  float width_min = 0.7f;
  float width_max = 1.6f;
  float intensity_min = 0.15f;
  float intensity_max = 0.65f;
  float blur_sigma = 0.5f;  // gaussian sigma in pixels; 0 disables
  Mode mode = Mode::regular;
  std::uint64_t seed = 0;

  void validate() const;
};

// Renders anti-aliased streak segments onto a rain layer and composes the
// observation. In regular mode every streak in one image shares one of five
// directions spaced evenly across the angle range; irregular mode samples
// per-streak angles and breaks each streak into dashes. Deterministic for a
// given seed.
ImagePair synthesize_rain(const Tensor& clean, const RainConfig& config);

// Aligned random crops; offsets are uniform over valid positions and
// identical for all planes of the pair.
std::vector<ImagePair> sample_patches(const ImagePair& pair, Index patch, Index count,
                                      std::uint64_t seed);

ImagePair load_pair(const std::filesystem::path& rainy_path,
                    const std::filesystem::path& clean_path);

// Dataset layout: <root>/rainy/<name>.png paired with <root>/clean/<name>.png
// by stem, discovered lexicographically.
struct PairPaths {
  std::string stem;
  std::filesystem::path rainy;
  std::filesystem::path clean;
};

struct PairListing {
  std::vector<PairPaths> pairs;
  std::vector<std::string> unmatched;  // stems present on one side only
};

PairListing discover_pairs(const std::filesystem::path& root);

std::vector<ImagePair> load_dataset(const std::filesystem::path& root);

// Deterministic stream mixer for deriving independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace mcgkt
