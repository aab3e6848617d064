#include "mcgkt/rain.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mcgkt/image.hpp"

namespace mcgkt {

namespace {

float uniform01(std::mt19937_64& rng) {
  return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

float uniform_range(std::mt19937_64& rng, float lo, float hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Distance from point p to segment [a, b].
float segment_distance(float px, float py, float ax, float ay, float bx, float by) {
  const float vx = bx - ax, vy = by - ay;
  const float len2 = vx * vx + vy * vy;
  float t = len2 > 0.0f ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  const float dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Accumulates one anti-aliased capsule segment, coverage-weighted.
void draw_segment(Array& layer, Index h, Index w, float ax, float ay, float bx, float by,
                  float width, float intensity) {
  const float half = width * 0.5f;
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ax, bx) - half - 1)));
  const Index x1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(std::max(ax, bx) + half + 1)));
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ay, by) - half - 1)));
  const Index y1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(std::max(ay, by) + half + 1)));
  for (Index y = y0; y <= y1; ++y) {
    for (Index x = x0; x <= x1; ++x) {
      const float d =
          segment_distance(static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f, ax, ay, bx, by);
      const float cov = std::clamp(half + 0.5f - d, 0.0f, 1.0f);
      if (cov > 0.0f) layer[y * w + x] += intensity * cov;
    }
  }
}

void gaussian_blur(Array& layer, Index h, Index w, float sigma) {
  if (sigma <= 0.0f) return;
  const Index radius = static_cast<Index>(std::ceil(3.0f * sigma));
  std::vector<float> kernel(2 * radius + 1);
  float total = 0.0f;
  for (Index i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (float& k : kernel) k /= total;

  Array tmp(h * w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (Index i = -radius; i <= radius; ++i) {
        const Index xx = x + i;
        if (xx >= 0 && xx < w) acc += kernel[i + radius] * layer[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) {
      float acc = 0.0f;
      for (Index i = -radius; i <= radius; ++i) {
        const Index yy = y + i;
        if (yy >= 0 && yy < h) acc += kernel[i + radius] * tmp[yy * w + x];
      }
      layer[y * w + x] = acc;
    }
  }
}

}  // namespace

void RainConfig::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigError("rain config: " + msg); };
  if (density_per_mpx < 0.0f) bad("density must be nonnegative");
  if (angle_min_deg > angle_max_deg) bad("empty angle range");
  if (length_min > length_max || length_min <= 0.0f) bad("bad length range");
  if (width_min > width_max || width_min <= 0.0f) bad("bad width range");
  if (intensity_min > intensity_max || intensity_min <= 0.0f || intensity_max > 1.0f)
    bad("intensity range must sit inside (0,1]");
  if (blur_sigma < 0.0f) bad("blur sigma must be nonnegative");
}

ImagePair synthesize_rain(const Tensor& clean, const RainConfig& config) {
  config.validate();
  const Shape& s = clean.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("rain: clean image must be [1,3,H,W], got " + s.str());
  if (s.h < 16 || s.w < 16) throw ShapeError("rain: image must be at least 16x16, got " + s.str());

  std::mt19937_64 rng(config.seed);
  const Index count = static_cast<Index>(std::lround(
      static_cast<double>(config.density_per_mpx) * static_cast<double>(s.h) * s.w / 1e6));

  float image_angle = 0.0f;
  if (config.mode == RainConfig::Mode::regular) {
    // one of five evenly spaced directions per image
    const int pick = static_cast<int>(rng() % 5);
    image_angle = config.angle_min_deg +
                  (config.angle_max_deg - config.angle_min_deg) * static_cast<float>(pick) / 4.0f;
  }

  Array layer = Array::Zero(s.plane());
  for (Index i = 0; i < count; ++i) {
    const float cx = uniform01(rng) * static_cast<float>(s.w);
    const float cy = uniform01(rng) * static_cast<float>(s.h);
    const float len = uniform_range(rng, config.length_min, config.length_max);
    const float width = uniform_range(rng, config.width_min, config.width_max);
    const float intensity = uniform_range(rng, config.intensity_min, config.intensity_max);
    const float angle = config.mode == RainConfig::Mode::regular
                            ? image_angle
                            : uniform_range(rng, config.angle_min_deg, config.angle_max_deg);
    const float rad = angle * 3.14159265358979323846f / 180.0f;
    const float dx = std::sin(rad), dy = std::cos(rad);

    const float ax = cx - 0.5f * len * dx, ay = cy - 0.5f * len * dy;
    if (config.mode == RainConfig::Mode::regular) {
      draw_segment(layer, s.h, s.w, ax, ay, ax + len * dx, ay + len * dy, width, intensity);
    } else {
      // fragmented: 1-3 dashes separated by gaps
      const int dashes = 1 + static_cast<int>(rng() % 3);
      float t = 0.0f;
      for (int k = 0; k < dashes && t < 1.0f; ++k) {
        const float span = uniform_range(rng, 0.15f, 0.45f);
        const float t1 = std::min(1.0f, t + span);
        draw_segment(layer, s.h, s.w, ax + t * len * dx, ay + t * len * dy, ax + t1 * len * dx,
                     ay + t1 * len * dy, width, intensity);
        t = t1 + uniform_range(rng, 0.05f, 0.25f);
      }
    }
  }
  gaussian_blur(layer, s.h, s.w, config.blur_sigma);

  ImagePair pair;
  pair.clean = clean;
  pair.rain = Tensor::from(Shape{1, 1, s.h, s.w}, layer);
  Array rainy(s.numel());
  for (Index c = 0; c < 3; ++c)
    rainy.segment(c * s.plane(), s.plane()) =
        (clean.values().segment(c * s.plane(), s.plane()) + layer).min(1.0f).max(0.0f);
  pair.rainy = Tensor::from(s, std::move(rainy));
  return pair;
}

std::vector<ImagePair> sample_patches(const ImagePair& pair, Index patch, Index count,
                                      std::uint64_t seed) {
  const Shape& s = pair.rainy.shape();
  if (patch > s.h || patch > s.w)
    throw ConfigError("patches: patch size " + std::to_string(patch) +
                      " exceeds image size " + s.str());
  if (patch % 8 != 0)
    throw ConfigError("patches: patch size must be divisible by 8, got " + std::to_string(patch));

  auto crop = [patch](const Tensor& t, Index oy, Index ox) {
    const Shape& src = t.shape();
    Shape dst{1, src.c, patch, patch};
    Array v(dst.numel());
    for (Index c = 0; c < src.c; ++c)
      for (Index y = 0; y < patch; ++y)
        v.segment(c * patch * patch + y * patch, patch) =
            t.values().segment(c * src.plane() + (oy + y) * src.w + ox, patch);
    return Tensor::from(dst, std::move(v));
  };

  std::mt19937_64 rng(seed);
  auto bounded = [&rng](Index n) -> Index {
    if (n <= 1) return 0;
    // rejection sampling keeps offsets exactly uniform
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % static_cast<std::uint64_t>(n));
    std::uint64_t x;
    do {
      x = rng();
    } while (x >= limit);
    return static_cast<Index>(x % static_cast<std::uint64_t>(n));
  };

  std::vector<ImagePair> out;
  out.reserve(count);
  for (Index i = 0; i < count; ++i) {
    const Index oy = bounded(s.h - patch + 1);
    const Index ox = bounded(s.w - patch + 1);
    ImagePair p;
    p.rainy = crop(pair.rainy, oy, ox);
    p.clean = crop(pair.clean, oy, ox);
    if (pair.rain.defined()) p.rain = crop(pair.rain, oy, ox);
    out.push_back(std::move(p));
  }
  return out;
}

ImagePair load_pair(const std::filesystem::path& rainy_path,
                    const std::filesystem::path& clean_path) {
  ImagePair pair;
  pair.rainy = load_image(rainy_path);
  pair.clean = load_image(clean_path);
  if (!(pair.rainy.shape() == pair.clean.shape()))
    throw IoError("pair: dimensions differ: " + rainy_path.string() + " is " +
                  pair.rainy.shape().str() + " but " + clean_path.string() + " is " +
                  pair.clean.shape().str());
  return pair;
}

PairListing discover_pairs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path rainy_dir = root / "rainy";
  const fs::path clean_dir = root / "clean";
  if (!fs::is_directory(rainy_dir) || !fs::is_directory(clean_dir))
    throw IoError("dataset: " + root.string() + " must contain rainy/ and clean/ directories");

  auto stems = [](const fs::path& dir) {
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
    return out;
  };
  const std::set<std::string> rainy = stems(rainy_dir);
  const std::set<std::string> clean = stems(clean_dir);

  PairListing listing;
  for (const std::string& stem : rainy) {
    if (clean.count(stem))
      listing.pairs.push_back(
          {stem, rainy_dir / (stem + ".png"), clean_dir / (stem + ".png")});
    else
      listing.unmatched.push_back(stem);
  }
  for (const std::string& stem : clean)
    if (!rainy.count(stem)) listing.unmatched.push_back(stem);
  std::sort(listing.unmatched.begin(), listing.unmatched.end());
  return listing;
}

std::vector<ImagePair> load_dataset(const std::filesystem::path& root) {
  std::vector<ImagePair> out;
  for (const PairPaths& p : discover_pairs(root).pairs) out.push_back(load_pair(p.rainy, p.clean));
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

}  // namespace mcgkt
