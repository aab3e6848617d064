#pragma once

#include <filesystem>

#include "mcgkt/tensor.hpp"

namespace mcgkt {

// Reads an 8-bit PNG as [1,3,H,W] with values v/255. Grayscale, palette and
// alpha variants are normalized to RGB on read.
Tensor load_image(const std::filesystem::path& path);

// Writes an [1,3,H,W] tensor as 8-bit RGB PNG, quantizing by
// round(clamp(x,0,1) * 255).
void save_image(const Tensor& image, const std::filesystem::path& path);

}  // namespace mcgkt
