#include "mcgkt/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace mcgkt {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("image: cannot open " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("image: " + path.string() + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("image: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("image: failed to decode " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("image: " + path.string() + " did not normalize to RGB");
  }

  std::vector<png_byte> data(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Shape shape{1, 3, static_cast<Index>(h), static_cast<Index>(w)};
  Array v(shape.numel());
  const Index plane = shape.plane();
  for (Index y = 0; y < shape.h; ++y)
    for (Index x = 0; x < shape.w; ++x)
      for (Index c = 0; c < 3; ++c)
        v[c * plane + y * shape.w + x] =
            static_cast<float>(data[(y * shape.w + x) * 3 + c]) / 255.0f;
  return Tensor::from(shape, std::move(v));
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3)
    throw ShapeError("image: save expects [1,3,H,W], got " + s.str());

  std::vector<png_byte> data(static_cast<std::size_t>(s.h) * s.w * 3);
  const Index plane = s.plane();
  const Array& v = image.values();
  for (Index y = 0; y < s.h; ++y)
    for (Index x = 0; x < s.w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float clamped = std::min(1.0f, std::max(0.0f, v[c * plane + y * s.w + x]));
        data[(y * s.w + x) * 3 + c] = static_cast<png_byte>(std::lround(clamped * 255.0f));
      }

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("image: cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("image: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("image: failed to encode " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(s.h);
  for (Index y = 0; y < s.h; ++y) rows[y] = data.data() + static_cast<std::size_t>(y) * s.w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mcgkt
