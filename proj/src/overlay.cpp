#include "cardiac/overlay.hpp"

#include <png.h>

#include <algorithm>
#include <array>

#include "cardiac/error.hpp"

namespace cardiac::overlay {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_noop(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_rgb_png(int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw Error(ErrorCode::InvalidArgument, "bad RGB buffer for PNG encoding");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::StorageFailure, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error(ErrorCode::StorageFailure, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> render_png(const Volume4D& image, int t, const LabelVolume& labels, int z, double alpha) {
  if (t < 0 || t >= image.nt() || z < 0 || z >= image.nz()) throw Error(ErrorCode::IndexOutOfRange, "overlay slice/frame");
  if (labels.nx() != image.nx() || labels.ny() != image.ny() || labels.nz() != image.nz())
    throw Error(ErrorCode::ShapeMismatch, "labels and image grids differ");
  const int W = image.nx(), H = image.ny();
  float lo = image.at(0, 0, z, t), hi = lo;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      lo = std::min(lo, image.at(x, y, z, t));
      hi = std::max(hi, image.at(x, y, z, t));
    }
  const double range = hi > lo ? hi - lo : 1.0;
  static constexpr std::array<std::array<double, 3>, 4> kColors = {{{0, 0, 0}, {40, 110, 255}, {40, 220, 90}, {255, 60, 50}}};
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(W) * H * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double g = 255.0 * (image.at(x, y, z, t) - lo) / range;
      const auto l = labels.at(x, y, z);
      for (int c = 0; c < 3; ++c) {
        const double v = l == 0 ? g : (1 - alpha) * g + alpha * kColors[l][c];
        rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  return encode_rgb_png(W, H, rgb);
}

}  // namespace cardiac::overlay
