#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "asymloc/geometry.hpp"

namespace asymloc {

/// Single-channel float raster, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  ImageSize size() const { return {width, height}; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear sample; 0 outside [0, W-1] x [0, H-1].
float sample_bilinear(const Image& img, double x, double y);

/// out(p) = src(h^-1 p). Out-of-frame regions are 0.
Image warp_image(const Image& src, const Homography& h, ImageSize out_size);

/// Resize so the short side equals `side`, then center-crop to side x side.
Image resize_center_crop(const Image& src, int side);

double image_mean(const Image& img);
double image_stddev(const Image& img);

// 8-bit raster I/O. Decoders return grayscale in [0, 1] using luma weights
// (0.299, 0.587, 0.114) for colour input.
Image decode_pnm(std::span<const std::uint8_t> bytes);
Image decode_png(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);
void save_pgm(const Image& img, const std::filesystem::path& path);

}  // namespace asymloc
