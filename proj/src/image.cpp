#include "asymloc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "asymloc/errors.hpp"

namespace asymloc {

float sample_bilinear(const Image& img, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width - 1 && y <= img.height - 1)) return 0.0f;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int xi, int yi) -> double {
    if (xi >= img.width || yi >= img.height) return 0.0;
    return img.at(xi, yi);
  };
  const double top = px(x0, y0) * (1.0 - fx) + (fx > 0.0 ? px(x0 + 1, y0) * fx : 0.0);
  if (fy <= 0.0) return static_cast<float>(top);
  const double bot = px(x0, y0 + 1) * (1.0 - fx) + (fx > 0.0 ? px(x0 + 1, y0 + 1) * fx : 0.0);
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

Image warp_image(const Image& src, const Homography& h, ImageSize out_size) {
  const Homography inv = h.inverse();
  Image out(out_size.width, out_size.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      out.at(x, y) = std::isfinite(s.x) && std::isfinite(s.y) ? sample_bilinear(src, s.x, s.y) : 0.0f;
    }
  return out;
}

Image resize_center_crop(const Image& src, int side) {
  if (side <= 0) throw ConfigError("resize target must be positive");
  const double scale = static_cast<double>(side) / std::min(src.width, src.height);
  const int rw = std::max(side, static_cast<int>(std::lround(src.width * scale)));
  const int rh = std::max(side, static_cast<int>(std::lround(src.height * scale)));
  const int ox = (rw - side) / 2, oy = (rh - side) / 2;
  // Box-averaged bilinear taps over the source footprint of each output pixel.
  const int taps = std::max(1, static_cast<int>(std::ceil(1.0 / scale)));
  Image out(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double acc = 0;
      for (int ty = 0; ty < taps; ++ty)
        for (int tx = 0; tx < taps; ++tx) {
          const double sx = (x + ox + (tx + 0.5) / taps) / scale - 0.5;
          const double sy = (y + oy + (ty + 0.5) / taps) / scale - 0.5;
          acc += sample_bilinear(src, std::clamp(sx, 0.0, src.width - 1.0), std::clamp(sy, 0.0, src.height - 1.0));
        }
      out.at(x, y) = static_cast<float>(acc / (taps * taps));
    }
  return out;
}

double image_mean(const Image& img) {
  double s = 0;
  for (float v : img.pixels) s += v;
  return img.pixels.empty() ? 0.0 : s / static_cast<double>(img.pixels.size());
}

double image_stddev(const Image& img) {
  const double m = image_mean(img);
  double s = 0;
  for (float v : img.pixels) s += (v - m) * (v - m);
  return img.pixels.empty() ? 0.0 : std::sqrt(s / static_cast<double>(img.pixels.size()));
}

namespace {

float luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<float>((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  std::string tok;
  while (pos < bytes.size()) {
    const char c = static_cast<char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
    tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos);
  if (magic != "P5" && magic != "P6") throw FormatError("not a binary PGM/PPM file");
  const int channels = magic == "P5" ? 1 : 3;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(bytes, pos));
    h = std::stoi(pnm_token(bytes, pos));
    maxval = std::stoi(pnm_token(bytes, pos));
  } catch (const std::exception&) {
    throw FormatError("malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("only 8-bit PGM/PPM rasters are supported");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < pos + need) throw CorruptionError("PNM payload truncated");
  Image img(w, h);
  const std::uint8_t* p = bytes.data() + pos;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = channels == 1 ? p[i] / 255.0f : luma(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
  return img;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw FormatError(std::string("PNG decode failed: ") + image.message);
  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = colour ? 3 : 1;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(std::string("PNG decode failed: ") + image.message);
  }
  Image img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = channels == 1 ? buf[i] / 255.0f : luma(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
  return img;
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
    return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw FormatError("unsupported raster format: " + path.string());
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.pixels)
    out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
}

}  // namespace asymloc
