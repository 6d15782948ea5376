#include "asymloc/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "asymloc/errors.hpp"

namespace asymloc {

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.p_brightness_contrast = c.p_gamma = c.p_gain = c.p_blur = c.p_motion_blur = c.p_noise = 0.0;
  c.p_geometric = 0.0;
  return c;
}

namespace {

constexpr int kSuper = 2;  // supersampling factor per axis

// Blends `value` into every pixel with the supersampled coverage of `inside`.
template <typename Pred>
void paint(Image& img, int x0, int y0, int x1, int y1, float value, Pred inside) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width - 1);
  y1 = std::min(y1, img.height - 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
          if (inside(x - 0.5 + (sx + 0.5) / kSuper, y - 0.5 + (sy + 0.5) / kSuper)) ++hits;
      if (hits == 0) continue;
      const float a = static_cast<float>(hits) / (kSuper * kSuper);
      img.at(x, y) = (1.0f - a) * img.at(x, y) + a * value;
    }
}

void draw_polygon(Image& img, Rng& rng) {
  const double cx = rng.uniform(0, img.width), cy = rng.uniform(0, img.height);
  const double r = rng.uniform(0.08, 0.3) * std::min(img.width, img.height);
  const int n = 3 + static_cast<int>(rng.below(4));
  std::vector<double> ang(static_cast<std::size_t>(n));
  for (double& a : ang) a = rng.uniform(0, 2 * std::numbers::pi);
  std::sort(ang.begin(), ang.end());
  std::vector<Point2> v;
  for (double a : ang) {
    const double rr = r * rng.uniform(0.5, 1.0);
    v.push_back({cx + rr * std::cos(a), cy + rr * std::sin(a)});
  }
  const float value = static_cast<float>(rng.uniform());
  auto inside = [&](double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
      if ((v[i].y > y) != (v[j].y > y) &&
          x < (v[j].x - v[i].x) * (y - v[i].y) / (v[j].y - v[i].y) + v[i].x)
        in = !in;
    }
    return in;
  };
  paint(img, static_cast<int>(cx - r) - 1, static_cast<int>(cy - r) - 1, static_cast<int>(cx + r) + 1,
        static_cast<int>(cy + r) + 1, value, inside);
}

void draw_ellipse(Image& img, Rng& rng) {
  const double cx = rng.uniform(0, img.width), cy = rng.uniform(0, img.height);
  const double m = std::min(img.width, img.height);
  const double ra = rng.uniform(0.04, 0.2) * m, rb = rng.uniform(0.04, 0.2) * m;
  const double t = rng.uniform(0, std::numbers::pi);
  const double c = std::cos(t), s = std::sin(t);
  const float value = static_cast<float>(rng.uniform());
  const double r = std::max(ra, rb);
  paint(img, static_cast<int>(cx - r) - 1, static_cast<int>(cy - r) - 1, static_cast<int>(cx + r) + 1,
        static_cast<int>(cy + r) + 1, value, [&](double x, double y) {
          const double dx = x - cx, dy = y - cy;
          const double u = (c * dx + s * dy) / ra, w = (-s * dx + c * dy) / rb;
          return u * u + w * w <= 1.0;
        });
}

void draw_line(Image& img, Rng& rng) {
  const Point2 a{rng.uniform(0, img.width), rng.uniform(0, img.height)};
  const Point2 b{rng.uniform(0, img.width), rng.uniform(0, img.height)};
  const double half = rng.uniform(0.5, 1.75);
  const float value = static_cast<float>(rng.uniform());
  const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
  if (len2 < 1.0) return;
  paint(img, static_cast<int>(std::min(a.x, b.x) - half) - 1, static_cast<int>(std::min(a.y, b.y) - half) - 1,
        static_cast<int>(std::max(a.x, b.x) + half) + 1, static_cast<int>(std::max(a.y, b.y) + half) + 1,
        value, [&](double x, double y) {
          const double t = std::clamp(((x - a.x) * dx + (y - a.y) * dy) / len2, 0.0, 1.0);
          const double px = a.x + t * dx - x, py = a.y + t * dy - y;
          return px * px + py * py <= half * half;
        });
}

void draw_checkerboard(Image& img, Rng& rng) {
  const double m = std::min(img.width, img.height);
  const double cx = rng.uniform(0, img.width), cy = rng.uniform(0, img.height);
  const double hw = rng.uniform(0.1, 0.25) * m, hh = rng.uniform(0.1, 0.25) * m;
  const double cell = rng.uniform(4.0, 10.0);
  const double t = rng.uniform(0, std::numbers::pi / 2);
  const double c = std::cos(t), s = std::sin(t);
  const float v0 = static_cast<float>(rng.uniform()), v1 = static_cast<float>(rng.uniform());
  const double r = std::hypot(hw, hh);
  for (int parity = 0; parity < 2; ++parity)
    paint(img, static_cast<int>(cx - r) - 1, static_cast<int>(cy - r) - 1, static_cast<int>(cx + r) + 1,
          static_cast<int>(cy + r) + 1, parity ? v1 : v0, [&](double x, double y) {
            const double dx = x - cx, dy = y - cy;
            const double u = c * dx + s * dy, w = -s * dx + c * dy;
            if (std::abs(u) > hw || std::abs(w) > hh) return false;
            const long iu = static_cast<long>(std::floor((u + hw) / cell));
            const long iw = static_cast<long>(std::floor((w + hh) / cell));
            return ((iu + iw) & 1) == parity;
          });
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
  double ks = 0;
  for (int i = -rad; i <= rad; ++i) ks += (k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= ks;
  Image tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[static_cast<std::size_t>(i + rad)] * img.at(std::clamp(x + i, 0, img.width - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[static_cast<std::size_t>(i + rad)] * tmp.at(x, std::clamp(y + i, 0, img.height - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  return out;
}

Image motion_blur(const Image& img, int len, double angle) {
  if (len <= 1) return img;
  const double dx = std::cos(angle), dy = std::sin(angle);
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0;
      for (int i = 0; i < len; ++i) {
        const double t = i - (len - 1) / 2.0;
        acc += sample_bilinear(img, std::clamp(x + t * dx, 0.0, img.width - 1.0),
                               std::clamp(y + t * dy, 0.0, img.height - 1.0));
      }
      out.at(x, y) = static_cast<float>(acc / len);
    }
  return out;
}

void clamp01(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Image synth_base_image(Rng& rng, ImageSize size) {
  if (size.width < 16 || size.height < 16) throw ConfigError("synthetic images must be at least 16x16");
  for (int attempt = 0;; ++attempt) {
    Image img(size.width, size.height);
    const double base = rng.uniform(0.2, 0.8);
    const double gx = rng.uniform(-0.4, 0.4) / size.width, gy = rng.uniform(-0.4, 0.4) / size.height;
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x)
        img.at(x, y) = static_cast<float>(base + gx * (x - size.width / 2.0) + gy * (y - size.height / 2.0));
    const double area_scale = static_cast<double>(size.width) * size.height / (96.0 * 96.0);
    const int shapes = static_cast<int>(std::lround((8 + rng.below(8)) * std::max(1.0, area_scale)));
    for (int s = 0; s < shapes; ++s) {
      switch (rng.below(5)) {
        case 0:
        case 1: draw_polygon(img, rng); break;
        case 2: draw_ellipse(img, rng); break;
        case 3: draw_line(img, rng); break;
        default: draw_checkerboard(img, rng); break;
      }
    }
    clamp01(img);
    if (image_stddev(img) > 0.05 || attempt >= 20) return img;
  }
}

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  Image out = img;
  if (rng.bernoulli(cfg.p_brightness_contrast)) {
    const double delta = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
    const double contrast = rng.uniform(cfg.contrast.lo, cfg.contrast.hi);
    for (float& v : out.pixels) v = static_cast<float>((v - 0.5) * contrast + 0.5 + delta);
    clamp01(out);
  }
  if (rng.bernoulli(cfg.p_gamma)) {
    const double g = rng.uniform(cfg.gamma.lo, cfg.gamma.hi);
    for (float& v : out.pixels) v = static_cast<float>(std::pow(static_cast<double>(v), g));
    clamp01(out);
  }
  if (rng.bernoulli(cfg.p_gain)) {
    const double g = rng.uniform(cfg.gain.lo, cfg.gain.hi);
    for (float& v : out.pixels) v = static_cast<float>(v * g);
    clamp01(out);
  }
  if (rng.bernoulli(cfg.p_blur)) {
    out = gaussian_blur(out, rng.uniform(cfg.blur_sigma.lo, cfg.blur_sigma.hi));
    clamp01(out);
  }
  if (rng.bernoulli(cfg.p_motion_blur)) {
    const int len = static_cast<int>(std::lround(rng.uniform(cfg.motion_blur_len.lo, cfg.motion_blur_len.hi)));
    out = motion_blur(out, len, rng.uniform(0, std::numbers::pi));
    clamp01(out);
  }
  if (rng.bernoulli(cfg.p_noise)) {
    for (float& v : out.pixels) v = static_cast<float>(v + cfg.gaussian_noise_sigma * rng.normal());
    clamp01(out);
  }
  return out;
}

TrainingPair generate_pair(const Image& base, Rng& rng, const HomographySamplerConfig& hcfg,
                           const AugmentConfig& acfg) {
  Homography h = sample_homography(rng, hcfg, base.size());
  if (rng.bernoulli(acfg.p_geometric)) {
    HomographySamplerConfig geo;
    geo.max_rotation_deg = acfg.rotation_deg;
    geo.scale_range = acfg.scale;
    h = sample_homography(rng, geo, base.size()).compose(h);
  }
  TrainingPair pair;
  pair.h_ab = h;
  const Image warped = warp_image(base, h, base.size());
  pair.image_a = augment(base, acfg, rng);
  pair.image_b = augment(warped, acfg, rng);
  return pair;
}

std::vector<Image> load_corpus(const std::filesystem::path& path, int max_images, int side) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (ext == ".pgm" || ext == ".ppm" || ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) files.push_back(path.parent_path() / line);
    }
  } else {
    throw CorpusError("corpus path does not exist: " + path.string());
  }
  std::vector<Image> images;
  for (const fs::path& f : files) {
    if (max_images > 0 && static_cast<int>(images.size()) >= max_images) break;
    try {
      images.push_back(resize_center_crop(load_image(f), side));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
    }
  }
  if (images.empty()) throw CorpusError("no decodable images in " + path.string());
  return images;
}

PairSource::PairSource(DataConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  if (cfg_.size.width != cfg_.size.height && !cfg_.corpus.empty())
    throw ConfigError("corpus images are cropped square; width must equal height");
  if (!cfg_.corpus.empty()) corpus_ = load_corpus(cfg_.corpus, cfg_.max_images, cfg_.size.width);
}

TrainingPair PairSource::pair(std::string_view stream, std::uint64_t index) const {
  Image base;
  std::string id;
  if (!corpus_.empty()) {
    base = corpus_[index % corpus_.size()];
    id = "corpus:" + std::to_string(index % corpus_.size());
  } else {
    Rng base_rng(derive_seed(seed_, std::string("base/") + std::string(stream), index));
    base = synth_base_image(base_rng, cfg_.size);
    id = "synth:" + std::string(stream) + ":" + std::to_string(index);
  }
  Rng rng(derive_seed(seed_, stream, index));
  TrainingPair p = generate_pair(base, rng, cfg_.homography, cfg_.augment);
  p.source_id = std::move(id);
  return p;
}

}  // namespace asymloc
