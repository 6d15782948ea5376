#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "asymloc/geometry.hpp"
#include "asymloc/image.hpp"
#include "asymloc/rng.hpp"

namespace asymloc {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Photometric augmentation. Ops run in this fixed order, each gated by its
/// own probability, with a clamp to [0, 1] after every op:
///   brightness/contrast -> gamma -> gain -> gaussian blur -> motion blur -> noise.
/// Gain stands in for the HSV value shift on single-channel images.
/// rotation_deg / scale are geometric and are folded into the pair homography
/// by generate_pair, never applied here.
struct AugmentConfig {
  double brightness_delta = 0.1;
  Interval contrast{0.8, 1.2};
  Interval gamma{0.8, 1.25};
  Interval gain{0.9, 1.1};
  Interval blur_sigma{0.3, 1.0};
  Interval motion_blur_len{3.0, 5.0};
  double gaussian_noise_sigma = 0.02;
  double rotation_deg = 0.0;
  double scale = 0.0;

  double p_brightness_contrast = 0.5;
  double p_gamma = 0.5;
  double p_gain = 0.5;
  double p_blur = 0.25;
  double p_motion_blur = 0.15;
  double p_noise = 0.5;
  double p_geometric = 0.0;

  /// Everything off.
  static AugmentConfig none();
};

struct TrainingPair {
  Image image_a;
  Image image_b;
  Homography h_ab;  ///< maps image_a pixels to image_b pixels
  std::string source_id;
};

Image synth_base_image(Rng& rng, ImageSize size);
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);
TrainingPair generate_pair(const Image& base, Rng& rng, const HomographySamplerConfig& hcfg,
                           const AugmentConfig& acfg);

/// Directory of PGM/PPM/PNG files (sorted by name) or a manifest file listing
/// one relative path per line. Undecodable files are skipped with a warning
/// on stderr. Every image is resized/cropped to side x side.
std::vector<Image> load_corpus(const std::filesystem::path& path, int max_images, int side);

struct DataConfig {
  ImageSize size{160, 160};
  HomographySamplerConfig homography{0.12, 15.0, 0.1, 0.05};
  AugmentConfig augment;
  std::string corpus;  ///< empty: procedural base images
  int max_images = 0;  ///< 0: no limit
};

/// Deterministic pair stream: pair(stream, index) is a pure function of the
/// seed and its arguments. Streams with different names are independent.
class PairSource {
 public:
  PairSource(DataConfig cfg, std::uint64_t seed);
  TrainingPair pair(std::string_view stream, std::uint64_t index) const;
  const DataConfig& config() const { return cfg_; }

 private:
  DataConfig cfg_;
  std::uint64_t seed_;
  std::vector<Image> corpus_;
};

}  // namespace asymloc
