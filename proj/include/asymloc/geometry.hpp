#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "asymloc/rng.hpp"

namespace asymloc {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// 3x3 projective map over pixel coordinates, row-major, m[8] == 1.
class Homography {
 public:
  Homography();  // identity
  /// Canonicalizes so m[2][2] = 1; throws DegeneracyError when singular.
  explicit Homography(const std::array<double, 9>& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);

  const std::array<double, 9>& m() const { return m_; }
  double operator()(int r, int c) const { return m_[static_cast<std::size_t>(r * 3 + c)]; }
  double det() const;
  Homography inverse() const;
  /// this after other: x -> this(other(x)).
  Homography compose(const Homography& other) const;
  /// Non-finite coordinates when the projective divisor is below 1e-9.
  Point2 apply(Point2 p) const;

  std::string serialize() const;  // 9 values, row-major, space-separated
  static Homography parse(const std::string& text);

 private:
  std::array<double, 9> m_;
};

struct HomographySamplerConfig {
  double max_corner_perturb_frac = 0.0;  ///< in [0, 0.5)
  double max_rotation_deg = 0.0;
  double scale_range = 0.0;  ///< scale factor drawn from [1 - r, 1 + r]
  double translation_frac = 0.0;
};

/// Similarity about the image center, then translation, then a projective
/// perturbation that moves each corner of the similarity-transformed frame by
/// at most max_corner_perturb_frac * min(W, H) per axis.
Homography sample_homography(Rng& rng, const HomographySamplerConfig& cfg, ImageSize size);

std::vector<Point2> warp_points(const Homography& h, std::span<const Point2> pts);

struct CorrespondenceSet {
  std::vector<std::pair<int, int>> pairs;
  double tolerance_px = 3.0;
};

/// Mutual-closest pairs within tol_px, closest-first with lowest-index ties.
CorrespondenceSet ground_truth_correspondences(const Homography& h, std::span<const Point2> pos_a,
                                               std::span<const Point2> pos_b, double tol_px);

struct PointMatch {
  Point2 a;
  Point2 b;
};

/// Hartley-normalized DLT. Throws ArityError below 4 pairs and
/// DegeneracyError on rank-deficient configurations.
Homography estimate_homography_dlt(std::span<const PointMatch> matches);

struct RansacConfig {
  int iterations = 1000;
  double inlier_tol_px = 3.0;
};

struct RansacResult {
  bool ok = false;
  Homography h;
  std::vector<std::uint8_t> inlier_mask;
  int inlier_count = 0;
};

RansacResult ransac_homography(std::span<const PointMatch> matches, const RansacConfig& cfg, Rng& rng);

std::array<Point2, 4> image_corners(ImageSize size);
/// Mean distance over the four image corners; +inf when a warp is invalid.
double corner_error(const Homography& h_est, const Homography& h_gt, ImageSize size);

}  // namespace asymloc
