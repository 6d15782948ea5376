#include "asymloc/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "asymloc/errors.hpp"

namespace asymloc {

namespace {

using Mat3 = Eigen::Matrix3d;

Mat3 to_eigen(const std::array<double, 9>& m) {
  Mat3 e;
  e << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
  return e;
}

std::array<double, 9> from_eigen(const Mat3& e) {
  return {e(0, 0), e(0, 1), e(0, 2), e(1, 0), e(1, 1), e(1, 2), e(2, 0), e(2, 1), e(2, 2)};
}

double sqdist(Point2 a, Point2 b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

bool finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

// Similarity transform taking points to zero centroid and mean distance sqrt(2).
Mat3 hartley(std::span<const Point2> pts) {
  double cx = 0, cy = 0;
  for (const Point2& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double md = 0;
  for (const Point2& p : pts) md += std::hypot(p.x - cx, p.y - cy);
  md /= static_cast<double>(pts.size());
  if (!(md > 1e-12)) throw DegeneracyError("DLT: all points coincide");
  const double s = std::numbers::sqrt2 / md;
  Mat3 t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

bool convex_quad(const std::array<Point2, 4>& q) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Point2& a = q[static_cast<std::size_t>(i)];
    const Point2& b = q[static_cast<std::size_t>((i + 1) % 4)];
    const Point2& c = q[static_cast<std::size_t>((i + 2) % 4)];
    const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    const int s = cross > 0 ? 1 : (cross < 0 ? -1 : 0);
    if (s == 0) return false;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

}  // namespace

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) {
  for (double v : m_)
    if (!std::isfinite(v)) throw DegeneracyError("homography has non-finite entries");
  const double s = m_[8];
  if (std::abs(s) < 1e-15) throw DegeneracyError("homography cannot be canonicalized: m[2][2] == 0");
  if (s != 1.0)
    for (double& v : m_) v /= s;
  m_[8] = 1.0;
  if (!(std::abs(det()) > 1e-12)) throw DegeneracyError("homography is singular");
}

Homography Homography::translation(double tx, double ty) {
  return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
}

double Homography::det() const { return to_eigen(m_).determinant(); }

Homography Homography::inverse() const { return Homography(from_eigen(to_eigen(m_).inverse())); }

Homography Homography::compose(const Homography& other) const {
  return Homography(from_eigen(to_eigen(m_) * to_eigen(other.m_)));
}

Point2 Homography::apply(Point2 p) const {
  const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
  if (std::abs(w) < 1e-9) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
  return {(m_[0] * p.x + m_[1] * p.y + m_[2]) / w, (m_[3] * p.x + m_[4] * p.y + m_[5]) / w};
}

std::string Homography::serialize() const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < 9; ++i) {
    if (i) os << ' ';
    os << m_[i];
  }
  return os.str();
}

Homography Homography::parse(const std::string& text) {
  std::istringstream is(text);
  std::array<double, 9> m{};
  for (double& v : m)
    if (!(is >> v)) throw FormatError("homography needs 9 numbers: '" + text + "'");
  return Homography(m);
}

std::array<Point2, 4> image_corners(ImageSize size) {
  const double w = size.width - 1, h = size.height - 1;
  return {Point2{0, 0}, Point2{w, 0}, Point2{w, h}, Point2{0, h}};
}

Homography sample_homography(Rng& rng, const HomographySamplerConfig& cfg, ImageSize size) {
  if (!(cfg.max_corner_perturb_frac >= 0.0 && cfg.max_corner_perturb_frac < 0.5))
    throw ConfigError("max_corner_perturb_frac must lie in [0, 0.5)");
  if (!(cfg.scale_range >= 0.0 && cfg.scale_range < 1.0))
    throw ConfigError("scale_range must lie in [0, 1)");
  if (cfg.max_rotation_deg < 0.0 || cfg.translation_frac < 0.0)
    throw ConfigError("rotation and translation bounds must be non-negative");
  const double cx = (size.width - 1) / 2.0, cy = (size.height - 1) / 2.0;
  const double bound = cfg.max_corner_perturb_frac * std::min(size.width, size.height);

  for (int attempt = 0; attempt < 100; ++attempt) {
    const double theta = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
    const double s = 1.0 + rng.uniform(-cfg.scale_range, cfg.scale_range);
    const double tx = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * size.width;
    const double ty = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * size.height;
    const double a = s * std::cos(theta), b = s * std::sin(theta);
    std::array<double, 9> sim{a, -b, cx + tx - (a * cx - b * cy), b, a, cy + ty - (b * cx + a * cy), 0, 0, 1};
    if (a == 1.0 && b == 0.0) {
      // pure translation: keep the offsets exact
      sim[2] = tx;
      sim[5] = ty;
    }
    try {
      Homography hs(sim);
      if (bound <= 0.0) return hs;
      const auto corners = image_corners(size);
      std::array<Point2, 4> target{};
      std::array<PointMatch, 4> pm{};
      for (std::size_t k = 0; k < 4; ++k) {
        const Point2 sc = hs.apply(corners[k]);
        target[k] = {sc.x + rng.uniform(-bound, bound), sc.y + rng.uniform(-bound, bound)};
        pm[k] = {sc, target[k]};
      }
      if (!convex_quad(target)) continue;
      const Homography persp = estimate_homography_dlt(pm);
      const Homography h = persp.compose(hs);
      for (const Point2& c : corners)
        if (!finite(h.apply(c))) throw DegeneracyError("corner at infinity");
      return h;
    } catch (const DegeneracyError&) {
      continue;
    }
  }
  throw DegeneracyError("sample_homography: 100 consecutive degenerate samples");
}

std::vector<Point2> warp_points(const Homography& h, std::span<const Point2> pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const Point2& p : pts) out.push_back(h.apply(p));
  return out;
}

CorrespondenceSet ground_truth_correspondences(const Homography& h, std::span<const Point2> pos_a,
                                               std::span<const Point2> pos_b, double tol_px) {
  if (!(tol_px > 0.0)) throw ConfigError("correspondence tolerance must be positive");
  CorrespondenceSet out;
  out.tolerance_px = tol_px;
  if (pos_a.empty() || pos_b.empty()) return out;
  const std::vector<Point2> fwd = warp_points(h, pos_a);
  const std::vector<Point2> bwd = warp_points(h.inverse(), pos_b);

  auto closest = [](Point2 q, std::span<const Point2> cands) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    if (!finite(q)) return std::pair{best, bd};
    for (std::size_t j = 0; j < cands.size(); ++j) {
      const double d = sqdist(q, cands[j]);
      if (d < bd) {
        bd = d;
        best = static_cast<int>(j);
      }
    }
    return std::pair{best, bd};
  };

  const double tol2 = tol_px * tol_px;
  for (std::size_t i = 0; i < pos_a.size(); ++i) {
    const auto [j, d2] = closest(fwd[i], pos_b);
    if (j < 0 || d2 > tol2) continue;
    const auto [back, unused] = closest(bwd[static_cast<std::size_t>(j)], pos_a);
    (void)unused;
    if (back == static_cast<int>(i)) out.pairs.emplace_back(static_cast<int>(i), j);
  }
  return out;
}

Homography estimate_homography_dlt(std::span<const PointMatch> matches) {
  const std::size_t n = matches.size();
  if (n < 4) throw ArityError("DLT needs at least 4 correspondences, got " + std::to_string(n));
  std::vector<Point2> pa(n), pb(n);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = matches[i].a;
    pb[i] = matches[i].b;
  }
  const Mat3 ta = hartley(pa);
  const Mat3 tb = hartley(pb);

  Eigen::Matrix<double, Eigen::Dynamic, 9> a(static_cast<Eigen::Index>(2 * n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ta(0, 0) * pa[i].x + ta(0, 2), y = ta(1, 1) * pa[i].y + ta(1, 2);
    const double u = tb(0, 0) * pb[i].x + tb(0, 2), v = tb(1, 1) * pb[i].y + tb(1, 2);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    a.row(r + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || !(sv(7) > 1e-9 * sv(0)))
    throw DegeneracyError("DLT system is rank deficient (degenerate point configuration)");
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  const Mat3 h = tb.inverse() * hn * ta;
  return Homography(from_eigen(h));
}

RansacResult ransac_homography(std::span<const PointMatch> matches, const RansacConfig& cfg, Rng& rng) {
  const std::size_t n = matches.size();
  if (n < 4) throw ArityError("RANSAC needs at least 4 matches, got " + std::to_string(n));
  if (cfg.iterations < 1) throw ConfigError("RANSAC needs at least one iteration");
  const double tol2 = cfg.inlier_tol_px * cfg.inlier_tol_px;

  RansacResult best;
  double best_mean = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> mask(n);
  std::array<PointMatch, 4> sample{};
  for (int it = 0; it < cfg.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = static_cast<std::size_t>(rng.below(n));
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
      sample[k] = matches[idx[k]];
    }
    Homography h;
    try {
      h = estimate_homography_dlt(sample);
    } catch (const DegeneracyError&) {
      continue;
    }
    int count = 0;
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 p = h.apply(matches[i].a);
      const double d2 = finite(p) ? sqdist(p, matches[i].b) : std::numeric_limits<double>::infinity();
      mask[i] = d2 <= tol2 ? 1 : 0;
      if (mask[i]) {
        ++count;
        sum += std::sqrt(d2);
      }
    }
    const double mean = count ? sum / count : std::numeric_limits<double>::infinity();
    if (count > best.inlier_count || (count == best.inlier_count && count > 0 && mean < best_mean)) {
      best.inlier_count = count;
      best.h = h;
      best.inlier_mask = mask;
      best_mean = mean;
    }
  }
  if (best.inlier_count < 4) {
    best.ok = false;
    best.inlier_mask.assign(n, 0);
    return best;
  }
  std::vector<PointMatch> inliers;
  for (std::size_t i = 0; i < n; ++i)
    if (best.inlier_mask[i]) inliers.push_back(matches[i]);
  try {
    best.h = estimate_homography_dlt(inliers);
  } catch (const DegeneracyError&) {
    // keep the minimal-sample hypothesis
  }
  best.ok = true;
  return best;
}

double corner_error(const Homography& h_est, const Homography& h_gt, ImageSize size) {
  double total = 0;
  for (const Point2& c : image_corners(size)) {
    const Point2 a = h_est.apply(c), b = h_gt.apply(c);
    if (!finite(a) || !finite(b)) return std::numeric_limits<double>::infinity();
    total += std::sqrt(sqdist(a, b));
  }
  return total / 4.0;
}

}  // namespace asymloc
