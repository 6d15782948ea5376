#include <cmath>
#include <limits>

#include "asymloc/errors.hpp"
#include "asymloc/geometry.hpp"
#include "asymloc/matching.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace asymloc;

namespace {

const HomographySamplerConfig kSampler{0.12, 15.0, 0.1, 0.05};
const ImageSize kSize{160, 160};

std::vector<Point2> random_points(Rng& rng, int n, ImageSize s) {
  std::vector<Point2> p(static_cast<std::size_t>(n));
  for (auto& q : p) q = {rng.uniform(0, s.width - 1), rng.uniform(0, s.height - 1)};
  return p;
}

// Projective map written out by hand, independent of Homography::apply.
Point2 project(const std::array<double, 9>& m, Point2 p) {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("identity and translation examples") {
    const Homography id;
    CHECK(id.apply({3, 4}) == Point2{3, 4});
    const Homography t = Homography::translation(5, -2);
    CHECK(t.apply({1, 1}) == Point2{6, -1});
    CHECK(corner_error(id, id, kSize) == 0.0);
    CHECK(corner_error(t, id, kSize) == doctest::Approx(std::hypot(5.0, 2.0)).epsilon(1e-14));
  }

  TEST_CASE("canonicalization and singular matrices") {
    const Homography h({2, 0, 4, 0, 2, 6, 0, 0, 2});
    CHECK(h(2, 2) == 1.0);
    CHECK(h(0, 2) == 2.0);
    CHECK_THROWS_AS(Homography({1, 2, 3, 2, 4, 6, 0, 0, 1}), DegeneracyError);
    CHECK_THROWS_AS(Homography({1, 0, 0, 0, 1, 0, 0, 0, 0}), DegeneracyError);
  }

  TEST_CASE("inverse, compose and serialize round trips") {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
      const Homography h = sample_homography(rng, kSampler, kSize);
      const Homography round = h.compose(h.inverse());
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(std::abs(round(r, c) - (r == c ? 1.0 : 0.0)) < 1e-9);
      CHECK(Homography::parse(h.serialize()).m() == h.m());
      const Point2 p{rng.uniform(0, 159), rng.uniform(0, 159)};
      const Point2 q = h.apply(p), ref = project(h.m(), p);
      CHECK(std::abs(q.x - ref.x) < 1e-12);
      CHECK(std::abs(q.y - ref.y) < 1e-12);
    }
    CHECK_THROWS_AS(Homography::parse("1 2 3"), FormatError);
  }

  TEST_CASE("sampled homographies keep corners within the perturbation bound") {
    Rng rng(2);
    HomographySamplerConfig only_perturb{0.1, 0, 0, 0};
    for (int t = 0; t < 200; ++t) {
      const Homography h = sample_homography(rng, only_perturb, kSize);
      for (Point2 c : image_corners(kSize)) {
        const Point2 w = h.apply(c);
        CHECK(std::abs(w.x - c.x) <= 0.1 * 160 + 1e-9);
        CHECK(std::abs(w.y - c.y) <= 0.1 * 160 + 1e-9);
      }
    }
    CHECK_THROWS_AS(sample_homography(rng, {0.5, 0, 0, 0}, kSize), ConfigError);
  }

  TEST_CASE("ground truth correspondences are mutual, within tolerance and closest-first") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      const Homography h = sample_homography(rng, kSampler, kSize);
      const auto pa = random_points(rng, 60, kSize);
      auto pb = warp_points(h, pa);
      for (auto& p : pb) p = {p.x + rng.uniform(-2, 2), p.y + rng.uniform(-2, 2)};
      const auto extra = random_points(rng, 20, kSize);
      pb.insert(pb.end(), extra.begin(), extra.end());
      const CorrespondenceSet cs = ground_truth_correspondences(h, pa, pb, 3.0);
      const auto wa = warp_points(h, pa);
      std::vector<int> seen_a(pa.size(), 0), seen_b(pb.size(), 0);
      for (auto [i, j] : cs.pairs) {
        CHECK(++seen_a[static_cast<std::size_t>(i)] == 1);
        CHECK(++seen_b[static_cast<std::size_t>(j)] == 1);
        const double d = std::hypot(wa[i].x - pb[j].x, wa[i].y - pb[j].y);
        CHECK(d <= 3.0);
        for (std::size_t k = 0; k < pb.size(); ++k)
          CHECK(std::hypot(wa[i].x - pb[k].x, wa[i].y - pb[k].y) >= d);
      }
    }
  }

  TEST_CASE("identity warp pairs every point with itself") {
    Rng rng(4);
    auto p = random_points(rng, 30, kSize);
    const CorrespondenceSet cs = ground_truth_correspondences(Homography(), p, p, 0.5);
    REQUIRE(cs.pairs.size() == 30);
    for (auto [i, j] : cs.pairs) CHECK(i == j);
  }

  TEST_CASE("DLT recovers exact homographies") {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(derive_seed(seed, "dlt-test"));
      const Homography h = sample_homography(rng, kSampler, kSize);
      const auto pa = random_points(rng, 4 + static_cast<int>(rng.below(40)), kSize);
      std::vector<PointMatch> m;
      for (const auto& p : pa) m.push_back({p, project(h.m(), p)});
      worst = std::max(worst, corner_error(estimate_homography_dlt(m), h, kSize));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("DLT arity and degeneracy errors") {
    std::vector<PointMatch> three{{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}};
    CHECK_THROWS_AS(estimate_homography_dlt(three), ArityError);
    std::vector<PointMatch> collinear;
    for (int i = 0; i < 6; ++i) collinear.push_back({{double(i), double(i)}, {double(i), double(i)}});
    CHECK_THROWS_AS(estimate_homography_dlt(collinear), DegeneracyError);
    std::vector<PointMatch> same(5, PointMatch{{2, 2}, {3, 3}});
    CHECK_THROWS_AS(estimate_homography_dlt(same), DegeneracyError);
  }

  TEST_CASE("RANSAC with no outliers is exact and flags all inliers") {
    Rng rng(6);
    const Homography h = sample_homography(rng, kSampler, kSize);
    std::vector<PointMatch> m;
    for (const auto& p : random_points(rng, 50, kSize)) m.push_back({p, project(h.m(), p)});
    const RansacResult r = ransac_homography(m, RansacConfig{}, rng);
    REQUIRE(r.ok);
    CHECK(r.inlier_count == 50);
    CHECK(corner_error(r.h, h, kSize) < 1e-6);
  }

  TEST_CASE("RANSAC tolerates 40 percent outliers") {
    int good = 0;
    for (std::uint64_t t = 0; t < 40; ++t) {
      Rng rng(derive_seed(t, "ransac-test"));
      const Homography h = sample_homography(rng, kSampler, kSize);
      std::vector<PointMatch> m;
      for (int i = 0; i < 100; ++i) {
        const Point2 p{rng.uniform(0, 159), rng.uniform(0, 159)};
        Point2 q = project(h.m(), p);
        if (i < 40) q = {rng.uniform(0, 159), rng.uniform(0, 159)};
        else q = {q.x + 0.5 * rng.normal(), q.y + 0.5 * rng.normal()};
        m.push_back({p, q});
      }
      const RansacResult r = ransac_homography(m, RansacConfig{}, rng);
      if (r.ok && corner_error(r.h, h, kSize) < 1.0) ++good;
    }
    CHECK(good >= 36);
  }

  TEST_CASE("RANSAC errors and failure reporting") {
    Rng rng(7);
    std::vector<PointMatch> three(3);
    CHECK_THROWS_AS(ransac_homography(three, RansacConfig{}, rng), ArityError);
    std::vector<PointMatch> same(10, PointMatch{{1, 1}, {1, 1}});
    CHECK_FALSE(ransac_homography(same, RansacConfig{}, rng).ok);
    CHECK_THROWS_AS(ransac_homography(same, RansacConfig{0, 3.0}, rng), ConfigError);
  }

  TEST_CASE("corner error is infinite for a warp that sends a corner to infinity") {
    const Homography bad({1, 0, 0, 0, 1, 0, -1.0 / 159.0, 0, 1});
    CHECK(std::isinf(corner_error(bad, Homography(), kSize)));
  }
}

TEST_SUITE("matching") {
  KeypointSet random_set(Rng & rng, int n, int d, bool quantize) {
    KeypointSet k;
    k.width = k.height = 64;
    k.dim = d;
    for (int i = 0; i < n; ++i) {
      k.positions.push_back({double(i), double(2 * i)});
      k.confidences.push_back(0.5f);
      for (int j = 0; j < d; ++j) {
        double v = rng.uniform(-1, 1);
        if (quantize) v = std::round(v * 2) / 2;
        k.descriptors.push_back(static_cast<float>(v));
      }
    }
    return k;
  }

  // Plain restatement: sim via double accumulation, best-by-row then best-by-col, lowest index on ties.
  std::vector<Match> oracle(const KeypointSet& a, const KeypointSet& b, double min_sim) {
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    auto sim = [&](int i, int j) {
      double s = 0;
      for (int k = 0; k < a.dim; ++k) s += double(a.descriptor(i)[k]) * double(b.descriptor(j)[k]);
      return s;
    };
    std::vector<Match> out;
    for (int i = 0; i < na; ++i) {
      int bj = -1;
      for (int j = 0; j < nb; ++j)
        if (bj < 0 || sim(i, j) > sim(i, bj)) bj = j;
      if (bj < 0) continue;
      int bi = -1;
      for (int k = 0; k < na; ++k)
        if (bi < 0 || sim(k, bj) > sim(bi, bj)) bi = k;
      if (bi == i && sim(i, bj) >= min_sim) out.push_back({i, bj, sim(i, bj)});
    }
    std::stable_sort(out.begin(), out.end(), [](const Match& x, const Match& y) {
      return x.similarity != y.similarity ? x.similarity > y.similarity : x.a < y.a;
    });
    return out;
  }

  TEST_CASE("mutual nearest neighbours agree with a plain oracle") {
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
      const int d = 1 + static_cast<int>(rng.below(16));
      const KeypointSet a = random_set(rng, 1 + static_cast<int>(rng.below(64)), d, t % 3 == 0);
      const KeypointSet b = random_set(rng, 1 + static_cast<int>(rng.below(64)), d, t % 3 == 0);
      const double min_sim = t % 4 == 0 ? 0.2 : -1e9;
      const MatchSet got = mutual_nearest_neighbors(a, b, min_sim);
      const auto want = oracle(a, b, min_sim);
      REQUIRE(got.pairs.size() == want.size());
      for (std::size_t k = 0; k < want.size(); ++k) {
        CHECK(got.pairs[k].a == want[k].a);
        CHECK(got.pairs[k].b == want[k].b);
        CHECK(got.pairs[k].similarity == doctest::Approx(want[k].similarity).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("unit-normalized sets match onto themselves") {
    Rng rng(9);
    const KeypointSet a = random_set(rng, 20, 8, false);
    KeypointSet u = a;
    for (std::size_t i = 0; i < u.size(); ++i) {
      double s = 0;
      for (int k = 0; k < u.dim; ++k) s += double(u.descriptors[i * 8 + k]) * u.descriptors[i * 8 + k];
      for (int k = 0; k < u.dim; ++k) u.descriptors[i * 8 + k] = static_cast<float>(u.descriptors[i * 8 + k] / std::sqrt(s));
    }
    CHECK(mutual_nearest_neighbors(u, u).pairs.size() == u.size());
  }

  TEST_CASE("empty sides and dimension mismatch") {
    Rng rng(10);
    KeypointSet a = random_set(rng, 5, 4, false), e;
    e.dim = 4;
    CHECK(mutual_nearest_neighbors(a, e).pairs.empty());
    CHECK(mutual_nearest_neighbors(e, a).pairs.empty());
    CHECK_THROWS_AS(mutual_nearest_neighbors(a, random_set(rng, 5, 3, false)), ShapeError);
  }

  TEST_CASE("match records round trip") {
    Rng rng(11);
    const KeypointSet a = random_set(rng, 30, 8, false), b = random_set(rng, 25, 8, false);
    const MatchSet m = mutual_nearest_neighbors(a, b, -1e9);
    const MatchSet back = parse_matches(format_matches(m, a, b));
    REQUIRE(back.pairs.size() == m.pairs.size());
    for (std::size_t k = 0; k < m.pairs.size(); ++k) {
      CHECK(back.pairs[k].a == m.pairs[k].a);
      CHECK(back.pairs[k].b == m.pairs[k].b);
      CHECK(back.pairs[k].similarity == doctest::Approx(m.pairs[k].similarity).epsilon(1e-6));
    }
    CHECK_THROWS_AS(parse_matches("1 2\n"), FormatError);
  }
}
