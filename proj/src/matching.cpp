#include "asymloc/matching.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "asymloc/errors.hpp"
#include "asymloc/kernels.hpp"

namespace asymloc {

namespace {

void sort_matches(std::vector<Match>& v) {
  std::sort(v.begin(), v.end(), [](const Match& x, const Match& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    return x.a < y.a;
  });
}

}  // namespace

MatchSet mutual_nearest_neighbors(const KeypointSet& a, const KeypointSet& b, double min_similarity) {
  MatchSet out;
  const std::size_t na = a.size(), nb = b.size();
  if (na == 0 || nb == 0) return out;
  if (a.dim != b.dim) throw ShapeError("descriptor dimensions differ: " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  const auto dot = kernels::active().dot_acc64;
  std::vector<double> sim(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) sim[i * nb + j] = dot(a.descriptor(i), b.descriptor(j), a.dim);

  std::vector<std::size_t> best_b(na, 0), best_a(nb, 0);
  for (std::size_t i = 0; i < na; ++i) {
    const double* row = &sim[i * nb];
    best_b[i] = static_cast<std::size_t>(std::max_element(row, row + nb) - row);
  }
  for (std::size_t j = 0; j < nb; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < na; ++i)
      if (sim[i * nb + j] > sim[best * nb + j]) best = i;
    best_a[j] = best;
  }
  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t j = best_b[i];
    const double s = sim[i * nb + j];
    if (best_a[j] == i && s >= min_similarity) out.pairs.push_back({static_cast<int>(i), static_cast<int>(j), s});
  }
  sort_matches(out.pairs);
  return out;
}

MatchSet mnn_oracle(const KeypointSet& a, const KeypointSet& b, double min_similarity) {
  MatchSet out;
  auto s = [&](std::size_t i, std::size_t j) {
    double acc = 0;
    for (int k = 0; k < a.dim; ++k)
      acc += static_cast<double>(a.descriptors[i * a.dim + k]) * static_cast<double>(b.descriptors[j * b.dim + k]);
    return acc;
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t jbest = 0;
    double vbest = -1e300;
    for (std::size_t j = 0; j < b.size(); ++j)
      if (s(i, j) > vbest) {
        vbest = s(i, j);
        jbest = j;
      }
    if (b.size() == 0) break;
    std::size_t ibest = 0;
    double ubest = -1e300;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (s(k, jbest) > ubest) {
        ubest = s(k, jbest);
        ibest = k;
      }
    if (ibest == i && vbest >= min_similarity) out.pairs.push_back({static_cast<int>(i), static_cast<int>(jbest), vbest});
  }
  sort_matches(out.pairs);
  return out;
}

std::string format_matches(const MatchSet& m, const KeypointSet& query, const KeypointSet& map) {
  std::string out;
  char buf[256];
  for (const Match& p : m.pairs) {
    const Point2 q = query.positions.at(static_cast<std::size_t>(p.a));
    const Point2 r = map.positions.at(static_cast<std::size_t>(p.b));
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.17g\t%.9g\t%.9g\t%.9g\t%.9g\n", p.a, p.b, p.similarity, q.x, q.y, r.x, r.y);
    out += buf;
  }
  return out;
}

MatchSet parse_matches(const std::string& text) {
  MatchSet m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Match p;
    double qx, qy, rx, ry;
    if (std::sscanf(line.c_str(), "%d\t%d\t%lf\t%lf\t%lf\t%lf\t%lf", &p.a, &p.b, &p.similarity, &qx, &qy, &rx, &ry) != 7)
      throw FormatError("malformed match record: " + line);
    m.pairs.push_back(p);
  }
  return m;
}

std::vector<PointMatch> to_point_matches(const MatchSet& m, const KeypointSet& a, const KeypointSet& b) {
  std::vector<PointMatch> out;
  out.reserve(m.pairs.size());
  for (const Match& p : m.pairs)
    out.push_back({a.positions.at(static_cast<std::size_t>(p.a)), b.positions.at(static_cast<std::size_t>(p.b))});
  return out;
}

}  // namespace asymloc
