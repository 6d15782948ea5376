#pragma once

#include <string>
#include <vector>

#include "asymloc/features.hpp"

namespace asymloc {

struct Match {
  int a = 0;
  int b = 0;
  double similarity = 0.0;
  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchSet {
  std::vector<Match> pairs;
  friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

/// Pairs that are each other's best match by raw descriptor dot product,
/// ties to the lower index, with similarity >= min_similarity. Sorted by
/// descending similarity, then by index on side a.
MatchSet mutual_nearest_neighbors(const KeypointSet& a, const KeypointSet& b, double min_similarity = 0.0);

/// Same contract, written as a plain double loop. For tests.
MatchSet mnn_oracle(const KeypointSet& a, const KeypointSet& b, double min_similarity = 0.0);

/// One record per line: query index, map index, similarity, query x y, map x y.
std::string format_matches(const MatchSet& m, const KeypointSet& query, const KeypointSet& map);
MatchSet parse_matches(const std::string& text);

std::vector<PointMatch> to_point_matches(const MatchSet& m, const KeypointSet& a, const KeypointSet& b);

}  // namespace asymloc
