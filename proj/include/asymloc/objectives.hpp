#pragma once

// Matching and distillation losses over keypoint feature nodes.
//
// Shapes: descriptors are N x D graph nodes with unit rows, confidences are
// N x 1 nodes in (0, 1). Similarity and matching matrices are N_row x N_col.

#include <string>
#include <utility>
#include <vector>

#include "asymloc/features.hpp"
#include "asymloc/geometry.hpp"
#include "asymloc/graph.hpp"

namespace asymloc {

enum class LossTerms { both, match_only, kd_only };

const char* to_string(LossTerms t);
LossTerms parse_loss_terms(const std::string& s);

struct LossConfig {
  double tau_sim = 0.1;
  double tau_d = 0.65;
  double tau_s = 0.5;
  double tau_t = 0.5;
  double lambda_kd = 2.0;
  LossTerms terms = LossTerms::both;
  /// Weight of the matchability term in the symmetric objective; 0 disables it.
  double detector_weight = 1.0;

  void validate() const;
};

inline constexpr double kLogFloor = 1e-12;

struct LossBreakdown {
  double l_match = 0.0;
  double l_kd_st = 0.0;
  double l_kd_ts = 0.0;
  double l_det = 0.0;  ///< symmetric objective only
  double total = 0.0;
  int pairs_ts = 0;
  int pairs_st = 0;

  std::string log_line(long long step) const;
};

/// The whole loss as a graph node, plus its parts for logging.
struct LossNodes {
  Var total;
  LossBreakdown parts;
};

/// S_ij = <a_i, b_j> / tau.
template <typename T>
Var similarity_matrix(Graph<T>& g, Var desc_a, Var desc_b, T tau);

/// P_ij = w_row_i * w_col_j * softmax_rows(S)_ij * softmax_cols(S)_ij.
template <typename T>
Var mutual_matching_matrix(Graph<T>& g, Var s, Var w_row, Var w_col);

/// -sum log(P_ts[i][j] + eps) over correspondences (i, j) with
/// gate_a[i] > tau_d, plus -sum log(P_st[j][i] + eps) over those with
/// gate_b[j] > tau_d. Gates are plain values and carry no gradient.
template <typename T>
LossNodes geometric_matching_loss(Graph<T>& g, Var p_ts, Var p_st, const CorrespondenceSet& corr,
                                  const std::vector<T>& gate_a, const std::vector<T>& gate_b, T tau_d);

/// S_bar_ij = (w_row_i / tau_row) * S_ij * (w_col_j / tau_col).
template <typename T>
Var detector_weighted_similarity(Graph<T>& g, Var s, Var w_row, T tau_row, Var w_col, T tau_col);

/// Row-wise plus column-wise KL(softmax(ref) || softmax(student)); the
/// reference side receives no gradient.
template <typename T>
Var kd_loss(Graph<T>& g, Var s_ref, Var s_student);

/// Features of one image as seen by one network.
struct FeatureVars {
  Var confidence;  ///< N x 1
  Var descriptor;  ///< N x D
};

template <typename T>
FeatureVars feature_vars(const KeypointNodes<T>& k) {
  return {k.confidence, k.descriptor};
}

/// Teacher features are detached on entry. Student rows must be read at the
/// teacher's keypoints on the same image so distributions compare row by row;
/// corr indexes teacher-A keypoints against teacher/student-B keypoints.
template <typename T>
LossNodes asymloc_total_loss(Graph<T>& g, FeatureVars teacher_a, FeatureVars teacher_b, FeatureVars student_a,
                             FeatureVars student_b, const CorrespondenceSet& corr, const LossConfig& cfg);

/// One network on both images, gated by its own (detached) confidences.
/// Adds a matchability term: each keypoint's confidence is pulled towards 1
/// when its nearest neighbour in the other image is its true partner and
/// towards 0 otherwise.
template <typename T>
LossNodes symmetric_loss(Graph<T>& g, FeatureVars a, FeatureVars b, const CorrespondenceSet& corr,
                         const LossConfig& cfg);

/// Dense baseline: mean(1 - cos) between descriptor maps plus mean SoftBCE
/// of the student detector against the teacher probability map.
template <typename T>
Var naive_distill_loss(Graph<T>& g, Var student_desc_map, Var teacher_desc_map, Var student_det_logits,
                       const Tensor<T>& teacher_det_prob);

}  // namespace asymloc
