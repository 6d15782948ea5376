#include "asymloc/objectives.hpp"

#include <cmath>
#include <cstdio>

#include "asymloc/errors.hpp"
#include "asymloc/ops.hpp"

namespace asymloc {

const char* to_string(LossTerms t) {
  switch (t) {
    case LossTerms::both: return "both";
    case LossTerms::match_only: return "match_only";
    case LossTerms::kd_only: return "kd_only";
  }
  return "both";
}

LossTerms parse_loss_terms(const std::string& s) {
  if (s == "both") return LossTerms::both;
  if (s == "match_only" || s == "match-only") return LossTerms::match_only;
  if (s == "kd_only" || s == "kd-only") return LossTerms::kd_only;
  throw ConfigError("unknown loss terms '" + s + "' (expected both, match_only or kd_only)");
}

void LossConfig::validate() const {
  if (!(tau_sim > 0) || !(tau_s > 0) || !(tau_t > 0)) throw ConfigError("loss temperatures must be positive");
  if (!(tau_d > 0 && tau_d < 1)) throw ConfigError("tau_d must lie in (0, 1)");
  if (!(lambda_kd >= 0)) throw ConfigError("lambda_kd must be non-negative");
  if (!(detector_weight >= 0)) throw ConfigError("detector_weight must be non-negative");
}

std::string LossBreakdown::log_line(long long step) const {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "step=%lld l_match=%.9g l_kd_st=%.9g l_kd_ts=%.9g l_det=%.9g total=%.9g pairs_ts=%d pairs_st=%d",
                step, l_match, l_kd_st, l_kd_ts, l_det, total, pairs_ts, pairs_st);
  return buf;
}

namespace {

template <typename T>
T scalar_of(const Graph<T>& g, Var v) {
  return g.value(v)[0];
}

template <typename T>
std::vector<T> values_of(const Graph<T>& g, Var v) {
  const auto d = g.value(v).data();
  return {d.begin(), d.end()};
}

template <typename T>
void require_rows(const Graph<T>& g, Var v, int rows, const char* what) {
  const Tensor<T>& t = g.value(v);
  if (t.rank() != 2 || t.dim(0) != rows) throw ShapeError(std::string(what) + ": unexpected shape " + dims_to_string(t.dims()));
}

}  // namespace

template <typename T>
Var similarity_matrix(Graph<T>& g, Var desc_a, Var desc_b, T tau) {
  if (!(tau > 0)) throw ConfigError("similarity temperature must be positive");
  const Tensor<T>& a = g.value(desc_a);
  const Tensor<T>& b = g.value(desc_b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("similarity_matrix: descriptor shapes " + dims_to_string(a.dims()) + " and " +
                     dims_to_string(b.dims()) + " are incompatible");
  return ops::divide(g, ops::matmul(g, desc_a, ops::transpose(g, desc_b)), tau);
}

template <typename T>
Var mutual_matching_matrix(Graph<T>& g, Var s, Var w_row, Var w_col) {
  const Tensor<T>& sv = g.value(s);
  if (sv.rank() != 2) throw ShapeError("mutual_matching_matrix: S must be 2-D");
  const Var both = ops::mul(g, ops::softmax_rows(g, s), ops::softmax_cols(g, s));
  return ops::scale_cols(g, ops::scale_rows(g, both, w_row), w_col);
}

template <typename T>
LossNodes geometric_matching_loss(Graph<T>& g, Var p_ts, Var p_st, const CorrespondenceSet& corr,
                                  const std::vector<T>& gate_a, const std::vector<T>& gate_b, T tau_d) {
  const Tensor<T>& pts = g.value(p_ts);
  const Tensor<T>& pst = g.value(p_st);
  if (pts.rank() != 2 || pst.rank() != 2 || pts.dim(0) != pst.dim(1) || pts.dim(1) != pst.dim(0))
    throw ShapeError("geometric_matching_loss: P_ts and P_st must be transposed shapes");
  if (gate_a.size() != static_cast<std::size_t>(pts.dim(0)) || gate_b.size() != static_cast<std::size_t>(pts.dim(1)))
    throw ShapeError("geometric_matching_loss: gate lengths do not match P");
  std::vector<std::pair<int, int>> ts, st;
  for (auto [i, j] : corr.pairs) {
    if (i < 0 || i >= pts.dim(0) || j < 0 || j >= pts.dim(1))
      throw ShapeError("geometric_matching_loss: correspondence index out of range");
    if (gate_a[static_cast<std::size_t>(i)] > tau_d) ts.emplace_back(i, j);
    if (gate_b[static_cast<std::size_t>(j)] > tau_d) st.emplace_back(j, i);
  }
  LossNodes out;
  out.parts.pairs_ts = static_cast<int>(ts.size());
  out.parts.pairs_st = static_cast<int>(st.size());
  const T eps = static_cast<T>(kLogFloor);
  out.total = ops::add(g, ops::neg_log_sum_at(g, p_ts, ts, eps), ops::neg_log_sum_at(g, p_st, st, eps));
  out.parts.l_match = static_cast<double>(scalar_of(g, out.total));
  out.parts.total = out.parts.l_match;
  return out;
}

template <typename T>
Var detector_weighted_similarity(Graph<T>& g, Var s, Var w_row, T tau_row, Var w_col, T tau_col) {
  if (!(tau_row > 0) || !(tau_col > 0)) throw ConfigError("detector temperatures must be positive");
  const Var r = ops::scale_rows(g, s, ops::divide(g, w_row, tau_row));
  return ops::scale_cols(g, r, ops::divide(g, w_col, tau_col));
}

template <typename T>
Var kd_loss(Graph<T>& g, Var s_ref, Var s_student) {
  if (!g.value(s_ref).same_shape(g.value(s_student))) throw ShapeError("kd_loss: shape mismatch");
  const Var ref = ops::detach(g, s_ref);
  const T floor = static_cast<T>(kLogFloor);
  const Var rows = ops::kl_divergence(g, ops::softmax_rows(g, ref), ops::softmax_rows(g, s_student), floor);
  const Var cols = ops::kl_divergence(g, ops::softmax_cols(g, ref), ops::softmax_cols(g, s_student), floor);
  const Var sum = ops::add(g, rows, cols);
  if (g.value(sum)[0] >= T(0)) return sum;
  // Rounding can leave a near-zero KL sum a few ulps negative; report the
  // bound and pass the gradient through unchanged.
  return g.record(Tensor<T>::scalar(T(0)), {sum.id}, [sum](Graph<T>& gr, int self) {
    gr.grad_slot(sum.id)[0] += gr.grad_slot(self)[0];
  });
}

template <typename T>
LossNodes asymloc_total_loss(Graph<T>& g, FeatureVars teacher_a, FeatureVars teacher_b, FeatureVars student_a,
                             FeatureVars student_b, const CorrespondenceSet& corr, const LossConfig& cfg) {
  cfg.validate();
  const int na = g.value(teacher_a.descriptor).dim(0);
  const int nb = g.value(teacher_b.descriptor).dim(0);
  const int d = g.value(teacher_a.descriptor).dim(1);
  for (Var v : {teacher_b.descriptor, student_a.descriptor, student_b.descriptor})
    if (g.value(v).rank() != 2 || g.value(v).dim(1) != d)
      throw ShapeError("asymloc_total_loss: descriptor dimensions differ between feature sets");
  require_rows(g, student_a.descriptor, na, "student A descriptors");
  require_rows(g, student_b.descriptor, nb, "student B descriptors");
  require_rows(g, teacher_a.confidence, na, "teacher A confidences");
  require_rows(g, teacher_b.confidence, nb, "teacher B confidences");
  require_rows(g, student_a.confidence, na, "student A confidences");
  require_rows(g, student_b.confidence, nb, "student B confidences");

  const Var td_a = ops::detach(g, teacher_a.descriptor), tw_a = ops::detach(g, teacher_a.confidence);
  const Var td_b = ops::detach(g, teacher_b.descriptor), tw_b = ops::detach(g, teacher_b.confidence);
  const T tau = static_cast<T>(cfg.tau_sim);
  const T tau_s = static_cast<T>(cfg.tau_s), tau_t = static_cast<T>(cfg.tau_t);

  LossNodes out;
  Var total;
  auto accumulate = [&](Var term) { total = total.valid() ? ops::add(g, total, term) : term; };

  if (cfg.terms != LossTerms::kd_only) {
    const Var p_ts = mutual_matching_matrix(g, similarity_matrix(g, td_a, student_b.descriptor, tau), tw_a,
                                            student_b.confidence);
    const Var p_st = mutual_matching_matrix(g, similarity_matrix(g, student_b.descriptor, td_a, tau),
                                            student_b.confidence, tw_a);
    LossNodes m = geometric_matching_loss(g, p_ts, p_st, corr, values_of(g, tw_a), values_of(g, tw_b),
                                          static_cast<T>(cfg.tau_d));
    out.parts = m.parts;
    accumulate(m.total);
  }
  if (cfg.terms != LossTerms::match_only && cfg.lambda_kd > 0) {
    const Var ref_st = detector_weighted_similarity(g, similarity_matrix(g, td_b, td_a, tau), tw_b, tau_t, tw_a, tau_t);
    const Var stu_st = detector_weighted_similarity(g, similarity_matrix(g, student_b.descriptor, td_a, tau),
                                                    student_b.confidence, tau_s, tw_a, tau_t);
    const Var kd_st = kd_loss(g, ref_st, stu_st);
    const Var ref_ts = detector_weighted_similarity(g, similarity_matrix(g, td_a, td_b, tau), tw_a, tau_t, tw_b, tau_t);
    const Var stu_ts = detector_weighted_similarity(g, similarity_matrix(g, student_a.descriptor, td_b, tau),
                                                    student_a.confidence, tau_s, tw_b, tau_t);
    const Var kd_ts = kd_loss(g, ref_ts, stu_ts);
    out.parts.l_kd_st = static_cast<double>(scalar_of(g, kd_st));
    out.parts.l_kd_ts = static_cast<double>(scalar_of(g, kd_ts));
    accumulate(ops::scale(g, ops::add(g, kd_st, kd_ts), static_cast<T>(cfg.lambda_kd)));
  }
  if (!total.valid()) total = g.constant(Tensor<T>::scalar(T(0)));
  out.total = total;
  out.parts.total = static_cast<double>(scalar_of(g, total));
  return out;
}

template <typename T>
LossNodes symmetric_loss(Graph<T>& g, FeatureVars a, FeatureVars b, const CorrespondenceSet& corr,
                         const LossConfig& cfg) {
  cfg.validate();
  const int na = g.value(a.descriptor).dim(0), nb = g.value(b.descriptor).dim(0);
  require_rows(g, a.confidence, na, "confidences A");
  require_rows(g, b.confidence, nb, "confidences B");
  const T tau = static_cast<T>(cfg.tau_sim);
  const Var s_ab = similarity_matrix(g, a.descriptor, b.descriptor, tau);
  const Var p_ab = mutual_matching_matrix(g, s_ab, a.confidence, b.confidence);
  const Var p_ba = mutual_matching_matrix(g, similarity_matrix(g, b.descriptor, a.descriptor, tau), b.confidence,
                                          a.confidence);
  LossNodes out = geometric_matching_loss(g, p_ab, p_ba, corr, values_of(g, a.confidence), values_of(g, b.confidence),
                                          static_cast<T>(cfg.tau_d));
  if (cfg.detector_weight > 0) {
    const Tensor<T>& sv = g.value(s_ab);
    std::vector<int> partner_a(static_cast<std::size_t>(na), -1), partner_b(static_cast<std::size_t>(nb), -1);
    for (auto [i, j] : corr.pairs) {
      partner_a[static_cast<std::size_t>(i)] = j;
      partner_b[static_cast<std::size_t>(j)] = i;
    }
    // Soft target: softmax probability of the true partner (0 without one).
    Tensor<T> target_a({na, 1}, T(0)), target_b({nb, 1}, T(0));
    for (int i = 0; i < na; ++i) {
      const int j = partner_a[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      T mx = sv.at(i, 0);
      for (int k = 1; k < nb; ++k) mx = std::max(mx, sv.at(i, k));
      T z = 0;
      for (int k = 0; k < nb; ++k) z += std::exp(sv.at(i, k) - mx);
      target_a[static_cast<std::size_t>(i)] = std::exp(sv.at(i, j) - mx) / z;
    }
    for (int j = 0; j < nb; ++j) {
      const int i = partner_b[static_cast<std::size_t>(j)];
      if (i < 0) continue;
      T mx = sv.at(0, j);
      for (int k = 1; k < na; ++k) mx = std::max(mx, sv.at(k, j));
      T z = 0;
      for (int k = 0; k < na; ++k) z += std::exp(sv.at(k, j) - mx);
      target_b[static_cast<std::size_t>(j)] = std::exp(sv.at(i, j) - mx) / z;
    }
    const T floor = static_cast<T>(kLogFloor);
    const Var det = ops::add(g, ops::soft_bce_mean(g, a.confidence, target_a, floor),
                             ops::soft_bce_mean(g, b.confidence, target_b, floor));
    out.parts.l_det = static_cast<double>(scalar_of(g, det));
    out.total = ops::add(g, out.total, ops::scale(g, det, static_cast<T>(cfg.detector_weight)));
    out.parts.total = static_cast<double>(scalar_of(g, out.total));
  }
  return out;
}

template <typename T>
Var naive_distill_loss(Graph<T>& g, Var student_desc_map, Var teacher_desc_map, Var student_det_logits,
                       const Tensor<T>& teacher_det_prob) {
  const Tensor<T>& sd = g.value(student_desc_map);
  const Tensor<T>& td = g.value(teacher_desc_map);
  const Tensor<T>& sl = g.value(student_det_logits);
  if (sd.rank() != 3 || !sd.same_shape(td)) throw ShapeError("naive_distill_loss: descriptor maps differ in shape");
  if (sl.rank() != 3 || sl.dim(1) != sd.dim(1) || sl.dim(2) != sd.dim(2) || !sl.same_shape(teacher_det_prob))
    throw ShapeError("naive_distill_loss: detector maps differ in spatial shape");
  const T eps = T(1e-12);
  const Var s_rows = ops::l2_normalize_rows(g, ops::chw_to_rows(g, student_desc_map), eps);
  const Var t_rows = ops::l2_normalize_rows(g, ops::chw_to_rows(g, ops::detach(g, teacher_desc_map)), eps);
  const Var mean_cos = ops::mean(g, ops::rowwise_dot(g, s_rows, t_rows));
  const Var cos_term = ops::add(g, g.constant(Tensor<T>::scalar(T(1))), ops::scale(g, mean_cos, T(-1)));
  const Var bce = ops::soft_bce_mean(g, ops::sigmoid(g, student_det_logits), teacher_det_prob, static_cast<T>(kLogFloor));
  return ops::add(g, cos_term, bce);
}

#define ASYMLOC_INSTANTIATE_OBJECTIVES(T)                                                                     \
  template Var similarity_matrix<T>(Graph<T>&, Var, Var, T);                                                  \
  template Var mutual_matching_matrix<T>(Graph<T>&, Var, Var, Var);                                           \
  template LossNodes geometric_matching_loss<T>(Graph<T>&, Var, Var, const CorrespondenceSet&,                \
                                                const std::vector<T>&, const std::vector<T>&, T);             \
  template Var detector_weighted_similarity<T>(Graph<T>&, Var, Var, T, Var, T);                               \
  template Var kd_loss<T>(Graph<T>&, Var, Var);                                                               \
  template LossNodes asymloc_total_loss<T>(Graph<T>&, FeatureVars, FeatureVars, FeatureVars, FeatureVars,     \
                                           const CorrespondenceSet&, const LossConfig&);                      \
  template LossNodes symmetric_loss<T>(Graph<T>&, FeatureVars, FeatureVars, const CorrespondenceSet&,         \
                                       const LossConfig&);                                                    \
  template Var naive_distill_loss<T>(Graph<T>&, Var, Var, Var, const Tensor<T>&);

ASYMLOC_INSTANTIATE_OBJECTIVES(float)
ASYMLOC_INSTANTIATE_OBJECTIVES(double)

}  // namespace asymloc
