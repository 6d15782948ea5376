#pragma once

// Straight-line double-precision restatement of the asymmetric objective,
// written over plain nested vectors. Shares no code with the library.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace refloss {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

struct Feats {
  Vec w;  // confidences
  Mat d;  // descriptors, one row per keypoint
};

struct Config {
  double tau = 0.1, tau_d = 0.65, tau_s = 0.5, tau_t = 0.5, lambda = 2.0;
  bool match = true, kd = true;
};

struct Result {
  double l_match = 0, kd_st = 0, kd_ts = 0, total = 0;
};

inline constexpr double kFloor = 1e-12;

inline Mat sim(const Mat& a, const Mat& b, double tau) {
  Mat s(a.size(), Vec(b.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a[i].size(); ++k) acc += a[i][k] * b[j][k];
      s[i][j] = acc / tau;
    }
  return s;
}

inline Mat softmax_r(const Mat& s) {
  Mat p = s;
  for (auto& row : p) {
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (double& v : row) v /= z;
  }
  return p;
}

inline Mat transpose(const Mat& s) {
  Mat t(s.empty() ? 0 : s[0].size(), Vec(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[i].size(); ++j) t[j][i] = s[i][j];
  return t;
}

inline Mat softmax_c(const Mat& s) { return transpose(softmax_r(transpose(s))); }

inline Mat mutual(const Mat& s, const Vec& wr, const Vec& wc) {
  const Mat r = softmax_r(s), c = softmax_c(s);
  Mat p = s;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[i].size(); ++j) p[i][j] = wr[i] * wc[j] * r[i][j] * c[i][j];
  return p;
}

inline Mat weighted(const Mat& s, const Vec& wr, double tr, const Vec& wc, double tc) {
  Mat o = s;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[i].size(); ++j) o[i][j] = (wr[i] / tr) * s[i][j] * (wc[j] / tc);
  return o;
}

inline double kl_rows(const Mat& p, const Mat& q) {
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      if (p[i][j] == 0) continue;
      acc += p[i][j] * (std::log(std::max(p[i][j], kFloor)) - std::log(std::max(q[i][j], kFloor)));
    }
  return acc;
}

inline double kd(const Mat& ref, const Mat& stu) {
  return kl_rows(softmax_r(ref), softmax_r(stu)) + kl_rows(softmax_c(ref), softmax_c(stu));
}

inline Result total(const Feats& ta, const Feats& tb, const Feats& sa, const Feats& sb,
                    const std::vector<std::pair<int, int>>& corr, const Config& c) {
  Result r;
  if (c.match) {
    const Mat p_ts = mutual(sim(ta.d, sb.d, c.tau), ta.w, sb.w);
    const Mat p_st = mutual(sim(sb.d, ta.d, c.tau), sb.w, ta.w);
    for (auto [i, j] : corr) {
      if (ta.w[i] > c.tau_d) r.l_match -= std::log(p_ts[i][j] + kFloor);
      if (tb.w[j] > c.tau_d) r.l_match -= std::log(p_st[j][i] + kFloor);
    }
  }
  if (c.kd && c.lambda > 0) {
    r.kd_st = kd(weighted(sim(tb.d, ta.d, c.tau), tb.w, c.tau_t, ta.w, c.tau_t),
                 weighted(sim(sb.d, ta.d, c.tau), sb.w, c.tau_s, ta.w, c.tau_t));
    r.kd_ts = kd(weighted(sim(ta.d, tb.d, c.tau), ta.w, c.tau_t, tb.w, c.tau_t),
                 weighted(sim(sa.d, tb.d, c.tau), sa.w, c.tau_s, tb.w, c.tau_t));
  }
  r.total = r.l_match + c.lambda * (r.kd_st + r.kd_ts) * (c.kd ? 1.0 : 0.0);
  return r;
}

}  // namespace refloss
