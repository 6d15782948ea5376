#include "asymloc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

#include "asymloc/errors.hpp"
#include "asymloc/io.hpp"

namespace asymloc {

KeypointSet Extractor::operator()(const Image& img) const {
  if (!model) throw ContractError("extractor '" + name + "' has no model");
  return extract_features(*model, img, n_keypoints, nms_radius);
}

double EvalResult::hea_at(double e) const {
  for (std::size_t i = 0; i < eps.size(); ++i)
    if (eps[i] == e) return hea[i];
  throw ContractError("HEA not evaluated at eps " + format_number(e));
}

std::vector<TrainingPair> make_eval_pairs(const DataConfig& cfg, std::uint64_t seed, int count) {
  if (count < 1) throw ArityError("evaluation needs at least one pair");
  const PairSource source(cfg, seed);
  std::vector<TrainingPair> pairs(static_cast<std::size_t>(count));
  parallel_for(count, [&](int i) { pairs[static_cast<std::size_t>(i)] = source.pair("eval", static_cast<std::uint64_t>(i)); });
  return pairs;
}

PrecisionRecall match_precision_recall(const MatchSet& matches, const CorrespondenceSet& gt,
                                       std::span<const Point2> pos_a, std::span<const Point2> pos_b,
                                       const Homography& h_ab, double tol_px) {
  if (!(tol_px > 0)) throw ContractError("tolerance must be positive");
  PrecisionRecall pr;
  for (const Match& m : matches.pairs) {
    const Point2 w = h_ab.apply(pos_a[static_cast<std::size_t>(m.a)]);
    const Point2 b = pos_b[static_cast<std::size_t>(m.b)];
    if (std::hypot(w.x - b.x, w.y - b.y) <= tol_px) ++pr.correct;
  }
  if (!matches.pairs.empty()) pr.precision = static_cast<double>(pr.correct) / static_cast<double>(matches.pairs.size());
  if (!gt.pairs.empty()) pr.recall = static_cast<double>(pr.correct) / static_cast<double>(gt.pairs.size());
  return pr;
}

EvalResult homography_estimation_accuracy(const std::vector<TrainingPair>& pairs, const Extractor& a,
                                          const Extractor& b, const EvalOptions& opts, std::string label) {
  if (pairs.empty()) throw ArityError("homography_estimation_accuracy needs at least one pair");
  if (!std::is_sorted(opts.eps.begin(), opts.eps.end())) throw ContractError("eps list must be ascending");
  if (!a.model || !b.model) throw ContractError("extractor without a model");
  if (a.model->spec.descriptor_dim != b.model->spec.descriptor_dim)
    throw ShapeError("extractors disagree on descriptor dimension");

  struct Slot {
    double err = 0.0;
    int n_matches = 0, correct = 0, gt = 0;
  };
  const int n = static_cast<int>(pairs.size());
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  parallel_for(n, [&](int i) {
    const TrainingPair& p = pairs[static_cast<std::size_t>(i)];
    bool swap = false;
    if (opts.randomize_sides) {
      Rng coin(derive_seed(opts.seed, "sides", static_cast<std::uint64_t>(i)));
      swap = coin.bernoulli(0.5);
    }
    const KeypointSet ka = (swap ? b : a)(p.image_a);
    const KeypointSet kb = (swap ? a : b)(p.image_b);
    const MatchSet m = mutual_nearest_neighbors(ka, kb, opts.min_similarity);
    const CorrespondenceSet gt = ground_truth_correspondences(p.h_ab, ka.positions, kb.positions, opts.match_tol_px);
    const PrecisionRecall pr = match_precision_recall(m, gt, ka.positions, kb.positions, p.h_ab, opts.match_tol_px);
    Slot& s = slots[static_cast<std::size_t>(i)];
    s.n_matches = static_cast<int>(m.pairs.size());
    s.correct = pr.correct;
    s.gt = static_cast<int>(gt.pairs.size());
    s.err = std::numeric_limits<double>::infinity();
    const std::vector<PointMatch> pm = to_point_matches(m, ka, kb);
    if (pm.size() >= 4) {
      Rng rng(derive_seed(opts.seed, "ransac", static_cast<std::uint64_t>(i)));
      const RansacResult r = ransac_homography(pm, opts.ransac, rng);
      if (r.ok) s.err = corner_error(r.h, p.h_ab, p.image_a.size());
    }
  });

  EvalResult res;
  res.label = label.empty() ? a.name + "-" + b.name : std::move(label);
  res.eps = opts.eps;
  res.pair_count = n;
  res.seed = opts.seed;
  res.params = count_params(a.model->spec);
  res.gflops = count_flops(a.model->spec, pairs.front().image_a.size());
  long long matches = 0, correct = 0, gt = 0;
  double err_sum = 0;
  int finite = 0;
  for (const Slot& s : slots) {
    res.corner_errors.push_back(s.err);
    matches += s.n_matches;
    correct += s.correct;
    gt += s.gt;
    if (std::isfinite(s.err)) {
      err_sum += s.err;
      ++finite;
    } else {
      ++res.ransac_failures;
    }
  }
  for (double e : opts.eps) {
    int ok = 0;
    for (double err : res.corner_errors) ok += err <= e ? 1 : 0;
    res.hea.push_back(static_cast<double>(ok) / n);
  }
  res.precision = matches ? static_cast<double>(correct) / static_cast<double>(matches) : 1.0;
  res.recall = gt ? static_cast<double>(correct) / static_cast<double>(gt) : 1.0;
  res.mean_corner_error = finite ? err_sum / finite : std::numeric_limits<double>::infinity();
  return res;
}

const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::lambda_kd: return "lambda_kd";
    case AblationAxis::temperatures: return "temperatures";
    case AblationAxis::loss_terms: return "loss_terms";
  }
  return "lambda_kd";
}

AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "lambda_kd" || s == "lambda-kd") return AblationAxis::lambda_kd;
  if (s == "temperatures") return AblationAxis::temperatures;
  if (s == "loss_terms" || s == "loss-terms") return AblationAxis::loss_terms;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

std::vector<std::string> default_axis_values(AblationAxis a) {
  switch (a) {
    case AblationAxis::lambda_kd: return {"0", "1", "2", "4"};
    case AblationAxis::temperatures: return {"1,1", "0.5,0.5", "0.1,0.1", "0.5,0.1"};
    case AblationAxis::loss_terms: return {"match_only", "kd_only", "both"};
  }
  return {};
}

TrainConfig apply_axis_value(TrainConfig cfg, AblationAxis a, const std::string& value) {
  switch (a) {
    case AblationAxis::lambda_kd:
      cfg.set("loss.lambda_kd", value);
      break;
    case AblationAxis::temperatures: {
      const auto comma = value.find(',');
      if (comma == std::string::npos) throw ConfigError("temperature value must be 'tau_s,tau_t', got '" + value + "'");
      cfg.set("loss.tau_s", value.substr(0, comma));
      cfg.set("loss.tau_t", value.substr(comma + 1));
      break;
    }
    case AblationAxis::loss_terms:
      cfg.set("loss.terms", value);
      break;
  }
  cfg.loss.validate();
  return cfg;
}

std::string canonical_training_key(const TrainConfig& cfg) {
  TrainConfig c = cfg;
  const bool kd_inactive = c.loss.terms == LossTerms::match_only || (c.loss.terms == LossTerms::both && c.loss.lambda_kd == 0);
  if (c.mode == TrainMode::student_asymloc && kd_inactive) {
    c.loss.terms = LossTerms::match_only;
    c.loss.lambda_kd = 0;
    c.loss.tau_s = c.loss.tau_t = 0.5;
  }
  return c.to_text();
}

Model<float> train_or_reuse(const TrainConfig& cfg, AblationContext& ctx, const std::string& tag) {
  const std::string key = canonical_training_key(cfg);
  if (ctx.cache) {
    auto it = ctx.cache->find(key);
    if (it != ctx.cache->end()) {
      if (ctx.log_sink) ctx.log_sink("reusing trained model for " + tag);
      return it->second;
    }
  }
  TrainOptions opts;
  if (!ctx.work_dir.empty()) opts.out_dir = ctx.work_dir / tag;
  opts.log_sink = [&](const std::string& line) {
    if (ctx.log_sink && line.rfind("epoch=", 0) == 0) ctx.log_sink(tag + " " + line);
  };
  Model<float> m = train(cfg, opts).checkpoint.model;
  if (ctx.cache) ctx.cache->emplace(key, m);
  return m;
}

std::vector<AblationRow> ablation_sweep(const TrainConfig& base, AblationAxis axis, const std::vector<std::string>& values,
                                        AblationContext& ctx) {
  if (!ctx.teacher) throw ConfigError("ablation sweep needs a teacher model");
  if (ctx.eval_pairs.empty()) throw ArityError("ablation sweep needs evaluation pairs");
  std::vector<AblationRow> rows;
  for (const std::string& v : values) {
    AblationRow row;
    row.axis = to_string(axis);
    row.value = v;
    try {
      const TrainConfig cfg = apply_axis_value(base, axis, v);
      std::string tag = row.axis + "_" + v;
      std::replace(tag.begin(), tag.end(), ',', '_');
      const Model<float> student = train_or_reuse(cfg, ctx, tag);
      row.model_hash = model_hash(student);
      const Extractor s{"student", &student, ctx.n_keypoints, ctx.nms_radius};
      const Extractor t{"teacher", ctx.teacher, ctx.n_keypoints, ctx.nms_radius};
      EvalOptions eo = ctx.eval;
      eo.randomize_sides = true;
      row.result = homography_estimation_accuracy(ctx.eval_pairs, s, t, eo, row.axis + "=" + v);
    } catch (const std::exception& e) {
      throw std::runtime_error("ablation " + row.axis + "=" + v + ": " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

bool clearly_less(double a, double b, double band) { return b - a > band; }

bool less_or_tied(double a, double b, double band) { return a - b <= band; }

bool peak_is_interior(const std::vector<double>& values, double band) {
  if (values.size() < 3) return false;
  const double best = *std::max_element(values.begin() + 1, values.end() - 1);
  return less_or_tied(values.front(), best, band) && less_or_tied(values.back(), best, band);
}

std::string ablation_ordering_failure(AblationAxis axis, const std::vector<std::string>& values,
                                      const std::vector<double>& hea, double band) {
  if (values.size() != hea.size()) throw ArityError("one HEA value per axis value expected");
  switch (axis) {
    case AblationAxis::loss_terms: {
      std::map<LossTerms, double> by;
      for (std::size_t i = 0; i < values.size(); ++i) by[parse_loss_terms(values[i])] = hea[i];
      if (by.size() != 3) return "loss_terms ordering needs match_only, kd_only and both";
      const double m = by[LossTerms::match_only], k = by[LossTerms::kd_only], b = by[LossTerms::both];
      if (!clearly_less(m, k, band)) return "match_only " + format_number(m) + " not below kd_only " + format_number(k);
      if (!less_or_tied(k, b, band)) return "kd_only " + format_number(k) + " above both " + format_number(b);
      return "";
    }
    case AblationAxis::lambda_kd: {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < values.size(); ++i) pts.emplace_back(parse_number(values[i]), hea[i]);
      std::sort(pts.begin(), pts.end());
      std::vector<double> ordered;
      for (const auto& p : pts) ordered.push_back(p.second);
      if (!peak_is_interior(ordered, band)) return "lambda_kd sweep does not peak at an interior value";
      return "";
    }
    case AblationAxis::temperatures:
      return "";
  }
  return "";
}

std::vector<CurveRow> efficiency_curve(const std::vector<std::pair<std::string, std::filesystem::path>>& checkpoints,
                                       const Model<float>* teacher, const std::vector<TrainingPair>& pairs,
                                       const EvalOptions& opts, double eps_ref) {
  if (pairs.empty()) throw ArityError("efficiency curve needs evaluation pairs");
  std::vector<CurveRow> rows;
  for (const auto& [variant, path] : checkpoints) {
    CurveRow row;
    row.variant = variant;
    try {
      const Model<float> m = load_checkpoint(path).model;
      row.params = count_params(m.spec);
      row.gflops = count_flops(m.spec, pairs.front().image_a.size());
      const Extractor s{variant, &m};
      EvalResult r;
      if (teacher) {
        EvalOptions eo = opts;
        eo.randomize_sides = true;
        r = homography_estimation_accuracy(pairs, s, Extractor{"teacher", teacher}, eo);
      } else {
        r = homography_estimation_accuracy(pairs, s, s, opts);
      }
      row.hea = r.hea_at(eps_ref);
      row.hea_per_gflop = row.hea / row.gflops;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CurveRow& x, const CurveRow& y) { return x.params < y.params; });
  return rows;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double parse_number(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

ReportTable eval_table(const std::vector<EvalResult>& results) {
  ReportTable t;
  t.columns = {"label", "pairs", "seed", "params", "gflops"};
  const std::vector<double> eps = results.empty() ? std::vector<double>{1.0, 3.0, 5.0} : results.front().eps;
  for (double e : eps) t.columns.push_back("hea@" + format_number(e));
  for (const char* c : {"precision", "recall", "mean_corner_error", "ransac_failures"}) t.columns.emplace_back(c);
  for (const EvalResult& r : results) {
    if (r.eps != eps) throw ContractError("results in one table must share the eps list");
    std::vector<std::string> row = {r.label, std::to_string(r.pair_count), std::to_string(r.seed),
                                    std::to_string(r.params), format_number(r.gflops)};
    for (double h : r.hea) row.push_back(format_number(h));
    row.push_back(format_number(r.precision));
    row.push_back(format_number(r.recall));
    row.push_back(format_number(r.mean_corner_error));
    row.push_back(std::to_string(r.ransac_failures));
    t.rows.push_back(std::move(row));
  }
  return t;
}

ReportTable ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<EvalResult> results;
  for (const AblationRow& r : rows) results.push_back(r.result);
  ReportTable base = eval_table(results);
  ReportTable t;
  t.columns = {"axis", "value", "model_hash"};
  t.columns.insert(t.columns.end(), base.columns.begin(), base.columns.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(rows[i].model_hash));
    std::vector<std::string> row = {rows[i].axis, rows[i].value, hash};
    row.insert(row.end(), base.rows[i].begin(), base.rows[i].end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

ReportTable curve_table(const std::vector<CurveRow>& rows) {
  ReportTable t;
  t.columns = {"variant", "params", "gflops", "hea", "hea_per_gflop", "error"};
  for (const CurveRow& r : rows)
    t.rows.push_back({r.variant, std::to_string(r.params), format_number(r.gflops), format_number(r.hea),
                      format_number(r.hea_per_gflop), r.error.empty() ? "-" : r.error});
  return t;
}

std::string format_table(const ReportTable& t) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of("\t\n") != std::string::npos) throw FormatError("table cell contains a tab or newline");
      s += (i ? "\t" : "") + cells[i];
    }
    return s + "\n";
  };
  std::string out = line(t.columns);
  for (const auto& r : t.rows) {
    if (r.size() != t.columns.size()) throw ContractError("table row width does not match header");
    out += line(r);
  }
  return out;
}

ReportTable parse_table(const std::string& text) {
  ReportTable t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (header) {
      t.columns = std::move(cells);
      header = false;
    } else {
      if (cells.size() != t.columns.size()) throw FormatError("report row width does not match header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (header) throw FormatError("report has no header row");
  return t;
}

void emit_report(const ReportTable& table, const std::map<std::string, std::string>& metadata,
                 const std::filesystem::path& dir) {
  try {
    std::filesystem::create_directories(dir);
    write_text(dir / "results.tsv", format_table(table));
    std::string meta = "tool_version=" + std::string(kToolVersion) + "\n";
    for (const auto& [k, v] : metadata) {
      if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
        throw FormatError("metadata entry '" + k + "' contains a reserved character");
      meta += k + "=" + v + "\n";
    }
    write_text(dir / "metadata.txt", meta);
  } catch (const std::filesystem::filesystem_error& e) {
    throw std::runtime_error("cannot write report to " + dir.string() + ": " + e.what());
  }
}

int worker_threads() {
  if (const char* env = std::getenv("ASYMLOC_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace asymloc
