#include "asymloc/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "asymloc/errors.hpp"
#include "asymloc/evalkit.hpp"
#include "asymloc/gradcheck_suite.hpp"
#include "asymloc/io.hpp"
#include "asymloc/matching.hpp"
#include "asymloc/trainer.hpp"

namespace asymloc::cli {
namespace {

namespace fs = std::filesystem;

/// Raised when an assertion requested by flag does not hold.
struct AssertionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags every configurable subcommand shares.
struct CommonFlags {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> sets;

  void add(CLI::App* app, bool out_required = true) {
    auto* o = app->add_option("--out", out, "output directory");
    if (out_required) o->required();
    app->add_option("--seed", seed, "seed override");
    app->add_option("--config", config, "key=value config file");
    app->add_option("--set", sets, "key=value override (repeatable)");
  }

  TrainConfig resolve(TrainMode mode) const {
    TrainConfig cfg = config.empty() ? TrainConfig::defaults_for(mode) : load_train_config(config, mode);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(item));
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

std::map<std::string, std::string> config_metadata(const TrainConfig& cfg) {
  std::map<std::string, std::string> meta;
  std::istringstream lines(cfg.to_text());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    meta["config." + line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

void write_config(const fs::path& dir, const std::string& text) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", text);
}

std::string eval_options_text(const EvalOptions& eo, int pairs, std::uint64_t pairs_seed) {
  std::string eps;
  for (double e : eo.eps) eps += (eps.empty() ? "" : ",") + format_number(e);
  std::ostringstream s;
  s << "eval.pairs=" << pairs << "\neval.pairs_seed=" << pairs_seed << "\neval.eps=" << eps
    << "\neval.ransac_iterations=" << eo.ransac.iterations << "\neval.ransac_inlier_tol_px="
    << format_number(eo.ransac.inlier_tol_px) << "\neval.randomize_sides=" << (eo.randomize_sides ? 1 : 0)
    << "\neval.seed=" << eo.seed << "\neval.match_tol_px=" << format_number(eo.match_tol_px) << '\n';
  return s.str();
}

// ---------------------------------------------------------------- training

struct TrainArgs {
  CommonFlags common;
  std::string mode = "asymloc";
  std::string teacher;
  std::string resume;
};

int do_train(const TrainArgs& a, TrainMode mode, std::ostream& out) {
  TrainConfig cfg = a.common.resolve(mode);
  cfg.mode = mode;
  if (!a.teacher.empty()) cfg.teacher_checkpoint = a.teacher;
  cfg.validate();
  const fs::path dir = a.common.out;
  write_config(dir, cfg.to_text());
  TrainOptions opts;
  opts.out_dir = dir;
  opts.log_sink = [&](const std::string& line) {
    if (line.rfind("epoch=", 0) == 0) out << line << '\n' << std::flush;
  };
  if (!a.resume.empty()) opts.resume_from = load_checkpoint(a.resume);
  const TrainResult r = train(cfg, opts);
  out << "checkpoint " << (dir / "model.aloc").string() << " hash " << model_hash(r.checkpoint.model) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- features

struct ExtractArgs {
  std::string model, images, out;
  int num_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
};

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CorpusError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw CorpusError("no images in " + dir.string());
  return files;
}

int do_extract(const ExtractArgs& a, std::ostream& out) {
  const Model<float> model = load_checkpoint(a.model).model;
  const fs::path dir = a.out;
  std::ostringstream cfg;
  cfg << "model=" << a.model << "\nimages=" << a.images << "\nnum_keypoints=" << a.num_keypoints
      << "\nnms_radius=" << a.nms_radius << "\nmodel_hash=" << model_hash(model) << '\n';
  write_config(dir, cfg.str());
  const std::vector<fs::path> files = image_files(a.images);
  std::vector<KeypointSet> feats(files.size());
  std::vector<Image> imgs(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) imgs[i] = load_image(files[i]);
  parallel_for(static_cast<int>(files.size()),
               [&](int i) { feats[i] = extract_features(model, imgs[i], a.num_keypoints, a.nms_radius); });
  std::vector<MapEntry> entries;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string id = files[i].stem().string();
    const std::string rel = id + ".alft";
    save_features(feats[i], dir / rel);
    entries.push_back({id, rel, feats[i].width, feats[i].height});
    out << id << '\t' << feats[i].positions.size() << " keypoints\n";
  }
  save_map_manifest(entries, dir / "map.tsv");
  return kExitOk;
}

struct MatchArgs {
  std::string query, map, out;
  double min_similarity = 0.0;
};

std::vector<std::pair<MapEntry, KeypointSet>> load_map(const fs::path& dir) {
  std::vector<std::pair<MapEntry, KeypointSet>> map;
  for (const MapEntry& e : load_map_manifest(dir / "map.tsv")) map.emplace_back(e, load_features(dir / e.feature_path));
  return map;
}

int do_match(const MatchArgs& a, std::ostream& out) {
  const KeypointSet query = load_features(a.query);
  const auto map = load_map(a.map);
  std::string text;
  for (const auto& [entry, feats] : map) {
    const MatchSet m = mutual_nearest_neighbors(query, feats, a.min_similarity);
    std::istringstream lines(format_matches(m, query, feats));
    std::string line;
    while (std::getline(lines, line)) text += entry.id + '\t' + line + '\n';
    out << entry.id << '\t' << m.pairs.size() << " matches\n";
  }
  const fs::path path = a.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, text);
  std::ostringstream cfg;
  cfg << "query=" << a.query << "\nmap=" << a.map << "\nmin_similarity=" << format_number(a.min_similarity) << '\n';
  write_text(fs::path(path.string() + ".config.txt"), cfg.str());
  return kExitOk;
}

struct LocalizeArgs {
  std::string model, query, map, out;
  std::uint64_t seed = 0;
  int num_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
  int ransac_iterations = RansacConfig{}.iterations;
  double inlier_tol_px = RansacConfig{}.inlier_tol_px;
};

int do_localize(const LocalizeArgs& a, std::ostream& out) {
  const Model<float> model = load_checkpoint(a.model).model;
  const KeypointSet q = extract_features(model, load_image(a.query), a.num_keypoints, a.nms_radius);
  const auto map = load_map(a.map);
  RansacConfig rc;
  rc.iterations = a.ransac_iterations;
  rc.inlier_tol_px = a.inlier_tol_px;

  struct Row {
    std::string id;
    int matches = 0;
    int inliers = 0;
    bool ok = false;
    Homography h;
  };
  std::vector<Row> rows(map.size());
  parallel_for(static_cast<int>(map.size()), [&](int i) {
    const MatchSet m = mutual_nearest_neighbors(q, map[i].second);
    Row& r = rows[i];
    r.id = map[i].first.id;
    r.matches = static_cast<int>(m.pairs.size());
    Rng rng(derive_seed(a.seed, "localize", static_cast<std::uint64_t>(i)));
    try {
      const RansacResult rr = ransac_homography(to_point_matches(m, q, map[i].second), rc, rng);
      r.ok = rr.ok;
      r.inliers = rr.inlier_count;
      r.h = rr.h;
    } catch (const std::exception&) {
      r.ok = false;
    }
  });
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.inliers > y.inliers; });

  ReportTable t;
  t.columns = {"map_id", "matches", "inliers", "ransac_ok", "h"};
  for (const Row& r : rows) {
    std::string h;
    for (int i = 0; i < 9; ++i) h += (i ? "," : "") + format_number(r.h.m()[static_cast<std::size_t>(i)]);
    t.rows.push_back({r.id, std::to_string(r.matches), std::to_string(r.inliers), r.ok ? "1" : "0", r.ok ? h : "-"});
  }
  std::map<std::string, std::string> meta{{"query", a.query},
                                          {"map", a.map},
                                          {"model", a.model},
                                          {"model_hash", std::to_string(model_hash(model))},
                                          {"seed", std::to_string(a.seed)},
                                          {"num_keypoints", std::to_string(a.num_keypoints)},
                                          {"nms_radius", std::to_string(a.nms_radius)},
                                          {"ransac_iterations", std::to_string(rc.iterations)},
                                          {"ransac_inlier_tol_px", format_number(rc.inlier_tol_px)}};
  std::string cfg;
  for (const auto& [k, v] : meta) cfg += k + "=" + v + "\n";
  write_config(a.out, cfg);
  emit_report(t, meta, a.out);
  if (!rows.empty() && rows.front().ok)
    out << "best " << rows.front().id << " inliers " << rows.front().inliers << '\n';
  else
    out << "no map image localized the query\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluation

struct EvalArgs {
  CommonFlags common;
  std::string model_a, model_b;
  int pairs = 200;
  std::optional<std::uint64_t> pairs_seed;
  std::string eps = "1,3,5";
  bool randomize_sides = false;
  int num_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
  std::vector<std::string> expect_min_hea;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.common.resolve(TrainMode::student_standard);
  const std::uint64_t pairs_seed = a.pairs_seed.value_or(cfg.seed);
  EvalOptions eo;
  eo.eps = parse_list(a.eps);
  if (!std::is_sorted(eo.eps.begin(), eo.eps.end())) throw ConfigError("--eps must be ascending");
  eo.randomize_sides = a.randomize_sides;
  eo.seed = cfg.seed;
  const Model<float> ma = load_checkpoint(a.model_a).model;
  const Model<float> mb = a.model_b.empty() ? ma : load_checkpoint(a.model_b).model;
  const Extractor ea{"a", &ma, a.num_keypoints, a.nms_radius};
  const Extractor eb{"b", &mb, a.num_keypoints, a.nms_radius};
  const std::vector<TrainingPair> pairs = make_eval_pairs(cfg.data, pairs_seed, a.pairs);
  const std::string label = a.model_b.empty() || a.model_b == a.model_a ? "symmetric" : "asymmetric";
  const EvalResult r = homography_estimation_accuracy(pairs, ea, eb, eo, label);

  std::map<std::string, std::string> meta = config_metadata(cfg);
  meta["model_a"] = a.model_a;
  meta["model_b"] = a.model_b.empty() ? a.model_a : a.model_b;
  meta["model_a_hash"] = std::to_string(model_hash(ma));
  meta["model_b_hash"] = std::to_string(model_hash(mb));
  write_config(a.common.out, cfg.to_text() + eval_options_text(eo, a.pairs, pairs_seed));
  emit_report(eval_table({r}), meta, a.common.out);
  for (std::size_t i = 0; i < r.eps.size(); ++i)
    out << "HEA(" << format_number(r.eps[i]) << ")=" << format_number(r.hea[i]) << '\n';
  out << "precision=" << format_number(r.precision) << " recall=" << format_number(r.recall) << '\n';

  for (const std::string& spec : a.expect_min_hea) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ConfigError("--expect-min-hea expects eps:value, got '" + spec + "'");
    const double e = parse_number(spec.substr(0, colon)), want = parse_number(spec.substr(colon + 1));
    const double got = r.hea_at(e);
    if (!(got >= want))
      throw AssertionFailure("HEA(" + format_number(e) + ")=" + format_number(got) + " below " + format_number(want));
  }
  return kExitOk;
}

struct AblateArgs {
  CommonFlags common;
  std::string axis;
  std::string teacher;
  std::vector<std::string> values;
  int pairs = 200;
  std::optional<std::uint64_t> pairs_seed;
  int num_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
  double eps_ref = 3.0;
  bool assert_ordering = false;
};

int do_ablate(const AblateArgs& a, std::ostream& out) {
  TrainConfig base = a.common.resolve(TrainMode::student_asymloc);
  base.mode = TrainMode::student_asymloc;
  if (!a.teacher.empty()) base.teacher_checkpoint = a.teacher;
  base.validate();
  const AblationAxis axis = parse_ablation_axis(a.axis);
  const std::vector<std::string> values = a.values.empty() ? default_axis_values(axis) : a.values;
  const Model<float> teacher = load_checkpoint(base.teacher_checkpoint).model;
  const std::uint64_t pairs_seed = a.pairs_seed.value_or(base.seed);

  std::map<std::string, Model<float>> cache;
  AblationContext ctx;
  ctx.teacher = &teacher;
  ctx.eval_pairs = make_eval_pairs(base.data, pairs_seed, a.pairs);
  ctx.eval.seed = base.seed;
  ctx.n_keypoints = a.num_keypoints;
  ctx.nms_radius = a.nms_radius;
  ctx.work_dir = fs::path(a.common.out) / "runs";
  ctx.cache = &cache;
  ctx.log_sink = [&](const std::string& line) { out << line << '\n' << std::flush; };

  std::string vals;
  for (const std::string& v : values) vals += (vals.empty() ? "" : ";") + v;
  write_config(a.common.out, base.to_text() + "ablate.axis=" + to_string(axis) + "\nablate.values=" + vals + "\n" +
                                 eval_options_text(ctx.eval, a.pairs, pairs_seed));
  const std::vector<AblationRow> rows = ablation_sweep(base, axis, values, ctx);
  std::map<std::string, std::string> meta = config_metadata(base);
  meta["ablate.axis"] = to_string(axis);
  emit_report(ablation_table(rows), meta, a.common.out);
  std::vector<double> hea;
  for (const AblationRow& r : rows) {
    hea.push_back(r.result.hea_at(a.eps_ref));
    out << r.axis << '=' << r.value << " HEA(" << format_number(a.eps_ref) << ")=" << format_number(hea.back()) << '\n';
  }

  if (a.assert_ordering) {
    const std::string failure = ablation_ordering_failure(axis, values, hea, kOrderingDeadBand);
    if (!failure.empty()) throw AssertionFailure(failure);
    out << "ordering holds\n";
  }
  return kExitOk;
}

struct CurveArgs {
  CommonFlags common;
  std::vector<std::string> checkpoints;
  std::string teacher;
  int pairs = 200;
  std::optional<std::uint64_t> pairs_seed;
  double eps_ref = 3.0;
};

int do_curve(const CurveArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.common.resolve(TrainMode::student_asymloc);
  std::vector<std::pair<std::string, fs::path>> ckpts;
  for (const std::string& c : a.checkpoints) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) throw ConfigError("--checkpoint expects variant=path, got '" + c + "'");
    ckpts.emplace_back(c.substr(0, eq), c.substr(eq + 1));
  }
  std::optional<Model<float>> teacher;
  if (!a.teacher.empty()) teacher = load_checkpoint(a.teacher).model;
  const std::uint64_t pairs_seed = a.pairs_seed.value_or(cfg.seed);
  EvalOptions eo;
  eo.seed = cfg.seed;
  const std::vector<TrainingPair> pairs = make_eval_pairs(cfg.data, pairs_seed, a.pairs);
  const std::vector<CurveRow> rows = efficiency_curve(ckpts, teacher ? &*teacher : nullptr, pairs, eo, a.eps_ref);
  write_config(a.common.out, cfg.to_text() + eval_options_text(eo, a.pairs, pairs_seed) +
                                 "curve.eps_ref=" + format_number(a.eps_ref) + "\n");
  std::map<std::string, std::string> meta = config_metadata(cfg);
  meta["curve.teacher"] = a.teacher;
  emit_report(curve_table(rows), meta, a.common.out);
  for (const CurveRow& r : rows) {
    if (!r.error.empty())
      out << r.variant << " error: " << r.error << '\n';
    else
      out << r.variant << " params=" << r.params << " gflops=" << format_number(r.gflops)
          << " hea=" << format_number(r.hea) << '\n';
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string out;
  std::uint64_t seed = 0;
};

int do_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckSuiteOptions opts;
  opts.seed = a.seed;
  const GradcheckSuiteResult r = run_gradcheck_suite(opts);
  std::ostringstream report;
  for (const GradcheckCase& c : r.cases) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: max_rel_error=%.3e evaluated=%zu %s\n", c.name.c_str(), c.report.max_rel_error,
                  c.report.evaluated, c.passed ? "ok" : "FAIL");
    report << buf;
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "max_rel_error=%.3e teacher_gradients_zero=%d instance_seed=%llu rejected=%d\n",
                r.max_rel_error, r.teacher_gradients_zero ? 1 : 0, static_cast<unsigned long long>(r.instance_seed),
                r.rejected_instances);
  report << buf;
  out << report.str();
  if (!a.out.empty()) {
    write_config(a.out, "seed=" + std::to_string(a.seed) + "\nh=" + format_number(opts.h) +
                            "\ntolerance=" + format_number(opts.tolerance) + "\n");
    write_text(fs::path(a.out) / "gradcheck.txt", report.str());
  }
  if (!r.passed) throw AssertionFailure("gradient check failed");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Asymmetric local-feature distillation toolkit", "asymloc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  TrainArgs teacher_args;
  auto* tt = app.add_subcommand("train-teacher", "train the teacher with the symmetric objective");
  teacher_args.common.add(tt);
  tt->add_option("--resume", teacher_args.resume, "continue from a checkpoint");

  TrainArgs student_args;
  auto* ts = app.add_subcommand("train-student", "train a student (standard, naive-distill or asymloc)");
  student_args.common.add(ts);
  ts->add_option("--mode", student_args.mode, "standard | naive-distill | asymloc")->capture_default_str();
  ts->add_option("--teacher", student_args.teacher, "frozen teacher checkpoint");
  ts->add_option("--resume", student_args.resume, "continue from a checkpoint");

  ExtractArgs extract_args;
  auto* ex = app.add_subcommand("extract", "extract keypoint features for a directory of images");
  ex->add_option("--model", extract_args.model)->required();
  ex->add_option("--images", extract_args.images)->required();
  ex->add_option("--out", extract_args.out, "feature directory")->required();
  ex->add_option("--num-keypoints", extract_args.num_keypoints)->capture_default_str();
  ex->add_option("--nms-radius", extract_args.nms_radius)->capture_default_str();

  MatchArgs match_args;
  auto* mt = app.add_subcommand("match", "mutual nearest-neighbor match a query against a map");
  mt->add_option("--query", match_args.query, "query feature file")->required();
  mt->add_option("--map", match_args.map, "map feature directory")->required();
  mt->add_option("--out", match_args.out, "match file")->required();
  mt->add_option("--min-similarity", match_args.min_similarity)->capture_default_str();

  LocalizeArgs loc_args;
  auto* lc = app.add_subcommand("localize", "extract a query image and rank map images by RANSAC inliers");
  lc->add_option("--model", loc_args.model, "query-side (student) checkpoint")->required();
  lc->add_option("--query", loc_args.query, "query image")->required();
  lc->add_option("--map", loc_args.map, "map feature directory")->required();
  lc->add_option("--out", loc_args.out)->required();
  lc->add_option("--seed", loc_args.seed)->capture_default_str();
  lc->add_option("--num-keypoints", loc_args.num_keypoints)->capture_default_str();
  lc->add_option("--nms-radius", loc_args.nms_radius)->capture_default_str();
  lc->add_option("--ransac-iterations", loc_args.ransac_iterations)->capture_default_str();
  lc->add_option("--inlier-tol", loc_args.inlier_tol_px)->capture_default_str();

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "homography estimation accuracy on held-out pairs");
  eval_args.common.add(ev);
  ev->add_option("--model-a", eval_args.model_a, "extractor for image a")->required();
  ev->add_option("--model-b", eval_args.model_b, "extractor for image b (defaults to model a)");
  ev->add_option("--pairs", eval_args.pairs)->capture_default_str();
  ev->add_option("--pairs-seed", eval_args.pairs_seed, "seed of the held-out pair stream (defaults to --seed)");
  ev->add_option("--eps", eval_args.eps, "ascending thresholds in pixels")->capture_default_str();
  ev->add_flag("--randomize-sides", eval_args.randomize_sides, "seeded coin per pair picks each model's image");
  ev->add_option("--num-keypoints", eval_args.num_keypoints)->capture_default_str();
  ev->add_option("--nms-radius", eval_args.nms_radius)->capture_default_str();
  ev->add_option("--expect-min-hea", eval_args.expect_min_hea, "eps:value; exit 3 when HEA(eps) < value");

  AblateArgs ablate_args;
  auto* ab = app.add_subcommand("ablate", "train and evaluate one student per axis value");
  ablate_args.common.add(ab);
  ab->add_option("--axis", ablate_args.axis, "lambda_kd | temperatures | loss-terms")->required();
  ab->add_option("--teacher", ablate_args.teacher);
  ab->add_option("--value", ablate_args.values, "axis value (repeatable; defaults to the standard grid)");
  ab->add_option("--pairs", ablate_args.pairs)->capture_default_str();
  ab->add_option("--pairs-seed", ablate_args.pairs_seed);
  ab->add_option("--num-keypoints", ablate_args.num_keypoints)->capture_default_str();
  ab->add_option("--nms-radius", ablate_args.nms_radius)->capture_default_str();
  ab->add_option("--eps-ref", ablate_args.eps_ref)->capture_default_str();
  ab->add_flag("--assert-ordering", ablate_args.assert_ordering, "exit 3 unless the expected ordering holds");

  CurveArgs curve_args;
  auto* cv = app.add_subcommand("curve", "efficiency rows: params, GFLOPs, HEA, HEA per GFLOP");
  curve_args.common.add(cv);
  cv->add_option("--checkpoint", curve_args.checkpoints, "variant=path (repeatable)")->required();
  cv->add_option("--teacher", curve_args.teacher, "evaluate each variant against this teacher");
  cv->add_option("--pairs", curve_args.pairs)->capture_default_str();
  cv->add_option("--pairs-seed", curve_args.pairs_seed);
  cv->add_option("--eps-ref", curve_args.eps_ref)->capture_default_str();

  GradcheckArgs gc_args;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full objective on micro networks");
  gc->add_option("--out", gc_args.out);
  gc->add_option("--seed", gc_args.seed)->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*tt) return do_train(teacher_args, TrainMode::teacher_symmetric, out);
    if (*ts) {
      const TrainMode mode = parse_train_mode(student_args.mode);
      if (mode == TrainMode::teacher_symmetric) throw ConfigError("train-student does not train teachers");
      return do_train(student_args, mode, out);
    }
    if (*ex) return do_extract(extract_args, out);
    if (*mt) return do_match(match_args, out);
    if (*lc) return do_localize(loc_args, out);
    if (*ev) return do_eval(eval_args, out);
    if (*ab) return do_ablate(ablate_args, out);
    if (*cv) return do_curve(curve_args, out);
    if (*gc) return do_gradcheck(gc_args, out);
  } catch (const AssertionFailure& e) {
    err << "assertion failed: " << e.what() << '\n';
    return kExitAssertion;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFault;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace asymloc::cli
