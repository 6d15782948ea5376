#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asymloc/datagen.hpp"
#include "asymloc/features.hpp"
#include "asymloc/geometry.hpp"
#include "asymloc/matching.hpp"
#include "asymloc/trainer.hpp"

namespace asymloc {

/// A model plus its extraction settings.
struct Extractor {
  std::string name;
  const Model<float>* model = nullptr;
  int n_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;

  KeypointSet operator()(const Image& img) const;
};

struct EvalOptions {
  std::vector<double> eps{1.0, 3.0, 5.0};
  RansacConfig ransac;
  double min_similarity = 0.0;
  /// Per pair, a seeded coin decides which image each extractor sees.
  bool randomize_sides = false;
  std::uint64_t seed = 0;
  double match_tol_px = 3.0;
};

struct EvalResult {
  std::string label;
  std::vector<double> eps;
  std::vector<double> hea;  ///< one per eps
  double precision = 1.0;
  double recall = 1.0;
  double mean_corner_error = 0.0;  ///< over pairs where RANSAC succeeded
  int ransac_failures = 0;
  std::int64_t params = 0;  ///< of extractor a
  double gflops = 0.0;      ///< of extractor a at the pair resolution
  int pair_count = 0;
  std::uint64_t seed = 0;
  std::vector<double> corner_errors;  ///< per pair, +inf on failure

  double hea_at(double e) const;
};

/// Held-out pairs from their own stream, never produced by training.
std::vector<TrainingPair> make_eval_pairs(const DataConfig& cfg, std::uint64_t seed, int count);

EvalResult homography_estimation_accuracy(const std::vector<TrainingPair>& pairs, const Extractor& a,
                                          const Extractor& b, const EvalOptions& opts, std::string label = "");

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
  int correct = 0;
};

PrecisionRecall match_precision_recall(const MatchSet& matches, const CorrespondenceSet& gt,
                                       std::span<const Point2> pos_a, std::span<const Point2> pos_b,
                                       const Homography& h_ab, double tol_px);

enum class AblationAxis { lambda_kd, temperatures, loss_terms };

const char* to_string(AblationAxis a);
AblationAxis parse_ablation_axis(const std::string& s);
/// The default grid per axis, as text values accepted by apply_axis_value.
std::vector<std::string> default_axis_values(AblationAxis a);
/// Returns cfg with one axis value applied ("2", "0.5,0.1", "kd_only").
TrainConfig apply_axis_value(TrainConfig cfg, AblationAxis a, const std::string& value);

struct AblationRow {
  std::string axis;
  std::string value;
  std::uint64_t model_hash = 0;
  EvalResult result;
};

struct AblationContext {
  const Model<float>* teacher = nullptr;
  std::vector<TrainingPair> eval_pairs;
  EvalOptions eval;
  /// Extraction settings at evaluation time (training may use its own).
  int n_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
  /// Root for per-run training directories; empty trains in memory.
  std::filesystem::path work_dir;
  /// Trained students keyed by canonical config; shared across sweeps.
  std::map<std::string, Model<float>>* cache = nullptr;
  std::function<void(const std::string&)> log_sink;
};

/// Configs that train identically (lambda_kd = 0 versus match-only) share a key.
std::string canonical_training_key(const TrainConfig& cfg);

/// Trains (or reuses) a student per config and evaluates it against the
/// teacher with randomized sides.
Model<float> train_or_reuse(const TrainConfig& cfg, AblationContext& ctx, const std::string& tag);

std::vector<AblationRow> ablation_sweep(const TrainConfig& base, AblationAxis axis, const std::vector<std::string>& values,
                                        AblationContext& ctx);

/// HEA differences within this band count as ties in ordering checks.
inline constexpr double kOrderingDeadBand = 0.01;

/// a < b with a margin wider than the band.
bool clearly_less(double a, double b, double band);
/// a <= b, ties within the band allowed.
bool less_or_tied(double a, double b, double band);
/// The largest value sits at neither end: no endpoint beats the best interior
/// value by more than the band. Needs at least three values.
bool peak_is_interior(const std::vector<double>& values, double band);

/// Checks the expected ordering for an axis; empty when it holds.
/// loss_terms: match_only < kd_only <= both. lambda_kd: interior peak over
/// values sorted ascending. temperatures: no ordering is expected.
std::string ablation_ordering_failure(AblationAxis axis, const std::vector<std::string>& values,
                                      const std::vector<double>& hea, double band);

struct CurveRow {
  std::string variant;
  std::int64_t params = 0;
  double gflops = 0.0;
  double hea = 0.0;
  double hea_per_gflop = 0.0;
  std::string error;  ///< non-empty when the checkpoint was unusable
};

/// One row per variant, ascending by params. HEA at eps_ref; asymmetric
/// against the teacher when one is given.
std::vector<CurveRow> efficiency_curve(const std::vector<std::pair<std::string, std::filesystem::path>>& checkpoints,
                                       const Model<float>* teacher, const std::vector<TrainingPair>& pairs,
                                       const EvalOptions& opts, double eps_ref);

/// A rectangular text table.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

std::string format_number(double v);  ///< %.9g, "inf" for infinity
double parse_number(const std::string& s);

ReportTable eval_table(const std::vector<EvalResult>& results);
ReportTable ablation_table(const std::vector<AblationRow>& rows);
ReportTable curve_table(const std::vector<CurveRow>& rows);

std::string format_table(const ReportTable& t);
ReportTable parse_table(const std::string& text);

inline constexpr const char* kToolVersion = "asymloc 1.0.0";

/// Writes <dir>/results.tsv and <dir>/metadata.txt.
void emit_report(const ReportTable& table, const std::map<std::string, std::string>& metadata,
                 const std::filesystem::path& dir);

/// Number of worker threads: ASYMLOC_THREADS when set, else hardware concurrency.
int worker_threads();
/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace asymloc
