#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "asymloc/datagen.hpp"
#include "asymloc/features.hpp"
#include "asymloc/io.hpp"
#include "asymloc/objectives.hpp"

namespace asymloc {

enum class TrainMode { teacher_symmetric, student_standard, student_naive_distill, student_asymloc };

const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::student_asymloc;
  int epochs = 50;
  int pairs_per_epoch = 2000;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelSpec model = ModelSpec::preset("v04");
  std::string teacher_checkpoint;
  int n_keypoints = ExtractDefaults::num_keypoints;
  int nms_radius = ExtractDefaults::nms_radius;
  double gt_tolerance_px = 3.0;
  DataConfig data;

  static TrainConfig defaults_for(TrainMode mode);

  /// Sets one key from its text form; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Applies key=value lines ('#' starts a comment).
  void apply_text(const std::string& text);
  /// Every key, fully resolved, in a fixed order.
  std::string to_text() const;
  void validate() const;
};

TrainConfig load_train_config(const std::filesystem::path& path, TrainMode mode);

struct AdamState {
  std::vector<TensorF> m;
  std::vector<TensorF> v;
  std::int64_t t = 0;
};

/// Bias-corrected Adam. Throws NumericFault (and leaves everything untouched)
/// when any gradient entry is non-finite.
void adam_step(std::vector<TensorF>& params, const std::vector<TensorF>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps);

struct TrainOptions {
  /// Where per-epoch checkpoints and train.log go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Continue from this checkpoint (optimizer state and epoch counter included).
  std::optional<Checkpoint> resume_from;
  /// Receives every log line as it is produced.
  std::function<void(const std::string&)> log_sink;
};

struct TrainResult {
  Checkpoint checkpoint;  ///< final weights plus optimizer state
  std::vector<std::string> log;
  std::vector<double> epoch_mean_total;  ///< epochs run in this call only
};

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {});

/// Resume a run: the checkpoint's spec must equal cfg.model.
TrainResult resume(const Checkpoint& ckpt, const TrainConfig& cfg, TrainOptions opts = {});

/// Strips the optimizer state.
Model<float> model_of(const Checkpoint& ckpt);

}  // namespace asymloc
