#include "asymloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "asymloc/errors.hpp"
#include "asymloc/ops.hpp"

namespace asymloc {

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::teacher_symmetric: return "teacher_symmetric";
    case TrainMode::student_standard: return "student_standard";
    case TrainMode::student_naive_distill: return "student_naive_distill";
    case TrainMode::student_asymloc: return "student_asymloc";
  }
  return "student_asymloc";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "teacher_symmetric" || s == "teacher") return TrainMode::teacher_symmetric;
  if (s == "student_standard" || s == "standard") return TrainMode::student_standard;
  if (s == "student_naive_distill" || s == "naive-distill" || s == "naive_distill") return TrainMode::student_naive_distill;
  if (s == "student_asymloc" || s == "asymloc") return TrainMode::student_asymloc;
  throw ConfigError("unknown training mode '" + s + "'");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "' expects an unsigned integer, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct DoubleField {
  const char* key;
  double (*get)(const TrainConfig&);
  void (*put)(TrainConfig&, double);
};

// Numeric keys, in to_text() order.
#define ALOC_FIELD(KEY, EXPR) \
  DoubleField { KEY, [](const TrainConfig& c) { return static_cast<double>(c.EXPR); }, [](TrainConfig& c, double v) { c.EXPR = v; } }

const std::vector<DoubleField>& double_fields() {
  static const std::vector<DoubleField> f = {
      ALOC_FIELD("lr", lr),
      ALOC_FIELD("adam_beta1", adam_beta1),
      ALOC_FIELD("adam_beta2", adam_beta2),
      ALOC_FIELD("adam_eps", adam_eps),
      ALOC_FIELD("loss.tau_sim", loss.tau_sim),
      ALOC_FIELD("loss.tau_d", loss.tau_d),
      ALOC_FIELD("loss.tau_s", loss.tau_s),
      ALOC_FIELD("loss.tau_t", loss.tau_t),
      ALOC_FIELD("loss.lambda_kd", loss.lambda_kd),
      ALOC_FIELD("loss.detector_weight", loss.detector_weight),
      ALOC_FIELD("gt_tolerance_px", gt_tolerance_px),
      ALOC_FIELD("hcfg.max_corner_perturb_frac", data.homography.max_corner_perturb_frac),
      ALOC_FIELD("hcfg.max_rotation_deg", data.homography.max_rotation_deg),
      ALOC_FIELD("hcfg.scale_range", data.homography.scale_range),
      ALOC_FIELD("hcfg.translation_frac", data.homography.translation_frac),
      ALOC_FIELD("acfg.brightness_delta", data.augment.brightness_delta),
      ALOC_FIELD("acfg.contrast_lo", data.augment.contrast.lo),
      ALOC_FIELD("acfg.contrast_hi", data.augment.contrast.hi),
      ALOC_FIELD("acfg.gamma_lo", data.augment.gamma.lo),
      ALOC_FIELD("acfg.gamma_hi", data.augment.gamma.hi),
      ALOC_FIELD("acfg.gain_lo", data.augment.gain.lo),
      ALOC_FIELD("acfg.gain_hi", data.augment.gain.hi),
      ALOC_FIELD("acfg.blur_sigma_lo", data.augment.blur_sigma.lo),
      ALOC_FIELD("acfg.blur_sigma_hi", data.augment.blur_sigma.hi),
      ALOC_FIELD("acfg.motion_blur_len_lo", data.augment.motion_blur_len.lo),
      ALOC_FIELD("acfg.motion_blur_len_hi", data.augment.motion_blur_len.hi),
      ALOC_FIELD("acfg.gaussian_noise_sigma", data.augment.gaussian_noise_sigma),
      ALOC_FIELD("acfg.rotation_deg", data.augment.rotation_deg),
      ALOC_FIELD("acfg.scale", data.augment.scale),
      ALOC_FIELD("acfg.p_brightness_contrast", data.augment.p_brightness_contrast),
      ALOC_FIELD("acfg.p_gamma", data.augment.p_gamma),
      ALOC_FIELD("acfg.p_gain", data.augment.p_gain),
      ALOC_FIELD("acfg.p_blur", data.augment.p_blur),
      ALOC_FIELD("acfg.p_motion_blur", data.augment.p_motion_blur),
      ALOC_FIELD("acfg.p_noise", data.augment.p_noise),
      ALOC_FIELD("acfg.p_geometric", data.augment.p_geometric),
  };
  return f;
}
#undef ALOC_FIELD

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

TrainConfig TrainConfig::defaults_for(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode == TrainMode::teacher_symmetric) {
    c.model = ModelSpec::preset("teacher");
    c.epochs = 30;
  }
  return c;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const DoubleField& f : double_fields())
    if (key == f.key) {
      f.put(*this, parse_double(key, value));
      return;
    }
  if (key == "mode") mode = parse_train_mode(value);
  else if (key == "epochs") epochs = static_cast<int>(parse_int(key, value));
  else if (key == "pairs_per_epoch") pairs_per_epoch = static_cast<int>(parse_int(key, value));
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "loss.terms") loss.terms = parse_loss_terms(value);
  else if (key == "model.variant") {
    const int d = model.descriptor_dim;
    if (value == "custom") model.variant = "custom";
    else model = ModelSpec::preset(value, d);
  } else if (key == "model.widths" || key == "model.kernels" || key == "model.strides") {
    std::vector<int>& field = key == "model.widths" ? model.widths : key == "model.kernels" ? model.kernels : model.strides;
    std::vector<int> parsed = parse_int_list(key, value);
    if (parsed != field) {
      field = std::move(parsed);
      model.variant = "custom";
    }
  } else if (key == "model.descriptor_dim") model.descriptor_dim = static_cast<int>(parse_int(key, value));
  else if (key == "teacher_checkpoint") teacher_checkpoint = value;
  else if (key == "n_keypoints") n_keypoints = static_cast<int>(parse_int(key, value));
  else if (key == "nms_radius") nms_radius = static_cast<int>(parse_int(key, value));
  else if (key == "image_width") data.size.width = static_cast<int>(parse_int(key, value));
  else if (key == "image_height") data.size.height = static_cast<int>(parse_int(key, value));
  else if (key == "data.corpus") data.corpus = value;
  else if (key == "data.max_images") data.max_images = static_cast<int>(parse_int(key, value));
  else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " lacks '='");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string TrainConfig::to_text() const {
  std::string s;
  auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("mode", to_string(mode));
  put("epochs", std::to_string(epochs));
  put("pairs_per_epoch", std::to_string(pairs_per_epoch));
  put("seed", std::to_string(seed));
  put("loss.terms", to_string(loss.terms));
  put("model.variant", model.variant);
  put("model.widths", join_ints(model.widths));
  put("model.kernels", join_ints(model.kernels));
  put("model.strides", join_ints(model.strides));
  put("model.descriptor_dim", std::to_string(model.descriptor_dim));
  put("teacher_checkpoint", teacher_checkpoint);
  put("n_keypoints", std::to_string(n_keypoints));
  put("nms_radius", std::to_string(nms_radius));
  put("image_width", std::to_string(data.size.width));
  put("image_height", std::to_string(data.size.height));
  put("data.corpus", data.corpus);
  put("data.max_images", std::to_string(data.max_images));
  for (const DoubleField& f : double_fields()) put(f.key, fmt_double(f.get(*this)));
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (pairs_per_epoch < 1) throw ConfigError("pairs_per_epoch must be at least 1");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (n_keypoints < 1) throw ConfigError("n_keypoints must be at least 1");
  if (nms_radius < 0) throw ConfigError("nms_radius must be non-negative");
  if (!(gt_tolerance_px > 0)) throw ConfigError("gt_tolerance_px must be positive");
  if (data.size.width < 16 || data.size.height < 16) throw ConfigError("image size must be at least 16x16");
  loss.validate();
  model.validate();
  const bool needs_teacher = mode == TrainMode::student_asymloc || mode == TrainMode::student_naive_distill;
  if (needs_teacher && teacher_checkpoint.empty())
    throw ConfigError(std::string("mode ") + to_string(mode) + " requires teacher_checkpoint");
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainMode mode) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig c = TrainConfig::defaults_for(mode);
  c.apply_text(ss.str());
  return c;
}

void adam_step(std::vector<TensorF>& params, const std::vector<TensorF>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i])) throw ShapeError("adam_step: gradient shape mismatch");
    if (!grads[i].all_finite()) throw NumericFault("adam_step: non-finite gradient in tensor " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (const TensorF& p : params) {
      state.m.emplace_back(p.dims(), 0.0f);
      state.v.emplace_back(p.dims(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = beta1 * m[k] + (1.0 - beta1) * gk;
      const double vk = beta2 * v[k] + (1.0 - beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mhat = mk / bc1, vhat = vk / bc2;
      p[k] = static_cast<float>(p[k] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

Model<float> model_of(const Checkpoint& ckpt) { return ckpt.model; }

namespace {

struct StepResult {
  LossBreakdown parts;
  std::vector<TensorF> grads;
};

std::vector<TensorF> collect_grads(Graph<float>& g, Var loss, const std::vector<Var>& params) {
  const std::map<int, TensorF> all = g.backward(loss);
  std::vector<TensorF> out;
  out.reserve(params.size());
  for (Var p : params) out.push_back(all.at(p.id));
  return out;
}

struct TeacherFeatures {
  std::vector<ops::Cell> cells_a, cells_b;
  TensorF conf_a, desc_a, conf_b, desc_b;
  CorrespondenceSet corr;
};

class Stepper {
 public:
  Stepper(const TrainConfig& cfg, const Model<float>* teacher) : cfg_(cfg), teacher_(teacher) {}

  /// Teacher keypoints are fixed for a pair, so they are computed once.
  TeacherFeatures teacher_features(const TrainingPair& pair) const {
    Graph<float> g;
    const std::vector<Var> tparams = bind_model(g, *teacher_, false);
    TeacherFeatures t;
    auto side = [&](const Image& img, std::vector<ops::Cell>& cells, std::vector<Point2>& pos, TensorF& conf,
                    TensorF& desc) {
      const DenseOutput<float> d = forward_dense(g, teacher_->spec, tparams, g.constant(image_tensor<float>(img)));
      const KeypointNodes<float> k = keypoints_at(g, d, detect_cells(g, d, cfg_.n_keypoints, cfg_.nms_radius));
      cells = k.cells;
      pos = k.positions;
      conf = g.value(k.confidence);
      desc = g.value(k.descriptor);
    };
    std::vector<Point2> pos_a, pos_b;
    side(pair.image_a, t.cells_a, pos_a, t.conf_a, t.desc_a);
    side(pair.image_b, t.cells_b, pos_b, t.conf_b, t.desc_b);
    t.corr = ground_truth_correspondences(pair.h_ab, pos_a, pos_b, cfg_.gt_tolerance_px);
    return t;
  }

  std::size_t teacher_feature_bytes() const {
    return 2 * static_cast<std::size_t>(cfg_.n_keypoints) * (cfg_.model.descriptor_dim + 1) * sizeof(float);
  }

  StepResult run(const Model<float>& model, const TrainingPair& pair, const TeacherFeatures* teacher_features) {
    Graph<float> g;
    const std::vector<Var> params = bind_model(g, model, true);
    const Var img_a = g.constant(image_tensor<float>(pair.image_a));
    const Var img_b = g.constant(image_tensor<float>(pair.image_b));
    LossNodes loss;
    switch (cfg_.mode) {
      case TrainMode::teacher_symmetric:
      case TrainMode::student_standard: {
        const DenseOutput<float> da = forward_dense(g, model.spec, params, img_a);
        const DenseOutput<float> db = forward_dense(g, model.spec, params, img_b);
        const KeypointNodes<float> ka = keypoints_at(g, da, detect_cells(g, da, cfg_.n_keypoints, cfg_.nms_radius));
        const KeypointNodes<float> kb = keypoints_at(g, db, detect_cells(g, db, cfg_.n_keypoints, cfg_.nms_radius));
        const CorrespondenceSet corr = ground_truth_correspondences(pair.h_ab, ka.positions, kb.positions, cfg_.gt_tolerance_px);
        loss = symmetric_loss(g, feature_vars(ka), feature_vars(kb), corr, cfg_.loss);
        break;
      }
      case TrainMode::student_naive_distill: {
        const std::vector<Var> tparams = bind_model(g, *teacher_, false);
        const DenseOutput<float> tb = forward_dense(g, teacher_->spec, tparams, img_b);
        const DenseOutput<float> sb = forward_dense(g, model.spec, params, img_b);
        TensorF prob = g.value(tb.det_logits);
        for (float& v : prob.data()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        loss.total = naive_distill_loss(g, sb.desc, tb.desc, sb.det_logits, prob);
        loss.parts.total = g.value(loss.total)[0];
        break;
      }
      case TrainMode::student_asymloc: {
        const TeacherFeatures& t = *teacher_features;
        const FeatureVars ta{g.constant(t.conf_a), g.constant(t.desc_a)};
        const FeatureVars tb{g.constant(t.conf_b), g.constant(t.desc_b)};
        const bool need_a = cfg_.loss.terms != LossTerms::match_only && cfg_.loss.lambda_kd > 0;
        const DenseOutput<float> sb = forward_dense(g, model.spec, params, img_b);
        const FeatureVars ksb = feature_vars(keypoints_at(g, sb, t.cells_b));
        FeatureVars sa = ta;
        if (need_a) {
          const DenseOutput<float> sda = forward_dense(g, model.spec, params, img_a);
          sa = feature_vars(keypoints_at(g, sda, t.cells_a));
        }
        loss = asymloc_total_loss(g, ta, tb, sa, ksb, t.corr, cfg_.loss);
        break;
      }
    }
    if (!std::isfinite(loss.parts.total)) throw NumericFault("non-finite loss");
    StepResult r;
    r.parts = loss.parts;
    r.grads = collect_grads(g, loss.total, params);
    return r;
  }

 private:
  const TrainConfig& cfg_;
  const Model<float>* teacher_;
};

constexpr std::size_t kCacheBudget = std::size_t{1} << 30;

std::string epoch_line(int epoch, double mean_total, long long steps) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%d mean_total=%.9g steps=%lld", epoch, mean_total, steps);
  return buf;
}

Checkpoint snapshot(const Model<float>& model, const AdamState& adam, const TrainConfig& cfg, int epochs_done,
                    long long step) {
  Checkpoint c;
  c.model = model;
  c.metadata["train.epochs_done"] = std::to_string(epochs_done);
  c.metadata["train.step"] = std::to_string(step);
  c.metadata["train.seed"] = std::to_string(cfg.seed);
  c.metadata["train.mode"] = to_string(cfg.mode);
  c.metadata["adam.t"] = std::to_string(adam.t);
  std::istringstream cfg_lines(cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) {
    const auto eq = line.find('=');
    c.metadata["config." + line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    c.extra.push_back({"adam.m." + model.names[i], adam.m[i]});
    c.extra.push_back({"adam.v." + model.names[i], adam.v[i]});
  }
  return c;
}

TrainResult run_training(const TrainConfig& cfg, const TrainOptions& opts, Model<float> model, AdamState adam,
                         int start_epoch, long long step) {
  std::optional<Model<float>> teacher;
  if (cfg.mode == TrainMode::student_asymloc || cfg.mode == TrainMode::student_naive_distill) {
    teacher = load_checkpoint(cfg.teacher_checkpoint).model;
    if (teacher->spec.descriptor_dim != cfg.model.descriptor_dim)
      throw ConfigError("teacher descriptor dim " + std::to_string(teacher->spec.descriptor_dim) +
                        " differs from student " + std::to_string(cfg.model.descriptor_dim));
    if (teacher->spec.total_stride() != cfg.model.total_stride())
      throw ConfigError("teacher and student must share the same total stride");
  }
  const PairSource source(cfg.data, cfg.seed);
  Stepper stepper(cfg, teacher ? &*teacher : nullptr);

  TrainResult result;
  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log_file.open(opts.out_dir / "train.log", start_epoch > 0 ? std::ios::app : std::ios::trunc);
  }
  auto emit = [&](const std::string& line) {
    result.log.push_back(line);
    if (log_file) log_file << line << '\n';
    if (opts.log_sink) opts.log_sink(line);
  };

  // Pairs (and, for asymloc, teacher features) are pure in the pair index, so
  // they are kept across epochs while they fit in kCacheBudget.
  const int n = cfg.pairs_per_epoch;
  const bool asym = cfg.mode == TrainMode::student_asymloc;
  const std::size_t pair_bytes = 2 * static_cast<std::size_t>(cfg.data.size.width) * cfg.data.size.height * sizeof(float);
  const std::size_t per_pair = pair_bytes + (asym ? stepper.teacher_feature_bytes() : 0);
  const bool cache = cfg.epochs - start_epoch > 1 && per_pair * static_cast<std::size_t>(n) <= kCacheBudget;
  std::vector<std::optional<TrainingPair>> pair_cache(cache ? n : 0);
  std::vector<std::optional<TeacherFeatures>> teacher_cache(cache && asym ? n : 0);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    double sum = 0;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, "order", static_cast<std::uint64_t>(epoch)));
    for (int k = n - 1; k > 0; --k) std::swap(order[k], order[order_rng.below(static_cast<std::uint64_t>(k) + 1)]);
    for (int i : order) {
      std::optional<TrainingPair> fresh;
      std::optional<TeacherFeatures> fresh_t;
      std::optional<TrainingPair>& pslot = cache ? pair_cache[i] : fresh;
      if (!pslot) pslot = source.pair("train", static_cast<std::uint64_t>(i));
      const TeacherFeatures* tf = nullptr;
      if (asym) {
        std::optional<TeacherFeatures>& tslot = cache ? teacher_cache[i] : fresh_t;
        if (!tslot) tslot = stepper.teacher_features(*pslot);
        tf = &*tslot;
      }
      StepResult r;
      try {
        r = stepper.run(model, *pslot, tf);
        adam_step(model.tensors, r.grads, adam, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      } catch (const NumericFault& e) {
        throw NumericFault(std::string(e.what()) + " at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ", pair " + std::to_string(i) + ")");
      }
      sum += r.parts.total;
      emit(r.parts.log_line(step));
      ++step;
    }
    const double mean_total = sum / cfg.pairs_per_epoch;
    result.epoch_mean_total.push_back(mean_total);
    emit(epoch_line(epoch, mean_total, step));
    if (!opts.out_dir.empty()) {
      const Checkpoint c = snapshot(model, adam, cfg, epoch + 1, step);
      save_checkpoint(c, opts.out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".aloc"));
    }
  }
  result.checkpoint = snapshot(model, adam, cfg, std::max(start_epoch, cfg.epochs), step);
  if (!opts.out_dir.empty()) save_checkpoint(result.checkpoint, opts.out_dir / "model.aloc");
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts) {
  if (opts.resume_from) return resume(*opts.resume_from, cfg, opts);
  cfg.validate();
  Rng init(derive_seed(cfg.seed, "init"));
  return run_training(cfg, opts, build_model(cfg.model, init), AdamState{}, 0, 0);
}

TrainResult resume(const Checkpoint& ckpt, const TrainConfig& cfg, TrainOptions opts) {
  cfg.validate();
  if (!(ckpt.model.spec == cfg.model)) throw ConfigError("checkpoint model spec does not match the configured model");
  auto meta = [&](const std::string& key) -> long long {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw ConfigError("checkpoint lacks '" + key + "'; it was not written by train");
    return parse_int(key, it->second);
  };
  const int epochs_done = static_cast<int>(meta("train.epochs_done"));
  const long long step = meta("train.step");
  AdamState adam;
  adam.t = meta("adam.t");
  if (adam.t > 0) {
    for (const std::string& name : ckpt.model.names) {
      const TensorF* m = nullptr;
      const TensorF* v = nullptr;
      for (const NamedTensor& e : ckpt.extra) {
        if (e.name == "adam.m." + name) m = &e.tensor;
        if (e.name == "adam.v." + name) v = &e.tensor;
      }
      if (!m || !v) throw CorruptionError("checkpoint lacks optimizer state for " + name);
      adam.m.push_back(*m);
      adam.v.push_back(*v);
    }
  }
  opts.resume_from.reset();
  return run_training(cfg, opts, ckpt.model, std::move(adam), epochs_done, step);
}

}  // namespace asymloc
