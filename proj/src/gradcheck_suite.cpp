#include "asymloc/gradcheck_suite.hpp"

#include <cmath>

#include "asymloc/datagen.hpp"
#include "asymloc/errors.hpp"
#include "asymloc/features.hpp"
#include "asymloc/objectives.hpp"
#include "asymloc/ops.hpp"

namespace asymloc {

namespace {

constexpr int kSide = 32;
constexpr int kKeypoints = 8;
constexpr int kDim = 8;
constexpr int kNms = 1;

std::vector<double> flatten(const Model<double>& m) {
  std::vector<double> out;
  for (const auto& t : m.tensors) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

Model<double> unflatten(const Model<double>& layout, std::span<const double> theta) {
  Model<double> m = layout;
  std::size_t k = 0;
  for (auto& t : m.tensors)
    for (double& v : t.data()) v = theta[k++];
  return m;
}

struct TeacherSide {
  std::vector<ops::Cell> cells;
  std::vector<Point2> positions;
  TensorD conf;
  TensorD desc;
};

TeacherSide teacher_features(const Model<double>& teacher, const Image& img) {
  Graph<double> g;
  const auto params = bind_model(g, teacher, false);
  const DenseOutput<double> d = forward_dense(g, teacher.spec, params, g.constant(image_tensor<double>(img)));
  const KeypointNodes<double> k = keypoints_at(g, d, detect_cells(g, d, kKeypoints, kNms));
  return {k.cells, k.positions, g.value(k.confidence), g.value(k.descriptor)};
}

// Signs of every pre-activation the loss can see, flattened.
using Pattern = std::vector<std::int8_t>;

struct Instance {
  Model<double> student;
  TeacherSide ta, tb;
  CorrespondenceSet corr;
  Image image_a, image_b;
  LossConfig cfg;
};

struct Evaluation {
  double loss = 0.0;
  std::vector<double> grad;
  Pattern pattern;
  std::vector<std::uint8_t> relevant;
};

// Builds the graph for the full objective. With `teacher_as_params`, the
// teacher features enter as parameters so their gradient can be inspected.
Evaluation evaluate(const Instance& inst, const Model<double>& student, bool want_grad, bool teacher_as_params,
                    bool* teacher_zero = nullptr) {
  Graph<double> g;
  const auto params = bind_model(g, student, want_grad);
  auto leaf = [&](const TensorD& t) { return teacher_as_params ? g.parameter(t) : g.constant(t); };
  const FeatureVars ta{leaf(inst.ta.conf), leaf(inst.ta.desc)};
  const FeatureVars tb{leaf(inst.tb.conf), leaf(inst.tb.desc)};
  const DenseOutput<double> sa = forward_dense(g, student.spec, params, g.constant(image_tensor<double>(inst.image_a)));
  const DenseOutput<double> sb = forward_dense(g, student.spec, params, g.constant(image_tensor<double>(inst.image_b)));
  const KeypointNodes<double> ka = keypoints_at(g, sa, inst.ta.cells);
  const KeypointNodes<double> kb = keypoints_at(g, sb, inst.tb.cells);
  const LossNodes loss = asymloc_total_loss(g, ta, tb, feature_vars(ka), feature_vars(kb), inst.corr, inst.cfg);

  Evaluation ev;
  ev.loss = g.value(loss.total)[0];
  for (const auto* dense : {&sa, &sb})
    for (Var z : dense->pre_activations)
      for (double v : g.value(z).data()) ev.pattern.push_back(v > 0 ? 1 : (v < 0 ? -1 : 0));
  if (!want_grad) return ev;
  const auto grads = g.backward(loss.total);
  for (Var p : params) {
    const auto& t = grads.at(p.id);
    ev.grad.insert(ev.grad.end(), t.data().begin(), t.data().end());
  }
  // A unit matters when the loss would feel its activation.
  for (const auto* dense : {&sa, &sb})
    for (Var a : dense->activations)
      for (double v : g.grad(a).data()) ev.relevant.push_back(v != 0.0 ? 1 : 0);
  if (teacher_zero) {
    bool zero = true;
    for (Var v : {ta.confidence, ta.descriptor, tb.confidence, tb.descriptor})
      for (double x : grads.at(v.id).data()) zero = zero && x == 0.0;
    *teacher_zero = zero;
  }
  return ev;
}

Instance make_instance(std::uint64_t seed) {
  Rng rng(seed);
  Instance inst;
  const ModelSpec tspec = ModelSpec::custom({8, 8}, {3, 3}, {1, 2}, kDim);
  const ModelSpec sspec = ModelSpec::custom({4, 8}, {3, 3}, {1, 2}, kDim);
  const Model<double> teacher = build_model(tspec, rng).cast<double>();
  inst.student = build_model(sspec, rng).cast<double>();
  // Non-zero biases keep the micro student away from symmetric dead units.
  for (std::size_t i = 1; i < inst.student.tensors.size(); i += 2)
    for (double& b : inst.student.tensors[i].data()) b += 0.1 * rng.normal();

  const Image base = synth_base_image(rng, {kSide, kSide});
  HomographySamplerConfig h;
  h.max_corner_perturb_frac = 0.05;
  h.max_rotation_deg = 10;
  h.scale_range = 0.1;
  h.translation_frac = 0.05;
  const TrainingPair pair = generate_pair(base, rng, h, AugmentConfig::none());
  inst.image_a = pair.image_a;
  inst.image_b = pair.image_b;
  inst.ta = teacher_features(teacher, inst.image_a);
  inst.tb = teacher_features(teacher, inst.image_b);
  inst.corr = ground_truth_correspondences(pair.h_ab, inst.ta.positions, inst.tb.positions, 3.0);
  return inst;
}

bool has_gated_pairs(const Instance& inst) {
  for (auto [i, j] : inst.corr.pairs)
    if (inst.ta.conf[static_cast<std::size_t>(i)] > inst.cfg.tau_d && inst.tb.conf[static_cast<std::size_t>(j)] > inst.cfg.tau_d)
      return true;
  return false;
}

}  // namespace

GradcheckSuiteResult run_gradcheck_suite(const GradcheckSuiteOptions& opts) {
  GradcheckSuiteResult res;
  for (int attempt = 0; attempt < opts.max_instances; ++attempt) {
    const std::uint64_t seed = derive_seed(opts.seed, "gradcheck", static_cast<std::uint64_t>(attempt));
    const Instance inst = make_instance(seed);
    if (inst.ta.cells.size() != kKeypoints || inst.tb.cells.size() != kKeypoints || !has_gated_pairs(inst)) {
      ++res.rejected_instances;
      continue;
    }
    bool teacher_zero = false;
    const Evaluation base = evaluate(inst, inst.student, true, true, &teacher_zero);
    const std::vector<double> theta = flatten(inst.student);

    bool stable = true;
    auto fn = [&](std::span<const double> t) {
      const Evaluation e = evaluate(inst, unflatten(inst.student, t), false, false);
      for (std::size_t u = 0; u < e.pattern.size() && stable; ++u)
        if (base.relevant[u] && e.pattern[u] != base.pattern[u]) stable = false;
      return e.loss;
    };
    const GradCheckReport report = finite_difference_check(fn, theta, base.grad, opts.h);
    if (!stable) {
      ++res.rejected_instances;
      continue;
    }
    res.instance_seed = seed;
    res.teacher_gradients_zero = teacher_zero;
    res.cases.push_back({"asymloc_total", report, report.max_rel_error < opts.tolerance});
    res.max_rel_error = report.max_rel_error;
    res.passed = res.cases.back().passed && teacher_zero;
    return res;
  }
  throw NumericFault("gradcheck: no instance with a stable activation pattern within " +
                     std::to_string(opts.max_instances) + " seeds");
}

}  // namespace asymloc
