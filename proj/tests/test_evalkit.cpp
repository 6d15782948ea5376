#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "asymloc/errors.hpp"
#include "asymloc/evalkit.hpp"
#include "asymloc/io.hpp"
#include "doctest.h"

using namespace asymloc;
namespace fs = std::filesystem;

namespace {

const Model<float>& small_teacher() {
  static const Model<float> m = [] {
    TrainConfig c = TrainConfig::defaults_for(TrainMode::teacher_symmetric);
    c.model = ModelSpec::custom({16, 16}, {3, 3}, {2, 1}, 16);
    c.data.size = {64, 64};
    c.epochs = 3;
    c.pairs_per_epoch = 30;
    c.seed = 21;
    return train(c).checkpoint.model;
  }();
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("evalkit") {
  TEST_CASE("precision and recall conventions") {
    const std::vector<Point2> pa{{0, 0}, {10, 0}, {20, 0}, {30, 0}, {40, 0}, {50, 0}};
    const std::vector<Point2> pb = pa;
    const Homography id;
    CorrespondenceSet gt;
    for (int i = 0; i < 6; ++i) gt.pairs.emplace_back(i, i);

    MatchSet exact;
    for (auto [i, j] : gt.pairs) exact.pairs.push_back({i, j, 1.0});
    PrecisionRecall pr = match_precision_recall(exact, gt, pa, pb, id, 3.0);
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 1.0);

    pr = match_precision_recall(MatchSet{}, gt, pa, pb, id, 3.0);
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 0.0);

    const MatchSet partial{{{0, 0, 1}, {1, 1, 1}, {2, 2, 1}, {3, 5, 1}}};
    pr = match_precision_recall(partial, gt, pa, pb, id, 3.0);
    CHECK(pr.precision == 0.75);
    CHECK(pr.recall == 0.5);
    CHECK(pr.correct == 3);

    pr = match_precision_recall(MatchSet{}, CorrespondenceSet{}, pa, pb, id, 3.0);
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 1.0);
    CHECK_THROWS_AS(match_precision_recall(exact, gt, pa, pb, id, 0.0), ContractError);
  }

  TEST_CASE("identity pairs are solved exactly") {
    const Model<float>& t = small_teacher();
    DataConfig dc;
    dc.size = {64, 64};
    std::vector<TrainingPair> pairs = make_eval_pairs(dc, 3, 10);
    for (auto& p : pairs) {
      p.image_b = p.image_a;
      p.h_ab = Homography();
    }
    const Extractor e{"teacher", &t, 256, 1};
    const EvalResult r = homography_estimation_accuracy(pairs, e, e, EvalOptions{});
    CHECK(r.hea_at(1.0) == 1.0);
    CHECK(r.ransac_failures == 0);
    CHECK(r.pair_count == 10);
  }

  TEST_CASE("an untrained model does not localize") {
    Rng rng(5);
    const Model<float> m = build_model(ModelSpec::custom({16, 16}, {3, 3}, {2, 1}, 16), rng);
    DataConfig dc;
    dc.size = {64, 64};
    const auto pairs = make_eval_pairs(dc, 8, 30);
    const Extractor e{"untrained", &m, 256, 1};
    const EvalResult r = homography_estimation_accuracy(pairs, e, e, EvalOptions{});
    CHECK(r.hea_at(1.0) < 0.1);
  }

  TEST_CASE("accuracy is monotone in the threshold and reproducible") {
    const Model<float>& t = small_teacher();
    DataConfig dc;
    dc.size = {64, 64};
    const auto pairs = make_eval_pairs(dc, 4, 12);
    const Extractor e{"teacher", &t, 256, 1};
    EvalOptions o;
    o.eps = {0.5, 1, 2, 3, 5, 10};
    o.randomize_sides = true;
    const EvalResult a = homography_estimation_accuracy(pairs, e, e, o);
    for (std::size_t i = 1; i < a.hea.size(); ++i) CHECK(a.hea[i] >= a.hea[i - 1]);
    for (double h : a.hea) CHECK((h >= 0.0 && h <= 1.0));
    const EvalResult b = homography_estimation_accuracy(pairs, e, e, o);
    CHECK(format_table(eval_table({a})) == format_table(eval_table({b})));
    CHECK_THROWS_AS(a.hea_at(4.0), ContractError);
    o.eps = {3, 1};
    CHECK_THROWS_AS(homography_estimation_accuracy(pairs, e, e, o), ContractError);
    CHECK_THROWS_AS(homography_estimation_accuracy({}, e, e, EvalOptions{}), ArityError);
  }

  TEST_CASE("held-out pairs differ from the training stream") {
    DataConfig dc;
    dc.size = {64, 64};
    const auto eval = make_eval_pairs(dc, 1, 3);
    const PairSource src(dc, 1);
    for (int i = 0; i < 3; ++i) CHECK_FALSE(eval[static_cast<std::size_t>(i)].image_a == src.pair("train", i).image_a);
  }

  TEST_CASE("number formatting") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1.0 / 3.0) == "0.333333333");
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(std::isinf(parse_number("inf")));
    CHECK(parse_number("2.5") == 2.5);
    CHECK_THROWS_AS(parse_number("2.5x"), FormatError);
    CHECK_THROWS_AS(parse_number(""), FormatError);
  }

  TEST_CASE("tables round trip through text") {
    ReportTable t{{"a", "b"}, {{"1", "x"}, {"inf", ""}}};
    CHECK(parse_table(format_table(t)) == t);
    ReportTable bad{{"a"}, {{"x\ty"}}};
    CHECK_THROWS_AS(format_table(bad), FormatError);
    ReportTable ragged{{"a", "b"}, {{"1"}}};
    CHECK_THROWS_AS(format_table(ragged), ContractError);

    const fs::path dir = fs::temp_directory_path() / "asymloc_report_test";
    fs::remove_all(dir);
    emit_report(t, {{"seed", "3"}}, dir);
    CHECK(parse_table(slurp(dir / "results.tsv")) == t);
    CHECK(slurp(dir / "metadata.txt").find("seed") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("ordering helpers") {
    CHECK(clearly_less(0.5, 0.52, 0.01));
    CHECK_FALSE(clearly_less(0.5, 0.505, 0.01));
    CHECK(less_or_tied(0.505, 0.5, 0.01));
    CHECK_FALSE(less_or_tied(0.52, 0.5, 0.01));
    CHECK(peak_is_interior({0.1, 0.5, 0.3}, 0.01));
    CHECK(peak_is_interior({0.505, 0.5, 0.3}, 0.01));
    CHECK_FALSE(peak_is_interior({0.1, 0.2, 0.3}, 0.01));
    CHECK_FALSE(peak_is_interior({0.1, 0.2}, 0.01));

    const auto terms = default_axis_values(AblationAxis::loss_terms);
    CHECK(ablation_ordering_failure(AblationAxis::loss_terms, terms, {0.2, 0.4, 0.41}, 0.01).empty());
    CHECK_FALSE(ablation_ordering_failure(AblationAxis::loss_terms, terms, {0.2, 0.205, 0.3}, 0.01).empty());
    CHECK_FALSE(ablation_ordering_failure(AblationAxis::loss_terms, terms, {0.2, 0.4, 0.3}, 0.01).empty());
    CHECK(ablation_ordering_failure(AblationAxis::lambda_kd, {"4", "0", "2", "1"}, {0.3, 0.1, 0.5, 0.4}, 0.01).empty());
    CHECK_FALSE(ablation_ordering_failure(AblationAxis::lambda_kd, {"0", "1", "2", "4"}, {0.1, 0.2, 0.3, 0.6}, 0.01).empty());
    CHECK(ablation_ordering_failure(AblationAxis::temperatures, {"1,1", "0.5,0.5"}, {0.9, 0.1}, 0.01).empty());
    CHECK_THROWS_AS(ablation_ordering_failure(AblationAxis::temperatures, {"1,1"}, {0.9, 0.1}, 0.01), ArityError);
  }

  TEST_CASE("ablation axes and grids") {
    CHECK(default_axis_values(AblationAxis::lambda_kd) == std::vector<std::string>{"0", "1", "2", "4"});
    CHECK(default_axis_values(AblationAxis::temperatures) ==
          std::vector<std::string>{"1,1", "0.5,0.5", "0.1,0.1", "0.5,0.1"});
    CHECK(default_axis_values(AblationAxis::loss_terms) == std::vector<std::string>{"match_only", "kd_only", "both"});
    for (AblationAxis a : {AblationAxis::lambda_kd, AblationAxis::temperatures, AblationAxis::loss_terms})
      CHECK(parse_ablation_axis(to_string(a)) == a);
    CHECK_THROWS_AS(parse_ablation_axis("width"), ConfigError);

    const TrainConfig base = TrainConfig::defaults_for(TrainMode::student_asymloc);
    const TrainConfig t = apply_axis_value(base, AblationAxis::temperatures, "0.5,0.1");
    CHECK(t.loss.tau_s == 0.5);
    CHECK(t.loss.tau_t == 0.1);
    CHECK(apply_axis_value(base, AblationAxis::lambda_kd, "4").loss.lambda_kd == 4.0);
    CHECK(apply_axis_value(base, AblationAxis::loss_terms, "kd_only").loss.terms == LossTerms::kd_only);
    CHECK_THROWS_AS(apply_axis_value(base, AblationAxis::temperatures, "0.5"), ConfigError);
  }

  TEST_CASE("configs without distillation share a training key") {
    TrainConfig base = TrainConfig::defaults_for(TrainMode::student_asymloc);
    base.teacher_checkpoint = "t.aloc";
    const TrainConfig zero = apply_axis_value(base, AblationAxis::lambda_kd, "0");
    const TrainConfig match = apply_axis_value(base, AblationAxis::loss_terms, "match_only");
    CHECK(canonical_training_key(zero) == canonical_training_key(match));
    CHECK(canonical_training_key(base) != canonical_training_key(match));
    CHECK(canonical_training_key(apply_axis_value(base, AblationAxis::loss_terms, "kd_only")) !=
          canonical_training_key(match));
  }

  TEST_CASE("efficiency curve reports unusable checkpoints") {
    const fs::path dir = fs::temp_directory_path() / "asymloc_curve_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "junk.aloc") << "nope";
    Rng rng(2);
    Checkpoint small;
    small.model = build_model(ModelSpec::custom({8, 16}, {3, 3}, {2, 1}, 16), rng);
    save_checkpoint(small, dir / "small.aloc");
    DataConfig dc;
    dc.size = {64, 64};
    const auto pairs = make_eval_pairs(dc, 1, 2);
    const auto rows = efficiency_curve({{"junk", dir / "junk.aloc"}, {"small", dir / "small.aloc"}}, nullptr, pairs,
                                       EvalOptions{}, 3.0);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].variant == "junk");
    CHECK_FALSE(rows[0].error.empty());
    CHECK(rows[1].error.empty());
    CHECK(rows[1].params == count_params(small.model.spec));
    fs::remove_all(dir);
  }
}
