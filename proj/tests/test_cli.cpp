#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asymloc/cli.hpp"
#include "asymloc/datagen.hpp"
#include "asymloc/io.hpp"
#include "asymloc/matching.hpp"
#include "doctest.h"

using namespace asymloc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Writes an untrained micro model; the CLI plumbing does not care about quality.
fs::path micro_model(const fs::path& dir) {
  Rng rng(1);
  Checkpoint c;
  c.model = build_model(ModelSpec::custom({8, 16}, {3, 3}, {2, 1}, 16), rng);
  save_checkpoint(c, dir / "m.aloc");
  return dir / "m.aloc";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with code 2") {
    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"frobnicate"}).code == cli::kExitUsage);
    CHECK(invoke({"extract", "--model", "x"}).code == cli::kExitUsage);
    CHECK(invoke({"--version"}).out.find("asymloc") != std::string::npos);
    const std::string cmd = std::string(ASYMLOC_CLI_PATH) + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == cli::kExitUsage);
  }

  TEST_CASE("runtime faults exit with code 1") {
    const fs::path dir = fresh("asymloc_cli_fault");
    const Run r = invoke({"extract", "--model", (dir / "missing.aloc").string(), "--images", dir.string(), "--out",
                       (dir / "f").string()});
    CHECK(r.code == cli::kExitFault);
    CHECK(r.err.find("error") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("gradcheck passes") {
    const Run r = invoke({"gradcheck"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("teacher_gradients_zero=1") != std::string::npos);
  }

  TEST_CASE("extract then match equals the in-process pipeline") {
    const fs::path dir = fresh("asymloc_cli_pipeline");
    const fs::path model = micro_model(dir);
    fs::create_directories(dir / "imgs");
    Rng rng(4);
    std::vector<Image> imgs;
    for (int i = 0; i < 3; ++i) {
      imgs.push_back(synth_base_image(rng, {64, 64}));
      save_pgm(imgs.back(), dir / "imgs" / ("im" + std::to_string(i) + ".pgm"));
    }
    REQUIRE(invoke({"extract", "--model", model.string(), "--images", (dir / "imgs").string(), "--out",
                 (dir / "feats").string(), "--num-keypoints", "64", "--nms-radius", "1"})
                .code == 0);
    CHECK(fs::exists(dir / "feats" / "config.txt"));
    REQUIRE(invoke({"match", "--query", (dir / "feats" / "im0.alft").string(), "--map", (dir / "feats").string(), "--out",
                 (dir / "m.txt").string()})
                .code == 0);

    const Model<float> m = load_checkpoint(model).model;
    std::vector<KeypointSet> ks;
    for (int i = 0; i < 3; ++i)
      ks.push_back(extract_features(m, load_image(dir / "imgs" / ("im" + std::to_string(i) + ".pgm")), 64, 1));
    std::string expect;
    for (int i = 0; i < 3; ++i) {
      std::istringstream lines(format_matches(mutual_nearest_neighbors(ks[0], ks[static_cast<std::size_t>(i)]), ks[0],
                                              ks[static_cast<std::size_t>(i)]));
      std::string line;
      while (std::getline(lines, line)) expect += "im" + std::to_string(i) + '\t' + line + '\n';
    }
    CHECK(slurp(dir / "m.txt") == expect);
    fs::remove_all(dir);
  }

  TEST_CASE("eval output is byte-identical on repeat") {
    const fs::path dir = fresh("asymloc_cli_eval");
    const fs::path model = micro_model(dir);
    auto args = [&](const std::string& out) {
      return std::vector<std::string>{"eval",        "--model-a", model.string(), "--pairs", "4",
                                      "--set",       "image_width=64", "--set", "image_height=64",
                                      "--num-keypoints", "64", "--out", (dir / out).string()};
    };
    const Run a = invoke(args("a")), b = invoke(args("b"));
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(slurp(dir / "a" / "results.tsv") == slurp(dir / "b" / "results.tsv"));
    CHECK(slurp(dir / "a" / "config.txt") == slurp(dir / "b" / "config.txt"));

    auto strict = args("c");
    strict.insert(strict.end(), {"--expect-min-hea", "1:1.01"});
    CHECK(invoke(strict).code == cli::kExitAssertion);
    fs::remove_all(dir);
  }

  TEST_CASE("train-student rejects a missing teacher") {
    const fs::path dir = fresh("asymloc_cli_train");
    const Run r = invoke({"train-student", "--mode", "asymloc", "--out", (dir / "s").string()});
    CHECK(r.code == cli::kExitFault);
    fs::remove_all(dir);
  }
}
