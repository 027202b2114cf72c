#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "support.hpp"

using namespace changeflow;
using namespace changeflow::cli;
using testing::scratch_dir;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome run_cli(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const std::string cmd = env + " " CHANGEFLOW_CLI_PATH " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(dir / "stdout.txt"), slurp(dir / "stderr.txt")};
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

/// Small images and a tiny model so the end-to-end path runs in seconds.
nlohmann::json tiny_run_config() {
  return {{"generator",
           {{"image_size", 16}, {"min_object_size", 3}, {"max_object_size", 7}, {"target_fraction", 0.12},
            {"fraction_tolerance", 0.1}}},
          {"flow",
           {{"image_size", 16}, {"feature_channels", 4}, {"encoder_channels", 4}, {"model_width", 16},
            {"model_depth", 1}, {"model_heads", 2}, {"time_freq_dim", 8}, {"epochs", 1}, {"batch_size", 8},
            {"steps", 3}, {"repetitions", 2}}}};
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("stage seeds are distinct and deterministic") {
  const auto a = stage_seed(1, Stage::generator), b = stage_seed(1, Stage::codec);
  CHECK(a != b);
  CHECK(stage_seed(1, Stage::flow) != stage_seed(1, Stage::inference));
  CHECK(stage_seed(1, Stage::generator) == a);
  CHECK(stage_seed(2, Stage::generator) != a);
}

TEST_CASE("the seed flag wins over the environment, which is the fallback") {
  ::unsetenv("CHANGEFLOW_SEED");
  CHECK_FALSE(resolve_seed(std::nullopt).has_value());
  ::setenv("CHANGEFLOW_SEED", "1234", 1);
  CHECK(resolve_seed(std::nullopt) == 1234u);
  CHECK(resolve_seed(7u) == 7u);
  ::setenv("CHANGEFLOW_SEED", "abc", 1);
  CHECK_THROWS_AS(resolve_seed(std::nullopt), InvalidArgument);
  ::unsetenv("CHANGEFLOW_SEED");
}

TEST_CASE("config files with unknown keys are rejected") {
  const auto dir = scratch_dir("cli_config");
  write_json(dir / "bad.json", {{"flow", {{"stepps", 3}}}});
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), InvalidArgument);
  write_json(dir / "section.json", {{"optimizer", {}}});
  CHECK_THROWS_AS(load_run_config(dir / "section.json"), InvalidArgument);
  write_json(dir / "good.json", tiny_run_config());
  const auto c = load_run_config(dir / "good.json");
  CHECK(c.flow.model_width == 16);
  CHECK(c.generator.image_size == 16);

  const auto r = run_cli("gen-data --config " + (dir / "bad.json").string() + " --out " + (dir / "d").string(), dir);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(r.err.find("stepps") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical for a fixed seed, by flag or environment") {
  const auto dir = scratch_dir("cli_gen");
  write_json(dir / "cfg.json", tiny_run_config());
  const std::string base = "gen-data --config " + (dir / "cfg.json").string() + " --count 25 --out ";
  REQUIRE(run_cli(base + (dir / "a").string() + " --seed 9", dir).code == 0);
  REQUIRE(run_cli(base + (dir / "b").string() + " --seed 9", dir).code == 0);
  REQUIRE(run_cli(base + (dir / "c").string(), dir, "CHANGEFLOW_SEED=9").code == 0);
  REQUIRE(run_cli(base + (dir / "d").string() + " --seed 10", dir).code == 0);
  const auto files = files_under(dir / "a");
  CHECK(files.size() == 25 * 3 + 1);
  CHECK(files == files_under(dir / "b"));
  CHECK(files == files_under(dir / "c"));
  for (const auto& f : files) {
    CAPTURE(f.string());
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(slurp(dir / "a" / f) == slurp(dir / "c" / f));
  }
  CHECK(slurp(dir / "a" / "manifest.json") != slurp(dir / "d" / "manifest.json"));
}

TEST_CASE("an infeasible generator setting fails with one error line") {
  const auto dir = scratch_dir("cli_infeasible");
  const auto r = run_cli("gen-data --out " + (dir / "d").string() + " --count 5 --change-fraction 0.95", dir);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("a missing checkpoint fails with one error line naming it") {
  const auto dir = scratch_dir("cli_missing");
  const auto r = run_cli("infer --model " + (dir / "nope.ckpt").string() + " --out " + (dir / "o").string() +
                             " --data " + (dir / "data").string(),
                         dir);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(r.err.find("nope.ckpt") != std::string::npos);
}

TEST_CASE("evaluating the ground truth against itself is perfect") {
  const auto dir = scratch_dir("cli_eval");
  write_json(dir / "cfg.json", tiny_run_config());
  REQUIRE(run_cli("gen-data --config " + (dir / "cfg.json").string() + " --count 20 --seed 3 --out " +
                      (dir / "d").string(),
                  dir)
              .code == 0);
  EvalOptions opts;
  opts.pred = dir / "d" / "train" / "mask";
  opts.gt = opts.pred;
  opts.out = dir / "report";
  const auto s = cmd_eval(opts);
  CHECK(s.metrics.f1 == 1.0);
  CHECK(s.metrics.fp == 0);
  CHECK(s.coherence.cc_deviation == 0.0);
  CHECK(fs::exists(dir / "report" / "metrics.csv"));
  CHECK(fs::exists(dir / "report" / "coherence.csv"));
}

TEST_CASE("train, infer with traces and eval run end to end") {
  const auto dir = scratch_dir("cli_e2e");
  write_json(dir / "cfg.json", tiny_run_config());
  const std::string cfg = " --config " + (dir / "cfg.json").string() + " --seed 5";
  const auto data = (dir / "d").string();
  REQUIRE(run_cli("gen-data" + cfg + " --count 40 --out " + data, dir).code == 0);
  const auto tr = run_cli("train" + cfg + " --data " + data + " --codec identity --out " + (dir / "m.ckpt").string() +
                              " --loss-csv " + (dir / "loss.csv").string(),
                          dir);
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(fs::exists(dir / "loss.csv"));
  const auto inf = run_cli("infer" + cfg + " --model " + (dir / "m.ckpt").string() + " --data " + data +
                               " --split val --trace --out " + (dir / "pred").string(),
                           dir);
  REQUIRE_MESSAGE(inf.code == 0, inf.err);
  const auto val = load_split(data, Split::val);
  REQUIRE_FALSE(val.empty());
  for (const auto& s : val) {
    CHECK(fs::exists(dir / "pred" / "mask" / (s.id + ".png")));
    CHECK(fs::exists(dir / "pred" / "conf" / (s.id + ".png")));
    CHECK(files_under(dir / "pred" / "trace" / s.id).size() == 3);
  }
  const auto sidecar = nlohmann::json::parse(slurp(dir / "pred" / "sidecar.json"));
  CHECK(sidecar.contains("steps"));
  const auto ev = run_cli("eval --pred " + (dir / "pred" / "mask").string() + " --conf " +
                              (dir / "pred" / "conf").string() + " --data " + data + " --split val --out " +
                              (dir / "report").string(),
                          dir);
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.out.find("f1") != std::string::npos);
  CHECK(fs::exists(dir / "report" / "sweep.csv"));
}
