#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"

#include "geofuse/cli/commands.hpp"
#include "geofuse/cli/dataset_io.hpp"
#include "geofuse/cli/run_config.hpp"
#include "geofuse/synthworld.hpp"

using namespace geofuse;
using namespace geofuse::cli;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "geofuse");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() / ("geofuse_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path operator/(const std::string& s) const { return dir / s; }
};

void write_world(const fs::path& p, std::uint64_t seed) {
  auto doc = synth::world_to_json(synth::build_world(synth::standard_recipe(seed)));
  write_text(p, doc.dump(2));
}

}  // namespace

TEST_CASE("dataset files round trip losslessly") {
  const auto w = synth::build_world(synth::standard_recipe(3));
  const auto d = synth::generate(w, 300, synth::Split::eval);
  std::stringstream ss;
  write_dataset(ss, d);
  const auto back = read_dataset(ss);
  CHECK(back == d);

  std::stringstream again;
  write_dataset(again, back);
  std::stringstream first;
  write_dataset(first, d);
  CHECK(again.str() == first.str());
}

TEST_CASE("dataset parser errors carry the line") {
  const std::string header = R"({"format_version":1,"C":2,"D":1,"split":"train"})";
  const auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_dataset(in, "x.jsonl");
  };
  CHECK_NOTHROW(parse(header + "\n" + R"({"label":1,"lat":1.0,"lon":2.0,"features":[0.5]})" + "\n"));
  try {
    parse(header + "\n" + R"({"label":5,"lat":1.0,"lon":2.0,"features":[0.5]})" + "\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("x.jsonl:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(header + "\n" + R"({"label":0,"lat":1.0,"lon":2.0,"features":[0.5, 1]})"),
                  DataError);
  CHECK_THROWS_AS(parse(header + "\n" + R"({"label":0,"lat":95.0,"lon":2.0,"features":[0.5]})"),
                  DataError);
  CHECK_THROWS_AS(parse(R"({"format_version":7,"C":2,"D":1,"split":"train"})"), DataError);
  CHECK_THROWS_AS(parse("not json"), DataError);
  CHECK_THROWS_AS(read_dataset_file("/nonexistent/none.jsonl"), IoError);
}

TEST_CASE("model specs and config overrides") {
  CHECK(ModelSpec::parse("featmod:add_raw_beta").variant == featmod::Variant::add_raw_beta);
  CHECK(ModelSpec::parse("whitelist").is_prior());
  CHECK(ModelSpec::parse("featmod:film").str() == "featmod:film");
  CHECK_THROWS_AS(ModelSpec::parse("resnet"), ConfigError);
  CHECK_THROWS_AS(ModelSpec::parse("featmod:nope"), ConfigError);

  Json doc = {{"model", "featmod"}, {"train_data", "data/train.jsonl"}, {"radius", "global"}};
  RunConfig c = RunConfig::from_json(doc, "/cfg");
  CHECK(c.train_data == fs::path("/cfg/data/train.jsonl"));
  CHECK(std::isinf(c.radius));
  CHECK_THROWS_AS(c.require_seed(), ConfigError);
  Overrides o;
  o.seed = 9;
  o.variant = "film";
  apply_overrides(c, o);
  CHECK(c.require_seed() == 9);
  CHECK(c.model.variant == featmod::Variant::film);

  RunConfig img = RunConfig::from_json(Json{{"model", "image_only"}}, "/");
  Overrides bad;
  bad.variant = "film";
  CHECK_THROWS_AS(apply_overrides(img, bad), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(Json{{"radius", -3}}, "/"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(Json{{"fallback", "guess"}}, "/"), ConfigError);

  CHECK(parse_radius_list("50, 100,global").size() == 3);
  CHECK_THROWS(parse_radius_list("50,,x"));
}

TEST_CASE("exit codes are distinct per error kind") {
  const int cfg = exit_code(ErrorKind::config);
  const int data = exit_code(ErrorKind::data);
  const int num = exit_code(ErrorKind::numeric);
  CHECK(cfg != 0);
  CHECK(data != 0);
  CHECK(num != 0);
  CHECK(cfg != data);
  CHECK(data != num);
  CHECK(cfg != num);
}

TEST_CASE("synth: errors and determinism") {
  Scratch s("synth");
  write_world(s / "world.json", 5);
  CHECK(run_cli({"synth", "--world", (s / "world.json").string(), "--n-train", "0", "--n-eval",
                 "10", "--out", (s / "a").string()}) == exit_code(ErrorKind::config));
  CHECK(run_cli({"synth", "--world", (s / "missing.json").string(), "--n-train", "5", "--n-eval",
                 "10", "--out", (s / "a").string()}) != 0);
  CHECK(run_cli({"synth", "--bogus"}) != 0);

  for (const char* out : {"a", "b"}) {
    REQUIRE(run_cli({"synth", "--world", (s / "world.json").string(), "--n-train", "400",
                     "--n-eval", "200", "--out", (s / out).string(), "--seed", "12"}) == 0);
  }
  for (const char* f : {"train.jsonl", "eval.jsonl", "world.json"}) {
    CHECK(slurp(s / "a" / f) == slurp(s / "b" / f));
  }
  const auto train = read_dataset_file(s / "a" / "train.jsonl");
  CHECK(train.size() == 400);
  CHECK(train.split == "train");
  // The seed override is applied to the generated world.
  REQUIRE(run_cli({"synth", "--world", (s / "world.json").string(), "--n-train", "400", "--n-eval",
                   "200", "--out", (s / "c").string()}) == 0);
  CHECK(slurp(s / "a" / "train.jsonl") != slurp(s / "c" / "train.jsonl"));
}

TEST_CASE("train/eval/sweep/compare end to end") {
  Scratch s("e2e");
  write_world(s / "world.json", 7);
  REQUIRE(run_cli({"synth", "--world", (s / "world.json").string(), "--n-train", "1500",
                   "--n-eval", "500", "--out", (s / "data").string()}) == 0);

  const Json common = {{"seed", 3},
                       {"train_data", "data/train.jsonl"},
                       {"eval_data", "data/eval.jsonl"},
                       {"epochs", 6},
                       {"hidden", {32}}};
  Json base_cfg = common;
  base_cfg["model"] = "image_only";
  base_cfg["optimizer"] = {{"kind", "sgd"}, {"learning_rate", 0.05}};
  write_text(s / "base.json", base_cfg.dump(2));
  for (const char* out : {"base", "base2"}) {
    REQUIRE(run_cli({"train", "--config", (s / "base.json").string(), "--out", (s / out).string()}) == 0);
  }
  CHECK(slurp(s / "base" / "checkpoint.json") == slurp(s / "base2" / "checkpoint.json"));
  CHECK(slurp(s / "base" / "loss_log.tsv") == slurp(s / "base2" / "loss_log.tsv"));

  SUBCASE("loss log is non-increasing within 5%") {
    std::ifstream in(s / "base" / "loss_log.tsv");
    std::string line;
    std::vector<double> loss;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      int epoch = 0;
      double v = 0;
      if (ls >> epoch >> v) loss.push_back(v);
    }
    REQUIRE(loss.size() == 6);
    for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] <= loss[i - 1] * 1.05);
  }

  Json post_cfg = common;
  post_cfg["model"] = "postproc";
  post_cfg["epochs"] = 3;
  write_text(s / "post.json", post_cfg.dump(2));

  SUBCASE("postproc needs a base") {
    CHECK(run_cli({"train", "--config", (s / "post.json").string(), "--out", (s / "post").string()}) ==
          exit_code(ErrorKind::config));
    CHECK(run_cli({"train", "--config", (s / "post.json").string(), "--out", (s / "post").string(),
                   "--base", (s / "nope.json").string()}) == exit_code(ErrorKind::config));
    CHECK_FALSE(fs::exists(s / "post" / "checkpoint.json"));
    Json prior = common;
    prior["model"] = "whitelist";
    write_text(s / "prior.json", prior.dump());
    CHECK(run_cli({"train", "--config", (s / "prior.json").string()}) == exit_code(ErrorKind::config));
  }

  SUBCASE("postproc, eval, sweep and compare") {
    const std::string base_ckpt = (s / "base" / "checkpoint.json").string();
    REQUIRE(run_cli({"train", "--config", (s / "post.json").string(), "--out",
                     (s / "post").string(), "--base", base_ckpt}) == 0);

    Json eval_cfg = common;
    eval_cfg["model"] = "postproc";
    eval_cfg["checkpoint"] = "post/checkpoint.json";
    eval_cfg["head_threshold"] = 50;
    write_text(s / "eval.json", eval_cfg.dump(2));
    for (const char* out : {"ev1", "ev2"}) {
      REQUIRE(run_cli({"eval", "--config", (s / "eval.json").string(), "--out", (s / out).string()}) == 0);
    }
    CHECK(slurp(s / "ev1" / "report.json") == slurp(s / "ev2" / "report.json"));
    const Json report = Json::parse(slurp(s / "ev1" / "report.json"))["rows"][0];
    CHECK(report["top1"].get<double>() > 0.5);
    CHECK(report["n_examples"] == 500);

    Json sweep_cfg = common;
    sweep_cfg["base_checkpoint"] = "base/checkpoint.json";
    write_text(s / "sweep.json", sweep_cfg.dump(2));
    REQUIRE(run_cli({"sweep", "--config", (s / "sweep.json").string(), "--out",
                     (s / "sw").string(), "--radius-list", "100,global"}) == 0);
    const Json sweep = Json::parse(slurp(s / "sw" / "sweep.json"))["sweeps"];
    REQUIRE(sweep.is_array());
    CHECK(sweep.size() == 2);
    CHECK(sweep[0]["rows"].size() == 2);
    CHECK(sweep[0]["rows"][1]["radius_miles"] == "global");
    CHECK(run_cli({"sweep", "--config", (s / "sweep.json").string(), "--out", (s / "sw").string(),
                   "--radius-list", "100,far"}) != 0);

    Json cmp = common;
    cmp["models"] = Json::array({
        {{"model", "image_only"}, {"checkpoint", "base/checkpoint.json"}},
        {{"model", "whitelist"}, {"base_checkpoint", "base/checkpoint.json"}},
        {{"model", "bayes_prior"}, {"base_checkpoint", "base/checkpoint.json"}},
        {{"name", "fusion"}, {"model", "postproc"}, {"checkpoint", "post/checkpoint.json"}},
    });
    write_text(s / "cmp.json", cmp.dump(2));
    for (const char* out : {"c1", "c2"}) {
      REQUIRE(run_cli({"compare", "--config", (s / "cmp.json").string(), "--out", (s / out).string()}) == 0);
    }
    CHECK(slurp(s / "c1" / "compare.json") == slurp(s / "c2" / "compare.json"));
    CHECK(slurp(s / "c1" / "compare.txt") == slurp(s / "c2" / "compare.txt"));
    const Json rows = Json::parse(slurp(s / "c1" / "compare.json"))["rows"];
    REQUIRE(rows.size() == 4);
    CHECK(rows[3]["model"] == "fusion");

    // Missing checkpoint.
    Json broken = cmp;
    broken["models"][3]["checkpoint"] = "post/missing.json";
    write_text(s / "broken.json", broken.dump());
    CHECK(run_cli({"compare", "--config", (s / "broken.json").string(), "--out", (s / "c3").string()}) != 0);
  }
}

TEST_CASE("featmod training through the command line") {
  Scratch s("featmod");
  write_world(s / "world.json", 2);
  REQUIRE(run_cli({"synth", "--world", (s / "world.json").string(), "--n-train", "300", "--n-eval",
                   "100", "--out", (s / "data").string()}) == 0);
  Json base = {{"seed", 1}, {"model", "image_only"}, {"train_data", "data/train.jsonl"},
               {"epochs", 2}, {"hidden", {16, 16}}};
  write_text(s / "base.json", base.dump());
  REQUIRE(run_cli({"train", "--config", (s / "base.json").string(), "--out", (s / "base").string()}) == 0);
  Json fm = {{"seed", 1}, {"model", "featmod"}, {"train_data", "data/train.jsonl"},
             {"eval_data", "data/eval.jsonl"}, {"epochs", 1}};
  write_text(s / "fm.json", fm.dump());
  // No variant anywhere.
  CHECK(run_cli({"train", "--config", (s / "fm.json").string(), "--out", (s / "fm").string(),
                 "--base", (s / "base" / "checkpoint.json").string()}) == exit_code(ErrorKind::config));
  REQUIRE(run_cli({"train", "--config", (s / "fm.json").string(), "--out", (s / "fm").string(),
                   "--base", (s / "base" / "checkpoint.json").string(), "--variant", "film"}) == 0);
  const Json ck = Json::parse(slurp(s / "fm" / "checkpoint.json"));
  CHECK(ck["variant"] == "film");

  Json ev = fm;
  ev["model"] = "featmod:film";
  ev["checkpoint"] = "fm/checkpoint.json";
  write_text(s / "ev.json", ev.dump());
  CHECK(run_cli({"eval", "--config", (s / "ev.json").string(), "--out", (s / "ev").string()}) == 0);
}
