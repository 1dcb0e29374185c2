#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

using namespace xprompt;
using namespace xprompt::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = xprompt::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json spec_json(const SyntheticSpec& s) {
  return {{"domain_name", s.domain_name},
          {"train_sentences", s.train_sentences},
          {"test_sentences", s.test_sentences},
          {"lexicon", s.lexicon},
          {"aspect_terms", s.aspect_terms},
          {"aspect_templates", s.aspect_templates},
          {"plain_templates", s.plain_templates},
          {"unlabelled_train", s.unlabelled_train}};
}

/// Temp workspace with R (labelled) and L (unlabelled train) corpora.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() / "xprompt-test-cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto r = restaurant_spec(24, 8);
    r.domain_name = "R";
    auto l = laptop_spec(8, 8);
    l.domain_name = "L";
    l.unlabelled_train = true;
    std::ofstream(dir / "r.json") << spec_json(r).dump();
    std::ofstream(dir / "l.json") << spec_json(l).dump();
    REQUIRE(invoke({"prepare-data", "--synthetic", (dir / "r.json").string(), "--output",
                 (dir / "R.tsv").string(), "--seed", "1"})
                .code == 0);
    REQUIRE(invoke({"prepare-data", "--synthetic", (dir / "l.json").string(), "--output",
                 (dir / "L.tsv").string(), "--seed", "2"})
                .code == 0);
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::vector<std::string> train_args(const std::string& out_dir) const {
    return {"train", "--sources", "R", "--target", "L", "--data-dir", dir.string(),
            "--out-dir", path(out_dir), "--epochs", "2", "--batch-size", "8"};
  }
};

}  // namespace

TEST_CASE("cli help lists defaults on every subcommand") {
  for (const std::string sub : {"prepare-data", "select-prompts", "train", "evaluate", "ablate", "sweep"}) {
    const auto r = invoke({sub, "--help"});
    INFO(sub);
    CHECK(r.code == 0);
    if (sub == "prepare-data") continue;
    for (const std::string d : {"--alpha FLOAT [1.0]", "--beta FLOAT [0.5]", "--mask-rate FLOAT [0.25]",
                                "--m INT [3]", "--learning-rate FLOAT [2e-3]", "--epochs INT [20]",
                                "--batch-size INT [16]"}) {
      CHECK(r.out.find(d) != std::string::npos);
    }
  }
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("cli usage errors exit 1") {
  CHECK(invoke({}).code == 1);
  CHECK(invoke({"frobnicate"}).code == 1);
  CHECK(invoke({"train", "--no-such-flag"}).code == 1);

  const auto r = invoke({"train", "--alpha", "-1", "--sources", "R", "--target", "L", "--out-dir", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("alpha must be ≥ 0") != std::string::npos);

  CHECK(invoke({"sweep", "--pair", "R:L", "--lengths", "0"}).code == 1);
  CHECK(invoke({"train", "--sources", "R", "--target", "R", "--out-dir", "x"}).code == 1);
}

TEST_CASE("cli runtime failures exit 2") {
  Workspace ws;
  const auto r = invoke({"train", "--sources", "Q", "--target", "L", "--data-dir", ws.dir.string(),
                      "--out-dir", ws.path("q")});
  CHECK(r.code == 2);
  CHECK(r.err.find("Q.tsv") != std::string::npos);
}

TEST_CASE("cli train is byte-identical across invocations") {
  Workspace ws;
  const auto a = invoke(ws.train_args("a"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("trained R->L") != std::string::npos);
  REQUIRE(invoke(ws.train_args("b")).code == 0);
  CHECK(slurp(ws.dir / "a" / "train_log.jsonl") == slurp(ws.dir / "b" / "train_log.jsonl"));
  for (const auto& f : fs::directory_iterator(ws.dir / "a" / "checkpoint")) {
    INFO(f.path().filename().string());
    CHECK(slurp(f.path()) == slurp(ws.dir / "b" / "checkpoint" / f.path().filename()));
  }
}

TEST_CASE("cli config file is overridden by flags") {
  Workspace ws;
  std::ofstream(ws.dir / "cfg.json") << R"({"beta": 0.25, "epochs": 1, "m": 2})";
  auto args = ws.train_args("cfg");
  args.insert(args.end(), {"--config", ws.path("cfg.json"), "-m", "1"});
  REQUIRE(invoke(args).code == 0);
  std::ifstream log(ws.dir / "cfg" / "train_log.jsonl");
  std::string first;
  std::getline(log, first);
  const auto c = nlohmann::json::parse(first)["header"]["config"];
  CHECK(c["beta"] == 0.25);
  CHECK(c["epochs"] == 2);  // flag wins over the file
  CHECK(c["m"] == 1);

  std::ofstream(ws.dir / "bad.json") << R"({"alpah": 1.0})";
  auto bad = ws.train_args("bad");
  bad.insert(bad.end(), {"--config", ws.path("bad.json")});
  CHECK(invoke(bad).code == 1);
}

TEST_CASE("cli select-prompts, evaluate, ablate and sweep") {
  Workspace ws;
  auto sel = invoke({"select-prompts", "--sources", "R", "--data-dir", ws.dir.string(), "--output",
                  ws.path("bank.json")});
  REQUIRE(sel.code == 0);
  const auto bank = nlohmann::json::parse(slurp(ws.dir / "bank.json"));
  CHECK(bank["m"] == 3);
  CHECK(bank["prompts"].size() == 3);
  CHECK(bank["prompts"][0]["vector"].size() == 16);

  REQUIRE(invoke(ws.train_args("t")).code == 0);
  auto ev = invoke({"evaluate", "--checkpoint", ws.path("t/checkpoint"), "--target", "L", "--data-dir",
                 ws.dir.string(), "--report", ws.path("ev.json"), "--details"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("F1=") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(ws.dir / "ev.json"));
  CHECK(report.is_array());
  CHECK(report[0]["target_domain"] == "L");

  auto ab = invoke({"ablate", "--pairs", "R:L", "--data-dir", ws.dir.string(), "--epochs", "1", "--csv",
                 ws.path("ab.csv")});
  REQUIRE(ab.code == 0);
  const auto csv = slurp(ws.dir / "ab.csv");
  for (const std::string row : {"-w/o Syntax", "-w/o Prompts", "only backbone", ",full,"}) {
    CHECK(csv.find(row) != std::string::npos);
  }

  auto sw = invoke({"sweep", "--pair", "R:L", "--lengths", "1,2,3,4,5", "--data-dir", ws.dir.string(),
                 "--epochs", "1", "--output", ws.path("sweep.csv")});
  REQUIRE(sw.code == 0);
  std::istringstream lines(slurp(ws.dir / "sweep.csv"));
  std::string line;
  int count = 0;
  std::getline(lines, line);
  CHECK(line == "length,f1,seed");
  while (std::getline(lines, line)) ++count;
  CHECK(count == 5);

  auto dup = invoke({"sweep", "--pair", "R:L", "--lengths", "2,2", "--data-dir", ws.dir.string(),
                  "--epochs", "1"});
  CHECK(dup.code == 0);
  CHECK(dup.err.find("duplicate") != std::string::npos);
}

TEST_CASE("cli resolves backbones through the cache directory") {
  Workspace ws;
  REQUIRE(invoke(ws.train_args("bb")).code == 0);
  fs::create_directories(ws.dir / "cache");
  fs::copy(ws.dir / "bb" / "checkpoint", ws.dir / "cache" / "tiny");
  ::setenv("XPROMPT_CACHE_DIR", ws.path("cache").c_str(), 1);
  auto args = ws.train_args("from-cache");
  args.insert(args.end(), {"--backbone", "tiny"});
  const auto r = invoke(args);
  ::unsetenv("XPROMPT_CACHE_DIR");
  CHECK(r.code == 0);
  auto missing = ws.train_args("missing");
  missing.insert(missing.end(), {"--backbone", "tiny"});
  CHECK(invoke(missing).code == 1);
}
