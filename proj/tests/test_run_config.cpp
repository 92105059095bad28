#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "distsearch/errors.hpp"
#include "distsearch/run_config.hpp"

using namespace distsearch;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    char tmpl[] = "/tmp/runcfg_XXXXXX";
    REQUIRE(mkdtemp(tmpl) != nullptr);
    path = tmpl;
  }
  std::string file(const std::string& name, const std::string& content) const {
    const std::string p = path + "/" + name;
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p;
  }
};

}  // namespace

TEST_CASE("defaults cover every key exactly once and round-trip through get_key") {
  RunConfig cfg;
  const auto keys = RunConfig::known_keys();
  CHECK(keys.size() >= 35);
  const std::string text = cfg.resolved_text();
  for (const auto& k : keys) {
    const std::string line = k + " = " + cfg.get_key(k) + "\n";
    INFO("key ", k);
    CHECK(text.find(line) != std::string::npos);
  }
  CHECK(cfg.get_key("search.strategy") == "biased-softmax");
  CHECK(cfg.get_key("search.epsilon_mode") == "scaled");
  CHECK(cfg.get_key("search.clip") == "true");
  CHECK(cfg.get_key("search.delta") == "l2");
  CHECK(cfg.get_key("teacher.spec").find("input:1:16:16") == 0);
  CHECK_THROWS_AS(cfg.get_key("no.such.key"), ConfigError);
}

TEST_CASE("file parsing: comments, blanks, trimming") {
  TempDir dir;
  const std::string p = dir.file("a.cfg",
                                 "# full-line comment\n"
                                 "\n"
                                 "seed = 9\n"
                                 "  search.gamma=0.25   # trailing comment\n"
                                 "retrain.baseline = equal\n");
  RunConfig cfg = RunConfig::load(p);
  CHECK(cfg.seed == 9);
  CHECK(cfg.search_gamma == 0.25);
  CHECK(cfg.retrain_baseline == "equal");
  // untouched keys keep defaults
  CHECK(cfg.search_xi == 0.1);
}

TEST_CASE("file parsing rejections name file and line") {
  TempDir dir;
  auto load_expecting = [&](const std::string& content, const std::string& fragment) {
    const std::string p = dir.file("bad.cfg", content);
    try {
      RunConfig::load(p);
      FAIL("expected ConfigError for: " << content);
    } catch (const ConfigError& e) {
      INFO("message: ", e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  load_expecting("bogus.key = 3\n", "unknown key 'bogus.key'");
  load_expecting("seed = 1\nseed = 2\n", "bad.cfg:2: duplicate key");
  load_expecting("just some words\n", "expected 'key = value'");
  load_expecting("= 5\n", "empty key");
  load_expecting("data.n = many\n", "bad integer");
  load_expecting("search.gamma = fast\n", "bad value");
  load_expecting("search.clip = yes\n", "bad boolean");
  load_expecting("search.strategy = softmax9\n", "softmax9");
  load_expecting("seed = -4\n", "bad unsigned");

  CHECK_THROWS_AS(RunConfig::load(dir.path + "/missing.cfg"), FormatError);
}

TEST_CASE("--set overrides parse key=value with optional spaces") {
  RunConfig cfg;
  cfg.apply_override("search.steps=7");
  CHECK(cfg.search_steps == 7);
  cfg.apply_override("  eval.on = train ");
  CHECK(cfg.eval_on == "train");
  CHECK_THROWS_AS(cfg.apply_override("search.steps"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("nope=1"), ConfigError);
}

TEST_CASE("save/load round trip is byte-stable") {
  TempDir dir;
  RunConfig cfg;
  cfg.seed = 123;
  cfg.data_sigma = 0.125;
  cfg.search_strategy = NormStrategy::Sigmoid;
  cfg.search_clip = false;
  cfg.retrain_baseline = "none";
  const std::string p = dir.path + "/round.cfg";
  cfg.save(p);
  RunConfig back = RunConfig::load(p);
  CHECK(back.resolved_text() == cfg.resolved_text());
  back.save(dir.path + "/round2.cfg");
  std::ifstream a(p), b(dir.path + "/round2.cfg");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("output-directory token substitution") {
  CHECK(RunConfig::substitute_out("<out>/data.dpds", "runs/a") == "runs/a/data.dpds");
  CHECK(RunConfig::substitute_out("plain.csv", "runs/a") == "plain.csv");
  CHECK(RunConfig::substitute_out("<out>/x/<out>.y", "o") == "o/x/o.y");
  CHECK(RunConfig::substitute_out("", "o") == "");
}

TEST_CASE("cross-field validation") {
  auto reject = [](auto mutate, const std::string& fragment) {
    RunConfig c;
    mutate(c);
    try {
      c.validate();
      FAIL("expected ConfigError containing: " << fragment);
    } catch (const ConfigError& e) {
      INFO("message: ", e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  RunConfig ok;
  ok.validate();

  reject([](RunConfig& c) { c.data_classes = 1; }, "data.classes");
  reject([](RunConfig& c) { c.data_sigma = -0.1; }, "data.sigma");
  reject([](RunConfig& c) { c.data_h = 2; }, "image too small");
  reject([](RunConfig& c) { c.eval_on = "test"; }, "eval.on");
  reject([](RunConfig& c) { c.retrain_baseline = "best"; }, "retrain.baseline");
  reject([](RunConfig& c) { c.teacher_lr = 0.0; }, "teacher.lr");
  reject([](RunConfig& c) { c.check_h = 0.0; }, "check.h");
  // sub-config invariants surface through validate() too
  reject([](RunConfig& c) { c.retrain_steps = c.search_steps - 1; }, "retrain_steps");
  reject([](RunConfig& c) { c.split_ratio = 1.5; }, "split");
}

TEST_CASE("typed sub-configs carry the mapped fields") {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.search_gamma = 0.2;
  cfg.search_tau = 0.7;
  cfg.search_clip = false;
  cfg.search_delta = DistanceKind::L1;
  cfg.retrain_lr = 0.01;
  cfg.retrain_steps = 200;

  SearchConfig s = cfg.search_config();
  CHECK(s.gamma == 0.2);
  CHECK(s.tau == 0.7);
  CHECK(s.seed == 42);
  CHECK(s.retrain_steps == 200);
  CHECK_FALSE(s.clip);

  RetrainConfig r = cfg.retrain_config();
  CHECK(r.lr == 0.01);
  CHECK(r.steps == 200);
  CHECK(r.seed == 42);
  CHECK(r.loss.tau == 0.7);
  CHECK(r.loss.delta_feature == DistanceKind::L1);
  CHECK_FALSE(r.loss.clip);

  LossSpec l = cfg.loss_spec();
  CHECK(l.tau == 0.7);
  CHECK(l.delta_feature == DistanceKind::L1);
}
