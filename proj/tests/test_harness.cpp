#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "wzmerge/harness.hpp"

using namespace wzmerge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("wzmerge_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small everything: enough simulated time that the collection run clears the
// 100-observation floors and the dataset run emits both label classes, little
// enough that the whole pipeline fits in a unit test. Training keeps the full
// hidden size but caps samples and epochs.
RunConfig tiny_config(const std::string& out) {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.out_dir = out;
  cfg.gen_duration_s = 300.0;
  cfg.collection_duration_s = 5400.0;
  cfg.eval_duration_s = 60.0;
  cfg.volumes = {1.0};
  cfg.train.max_train_samples = 4000;
  cfg.train.max_epochs = 6;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json slurp_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("config loading: overrides, strict keys, validation") {
  TempDir tmp("config");
  const fs::path cfgfile = tmp.path / "run.json";

  write_text(cfgfile, R"({"seed": 21, "gen": {"duration_s": 120}})");
  const RunConfig cfg = load_run_config(cfgfile.string());
  CHECK(cfg.seed == 21);
  CHECK(cfg.gen_duration_s == 120.0);
  CHECK(cfg.gen_volume_fraction == 1.0);  // untouched default

  write_text(cfgfile, R"({"sedd": 21})");
  CHECK_THROWS_WITH_AS(load_run_config(cfgfile.string()),
                       doctest::Contains("unknown key"), Error);

  write_text(cfgfile, R"({"gen": {"volume": 1.0}})");
  CHECK_THROWS_WITH_AS(load_run_config(cfgfile.string()),
                       doctest::Contains("unknown key"), Error);

  // Semantic checks run at command entry, after CLI flags have merged; the
  // loader only parses and rejects unknown keys.
  write_text(cfgfile, R"({"eval": {"policies": ["kinematic"]}})");
  CHECK_THROWS_WITH_AS(load_run_config(cfgfile.string()).validate(),
                       doctest::Contains("internal to data generation"), Error);

  write_text(cfgfile, R"({"eval": {"policies": ["dqn"]}})");
  CHECK_THROWS_AS(load_run_config(cfgfile.string()).validate(), Error);

  write_text(cfgfile, R"({"eval": {"volumes": [1.5]}})");
  CHECK_THROWS_AS(load_run_config(cfgfile.string()).validate(), Error);

  write_text(cfgfile, R"({"tick_s": 0})");
  CHECK_THROWS_AS(load_run_config(cfgfile.string()).validate(), Error);

  write_text(cfgfile, "{not json");
  CHECK_THROWS_AS(load_run_config(cfgfile.string()), Error);
}

TEST_CASE("config hash ignores the output directory but not the physics") {
  RunConfig a = tiny_config("/tmp/somewhere");
  RunConfig b = a;
  b.out_dir = "/tmp/elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.seed = 12;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.workzone_limit_mph = 45.0;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.train.dropout = 0.25;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("gen-data without enough road time reports an actionable error") {
  TempDir tmp("gen_short");
  RunConfig cfg = tiny_config((tmp.path / "out").string());
  cfg.gen_duration_s = 2.0;
  cfg.collection_duration_s = 2.0;
  // Two seconds cannot produce 100 accepted gaps per direction; the command
  // must say which stage starved.
  CHECK_THROWS_WITH_AS(cmd_gen_data(cfg), doctest::Contains("collection"), Error);
}

TEST_CASE("full pipeline on a miniature run") {
  TempDir tmp("mini");
  const std::string out = (tmp.path / "out").string();
  RunConfig cfg = tiny_config(out);

  cmd_gen_data(cfg);
  CHECK(fs::exists(out_path(cfg, outfile::kDatasetForward)));
  CHECK(fs::exists(out_path(cfg, outfile::kDatasetRear)));
  CHECK(fs::exists(out_path(cfg, outfile::kGapObservations)));

  const json manifest = slurp_json(out_path(cfg, outfile::kManifest));
  CHECK(manifest.at("kind") == "gen-data-manifest");
  CHECK(manifest.at("config_hash") == config_hash(cfg));
  CHECK(manifest.at("datasets").at("forward").at("samples").get<uint64_t>() > 0);
  CHECK(manifest.at("datasets").at("rear").at("positives").get<uint64_t>() > 0);

  cmd_train(cfg);
  const json tm = slurp_json(out_path(cfg, outfile::kTrainingMetrics));
  CHECK(tm.at("kind") == "training-metrics");
  for (const char* dir : {"forward", "rear"}) {
    CHECK(tm.at(dir).at("test_accuracy").get<double>() > 0.5);
    CHECK(tm.at(dir).at("epochs_run").get<size_t>() >= 1);
  }
  CHECK(tm.at("thresholds").at("forward_p50").get<double>() > 0.0);

  cmd_eval(cfg);
  const json er = slurp_json(out_path(cfg, outfile::kEvalJson));
  CHECK(er.at("kind") == "evaluation-report");
  REQUIRE(er.at("cells").size() == 4);  // 4 policies x 1 volume
  for (const auto& cell : er.at("cells")) {
    const double tet = cell.at("tet_s").get<double>();
    const double tit = cell.at("tit_s").get<double>();
    CHECK(tet >= 0.0);
    // Severity is bounded by 2 s per exposed second.
    CHECK(tit >= 0.0);
    CHECK(tit <= 2.0 * tet + 1e-9);
    CHECK(cell.at("volume_fraction").get<double>() == 1.0);
  }
  const std::string csv = slurp(out_path(cfg, outfile::kEvalCsv));
  CHECK(csv.find("policy,volume_fraction,tet_s,tit_s") != std::string::npos);
  CHECK(csv.find("lstm,1,") != std::string::npos);

  cmd_report(cfg);
  const std::string tet = slurp(out_path(cfg, outfile::kFigTet));
  CHECK(tet.find("volume_fraction,lstm,bayes,p50,p85") != std::string::npos);
  CHECK(tet.find("total,") != std::string::npos);
  const std::string summary = slurp(out_path(cfg, outfile::kSummary));
  CHECK(summary.find("TET") != std::string::npos);
  CHECK(summary.find("lstm") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical artifacts") {
  TempDir tmp("det");
  const std::string out_a = (tmp.path / "a").string();
  const std::string out_b = (tmp.path / "b").string();
  RunConfig a = tiny_config(out_a);
  RunConfig b = tiny_config(out_b);

  for (const RunConfig* cfg : {&a, &b}) {
    cmd_gen_data(*cfg);
    cmd_train(*cfg);
    cmd_eval(*cfg);
    cmd_report(*cfg);
  }
  for (const char* name :
       {outfile::kDatasetForward, outfile::kDatasetRear, outfile::kGapObservations,
        outfile::kAcceptedGaps, outfile::kManifest, outfile::kModelForward,
        outfile::kModelRear, outfile::kThresholds, outfile::kBayes,
        outfile::kTrainingMetrics, outfile::kEvalCsv, outfile::kEvalJson,
        outfile::kFigTet, outfile::kFigTit, outfile::kFigRemaining,
        outfile::kSummary}) {
    INFO("artifact ", name);
    REQUIRE(fs::exists(out_path(a, name)));
    CHECK(slurp(out_path(a, name)) == slurp(out_path(b, name)));
  }

  // A different seed must actually change the data.
  RunConfig c = tiny_config((tmp.path / "c").string());
  c.seed = 13;
  cmd_gen_data(c);
  CHECK(slurp(out_path(a, outfile::kDatasetForward)) !=
        slurp(out_path(c, outfile::kDatasetForward)));
}

TEST_CASE("eval needs only the artifacts its policies use") {
  TempDir tmp("partial");
  const std::string out = (tmp.path / "out").string();
  RunConfig cfg = tiny_config(out);
  cmd_gen_data(cfg);
  cmd_train(cfg);

  // Gap-only grid still works after deleting the model and bayes files.
  fs::remove(out_path(cfg, outfile::kModelForward));
  fs::remove(out_path(cfg, outfile::kModelRear));
  fs::remove(out_path(cfg, outfile::kBayes));
  cfg.policies = {"p50", "p85"};
  cmd_eval(cfg);
  const json er = slurp_json(out_path(cfg, outfile::kEvalJson));
  CHECK(er.at("cells").size() == 2);

  // Asking for lstm without model files is an error naming the missing piece.
  cfg.policies = {"lstm"};
  CHECK_THROWS_AS(cmd_eval(cfg), Error);
}

TEST_CASE("report without an evaluation is a no-op, not an error") {
  TempDir tmp("noeval");
  RunConfig cfg = tiny_config((tmp.path / "out").string());
  fs::create_directories(cfg.out_dir);
  cmd_report(cfg);  // prints a notice; must not throw or create figures
  CHECK(!fs::exists(out_path(cfg, outfile::kFigTet)));
}

TEST_CASE("eval cell seeds differ across the grid but not across reruns") {
  TempDir tmp("cellseed");
  const std::string out = (tmp.path / "out").string();
  RunConfig cfg = tiny_config(out);
  cfg.volumes = {0.33, 1.0};
  cfg.policies = {"p50", "p85"};
  cmd_gen_data(cfg);
  cmd_train(cfg);
  cmd_eval(cfg);
  const json er = slurp_json(out_path(cfg, outfile::kEvalJson));
  std::vector<uint64_t> seeds;
  for (const auto& cell : er.at("cells"))
    seeds.push_back(cell.at("cell_seed").get<uint64_t>());
  REQUIRE(seeds.size() == 4);
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t j = i + 1; j < seeds.size(); ++j) CHECK(seeds[i] != seeds[j]);
}

TEST_CASE("model direction field must match its file") {
  TempDir tmp("swap");
  const std::string out = (tmp.path / "out").string();
  RunConfig cfg = tiny_config(out);
  cmd_gen_data(cfg);
  cmd_train(cfg);
  // Swap the two model files; eval must refuse to run the lstm policy.
  const std::string fwd = out_path(cfg, outfile::kModelForward);
  const std::string rear = out_path(cfg, outfile::kModelRear);
  const std::string tmpname = fwd + ".swap";
  fs::rename(fwd, tmpname);
  fs::rename(rear, fwd);
  fs::rename(tmpname, rear);
  cfg.policies = {"lstm"};
  CHECK_THROWS_WITH_AS(cmd_eval(cfg), doctest::Contains("direction"), Error);
}
