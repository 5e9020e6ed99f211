#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "common/jsonutil.hpp"
#include "dataio/synthetic.hpp"
#include "dataio/timeseries.hpp"
#include "pipeline/pipeline.hpp"
#include "privattack/attacks.hpp"
#include "report/manifest.hpp"
#include "report/report.hpp"

using namespace shapguard;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "shapguard_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json tiny_synth() {
  json schedule_heater = json::array();
  json schedule_lamp = json::array();
  json occupancy = json::array();
  for (int h = 0; h < 24; ++h) {
    schedule_heater.push_back(h >= 18 && h <= 20 ? 0.3 : 0.02);
    schedule_lamp.push_back(h >= 19 && h <= 22 ? 0.4 : 0.05);
    occupancy.push_back(1.0);
  }
  return json{{"house_id", "tiny"},
              {"seed", 9},
              {"days", 30},
              {"cadence_seconds", 3600},
              {"base_load_watts", 50.0},
              {"occupancy", occupancy},
              {"appliances",
               json::array({json{{"name", "heater"},
                                 {"mean_watts", 400.0},
                                 {"jitter", 0.3},
                                 {"standby_watts", 1.0},
                                 {"schedule", schedule_heater}},
                            json{{"name", "lamp"},
                                 {"mean_watts", 100.0},
                                 {"jitter", 0.3},
                                 {"standby_watts", 0.5},
                                 {"schedule", schedule_lamp}}})}};
}

json base_config(const fs::path& dir) {
  return json{{"experiment_dir", dir.string()},
              {"experiment_id", "tiny_exp"},
              {"seed", 3},
              {"house", {{"synth", tiny_synth()}}},
              {"train",
               {{"epochs", 2},
                {"batch_size", 64},
                {"learning_rate", 0.05},
                {"hidden_size", 4},
                {"lambda", 0.05},
                {"reg_subsample", 1}}},
              {"explain",
               {{"reference_stride", 20},
                {"max_references", 6},
                {"member_stride", 1},
                {"max_members", 8},
                {"nonmember_stride", 10},
                {"max_nonmembers", 8}}}};
}

void run_full_flow(const json& cfg) {
  pipeline::run_ingest(cfg);
  for (const char* regime : {"baseline", "shap_reg"}) {
    json c = cfg;
    c["regime"] = regime;
    pipeline::run_train(c);
    pipeline::run_explain(c);
    pipeline::run_attack(c);
  }
  pipeline::run_report(cfg);
}

}  // namespace

TEST_CASE("full pipeline produces a complete, readable experiment directory") {
  const auto dir = temp_dir("flow");
  const auto cfg = base_config(dir);
  run_full_flow(cfg);

  for (const char* name :
       {"dataset_train.json", "dataset_train.bin", "dataset_test.json", "checkpoint_baseline.json",
        "checkpoint_shap_reg.json", "train_record_baseline.csv", "attributions_baseline_members.csv",
        "attributions_shap_reg_nonmembers.csv", "attack_report_baseline.json",
        "attack_scores_shap_reg_shap_entropy.csv", "comparison_table.csv", "heatmap.csv",
        "entropy_hourly.csv", "entropy_aggregate.csv", ".lock", "run_log.jsonl",
        "manifest.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir / name));
  }

  const auto table = report::load_comparison_table((dir / "comparison_table.csv").string());
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].house == "tiny");
  CHECK(table.rows[0].model == "baseline");
  CHECK(table.rows[1].model == "shap_reg");
  for (const auto& row : table.rows) {
    CHECK(row.mae > 0.0);
    CHECK(row.shap_entropy > 0.0);
    CHECK(row.shap_entropy <= std::log(2.0) + 1e-9);  // two channels
  }

  const auto m = report::load_manifest(dir.string());
  CHECK(m.experiment_id == "tiny_exp");
  for (const char* key :
       {"ingest", "train.baseline", "train.shap_reg", "explain.baseline", "explain.shap_reg",
        "attack.baseline", "attack.shap_reg", "report"}) {
    CAPTURE(key);
    CHECK(m.config_snapshot.contains(key));
  }
  CHECK_NOTHROW(report::verify_manifest(m, dir.string()));

  // one log line per stage, each valid JSON, none carrying timestamps
  std::ifstream log(dir / "run_log.jsonl");
  std::string line;
  std::vector<std::string> stages;
  while (std::getline(log, line)) {
    const json entry = json::parse(line);
    stages.push_back(entry.at("stage").get<std::string>());
    CHECK(entry.contains("config"));
    CHECK(entry.contains("artifacts"));
    CHECK(!entry.contains("time"));
    CHECK(!entry.contains("timestamp"));
  }
  CHECK(stages == std::vector<std::string>{"ingest", "train", "explain", "attack", "train",
                                           "explain", "attack", "report"});

  const auto loaded =
      privattack::load_attack_report((dir / "attack_report_baseline.json").string());
  CHECK(loaded.model_id == "baseline");
  CHECK(loaded.auc.size() == 5);

  SUBCASE("report stage log line summarizes both models") {
    const json line2 = pipeline::run_report(cfg);
    CHECK(line2["stage"] == "report");
    REQUIRE(line2["models"].size() == 2);
    CHECK(line2["models"][0]["model"] == "baseline");
  }
}

TEST_CASE("pipeline artifacts are byte-identical across runs and directories") {
  const auto dir_a = temp_dir("det_a");
  const auto dir_b = temp_dir("det_b");
  run_full_flow(base_config(dir_a));
  run_full_flow(base_config(dir_b));

  const auto ma = report::load_manifest(dir_a.string());
  const auto mb = report::load_manifest(dir_b.string());
  REQUIRE(ma.artifacts.size() == mb.artifacts.size());
  REQUIRE(ma.artifacts.size() > 20);  // datasets, checkpoints, attributions, attacks, reports
  for (const auto& [key, ref] : ma.artifacts) {
    CAPTURE(key);
    REQUIRE(mb.artifacts.count(key) == 1);
    CHECK(mb.artifacts.at(key).sha256 == ref.sha256);
    CHECK(slurp(dir_a / ref.path) == slurp(dir_b / mb.artifacts.at(key).path));
  }

  SUBCASE("re-running the flow in place rewrites identical artifacts and manifest") {
    const auto manifest_before = slurp(dir_a / "manifest.json");
    const auto table_before = slurp(dir_a / "comparison_table.csv");
    const auto ck_before = slurp(dir_a / "checkpoint_shap_reg.json");
    run_full_flow(base_config(dir_a));
    CHECK(slurp(dir_a / "manifest.json") == manifest_before);
    CHECK(slurp(dir_a / "comparison_table.csv") == table_before);
    CHECK(slurp(dir_a / "checkpoint_shap_reg.json") == ck_before);
  }
}

TEST_CASE("pipeline ingests power CSVs on disk") {
  const auto dir = temp_dir("csv");
  const auto frame = dataio::generate_synthetic(dataio::synth_config_from_json(tiny_synth()));
  const auto csv_path = (dir / "raw.csv").string();
  dataio::write_csv(frame, csv_path);

  json cfg = base_config(dir / "exp");
  cfg["house"] = {{"csv", csv_path}, {"house_id", "csvhouse"}};
  const json line = pipeline::run_ingest(cfg);
  CHECK(line["house"] == "csvhouse");
  CHECK(line["ingest_stats"]["malformed_rows"] == 0);
  CHECK(line["train_windows"].get<std::size_t>() > 100);

  cfg["regime"] = "baseline";
  CHECK_NOTHROW(pipeline::run_train(cfg));
}

TEST_CASE("pipeline stages reject bad configs and missing prerequisites") {
  const auto dir = temp_dir("errors");

  SUBCASE("experiment_dir is required") {
    CHECK_THROWS_AS(pipeline::run_ingest(json{{"house", {{"synth", tiny_synth()}}}}),
                    ConfigError);
    CHECK_THROWS_AS(pipeline::run_ingest(json{{"experiment_dir", ""}}), ConfigError);
  }

  SUBCASE("house needs a source") {
    json cfg{{"experiment_dir", (dir / "x").string()}, {"house", json::object()}};
    CHECK_THROWS_AS(pipeline::run_ingest(cfg), ConfigError);
  }

  SUBCASE("missing csv file is a data error") {
    json cfg{{"experiment_dir", (dir / "x").string()},
             {"house", {{"csv", (dir / "absent.csv").string()}}}};
    CHECK_THROWS_AS(pipeline::run_ingest(cfg), DataError);
  }

  SUBCASE("train before ingest fails with a pointer to ingest") {
    json cfg{{"experiment_dir", (dir / "fresh").string()}};
    try {
      pipeline::run_train(cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("ingest") != std::string::npos);
    }
  }

  SUBCASE("config field type errors") {
    json cfg = base_config(dir / "types");
    cfg["train"]["epochs"] = 2.5;
    CHECK_THROWS_AS(pipeline::run_ingest(cfg), ConfigError);  // checked on first use
    cfg["train"]["epochs"] = 2;
    cfg["seed"] = -4;
    CHECK_THROWS_AS(pipeline::run_ingest(cfg), ConfigError);
  }

  SUBCASE("unknown regime rejected") {
    const auto exp = dir / "regime";
    json cfg = base_config(exp);
    pipeline::run_ingest(cfg);
    cfg["regime"] = "turbo";
    CHECK_THROWS_AS(pipeline::run_train(cfg), ConfigError);
  }

  SUBCASE("zero explain stride rejected") {
    const auto exp = dir / "stride";
    json cfg = base_config(exp);
    pipeline::run_ingest(cfg);
    cfg["regime"] = "baseline";
    pipeline::run_train(cfg);
    cfg["explain"]["member_stride"] = 0;
    CHECK_THROWS_AS(pipeline::run_explain(cfg), ConfigError);
  }

  SUBCASE("report on an incomplete experiment lists what is missing") {
    const auto exp = dir / "incomplete";
    json cfg = base_config(exp);
    pipeline::run_ingest(cfg);
    cfg["regime"] = "baseline";
    pipeline::run_train(cfg);
    try {
      pipeline::run_report(cfg);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("incomplete manifest") != std::string::npos);
      CHECK(msg.find("attack_report.baseline") != std::string::npos);
    }
  }

  SUBCASE("tampered artifacts fail report-time verification") {
    const auto exp = dir / "tamper";
    json cfg = base_config(exp);
    run_full_flow(cfg);
    std::ofstream out(exp / "checkpoint_baseline.json", std::ios::app);
    out << " ";
    out.close();
    try {
      pipeline::run_report(cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("hash mismatch") != std::string::npos);
      CHECK(msg.find("checkpoint.baseline") != std::string::npos);
    }
  }
}
