#include "pipeline/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "common/error.hpp"
#include "common/version.hpp"
#include "dataio/synthetic.hpp"
#include "dataio/timeseries.hpp"
#include "dataio/windows.hpp"
#include "explainer/shapley.hpp"
#include "forecaster/lstm.hpp"
#include "privattack/attacks.hpp"
#include "report/manifest.hpp"
#include "report/report.hpp"
#include "trainer/train.hpp"

namespace shapguard::pipeline {

DirLock::DirLock(const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / ".lock").string();
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open lock file: " + path);
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("cannot lock experiment directory: " + dir);
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

namespace {

namespace fs = std::filesystem;
using report::ExperimentManifest;

std::string experiment_dir(const json& cfg) {
  if (!cfg.contains("experiment_dir") || !cfg["experiment_dir"].is_string() ||
      cfg["experiment_dir"].get<std::string>().empty())
    throw ConfigError("config needs a non-empty 'experiment_dir' string");
  return cfg["experiment_dir"].get<std::string>();
}

json object_section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg[name].is_object())
    throw ConfigError(std::string("config section '") + name + "' must be an object");
  return cfg[name];
}

double num_field(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number())
    throw ConfigError(std::string("config field '") + key + "' must be a number");
  return j[key].get<double>();
}

std::size_t uint_field(const json& j, const char* key, std::size_t def) {
  if (!j.contains(key)) return def;
  const double v = num_field(j, key, 0.0);
  if (v < 0.0 || v != std::floor(v))
    throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

bool bool_field(const json& j, const char* key, bool def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_boolean())
    throw ConfigError(std::string("config field '") + key + "' must be a boolean");
  return j[key].get<bool>();
}

std::string string_field(const json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string())
    throw ConfigError(std::string("config field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

std::uint64_t experiment_seed(const json& cfg) {
  return uint_field(cfg, "seed", 0);
}

/// Regime precedence: top-level "regime" (the CLI flag lands there),
/// then the stage section's own "regime", then baseline.
std::string resolve_regime(const json& cfg, const json& stage_section) {
  const std::string s =
      string_field(cfg, "regime", string_field(stage_section, "regime", "baseline"));
  return trainer::regime_to_string(trainer::regime_from_string(s));
}

ExperimentManifest manifest_for_update(const json& cfg, const std::string& dir) {
  if (report::manifest_exists(dir)) return report::load_manifest(dir);
  ExperimentManifest m;
  m.experiment_id =
      string_field(cfg, "experiment_id", fs::path(dir).filename().string());
  m.tool_version = kToolVersion;
  return m;
}

ExperimentManifest require_manifest(const std::string& dir) {
  if (!report::manifest_exists(dir))
    throw DataError("no manifest in " + dir + "; run ingest first");
  return report::load_manifest(dir);
}

json finish_stage(const char* stage, const std::string& dir, ExperimentManifest& m,
                  const json& cfg, const std::string& snapshot_key,
                  const std::vector<std::string>& artifact_keys, json line) {
  m.config_snapshot[snapshot_key] = cfg;
  report::save_manifest(m, dir);
  line["format_version"] = 1;
  line["stage"] = stage;
  line["experiment_id"] = m.experiment_id;
  line["config"] = cfg;
  line["artifacts"] = artifact_keys;
  std::ofstream log((fs::path(dir) / "run_log.jsonl").string(),
                    std::ios::binary | std::ios::app);
  if (!log) throw IoError("cannot append run log in " + dir);
  log << line.dump() << "\n";
  return line;
}

/// The trainer holds out the chronological tail tenth of the training
/// windows for validation; only the leading windows are fit members.
std::size_t fit_window_count(std::size_t n_train) { return n_train - n_train / 10; }

int hour_of_day(std::int64_t epoch_seconds) {
  const std::int64_t day = ((epoch_seconds % 86400) + 86400) % 86400;
  return static_cast<int>(day / 3600);
}

/// Recovers the split-local window index from a pipeline sample id such
/// as "m12" / "n3" / "r0".
std::size_t window_index(const std::string& sample_id, char expected_prefix,
                         std::size_t n_windows) {
  if (sample_id.size() < 2 || sample_id[0] != expected_prefix)
    throw DataError("unexpected attribution sample id '" + sample_id +
                    "'; expected prefix '" + expected_prefix + "'");
  std::size_t idx = 0;
  try {
    idx = std::stoul(sample_id.substr(1));
  } catch (const std::exception&) {
    throw DataError("non-numeric window index in sample id '" + sample_id + "'");
  }
  if (idx >= n_windows)
    throw DataError("sample id '" + sample_id + "' is outside the dataset (" +
                    std::to_string(n_windows) + " windows)");
  return idx;
}

}  // namespace

json run_ingest(const json& cfg) {
  const std::string dir = experiment_dir(cfg);
  DirLock lock(dir);

  const json house = object_section(cfg, "house");
  dataio::TimeSeriesFrame frame;
  json ingest_stats;
  if (house.contains("synth")) {
    frame = dataio::generate_synthetic(dataio::synth_config_from_json(house["synth"]));
  } else if (house.contains("csv")) {
    dataio::IngestOptions opts;
    opts.max_malformed_fraction =
        num_field(house, "max_malformed_fraction", opts.max_malformed_fraction);
    opts.max_disorder_fraction =
        num_field(house, "max_disorder_fraction", opts.max_disorder_fraction);
    dataio::IngestStats stats;
    frame = dataio::ingest_csv(string_field(house, "csv", ""), opts, &stats);
    if (house.contains("house_id")) frame.house_id = string_field(house, "house_id", "");
    ingest_stats = {{"total_rows", stats.total_rows},
                    {"malformed_rows", stats.malformed_rows},
                    {"reordered_pairs", stats.reordered_pairs}};
  } else {
    throw ConfigError("house section needs either 'synth' or 'csv'");
  }

  const auto hourly = dataio::resample_hourly(frame, {});
  const json wcfg = object_section(cfg, "windows");
  dataio::WindowSpec ws;
  ws.window_len = uint_field(wcfg, "window_len", ws.window_len);
  ws.train_fraction = num_field(wcfg, "train_fraction", ws.train_fraction);
  auto [train_ds, test_ds] = dataio::make_windows(hourly, ws);

  dataio::save_dataset(train_ds, (fs::path(dir) / "dataset_train.json").string());
  dataio::save_dataset(test_ds, (fs::path(dir) / "dataset_test.json").string());

  auto m = manifest_for_update(cfg, dir);
  report::set_artifact(m, dir, "dataset.train", "dataset_train.json");
  report::set_artifact(m, dir, "dataset.train.payload", "dataset_train.bin");
  report::set_artifact(m, dir, "dataset.test", "dataset_test.json");
  report::set_artifact(m, dir, "dataset.test.payload", "dataset_test.bin");

  json line{{"house", train_ds.house_id},
            {"train_windows", train_ds.num_windows()},
            {"test_windows", test_ds.num_windows()},
            {"features", train_ds.feature_names}};
  if (!ingest_stats.is_null()) line["ingest_stats"] = ingest_stats;
  return finish_stage("ingest", dir, m, cfg, "ingest",
                      {"dataset.train", "dataset.train.payload", "dataset.test",
                       "dataset.test.payload"},
                      std::move(line));
}

json run_train(const json& cfg) {
  const std::string dir = experiment_dir(cfg);
  DirLock lock(dir);
  auto m = require_manifest(dir);

  const auto train_ds =
      dataio::load_dataset(report::artifact_path(m, dir, "dataset.train"));
  const json tcfg = object_section(cfg, "train");
  const std::string regime = resolve_regime(cfg, tcfg);
  const std::uint64_t seed = experiment_seed(cfg);

  trainer::TrainConfig tc;
  tc.regime = trainer::regime_from_string(regime);
  tc.epochs = uint_field(tcfg, "epochs", tc.epochs);
  tc.batch_size = uint_field(tcfg, "batch_size", tc.batch_size);
  tc.learning_rate = num_field(tcfg, "learning_rate", tc.learning_rate);
  tc.seed = uint_field(tcfg, "seed", seed);
  tc.lambda = num_field(tcfg, "lambda", tc.lambda);
  tc.alpha = num_field(tcfg, "alpha", tc.alpha);
  tc.reg_subsample = uint_field(tcfg, "reg_subsample", tc.reg_subsample);
  tc.adaptive = bool_field(tcfg, "adaptive", tc.adaptive);
  tc.adapt_factor = num_field(tcfg, "adapt_factor", tc.adapt_factor);
  tc.patience = uint_field(tcfg, "patience", tc.patience);
  tc.dp_clip = num_field(tcfg, "dp_clip", tc.dp_clip);
  tc.dp_noise_multiplier = num_field(tcfg, "dp_noise_multiplier", tc.dp_noise_multiplier);

  forecaster::LstmConfig lc;
  lc.input_dim = train_ds.num_features();
  lc.hidden_size = uint_field(tcfg, "hidden_size", 32);
  lc.num_layers = uint_field(tcfg, "num_layers", 1);
  lc.dropout = num_field(tcfg, "dropout", 0.0);
  lc.seed = uint_field(tcfg, "init_seed", seed + 1000);

  auto res = trainer::train(train_ds, tc, lc);

  const std::string ck_name = "checkpoint_" + regime + ".json";
  const std::string rec_name = "train_record_" + regime + ".csv";
  forecaster::save_checkpoint(lc, res.params, (fs::path(dir) / ck_name).string());
  res.record.checkpoint_ref = ck_name;
  trainer::save_train_record(res.record, (fs::path(dir) / rec_name).string());

  report::set_artifact(m, dir, "checkpoint." + regime, ck_name);
  report::set_artifact(m, dir, "train_record." + regime, rec_name);

  const auto& last = res.record.epochs.back();
  json line{{"regime", regime},
            {"epochs", res.record.epochs.size()},
            {"final_train_mse", last.train_mse},
            {"final_val_mae", last.val_mae},
            {"final_lambda", last.lambda}};
  return finish_stage("train", dir, m, cfg, "train." + regime,
                      {"checkpoint." + regime, "train_record." + regime}, std::move(line));
}

json run_explain(const json& cfg) {
  const std::string dir = experiment_dir(cfg);
  DirLock lock(dir);
  auto m = require_manifest(dir);

  const json ecfg = object_section(cfg, "explain");
  const std::string regime = resolve_regime(cfg, ecfg);
  auto [lc, params] =
      forecaster::load_checkpoint(report::artifact_path(m, dir, "checkpoint." + regime));
  const auto train_ds =
      dataio::load_dataset(report::artifact_path(m, dir, "dataset.train"));
  const auto test_ds = dataio::load_dataset(report::artifact_path(m, dir, "dataset.test"));

  const std::size_t ref_stride = uint_field(ecfg, "reference_stride", 5);
  const std::size_t max_refs = uint_field(ecfg, "max_references", 40);
  const std::size_t member_stride = uint_field(ecfg, "member_stride", 1);
  const std::size_t max_members = uint_field(ecfg, "max_members", 50);
  const std::size_t nonmember_stride = uint_field(ecfg, "nonmember_stride", 5);
  const std::size_t max_nonmembers = uint_field(ecfg, "max_nonmembers", max_members);
  if (ref_stride == 0 || member_stride == 0 || nonmember_stride == 0)
    throw ConfigError("explain strides must be positive");

  const auto baseline = explainer::mean_profile(train_ds);
  const auto fn = explainer::lstm_model_fn(params, lc);
  auto fresh_matrix = [&](const char* model_id) {
    explainer::AttributionMatrix mtx;
    mtx.model_id = model_id;
    mtx.baseline_spec = "mean_profile:train";
    mtx.feature_names = train_ds.feature_names;
    return mtx;
  };

  auto refs = fresh_matrix(regime.c_str());
  auto members = fresh_matrix(regime.c_str());
  auto nonmembers = fresh_matrix(regime.c_str());

  const std::size_t n_fit = fit_window_count(train_ds.num_windows());
  std::size_t member_pos = 0;
  for (std::size_t k = 0; k < n_fit; ++k) {
    if (k % ref_stride == 0) {
      if (refs.rows.size() >= max_refs) continue;
      refs.rows.push_back(explainer::explain_window(fn, train_ds.input_tensor(k), baseline,
                                                    "r" + std::to_string(k)));
      refs.membership.push_back(true);
    } else {
      if (member_pos++ % member_stride != 0 || members.rows.size() >= max_members) continue;
      members.rows.push_back(explainer::explain_window(fn, train_ds.input_tensor(k), baseline,
                                                       "m" + std::to_string(k)));
      members.membership.push_back(true);
    }
  }
  for (std::size_t i = 0; i < test_ds.num_windows() && nonmembers.rows.size() < max_nonmembers;
       i += nonmember_stride) {
    nonmembers.rows.push_back(explainer::explain_window(fn, test_ds.input_tensor(i), baseline,
                                                        "n" + std::to_string(i)));
    nonmembers.membership.push_back(false);
  }
  if (refs.rows.empty() || members.rows.empty() || nonmembers.rows.empty())
    throw DataError("explain produced an empty window set; relax the strides or caps");

  std::vector<std::string> keys;
  const struct {
    const char* tag;
    const explainer::AttributionMatrix* mtx;
  } outputs[] = {{"references", &refs}, {"members", &members}, {"nonmembers", &nonmembers}};
  for (const auto& out : outputs) {
    const std::string name = "attributions_" + regime + "_" + out.tag + ".csv";
    explainer::save_attributions(*out.mtx, (fs::path(dir) / name).string());
    const std::string key = "attributions." + regime + "." + out.tag;
    report::set_artifact(m, dir, key, name);
    report::set_artifact(m, dir, key + ".meta", name + ".meta.json");
    keys.push_back(key);
    keys.push_back(key + ".meta");
  }

  json line{{"regime", regime},
            {"references", refs.rows.size()},
            {"members", members.rows.size()},
            {"nonmembers", nonmembers.rows.size()}};
  return finish_stage("explain", dir, m, cfg, "explain." + regime, keys, std::move(line));
}

json run_attack(const json& cfg) {
  const std::string dir = experiment_dir(cfg);
  DirLock lock(dir);
  auto m = require_manifest(dir);

  const json acfg = object_section(cfg, "attack");
  const std::string regime = resolve_regime(cfg, acfg);
  auto members = explainer::load_attributions(
      report::artifact_path(m, dir, "attributions." + regime + ".members"));
  const auto nonmembers = explainer::load_attributions(
      report::artifact_path(m, dir, "attributions." + regime + ".nonmembers"));
  const auto refs = explainer::load_attributions(
      report::artifact_path(m, dir, "attributions." + regime + ".references"));

  if (members.feature_names != nonmembers.feature_names ||
      members.model_id != nonmembers.model_id)
    throw DataError("member and nonmember attributions disagree on model or features");
  auto targets = std::move(members);
  targets.rows.insert(targets.rows.end(), nonmembers.rows.begin(), nonmembers.rows.end());
  targets.membership.insert(targets.membership.end(), nonmembers.membership.begin(),
                            nonmembers.membership.end());

  const auto rep = privattack::run_attacks(targets, refs, regime);

  std::vector<std::string> keys;
  const std::string rep_name = "attack_report_" + regime + ".json";
  privattack::save_attack_report(rep, (fs::path(dir) / rep_name).string());
  report::set_artifact(m, dir, "attack_report." + regime, rep_name);
  keys.push_back("attack_report." + regime);
  auto dump_scores = [&](const privattack::AttackScore& s, const std::string& suffix) {
    const std::string name = "attack_scores_" + regime + "_" + s.attack_name + suffix + ".csv";
    privattack::save_attack_scores(s, (fs::path(dir) / name).string());
    const std::string key = "attack_scores." + regime + "." + s.attack_name + suffix;
    report::set_artifact(m, dir, key, name);
    keys.push_back(key);
  };
  for (const auto& s : rep.nearest) dump_scores(s, "");
  for (const auto& s : rep.mean_over_references) dump_scores(s, ".mean");

  json aucs = json::object();
  for (const auto& a : rep.auc) aucs[a.attack_name] = a.auc;
  json line{{"regime", regime},
            {"targets", targets.rows.size()},
            {"references", refs.rows.size()},
            {"auc", aucs},
            {"summary",
             {{"shap_entropy", rep.summary.shap_entropy},
              {"shap_similarity", rep.summary.shap_similarity},
              {"js_divergence", rep.summary.js_divergence},
              {"rank_correlation", rep.summary.rank_correlation},
              {"rank_consistency", rep.summary.rank_consistency}}}};
  return finish_stage("attack", dir, m, cfg, "attack." + regime, keys, std::move(line));
}

json run_report(const json& cfg) {
  const std::string dir = experiment_dir(cfg);
  DirLock lock(dir);
  auto m = require_manifest(dir);
  report::verify_manifest(m, dir);

  std::vector<std::string> regimes;
  for (const char* r : {"baseline", "shap_reg", "dp"})
    if (m.has(std::string("checkpoint.") + r)) regimes.push_back(r);
  if (regimes.empty())
    throw ConfigError("incomplete manifest: no model checkpoints; run train first");

  std::string missing;
  auto need = [&](const std::string& key) {
    if (!m.has(key)) missing += (missing.empty() ? "" : ", ") + key;
  };
  need("dataset.train");
  need("dataset.test");
  for (const auto& r : regimes) {
    need("attack_report." + r);
    need("attributions." + r + ".nonmembers");
  }
  if (!missing.empty()) throw ConfigError("incomplete manifest: missing [" + missing + "]");

  const auto test_ds = dataio::load_dataset(report::artifact_path(m, dir, "dataset.test"));
  std::vector<numkit::Tensor> test_windows;
  test_windows.reserve(test_ds.num_windows());
  for (std::size_t i = 0; i < test_ds.num_windows(); ++i)
    test_windows.push_back(test_ds.input_tensor(i));

  report::ComparisonTable table;
  std::vector<report::HourOfDayTable> heat, hourly;
  for (const auto& r : regimes) {
    const auto atk =
        privattack::load_attack_report(report::artifact_path(m, dir, "attack_report." + r));
    auto [lc, params] =
        forecaster::load_checkpoint(report::artifact_path(m, dir, "checkpoint." + r));
    const auto preds = forecaster::predict_batch(params, lc, test_windows);
    double mae = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      mae += std::fabs(test_ds.denormalize_target(preds[i]) -
                       test_ds.denormalize_target(test_ds.targets[i]));
    mae /= static_cast<double>(preds.size());
    table.rows.push_back(report::comparison_row(test_ds.house_id, r, atk, mae));

    const auto nonmembers = explainer::load_attributions(
        report::artifact_path(m, dir, "attributions." + r + ".nonmembers"));
    std::vector<int> hours;
    hours.reserve(nonmembers.rows.size());
    for (const auto& row : nonmembers.rows) {
      const auto idx = window_index(row.sample_id, 'n', test_ds.num_windows());
      hours.push_back(hour_of_day(test_ds.target_timestamps[idx]));
    }
    heat.push_back(report::attribution_heatmap(nonmembers, hours));
    hourly.push_back(report::hourly_entropy(nonmembers, hours));
  }

  std::size_t baseline_idx = std::string::npos;
  for (std::size_t i = 0; i < regimes.size(); ++i)
    if (regimes[i] == "baseline") baseline_idx = i;

  report::save_comparison_table(table, (fs::path(dir) / "comparison_table.csv").string());
  report::save_heatmap(heat, (fs::path(dir) / "heatmap.csv").string());
  report::save_entropy_hourly(hourly, baseline_idx,
                              (fs::path(dir) / "entropy_hourly.csv").string());
  report::save_entropy_aggregate(hourly, baseline_idx,
                                 (fs::path(dir) / "entropy_aggregate.csv").string());

  report::set_artifact(m, dir, "report.comparison", "comparison_table.csv");
  report::set_artifact(m, dir, "report.heatmap", "heatmap.csv");
  report::set_artifact(m, dir, "report.entropy_hourly", "entropy_hourly.csv");
  report::set_artifact(m, dir, "report.entropy_aggregate", "entropy_aggregate.csv");

  json models = json::array();
  for (const auto& row : table.rows)
    models.push_back({{"model", row.model},
                      {"shap_entropy", row.shap_entropy},
                      {"mae", row.mae}});
  json line{{"house", test_ds.house_id}, {"models", models}};
  return finish_stage("report", dir, m, cfg, "report",
                      {"report.comparison", "report.heatmap", "report.entropy_hourly",
                       "report.entropy_aggregate"},
                      std::move(line));
}

}  // namespace shapguard::pipeline
