#pragma once

#include <string>

#include "common/jsonutil.hpp"

namespace shapguard::pipeline {

/// Advisory exclusive lock on `<dir>/.lock`; blocks until acquired and
/// releases on destruction. Serializes stages that write into the same
/// experiment directory.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

/// Every stage takes one merged JSON config. Common fields:
///   experiment_dir  directory all artifacts live in (required)
///   experiment_id   defaults to the directory's basename
///   seed            experiment seed, default 0
///   regime          which model a train/explain/attack invocation
///                   addresses: "baseline", "shap_reg" or "dp"
/// Each stage registers its outputs in `<dir>/manifest.json` under
/// stable keys ("dataset.train", "checkpoint.<regime>",
/// "attributions.<regime>.members", ...), echoes its config into the
/// manifest's config_snapshot, and appends one timestamp-free JSON line
/// to `<dir>/run_log.jsonl`. The returned json is that log line.
///
/// Artifacts are deterministic functions of the config: re-running a
/// stage with the same config rewrites byte-identical files.

/// `house` section selects the data source:
///   {"synth": {...generator config...}}      synthesized house
///   {"csv": "path", "house_id": "name"}      power CSV on disk
/// plus optional {"windows": {"window_len": T, "train_fraction": f}}.
/// Produces hourly windows split chronologically into train and test.
json run_ingest(const json& cfg);

/// `train` section carries the optimizer and model hyperparameters
/// (epochs, batch_size, learning_rate, lambda, alpha, reg_subsample,
/// adaptive, adapt_factor, patience, dp_clip, dp_noise_multiplier,
/// hidden_size, num_layers, dropout). The shuffle/noise streams seed
/// from the experiment seed; parameter init uses init_seed (default
/// experiment seed + 1000).
json run_train(const json& cfg);

/// Explains three window sets with exact coalition enumeration against
/// the train-split mean profile: references (every reference_stride-th
/// fit window, the attacker's known members), members (remaining fit
/// windows), and nonmembers (test windows). Sample ids encode the
/// window index in its split ("m12", "n3", "r0"), which the report
/// stage uses to recover target hours. `explain` section fields:
/// reference_stride, max_references, member_stride, max_members,
/// nonmember_stride, max_nonmembers.
json run_explain(const json& cfg);

/// Runs the five-attack battery for one regime: targets are the member
/// and nonmember attributions, references the reference set. Writes the
/// report JSON and one per-sample score CSV per attack.
json run_attack(const json& cfg);

/// Verifies the manifest (every artifact present and hash-matching),
/// then emits the cross-model roll-ups over all regimes that completed
/// the attack stage: comparison_table.csv (five privacy metrics plus
/// test MAE in watts per model), heatmap.csv, entropy_hourly.csv and
/// entropy_aggregate.csv (deltas against the baseline regime when it is
/// present). Heatmap and entropy tables summarize the nonmember set.
json run_report(const json& cfg);

}  // namespace shapguard::pipeline
