#pragma once

#include <map>
#include <string>

#include "common/jsonutil.hpp"

namespace shapguard::report {

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

struct ArtifactRef {
  std::string path;    // relative to the experiment directory
  std::string sha256;  // of the file bytes at registration time
};

/// One experiment directory's ledger: which artifacts exist, what they
/// hashed to when written, and the config echo of every stage that ran.
/// Keys follow `<kind>.<model or split>` (for example "dataset.train",
/// "checkpoint.shap_reg", "attack_report.baseline").
struct ExperimentManifest {
  std::string experiment_id;
  std::string tool_version;
  json config_snapshot = json::object();
  std::map<std::string, ArtifactRef> artifacts;

  bool has(const std::string& key) const { return artifacts.count(key) != 0; }
};

/// Registers a file already written inside `dir` under `key`, hashing
/// its current bytes.
void set_artifact(ExperimentManifest& m, const std::string& dir, const std::string& key,
                  const std::string& relpath);

/// Absolute path of a registered artifact. DataError on a missing key.
std::string artifact_path(const ExperimentManifest& m, const std::string& dir,
                          const std::string& key);

/// Checks that every referenced file exists and still hashes to its
/// recorded digest; throws DataError naming all offenders at once.
void verify_manifest(const ExperimentManifest& m, const std::string& dir);

void save_manifest(const ExperimentManifest& m, const std::string& dir);
ExperimentManifest load_manifest(const std::string& dir);
bool manifest_exists(const std::string& dir);

}  // namespace shapguard::report
