#include "report/manifest.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>

#include "common/error.hpp"

namespace shapguard::report {

namespace {

std::string to_hex(const unsigned char* md, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = digits[md[i] >> 4];
    out[2 * i + 1] = digits[md[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("sha256 digest failed");
  return to_hex(md, len);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for hashing: " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericError("sha256 init failed");
  }
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    if (EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount())) != 1) {
      EVP_MD_CTX_free(ctx);
      throw NumericError("sha256 update failed");
    }
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  const int ok = EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (ok != 1) throw NumericError("sha256 final failed");
  return to_hex(md, len);
}

void set_artifact(ExperimentManifest& m, const std::string& dir, const std::string& key,
                  const std::string& relpath) {
  if (key.empty() || relpath.empty()) throw ConfigError("artifact key and path must be non-empty");
  ArtifactRef ref;
  ref.path = relpath;
  ref.sha256 = sha256_file((std::filesystem::path(dir) / relpath).string());
  m.artifacts[key] = std::move(ref);
}

std::string artifact_path(const ExperimentManifest& m, const std::string& dir,
                          const std::string& key) {
  auto it = m.artifacts.find(key);
  if (it == m.artifacts.end())
    throw DataError("manifest has no artifact '" + key + "'; run the producing stage first");
  return (std::filesystem::path(dir) / it->second.path).string();
}

void verify_manifest(const ExperimentManifest& m, const std::string& dir) {
  std::string missing, mismatched;
  for (const auto& [key, ref] : m.artifacts) {
    const auto path = std::filesystem::path(dir) / ref.path;
    if (!std::filesystem::exists(path)) {
      missing += (missing.empty() ? "" : ", ") + key;
    } else if (sha256_file(path.string()) != ref.sha256) {
      mismatched += (mismatched.empty() ? "" : ", ") + key;
    }
  }
  if (!missing.empty() || !mismatched.empty()) {
    std::string msg = "manifest verification failed:";
    if (!missing.empty()) msg += " missing [" + missing + "]";
    if (!mismatched.empty()) msg += " hash mismatch [" + mismatched + "]";
    throw DataError(msg);
  }
}

namespace {
const char* kManifestName = "manifest.json";
}

void save_manifest(const ExperimentManifest& m, const std::string& dir) {
  json j;
  j["format_version"] = 1;
  j["experiment_id"] = m.experiment_id;
  j["tool_version"] = m.tool_version;
  j["config_snapshot"] = m.config_snapshot;
  json arts = json::object();
  for (const auto& [key, ref] : m.artifacts)
    arts[key] = json{{"path", ref.path}, {"sha256", ref.sha256}};
  j["artifacts"] = arts;
  save_json((std::filesystem::path(dir) / kManifestName).string(), j);
}

ExperimentManifest load_manifest(const std::string& dir) {
  const auto path = (std::filesystem::path(dir) / kManifestName).string();
  const json j = load_json(path);
  if (!j.contains("format_version") || j["format_version"] != 1)
    throw DataError("unsupported manifest format in " + path);
  ExperimentManifest m;
  try {
    m.experiment_id = j.at("experiment_id").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_snapshot = j.value("config_snapshot", json::object());
    for (const auto& [key, val] : j.at("artifacts").items()) {
      ArtifactRef ref;
      ref.path = val.at("path").get<std::string>();
      ref.sha256 = val.at("sha256").get<std::string>();
      m.artifacts[key] = std::move(ref);
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path + ": " + e.what());
  }
  return m;
}

bool manifest_exists(const std::string& dir) {
  return std::filesystem::exists(std::filesystem::path(dir) / kManifestName);
}

}  // namespace shapguard::report
