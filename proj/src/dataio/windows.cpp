#include "dataio/windows.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::dataio {

namespace {

constexpr int kDatasetFormatVersion = 1;

double normalize_value(double v, const NormParams& p) {
  if (p.zero_range) return 0.0;
  const double z = (v - p.min) / (p.max - p.min);
  return std::min(1.0, std::max(0.0, z));
}

NormParams fit_norm(const std::vector<double>& series, std::size_t n_rows) {
  NormParams p;
  p.min = series[0];
  p.max = series[0];
  for (std::size_t i = 1; i < n_rows; ++i) {
    p.min = std::min(p.min, series[i]);
    p.max = std::max(p.max, series[i]);
  }
  p.zero_range = (p.max == p.min);
  return p;
}

json norm_to_json(const NormParams& p) {
  return json{{"min", p.min}, {"max", p.max}, {"zero_range", p.zero_range}};
}

NormParams norm_from_json(const json& j) {
  NormParams p;
  p.min = j.at("min").get<double>();
  p.max = j.at("max").get<double>();
  p.zero_range = j.at("zero_range").get<bool>();
  return p;
}

}  // namespace

numkit::Tensor WindowedDataset::input_tensor(std::size_t i) const {
  if (i >= num_windows()) throw ConfigError("window index out of range");
  const std::size_t td = window_len * num_features();
  numkit::Tensor x = numkit::Tensor::zeros({window_len, num_features()});
  std::copy(inputs.begin() + static_cast<std::ptrdiff_t>(i * td),
            inputs.begin() + static_cast<std::ptrdiff_t>((i + 1) * td), x.raw().begin());
  return x;
}

double WindowedDataset::denormalize_target(double y) const {
  if (target_norm.zero_range) return target_norm.min;
  return target_norm.min + y * (target_norm.max - target_norm.min);
}

void WindowedDataset::validate() const {
  const std::size_t n = num_windows();
  const std::size_t d = num_features();
  if (window_len < 2) throw DataError("window length below 2");
  if (input_norms.size() != d) throw DataError("norm params do not match feature count");
  if (inputs.size() != n * window_len * d) throw DataError("input buffer size mismatch");
  if (target_timestamps.size() != n) throw DataError("target timestamp count mismatch");
  for (std::size_t i = 1; i < n; ++i) {
    if (target_timestamps[i] <= target_timestamps[i - 1]) {
      throw DataError("target timestamps not strictly increasing");
    }
  }
  for (double v : inputs) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("normalized input outside [0,1]");
  }
  for (double v : targets) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("normalized target outside [0,1]");
  }
}

std::pair<WindowedDataset, WindowedDataset> make_windows(const TimeSeriesFrame& frame,
                                                         const WindowSpec& spec) {
  frame.validate();
  const std::size_t T = spec.window_len;
  const std::size_t D = frame.num_channels();
  const std::size_t n = frame.size();
  if (T < 2) throw ConfigError("window length must be at least 2");
  if (D == 0) throw DataError("frame has no appliance channels");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0,1)");
  }
  const std::size_t split_row = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  if (split_row == 0 || split_row >= n) throw DataError("split boundary outside frame span");
  // a window needs T input rows plus the target row inside its segment
  if (split_row < T + 1 || n - split_row < T + 1) {
    throw DataError("too few hours on one side of the split for a full window");
  }

  std::vector<NormParams> input_norms(D);
  for (std::size_t c = 0; c < D; ++c) input_norms[c] = fit_norm(frame.channels[c], split_row);
  const NormParams target_norm = fit_norm(frame.aggregate, split_row);

  auto build = [&](std::size_t begin, std::size_t end, const char* tag) {
    WindowedDataset ds;
    ds.house_id = frame.house_id;
    ds.split_tag = tag;
    ds.window_len = T;
    ds.feature_names = frame.channel_names;
    ds.input_norms = input_norms;
    ds.target_norm = target_norm;
    // first window start such that rows [i, i+T] all fall in [begin, end)
    for (std::size_t i = begin; i + T < end; ++i) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < D; ++c) {
          ds.inputs.push_back(normalize_value(frame.channels[c][i + t], input_norms[c]));
        }
      }
      ds.targets.push_back(normalize_value(frame.aggregate[i + T], target_norm));
      ds.target_timestamps.push_back(frame.timestamps[i + T]);
    }
    ds.validate();
    return ds;
  };

  return {build(0, split_row, "train"), build(split_row, n, "test")};
}

void save_dataset(const WindowedDataset& ds, const std::string& path) {
  ds.validate();
  const std::filesystem::path manifest_path(path);
  std::filesystem::path payload_path = manifest_path;
  payload_path.replace_extension(".bin");

  const std::size_t n = ds.num_windows();
  const std::size_t td = ds.window_len * ds.num_features();
  std::string payload;
  payload.resize((n * td + n) * sizeof(double) + n * sizeof(std::int64_t));
  char* p = payload.data();
  std::memcpy(p, ds.inputs.data(), n * td * sizeof(double));
  p += n * td * sizeof(double);
  std::memcpy(p, ds.targets.data(), n * sizeof(double));
  p += n * sizeof(double);
  std::memcpy(p, ds.target_timestamps.data(), n * sizeof(std::int64_t));
  spit_file(payload_path.string(), payload);

  json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["house_id"] = ds.house_id;
  manifest["split_tag"] = ds.split_tag;
  manifest["window_len"] = ds.window_len;
  manifest["num_windows"] = n;
  manifest["feature_names"] = ds.feature_names;
  json norms = json::array();
  for (const auto& np : ds.input_norms) norms.push_back(norm_to_json(np));
  manifest["input_norms"] = norms;
  manifest["target_norm"] = norm_to_json(ds.target_norm);
  manifest["payload"] = payload_path.filename().string();
  manifest["payload_bytes"] = payload.size();
  save_json(path, manifest);
}

WindowedDataset load_dataset(const std::string& path) {
  const json manifest = load_json(path);
  const int version = manifest.at("format_version").get<int>();
  if (version != kDatasetFormatVersion) {
    throw DataError("unsupported dataset format version " + std::to_string(version));
  }

  WindowedDataset ds;
  ds.house_id = manifest.at("house_id").get<std::string>();
  ds.split_tag = manifest.at("split_tag").get<std::string>();
  ds.window_len = manifest.at("window_len").get<std::size_t>();
  ds.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
  for (const auto& j : manifest.at("input_norms")) ds.input_norms.push_back(norm_from_json(j));
  ds.target_norm = norm_from_json(manifest.at("target_norm"));

  const std::size_t n = manifest.at("num_windows").get<std::size_t>();
  const std::size_t td = ds.window_len * ds.feature_names.size();
  const std::filesystem::path payload_path =
      std::filesystem::path(path).parent_path() / manifest.at("payload").get<std::string>();
  const std::string payload = slurp_file(payload_path.string());
  const std::size_t expect = (n * td + n) * sizeof(double) + n * sizeof(std::int64_t);
  if (payload.size() != expect) {
    throw DataError("dataset payload size mismatch for " + payload_path.string() + ": got " +
                    std::to_string(payload.size()) + ", expected " + std::to_string(expect));
  }
  ds.inputs.resize(n * td);
  ds.targets.resize(n);
  ds.target_timestamps.resize(n);
  const char* p = payload.data();
  std::memcpy(ds.inputs.data(), p, n * td * sizeof(double));
  p += n * td * sizeof(double);
  std::memcpy(ds.targets.data(), p, n * sizeof(double));
  p += n * sizeof(double);
  std::memcpy(ds.target_timestamps.data(), p, n * sizeof(std::int64_t));
  ds.validate();
  return ds;
}

}  // namespace shapguard::dataio
