#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dataio/timeseries.hpp"
#include "numkit/tensor.hpp"

namespace shapguard::dataio {

struct NormParams {
  double min = 0.0;
  double max = 0.0;
  /// True when the fitted range was degenerate (max == min); such a
  /// feature normalizes to 0.0 everywhere.
  bool zero_range = false;
};

/// Sliding supervised windows over an hourly frame: inputs are T x D
/// matrices of normalized appliance channels, the target is the
/// normalized aggregate at the hour immediately after the window.
struct WindowedDataset {
  std::string house_id;
  std::string split_tag;  // "train" or "test"
  std::size_t window_len = 0;
  std::vector<std::string> feature_names;       // D
  std::vector<NormParams> input_norms;          // D, fitted on train rows only
  NormParams target_norm;                       // aggregate, fitted on train rows only
  std::vector<double> inputs;                   // N*T*D, window-major then row-major
  std::vector<double> targets;                  // N
  std::vector<std::int64_t> target_timestamps;  // N, epoch seconds of the target hour

  std::size_t num_windows() const { return targets.size(); }
  std::size_t num_features() const { return feature_names.size(); }

  /// The i-th window as a T x D matrix.
  numkit::Tensor input_tensor(std::size_t i) const;

  /// Maps a normalized target back to watts.
  double denormalize_target(double y) const;

  /// Enforces invariants: values in [0,1], consistent array lengths,
  /// increasing target timestamps. Throws DataError.
  void validate() const;
};

struct WindowSpec {
  std::size_t window_len = 24;  // T
  double train_fraction = 0.8;
};

/// Splits the frame chronologically at round(train_fraction * rows),
/// fits min-max normalization on the train rows only, and enumerates
/// stride-1 windows whose inputs and target lie entirely inside their
/// own segment. Test values outside the fitted range are clamped.
std::pair<WindowedDataset, WindowedDataset> make_windows(const TimeSeriesFrame& frame,
                                                         const WindowSpec& spec);

/// Writes `<path>` (JSON manifest) and the sibling binary payload named
/// in the manifest. Round-trips bit-exactly through load_dataset.
void save_dataset(const WindowedDataset& ds, const std::string& path);

WindowedDataset load_dataset(const std::string& path);

}  // namespace shapguard::dataio
