#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace shapguard::dataio {

/// Timestamped multi-channel power readings: one aggregate series plus
/// D named appliance series, all in watts. Immutable once built.
struct TimeSeriesFrame {
  std::string house_id;
  std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
  std::vector<double> aggregate;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;  // channel_names.size() series
  /// Set by resample_hourly for hours that had no readings and were
  /// filled by interpolation. Empty for raw frames.
  std::vector<bool> interpolated;

  std::size_t size() const { return timestamps.size(); }
  std::size_t num_channels() const { return channels.size(); }

  /// Enforces the frame invariants (monotone timestamps, equal lengths,
  /// non-negative power). Throws DataError.
  void validate() const;
};

struct IngestOptions {
  double max_malformed_fraction = 0.05;
  /// Fraction of adjacent raw-order timestamp inversions tolerated
  /// before the file is rejected; rows within tolerance are sorted.
  double max_disorder_fraction = 0.05;
};

struct IngestStats {
  std::size_t total_rows = 0;
  std::size_t malformed_rows = 0;
  std::size_t reordered_pairs = 0;
};

/// Parses a power CSV: header `timestamp,aggregate,<appliance...>`,
/// timestamps ISO-8601 or epoch seconds (auto-detected). Malformed rows
/// are counted and skipped up to the configured tolerance.
TimeSeriesFrame ingest_csv(const std::string& path, const IngestOptions& opts,
                           IngestStats* stats = nullptr);

/// Writes a frame in the same CSV schema, with full float precision so
/// ingest_csv(write_csv(f)) reproduces f exactly.
void write_csv(const TimeSeriesFrame& frame, const std::string& path);

struct ResampleOptions {
  /// Longest run of empty hours that may be filled by linear
  /// interpolation; anything longer is refused.
  std::size_t max_gap_hours = 24;
};

/// Collapses raw readings to one row per hour (mean power over the
/// readings in that hour). Empty hours are linearly interpolated and
/// flagged in `interpolated`.
TimeSeriesFrame resample_hourly(const TimeSeriesFrame& frame, const ResampleOptions& opts = {});

std::int64_t parse_timestamp(const std::string& field);

}  // namespace shapguard::dataio
