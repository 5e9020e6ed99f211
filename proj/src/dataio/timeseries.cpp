#include "dataio/timeseries.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::dataio {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

bool looks_like_integer(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

// floor division, safe for negative epochs
std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::int64_t parse_timestamp(const std::string& field) {
  if (looks_like_integer(field)) {
    return std::stoll(field);
  }
  // ISO-8601: YYYY-MM-DD[T ]HH:MM[:SS][Z]
  int y, mo, d, h, mi;
  int s = 0;
  char sep;
  const int got = std::sscanf(field.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h,
                              &mi, &s);
  if (got < 6 || (sep != 'T' && sep != ' ')) {
    throw DataError("unparseable timestamp: '" + field + "'");
  }
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = s;
  const time_t t = timegm(&tm);  // interpreted as UTC
  if (t == static_cast<time_t>(-1)) {
    throw DataError("timestamp out of range: '" + field + "'");
  }
  return static_cast<std::int64_t>(t);
}

void TimeSeriesFrame::validate() const {
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] == timestamps[i - 1]) {
      throw DataError("duplicate timestamp " + std::to_string(timestamps[i]) + " in frame '" +
                      house_id + "'");
    }
    if (timestamps[i] < timestamps[i - 1]) {
      throw DataError("non-monotone timestamps in frame '" + house_id + "'");
    }
  }
  if (aggregate.size() != timestamps.size()) {
    throw DataError("aggregate length does not match timestamps");
  }
  if (channels.size() != channel_names.size()) {
    throw DataError("channel count does not match channel names");
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].size() != timestamps.size()) {
      throw DataError("channel '" + channel_names[c] + "' length mismatch");
    }
  }
  auto check_nonneg = [&](const std::vector<double>& v, const std::string& name) {
    for (double x : v) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DataError("negative or non-finite power reading in '" + name + "'");
      }
    }
  };
  check_nonneg(aggregate, "aggregate");
  for (std::size_t c = 0; c < channels.size(); ++c) check_nonneg(channels[c], channel_names[c]);
}

TimeSeriesFrame ingest_csv(const std::string& path, const IngestOptions& opts,
                           IngestStats* stats_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: " + path);
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "aggregate") {
    throw DataError("CSV header must be 'timestamp,aggregate,<appliance...>' in " + path);
  }
  const std::size_t ncols = header.size();
  const std::size_t nch = ncols - 2;

  struct Row {
    std::int64_t ts;
    std::vector<double> vals;  // aggregate + channels
  };
  std::vector<Row> rows;
  IngestStats stats;

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++stats.total_rows;
    const auto fields = split_csv_line(line);
    if (fields.size() != ncols) {
      ++stats.malformed_rows;
      continue;
    }
    Row row;
    row.vals.resize(ncols - 1);
    bool ok = true;
    try {
      row.ts = parse_timestamp(fields[0]);
    } catch (const DataError&) {
      ok = false;
    }
    for (std::size_t c = 1; ok && c < ncols; ++c) {
      double v;
      if (!parse_double(fields[c], &v) || !(v >= 0.0) || !std::isfinite(v)) {
        ok = false;
      } else {
        row.vals[c - 1] = v;
      }
    }
    if (!ok) {
      ++stats.malformed_rows;
      continue;
    }
    rows.push_back(std::move(row));
  }

  if (stats.total_rows == 0 || rows.empty()) throw DataError("CSV has no data rows: " + path);
  const double malformed_frac =
      static_cast<double>(stats.malformed_rows) / static_cast<double>(stats.total_rows);
  if (malformed_frac > opts.max_malformed_fraction) {
    throw DataError("too many malformed rows in " + path + ": " +
                    std::to_string(stats.malformed_rows) + " of " +
                    std::to_string(stats.total_rows));
  }

  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ts < rows[i - 1].ts) ++stats.reordered_pairs;
  }
  const double disorder_frac =
      static_cast<double>(stats.reordered_pairs) / static_cast<double>(rows.size());
  if (disorder_frac > opts.max_disorder_fraction) {
    throw DataError("timestamps out of order beyond reorder tolerance in " + path);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.ts < b.ts; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ts == rows[i - 1].ts) {
      throw DataError("duplicate timestamp " + std::to_string(rows[i].ts) + " in " + path);
    }
  }

  TimeSeriesFrame frame;
  frame.house_id = std::filesystem::path(path).stem().string();
  frame.channel_names.assign(header.begin() + 2, header.end());
  frame.timestamps.reserve(rows.size());
  frame.aggregate.reserve(rows.size());
  frame.channels.assign(nch, {});
  for (auto& ch : frame.channels) ch.reserve(rows.size());
  for (const Row& row : rows) {
    frame.timestamps.push_back(row.ts);
    frame.aggregate.push_back(row.vals[0]);
    for (std::size_t c = 0; c < nch; ++c) frame.channels[c].push_back(row.vals[c + 1]);
  }
  frame.validate();
  if (stats_out) *stats_out = stats;
  return frame;
}

void write_csv(const TimeSeriesFrame& frame, const std::string& path) {
  frame.validate();
  std::ostringstream os;
  os << "timestamp,aggregate";
  for (const auto& name : frame.channel_names) os << "," << name;
  os << "\n";
  for (std::size_t i = 0; i < frame.size(); ++i) {
    os << frame.timestamps[i] << "," << fmt_double(frame.aggregate[i]);
    for (std::size_t c = 0; c < frame.num_channels(); ++c) {
      os << "," << fmt_double(frame.channels[c][i]);
    }
    os << "\n";
  }
  spit_file(path, os.str());
}

TimeSeriesFrame resample_hourly(const TimeSeriesFrame& frame, const ResampleOptions& opts) {
  frame.validate();
  const std::int64_t first_hour = floor_div(frame.timestamps.front(), 3600);
  const std::int64_t last_hour = floor_div(frame.timestamps.back(), 3600);
  if (frame.size() < 2 || last_hour == first_hour ||
      frame.timestamps.back() - frame.timestamps.front() < 3600) {
    throw DataError("frame must span at least two hours to resample");
  }
  const std::size_t nhours = static_cast<std::size_t>(last_hour - first_hour + 1);
  const std::size_t nseries = frame.num_channels() + 1;  // aggregate first

  std::vector<std::vector<double>> sums(nseries, std::vector<double>(nhours, 0.0));
  std::vector<std::size_t> counts(nhours, 0);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const std::size_t h =
        static_cast<std::size_t>(floor_div(frame.timestamps[i], 3600) - first_hour);
    ++counts[h];
    sums[0][h] += frame.aggregate[i];
    for (std::size_t c = 0; c < frame.num_channels(); ++c) sums[c + 1][h] += frame.channels[c][i];
  }

  // reject gaps too long to interpolate
  std::size_t run = 0;
  for (std::size_t h = 0; h < nhours; ++h) {
    if (counts[h] == 0) {
      if (++run > opts.max_gap_hours) {
        throw DataError("gap of more than " + std::to_string(opts.max_gap_hours) +
                        " empty hours; refusing to interpolate");
      }
    } else {
      run = 0;
    }
  }

  TimeSeriesFrame out;
  out.house_id = frame.house_id;
  out.channel_names = frame.channel_names;
  out.timestamps.resize(nhours);
  out.aggregate.resize(nhours);
  out.channels.assign(frame.num_channels(), std::vector<double>(nhours, 0.0));
  out.interpolated.assign(nhours, false);

  for (std::size_t h = 0; h < nhours; ++h) {
    out.timestamps[h] = (first_hour + static_cast<std::int64_t>(h)) * 3600;
    if (counts[h] > 0) {
      const double inv = 1.0 / static_cast<double>(counts[h]);
      out.aggregate[h] = sums[0][h] * inv;
      for (std::size_t c = 0; c < frame.num_channels(); ++c)
        out.channels[c][h] = sums[c + 1][h] * inv;
    } else {
      out.interpolated[h] = true;
    }
  }

  // linear interpolation across flagged hours; first/last hours always
  // have readings because they contain the frame endpoints
  for (std::size_t h = 0; h < nhours; ++h) {
    if (!out.interpolated[h]) continue;
    std::size_t lo = h;
    while (lo > 0 && out.interpolated[lo]) --lo;
    std::size_t hi = h;
    while (hi + 1 < nhours && out.interpolated[hi]) ++hi;
    const double t = static_cast<double>(h - lo) / static_cast<double>(hi - lo);
    auto lerp = [&](const std::vector<double>& v) { return v[lo] + (v[hi] - v[lo]) * t; };
    out.aggregate[h] = lerp(out.aggregate);
    for (std::size_t c = 0; c < frame.num_channels(); ++c)
      out.channels[c][h] = lerp(out.channels[c]);
  }

  out.validate();
  return out;
}

}  // namespace shapguard::dataio
