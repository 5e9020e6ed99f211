#include "dataio/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace shapguard::dataio {

namespace {

// readings start on an hour boundary: 2020-01-01T00:00:00Z
constexpr std::int64_t kEpochStart = 1577836800;

std::array<double, 24> hours_from_json(const json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 24) {
    throw ConfigError(std::string(what) + " must have exactly 24 entries");
  }
  std::array<double, 24> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (days < 2) throw ConfigError("synthetic config needs days >= 2");
  if (appliances.size() < 2) throw ConfigError("synthetic config needs at least 2 appliances");
  if (cadence_seconds == 0 || cadence_seconds > 3600 || 3600 % cadence_seconds != 0) {
    throw ConfigError("cadence_seconds must divide 3600");
  }
  if (!(base_load_watts >= 0.0)) throw ConfigError("base_load_watts must be non-negative");
  for (double w : occupancy) {
    if (!(w >= 0.0)) throw ConfigError("occupancy weights must be non-negative");
  }
  for (const auto& a : appliances) {
    if (a.name.empty()) throw ConfigError("appliance name must be non-empty");
    if (!(a.mean_watts > 0.0)) throw ConfigError("appliance mean_watts must be positive");
    if (!(a.jitter >= 0.0 && a.jitter < 1.0)) {
      throw ConfigError("appliance jitter must lie in [0,1)");
    }
    if (!(a.standby_watts >= 0.0)) throw ConfigError("standby_watts must be non-negative");
    for (double p : a.schedule) {
      if (!(p >= 0.0)) throw ConfigError("schedule entries must be non-negative");
    }
  }
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg;
  cfg.house_id = j.at("house_id").get<std::string>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.days = j.at("days").get<std::size_t>();
  if (j.contains("cadence_seconds")) cfg.cadence_seconds = j.at("cadence_seconds").get<std::size_t>();
  if (j.contains("base_load_watts")) cfg.base_load_watts = j.at("base_load_watts").get<double>();
  cfg.occupancy = hours_from_json(j.at("occupancy"), "occupancy");
  for (const auto& aj : j.at("appliances")) {
    ApplianceSpec a;
    a.name = aj.at("name").get<std::string>();
    a.mean_watts = aj.at("mean_watts").get<double>();
    if (aj.contains("jitter")) a.jitter = aj.at("jitter").get<double>();
    if (aj.contains("standby_watts")) a.standby_watts = aj.at("standby_watts").get<double>();
    a.schedule = hours_from_json(aj.at("schedule"), "schedule");
    cfg.appliances.push_back(std::move(a));
  }
  cfg.validate();
  return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["house_id"] = cfg.house_id;
  j["seed"] = cfg.seed;
  j["days"] = cfg.days;
  j["cadence_seconds"] = cfg.cadence_seconds;
  j["base_load_watts"] = cfg.base_load_watts;
  j["occupancy"] = std::vector<double>(cfg.occupancy.begin(), cfg.occupancy.end());
  json apps = json::array();
  for (const auto& a : cfg.appliances) {
    json aj;
    aj["name"] = a.name;
    aj["mean_watts"] = a.mean_watts;
    aj["jitter"] = a.jitter;
    aj["standby_watts"] = a.standby_watts;
    aj["schedule"] = std::vector<double>(a.schedule.begin(), a.schedule.end());
    apps.push_back(std::move(aj));
  }
  j["appliances"] = std::move(apps);
  return j;
}

TimeSeriesFrame generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t ticks_per_hour = 3600 / cfg.cadence_seconds;
  const std::size_t total_hours = cfg.days * 24;
  const std::size_t total_ticks = total_hours * ticks_per_hour;
  const std::size_t napp = cfg.appliances.size();

  TimeSeriesFrame frame;
  frame.house_id = cfg.house_id;
  frame.timestamps.resize(total_ticks);
  for (std::size_t i = 0; i < total_ticks; ++i) {
    frame.timestamps[i] =
        kEpochStart + static_cast<std::int64_t>(i) * static_cast<std::int64_t>(cfg.cadence_seconds);
  }
  frame.channel_names.reserve(napp);
  for (const auto& a : cfg.appliances) frame.channel_names.push_back(a.name);
  frame.channels.assign(napp, std::vector<double>(total_ticks, 0.0));

  const RngStream root(cfg.seed);
  for (std::size_t ai = 0; ai < napp; ++ai) {
    const ApplianceSpec& app = cfg.appliances[ai];
    RngStream rng = root.derive(ai + 1);
    std::vector<double>& series = frame.channels[ai];
    for (std::size_t h = 0; h < total_hours; ++h) {
      const std::size_t hod = h % 24;
      const double p_on =
          std::min(1.0, app.schedule[hod] * cfg.occupancy[hod]);
      const bool on = rng.next_unit() < p_on;
      for (std::size_t t = 0; t < ticks_per_hour; ++t) {
        // jitter is drawn every tick so stream position does not depend
        // on the on/off outcome
        const double u = rng.next_uniform(-1.0, 1.0);
        const double w =
            on ? app.mean_watts * (1.0 + app.jitter * u) : app.standby_watts;
        series[h * ticks_per_hour + t] = w;
      }
    }
  }

  frame.aggregate.resize(total_ticks);
  for (std::size_t i = 0; i < total_ticks; ++i) {
    double sum = cfg.base_load_watts;
    for (std::size_t ai = 0; ai < napp; ++ai) sum += frame.channels[ai][i];
    frame.aggregate[i] = sum;
  }

  frame.validate();
  return frame;
}

}  // namespace shapguard::dataio
