#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "common/jsonutil.hpp"
#include "dataio/timeseries.hpp"

namespace shapguard::dataio {

struct ApplianceSpec {
  std::string name;
  double mean_watts = 0.0;
  /// Relative uniform jitter applied to each reading while the
  /// appliance is on: power = mean * (1 + jitter * u), u in [-1,1].
  double jitter = 0.0;
  double standby_watts = 0.0;
  /// Probability the appliance runs during each hour of the day,
  /// before the occupancy multiplier.
  std::array<double, 24> schedule{};
};

struct SynthConfig {
  std::string house_id = "synth";
  std::uint64_t seed = 0;
  std::size_t days = 2;
  std::size_t cadence_seconds = 60;
  double base_load_watts = 40.0;
  /// Hour-of-day activity multipliers applied to every appliance's
  /// schedule; effective on-probability is clamped to [0,1].
  std::array<double, 24> occupancy{};
  std::vector<ApplianceSpec> appliances;

  void validate() const;
};

SynthConfig synth_config_from_json(const json& j);
json synth_config_to_json(const SynthConfig& cfg);

/// Simulated household load: per appliance, an independent RNG
/// substream decides hourly on/off from schedule*occupancy and draws
/// per-reading jitter. The aggregate column is exactly the channel sum
/// plus the constant base load. Deterministic for a fixed config.
TimeSeriesFrame generate_synthetic(const SynthConfig& cfg);

}  // namespace shapguard::dataio
