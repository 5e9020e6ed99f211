#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "explainer/shapley.hpp"
#include "privattack/attacks.hpp"

namespace shapguard::report {

/// One row of the side-by-side model comparison: the five privacy
/// metrics (mean over the explained target set) plus forecast MAE in
/// watts.
struct ComparisonRow {
  std::string house;
  std::string model;
  double shap_entropy = 0.0;
  double shap_similarity = 0.0;
  double js_divergence = 0.0;
  double rank_correlation = 0.0;
  double rank_consistency = 0.0;
  double mae = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;

  /// (house, model) pairs must be unique. Throws DataError.
  void validate() const;
};

/// Builds a row from an attack report's summary plus the model's MAE.
ComparisonRow comparison_row(const std::string& house, const std::string& model,
                             const privattack::AttackReport& attacks, double mae);

/// CSV: `# format_version` comment, then
/// house,model,shap_entropy,shap_similarity,js_divergence,rank_correlation,rank_consistency,mae.
/// Byte-identical across re-runs on equal input.
void save_comparison_table(const ComparisonTable& t, const std::string& csv_path);
ComparisonTable load_comparison_table(const std::string& csv_path);

/// A per-(appliance, hour-of-day) summary of one model's attributions.
/// `cell[j][h]` is only meaningful where `count[j][h] > 0`; hours with
/// no explained window stay empty in the CSV output.
struct HourOfDayTable {
  std::string model_id;
  std::vector<std::string> feature_names;
  std::vector<std::array<double, 24>> cell;
  std::vector<std::array<std::size_t, 24>> count;
};

/// Heatmap data: cell[j][h] = mean |phi_j| over explained windows whose
/// target falls at hour-of-day h. `target_hours` pairs with the
/// matrix rows (values 0..23).
HourOfDayTable attribution_heatmap(const explainer::AttributionMatrix& m,
                                   const std::vector<int>& target_hours);

/// Per-channel entropy share by hour: cell[j][h] = mean over windows at
/// hour h of -p_j ln p_j, with p the window's normalized attribution.
/// Summing the column over channels recovers the mean attribution
/// entropy of the windows at that hour.
HourOfDayTable hourly_entropy(const explainer::AttributionMatrix& m,
                              const std::vector<int>& target_hours);

/// Per-channel aggregate: the mean of that channel's hourly values over
/// the hours that have data. NaN for a channel with no data at all.
std::vector<double> aggregate_entropy(const HourOfDayTable& t);

/// Long-form CSV over any number of models:
/// model,appliance,hour,mean_abs_phi,n_windows.
void save_heatmap(const std::vector<HourOfDayTable>& tables, const std::string& csv_path);

/// model,appliance,hour,entropy,n_windows,delta_vs_baseline. Deltas are
/// against the table at `baseline_idx` (empty column on the baseline's
/// own rows and on hours the baseline does not cover); pass npos for no
/// delta column values.
void save_entropy_hourly(const std::vector<HourOfDayTable>& tables, std::size_t baseline_idx,
                         const std::string& csv_path);

/// model,appliance,entropy,delta_vs_baseline with the aggregate values.
void save_entropy_aggregate(const std::vector<HourOfDayTable>& tables, std::size_t baseline_idx,
                            const std::string& csv_path);

}  // namespace shapguard::report
