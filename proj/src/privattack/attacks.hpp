#pragma once

#include <optional>
#include <string>
#include <vector>

#include "explainer/shapley.hpp"

namespace shapguard::privattack {

/// Which end of the score scale signals training membership.
enum class Direction { higher_means_member, lower_means_member };
std::string direction_to_string(Direction d);
Direction direction_from_string(const std::string& s);

/// How a target row is scored against the reference set: nearest keeps
/// the most member-like pair (max similarity, min divergence, max
/// correlation), mean averages over every reference.
enum class RefAggregation { nearest, mean };
std::string aggregation_to_string(RefAggregation a);

/// Rank attacks order features by |phi| unless signed ranking is asked
/// for explicitly.
enum class RankBasis { magnitude, signed_value };

struct SampleScore {
  std::string sample_id;
  double score = 0.0;
  /// Set when no reference pair had a defined statistic (constant rank
  /// vectors make the correlation undefined); the score is then 0.
  bool degenerate = false;
};

struct AttackScore {
  std::string attack_name;
  Direction direction = Direction::higher_means_member;
  std::string aggregation;  // "nearest", "mean" or "none"
  std::vector<SampleScore> per_sample;
  double mean = 0.0;
  double stdev = 0.0;  // population form, 0 for a single sample
};

/// phi . phi' / (|phi| |phi'|), clamped to [-1, 1] against rounding;
/// 0 by convention when either vector has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Jensen-Shannon divergence in natural log: 0.5 KL(P||M) + 0.5 KL(Q||M)
/// with M = (P+Q)/2 and 0 ln 0 := 0. Bounded by ln 2.
double jensen_shannon_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// 1-based ranks, ascending, ties averaged.
std::vector<double> average_ranks(const std::vector<double>& v);

/// Spearman correlation of the two value vectors' ranks. Uses the
/// closed form 1 - 6 sum d^2 / (d (d^2-1)) when neither side has ties,
/// Pearson over average ranks otherwise. Empty when either vector is
/// constant (zero rank variance makes the statistic undefined).
std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

/// Kendall tau: (concordant - discordant) / (d (d-1) / 2); pairs tied
/// on either side count in neither tally. Empty when either vector is
/// constant, mirroring the Spearman convention.
std::optional<double> kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

/// Row entropies of the stored normalized attributions; lower entropy
/// points at a few dominant features and reads as a member signal.
AttackScore entropy_attack(const explainer::AttributionMatrix& targets);

/// Max (or mean) cosine similarity between each target's raw phi and
/// the reference members' phi rows.
AttackScore similarity_attack(const explainer::AttributionMatrix& targets,
                              const explainer::AttributionMatrix& references,
                              RefAggregation agg = RefAggregation::nearest);

/// Min (or mean) Jensen-Shannon divergence between normalized rows.
AttackScore divergence_attack(const explainer::AttributionMatrix& targets,
                              const explainer::AttributionMatrix& references,
                              RefAggregation agg = RefAggregation::nearest);

/// Max (or mean) Spearman correlation between feature rankings.
AttackScore rank_correlation_attack(const explainer::AttributionMatrix& targets,
                                    const explainer::AttributionMatrix& references,
                                    RefAggregation agg = RefAggregation::nearest,
                                    RankBasis basis = RankBasis::magnitude);

/// Max (or mean) Kendall tau between feature rankings.
AttackScore rank_consistency_attack(const explainer::AttributionMatrix& targets,
                                    const explainer::AttributionMatrix& references,
                                    RefAggregation agg = RefAggregation::nearest,
                                    RankBasis basis = RankBasis::magnitude);

/// Probability that a random member outranks a random non-member in
/// the member direction, ties counted one half (Mann-Whitney form).
double membership_auc(const std::vector<double>& member_scores,
                      const std::vector<double>& nonmember_scores, Direction direction);

struct AttackAuc {
  std::string attack_name;
  double auc = 0.0;
};

/// The five mean metrics of a model's comparison-table row.
struct SummaryRow {
  double shap_entropy = 0.0;
  double shap_similarity = 0.0;
  double js_divergence = 0.0;
  double rank_correlation = 0.0;
  double rank_consistency = 0.0;
};

struct AttackReport {
  std::string model_id;
  /// All five attacks, nearest-reference aggregation.
  std::vector<AttackScore> nearest;
  /// The four reference-based attacks again, mean-over-references.
  std::vector<AttackScore> mean_over_references;
  /// Member-vs-non-member AUC per attack, from the nearest scores and
  /// the target matrix's membership flags.
  std::vector<AttackAuc> auc;
  /// Mean entropy plus the mean-over-references means.
  SummaryRow summary;
};

/// Runs all five attacks. The target matrix must contain both member
/// and non-member rows (its membership flags drive the AUC split);
/// references are attributions of known training members.
AttackReport run_attacks(const explainer::AttributionMatrix& targets,
                         const explainer::AttributionMatrix& references,
                         const std::string& model_id);

/// JSON with per-attack summaries, AUC and the summary row. Per-sample
/// scores go to the CSV tables, not the JSON.
void save_attack_report(const AttackReport& r, const std::string& json_path);

/// Loads the summary side of a report (per_sample lists stay empty).
AttackReport load_attack_report(const std::string& json_path);

/// sample_id,score,degenerate rows under `#` comment lines naming the
/// attack, direction and aggregation.
void save_attack_scores(const AttackScore& s, const std::string& csv_path);

}  // namespace shapguard::privattack
