#include "privattack/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::privattack {

using explainer::AttributionMatrix;

namespace {

void check_same_length(const std::vector<double>& a, const std::vector<double>& b,
                       const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + " needs equal-length vectors, got " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v) {
    if (x != v.front()) return false;
  }
  return true;
}

bool has_ties(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

void check_attack_inputs(const AttributionMatrix& targets, const AttributionMatrix& references) {
  targets.validate();
  references.validate();
  if (targets.rows.empty()) throw DataError("attack needs at least one target attribution");
  if (references.rows.empty()) throw DataError("attack needs at least one reference attribution");
  if (targets.feature_names.size() != references.feature_names.size()) {
    throw ShapeError("target and reference attributions disagree on feature count: " +
                     std::to_string(targets.feature_names.size()) + " vs " +
                     std::to_string(references.feature_names.size()));
  }
}

void summarize(AttackScore& s) {
  const std::size_t n = s.per_sample.size();
  double acc = 0.0;
  for (const auto& ps : s.per_sample) acc += ps.score;
  s.mean = acc / static_cast<double>(n);
  double var = 0.0;
  for (const auto& ps : s.per_sample) {
    const double d = ps.score - s.mean;
    var += d * d;
  }
  s.stdev = std::sqrt(var / static_cast<double>(n));
}

/// Scores every target against every reference with `pair_fn`;
/// undefined pairs are skipped and a target with no defined pair gets
/// score 0 with the degenerate flag.
AttackScore reference_attack(
    const std::string& name, Direction direction, bool nearest_is_max,
    const AttributionMatrix& targets, const AttributionMatrix& references, RefAggregation agg,
    const std::function<std::optional<double>(std::size_t, std::size_t)>& pair_fn) {
  AttackScore out;
  out.attack_name = name;
  out.direction = direction;
  out.aggregation = aggregation_to_string(agg);
  out.per_sample.reserve(targets.rows.size());
  for (std::size_t i = 0; i < targets.rows.size(); ++i) {
    SampleScore ps;
    ps.sample_id = targets.rows[i].sample_id;
    bool any = false;
    double best = 0.0;
    double acc = 0.0;
    std::size_t defined = 0;
    for (std::size_t j = 0; j < references.rows.size(); ++j) {
      const auto v = pair_fn(i, j);
      if (!v) continue;
      if (!any || (nearest_is_max ? *v > best : *v < best)) best = *v;
      any = true;
      acc += *v;
      ++defined;
    }
    if (!any) {
      ps.degenerate = true;
    } else {
      ps.score = agg == RefAggregation::nearest ? best : acc / static_cast<double>(defined);
    }
    out.per_sample.push_back(std::move(ps));
  }
  summarize(out);
  return out;
}

std::vector<double> rank_key(const std::vector<double>& phi, RankBasis basis) {
  if (basis == RankBasis::signed_value) return phi;
  std::vector<double> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = std::fabs(phi[i]);
  return out;
}

json score_summary_json(const AttackScore& s) {
  json j;
  j["attack_name"] = s.attack_name;
  j["direction"] = direction_to_string(s.direction);
  j["aggregation"] = s.aggregation;
  j["mean"] = s.mean;
  j["stdev"] = s.stdev;
  j["num_samples"] = s.per_sample.size();
  return j;
}

AttackScore score_summary_from_json(const json& j) {
  AttackScore s;
  s.attack_name = j.at("attack_name").get<std::string>();
  s.direction = direction_from_string(j.at("direction").get<std::string>());
  s.aggregation = j.at("aggregation").get<std::string>();
  s.mean = j.at("mean").get<double>();
  s.stdev = j.at("stdev").get<double>();
  return s;
}

}  // namespace

std::string direction_to_string(Direction d) {
  return d == Direction::higher_means_member ? "higher_means_member" : "lower_means_member";
}

Direction direction_from_string(const std::string& s) {
  if (s == "higher_means_member") return Direction::higher_means_member;
  if (s == "lower_means_member") return Direction::lower_means_member;
  throw ConfigError("unknown attack direction '" + s + "'");
}

std::string aggregation_to_string(RefAggregation a) {
  return a == RefAggregation::nearest ? "nearest" : "mean";
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  check_same_length(a, b, "cosine similarity");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double jensen_shannon_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  check_same_length(p, q, "jensen-shannon divergence");
  double kp = 0.0;
  double kq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) {
      throw ConfigError("divergence inputs must be non-negative distributions");
    }
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kp += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kq += q[i] * std::log(q[i] / m);
  }
  const double jsd = 0.5 * kp + 0.5 * kq;
  if (jsd < 0.0) {
    if (jsd < -1e-9) throw NumericError("jensen-shannon divergence went negative");
    return 0.0;  // rounding noise on near-identical rows
  }
  return jsd;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  check_same_length(a, b, "rank correlation");
  const std::size_t d = a.size();
  if (d < 2) throw ConfigError("rank correlation needs at least two features");
  if (is_constant(a) || is_constant(b)) return std::nullopt;
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  if (!has_ties(a) && !has_ties(b)) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = ra[i] - rb[i];
      sum += diff * diff;
    }
    const double dd = static_cast<double>(d) * (static_cast<double>(d) * d - 1.0);
    return 1.0 - 6.0 * sum / dd;
  }
  // ties break the closed form, so correlate the average ranks directly
  const double mean = 0.5 * static_cast<double>(d + 1);
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

std::optional<double> kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  check_same_length(a, b, "rank consistency");
  const std::size_t d = a.size();
  if (d < 2) throw ConfigError("rank consistency needs at least two features");
  if (is_constant(a) || is_constant(b)) return std::nullopt;
  long long concordant = 0;
  long long discordant = 0;
  for (std::size_t i = 0; i + 1 < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double prod = (a[i] - a[j]) * (b[i] - b[j]);
      if (prod > 0.0) ++concordant;
      else if (prod < 0.0) ++discordant;
    }
  }
  const double pairs = 0.5 * static_cast<double>(d) * static_cast<double>(d - 1);
  return static_cast<double>(concordant - discordant) / pairs;
}

AttackScore entropy_attack(const AttributionMatrix& targets) {
  targets.validate();
  if (targets.rows.empty()) throw DataError("attack needs at least one target attribution");
  AttackScore out;
  out.attack_name = "shap_entropy";
  out.direction = Direction::lower_means_member;
  out.aggregation = "none";
  out.per_sample.reserve(targets.rows.size());
  for (const auto& row : targets.rows) {
    SampleScore ps;
    ps.sample_id = row.sample_id;
    ps.score = explainer::shap_entropy(row.phi_norm);
    out.per_sample.push_back(std::move(ps));
  }
  summarize(out);
  return out;
}

AttackScore similarity_attack(const AttributionMatrix& targets, const AttributionMatrix& references,
                              RefAggregation agg) {
  check_attack_inputs(targets, references);
  return reference_attack("shap_similarity", Direction::higher_means_member, true, targets, references,
                          agg, [&](std::size_t i, std::size_t j) -> std::optional<double> {
                            return cosine_similarity(targets.rows[i].phi, references.rows[j].phi);
                          });
}

AttackScore divergence_attack(const AttributionMatrix& targets, const AttributionMatrix& references,
                              RefAggregation agg) {
  check_attack_inputs(targets, references);
  return reference_attack("js_divergence", Direction::lower_means_member, false, targets, references,
                          agg, [&](std::size_t i, std::size_t j) -> std::optional<double> {
                            return jensen_shannon_divergence(targets.rows[i].phi_norm,
                                                             references.rows[j].phi_norm);
                          });
}

AttackScore rank_correlation_attack(const AttributionMatrix& targets,
                                    const AttributionMatrix& references, RefAggregation agg,
                                    RankBasis basis) {
  check_attack_inputs(targets, references);
  std::vector<std::vector<double>> tkeys;
  std::vector<std::vector<double>> rkeys;
  for (const auto& r : targets.rows) tkeys.push_back(rank_key(r.phi, basis));
  for (const auto& r : references.rows) rkeys.push_back(rank_key(r.phi, basis));
  return reference_attack("rank_correlation", Direction::higher_means_member, true, targets,
                          references, agg, [&](std::size_t i, std::size_t j) {
                            return spearman_rho(tkeys[i], rkeys[j]);
                          });
}

AttackScore rank_consistency_attack(const AttributionMatrix& targets,
                                    const AttributionMatrix& references, RefAggregation agg,
                                    RankBasis basis) {
  check_attack_inputs(targets, references);
  std::vector<std::vector<double>> tkeys;
  std::vector<std::vector<double>> rkeys;
  for (const auto& r : targets.rows) tkeys.push_back(rank_key(r.phi, basis));
  for (const auto& r : references.rows) rkeys.push_back(rank_key(r.phi, basis));
  return reference_attack("rank_consistency", Direction::higher_means_member, true, targets,
                          references, agg, [&](std::size_t i, std::size_t j) {
                            return kendall_tau(tkeys[i], rkeys[j]);
                          });
}

double membership_auc(const std::vector<double>& member_scores,
                      const std::vector<double>& nonmember_scores, Direction direction) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw ConfigError("auc needs scores for both members and non-members");
  }
  double acc = 0.0;
  for (double m : member_scores) {
    for (double n : nonmember_scores) {
      if (m == n) {
        acc += 0.5;
      } else {
        const bool member_wins = direction == Direction::higher_means_member ? m > n : m < n;
        if (member_wins) acc += 1.0;
      }
    }
  }
  return acc / (static_cast<double>(member_scores.size()) *
                static_cast<double>(nonmember_scores.size()));
}

AttackReport run_attacks(const AttributionMatrix& targets, const AttributionMatrix& references,
                         const std::string& model_id) {
  check_attack_inputs(targets, references);
  AttackReport report;
  report.model_id = model_id;
  report.nearest.push_back(entropy_attack(targets));
  report.nearest.push_back(similarity_attack(targets, references, RefAggregation::nearest));
  report.nearest.push_back(divergence_attack(targets, references, RefAggregation::nearest));
  report.nearest.push_back(rank_correlation_attack(targets, references, RefAggregation::nearest));
  report.nearest.push_back(rank_consistency_attack(targets, references, RefAggregation::nearest));
  report.mean_over_references.push_back(
      similarity_attack(targets, references, RefAggregation::mean));
  report.mean_over_references.push_back(
      divergence_attack(targets, references, RefAggregation::mean));
  report.mean_over_references.push_back(
      rank_correlation_attack(targets, references, RefAggregation::mean));
  report.mean_over_references.push_back(
      rank_consistency_attack(targets, references, RefAggregation::mean));

  bool any_member = false;
  bool any_nonmember = false;
  for (bool m : targets.membership) (m ? any_member : any_nonmember) = true;
  if (!any_member || !any_nonmember) {
    throw ConfigError("membership auc needs both member and non-member targets");
  }
  for (const auto& attack : report.nearest) {
    std::vector<double> members;
    std::vector<double> nonmembers;
    for (std::size_t i = 0; i < attack.per_sample.size(); ++i) {
      (targets.membership[i] ? members : nonmembers).push_back(attack.per_sample[i].score);
    }
    report.auc.push_back({attack.attack_name, membership_auc(members, nonmembers, attack.direction)});
  }

  report.summary.shap_entropy = report.nearest[0].mean;
  report.summary.shap_similarity = report.mean_over_references[0].mean;
  report.summary.js_divergence = report.mean_over_references[1].mean;
  report.summary.rank_correlation = report.mean_over_references[2].mean;
  report.summary.rank_consistency = report.mean_over_references[3].mean;
  return report;
}

void save_attack_report(const AttackReport& r, const std::string& json_path) {
  json j;
  j["format_version"] = 1;
  j["model_id"] = r.model_id;
  json attacks = json::array();
  for (const auto& s : r.nearest) {
    json e = score_summary_json(s);
    for (const auto& a : r.auc) {
      if (a.attack_name == s.attack_name) e["auc"] = a.auc;
    }
    attacks.push_back(std::move(e));
  }
  j["attacks"] = std::move(attacks);
  json means = json::array();
  for (const auto& s : r.mean_over_references) means.push_back(score_summary_json(s));
  j["mean_over_references"] = std::move(means);
  j["summary_row"] = {{"shap_entropy", r.summary.shap_entropy},
                      {"shap_similarity", r.summary.shap_similarity},
                      {"js_divergence", r.summary.js_divergence},
                      {"rank_correlation", r.summary.rank_correlation},
                      {"rank_consistency", r.summary.rank_consistency}};
  save_json(json_path, j);
}

AttackReport load_attack_report(const std::string& json_path) {
  const json j = load_json(json_path);
  if (j.value("format_version", 0) != 1) {
    throw DataError("unsupported attack report version in " + json_path);
  }
  AttackReport r;
  r.model_id = j.at("model_id").get<std::string>();
  for (const auto& e : j.at("attacks")) {
    r.nearest.push_back(score_summary_from_json(e));
    if (e.contains("auc")) r.auc.push_back({r.nearest.back().attack_name, e.at("auc").get<double>()});
  }
  for (const auto& e : j.at("mean_over_references")) {
    r.mean_over_references.push_back(score_summary_from_json(e));
  }
  const json& s = j.at("summary_row");
  r.summary.shap_entropy = s.at("shap_entropy").get<double>();
  r.summary.shap_similarity = s.at("shap_similarity").get<double>();
  r.summary.js_divergence = s.at("js_divergence").get<double>();
  r.summary.rank_correlation = s.at("rank_correlation").get<double>();
  r.summary.rank_consistency = s.at("rank_consistency").get<double>();
  return r;
}

void save_attack_scores(const AttackScore& s, const std::string& csv_path) {
  std::ostringstream os;
  os << "# format_version: 1\n";
  os << "# attack: " << s.attack_name << "\n";
  os << "# direction: " << direction_to_string(s.direction) << "\n";
  os << "# aggregation: " << s.aggregation << "\n";
  os << "sample_id,score,degenerate\n";
  for (const auto& ps : s.per_sample) {
    os << ps.sample_id << "," << fmt_double(ps.score) << "," << (ps.degenerate ? 1 : 0) << "\n";
  }
  spit_file(csv_path, os.str());
}

}  // namespace shapguard::privattack
