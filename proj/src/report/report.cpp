#include "report/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::report {

void ComparisonTable::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : rows) {
    if (r.house.empty() || r.model.empty())
      throw DataError("comparison rows need non-empty house and model names");
    if (!seen.insert({r.house, r.model}).second)
      throw DataError("duplicate comparison row for " + r.house + "/" + r.model);
  }
}

ComparisonRow comparison_row(const std::string& house, const std::string& model,
                             const privattack::AttackReport& attacks, double mae) {
  ComparisonRow r;
  r.house = house;
  r.model = model;
  r.shap_entropy = attacks.summary.shap_entropy;
  r.shap_similarity = attacks.summary.shap_similarity;
  r.js_divergence = attacks.summary.js_divergence;
  r.rank_correlation = attacks.summary.rank_correlation;
  r.rank_consistency = attacks.summary.rank_consistency;
  r.mae = mae;
  return r;
}

void save_comparison_table(const ComparisonTable& t, const std::string& csv_path) {
  t.validate();
  std::ostringstream os;
  os << "# format_version: 1\n";
  os << "house,model,shap_entropy,shap_similarity,js_divergence,rank_correlation,"
        "rank_consistency,mae\n";
  for (const auto& r : t.rows) {
    os << r.house << "," << r.model << "," << fmt_double(r.shap_entropy) << ","
       << fmt_double(r.shap_similarity) << "," << fmt_double(r.js_divergence) << ","
       << fmt_double(r.rank_correlation) << "," << fmt_double(r.rank_consistency) << ","
       << fmt_double(r.mae) << "\n";
  }
  spit_file(csv_path, os.str());
}

namespace {

ComparisonTable load_comparison_rows(std::istream& in, const std::string& csv_path) {
  ComparisonTable t;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    ComparisonRow r;
    std::string field;
    auto next = [&](const char* what) {
      if (!std::getline(ls, field, ','))
        throw DataError("truncated comparison row (" + std::string(what) + ") in " + csv_path);
      return field;
    };
    r.house = next("house");
    r.model = next("model");
    try {
      r.shap_entropy = std::stod(next("shap_entropy"));
      r.shap_similarity = std::stod(next("shap_similarity"));
      r.js_divergence = std::stod(next("js_divergence"));
      r.rank_correlation = std::stod(next("rank_correlation"));
      r.rank_consistency = std::stod(next("rank_consistency"));
      r.mae = std::stod(next("mae"));
    } catch (const std::exception&) {
      throw DataError("non-numeric comparison value in " + csv_path);
    }
    t.rows.push_back(std::move(r));
  }
  t.validate();
  return t;
}

}  // namespace

ComparisonTable load_comparison_table(const std::string& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw IoError("cannot open comparison table: " + csv_path);
  return load_comparison_rows(in, csv_path);
}

namespace {

HourOfDayTable empty_table(const explainer::AttributionMatrix& m,
                           const std::vector<int>& target_hours) {
  m.validate();
  if (target_hours.size() != m.rows.size())
    throw ConfigError("need one target hour per attribution row");
  for (int h : target_hours)
    if (h < 0 || h >= 24) throw ConfigError("target hour out of range: " + std::to_string(h));
  HourOfDayTable t;
  t.model_id = m.model_id;
  t.feature_names = m.feature_names;
  t.cell.assign(m.feature_names.size(), {});
  t.count.assign(m.feature_names.size(), {});
  return t;
}

void finalize_means(HourOfDayTable& t) {
  for (std::size_t j = 0; j < t.cell.size(); ++j)
    for (int h = 0; h < 24; ++h)
      if (t.count[j][h] > 0) t.cell[j][h] /= static_cast<double>(t.count[j][h]);
}

}  // namespace

HourOfDayTable attribution_heatmap(const explainer::AttributionMatrix& m,
                                   const std::vector<int>& target_hours) {
  HourOfDayTable t = empty_table(m, target_hours);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const int h = target_hours[i];
    for (std::size_t j = 0; j < m.feature_names.size(); ++j) {
      t.cell[j][h] += std::fabs(m.rows[i].phi[j]);
      ++t.count[j][h];
    }
  }
  finalize_means(t);
  return t;
}

HourOfDayTable hourly_entropy(const explainer::AttributionMatrix& m,
                              const std::vector<int>& target_hours) {
  HourOfDayTable t = empty_table(m, target_hours);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const int h = target_hours[i];
    for (std::size_t j = 0; j < m.feature_names.size(); ++j) {
      const double p = m.rows[i].phi_norm[j];
      t.cell[j][h] += p > 0.0 ? -p * std::log(p) : 0.0;
      ++t.count[j][h];
    }
  }
  finalize_means(t);
  return t;
}

std::vector<double> aggregate_entropy(const HourOfDayTable& t) {
  std::vector<double> agg(t.cell.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < t.cell.size(); ++j) {
    double sum = 0.0;
    std::size_t covered = 0;
    for (int h = 0; h < 24; ++h) {
      if (t.count[j][h] > 0) {
        sum += t.cell[j][h];
        ++covered;
      }
    }
    if (covered > 0) agg[j] = sum / static_cast<double>(covered);
  }
  return agg;
}

namespace {

void check_tables(const std::vector<HourOfDayTable>& tables) {
  if (tables.empty()) throw ConfigError("no tables to save");
  std::set<std::string> ids;
  for (const auto& t : tables) {
    if (t.cell.size() != t.feature_names.size() || t.count.size() != t.feature_names.size())
      throw DataError("table arrays disagree with feature names for " + t.model_id);
    if (!ids.insert(t.model_id).second)
      throw DataError("duplicate model in report tables: " + t.model_id);
  }
}

}  // namespace

void save_heatmap(const std::vector<HourOfDayTable>& tables, const std::string& csv_path) {
  check_tables(tables);
  std::ostringstream os;
  os << "# format_version: 1\n";
  os << "# cell: mean absolute attribution of the appliance over explained windows whose\n";
  os << "# target falls at that hour of day; empty when no window covers the hour\n";
  os << "model,appliance,hour,mean_abs_phi,n_windows\n";
  for (const auto& t : tables)
    for (std::size_t j = 0; j < t.feature_names.size(); ++j)
      for (int h = 0; h < 24; ++h) {
        os << t.model_id << "," << t.feature_names[j] << "," << h << ",";
        if (t.count[j][h] > 0) os << fmt_double(t.cell[j][h]);
        os << "," << t.count[j][h] << "\n";
      }
  spit_file(csv_path, os.str());
}

void save_entropy_hourly(const std::vector<HourOfDayTable>& tables, std::size_t baseline_idx,
                         const std::string& csv_path) {
  check_tables(tables);
  if (baseline_idx != std::string::npos && baseline_idx >= tables.size())
    throw ConfigError("baseline index out of range");
  const HourOfDayTable* base =
      baseline_idx == std::string::npos ? nullptr : &tables[baseline_idx];
  std::ostringstream os;
  os << "# format_version: 1\n";
  os << "# cell: mean over windows at that hour of -p ln p, where p is the appliance's\n";
  os << "# share of the window's normalized attribution; columns sum to the mean\n";
  os << "# attribution entropy of the hour across appliances\n";
  os << "model,appliance,hour,entropy,n_windows,delta_vs_baseline\n";
  for (const auto& t : tables) {
    const bool is_base = base == &t;
    for (std::size_t j = 0; j < t.feature_names.size(); ++j)
      for (int h = 0; h < 24; ++h) {
        os << t.model_id << "," << t.feature_names[j] << "," << h << ",";
        if (t.count[j][h] > 0) os << fmt_double(t.cell[j][h]);
        os << "," << t.count[j][h] << ",";
        if (base && !is_base && t.count[j][h] > 0 && j < base->cell.size() &&
            base->count[j][h] > 0) {
          os << fmt_double(t.cell[j][h] - base->cell[j][h]);
        }
        os << "\n";
      }
  }
  spit_file(csv_path, os.str());
}

void save_entropy_aggregate(const std::vector<HourOfDayTable>& tables, std::size_t baseline_idx,
                            const std::string& csv_path) {
  check_tables(tables);
  if (baseline_idx != std::string::npos && baseline_idx >= tables.size())
    throw ConfigError("baseline index out of range");
  const HourOfDayTable* base =
      baseline_idx == std::string::npos ? nullptr : &tables[baseline_idx];
  std::vector<double> base_agg;
  if (base) base_agg = aggregate_entropy(*base);
  std::ostringstream os;
  os << "# format_version: 1\n";
  os << "# value: mean of the appliance's hourly entropy shares over covered hours\n";
  os << "model,appliance,entropy,delta_vs_baseline\n";
  for (const auto& t : tables) {
    const bool is_base = base == &t;
    const auto agg = aggregate_entropy(t);
    for (std::size_t j = 0; j < t.feature_names.size(); ++j) {
      os << t.model_id << "," << t.feature_names[j] << ",";
      if (!std::isnan(agg[j])) os << fmt_double(agg[j]);
      os << ",";
      if (base && !is_base && !std::isnan(agg[j]) && j < base_agg.size() &&
          !std::isnan(base_agg[j])) {
        os << fmt_double(agg[j] - base_agg[j]);
      }
      os << "\n";
    }
  }
  spit_file(csv_path, os.str());
}

}  // namespace shapguard::report
