#include "explainer/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::explainer {

using numkit::Tape;
using numkit::Tensor;
using numkit::Value;

namespace {

constexpr double kEps = 1e-12;
constexpr int kAttributionFormatVersion = 1;

void check_window_pair(const Tensor& x, const Tensor& baseline) {
  if (x.rank() != 2) throw ShapeError("window must be rank 2, got " + x.shape_str());
  if (!x.same_shape(baseline)) {
    throw ShapeError("baseline shape " + baseline.shape_str() + " does not match window " +
                     x.shape_str());
  }
  if (x.cols() > kMaxEnumeratedFeatures) {
    throw ConfigError("channel count " + std::to_string(x.cols()) +
                      " exceeds the exact enumeration guard of " +
                      std::to_string(kMaxEnumeratedFeatures));
  }
  if (x.cols() == 0) throw ShapeError("window has no channels");
}

/// Window with channels outside `mask` replaced by the baseline.
Tensor masked_window(const Tensor& x, const Tensor& baseline, std::uint32_t mask) {
  Tensor out = x;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    if (mask & (1u << c)) continue;
    for (std::size_t t = 0; t < x.rows(); ++t) out.at(t, c) = baseline.at(t, c);
  }
  return out;
}

std::vector<double> coalition_outputs(const BatchModelFn& model, const Tensor& x,
                                      const Tensor& baseline) {
  const std::size_t D = x.cols();
  const std::size_t n_masks = std::size_t{1} << D;
  std::vector<double> f(n_masks);
  const std::size_t chunk = std::min<std::size_t>(n_masks, 512);
  std::vector<Tensor> batch;
  batch.reserve(chunk);
  std::size_t start = 0;
  for (std::size_t m = 0; m < n_masks; ++m) {
    batch.push_back(masked_window(x, baseline, static_cast<std::uint32_t>(m)));
    if (batch.size() == chunk || m + 1 == n_masks) {
      const auto out = model(batch);
      if (out.size() != batch.size()) throw NumericError("model returned a short batch");
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(out[i])) throw NumericError("non-finite model output");
        f[start + i] = out[i];
      }
      start += batch.size();
      batch.clear();
    }
  }
  return f;
}

/// Coefficient of f(mask) in phi_i: +w(|mask|-1) when i is present,
/// -w(|mask|) when absent.
Tensor shapley_coefficients(std::size_t D) {
  const std::size_t n_masks = std::size_t{1} << D;
  Tensor ct = Tensor::zeros({n_masks, D});
  for (std::size_t m = 0; m < n_masks; ++m) {
    const std::size_t k = static_cast<std::size_t>(std::popcount(m));
    for (std::size_t i = 0; i < D; ++i) {
      if (m & (std::size_t{1} << i)) {
        ct.at(m, i) = coalition_weight(D, k - 1);
      } else {
        ct.at(m, i) = -coalition_weight(D, k);
      }
    }
  }
  return ct;
}

}  // namespace

double coalition_weight(std::size_t d, std::size_t s) {
  // 1 / (d * C(d-1, s)); binomials up to C(19, .) fit exactly in doubles
  double binom = 1.0;
  for (std::size_t j = 1; j <= s; ++j) {
    binom = binom * static_cast<double>(d - 1 - (j - 1)) / static_cast<double>(j);
  }
  return 1.0 / (static_cast<double>(d) * binom);
}

BatchModelFn lstm_model_fn(const forecaster::LstmParams& p, const forecaster::LstmConfig& cfg) {
  return [p, cfg](const std::vector<Tensor>& windows) {
    return forecaster::predict_batch(p, cfg, forecaster::stack_windows(windows));
  };
}

std::vector<double> shapley_exact(const BatchModelFn& model, const Tensor& x,
                                  const Tensor& baseline) {
  check_window_pair(x, baseline);
  const std::size_t D = x.cols();
  const auto f = coalition_outputs(model, x, baseline);

  std::vector<double> phi(D, 0.0);
  const std::size_t n_masks = std::size_t{1} << D;
  for (std::size_t i = 0; i < D; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double acc = 0.0;
    for (std::size_t m = 0; m < n_masks; ++m) {
      if (m & bit) continue;
      const std::size_t s = static_cast<std::size_t>(std::popcount(m));
      acc += coalition_weight(D, s) * (f[m | bit] - f[m]);
    }
    phi[i] = acc;
  }
  return phi;
}

std::vector<double> normalize_attribution(const std::vector<double>& phi) {
  if (phi.empty()) throw ConfigError("empty attribution vector");
  double total = 0.0;
  for (double v : phi) total += std::fabs(v) + kEps;
  std::vector<double> p(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) p[i] = (std::fabs(phi[i]) + kEps) / total;
  return p;
}

double shap_entropy(const std::vector<double>& phi_norm) {
  double h = 0.0;
  for (double p : phi_norm) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double entropy_penalty(double H, double alpha) {
  const double d = alpha - H;
  return d * d;
}

Tensor mean_profile(const dataio::WindowedDataset& ds) {
  const std::size_t N = ds.num_windows();
  if (N == 0) throw DataError("cannot build a mean profile from an empty dataset");
  const std::size_t T = ds.window_len;
  const std::size_t D = ds.num_features();
  Tensor profile = Tensor::zeros({T, D});
  for (std::size_t w = 0; w < N; ++w) {
    const double* win = ds.inputs.data() + w * T * D;
    for (std::size_t k = 0; k < T * D; ++k) profile.at(k) += win[k];
  }
  const double inv = 1.0 / static_cast<double>(N);
  for (std::size_t k = 0; k < T * D; ++k) profile.at(k) *= inv;
  return profile;
}

Value differentiable_batch_entropy(Tape& tape, const forecaster::StagedParams& sp,
                                   const forecaster::LstmConfig& cfg,
                                   const std::vector<Tensor>& windows,
                                   const Tensor& baseline) {
  if (windows.empty()) throw ConfigError("entropy regularizer needs at least one window");
  const std::size_t k = windows.size();
  const std::size_t D = cfg.input_dim;
  for (const Tensor& x : windows) check_window_pair(x, baseline);
  const std::size_t n_masks = std::size_t{1} << D;

  // coalition-expanded batch: row (j, m) is window j masked by m
  std::vector<Tensor> expanded;
  expanded.reserve(k * n_masks);
  for (const Tensor& x : windows) {
    for (std::size_t m = 0; m < n_masks; ++m) {
      expanded.push_back(masked_window(x, baseline, static_cast<std::uint32_t>(m)));
    }
  }
  const Value preds = forecaster::forward_batch(tape, sp, cfg, forecaster::stack_windows(expanded),
                                                forecaster::RunMode::eval);

  const Value by_sample = tape.reshape(preds, {k, n_masks});
  const Value coeffs = tape.constant(shapley_coefficients(D));
  const Value phi = tape.matmul(by_sample, coeffs);                    // k x D
  const Value smoothed = tape.add_scalar(tape.abs_(phi), kEps);
  const Value p = tape.normalize_rows(smoothed);                      // rows sum to 1
  const Value plogp = tape.mul(p, tape.log_(p));
  // mean over all k*D entries times -D = mean over rows of -sum_i p ln p
  return tape.neg(tape.scale(tape.mean(plogp), static_cast<double>(D)));
}

void AttributionMatrix::validate() const {
  const std::size_t D = feature_names.size();
  if (D == 0) throw DataError("attribution matrix has no features");
  if (membership.size() != rows.size()) throw DataError("membership flags do not match rows");
  for (const auto& r : rows) {
    if (r.phi.size() != D || r.phi_norm.size() != D) {
      throw DataError("attribution row width mismatch at sample '" + r.sample_id + "'");
    }
    double sum = 0.0;
    for (double p : r.phi_norm) sum += p;
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw DataError("normalized attribution does not sum to 1 at '" + r.sample_id + "'");
    }
    if (r.entropy < -1e-12 || r.entropy > std::log(static_cast<double>(D)) + 1e-9) {
      throw DataError("entropy out of [0, ln D] at '" + r.sample_id + "'");
    }
  }
}

Attribution explain_window(const BatchModelFn& model, const Tensor& x, const Tensor& baseline,
                           const std::string& sample_id) {
  Attribution a;
  a.sample_id = sample_id;
  a.phi = shapley_exact(model, x, baseline);
  a.phi_norm = normalize_attribution(a.phi);
  a.entropy = shap_entropy(a.phi_norm);
  return a;
}

void save_attributions(const AttributionMatrix& m, const std::string& csv_path) {
  m.validate();
  std::ostringstream os;
  os << "sample_id,membership_flag";
  for (std::size_t i = 1; i <= m.feature_names.size(); ++i) os << ",phi_" << i;
  os << ",entropy\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    const Attribution& a = m.rows[r];
    os << a.sample_id << "," << (m.membership[r] ? 1 : 0);
    for (double v : a.phi) os << "," << fmt_double(v);
    os << "," << fmt_double(a.entropy) << "\n";
  }
  spit_file(csv_path, os.str());

  json side;
  side["format_version"] = kAttributionFormatVersion;
  side["model_id"] = m.model_id;
  side["baseline_spec"] = m.baseline_spec;
  side["feature_names"] = m.feature_names;
  side["num_rows"] = m.rows.size();
  save_json(csv_path + ".meta.json", side);
}

AttributionMatrix load_attributions(const std::string& csv_path) {
  const json side = load_json(csv_path + ".meta.json");
  if (side.at("format_version").get<int>() != kAttributionFormatVersion) {
    throw DataError("unsupported attribution format version for " + csv_path);
  }
  AttributionMatrix m;
  m.model_id = side.at("model_id").get<std::string>();
  m.baseline_spec = side.at("baseline_spec").get<std::string>();
  m.feature_names = side.at("feature_names").get<std::vector<std::string>>();
  const std::size_t D = m.feature_names.size();

  std::istringstream in(slurp_file(csv_path));
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty attribution CSV: " + csv_path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    Attribution a;
    if (!std::getline(row, field, ',')) throw DataError("short attribution row");
    a.sample_id = field;
    if (!std::getline(row, field, ',')) throw DataError("short attribution row");
    m.membership.push_back(field == "1");
    a.phi.resize(D);
    for (std::size_t i = 0; i < D; ++i) {
      if (!std::getline(row, field, ',')) throw DataError("short attribution row");
      a.phi[i] = std::strtod(field.c_str(), nullptr);
    }
    if (!std::getline(row, field, ',')) throw DataError("short attribution row");
    a.entropy = std::strtod(field.c_str(), nullptr);
    a.phi_norm = normalize_attribution(a.phi);
    m.rows.push_back(std::move(a));
  }
  if (m.rows.size() != side.at("num_rows").get<std::size_t>()) {
    throw DataError("attribution row count does not match sidecar for " + csv_path);
  }
  m.validate();
  return m;
}

}  // namespace shapguard::explainer
