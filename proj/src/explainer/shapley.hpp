#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dataio/windows.hpp"
#include "forecaster/lstm.hpp"
#include "numkit/tape.hpp"
#include "numkit/tensor.hpp"

namespace shapguard::explainer {

/// Hard cap on channel count for exact coalition enumeration
/// (2^D forward passes per explained window).
constexpr std::size_t kMaxEnumeratedFeatures = 20;

/// Evaluates a batch of T x D windows, one prediction per window.
using BatchModelFn = std::function<std::vector<double>(const std::vector<numkit::Tensor>&)>;

/// Wraps an LSTM into a BatchModelFn (eval mode, chunked internally).
BatchModelFn lstm_model_fn(const forecaster::LstmParams& p, const forecaster::LstmConfig& cfg);

/// Exact Shapley values over the D channels. A coalition keeps member
/// channels at their true values for all T steps and replaces the rest
/// with the baseline channel. The model is evaluated on all 2^D
/// variants and marginal contributions are combined with the usual
/// |S|!(D-|S|-1)!/D! coalition weights.
std::vector<double> shapley_exact(const BatchModelFn& model, const numkit::Tensor& x,
                                  const numkit::Tensor& baseline);

/// w(s) = s!(D-s-1)!/D! = 1/(D * C(D-1,s)), exact for D <= 20.
double coalition_weight(std::size_t d, std::size_t s);

/// p_i = (|phi_i| + eps) / sum_j (|phi_j| + eps) with eps = 1e-12, so
/// an all-zero attribution becomes the uniform distribution.
std::vector<double> normalize_attribution(const std::vector<double>& phi);

/// Shannon entropy -sum p ln p (natural log, 0 ln 0 := 0).
double shap_entropy(const std::vector<double>& phi_norm);

/// Quadratic entropy target penalty (alpha - H)^2.
double entropy_penalty(double H, double alpha);

/// Per-channel mean profile over the dataset's windows (T x D); the
/// default masking baseline. Pass zeros for an absolute baseline.
numkit::Tensor mean_profile(const dataio::WindowedDataset& ds);

/// Mean SHAP entropy over k windows as a differentiable tape node.
/// Rebuilds the exact Shapley computation from one coalition-expanded
/// batched forward: Shapley values are a fixed linear map of the 2^D
/// model outputs, so phi -> |phi|+eps -> row normalize -> entropy ->
/// mean stays on the tape. Dropout is off inside this graph.
numkit::Value differentiable_batch_entropy(numkit::Tape& tape,
                                           const forecaster::StagedParams& sp,
                                           const forecaster::LstmConfig& cfg,
                                           const std::vector<numkit::Tensor>& windows,
                                           const numkit::Tensor& baseline);

/// One explained sample.
struct Attribution {
  std::string sample_id;
  std::vector<double> phi;
  std::vector<double> phi_norm;
  double entropy = 0.0;
};

struct AttributionMatrix {
  std::string model_id;
  std::string baseline_spec;
  std::vector<std::string> feature_names;
  std::vector<Attribution> rows;
  std::vector<bool> membership;  // per row: explained window was a training member

  void validate() const;
};

/// Builds an Attribution (phi, normalized phi, entropy) for one window.
Attribution explain_window(const BatchModelFn& model, const numkit::Tensor& x,
                           const numkit::Tensor& baseline, const std::string& sample_id);

/// CSV columns: sample_id, membership_flag, phi_1..phi_D, entropy.
/// A JSON sidecar `<path>.meta.json` carries feature names, model id,
/// baseline spec and format_version. Round-trips exactly.
void save_attributions(const AttributionMatrix& m, const std::string& csv_path);
AttributionMatrix load_attributions(const std::string& csv_path);

}  // namespace shapguard::explainer
