#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataio/windows.hpp"
#include "forecaster/lstm.hpp"
#include "numkit/tape.hpp"

namespace shapguard::trainer {

enum class Regime { baseline, shap_reg, dp };

Regime regime_from_string(const std::string& s);
std::string regime_to_string(Regime r);

struct TrainConfig {
  Regime regime = Regime::baseline;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  // shap_reg only
  double lambda = 1.0;
  double alpha = -1.0;  // negative selects the default ln(D)
  std::size_t reg_subsample = 4;
  bool adaptive = false;
  double adapt_factor = 2.0;
  std::size_t patience = 2;
  // dp only; clip <= 0 is the "no clipping" sentinel
  double dp_clip = 1.0;
  double dp_noise_multiplier = 0.0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mae = 0.0;
  /// Mean differentiable batch entropy; only tracked when the entropy
  /// penalty was active (shap_reg with lambda > 0), NaN otherwise.
  double mean_entropy = 0.0;
  bool has_entropy = false;
  double lambda = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::string checkpoint_ref;  // filled by the caller once params are saved

  /// Objective value of one epoch: MSE for baseline and dp, MSE plus
  /// the entropy penalty for shap_reg.
  double objective(std::size_t epoch_idx, double alpha) const;
};

/// CSV: `# format_version` comment, optional `# checkpoint` comment,
/// then epoch,train_mse,val_mae,mean_entropy,lambda rows (mean_entropy
/// empty when not tracked). Byte-stable across runs.
void save_train_record(const TrainRecord& r, const std::string& path);

double batch_mse(const std::vector<double>& yhat, const std::vector<double>& y);

/// mse + lambda * (alpha - hbar)^2 as a tape node.
numkit::Value total_loss(numkit::Tape& tape, numkit::Value mse, numkit::Value hbar,
                         double lambda, double alpha);

/// Two-sided lambda schedule, applied after each epoch: shrink by
/// adapt_factor after `patience` consecutive validation-MAE increases,
/// grow by adapt_factor when MAE just improved while mean entropy sits
/// more than 0.1 below alpha, otherwise keep. Result clamped to
/// [1e-4, 1e2]. `val_mae_history` includes the epoch just finished.
double adapt_lambda(const std::vector<double>& val_mae_history, double mean_entropy,
                    double lambda, double alpha, const TrainConfig& cfg);

struct TrainResult {
  forecaster::LstmParams params;
  TrainRecord record;
};

/// SGD training over the dataset's windows. The last 10% of windows
/// (chronological) are held out for validation MAE and lambda
/// adaptation. All randomness (shuffling, dropout masks, DP noise,
/// regularizer subsampling) comes from substreams of cfg.seed, so a
/// fixed config reproduces the run bit for bit.
TrainResult train(const dataio::WindowedDataset& ds, const TrainConfig& cfg,
                  const forecaster::LstmConfig& lstm_cfg);

}  // namespace shapguard::trainer
