#include "trainer/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "common/error.hpp"
#include "common/jsonutil.hpp"
#include "common/rng.hpp"
#include "explainer/shapley.hpp"

namespace shapguard::trainer {

using forecaster::LstmConfig;
using forecaster::LstmParams;
using forecaster::RunMode;
using forecaster::StagedParams;
using numkit::Tape;
using numkit::Tensor;
using numkit::Value;

namespace {

// substream tags of TrainConfig.seed; regimes must draw from identical
// stream layouts so that degenerate configs reduce to one another
constexpr std::uint64_t kShuffleTag = 1;
constexpr std::uint64_t kDropoutTag = 2;
constexpr std::uint64_t kNoiseTag = 3;
constexpr std::uint64_t kSubsampleTag = 4;

constexpr double kLambdaMin = 1e-4;
constexpr double kLambdaMax = 1e2;

Tensor targets_column(const dataio::WindowedDataset& ds, const std::vector<std::size_t>& idx) {
  Tensor t = Tensor::zeros({idx.size(), 1});
  for (std::size_t i = 0; i < idx.size(); ++i) t.at(i, 0) = ds.targets[idx[i]];
  return t;
}

std::vector<Tensor> gather_windows(const dataio::WindowedDataset& ds,
                                   const std::vector<std::size_t>& idx) {
  std::vector<Tensor> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.input_tensor(i));
  return out;
}

double validation_mae(const LstmParams& p, const LstmConfig& lc,
                      const dataio::WindowedDataset& ds, std::size_t begin, std::size_t end) {
  double acc = 0.0;
  const std::size_t chunk = 256;
  for (std::size_t lo = begin; lo < end; lo += chunk) {
    const std::size_t hi = std::min(end, lo + chunk);
    std::vector<std::size_t> idx(hi - lo);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
    const auto yhat =
        forecaster::predict_batch(p, lc, forecaster::stack_windows(gather_windows(ds, idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      acc += std::fabs(yhat[i] - ds.targets[idx[i]]);
    }
  }
  return acc / static_cast<double>(end - begin);
}

void sgd_step(LstmParams& p, const LstmParams& g, double lr) {
  auto pit = [&](LstmParams& params) {
    std::vector<Tensor*> out;
    forecaster::for_each_tensor(params, [&](Tensor& t) { out.push_back(&t); });
    return out;
  };
  std::vector<const Tensor*> gt;
  forecaster::for_each_tensor(g, [&](const Tensor& t) { gt.push_back(&t); });
  const auto ts = pit(p);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    Tensor& dst = *ts[i];
    const Tensor& src = *gt[i];
    for (std::size_t k = 0; k < dst.numel(); ++k) dst.at(k) -= lr * src.at(k);
  }
}

void apply_flat_update(LstmParams& p, const std::vector<double>& g, double lr) {
  std::size_t pos = 0;
  forecaster::for_each_tensor(p, [&](Tensor& t) {
    for (std::size_t k = 0; k < t.numel(); ++k) t.at(k) -= lr * g[pos + k];
    pos += t.numel();
  });
}

}  // namespace

Regime regime_from_string(const std::string& s) {
  if (s == "baseline") return Regime::baseline;
  if (s == "shap_reg") return Regime::shap_reg;
  if (s == "dp") return Regime::dp;
  throw ConfigError("unknown training regime '" + s + "'");
}

std::string regime_to_string(Regime r) {
  switch (r) {
    case Regime::baseline: return "baseline";
    case Regime::shap_reg: return "shap_reg";
    case Regime::dp: return "dp";
  }
  throw ConfigError("invalid regime value");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (reg_subsample < 1) throw ConfigError("reg_subsample must be at least 1");
  if (!(adapt_factor > 1.0)) throw ConfigError("adapt_factor must exceed 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(dp_noise_multiplier >= 0.0)) throw ConfigError("dp_noise_multiplier must be >= 0");
  if (regime == Regime::dp && dp_noise_multiplier > 0.0 && !(dp_clip > 0.0)) {
    throw ConfigError("dp noise needs a positive dp_clip to scale against");
  }
}

double TrainRecord::objective(std::size_t epoch_idx, double alpha) const {
  const EpochRecord& e = epochs.at(epoch_idx);
  if (!e.has_entropy) return e.train_mse;
  const double dev = alpha - e.mean_entropy;
  return e.train_mse + e.lambda * dev * dev;
}

void save_train_record(const TrainRecord& r, const std::string& path) {
  std::ostringstream os;
  os << "# format_version: 1\n";
  if (!r.checkpoint_ref.empty()) os << "# checkpoint: " << r.checkpoint_ref << "\n";
  os << "epoch,train_mse,val_mae,mean_entropy,lambda\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << "," << fmt_double(e.train_mse) << "," << fmt_double(e.val_mae) << ",";
    if (e.has_entropy) os << fmt_double(e.mean_entropy);
    os << "," << fmt_double(e.lambda) << "\n";
  }
  spit_file(path, os.str());
}

double batch_mse(const std::vector<double>& yhat, const std::vector<double>& y) {
  if (yhat.empty() || yhat.size() != y.size()) {
    throw ConfigError("batch_mse needs two equal-length non-empty vectors");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < yhat.size(); ++i) {
    const double d = yhat[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(yhat.size());
}

Value total_loss(Tape& tape, Value mse, Value hbar, double lambda, double alpha) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  const Value dev = tape.add_scalar(tape.neg(hbar), alpha);
  return tape.add(mse, tape.scale(tape.mul(dev, dev), lambda));
}

double adapt_lambda(const std::vector<double>& val_mae_history, double mean_entropy,
                    double lambda, double alpha, const TrainConfig& cfg) {
  if (val_mae_history.empty()) throw ConfigError("lambda adaptation needs a validation history");
  double next = lambda;
  const std::size_t n = val_mae_history.size();
  bool worsened_run = n > cfg.patience;
  for (std::size_t j = 0; worsened_run && j < cfg.patience; ++j) {
    if (!(val_mae_history[n - 1 - j] > val_mae_history[n - 2 - j])) worsened_run = false;
  }
  const bool improved = n >= 2 && val_mae_history[n - 1] < val_mae_history[n - 2];
  if (worsened_run) {
    next = lambda / cfg.adapt_factor;
  } else if (improved && mean_entropy < alpha - 0.1) {
    next = lambda * cfg.adapt_factor;
  }
  return std::clamp(next, kLambdaMin, kLambdaMax);
}

TrainResult train(const dataio::WindowedDataset& ds, const TrainConfig& cfg,
                  const LstmConfig& lstm_cfg) {
  cfg.validate();
  lstm_cfg.validate();
  ds.validate();
  const std::size_t N = ds.num_windows();
  if (N == 0) throw DataError("training dataset is empty");
  if (ds.num_features() != lstm_cfg.input_dim) {
    throw ConfigError("dataset has " + std::to_string(ds.num_features()) +
                      " features but the model expects " + std::to_string(lstm_cfg.input_dim));
  }

  // chronological split: last 10% of windows are validation only
  const std::size_t n_val = std::max<std::size_t>(1, N / 10);
  if (n_val >= N) throw DataError("dataset too small to hold out validation windows");
  const std::size_t n_fit = N - n_val;

  const double alpha =
      cfg.alpha >= 0.0 ? cfg.alpha : std::log(static_cast<double>(lstm_cfg.input_dim));
  const bool penalty_active = cfg.regime == Regime::shap_reg && cfg.lambda > 0.0;

  const RngStream root(cfg.seed);
  RngStream shuffle_rng = root.derive(kShuffleTag);
  RngStream dropout_rng = root.derive(kDropoutTag);
  RngStream noise_rng = root.derive(kNoiseTag);
  RngStream subsample_rng = root.derive(kSubsampleTag);

  LstmParams params = forecaster::init_params(lstm_cfg);
  Tensor reg_baseline;
  if (penalty_active) {
    dataio::WindowedDataset fit_view = ds;
    fit_view.inputs.resize(n_fit * ds.window_len * ds.num_features());
    fit_view.targets.resize(n_fit);
    fit_view.target_timestamps.resize(n_fit);
    reg_baseline = explainer::mean_profile(fit_view);
  }

  TrainRecord record;
  std::vector<double> val_history;
  double lambda = cfg.lambda;

  std::vector<std::size_t> order(n_fit);
  for (std::size_t i = 0; i < n_fit; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double mse_acc = 0.0;
    double entropy_acc = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t lo = 0; lo < n_fit; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n_fit, lo + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
      const std::size_t B = idx.size();
      double batch_loss;
      try {
        if (cfg.regime == Regime::dp) {
          // per-sample gradients, clipped then noised before averaging
          std::vector<double> grad_sum(forecaster::param_count(lstm_cfg), 0.0);
          double mse_val = 0.0;
          for (std::size_t s = 0; s < B; ++s) {
            Tape tape;
            const StagedParams sp = forecaster::stage_params(tape, params);
            const Value yhat = forecaster::forward_batch(
                tape, sp, lstm_cfg, forecaster::stack_windows({ds.input_tensor(idx[s])}),
                RunMode::train, &dropout_rng);
            const Value target = tape.constant(Tensor::matrix(1, 1, {ds.targets[idx[s]]}));
            const Value diff = tape.sub(yhat, target);
            const Value loss = tape.mean(tape.mul(diff, diff));
            mse_val += tape.value(loss).item();
            tape.backward(loss);
            std::vector<double> g = forecaster::flatten(forecaster::collect_gradients(tape, sp));
            if (cfg.dp_clip > 0.0) {
              double norm_sq = 0.0;
              for (double v : g) norm_sq += v * v;
              const double norm = std::sqrt(norm_sq);
              if (norm > cfg.dp_clip) {
                const double scale = cfg.dp_clip / norm;
                for (double& v : g) v *= scale;
              }
            }
            for (std::size_t k = 0; k < g.size(); ++k) grad_sum[k] += g[k];
          }
          if (cfg.dp_noise_multiplier > 0.0) {
            const double sd = cfg.dp_noise_multiplier * cfg.dp_clip;
            for (double& v : grad_sum) v += sd * noise_rng.next_gaussian();
          }
          const double inv = 1.0 / static_cast<double>(B);
          for (double& v : grad_sum) v *= inv;
          apply_flat_update(params, grad_sum, cfg.learning_rate);
          batch_loss = mse_val / static_cast<double>(B);
        } else {
          Tape tape;
          const StagedParams sp = forecaster::stage_params(tape, params);
          const Value yhat = forecaster::forward_batch(
              tape, sp, lstm_cfg, forecaster::stack_windows(gather_windows(ds, idx)),
              RunMode::train, &dropout_rng);
          const Value target = tape.constant(targets_column(ds, idx));
          const Value diff = tape.sub(yhat, target);
          const Value mse = tape.mean(tape.mul(diff, diff));
          Value loss = mse;
          if (penalty_active) {
            std::vector<std::size_t> pick;
            if (cfg.reg_subsample < B) {
              const auto rel = subsample_rng.sample_without_replacement(B, cfg.reg_subsample);
              for (std::size_t r : rel) pick.push_back(idx[r]);
            } else {
              pick = idx;
            }
            const Value hbar = explainer::differentiable_batch_entropy(
                tape, sp, lstm_cfg, gather_windows(ds, pick), reg_baseline);
            entropy_acc += tape.value(hbar).item();
            loss = total_loss(tape, mse, hbar, lambda, alpha);
          }
          batch_loss = tape.value(mse).item();
          tape.backward(loss);
          sgd_step(params, forecaster::collect_gradients(tape, sp), cfg.learning_rate);
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(n_batches) + ")");
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(n_batches));
      }
      mse_acc += batch_loss * static_cast<double>(B);
      ++n_batches;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_mse = mse_acc / static_cast<double>(n_fit);
    er.val_mae = validation_mae(params, lstm_cfg, ds, n_fit, N);
    er.lambda = cfg.regime == Regime::shap_reg ? lambda : 0.0;
    if (penalty_active) {
      er.mean_entropy = entropy_acc / static_cast<double>(n_batches);
      er.has_entropy = true;
    }
    record.epochs.push_back(er);
    val_history.push_back(er.val_mae);

    if (cfg.regime == Regime::shap_reg && cfg.adaptive && penalty_active) {
      lambda = adapt_lambda(val_history, er.mean_entropy, lambda, alpha, cfg);
    }
  }

  return {std::move(params), std::move(record)};
}

}  // namespace shapguard::trainer
