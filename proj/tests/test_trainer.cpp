#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "common/jsonutil.hpp"
#include "common/rng.hpp"
#include "dataio/windows.hpp"
#include "explainer/shapley.hpp"
#include "forecaster/lstm.hpp"
#include "numkit/tape.hpp"
#include "trainer/train.hpp"

using namespace shapguard;
using numkit::Tape;
using numkit::Tensor;
using numkit::Value;
using trainer::Regime;
using trainer::TrainConfig;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "shapguard_trainer_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// One channel carries the whole signal: the target is channel 0 at the
// final step. The remaining channels are independent noise, so a model
// that fits this task concentrates its attributions on channel 0.
dataio::WindowedDataset single_driver_dataset(std::size_t n, std::size_t T, std::size_t D,
                                              std::uint64_t seed) {
  RngStream rng(seed);
  dataio::WindowedDataset ds;
  ds.house_id = "single_driver";
  ds.split_tag = "train";
  ds.window_len = T;
  for (std::size_t d = 0; d < D; ++d) ds.feature_names.push_back("ch" + std::to_string(d));
  ds.input_norms.assign(D, dataio::NormParams{0.0, 1.0, false});
  ds.target_norm = dataio::NormParams{0.0, 1.0, false};
  ds.inputs.resize(n * T * D);
  ds.targets.resize(n);
  ds.target_timestamps.resize(n);
  for (std::size_t w = 0; w < n; ++w) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        ds.inputs[(w * T + t) * D + d] = rng.next_uniform(0.05, 0.95);
      }
    }
    ds.targets[w] = ds.inputs[(w * T + (T - 1)) * D + 0];
    ds.target_timestamps[w] = 1577836800 + static_cast<std::int64_t>(w) * 3600;
  }
  ds.validate();
  return ds;
}

forecaster::LstmConfig small_model(std::size_t D, std::uint64_t seed) {
  forecaster::LstmConfig lc;
  lc.input_dim = D;
  lc.hidden_size = 8;
  lc.num_layers = 1;
  lc.dropout = 0.0;
  lc.seed = seed;
  return lc;
}

double mean_exact_entropy(const forecaster::LstmParams& p, const forecaster::LstmConfig& lc,
                          const dataio::WindowedDataset& ds, std::size_t count) {
  const auto model = explainer::lstm_model_fn(p, lc);
  const Tensor baseline = explainer::mean_profile(ds);
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    acc += explainer::explain_window(model, ds.input_tensor(i), baseline, "w").entropy;
  }
  return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("batch mse matches hand-worked values") {
  CHECK(trainer::batch_mse({0.3, -1.2, 4.0}, {0.3, -1.2, 4.0}) == 0.0);
  CHECK(trainer::batch_mse({1.0, 3.0}, {0.0, 0.0}) == doctest::Approx(5.0).epsilon(1e-15));
  const double base = trainer::batch_mse({1.5, 2.0, 0.25}, {1.0, 1.0, 1.0});
  const double doubled = trainer::batch_mse({2.0, 3.0, -0.5}, {1.0, 1.0, 1.0});
  CHECK(doubled == doctest::Approx(4.0 * base).epsilon(1e-12));
  CHECK_THROWS_AS(trainer::batch_mse({}, {}), ConfigError);
  CHECK_THROWS_AS(trainer::batch_mse({1.0}, {1.0, 2.0}), ConfigError);
}

TEST_CASE("total loss adds the squared entropy deviation on the tape") {
  Tape tape;
  const Value mse = tape.param(Tensor::scalar(0.1));
  const Value hbar = tape.param(Tensor::scalar(0.9));

  SUBCASE("zero lambda reduces to the mse") {
    const Value total = trainer::total_loss(tape, mse, hbar, 0.0, 1.9);
    CHECK(tape.value(total).item() == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("unit deviation with lambda 0.5 adds 0.5") {
    const Value total = trainer::total_loss(tape, mse, hbar, 0.5, 1.9);
    CHECK(tape.value(total).item() == doctest::Approx(0.6).epsilon(1e-12));
  }
  SUBCASE("entropy on target zeroes the penalty for any lambda") {
    const Value total = trainer::total_loss(tape, mse, hbar, 7.3, 0.9);
    CHECK(tape.value(total).item() == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("gradients flow through both terms") {
    const double lambda = 0.5;
    const double alpha = 1.5;
    const Value total = trainer::total_loss(tape, mse, hbar, lambda, alpha);
    tape.backward(total);
    CHECK(tape.gradient(mse).item() == doctest::Approx(1.0).epsilon(1e-12));
    // d/dH of lambda*(alpha - H)^2 is -2*lambda*(alpha - H)
    CHECK(tape.gradient(hbar).item() ==
          doctest::Approx(-2.0 * lambda * (alpha - 0.9)).epsilon(1e-12));
  }
  SUBCASE("negative lambda is rejected") {
    CHECK_THROWS_AS(trainer::total_loss(tape, mse, hbar, -0.1, 1.0), ConfigError);
  }
}

TEST_CASE("lambda adaptation follows the two-sided schedule") {
  TrainConfig cfg;
  cfg.patience = 2;
  cfg.adapt_factor = 2.0;
  const double alpha = 2.0;

  SUBCASE("flat validation history keeps lambda") {
    CHECK(trainer::adapt_lambda({0.5, 0.5, 0.5}, 1.0, 1.0, alpha, cfg) == 1.0);
  }
  SUBCASE("two consecutive increases halve lambda") {
    CHECK(trainer::adapt_lambda({0.5, 0.6, 0.7}, 1.0, 1.0, alpha, cfg) == 0.5);
  }
  SUBCASE("one increase is below patience") {
    CHECK(trainer::adapt_lambda({0.6, 0.5, 0.7}, 1.0, 1.0, alpha, cfg) == 1.0);
  }
  SUBCASE("improvement with entropy well below target doubles lambda") {
    CHECK(trainer::adapt_lambda({0.5, 0.4}, alpha - 0.3, 1.0, alpha, cfg) == 2.0);
  }
  SUBCASE("improvement with entropy near target keeps lambda") {
    CHECK(trainer::adapt_lambda({0.5, 0.4}, alpha - 0.05, 1.0, alpha, cfg) == 1.0);
  }
  SUBCASE("growth clamps at the upper bound") {
    CHECK(trainer::adapt_lambda({0.5, 0.4}, alpha - 0.3, 1e2, alpha, cfg) == 1e2);
    CHECK(trainer::adapt_lambda({0.5, 0.4}, alpha - 0.3, 80.0, alpha, cfg) == 1e2);
  }
  SUBCASE("shrink clamps at the lower bound") {
    CHECK(trainer::adapt_lambda({0.5, 0.6, 0.7}, 1.0, 1.5e-4, alpha, cfg) == 1e-4);
  }
  SUBCASE("empty history is rejected") {
    CHECK_THROWS_AS(trainer::adapt_lambda({}, 1.0, 1.0, alpha, cfg), ConfigError);
  }
}

TEST_CASE("regime names round-trip and unknown names are rejected") {
  for (const Regime r : {Regime::baseline, Regime::shap_reg, Regime::dp}) {
    CHECK(trainer::regime_from_string(trainer::regime_to_string(r)) == r);
  }
  CHECK_THROWS_WITH_AS(trainer::regime_from_string("adam"),
                       doctest::Contains("unknown training regime"), ConfigError);
}

TEST_CASE("train config validation rejects out-of-range fields") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.adapt_factor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.regime = Regime::dp;
  cfg.dp_noise_multiplier = 0.5;
  cfg.dp_clip = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("dp_clip"), ConfigError);
}

TEST_CASE("training rejects mismatched or empty datasets") {
  const auto ds = single_driver_dataset(20, 6, 3, 11);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(trainer::train(ds, cfg, small_model(4, 1)),
                       doctest::Contains("features"), ConfigError);
  dataio::WindowedDataset empty = ds;
  empty.inputs.clear();
  empty.targets.clear();
  empty.target_timestamps.clear();
  CHECK_THROWS_AS(trainer::train(empty, cfg, small_model(3, 1)), DataError);
}

TEST_CASE("a fixed seed reproduces the whole run and seeds matter") {
  const auto ds = single_driver_dataset(40, 6, 3, 21);
  const auto lc = small_model(3, 5);
  TrainConfig cfg;
  cfg.regime = Regime::shap_reg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  cfg.lambda = 0.5;
  cfg.reg_subsample = 2;
  cfg.seed = 1234;

  const auto a = trainer::train(ds, cfg, lc);
  const auto b = trainer::train(ds, cfg, lc);
  const auto fa = forecaster::flatten(a.params);
  const auto fb = forecaster::flatten(b.params);
  REQUIRE(fa.size() == fb.size());
  CHECK(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0);

  const std::string pa = temp_path("record_a.csv");
  const std::string pb = temp_path("record_b.csv");
  trainer::save_train_record(a.record, pa);
  trainer::save_train_record(b.record, pb);
  CHECK(slurp_file(pa) == slurp_file(pb));

  TrainConfig other = cfg;
  other.seed = 4321;
  const auto c = trainer::train(ds, other, lc);
  const auto fc = forecaster::flatten(c.params);
  CHECK(std::memcmp(fa.data(), fc.data(), fa.size() * sizeof(double)) != 0);
}

TEST_CASE("zero-lambda regularized training is bitwise identical to baseline") {
  const auto ds = single_driver_dataset(50, 6, 3, 33);
  const auto lc = small_model(3, 9);
  TrainConfig base;
  base.regime = Regime::baseline;
  base.epochs = 4;
  base.batch_size = 8;
  base.learning_rate = 0.05;
  base.seed = 77;
  TrainConfig reg = base;
  reg.regime = Regime::shap_reg;
  reg.lambda = 0.0;

  const auto a = trainer::train(ds, base, lc);
  const auto b = trainer::train(ds, reg, lc);
  const auto fa = forecaster::flatten(a.params);
  const auto fb = forecaster::flatten(b.params);
  REQUIRE(fa.size() == fb.size());
  CHECK(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0);

  const std::string pa = temp_path("zl_base.csv");
  const std::string pb = temp_path("zl_reg.csv");
  trainer::save_train_record(a.record, pa);
  trainer::save_train_record(b.record, pb);
  CHECK(slurp_file(pa) == slurp_file(pb));
}

TEST_CASE("dp without noise or clipping averages plain per-sample gradients") {
  const auto ds = single_driver_dataset(12, 4, 2, 55);
  const auto lc = small_model(2, 13);
  TrainConfig cfg;
  cfg.regime = Regime::dp;
  cfg.epochs = 1;
  cfg.batch_size = 16;  // covers all 11 fit windows in one batch
  cfg.learning_rate = 0.05;
  cfg.dp_clip = std::numeric_limits<double>::infinity();
  cfg.dp_noise_multiplier = 0.0;
  cfg.seed = 3;

  const auto p0 = forecaster::flatten(forecaster::init_params(lc));
  const auto dp = trainer::train(ds, cfg, lc);
  const auto p1 = forecaster::flatten(dp.params);

  // one plain tape over the same 11 windows gives the reference gradient
  const std::size_t n_fit = 11;
  std::vector<Tensor> windows;
  for (std::size_t i = 0; i < n_fit; ++i) windows.push_back(ds.input_tensor(i));
  Tape tape;
  forecaster::LstmParams init = forecaster::init_params(lc);
  const auto sp = forecaster::stage_params(tape, init);
  const Value yhat = forecaster::forward_batch(tape, sp, lc, forecaster::stack_windows(windows),
                                               forecaster::RunMode::eval, nullptr);
  Tensor ycol = Tensor::zeros({n_fit, 1});
  for (std::size_t i = 0; i < n_fit; ++i) ycol.at(i, 0) = ds.targets[i];
  const Value diff = tape.sub(yhat, tape.constant(ycol));
  const Value mse = tape.mean(tape.mul(diff, diff));
  tape.backward(mse);
  const auto ref = forecaster::flatten(forecaster::collect_gradients(tape, sp));

  REQUIRE(p0.size() == p1.size());
  REQUIRE(ref.size() == p0.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double got = (p0[i] - p1[i]) / cfg.learning_rate;
    CHECK(std::fabs(got - ref[i]) <= 1e-9 * (1.0 + std::fabs(ref[i])));
  }

  // the explicit no-clip sentinel takes the same path as an infinite bound
  TrainConfig sentinel = cfg;
  sentinel.dp_clip = 0.0;
  const auto p2 = forecaster::flatten(trainer::train(ds, sentinel, lc).params);
  CHECK(std::memcmp(p1.data(), p2.data(), p1.size() * sizeof(double)) == 0);
}

TEST_CASE("dp clipping caps the update norm and keeps its direction") {
  // two windows leave exactly one fit sample, so the single update is
  // lr * clip(gradient) and the bound is observable from outside
  const auto ds = single_driver_dataset(2, 4, 2, 66);
  const auto lc = small_model(2, 17);
  TrainConfig cfg;
  cfg.regime = Regime::dp;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.dp_clip = 0.01;
  cfg.dp_noise_multiplier = 0.0;
  cfg.seed = 8;

  const auto p0 = forecaster::flatten(forecaster::init_params(lc));
  const auto p1 = forecaster::flatten(trainer::train(ds, cfg, lc).params);

  Tape tape;
  forecaster::LstmParams init = forecaster::init_params(lc);
  const auto sp = forecaster::stage_params(tape, init);
  const Value yhat = forecaster::forward_batch(
      tape, sp, lc, forecaster::stack_windows({ds.input_tensor(0)}),
      forecaster::RunMode::eval, nullptr);
  const Value diff = tape.sub(yhat, tape.constant(Tensor::matrix(1, 1, {ds.targets[0]})));
  const Value loss = tape.mean(tape.mul(diff, diff));
  tape.backward(loss);
  const auto g = forecaster::flatten(forecaster::collect_gradients(tape, sp));

  double gnorm = 0.0;
  for (double v : g) gnorm += v * v;
  gnorm = std::sqrt(gnorm);
  REQUIRE(gnorm > cfg.dp_clip);  // the bound actually engages

  double unorm = 0.0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const double d = (p0[i] - p1[i]) / cfg.learning_rate;
    unorm += d * d;
  }
  unorm = std::sqrt(unorm);
  CHECK(unorm <= cfg.dp_clip + 1e-9);

  // clipping rescales; it must not rotate the gradient
  const double scale = cfg.dp_clip / gnorm;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const double got = (p0[i] - p1[i]) / cfg.learning_rate;
    CHECK(std::fabs(got - scale * g[i]) <= 1e-12 * (1.0 + std::fabs(scale * g[i])));
  }
}

TEST_CASE("the objective decreases over the first five epochs in every regime") {
  const auto ds = single_driver_dataset(60, 8, 4, 101);
  const double alpha = std::log(4.0);

  auto run = [&](TrainConfig cfg) {
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.seed = 42;
    const auto res = trainer::train(ds, cfg, small_model(4, 23));
    REQUIRE(res.record.epochs.size() == 5);
    return res.record;
  };

  SUBCASE("baseline") {
    const auto rec = run(TrainConfig{});
    CHECK(rec.objective(4, alpha) < rec.objective(0, alpha));
  }
  SUBCASE("entropy regularized") {
    TrainConfig cfg;
    cfg.regime = Regime::shap_reg;
    cfg.lambda = 1.0;
    cfg.reg_subsample = 2;
    const auto rec = run(cfg);
    CHECK(rec.objective(4, alpha) < rec.objective(0, alpha));
    CHECK(rec.epochs[4].has_entropy);
  }
  SUBCASE("dp") {
    TrainConfig cfg;
    cfg.regime = Regime::dp;
    cfg.dp_clip = 1.0;
    cfg.dp_noise_multiplier = 0.1;
    const auto rec = run(cfg);
    CHECK(rec.objective(4, alpha) < rec.objective(0, alpha));
  }
}

TEST_CASE("entropy regularization spreads attributions on a single-driver task") {
  const std::size_t D = 4;
  const auto ds = single_driver_dataset(90, 8, D, 7);
  const auto lc = small_model(D, 31);

  TrainConfig base;
  base.regime = Regime::baseline;
  base.epochs = 60;
  base.batch_size = 16;
  base.learning_rate = 0.1;
  base.seed = 91;

  TrainConfig reg = base;
  reg.regime = Regime::shap_reg;
  reg.lambda = 2.0;
  reg.reg_subsample = 4;

  const auto mb = trainer::train(ds, base, lc);
  const auto mr = trainer::train(ds, reg, lc);

  const double hb = mean_exact_entropy(mb.params, lc, ds, 40);
  const double hr = mean_exact_entropy(mr.params, lc, ds, 40);

  // the unregularized model leans on the single informative channel
  CHECK(hb < std::log(static_cast<double>(D)) - 0.2);
  // the penalty pushes attributions back toward uniform
  CHECK(hr > hb);
}

TEST_CASE("train records list one row per epoch with stable formatting") {
  trainer::TrainRecord rec;
  rec.checkpoint_ref = "model.ckpt";
  trainer::EpochRecord e0;
  e0.epoch = 0;
  e0.train_mse = 0.25;
  e0.val_mae = 0.5;
  e0.lambda = 0.0;
  trainer::EpochRecord e1;
  e1.epoch = 1;
  e1.train_mse = 0.125;
  e1.val_mae = 0.375;
  e1.mean_entropy = 1.25;
  e1.has_entropy = true;
  e1.lambda = 2.0;
  rec.epochs = {e0, e1};

  const std::string path = temp_path("record_format.csv");
  trainer::save_train_record(rec, path);
  const std::string text = slurp_file(path);
  CHECK(text ==
        "# format_version: 1\n"
        "# checkpoint: model.ckpt\n"
        "epoch,train_mse,val_mae,mean_entropy,lambda\n"
        "0,0.25,0.5,,0\n"
        "1,0.125,0.375,1.25,2\n");

  CHECK(rec.objective(0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
  // epoch 1 tracked entropy, so the objective includes the penalty
  CHECK(rec.objective(1, 1.5) ==
        doctest::Approx(0.125 + 2.0 * 0.0625).epsilon(1e-12));
}
