#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "forecaster/lstm.hpp"
#include "numkit/tape.hpp"

using namespace shapguard;
using namespace shapguard::forecaster;
using numkit::Tape;
using numkit::Tensor;
using numkit::Value;

namespace {

Tensor random_window(RngStream& rng, std::size_t T, std::size_t D) {
  Tensor x = Tensor::zeros({T, D});
  for (std::size_t i = 0; i < x.numel(); ++i) x.at(i) = rng.next_unit();
  return x;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "shapguard_forecaster_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("init draws the documented shapes deterministically") {
  LstmConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_size = 8;
  cfg.num_layers = 2;
  cfg.seed = 11;
  const auto a = init_params(cfg);
  const auto b = init_params(cfg);

  REQUIRE(a.layers.size() == 2);
  CHECK(a.layers[0].w_xi.shape() == std::vector<std::size_t>{3, 8});
  CHECK(a.layers[1].w_xi.shape() == std::vector<std::size_t>{8, 8});
  CHECK(a.layers[0].w_hf.shape() == std::vector<std::size_t>{8, 8});
  CHECK(a.head_w.shape() == std::vector<std::size_t>{8, 1});
  CHECK(a.head_b.numel() == 1);

  const auto fa = flatten(a);
  const auto fb = flatten(b);
  REQUIRE(fa.size() == param_count(cfg));
  CHECK(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0);

  // all draws inside the uniform bound, forget bias pinned to one
  const double bound = 1.0 / std::sqrt(8.0);
  for (double v : fa) CHECK((v == 1.0 || std::fabs(v) <= bound));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.layers[l].b_f.at(i) == 1.0);
  }

  auto cfg2 = cfg;
  cfg2.seed = 12;
  const auto fc = flatten(init_params(cfg2));
  CHECK(std::memcmp(fa.data(), fc.data(), fa.size() * sizeof(double)) != 0);
}

TEST_CASE("config validation rejects bad fields") {
  LstmConfig cfg;
  cfg.input_dim = 0;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
  cfg = {};
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
  cfg = {};
  cfg.num_layers = 0;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
}

TEST_CASE("flatten and unflatten are inverse") {
  LstmConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_size = 5;
  cfg.num_layers = 2;
  cfg.seed = 3;
  const auto p = init_params(cfg);
  const auto flat = flatten(p);
  const auto q = unflatten(cfg, flat);
  const auto flat2 = flatten(q);
  REQUIRE(flat.size() == flat2.size());
  CHECK(std::memcmp(flat.data(), flat2.data(), flat.size() * sizeof(double)) == 0);

  CHECK_THROWS_AS(unflatten(cfg, std::vector<double>(3, 0.0)), ConfigError);
}

TEST_CASE("all-zero parameters predict zero") {
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 4;
  cfg.num_layers = 2;
  const auto p = unflatten(cfg, std::vector<double>(param_count(cfg), 0.0));
  RngStream rng(1);
  const auto x = random_window(rng, 6, 2);
  CHECK(predict(p, cfg, x) == 0.0);
}

TEST_CASE("single cell matches the hand-computed golden value") {
  LstmConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden_size = 1;
  cfg.num_layers = 1;
  LstmParams p;
  LstmLayerParams lp;
  lp.w_xi = Tensor::matrix(1, 1, {0.5});
  lp.w_hi = Tensor::matrix(1, 1, {0.3});
  lp.b_i = Tensor::vector({0.1});
  lp.w_xf = Tensor::matrix(1, 1, {-0.2});
  lp.w_hf = Tensor::matrix(1, 1, {0.4});
  lp.b_f = Tensor::vector({1.0});
  lp.w_xg = Tensor::matrix(1, 1, {0.7});
  lp.w_hg = Tensor::matrix(1, 1, {-0.6});
  lp.b_g = Tensor::vector({0.0});
  lp.w_xo = Tensor::matrix(1, 1, {0.9});
  lp.w_ho = Tensor::matrix(1, 1, {0.2});
  lp.b_o = Tensor::vector({-0.1});
  p.layers.push_back(lp);
  p.head_w = Tensor::matrix(1, 1, {2.0});
  p.head_b = Tensor({1}, {0.05});

  const Tensor x = Tensor::matrix(1, 1, {0.8});
  const double got = predict(p, cfg, x);

  // scalar re-derivation of the same gate chain
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double i = sig(0.5 * 0.8 + 0.1);
  const double f = sig(-0.2 * 0.8 + 1.0);
  const double g = std::tanh(0.7 * 0.8);
  const double o = sig(0.9 * 0.8 - 0.1);
  const double c = f * 0.0 + i * g;
  const double h = o * std::tanh(c);
  const double want = 2.0 * h + 0.05;
  CHECK(std::fabs(got - want) < 1e-12);
  CHECK(std::fabs(got - 0.44801521784215464) < 1e-12);
}

TEST_CASE("gate activations stay inside their ranges") {
  // bounded gates imply |h| < 1 for any input, so a wild input cannot
  // blow up the hidden state
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 3;
  cfg.num_layers = 1;
  cfg.seed = 5;
  const auto p = init_params(cfg);
  RngStream rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::zeros({5, 2});
    for (std::size_t i = 0; i < x.numel(); ++i) x.at(i) = rng.next_uniform(-50.0, 50.0);
    const double y = predict(p, cfg, x);
    double wsum = std::fabs(p.head_b.at(0));
    for (std::size_t i = 0; i < 3; ++i) wsum += std::fabs(p.head_w.at(i));
    CHECK(std::fabs(y) <= wsum);  // since every |h_j| < 1
  }
}

TEST_CASE("eval forward is pure and batching matches single windows") {
  LstmConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_size = 6;
  cfg.num_layers = 2;
  cfg.seed = 21;
  const auto p = init_params(cfg);
  RngStream rng(2);

  std::vector<Tensor> windows;
  for (int b = 0; b < 4; ++b) windows.push_back(random_window(rng, 7, 3));

  const auto batch = predict_batch(p, cfg, stack_windows(windows));
  REQUIRE(batch.size() == 4);
  for (std::size_t b = 0; b < 4; ++b) {
    const double single = predict(p, cfg, windows[b]);
    CHECK(batch[b] == single);  // bitwise, same kernels and order
    CHECK(predict(p, cfg, windows[b]) == single);
  }

  // permuting the batch permutes outputs
  std::vector<Tensor> perm = {windows[2], windows[0], windows[3], windows[1]};
  const auto pbatch = predict_batch(p, cfg, stack_windows(perm));
  CHECK(pbatch[0] == batch[2]);
  CHECK(pbatch[1] == batch[0]);
  CHECK(pbatch[2] == batch[3]);
  CHECK(pbatch[3] == batch[1]);
}

TEST_CASE("tape forward equals the untracked forward bitwise") {
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 5;
  cfg.num_layers = 2;
  cfg.seed = 33;
  const auto p = init_params(cfg);
  RngStream rng(4);
  std::vector<Tensor> windows;
  for (int b = 0; b < 3; ++b) windows.push_back(random_window(rng, 6, 2));
  const auto steps = stack_windows(windows);

  Tape tape;
  const auto sp = stage_params(tape, p);
  const Value y = forward_batch(tape, sp, cfg, steps, RunMode::eval);
  const Tensor& yt = tape.value(y);
  REQUIRE(yt.rows() == 3);

  const auto direct = predict_batch(p, cfg, steps);
  for (std::size_t b = 0; b < 3; ++b) CHECK(yt.at(b, 0) == direct[b]);
}

TEST_CASE("empty and misshapen batches are rejected") {
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 3;
  const auto p = init_params(cfg);
  CHECK_THROWS_AS(predict_batch(p, cfg, {}), ConfigError);
  CHECK_THROWS_AS(predict_batch(p, cfg, {Tensor::zeros({0, 2})}), ConfigError);
  CHECK_THROWS_AS(predict_batch(p, cfg, {Tensor::zeros({1, 5})}), ShapeError);
  CHECK_THROWS_AS(predict(p, cfg, Tensor::zeros({4, 7})), ShapeError);
  CHECK_THROWS_AS(stack_windows({}), ConfigError);
}

TEST_CASE("non-finite activations report layer and step") {
  LstmConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden_size = 1;
  cfg.num_layers = 1;
  auto p = init_params(cfg);
  p.layers[0].w_xi.at(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    predict(p, cfg, Tensor::matrix(2, 1, {0.5, 0.5}));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer 0") != std::string::npos);
    CHECK(msg.find("step 0") != std::string::npos);
  }
}

TEST_CASE("train-mode dropout masks change the output and need an rng") {
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 8;
  cfg.num_layers = 2;
  cfg.dropout = 0.5;
  cfg.seed = 40;
  const auto p = init_params(cfg);
  RngStream rng(7);
  const auto x = random_window(rng, 5, 2);

  CHECK_THROWS_AS(
      [&] {
        Tape tape;
        const auto sp = stage_params(tape, p);
        forward_batch(tape, sp, cfg, window_steps(x), RunMode::train, nullptr);
      }(),
      ConfigError);

  auto run_train = [&](std::uint64_t mask_seed) {
    Tape tape;
    const auto sp = stage_params(tape, p);
    RngStream mask_rng(mask_seed);
    const Value y = forward_batch(tape, sp, cfg, window_steps(x), RunMode::train, &mask_rng);
    return tape.value(y).at(0);
  };
  // same mask stream reproduces; different streams generally differ
  CHECK(run_train(1) == run_train(1));
  CHECK(run_train(1) != run_train(2));

  // eval ignores dropout entirely
  Tape tape;
  const auto sp = stage_params(tape, p);
  const Value y = forward_batch(tape, sp, cfg, window_steps(x), RunMode::eval);
  CHECK(tape.value(y).at(0) == predict(p, cfg, x));

  // single-layer dropout is inert even in train mode
  LstmConfig one = cfg;
  one.num_layers = 1;
  const auto p1 = init_params(one);
  Tape t1;
  const auto sp1 = stage_params(t1, p1);
  const Value y1 = forward_batch(t1, sp1, one, window_steps(x), RunMode::train, nullptr);
  CHECK(t1.value(y1).at(0) == predict(p1, one, x));
}

TEST_CASE("full-model gradients match finite differences") {
  LstmConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_size = 4;
  cfg.num_layers = 2;
  cfg.seed = 55;
  const auto p0 = init_params(cfg);
  const auto flat0 = flatten(p0);
  RngStream rng(6);
  std::vector<Tensor> windows;
  for (int b = 0; b < 2; ++b) windows.push_back(random_window(rng, 3, 2));
  const auto steps = stack_windows(windows);

  auto loss_at = [&](const std::vector<double>& flat) {
    const auto p = unflatten(cfg, flat);
    const auto y = predict_batch(p, cfg, steps);
    double s = 0.0;
    for (double v : y) s += v * v;
    return s;
  };

  Tape tape;
  const auto sp = stage_params(tape, p0);
  const Value y = forward_batch(tape, sp, cfg, steps, RunMode::eval);
  const Value loss = tape.sum(tape.mul(y, y));
  tape.backward(loss);
  const auto grads = flatten(collect_gradients(tape, sp));
  REQUIRE(grads.size() == flat0.size());

  RngStream pick(77);
  const auto idx = pick.sample_without_replacement(flat0.size(), 40);
  const double h = 1e-5;
  for (std::size_t k : idx) {
    auto hi = flat0;
    auto lo = flat0;
    hi[k] += h;
    lo[k] -= h;
    const double fd = (loss_at(hi) - loss_at(lo)) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(grads[k]), 1e-6});
    CHECK(std::fabs(fd - grads[k]) / denom < 1e-3);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  LstmConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_size = 6;
  cfg.num_layers = 2;
  cfg.dropout = 0.25;
  cfg.seed = 99;
  const auto p = init_params(cfg);
  const auto path = temp_path("model.ckpt");
  save_checkpoint(cfg, p, path.string());

  const auto [cfg2, p2] = load_checkpoint(path.string());
  CHECK(cfg2.input_dim == cfg.input_dim);
  CHECK(cfg2.hidden_size == cfg.hidden_size);
  CHECK(cfg2.num_layers == cfg.num_layers);
  CHECK(cfg2.dropout == cfg.dropout);
  CHECK(cfg2.seed == cfg.seed);
  const auto fa = flatten(p);
  const auto fb = flatten(p2);
  REQUIRE(fa.size() == fb.size());
  CHECK(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0);

  // identical bytes on re-save
  const auto path2 = temp_path("model2.ckpt");
  save_checkpoint(cfg2, p2, path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  // corrupt payloads are rejected
  std::filesystem::resize_file(path2, std::filesystem::file_size(path2) - 8);
  CHECK_THROWS_AS(load_checkpoint(path2.string()), DataError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt").string()), DataError);
}
