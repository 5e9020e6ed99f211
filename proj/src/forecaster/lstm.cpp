#include "forecaster/lstm.hpp"

#include <cmath>
#include <cstring>

#include "common/error.hpp"
#include "common/jsonutil.hpp"

namespace shapguard::forecaster {

using numkit::Tape;
using numkit::Tensor;
using numkit::Value;

namespace {

constexpr int kCheckpointFormatVersion = 1;

std::size_t layer_input_dim(const LstmConfig& cfg, std::size_t layer) {
  return layer == 0 ? cfg.input_dim : cfg.hidden_size;
}

void check_steps(const LstmConfig& cfg, const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ConfigError("empty window: no time steps");
  const std::size_t B = steps[0].rows();
  if (B == 0) throw ConfigError("empty batch");
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].rank() != 2 || steps[t].rows() != B || steps[t].cols() != cfg.input_dim) {
      throw ShapeError("step " + std::to_string(t) + " has shape " + steps[t].shape_str() +
                       ", expected " + std::to_string(B) + "x" +
                       std::to_string(cfg.input_dim));
    }
  }
}

Tensor dropout_mask(std::size_t rows, std::size_t cols, double p, RngStream& rng) {
  Tensor m = Tensor::zeros({rows, cols});
  const double keep = 1.0 - p;
  const double scale = 1.0 / keep;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    m.at(i) = rng.next_unit() < keep ? scale : 0.0;
  }
  return m;
}

}  // namespace

void LstmConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim must be at least 1");
  if (hidden_size < 1) throw ConfigError("hidden_size must be at least 1");
  if (num_layers < 1) throw ConfigError("num_layers must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

LstmParams init_params(const LstmConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.hidden_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  RngStream rng(cfg.seed);

  auto fill = [&](Tensor t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.next_uniform(-bound, bound);
    return t;
  };
  auto draw = [&](std::size_t rows, std::size_t cols) { return fill(Tensor::zeros({rows, cols})); };
  auto draw_vec = [&](std::size_t n) { return fill(Tensor::zeros({n})); };

  LstmParams p;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input_dim(cfg, l);
    LstmLayerParams lp;
    lp.w_xi = draw(in, H);
    lp.w_hi = draw(H, H);
    lp.b_i = draw_vec(H);
    lp.w_xf = draw(in, H);
    lp.w_hf = draw(H, H);
    lp.b_f = draw_vec(H);
    lp.w_xg = draw(in, H);
    lp.w_hg = draw(H, H);
    lp.b_g = draw_vec(H);
    lp.w_xo = draw(in, H);
    lp.w_ho = draw(H, H);
    lp.b_o = draw_vec(H);
    // drawn like the others so the stream layout is uniform, then pinned
    for (std::size_t i = 0; i < H; ++i) lp.b_f.at(i) = 1.0;
    p.layers.push_back(std::move(lp));
  }
  p.head_w = draw(H, 1);
  Tensor b = Tensor::zeros({1});
  b.at(0) = rng.next_uniform(-bound, bound);
  p.head_b = b;
  return p;
}

std::size_t param_count(const LstmConfig& cfg) {
  const std::size_t H = cfg.hidden_size;
  std::size_t n = 0;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input_dim(cfg, l);
    n += 4 * (in * H + H * H + H);
  }
  return n + H + 1;
}

void for_each_tensor(LstmParams& p, const std::function<void(Tensor&)>& fn) {
  for (auto& l : p.layers) {
    fn(l.w_xi); fn(l.w_hi); fn(l.b_i);
    fn(l.w_xf); fn(l.w_hf); fn(l.b_f);
    fn(l.w_xg); fn(l.w_hg); fn(l.b_g);
    fn(l.w_xo); fn(l.w_ho); fn(l.b_o);
  }
  fn(p.head_w);
  fn(p.head_b);
}

void for_each_tensor(const LstmParams& p, const std::function<void(const Tensor&)>& fn) {
  for_each_tensor(const_cast<LstmParams&>(p), [&](Tensor& t) { fn(t); });
}

std::vector<double> flatten(const LstmParams& p) {
  std::vector<double> flat;
  for_each_tensor(p, [&](const Tensor& t) {
    flat.insert(flat.end(), t.raw().begin(), t.raw().end());
  });
  return flat;
}

LstmParams unflatten(const LstmConfig& cfg, const std::vector<double>& flat) {
  if (flat.size() != param_count(cfg)) {
    throw ConfigError("flat parameter vector has " + std::to_string(flat.size()) +
                      " entries, config needs " + std::to_string(param_count(cfg)));
  }
  LstmParams p;
  const std::size_t H = cfg.hidden_size;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = layer_input_dim(cfg, l);
    LstmLayerParams lp;
    lp.w_xi = Tensor::zeros({in, H}); lp.w_hi = Tensor::zeros({H, H}); lp.b_i = Tensor::zeros({H});
    lp.w_xf = Tensor::zeros({in, H}); lp.w_hf = Tensor::zeros({H, H}); lp.b_f = Tensor::zeros({H});
    lp.w_xg = Tensor::zeros({in, H}); lp.w_hg = Tensor::zeros({H, H}); lp.b_g = Tensor::zeros({H});
    lp.w_xo = Tensor::zeros({in, H}); lp.w_ho = Tensor::zeros({H, H}); lp.b_o = Tensor::zeros({H});
    p.layers.push_back(std::move(lp));
  }
  p.head_w = Tensor::zeros({H, 1});
  p.head_b = Tensor::zeros({1});
  std::size_t pos = 0;
  for_each_tensor(p, [&](Tensor& t) {
    std::memcpy(t.data(), flat.data() + pos, t.numel() * sizeof(double));
    pos += t.numel();
  });
  return p;
}

std::vector<Tensor> window_steps(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("window must be rank 2, got " + x.shape_str());
  std::vector<Tensor> steps;
  steps.reserve(x.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    Tensor s = Tensor::zeros({1, x.cols()});
    for (std::size_t c = 0; c < x.cols(); ++c) s.at(0, c) = x.at(t, c);
    steps.push_back(std::move(s));
  }
  return steps;
}

std::vector<Tensor> stack_windows(const std::vector<Tensor>& windows) {
  if (windows.empty()) throw ConfigError("empty batch");
  const std::size_t T = windows[0].rows();
  const std::size_t D = windows[0].cols();
  std::vector<Tensor> steps;
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor s = Tensor::zeros({windows.size(), D});
    for (std::size_t b = 0; b < windows.size(); ++b) {
      if (windows[b].rows() != T || windows[b].cols() != D) {
        throw ShapeError("window " + std::to_string(b) + " has shape " +
                         windows[b].shape_str() + ", expected " + windows[0].shape_str());
      }
      for (std::size_t c = 0; c < D; ++c) s.at(b, c) = windows[b].at(t, c);
    }
    steps.push_back(std::move(s));
  }
  return steps;
}

double predict(const LstmParams& p, const LstmConfig& cfg, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != cfg.input_dim) {
    throw ShapeError("window has shape " + x.shape_str() + ", expected Tx" +
                     std::to_string(cfg.input_dim));
  }
  return predict_batch(p, cfg, window_steps(x))[0];
}

std::vector<double> predict_batch(const LstmParams& p, const LstmConfig& cfg,
                                  const std::vector<Tensor>& steps) {
  cfg.validate();
  check_steps(cfg, steps);
  if (p.layers.size() != cfg.num_layers) throw ConfigError("params do not match config");
  const std::size_t B = steps[0].rows();
  const std::size_t H = cfg.hidden_size;
  const std::size_t T = steps.size();
  namespace K = numkit::kernels;

  std::vector<Tensor> inputs = steps;
  Tensor h;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const LstmLayerParams& lp = p.layers[l];
    h = Tensor::zeros({B, H});
    Tensor c = Tensor::zeros({B, H});
    for (std::size_t t = 0; t < T; ++t) {
      try {
        const Tensor& xin = inputs[t];
        const Tensor i = K::sigmoid(K::affine(xin, lp.w_xi, h, lp.w_hi, lp.b_i));
        const Tensor f = K::sigmoid(K::affine(xin, lp.w_xf, h, lp.w_hf, lp.b_f));
        const Tensor g = K::tanh(K::affine(xin, lp.w_xg, h, lp.w_hg, lp.b_g));
        const Tensor o = K::sigmoid(K::affine(xin, lp.w_xo, h, lp.w_ho, lp.b_o));
        Tensor fc = Tensor::zeros({B, H});
        Tensor ig = Tensor::zeros({B, H});
        for (std::size_t k = 0; k < fc.numel(); ++k) fc.at(k) = f.at(k) * c.at(k);
        for (std::size_t k = 0; k < ig.numel(); ++k) ig.at(k) = i.at(k) * g.at(k);
        for (std::size_t k = 0; k < c.numel(); ++k) c.at(k) = fc.at(k) + ig.at(k);
        const Tensor tc = K::tanh(c);
        for (std::size_t k = 0; k < h.numel(); ++k) h.at(k) = o.at(k) * tc.at(k);
        numkit::ensure_finite(h, "lstm step");
        if (l + 1 < cfg.num_layers) inputs[t] = h;
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (layer " + std::to_string(l) + ", step " +
                           std::to_string(t) + ")");
      }
    }
  }

  const Tensor y = K::affine(h, p.head_w, Tensor(), Tensor(), p.head_b);
  numkit::ensure_finite(y, "prediction head");
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) out[b] = y.at(b, 0);
  return out;
}

StagedParams stage_params(Tape& tape, const LstmParams& p) {
  StagedParams sp;
  for (const auto& l : p.layers) {
    StagedParams::Layer sl;
    sl.w_xi = tape.param(l.w_xi); sl.w_hi = tape.param(l.w_hi); sl.b_i = tape.param(l.b_i);
    sl.w_xf = tape.param(l.w_xf); sl.w_hf = tape.param(l.w_hf); sl.b_f = tape.param(l.b_f);
    sl.w_xg = tape.param(l.w_xg); sl.w_hg = tape.param(l.w_hg); sl.b_g = tape.param(l.b_g);
    sl.w_xo = tape.param(l.w_xo); sl.w_ho = tape.param(l.w_ho); sl.b_o = tape.param(l.b_o);
    sp.layers.push_back(sl);
  }
  sp.head_w = tape.param(p.head_w);
  sp.head_b = tape.param(p.head_b);
  return sp;
}

Value forward_batch(Tape& tape, const StagedParams& sp, const LstmConfig& cfg,
                    const std::vector<Tensor>& steps, RunMode mode, RngStream* dropout_rng) {
  cfg.validate();
  check_steps(cfg, steps);
  if (sp.layers.size() != cfg.num_layers) throw ConfigError("staged params do not match config");
  const std::size_t B = steps[0].rows();
  const std::size_t H = cfg.hidden_size;
  const std::size_t T = steps.size();
  const bool use_dropout = mode == RunMode::train && cfg.dropout > 0.0 && cfg.num_layers > 1;
  if (use_dropout && dropout_rng == nullptr) {
    throw ConfigError("train-mode forward with dropout needs an rng for the masks");
  }

  std::vector<Value> inputs;
  inputs.reserve(T);
  for (const Tensor& s : steps) inputs.push_back(tape.constant(s));

  Value h;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const StagedParams::Layer& lp = sp.layers[l];
    h = tape.constant(Tensor::zeros({B, H}));
    Value c = tape.constant(Tensor::zeros({B, H}));
    for (std::size_t t = 0; t < T; ++t) {
      try {
        const Value xin = inputs[t];
        const Value i = tape.sigmoid(tape.affine(xin, lp.w_xi, h, lp.w_hi, lp.b_i));
        const Value f = tape.sigmoid(tape.affine(xin, lp.w_xf, h, lp.w_hf, lp.b_f));
        const Value g = tape.tanh_(tape.affine(xin, lp.w_xg, h, lp.w_hg, lp.b_g));
        const Value o = tape.sigmoid(tape.affine(xin, lp.w_xo, h, lp.w_ho, lp.b_o));
        c = tape.add(tape.mul(f, c), tape.mul(i, g));
        h = tape.mul(o, tape.tanh_(c));
        if (l + 1 < cfg.num_layers) {
          if (use_dropout) {
            const Value mask =
                tape.constant(dropout_mask(B, H, cfg.dropout, *dropout_rng));
            inputs[t] = tape.mul(h, mask);
          } else {
            inputs[t] = h;
          }
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (layer " + std::to_string(l) + ", step " +
                           std::to_string(t) + ")");
      }
    }
  }

  return tape.affine(h, sp.head_w, sp.head_b);
}

Value forward(Tape& tape, const StagedParams& sp, const LstmConfig& cfg, const Tensor& x,
              RunMode mode, RngStream* dropout_rng) {
  if (x.rank() != 2 || x.cols() != cfg.input_dim) {
    throw ShapeError("window has shape " + x.shape_str() + ", expected Tx" +
                     std::to_string(cfg.input_dim));
  }
  return forward_batch(tape, sp, cfg, window_steps(x), mode, dropout_rng);
}

LstmParams collect_gradients(Tape& tape, const StagedParams& sp) {
  LstmParams g;
  for (std::size_t l = 0; l < sp.layers.size(); ++l) {
    const auto& sl = sp.layers[l];
    LstmLayerParams gl;
    gl.w_xi = tape.gradient(sl.w_xi); gl.w_hi = tape.gradient(sl.w_hi); gl.b_i = tape.gradient(sl.b_i);
    gl.w_xf = tape.gradient(sl.w_xf); gl.w_hf = tape.gradient(sl.w_hf); gl.b_f = tape.gradient(sl.b_f);
    gl.w_xg = tape.gradient(sl.w_xg); gl.w_hg = tape.gradient(sl.w_hg); gl.b_g = tape.gradient(sl.b_g);
    gl.w_xo = tape.gradient(sl.w_xo); gl.w_ho = tape.gradient(sl.w_ho); gl.b_o = tape.gradient(sl.b_o);
    g.layers.push_back(std::move(gl));
  }
  g.head_w = tape.gradient(sp.head_w);
  g.head_b = tape.gradient(sp.head_b);
  return g;
}

void save_checkpoint(const LstmConfig& cfg, const LstmParams& p, const std::string& path) {
  cfg.validate();
  const std::vector<double> flat = flatten(p);
  if (flat.size() != param_count(cfg)) {
    throw ConfigError("params do not match config while saving checkpoint");
  }
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = "lstm_checkpoint";
  header["config"] = {{"input_dim", cfg.input_dim},
                      {"hidden_size", cfg.hidden_size},
                      {"num_layers", cfg.num_layers},
                      {"dropout", cfg.dropout},
                      {"seed", cfg.seed}};
  header["param_count"] = flat.size();

  std::string blob = header.dump();
  blob += '\n';
  const std::size_t base = blob.size();
  blob.resize(base + flat.size() * sizeof(double));
  std::memcpy(blob.data() + base, flat.data(), flat.size() * sizeof(double));
  spit_file(path, blob);
}

std::pair<LstmConfig, LstmParams> load_checkpoint(const std::string& path) {
  const std::string blob = slurp_file(path);
  const std::size_t nl = blob.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint missing header line: " + path);
  json header;
  try {
    header = json::parse(blob.substr(0, nl));
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint header in " + path + ": " + e.what());
  }
  if (header.value("kind", "") != "lstm_checkpoint") {
    throw DataError("not an lstm checkpoint: " + path);
  }
  if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format version in " + path);
  }
  LstmConfig cfg;
  const json& jc = header.at("config");
  cfg.input_dim = jc.at("input_dim").get<std::size_t>();
  cfg.hidden_size = jc.at("hidden_size").get<std::size_t>();
  cfg.num_layers = jc.at("num_layers").get<std::size_t>();
  cfg.dropout = jc.at("dropout").get<double>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  cfg.validate();

  const std::size_t count = header.at("param_count").get<std::size_t>();
  if (count != param_count(cfg)) throw DataError("checkpoint count mismatch in " + path);
  const std::size_t expect = (nl + 1) + count * sizeof(double);
  if (blob.size() != expect) {
    throw DataError("checkpoint payload is " + std::to_string(blob.size() - nl - 1) +
                    " bytes, expected " + std::to_string(count * sizeof(double)));
  }
  std::vector<double> flat(count);
  std::memcpy(flat.data(), blob.data() + nl + 1, count * sizeof(double));
  return {cfg, unflatten(cfg, flat)};
}

}  // namespace shapguard::forecaster
