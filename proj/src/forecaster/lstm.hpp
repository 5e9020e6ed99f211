#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "common/rng.hpp"
#include "numkit/tape.hpp"
#include "numkit/tensor.hpp"

namespace shapguard::forecaster {

struct LstmConfig {
  std::size_t input_dim = 1;    // D
  std::size_t hidden_size = 8;  // H
  std::size_t num_layers = 1;   // L
  double dropout = 0.0;         // applied between layers only, so inert for L=1
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gate parameters for one layer. Input weights are (in x H) where `in`
/// is D for layer 0 and H above; recurrent weights are (H x H); biases
/// are length-H vectors broadcast over the batch rows.
struct LstmLayerParams {
  numkit::Tensor w_xi, w_hi, b_i;  // input gate
  numkit::Tensor w_xf, w_hf, b_f;  // forget gate
  numkit::Tensor w_xg, w_hg, b_g;  // cell candidate
  numkit::Tensor w_xo, w_ho, b_o;  // output gate
};

struct LstmParams {
  std::vector<LstmLayerParams> layers;
  numkit::Tensor head_w;  // H x 1
  numkit::Tensor head_b;  // scalar
};

/// Uniform(-1/sqrt(H), 1/sqrt(H)) for every tensor, drawn in a fixed
/// documented order; the forget bias is then pinned to 1.0.
LstmParams init_params(const LstmConfig& cfg);

std::size_t param_count(const LstmConfig& cfg);

/// Visits every parameter tensor in the canonical order (per layer:
/// gates i,f,g,o each as w_x, w_h, b; then head w, head b). flatten,
/// unflatten, checkpointing and the trainer all share this order.
void for_each_tensor(LstmParams& p, const std::function<void(numkit::Tensor&)>& fn);
void for_each_tensor(const LstmParams& p, const std::function<void(const numkit::Tensor&)>& fn);

std::vector<double> flatten(const LstmParams& p);
LstmParams unflatten(const LstmConfig& cfg, const std::vector<double>& flat);

enum class RunMode { train, eval };

/// Untracked forward for a single T x D window. Bitwise identical to
/// the tape path in eval mode (same kernels, same order).
double predict(const LstmParams& p, const LstmConfig& cfg, const numkit::Tensor& x);

/// Untracked batched forward. `steps` holds T tensors of shape B x D
/// (time-major). Row b of the result equals predict on window b.
std::vector<double> predict_batch(const LstmParams& p, const LstmConfig& cfg,
                                  const std::vector<numkit::Tensor>& steps);

/// Converts a row-major T x D window into time-major steps of 1 x D;
/// stack_windows interleaves B windows into T tensors of B x D.
std::vector<numkit::Tensor> window_steps(const numkit::Tensor& x);
std::vector<numkit::Tensor> stack_windows(const std::vector<numkit::Tensor>& windows);

/// Tape handles for every parameter tensor, used by training graphs.
struct StagedParams {
  struct Layer {
    numkit::Value w_xi, w_hi, b_i;
    numkit::Value w_xf, w_hf, b_f;
    numkit::Value w_xg, w_hg, b_g;
    numkit::Value w_xo, w_ho, b_o;
  };
  std::vector<Layer> layers;
  numkit::Value head_w, head_b;
};

StagedParams stage_params(numkit::Tape& tape, const LstmParams& p);

/// Tracked batched forward over staged params. Returns the B x 1
/// prediction node. In train mode with dropout > 0 and L > 1, inverted
/// dropout masks are drawn from `dropout_rng` between layers.
numkit::Value forward_batch(numkit::Tape& tape, const StagedParams& sp, const LstmConfig& cfg,
                            const std::vector<numkit::Tensor>& steps, RunMode mode,
                            RngStream* dropout_rng = nullptr);

/// Tracked forward for one window; 1 x 1 result node.
numkit::Value forward(numkit::Tape& tape, const StagedParams& sp, const LstmConfig& cfg,
                      const numkit::Tensor& x, RunMode mode, RngStream* dropout_rng = nullptr);

/// Parameter-shaped gradients after tape.backward.
LstmParams collect_gradients(numkit::Tape& tape, const StagedParams& sp);

/// Checkpoint: one JSON header line (config, format_version, count)
/// followed by the flattened parameters as little-endian doubles.
/// load(save(p)) reproduces p bit-exactly.
void save_checkpoint(const LstmConfig& cfg, const LstmParams& p, const std::string& path);
std::pair<LstmConfig, LstmParams> load_checkpoint(const std::string& path);

}  // namespace shapguard::forecaster
