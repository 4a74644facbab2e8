#pragma once

#include <functional>
#include <span>
#include <utility>

#include "ecg/tensor.hpp"

namespace ecg::nn {

enum class Mode { train, infer };

// Stride-1 cross-correlation with zero same-padding.
// input [b, L, c_in], kernels [k, c_in, c_out], bias [c_out] -> [b, L, c_out].
TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernels,
                 const TensorPtr& bias);

struct BatchNormState {
  std::vector<double> running_mean, running_var;
  bool initialized = false;
};

// Per-channel normalization over the (batch, length) axes of [b, L, c].
// Train mode normalizes with batch statistics and updates running stats;
// infer mode uses the stored running statistics.
TensorPtr batch_norm1d(const TensorPtr& input, const TensorPtr& gamma,
                       const TensorPtr& beta, Mode mode, BatchNormState& state,
                       double momentum = 0.9, double epsilon = 1e-5);

TensorPtr relu(const TensorPtr& input);

// [b, L, c1] + [b, L, c2] -> [b, L, c1 + c2] along the channel axis.
TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b);

// [b, L, c] -> [b, floor((L - pool) / stride) + 1, c] windowed mean.
TensorPtr avg_pool1d(const TensorPtr& input, std::size_t pool,
                     std::size_t stride);

// [b, T, c] -> [b, c] mean over the time axis.
TensorPtr mean_over_time(const TensorPtr& input);

struct GruWeights {
  TensorPtr wz, uz, bz;  // update gate
  TensorPtr wr, ur, br;  // reset gate
  TensorPtr wh, uh, bh;  // candidate
};

// z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
// c = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * c.
// inputs [b, T, d], h0 [b, units] -> every state [b, T, units].
TensorPtr gru_forward(const TensorPtr& inputs, const GruWeights& w,
                      const TensorPtr& h0);

// Linear per-timestep score e_t = w . h_t + b, softmax over t, weighted
// state sum. weights_out, when given, receives alpha as [b * T].
TensorPtr attention_pool(const TensorPtr& states, const TensorPtr& score_w,
                         const TensorPtr& score_b,
                         std::vector<double>* weights_out = nullptr);

// [b, d] x [d, out] + bias -> [b, out].
TensorPtr dense(const TensorPtr& input, const TensorPtr& weight,
                const TensorPtr& bias);

// Row-wise stable softmax, [b, k] -> [b, k].
TensorPtr softmax(const TensorPtr& logits);

// Fused softmax + mean negative log likelihood; returns (probs, loss).
// Gradient w.r.t. logits is (probs - targets) / b.
std::pair<TensorPtr, TensorPtr> softmax_cross_entropy(
    const TensorPtr& logits, const std::vector<double>& one_hot_targets);

// Mean negative log likelihood of already-normalized probabilities.
TensorPtr nll_from_probs(const TensorPtr& probs,
                         const std::vector<double>& one_hot_targets);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double factor);
TensorPtr sum_all(const TensorPtr& a);

// Train mode zeroes each element with probability rate and scales the
// survivors by 1 / (1 - rate); the mask is a pure function of the seed.
TensorPtr dropout(const TensorPtr& input, double rate, Mode mode,
                  std::uint64_t seed);

struct Parameter {
  std::string name;
  TensorPtr tensor;
  std::vector<double> adam_m, adam_v;
  long step_count = 0;

  Parameter() = default;
  Parameter(std::string n, TensorPtr t)
      : name(std::move(n)), tensor(std::move(t)) {
    adam_m.assign(tensor->size(), 0.0);
    adam_v.assign(tensor->size(), 0.0);
  }
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update from the gradients held in each tensor.
void adam_step(std::span<Parameter> params, const AdamConfig& cfg);

// Central finite differences with h = 1e-5 * max(1, |x|); returns the max
// over checked coordinates of |analytic - numeric| / max(1, |numeric|).
// loss_fn must rebuild the scalar loss from the parameters' current values.
double gradient_check(const std::function<TensorPtr()>& loss_fn,
                      std::span<const TensorPtr> params);

}  // namespace ecg::nn
