#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "beacon/field.hpp"

namespace beacon {

// Hand-derived reverse-mode MLP core. Hidden layers use leaky-ReLU
// (slope 0.01), the output layer is linear. Gradients are audited against
// central finite differences by grad_check.

struct Layer {
  int in = 0, out = 0;
  std::vector<double> w;  // row-major, out x in
  std::vector<double> b;  // out
};

struct Mlp {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }
};

/// Hidden weights ~ N(0, 1/fan_in); if zero_last the final layer is all
/// zeros so the network outputs exactly zero at initialization.
Mlp mlp_init(uint64_t seed, const std::vector<int>& sizes, bool zero_last);

/// Activations cached by the forward pass for the backward pass.
/// act[0] is the input; act[i] the output of layer i-1 (post-activation).
struct MlpCache {
  std::vector<std::vector<double>> act;
};

/// Forward pass. `cache` may be null when no backward pass is needed.
std::vector<double> mlp_forward(const Mlp& net, const double* input, int len, MlpCache* cache);

/// Backward pass for the cached forward evaluation. Overwrites `grad`
/// (same shape as net) with this call's parameter gradients and returns
/// d loss/d input. Callers accumulating over a batch sum the per-call
/// results in a fixed order.
std::vector<double> mlp_backward(const Mlp& net, const MlpCache& cache,
                                 const std::vector<double>& d_out, Mlp& grad);

/// Zero-valued clone used as a gradient accumulator.
Mlp mlp_zeros_like(const Mlp& net);

// Flattening order (checkpoint contract): layer-major, weights before
// biases, matrices row-major.
size_t mlp_param_count(const Mlp& net);
void mlp_flatten(const Mlp& net, double* dst);
void mlp_unflatten(Mlp& net, const double* src);

/// Adam with bias correction.
struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Standard Adam update in place; state.t is incremented. Throws on
/// non-finite gradients.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr);

/// Max over coordinates of |g_fd - g| / (|g_fd| + |g| + 1e-12), central
/// differences at step h.
double grad_check(const std::function<double(const std::vector<double>&)>& loss,
                  const std::vector<double>& params, const std::vector<double>& analytic_grad,
                  double h);

}  // namespace beacon
