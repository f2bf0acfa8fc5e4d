#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "beacon/field.hpp"
#include "beacon/nn.hpp"

namespace beacon {

class ThreadPool;

// Conditional normalizing flow over flattened rows x cols grids: K additive
// coupling layers alternating between the left and right column blocks of
// the grid, each shifted by an MLP of [other block, conditioning embedding],
// followed by a diagonal exp(log_scale) output scaling. The couplings have
// unit Jacobian, so log|det J| = sum(log_scale) exactly, and the inverse is
// algebraic.
//
// The split is spatial (left/right) rather than an even/odd checkerboard on
// purpose: with interleaved halves each cell is predicted almost perfectly
// from its immediate neighbors, the likelihood gains nothing from the
// observation channels, and the design gradient starves. Separated blocks
// keep that shortcut confined to the seam, so conditioning carries the
// plume-extent information.

struct FlowConfig {
  int rows = 32;
  int cols = 32;
  int n_couplings = 6;
  int hidden = 128;
  int embed = 64;
};

/// Conditioning channels fed to the shared embedding net: the masked noisy
/// observation, the binary mask itself (so "observed zero" and "unobserved"
/// stay distinguishable), and an optional seismic channel (zeros if absent).
struct Conditioning {
  Field2D masked_obs;
  Field2D mask;
  std::optional<Field2D> seismic;
};

struct Flow {
  FlowConfig cfg;
  std::vector<Mlp> couplings;
  Mlp conditioner;
  std::vector<double> log_scale;

  // Derived index split (left/right column blocks), rebuilt by flow_init
  // (not serialized).
  std::vector<int> split_a, split_b;

  int dim() const { return cfg.rows * cfg.cols; }
};

/// Couplings are zero-initialized in their last layer, so the freshly
/// initialized flow is exactly the identity map with zero log-determinant.
Flow flow_init(uint64_t seed, const FlowConfig& cfg);

/// Training-side projection bound for log_scale. Grid cells that never vary
/// (saturation exactly zero across the training set) push log_scale toward
/// infinity, after which any residual is amplified by exp(log_scale) and
/// the loss explodes; projecting back to [-6, 6] after each optimizer step
/// keeps those cells harmless without touching coordinates that carry
/// signal (their optimum sits well inside the bound).
inline constexpr double kLogScaleClamp = 6.0;

/// Global-norm gradient clip used by the training loops. As log_scale
/// grows, occasional mask/jitter realizations produce loss spikes whose
/// gradients (norm 1e3-1e4 against a healthy 30-80) destabilize Adam;
/// clipping restores the step size exactly when that happens.
inline constexpr double kGradClipNorm = 100.0;

/// Scale grads in place to kGradClipNorm when their norm exceeds it.
void clip_gradient_norm(std::vector<double>& grads);

// Parameter flattening (checkpoint contract): couplings in order, then the
// conditioner, then log_scale; MLPs in diff_nn order.
size_t flow_param_count(const Flow& flow);
void flow_flatten(const Flow& flow, double* dst);
void flow_unflatten(Flow& flow, const double* src);

std::vector<double> embed_condition(const Flow& flow, const Conditioning& cond);

/// Intermediates cached by flow_forward for the backward pass.
struct FlowCache {
  std::vector<double> cond_in;
  MlpCache cond_cache;
  std::vector<double> embedding;
  std::vector<std::vector<double>> coupling_in;
  std::vector<MlpCache> coupling_caches;
  std::vector<double> u;  // pre-scaling vector
  std::vector<double> z;
};

/// z = f(x; cond) and the exact log|det J|.
void flow_forward(const Flow& flow, const double* x, const Conditioning& cond, FlowCache& cache,
                  std::vector<double>& z, double& logdet);
std::pair<std::vector<double>, double> flow_forward(const Flow& flow, const Field2D& x,
                                                    const Conditioning& cond);

/// Exact inverse; output is NOT clamped to [0,1].
Field2D flow_inverse(const Flow& flow, const std::vector<double>& z, const Conditioning& cond);

/// Per-sample loss 0.5*||z||^2 - log|det J|.
double nll_loss(const Flow& flow, const Field2D& x, const Conditioning& cond);

/// Gradients of the per-sample loss w.r.t. the conditioning inputs; the
/// design optimization consumes these. The seismic channel is not designed,
/// so its gradient is dropped.
struct CondGrad {
  Field2D d_masked_obs;
  Field2D d_mask;
};

/// Backward pass for nll_loss from a cached forward evaluation. Overwrites
/// `grad` and `cond_grad`; returns d loss/d x.
std::vector<double> flow_backward_nll(const Flow& flow, const FlowCache& cache, Flow& grad,
                                      CondGrad& cond_grad);

struct FlowBatchResult {
  std::vector<double> param_grads;   // d(mean loss)/d theta, flattening order
  std::vector<CondGrad> cond_grads;  // d(mean loss)/d conditioning, per sample
  double mean_loss = 0.0;
};

/// Reusable buffers for batch gradient evaluation.
struct FlowWorkspace {
  std::vector<Flow> slot_grads;
  std::vector<FlowCache> slot_caches;
  std::vector<double> slot_loss;
  std::vector<std::vector<double>> partials;
};

/// Mean-loss gradients over a batch. Samples may be evaluated in parallel;
/// the reduction order is fixed, so results do not depend on scheduling.
void loss_gradients(const Flow& flow, const std::vector<const Field2D*>& xs,
                    const std::vector<const Conditioning*>& conds, FlowBatchResult& out,
                    FlowWorkspace& ws, ThreadPool* pool = nullptr);

/// Draw n posterior samples: z ~ N(0, I) inverted through the flow, each
/// from its own seed-derived stream. Clamps to [0,1] unless raw.
std::vector<Field2D> sample_posterior(const Flow& flow, const Conditioning& cond, int n,
                                      uint64_t seed, bool clamp = true, ThreadPool* pool = nullptr);

}  // namespace beacon
