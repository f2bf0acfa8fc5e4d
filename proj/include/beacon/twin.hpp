#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beacon/design.hpp"
#include "beacon/flow.hpp"
#include "beacon/nn.hpp"
#include "beacon/oracle.hpp"
#include "beacon/pair.hpp"
#include "beacon/sim.hpp"

namespace beacon {

// Digital-twin loop: forecast the prior ensemble, jointly train the flow and
// the well density on corrupted forecasts, drill the best column, observe
// the ground truth at the drilled wells, and let the amortized posterior
// become the next prior.

struct TwinConfig {
  int rows = 32;
  int cols = 32;
  int ensemble = 64;
  int iterations = 4;  // one well drilled per iteration
  int budget = 1;      // new wells per sampled training mask
  int epochs = 200;
  int batch = 16;
  double lr_theta = 1e-3;
  double lr_design = 1e-2;
  SimParams sim;  // includes the observation noise sigma
  PermGenParams perm_gen;
  int n_couplings = 6;
  int hidden = 128;
  int embed = 64;
  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
  bool deterministic = false;
};

struct IterationMetrics {
  int k = 0;
  double rmse = 0.0;
  double mean_posterior_std = 0.0;
  int drilled_column = -1;
  double final_train_loss = 0.0;
};

struct Report {
  std::vector<IterationMetrics> rows;
  std::string method;  // "beacon" | "random"
  uint64_t seed = 0;
  std::string config_digest;
  std::vector<double> final_density;
  std::vector<int> drilled;
};

struct TwinState {
  int k = 0;
  Ensemble prior;
  WellDesign design;
  Flow flow;
  AdamState opt_theta;
  AdamState opt_design;
  Field2D gt_sat;
  Field2D gt_perm;
  std::vector<IterationMetrics> history;
};

/// Canonical key=value listing of the structural config (used for the
/// config echo and its digest).
std::string twin_config_canon(const TwinConfig& cfg);
std::string twin_config_digest(const TwinConfig& cfg);

/// Ground truth and every prior member start from the same injection blob;
/// permeabilities are independent draws, the truth's from a held-out stream.
TwinState twin_init(const TwinConfig& cfg);

/// Fully sampled observations and seismic channels for each forecast member.
std::vector<TrainingPair> make_training_set(const Ensemble& forecast, const TwinConfig& cfg,
                                            uint64_t seed);

/// The joint maximum-likelihood + design loop: per epoch, shuffle pairs into
/// batches, sample a fresh mask per sample, and update flow parameters and
/// design logits with Adam. Returns the final mean epoch loss. With a zero
/// learning rate the corresponding update is skipped entirely.
double joint_train(const std::vector<TrainingPair>& pairs, Flow& flow, WellDesign& design,
                   AdamState& opt_theta, AdamState& opt_design, const TwinConfig& cfg,
                   uint64_t seed, ThreadPool* pool = nullptr);

/// One twin iteration; with random_placement the drilled column is a seeded
/// uniform choice among undrilled columns and the design logits are frozen.
void run_iteration(TwinState& state, const TwinConfig& cfg, bool random_placement,
                   ThreadPool* pool = nullptr);

Report run_experiment(const TwinConfig& cfg, bool random_placement = false,
                      TwinState* final_state = nullptr, ThreadPool* pool = nullptr);
Report run_baseline(const TwinConfig& cfg);

/// Continue a restored state up to cfg.iterations (used by checkpoint resume).
Report resume_experiment(TwinState& state, const TwinConfig& cfg, bool random_placement,
                         ThreadPool* pool = nullptr);

Report make_report(const TwinState& state, const TwinConfig& cfg, bool random_placement);

}  // namespace beacon
