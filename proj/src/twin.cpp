#include "beacon/twin.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "beacon/pool.hpp"
#include "beacon/rng.hpp"

namespace beacon {

namespace {

// Seed-stream tags; every random draw in a run derives from
// (master seed, tag, iteration, ...), so resumed runs replay identically.
enum StreamTag : uint64_t {
  kTagGroundTruthPerm = 1,
  kTagMemberPerm = 2,
  kTagFlowInit = 3,
  kTagPairs = 4,
  kTagTrain = 5,
  kTagFieldObs = 6,
  kTagFieldSeismic = 7,
  kTagPosterior = 8,
  kTagRandomWell = 9,
};

Field2D initial_plume(const TwinConfig& cfg) {
  // Common injection blob shared by the truth and every prior member.
  constexpr double kAmp = 0.8;
  constexpr double kRadius = 1.5;
  Field2D sat(cfg.rows, cfg.cols);
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) {
      double dr = r - cfg.sim.injection_row;
      double dc = c - cfg.sim.injection_col;
      sat.at(r, c) = kAmp * std::exp(-(dr * dr + dc * dc) / (2.0 * kRadius * kRadius));
    }
  clamp01(sat);
  return sat;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Dequantization jitter added to training targets. Saturations are exactly
// zero on most of the grid, and a flow trained on exactly-degenerate
// coordinates diverges (optimal scale is infinite); a 1% variance floor
// bounds the optimum at log_scale ~ 4.6 and keeps training stable. Applied
// only while flow training is active so a frozen run reproduces the plain
// identity-flow loss.
constexpr double kTrainJitter = 0.01;

std::vector<int> shuffled_indices(int n, uint64_t seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace

std::string twin_config_canon(const TwinConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "rows = " << cfg.rows << "\n"
     << "cols = " << cfg.cols << "\n"
     << "ensemble = " << cfg.ensemble << "\n"
     << "iterations = " << cfg.iterations << "\n"
     << "budget = " << cfg.budget << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "batch = " << cfg.batch << "\n"
     << "lr_theta = " << cfg.lr_theta << "\n"
     << "lr_design = " << cfg.lr_design << "\n"
     << "noise_sigma = " << cfg.sim.noise_sigma << "\n"
     << "injection_row = " << cfg.sim.injection_row << "\n"
     << "injection_col = " << cfg.sim.injection_col << "\n"
     << "injection_rate = " << cfg.sim.injection_rate << "\n"
     << "dt = " << cfg.sim.dt << "\n"
     << "steps_per_interval = " << cfg.sim.steps_per_interval << "\n"
     << "seismic_blur_radius = " << cfg.sim.seismic_blur_radius << "\n"
     << "seismic_sigma = " << cfg.sim.seismic_sigma << "\n"
     << "perm_base_sigma = " << cfg.perm_gen.base_sigma << "\n"
     << "perm_bump_sigma = " << cfg.perm_gen.bump_sigma << "\n"
     << "perm_smooth_radius = " << cfg.perm_gen.smooth_radius << "\n"
     << "couplings = " << cfg.n_couplings << "\n"
     << "hidden_width = " << cfg.hidden << "\n"
     << "embed_dim = " << cfg.embed << "\n";
  return os.str();
}

std::string twin_config_digest(const TwinConfig& cfg) {
  uint64_t h = fnv1a64(twin_config_canon(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

TwinState twin_init(const TwinConfig& cfg) {
  if (cfg.ensemble < 1 || cfg.iterations < 0 || cfg.budget < 1)
    throw NumericError("twin_init: counts must be >= 1");
  TwinState st;
  st.k = 0;
  st.gt_perm = sample_permeability(seed_mix(cfg.seed, kTagGroundTruthPerm), cfg.rows, cfg.cols,
                                   cfg.perm_gen);
  st.gt_sat = initial_plume(cfg);
  st.prior.step = 0;
  st.prior.sat.assign(cfg.ensemble, st.gt_sat);
  st.prior.perm.reserve(cfg.ensemble);
  for (int i = 0; i < cfg.ensemble; ++i)
    st.prior.perm.push_back(
        sample_permeability(seed_mix(cfg.seed, kTagMemberPerm, i), cfg.rows, cfg.cols, cfg.perm_gen));
  st.design.logits.assign(cfg.cols, 0.0);
  st.design.budget = cfg.budget;
  FlowConfig fc;
  fc.rows = cfg.rows;
  fc.cols = cfg.cols;
  fc.n_couplings = cfg.n_couplings;
  fc.hidden = cfg.hidden;
  fc.embed = cfg.embed;
  st.flow = flow_init(seed_mix(cfg.seed, kTagFlowInit), fc);
  return st;
}

std::vector<TrainingPair> make_training_set(const Ensemble& forecast, const TwinConfig& cfg,
                                            uint64_t seed) {
  if (forecast.size() == 0) throw NumericError("make_training_set: empty forecast");
  std::vector<TrainingPair> pairs(forecast.size());
  for (int i = 0; i < forecast.size(); ++i) {
    pairs[i].x = forecast.sat[i];
    pairs[i].y_full = corrupt_observation(forecast.sat[i], cfg.sim.noise_sigma, seed_mix(seed, 0, i));
    pairs[i].seismic = seismic_surrogate(forecast.sat[i], cfg.sim, seed_mix(seed, 1, i));
  }
  return pairs;
}

double joint_train(const std::vector<TrainingPair>& pairs, Flow& flow, WellDesign& design,
                   AdamState& opt_theta, AdamState& opt_design, const TwinConfig& cfg,
                   uint64_t seed, ThreadPool* pool) {
  if (pairs.empty()) throw NumericError("joint_train: empty training set");
  if (cfg.epochs < 1 || cfg.batch < 1) throw NumericError("joint_train: epochs/batch must be >= 1");
  const int n = static_cast<int>(pairs.size());

  std::vector<double> theta(flow_param_count(flow));
  flow_flatten(flow, theta.data());

  InclusionProbs probs = inclusion_probs(design);
  FlowWorkspace ws;
  FlowBatchResult batch;
  std::vector<Conditioning> conds(std::min(cfg.batch, n));
  std::vector<Mask> masks(conds.size());
  std::vector<Field2D> xjit(conds.size());
  std::vector<const Field2D*> xs;
  std::vector<const Conditioning*> cond_ptrs;
  std::vector<double> logit_grad(design.logits.size());

  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(n, seed_mix(seed, 0xE0u, epoch));
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int bsize = std::min(cfg.batch, n - start);
      xs.clear();
      cond_ptrs.clear();
      for (int b = 0; b < bsize; ++b) {
        int idx = order[start + b];
        const TrainingPair& pair = pairs[idx];
        masks[b] = sample_mask(probs, design.drilled, seed_mix(seed, 0x3Au, epoch, idx));
        conds[b] = apply_mask(masks[b], pair.y_full, pair.seismic ? &*pair.seismic : nullptr);
        if (cfg.lr_theta > 0.0) {
          xjit[b] = pair.x;
          Rng jitter_rng(seed_mix(seed, 0x4Eu, epoch, idx));
          for (double& v : xjit[b].data) v += kTrainJitter * jitter_rng.normal();
          xs.push_back(&xjit[b]);
        } else {
          xs.push_back(&pair.x);
        }
        cond_ptrs.push_back(&conds[b]);
      }
      loss_gradients(flow, xs, cond_ptrs, batch, ws, pool);
      if (!std::isfinite(batch.mean_loss))
        throw NumericError("joint_train: non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(start / cfg.batch));
      loss_sum += batch.mean_loss * bsize;

      if (cfg.lr_theta > 0.0) {
        clip_gradient_norm(batch.param_grads);
        adam_step(opt_theta, theta, batch.param_grads, cfg.lr_theta);
        for (size_t j = theta.size() - flow.log_scale.size(); j < theta.size(); ++j)
          theta[j] = std::clamp(theta[j], -kLogScaleClamp, kLogScaleClamp);
        flow_unflatten(flow, theta.data());
      }
      if (cfg.lr_design > 0.0) {
        std::fill(logit_grad.begin(), logit_grad.end(), 0.0);
        for (int b = 0; b < bsize; ++b) {
          int idx = order[start + b];
          std::vector<double> g =
              design_gradient(batch.cond_grads[b], pairs[idx].y_full, probs, masks[b], design);
          for (size_t j = 0; j < g.size(); ++j) logit_grad[j] += g[j];
        }
        adam_step(opt_design, design.logits, logit_grad, cfg.lr_design);
        probs = inclusion_probs(design);
      }
    }
    epoch_loss = loss_sum / n;
  }
  return epoch_loss;
}

void run_iteration(TwinState& state, const TwinConfig& cfg, bool random_placement,
                   ThreadPool* pool) {
  const int k = state.k + 1;
  const char* stage = "forecast";
  try {
    Ensemble forecast = forecast_ensemble(state.prior, cfg.sim, pool);
    state.gt_sat = advance_member(state.gt_sat, state.gt_perm, cfg.sim);

    stage = "training-set";
    std::vector<TrainingPair> pairs = make_training_set(forecast, cfg, seed_mix(cfg.seed, kTagPairs, k));

    stage = "joint-train";
    // Design logits restart from uniform each iteration; theta warm-starts.
    std::fill(state.design.logits.begin(), state.design.logits.end(), 0.0);
    state.opt_design = AdamState{};
    TwinConfig train_cfg = cfg;
    if (random_placement) train_cfg.lr_design = 0.0;
    double final_loss = joint_train(pairs, state.flow, state.design, state.opt_theta,
                                    state.opt_design, train_cfg, seed_mix(cfg.seed, kTagTrain, k), pool);

    stage = "well-selection";
    int first_drilled = -1;
    for (int j = 0; j < cfg.budget; ++j) {
      int col;
      if (random_placement) {
        std::vector<int> undrilled;
        std::vector<uint8_t> taken(cfg.cols, 0);
        for (int c : state.design.drilled) taken[c] = 1;
        for (int c = 0; c < cfg.cols; ++c)
          if (!taken[c]) undrilled.push_back(c);
        if (undrilled.empty()) throw NumericError("no undrilled columns left");
        Rng rng(seed_mix(cfg.seed, kTagRandomWell, k, j));
        col = undrilled[rng.below(undrilled.size())];
      } else {
        col = select_well(state.design);
      }
      state.design.drilled.push_back(col);
      if (first_drilled < 0) first_drilled = col;
    }

    stage = "field-observation";
    Field2D y_obs = corrupt_observation(state.gt_sat, cfg.sim.noise_sigma,
                                        seed_mix(cfg.seed, kTagFieldObs, k));
    Mask drilled_mask;
    drilled_mask.columns.assign(cfg.cols, 0);
    for (int c : state.design.drilled) drilled_mask.columns[c] = 1;
    Field2D seismic =
        seismic_surrogate(state.gt_sat, cfg.sim, seed_mix(cfg.seed, kTagFieldSeismic, k));
    Conditioning cond = apply_mask(drilled_mask, y_obs, &seismic);

    stage = "posterior-sampling";
    std::vector<Field2D> posterior = sample_posterior(
        state.flow, cond, cfg.ensemble, seed_mix(cfg.seed, kTagPosterior, k), true, pool);

    stage = "metrics";
    EnsembleStats stats = ensemble_stats(posterior);
    IterationMetrics metrics;
    metrics.k = k;
    metrics.rmse = rmse(stats.mean, state.gt_sat);
    metrics.mean_posterior_std = stats.mean_std;
    metrics.drilled_column = first_drilled;
    metrics.final_train_loss = final_loss;

    // Posterior samples become the next prior, re-paired with the same
    // permeability list.
    state.prior.sat = std::move(posterior);
    state.prior.step = k;
    state.history.push_back(metrics);
    state.k = k;
  } catch (const std::exception& e) {
    throw NumericError("iteration " + std::to_string(k) + " [" + stage + "]: " + e.what());
  }
}

Report make_report(const TwinState& state, const TwinConfig& cfg, bool random_placement) {
  Report report;
  report.rows = state.history;
  report.method = random_placement ? "random" : "beacon";
  report.seed = cfg.seed;
  report.config_digest = twin_config_digest(cfg);
  report.final_density = softmax(state.design.logits);
  report.drilled = state.design.drilled;
  return report;
}

Report resume_experiment(TwinState& state, const TwinConfig& cfg, bool random_placement,
                         ThreadPool* pool) {
  std::unique_ptr<ThreadPool> owned;
  if (!pool) {
    int threads = cfg.deterministic ? 1 : cfg.threads;
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    owned = std::make_unique<ThreadPool>(threads);
    pool = owned.get();
  }
  while (state.k < cfg.iterations) run_iteration(state, cfg, random_placement, pool);
  return make_report(state, cfg, random_placement);
}

Report run_experiment(const TwinConfig& cfg, bool random_placement, TwinState* final_state,
                      ThreadPool* pool) {
  TwinState state = twin_init(cfg);
  Report report = resume_experiment(state, cfg, random_placement, pool);
  if (final_state) *final_state = std::move(state);
  return report;
}

Report run_baseline(const TwinConfig& cfg) { return run_experiment(cfg, true); }

}  // namespace beacon
