#pragma once

#include <cstdint>
#include <vector>

#include "beacon/field.hpp"

namespace beacon {

class ThreadPool;

/// Synthetic layered log-normal permeability: per-row base level plus a
/// box-smoothed Gaussian perturbation, exponentiated.
struct PermGenParams {
  double base_sigma = 1.0;  // std of the per-row log level
  double bump_sigma = 0.5;  // std of the white-noise perturbation before smoothing
  int smooth_radius = 2;    // box-smoothing radius for the perturbation
};

/// Cell-face velocities on a rows x cols cell grid:
/// vx has shape rows x (cols+1), vy has shape (rows+1) x cols.
/// Boundary faces carry zero velocity (no-flow domain).
struct Velocity {
  Field2D vx;
  Field2D vy;
};

/// Saturation ensemble at twin step `step`, each member paired 1:1 with the
/// permeability field that transports it.
struct Ensemble {
  std::vector<Field2D> sat;
  std::vector<Field2D> perm;
  int step = 0;

  int size() const { return static_cast<int>(sat.size()); }
};

struct SimParams {
  int injection_row = 16;
  int injection_col = 10;
  double injection_rate = 1.2;  // saturation volume added per unit time at the injection cell
  double dt = 0.8;              // ~2x CFL headroom at the default rate and permeability spread
  int steps_per_interval = 50;
  double noise_sigma = 0.02;
  // The seismic surrogate is deliberately coarse and noisy (SNR below 1):
  // it hints at the large-scale plume only, so borehole columns still carry
  // information worth designing for.
  int seismic_blur_radius = 6;
  double seismic_sigma = 0.4;
};

struct DarcyResult {
  Field2D pressure;
  Velocity vel;
  int iterations = 0;
  double residual = 0.0;
};

Field2D sample_permeability(uint64_t seed, int rows, int cols, const PermGenParams& gen);

/// Solve div(k grad p) = -source with no-flow boundaries on a 5-point
/// stencil; the cell (0,0) is pinned to zero pressure, which also absorbs
/// any source imbalance. CG with Jacobi preconditioning.
DarcyResult solve_darcy(const Field2D& perm, const Field2D& source);

/// One monitoring interval of explicit first-order upwind transport in
/// conservative form with the injection source, steps_per_interval substeps.
/// Output clamped to [0,1] at the end.
Field2D advance_plume(const Field2D& sat, const Velocity& vel, const SimParams& params);

/// Build the balanced source field for the pressure solve: injection at the
/// configured cell compensated by a uniform distributed sink.
Field2D injection_source(int rows, int cols, const SimParams& params);

/// Darcy solve + transport for one member.
Field2D advance_member(const Field2D& sat, const Field2D& perm, const SimParams& params);

/// Advance every member one monitoring interval with its paired
/// permeability; step is incremented. Members may run in parallel.
Ensemble forecast_ensemble(const Ensemble& prior, const SimParams& params, ThreadPool* pool = nullptr);

/// y = sat + iid Gaussian(0, sigma^2); not clamped.
Field2D corrupt_observation(const Field2D& sat, double noise_sigma, uint64_t seed);

/// Window-normalized box blur of the saturation plus Gaussian noise; the
/// stand-in for an imaged-seismic channel.
Field2D seismic_surrogate(const Field2D& sat, const SimParams& params, uint64_t seed);

}  // namespace beacon
