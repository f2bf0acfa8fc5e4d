#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beacon/field.hpp"

namespace beacon {

// Validation harnesses backed by the analytic oracles. The gradcheck and
// oracle CLI subcommands and the acceptance suite all run these.

struct AuditCheck {
  std::string name;
  double value = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Flow correctness battery: round-trip invertibility, analytic vs
/// numerical log-determinant, and finite-difference audits of every
/// gradient path (MLP, flow parameters, conditioning inputs, design toy).
std::vector<AuditCheck> gradient_audit(uint64_t seed);

struct PosteriorValidation {
  double mean_rel_err = 0.0;     // ||mu_flow - mu|| / ||mu||
  double max_std_rel_err = 0.0;  // max_i |sd_flow_i - sd_i| / sd_i
};

/// Train a conditional flow on a d=8 linear-Gaussian problem with a fixed
/// column mask and compare its posterior samples against the conjugate
/// closed form.
PosteriorValidation validate_flow_posterior(uint64_t seed);

struct OrderingTrial {
  double eig_low_noise = 0.0;
  double eig_high_noise = 0.0;
  double w_low = 0.0;   // trained density on the low-noise candidate
  double w_high = 0.0;
  bool ranked_optimal_first = false;
};

/// Two-candidate design toy: joint training should put more density on the
/// candidate the analytic EIG prefers (the low-noise column).
OrderingTrial design_ordering_trial(uint64_t seed);

}  // namespace beacon
