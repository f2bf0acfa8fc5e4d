#pragma once

#include <cstdint>
#include <vector>

#include "beacon/design.hpp"
#include "beacon/field.hpp"
#include "beacon/pair.hpp"

namespace beacon {

double rmse(const Field2D& estimate, const Field2D& truth);

struct EnsembleStats {
  Field2D mean;
  Field2D std;      // unbiased, N-1
  double mean_std;  // grid average of std
};

EnsembleStats ensemble_stats(const std::vector<Field2D>& members);

// Small dense helpers on row-major Field2D matrices; oracle scale only.
Field2D mat_mul(const Field2D& a, const Field2D& b);
Field2D mat_transpose(const Field2D& a);
std::vector<double> mat_vec(const Field2D& a, const std::vector<double>& x);
/// Lower-triangular Cholesky factor; throws NumericError when not SPD.
Field2D cholesky(const Field2D& spd);
std::vector<double> chol_solve(const Field2D& chol_lower, std::vector<double> b);
Field2D chol_inverse(const Field2D& chol_lower);
double chol_logdet(const Field2D& chol_lower);

/// Closed-form validation model: y = A x + noise, x ~ N(mu0, sigma0),
/// noise ~ N(0, noise_var I).
struct LinGaussModel {
  Field2D a;                 // m x d forward matrix
  std::vector<double> mu0;   // d
  Field2D sigma0;            // d x d SPD prior covariance
  double noise_var = 1.0;
};

struct GaussPosterior {
  std::vector<double> mean;
  Field2D cov;
};

/// Conjugate update: cov = (sigma0^-1 + A^T A / noise_var)^-1,
/// mean = cov (sigma0^-1 mu0 + A^T y / noise_var).
GaussPosterior lin_gauss_posterior(const LinGaussModel& model, const std::vector<double>& y);

/// Expected information gain of observing the selected rows of A, in nats:
/// 0.5 * log det(I + A_m^T A_m sigma0 / noise_var).
double lin_gauss_eig(const LinGaussModel& model, const std::vector<int>& mask_rows);

/// Monte-Carlo variational bound: the negative mean nll over pairs x
/// sampled masks. Differs from the EIG by design-independent terms, so it
/// is valid only for ORDERING designs under a fixed prior.
double mc_eig_bound(const Flow& flow, const std::vector<TrainingPair>& pairs,
                    const WellDesign& design, int n_masks, uint64_t seed);

}  // namespace beacon
