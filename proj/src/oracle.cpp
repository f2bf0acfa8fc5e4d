#include "beacon/oracle.hpp"

#include <cmath>

#include "beacon/rng.hpp"

namespace beacon {

double rmse(const Field2D& estimate, const Field2D& truth) {
  if (!estimate.same_shape(truth)) throw NumericError("rmse: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < estimate.data.size(); ++i) {
    double d = estimate.data[i] - truth.data[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(estimate.size()));
}

EnsembleStats ensemble_stats(const std::vector<Field2D>& members) {
  const int n = static_cast<int>(members.size());
  if (n < 2) throw NumericError("ensemble_stats: need at least two members");
  for (const Field2D& m : members)
    if (!m.same_shape(members[0])) throw NumericError("ensemble_stats: shape mismatch");
  EnsembleStats out;
  out.mean = Field2D(members[0].rows, members[0].cols);
  out.std = Field2D(members[0].rows, members[0].cols);
  for (const Field2D& m : members)
    for (size_t i = 0; i < m.data.size(); ++i) out.mean.data[i] += m.data[i];
  for (double& v : out.mean.data) v /= n;
  for (const Field2D& m : members)
    for (size_t i = 0; i < m.data.size(); ++i) {
      double d = m.data[i] - out.mean.data[i];
      out.std.data[i] += d * d;
    }
  double total = 0.0;
  for (double& v : out.std.data) {
    v = std::sqrt(v / (n - 1));
    total += v;
  }
  out.mean_std = total / static_cast<double>(out.std.size());
  return out;
}

Field2D mat_mul(const Field2D& a, const Field2D& b) {
  if (a.cols != b.rows) throw NumericError("mat_mul: dims mismatch");
  Field2D c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      double av = a.at(i, k);
      if (av == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(k, j);
    }
  return c;
}

Field2D mat_transpose(const Field2D& a) {
  Field2D t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

std::vector<double> mat_vec(const Field2D& a, const std::vector<double>& x) {
  if (a.cols != static_cast<int>(x.size())) throw NumericError("mat_vec: dims mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols; ++j) acc += a.at(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

Field2D cholesky(const Field2D& spd) {
  if (spd.rows != spd.cols) throw NumericError("cholesky: not square");
  const int n = spd.rows;
  Field2D l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = spd.at(i, j);
      for (int k = 0; k < j; ++k) acc -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (acc <= 0.0 || !std::isfinite(acc)) throw NumericError("cholesky: matrix not SPD");
        l.at(i, i) = std::sqrt(acc);
      } else {
        l.at(i, j) = acc / l.at(j, j);
      }
    }
  }
  return l;
}

std::vector<double> chol_solve(const Field2D& chol_lower, std::vector<double> b) {
  const int n = chol_lower.rows;
  if (static_cast<int>(b.size()) != n) throw NumericError("chol_solve: dims mismatch");
  for (int i = 0; i < n; ++i) {
    double acc = b[i];
    for (int k = 0; k < i; ++k) acc -= chol_lower.at(i, k) * b[k];
    b[i] = acc / chol_lower.at(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double acc = b[i];
    for (int k = i + 1; k < n; ++k) acc -= chol_lower.at(k, i) * b[k];
    b[i] = acc / chol_lower.at(i, i);
  }
  return b;
}

Field2D chol_inverse(const Field2D& chol_lower) {
  const int n = chol_lower.rows;
  Field2D inv(n, n);
  std::vector<double> e(n, 0.0);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    std::vector<double> col = chol_solve(chol_lower, e);
    for (int i = 0; i < n; ++i) inv.at(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

double chol_logdet(const Field2D& chol_lower) {
  double acc = 0.0;
  for (int i = 0; i < chol_lower.rows; ++i) acc += std::log(chol_lower.at(i, i));
  return 2.0 * acc;
}

GaussPosterior lin_gauss_posterior(const LinGaussModel& model, const std::vector<double>& y) {
  const int d = model.sigma0.rows;
  if (model.a.cols != d || static_cast<int>(model.mu0.size()) != d)
    throw NumericError("lin_gauss_posterior: dims inconsistent");
  if (model.a.rows != static_cast<int>(y.size()))
    throw NumericError("lin_gauss_posterior: observation length mismatch");
  if (model.noise_var <= 0.0) throw NumericError("lin_gauss_posterior: noise_var must be > 0");

  Field2D prior_prec = chol_inverse(cholesky(model.sigma0));
  Field2D at = mat_transpose(model.a);
  Field2D ata = mat_mul(at, model.a);
  Field2D prec(d, d);
  for (size_t i = 0; i < prec.data.size(); ++i)
    prec.data[i] = prior_prec.data[i] + ata.data[i] / model.noise_var;

  std::vector<double> rhs = mat_vec(prior_prec, model.mu0);
  std::vector<double> aty = mat_vec(at, y);
  for (int i = 0; i < d; ++i) rhs[i] += aty[i] / model.noise_var;

  Field2D l = cholesky(prec);
  GaussPosterior out;
  out.mean = chol_solve(l, rhs);
  out.cov = chol_inverse(l);
  return out;
}

double lin_gauss_eig(const LinGaussModel& model, const std::vector<int>& mask_rows) {
  const int d = model.sigma0.rows;
  if (mask_rows.empty()) return 0.0;
  Field2D am(static_cast<int>(mask_rows.size()), model.a.cols);
  for (size_t r = 0; r < mask_rows.size(); ++r) {
    int src = mask_rows[r];
    if (src < 0 || src >= model.a.rows) throw NumericError("lin_gauss_eig: mask row out of range");
    for (int c = 0; c < model.a.cols; ++c) am.at(static_cast<int>(r), c) = model.a.at(src, c);
  }
  // Symmetrized form: 0.5 log det(I + L0^T A_m^T A_m L0 / noise_var).
  Field2D l0 = cholesky(model.sigma0);
  Field2D b = mat_mul(mat_transpose(l0), mat_mul(mat_mul(mat_transpose(am), am), l0));
  Field2D m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m.at(i, j) = (i == j ? 1.0 : 0.0) + b.at(i, j) / model.noise_var;
  // Enforce exact symmetry before factoring.
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) {
      double v = 0.5 * (m.at(i, j) + m.at(j, i));
      m.at(i, j) = v;
      m.at(j, i) = v;
    }
  return 0.5 * chol_logdet(cholesky(m));
}

double mc_eig_bound(const Flow& flow, const std::vector<TrainingPair>& pairs,
                    const WellDesign& design, int n_masks, uint64_t seed) {
  if (pairs.empty()) throw NumericError("mc_eig_bound: empty pair set");
  if (n_masks < 1) throw NumericError("mc_eig_bound: n_masks must be >= 1");
  InclusionProbs probs = inclusion_probs(design);
  double acc = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const TrainingPair& pair = pairs[i];
    for (int j = 0; j < n_masks; ++j) {
      Mask mask = sample_mask(probs, design.drilled, seed_mix(seed, i, j));
      Conditioning cond = apply_mask(mask, pair.y_full, pair.seismic ? &*pair.seismic : nullptr);
      acc += -nll_loss(flow, pair.x, cond);
    }
  }
  return acc / (static_cast<double>(pairs.size()) * n_masks);
}

}  // namespace beacon
