#include "beacon/sim.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "beacon/pool.hpp"
#include "beacon/rng.hpp"

namespace beacon {

namespace {

// Window-normalized separable box blur. Preserves constants and, for an
// interior delta, spreads mass over the (2r+1)^2 neighborhood without loss.
Field2D box_blur(const Field2D& f, int radius) {
  if (radius <= 0) return f;
  Field2D tmp(f.rows, f.cols);
  for (int r = 0; r < f.rows; ++r) {
    for (int c = 0; c < f.cols; ++c) {
      int lo = std::max(0, c - radius), hi = std::min(f.cols - 1, c + radius);
      double s = 0.0;
      for (int j = lo; j <= hi; ++j) s += f.at(r, j);
      tmp.at(r, c) = s / (hi - lo + 1);
    }
  }
  Field2D out(f.rows, f.cols);
  for (int r = 0; r < f.rows; ++r) {
    int lo = std::max(0, r - radius), hi = std::min(f.rows - 1, r + radius);
    for (int c = 0; c < f.cols; ++c) {
      double s = 0.0;
      for (int i = lo; i <= hi; ++i) s += tmp.at(i, c);
      out.at(r, c) = s / (hi - lo + 1);
    }
  }
  return out;
}

inline double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// 5-point operator with no-flow boundaries and cell 0 pinned (Dirichlet 0).
// kx(r,c) is the face conductivity between (r,c-1) and (r,c); ky between
// (r-1,c) and (r,c). Interior faces only.
struct DarcyOperator {
  int rows, cols;
  Field2D kx;  // rows x (cols+1), boundary faces zero
  Field2D ky;  // (rows+1) x cols, boundary faces zero

  explicit DarcyOperator(const Field2D& perm)
      : rows(perm.rows), cols(perm.cols), kx(perm.rows, perm.cols + 1), ky(perm.rows + 1, perm.cols) {
    for (int r = 0; r < rows; ++r)
      for (int c = 1; c < cols; ++c) kx.at(r, c) = harmonic(perm.at(r, c - 1), perm.at(r, c));
    for (int r = 1; r < rows; ++r)
      for (int c = 0; c < cols; ++c) ky.at(r, c) = harmonic(perm.at(r - 1, c), perm.at(r, c));
  }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        size_t i = static_cast<size_t>(r) * cols + c;
        double xi = x[i];
        double acc = 0.0;
        if (c > 0) acc += kx.at(r, c) * (xi - val(x, r, c - 1));
        if (c < cols - 1) acc += kx.at(r, c + 1) * (xi - val(x, r, c + 1));
        if (r > 0) acc += ky.at(r, c) * (xi - val(x, r - 1, c));
        if (r < rows - 1) acc += ky.at(r + 1, c) * (xi - val(x, r + 1, c));
        y[i] = acc;
      }
    }
    y[0] = x[0];  // pinned cell: identity row
  }

  double diag(int r, int c) const {
    if (r == 0 && c == 0) return 1.0;
    double d = 0.0;
    if (c > 0) d += kx.at(r, c);
    if (c < cols - 1) d += kx.at(r, c + 1);
    if (r > 0) d += ky.at(r, c);
    if (r < rows - 1) d += ky.at(r + 1, c);
    return d;
  }

 private:
  // Pinned cell reads as zero so the operator stays symmetric.
  double val(const std::vector<double>& x, int r, int c) const {
    if (r == 0 && c == 0) return 0.0;
    return x[static_cast<size_t>(r) * cols + c];
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Field2D sample_permeability(uint64_t seed, int rows, int cols, const PermGenParams& gen) {
  if (rows < 4 || cols < 4) throw NumericError("sample_permeability: grid too small");
  Rng rng(seed);
  std::vector<double> base(rows);
  for (int r = 0; r < rows; ++r) base[r] = gen.base_sigma * rng.normal();
  Field2D bump(rows, cols);
  for (double& v : bump.data) v = gen.bump_sigma * rng.normal();
  bump = box_blur(bump, gen.smooth_radius);
  Field2D k(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) k.at(r, c) = std::exp(base[r] + bump.at(r, c));
  return k;
}

DarcyResult solve_darcy(const Field2D& perm, const Field2D& source) {
  if (!perm.same_shape(source)) throw NumericError("solve_darcy: perm/source shape mismatch");
  for (double v : perm.data)
    if (!(v > 0.0)) throw NumericError("solve_darcy: non-positive permeability");

  const int rows = perm.rows, cols = perm.cols;
  const size_t n = perm.size();
  DarcyOperator A(perm);

  std::vector<double> b = source.data;
  b[0] = 0.0;  // pinned cell
  std::vector<double> p(n, 0.0), r = b, z(n), q(n);

  std::vector<double> inv_diag(n);
  for (int rr = 0; rr < rows; ++rr)
    for (int cc = 0; cc < cols; ++cc) inv_diag[static_cast<size_t>(rr) * cols + cc] = 1.0 / A.diag(rr, cc);

  const double bnorm = std::sqrt(dot(b, b));
  const double tol = 1e-10 * bnorm;
  DarcyResult out;
  out.pressure = Field2D(rows, cols);
  out.vel.vx = Field2D(rows, cols + 1);
  out.vel.vy = Field2D(rows + 1, cols);

  double rnorm = std::sqrt(dot(r, r));
  if (bnorm > 0.0 && rnorm > tol) {
    for (size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    std::vector<double> d = z;
    double rz = dot(r, z);
    const int max_iter = 10 * rows * cols;
    int it = 0;
    for (; it < max_iter; ++it) {
      A.apply(d, q);
      double alpha = rz / dot(d, q);
      for (size_t i = 0; i < n; ++i) p[i] += alpha * d[i];
      for (size_t i = 0; i < n; ++i) r[i] -= alpha * q[i];
      rnorm = std::sqrt(dot(r, r));
      if (rnorm <= tol) {
        ++it;
        break;
      }
      for (size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
      double rz_next = dot(r, z);
      double beta = rz_next / rz;
      rz = rz_next;
      for (size_t i = 0; i < n; ++i) d[i] = z[i] + beta * d[i];
    }
    if (rnorm > tol)
      throw NumericError("solve_darcy: CG did not converge in " + std::to_string(it) +
                         " iterations (residual " + std::to_string(rnorm) + ")");
    out.iterations = it;
  }
  out.residual = rnorm;
  out.pressure.data = std::move(p);

  const Field2D& pr = out.pressure;
  for (int rr = 0; rr < rows; ++rr)
    for (int cc = 1; cc < cols; ++cc)
      out.vel.vx.at(rr, cc) = -A.kx.at(rr, cc) * (pr.at(rr, cc) - pr.at(rr, cc - 1));
  for (int rr = 1; rr < rows; ++rr)
    for (int cc = 0; cc < cols; ++cc)
      out.vel.vy.at(rr, cc) = -A.ky.at(rr, cc) * (pr.at(rr, cc) - pr.at(rr - 1, cc));
  return out;
}

Field2D injection_source(int rows, int cols, const SimParams& params) {
  Field2D src(rows, cols);
  if (params.injection_rate <= 0.0) return src;
  if (params.injection_row < 0 || params.injection_row >= rows || params.injection_col < 0 ||
      params.injection_col >= cols)
    throw NumericError("injection cell outside grid");
  src.at(params.injection_row, params.injection_col) = params.injection_rate;
  double mean = params.injection_rate / static_cast<double>(src.size());
  for (double& v : src.data) v -= mean;  // distributed sink balances the well
  return src;
}

Field2D advance_plume(const Field2D& sat, const Velocity& vel, const SimParams& params) {
  const int rows = sat.rows, cols = sat.cols;
  if (vel.vx.rows != rows || vel.vx.cols != cols + 1 || vel.vy.rows != rows + 1 || vel.vy.cols != cols)
    throw NumericError("advance_plume: velocity dims inconsistent with grid");
  double vmax = std::max(max_abs(vel.vx), max_abs(vel.vy));
  if (params.dt * vmax > 1.0) throw NumericError("CFL violated, reduce dt");

  const bool inject = params.injection_rate > 0.0;
  Field2D cur = sat, next(rows, cols);
  for (int step = 0; step < params.steps_per_interval; ++step) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        // Upwind fluxes on the four faces; boundary faces carry zero velocity.
        double fxl = 0.0, fxr = 0.0, fyt = 0.0, fyb = 0.0;
        if (c > 0) {
          double u = vel.vx.at(r, c);
          fxl = u >= 0.0 ? u * cur.at(r, c - 1) : u * cur.at(r, c);
        }
        if (c < cols - 1) {
          double u = vel.vx.at(r, c + 1);
          fxr = u >= 0.0 ? u * cur.at(r, c) : u * cur.at(r, c + 1);
        }
        if (r > 0) {
          double u = vel.vy.at(r, c);
          fyt = u >= 0.0 ? u * cur.at(r - 1, c) : u * cur.at(r, c);
        }
        if (r < rows - 1) {
          double u = vel.vy.at(r + 1, c);
          fyb = u >= 0.0 ? u * cur.at(r, c) : u * cur.at(r + 1, c);
        }
        next.at(r, c) = cur.at(r, c) - params.dt * (fxr - fxl + fyb - fyt);
      }
    }
    if (inject) next.at(params.injection_row, params.injection_col) += params.dt * params.injection_rate;
    std::swap(cur, next);
  }
  clamp01(cur);
  return cur;
}

Field2D advance_member(const Field2D& sat, const Field2D& perm, const SimParams& params) {
  Field2D source = injection_source(sat.rows, sat.cols, params);
  DarcyResult d = solve_darcy(perm, source);
  return advance_plume(sat, d.vel, params);
}

Ensemble forecast_ensemble(const Ensemble& prior, const SimParams& params, ThreadPool* pool) {
  if (prior.size() == 0) throw NumericError("forecast_ensemble: empty ensemble");
  if (prior.sat.size() != prior.perm.size())
    throw NumericError("forecast_ensemble: members/perms length mismatch");
  Ensemble out;
  out.step = prior.step + 1;
  out.perm = prior.perm;
  out.sat.resize(prior.sat.size());
  std::vector<std::string> errors(prior.sat.size());
  auto run_one = [&](int i) {
    try {
      out.sat[i] = advance_member(prior.sat[i], prior.perm[i], params);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (pool)
    pool->parallel_for(prior.size(), run_one);
  else
    for (int i = 0; i < prior.size(); ++i) run_one(i);
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw NumericError("forecast member " + std::to_string(i) + ": " + errors[i]);
  return out;
}

Field2D corrupt_observation(const Field2D& sat, double noise_sigma, uint64_t seed) {
  if (noise_sigma < 0.0) throw NumericError("corrupt_observation: negative sigma");
  Field2D out = sat;
  if (noise_sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.data) v += noise_sigma * rng.normal();
  return out;
}

Field2D seismic_surrogate(const Field2D& sat, const SimParams& params, uint64_t seed) {
  Field2D out = box_blur(sat, params.seismic_blur_radius);
  if (params.seismic_sigma > 0.0) {
    Rng rng(seed);
    for (double& v : out.data) v += params.seismic_sigma * rng.normal();
  }
  return out;
}

}  // namespace beacon
