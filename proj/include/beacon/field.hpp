#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace beacon {

// Failure taxonomy used by the CLI exit-code contract:
// ConfigError -> exit 1 (usage/config), everything else -> exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major 2-D grid of doubles. Base type for permeability,
/// saturation, pressure, masks, and the small dense matrices in the
/// linear-Gaussian oracle.
struct Field2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Field2D() = default;
  Field2D(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r < 0 ? 0 : r) * static_cast<size_t>(c < 0 ? 0 : c), fill) {
    if (r < 0 || c < 0) throw NumericError("Field2D: negative dims");
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Field2D& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(const Field2D& f) {
  for (double v : f.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double field_sum(const Field2D& f) {
  double s = 0.0;
  for (double v : f.data) s += v;
  return s;
}

inline double max_abs(const Field2D& f) {
  double m = 0.0;
  for (double v : f.data) m = std::max(m, std::fabs(v));
  return m;
}

inline double max_abs_diff(const Field2D& a, const Field2D& b) {
  if (!a.same_shape(b)) throw NumericError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

inline void clamp01(Field2D& f) {
  for (double& v : f.data) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace beacon
