#include "beacon/design.hpp"

#include <algorithm>
#include <cmath>

#include "beacon/rng.hpp"

namespace beacon {

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw NumericError("softmax: empty logits");
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - m);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

InclusionProbs inclusion_probs(const WellDesign& design) {
  if (design.budget < 1) throw NumericError("inclusion_probs: budget must be >= 1");
  std::vector<double> w = softmax(design.logits);
  InclusionProbs out;
  out.p.resize(w.size());
  out.clip_active.resize(w.size());
  for (size_t c = 0; c < w.size(); ++c) {
    double raw = static_cast<double>(design.budget) * w[c];
    out.clip_active[c] = raw >= 1.0;
    out.p[c] = out.clip_active[c] ? 1.0 : raw;
  }
  return out;
}

Mask sample_mask(const InclusionProbs& probs, const std::vector<int>& drilled, uint64_t seed) {
  Mask mask;
  mask.columns.assign(probs.p.size(), 0);
  Rng rng(seed);
  for (size_t c = 0; c < probs.p.size(); ++c)
    if (rng.uniform() < probs.p[c]) mask.columns[c] = 1;
  for (int c : drilled) {
    if (c < 0 || c >= static_cast<int>(mask.columns.size()))
      throw NumericError("sample_mask: drilled column out of range");
    mask.columns[c] = 1;
  }
  return mask;
}

Field2D mask_field(const Mask& mask, int rows) {
  Field2D f(rows, static_cast<int>(mask.columns.size()));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < f.cols; ++c) f.at(r, c) = mask.columns[c] ? 1.0 : 0.0;
  return f;
}

Conditioning apply_mask(const Mask& mask, const Field2D& y_full, const Field2D* seismic) {
  if (static_cast<int>(mask.columns.size()) != y_full.cols)
    throw NumericError("apply_mask: mask/observation width mismatch");
  if (seismic && !seismic->same_shape(y_full))
    throw NumericError("apply_mask: seismic dims mismatch");
  Conditioning cond;
  cond.mask = mask_field(mask, y_full.rows);
  cond.masked_obs = Field2D(y_full.rows, y_full.cols);
  for (int r = 0; r < y_full.rows; ++r)
    for (int c = 0; c < y_full.cols; ++c)
      cond.masked_obs.at(r, c) = cond.mask.at(r, c) * y_full.at(r, c);
  if (seismic) cond.seismic = *seismic;
  return cond;
}

std::vector<double> design_gradient(const CondGrad& grads_cond, const Field2D& y_full,
                                    const InclusionProbs& probs, const Mask& mask,
                                    const WellDesign& design) {
  const int c_count = design.candidates();
  if (static_cast<int>(mask.columns.size()) != c_count ||
      static_cast<int>(probs.p.size()) != c_count)
    throw NumericError("design_gradient: mask/probs/design size mismatch");
  if (!grads_cond.d_masked_obs.same_shape(y_full) || !grads_cond.d_mask.same_shape(y_full))
    throw NumericError("design_gradient: gradient dims mismatch");
  if (y_full.cols != c_count) throw NumericError("design_gradient: observation width mismatch");

  std::vector<uint8_t> is_drilled(c_count, 0);
  for (int c : design.drilled) is_drilled[c] = 1;

  // d loss / d m_c through both channels, with dm/dp := 1 (straight-through).
  std::vector<double> g_p(c_count, 0.0);
  for (int c = 0; c < c_count; ++c) {
    if (is_drilled[c] || probs.clip_active[c]) continue;
    double acc = 0.0;
    for (int r = 0; r < y_full.rows; ++r)
      acc += grads_cond.d_masked_obs.at(r, c) * y_full.at(r, c) + grads_cond.d_mask.at(r, c);
    g_p[c] = acc;
  }

  // Chain through p = s * softmax(v) on the unclipped columns.
  std::vector<double> w = softmax(design.logits);
  const double s = static_cast<double>(design.budget);
  double weighted = 0.0;
  for (int c = 0; c < c_count; ++c) weighted += s * g_p[c] * w[c];
  std::vector<double> grad(c_count);
  for (int j = 0; j < c_count; ++j) grad[j] = w[j] * (s * g_p[j] - weighted);
  return grad;
}

int select_well(const WellDesign& design) {
  std::vector<double> w = softmax(design.logits);
  std::vector<uint8_t> is_drilled(design.candidates(), 0);
  for (int c : design.drilled) is_drilled[c] = 1;
  int best = -1;
  for (int c = 0; c < design.candidates(); ++c) {
    if (is_drilled[c]) continue;
    if (best < 0 || w[c] > w[best]) best = c;
  }
  if (best < 0) throw NumericError("select_well: budget exhausted");
  return best;
}

}  // namespace beacon
