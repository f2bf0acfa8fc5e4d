#pragma once

#include <cstdint>
#include <vector>

#include "beacon/field.hpp"
#include "beacon/flow.hpp"

namespace beacon {

// Well placement over candidate grid COLUMNS: a borehole observes the full
// depth profile of its column. The placement density is softmax(logits);
// masks are sampled per column with inclusion probability min(1, s * w_c),
// so the expected number of new wells per draw is at most the budget s.

struct WellDesign {
  std::vector<double> logits;  // one per candidate column
  int budget = 1;              // expected NEW wells per sampled mask
  std::vector<int> drilled;    // permanently drilled columns, in drill order

  int candidates() const { return static_cast<int>(logits.size()); }
};

std::vector<double> softmax(const std::vector<double>& logits);

struct InclusionProbs {
  std::vector<double> p;
  std::vector<uint8_t> clip_active;  // p_c hit the min(1, .) ceiling
};

InclusionProbs inclusion_probs(const WellDesign& design);

struct Mask {
  std::vector<uint8_t> columns;
};

/// columns[c] = 1 iff u_c < p_c (u iid uniform) or c is drilled.
Mask sample_mask(const InclusionProbs& probs, const std::vector<int>& drilled, uint64_t seed);

/// Expand a column mask to a full grid: selected columns are all-ones.
Field2D mask_field(const Mask& mask, int rows);

/// Build the flow conditioning from a mask and a fully sampled observation;
/// the seismic channel passes through unmasked.
Conditioning apply_mask(const Mask& mask, const Field2D& y_full, const Field2D* seismic);

/// Straight-through gradient from the conditioning-input gradients back to
/// the logits: the hard mask is treated as identity in p, then chained
/// through p = min(1, s * softmax(v)). Clipped and drilled columns get zero
/// gradient.
std::vector<double> design_gradient(const CondGrad& grads_cond, const Field2D& y_full,
                                    const InclusionProbs& probs, const Mask& mask,
                                    const WellDesign& design);

/// Argmax of the density over undrilled columns; ties break to the lowest
/// index. Throws when every column is drilled.
int select_well(const WellDesign& design);

}  // namespace beacon
