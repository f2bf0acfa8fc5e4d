#pragma once

#include <optional>

#include "beacon/field.hpp"

namespace beacon {

/// One training example: a forecast plume, its fully sampled noisy
/// observation, and the seismic channel. Masks are NOT baked in; a fresh
/// mask is sampled per epoch per sample during training.
struct TrainingPair {
  Field2D x;
  Field2D y_full;
  std::optional<Field2D> seismic;
};

}  // namespace beacon
