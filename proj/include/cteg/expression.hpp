#pragma once

// Expression codes: each frame is 53 FLAME coefficients, 50 expression
// components followed by 3 jaw-pose values. The all-zero frame is the
// standard face and terminates a sequence.

#include "cteg/tensor.hpp"

#include <span>
#include <utility>

namespace cteg {

inline constexpr Index kExpressionDim = 53;
inline constexpr Index kDefaultJawSplit = 50;

/// T x 53 frames, one per row.
using ExpressionSequence = Matrix;
using ExpressionFrame = RowVector;

/// Throws ContractError unless `frames` is T x 53 with finite entries.
void validate_sequence(const ExpressionSequence& frames);

/// Above-jaw part [0, split) and jaw part [split, 53).
std::pair<RowVector, RowVector> split_frame(const ExpressionFrame& frame, Index split = kDefaultJawSplit);
ExpressionFrame concat_frame(const RowVector& face, const RowVector& jaw);

/// Euclidean distance to the standard (zero) face.
template <typename Derived>
double distance_to_standard(const Eigen::MatrixBase<Derived>& frame) {
  return frame.norm();
}

}  // namespace cteg
