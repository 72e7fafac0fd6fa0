#include "cteg/expression.hpp"

#include "cteg/errors.hpp"

namespace cteg {

void validate_sequence(const ExpressionSequence& frames) {
  if (frames.cols() != kExpressionDim) {
    throw ContractError("expression sequence has " + std::to_string(frames.cols()) + " dims, expected 53");
  }
  if (!frames.allFinite()) throw ContractError("expression sequence contains non-finite values");
}

std::pair<RowVector, RowVector> split_frame(const ExpressionFrame& frame, Index split) {
  if (frame.size() != kExpressionDim) throw ContractError("split_frame: frame must have 53 entries");
  if (split < 1 || split >= kExpressionDim) throw ContractError("split_frame: split point out of range");
  return {frame.head(split), frame.tail(kExpressionDim - split)};
}

ExpressionFrame concat_frame(const RowVector& face, const RowVector& jaw) {
  ExpressionFrame out(face.size() + jaw.size());
  out << face, jaw;
  return out;
}

}  // namespace cteg
