#pragma once

#include "cteg/rng.hpp"
#include "cteg/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace cteg {

/// Ordered registry of named trainable tensors.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Matrix init);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedTensor>& all() const noexcept { return params_; }
  /// Parameters whose name starts with `prefix`.
  std::vector<NamedTensor> group(const std::string& prefix) const;

  void zero_grad();
  Index scalar_count() const;

 private:
  std::vector<NamedTensor> params_;
  std::map<std::string, std::size_t> index_;
};

/// Source of initial parameter values.
class Initializer {
 public:
  explicit Initializer(RngStream& rng, bool all_zero = false) : rng_(&rng), zero_(all_zero) {}

  /// Glorot-uniform in +-sqrt(6 / (rows + cols)).
  Matrix xavier(Index rows, Index cols);
  Matrix normal(Index rows, Index cols, double stddev);
  Matrix zeros(Index rows, Index cols) const { return Matrix::Zero(rows, cols); }
  /// Layer-norm gains; stay 1 even for an all-zero model.
  Matrix ones(Index rows, Index cols) const { return Matrix::Ones(rows, cols); }

  bool all_zero() const noexcept { return zero_; }

 private:
  RngStream* rng_;
  bool zero_;
};

}  // namespace cteg
