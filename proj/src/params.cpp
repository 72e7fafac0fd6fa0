#include "cteg/params.hpp"

#include "cteg/errors.hpp"

#include <cmath>

namespace cteg {

Tensor ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw ContractError("ParameterStore: duplicate parameter '" + name + "'");
  Tensor t = Tensor::parameter(std::move(init));
  index_.emplace(name, params_.size());
  params_.push_back({name, t});
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParameterStore: no parameter '" + name + "'");
  return params_[it->second].tensor;
}

std::vector<NamedTensor> ParameterStore::group(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const NamedTensor& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(p);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (NamedTensor& p : params_) p.tensor.zero_grad();
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const NamedTensor& p : params_) n += p.tensor.size();
  return n;
}

Matrix Initializer::xavier(Index rows, Index cols) {
  if (zero_) return zeros(rows, cols);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng_->uniform() - 1.0) * bound;
  return m;
}

Matrix Initializer::normal(Index rows, Index cols, double stddev) {
  if (zero_) return zeros(rows, cols);
  return stddev * rng_->normal_matrix(rows, cols);
}

}  // namespace cteg
