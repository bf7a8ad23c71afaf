#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "agl/error.hpp"
#include "agl/rng.hpp"

namespace agl::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Stored tensors are row-major float32.
using Tensor = Matrix<float>;

// Index of a parameter inside its ParamSet. Layouts built against one
// ParamSet stay valid for every copy or scalar cast of it.
struct ParamId {
  std::size_t index = 0;
};

template <typename Scalar>
struct Parameter {
  std::string path;
  int rank = 2;  // rank-1 tensors are stored as 1 x n
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

template <typename Scalar>
class ParamSet {
 public:
  ParamId add(std::string path, Eigen::Index rows, Eigen::Index cols, int rank = 2) {
    if (index_.count(path)) throw ContractViolation("duplicate parameter path " + path);
    if (rank == 1 && rows != 1) throw ContractViolation("rank-1 parameter must be 1 x n");
    index_.emplace(path, params_.size());
    params_.push_back({std::move(path), rank, Matrix<Scalar>::Zero(rows, cols),
                       Matrix<Scalar>::Zero(rows, cols)});
    return {params_.size() - 1};
  }
  ParamId add_vector(std::string path, Eigen::Index n) { return add(std::move(path), 1, n, 1); }

  Matrix<Scalar>& value(ParamId id) { return params_[id.index].value; }
  const Matrix<Scalar>& value(ParamId id) const { return params_[id.index].value; }
  Matrix<Scalar>& grad(ParamId id) { return params_[id.index].grad; }
  const Matrix<Scalar>& grad(ParamId id) const { return params_[id.index].grad; }

  std::optional<ParamId> find(std::string_view path) const {
    const auto it = index_.find(path);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Registration indices sorted by path.
  std::vector<std::size_t> sorted_order() const {
    std::vector<std::size_t> order;
    order.reserve(index_.size());
    for (const auto& [path, i] : index_) order.push_back(i);
    return order;
  }

  std::size_t coefficient_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : params_) {
      const ParamId id = out.add(p.path, p.value.rows(), p.value.cols(), p.rank);
      out.value(id) = p.value.template cast<Other>();
      out.grad(id) = p.grad.template cast<Other>();
    }
    return out;
  }

  // Values only; both sets must share the same layout.
  void copy_values_from(const ParamSet& other) {
    if (other.size() != size()) throw ContractViolation("copy_values_from: layout mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
  }

  bool values_equal(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].path != other.params_[i].path) return false;
      if (params_[i].value.rows() != other.params_[i].value.rows() ||
          params_[i].value.cols() != other.params_[i].value.cols())
        return false;
      if (params_[i].value != other.params_[i].value) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), drawn in double then cast.
template <typename Scalar>
void init_uniform(Matrix<Scalar>& m, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace agl::nn
