#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aggeq/errors.hpp"

namespace aggeq {

/// Strategy profile with heterogeneous block sizes: one flat buffer plus an
/// offset table, so block i is the contiguous segment
/// [offset(i), offset(i) + dim(i)).
class RaggedProfile {
 public:
  RaggedProfile() = default;

  explicit RaggedProfile(std::span<const int> dims) {
    offsets_.reserve(dims.size() + 1);
    offsets_.push_back(0);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] <= 0) {
        throw DimensionError("agent " + std::to_string(i) +
                             ": block dimension must be positive");
      }
      offsets_.push_back(offsets_.back() + dims[i]);
    }
    data_ = Eigen::VectorXd::Zero(offsets_.back());
  }

  RaggedProfile(std::span<const int> dims, const Eigen::VectorXd& flat)
      : RaggedProfile(dims) {
    if (flat.size() != data_.size()) {
      throw DimensionError("flat profile has " + std::to_string(flat.size()) +
                           " entries, layout needs " +
                           std::to_string(data_.size()));
    }
    data_ = flat;
  }

  int agents() const { return static_cast<int>(offsets_.size()) - 1; }
  int size() const { return offsets_.empty() ? 0 : offsets_.back(); }
  int offset(int i) const { return offsets_[i]; }
  int dim(int i) const { return offsets_[i + 1] - offsets_[i]; }

  auto block(int i) { return data_.segment(offsets_[i], dim(i)); }
  auto block(int i) const { return data_.segment(offsets_[i], dim(i)); }

  Eigen::VectorXd& flat() { return data_; }
  const Eigen::VectorXd& flat() const { return data_; }

  bool same_layout(const RaggedProfile& other) const {
    return offsets_ == other.offsets_;
  }

  std::vector<int> dims() const {
    std::vector<int> out(agents());
    for (int i = 0; i < agents(); ++i) out[i] = dim(i);
    return out;
  }

 private:
  std::vector<int> offsets_;
  Eigen::VectorXd data_;
};

/// Neumaier-compensated sum of the addends taken in ascending value order.
/// Sorting first makes the result independent of the order in which the
/// addends are supplied, so it is bit-reproducible under any agent
/// permutation.
inline double compensated_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  double carry = 0.0;
  for (double v : terms) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  return sum + carry;
}

/// Component-wise compensated sum of equally sized vectors.
inline Eigen::VectorXd compensated_sum(
    const std::vector<Eigen::VectorXd>& vectors, Eigen::Index dim) {
  Eigen::VectorXd out(dim);
  std::vector<double> column(vectors.size());
  for (Eigen::Index k = 0; k < dim; ++k) {
    for (std::size_t i = 0; i < vectors.size(); ++i) column[i] = vectors[i](k);
    out(k) = compensated_sum(column);
  }
  return out;
}

}  // namespace aggeq
