#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "decor/embedding.hpp"

namespace decor::nn {

// Dense row-major tensor of rank 1 or 2. Rank-1 tensors behave as a single
// row wherever a matrix is expected.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw Error("tensor: data length does not match shape");
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) { return Tensor({r, c}, std::move(d)); }
  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }
  static Tensor row(std::span<const double> v) { return Tensor({1, v.size()}, {v.begin(), v.end()}); }
  static Tensor from_rows(std::span<const Embedding> rows) {
    if (rows.empty()) throw Error("tensor: no rows");
    Tensor t({rows.size(), rows.front().dim()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].dim() != t.cols()) throw Error("tensor: ragged rows");
      for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) = rows[i].values[j];
    }
    return t;
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double item() const {
    if (data.size() != 1) throw Error("tensor: item() on a non-scalar");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
  bool operator==(const Tensor&) const = default;
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(t.shape[i]);
  }
  return s + ")";
}

}  // namespace decor::nn
