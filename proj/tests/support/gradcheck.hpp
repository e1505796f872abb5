// Copyright 2026 The arflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Test-only oracles: central finite differences and an LU log-determinant.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "arflow/tensor.hpp"

namespace arflow::testing {

/// Central differences of a scalar function of `param` (h = 1e-5).
inline std::vector<double> numerical_grad(TensorD& param, const std::function<double()>& f, double h = 1e-5) {
  auto values = param.mutable_data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f();
    values[i] = saved - h;
    const double down = f();
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Max over elements of |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// log|det A| by LU decomposition with partial pivoting; A is n x n row-major.
inline double log_abs_det(std::vector<double> a, int n) {
  double result = 0.0;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (a[pivot * n + col] == 0.0) return -INFINITY;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
    }
    const double d = a[col * n + col];
    result += std::log(std::abs(d));
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
    }
  }
  return result;
}

}  // namespace arflow::testing
