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

#include "arflow/adam.hpp"

#include <cmath>

namespace arflow {

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  for (auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const T lr = static_cast<T>(options_.learning_rate);
  const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
  const T eps = static_cast<T>(options_.epsilon), wd = static_cast<T>(options_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& tensor = params_[k].tensor;
    auto values = tensor.mutable_data();
    const bool has = tensor.has_grad();
    auto grads = has ? tensor.grad() : std::span<const T>{};
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = has ? grads[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / static_cast<T>(bc1);
      const T v_hat = v[i] / static_cast<T>(bc2);
      values[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * values[i]);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace arflow
