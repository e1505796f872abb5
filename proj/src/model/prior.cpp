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
#include <algorithm>
#include <cmath>

#include "arflow/model.hpp"

namespace arflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// log(phi_k) + log N(z; mu_k, diag var_k) for every component.
std::vector<double> component_log_terms(std::span<const double> z, const MixtureParams& m) {
  std::vector<double> out(static_cast<std::size_t>(m.components));
  for (std::int64_t k = 0; k < m.components; ++k) {
    double acc = std::log(m.weights[static_cast<std::size_t>(k)]);
    for (std::int64_t d = 0; d < m.dim; ++d) {
      const double v = m.variance(k, d), diff = z[static_cast<std::size_t>(d)] - m.mean(k, d);
      acc -= 0.5 * (diff * diff / v + kLog2Pi + std::log(v));
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

double prior_logp(std::span<const double> z, std::int64_t dim, double sigma2) {
  if (dim < 1 || z.size() % static_cast<std::size_t>(dim) != 0) throw std::invalid_argument("prior_logp: bad shape");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("prior_logp: sigma2 must be > 0");
  double acc = 0;
  for (double v : z) acc -= 0.5 * (v * v / sigma2 + kLog2Pi + std::log(sigma2));
  return acc;
}

double prior_logp(std::span<const double> z, const MixtureParams& mixture) {
  mixture.validate();
  const auto d = static_cast<std::size_t>(mixture.dim);
  if (z.size() % d != 0) throw std::invalid_argument("prior_logp: latent size is not a multiple of D");
  double acc = 0;
  for (std::size_t t = 0; t < z.size() / d; ++t) acc += log_sum_exp(component_log_terms(z.subspan(t * d, d), mixture));
  return acc;
}

std::vector<double> responsibilities(std::span<const double> z_frame, const MixtureParams& mixture) {
  mixture.validate();
  if (static_cast<std::int64_t>(z_frame.size()) != mixture.dim) {
    throw std::invalid_argument("responsibilities: frame has " + std::to_string(z_frame.size()) + " values, D=" +
                                std::to_string(mixture.dim));
  }
  auto logs = component_log_terms(z_frame, mixture);
  const double norm = log_sum_exp(logs);
  for (auto& l : logs) l = std::exp(l - norm);
  return logs;
}

}  // namespace arflow
