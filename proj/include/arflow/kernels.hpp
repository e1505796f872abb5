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

// Raw numeric kernels shared by the autodiff ops and the sequential inverse
// pass. Every output row depends only on the matching input row and is
// accumulated in a fixed order, so results are bitwise identical whether a
// sequence is processed as one batch or one frame at a time.

#pragma once

#include <cmath>
#include <cstdint>

namespace arflow::kernels {

using Index = std::int64_t;

/// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (Index j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (Index p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
#pragma omp simd
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, Index m, Index n, Index k) {
  for (Index i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (Index p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (Index j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

/// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, Index m, Index k, Index n) {
  for (Index i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (Index p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
#pragma omp simd
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// One LSTM cell update for a single row. `gates` holds the 4H pre-activations
/// (input projection + recurrent projection) in i, f, g, o order and is
/// overwritten with the post-activation values. `c` is updated in place and
/// the new hidden state is written to `h`.
template <typename T>
void lstm_pointwise(T* gates, T* c, T* h, T* tanh_c, Index hidden) {
  T* gi = gates;
  T* gf = gates + hidden;
  T* gg = gates + 2 * hidden;
  T* go = gates + 3 * hidden;
  for (Index j = 0; j < hidden; ++j) {
    gi[j] = sigmoid(gi[j]);
    gf[j] = sigmoid(gf[j]);
    gg[j] = std::tanh(gg[j]);
    go[j] = sigmoid(go[j]);
    c[j] = gf[j] * c[j] + gi[j] * gg[j];
    tanh_c[j] = std::tanh(c[j]);
    h[j] = go[j] * tanh_c[j];
  }
}

/// Additive attention scores for one query row followed by a softmax over
/// the first `len` keys; weights beyond `len` are zero. `tanh_out`, when not
/// null, receives the len x A hidden activations for the backward pass.
template <typename T>
void additive_attention_row(const T* query, const T* keys, const T* v, const T* log_prior, Index len,
                            Index max_len, Index dim, T* weights, T* tanh_out) {
  T max_score = -INFINITY;
  for (Index i = 0; i < len; ++i) {
    const T* key = keys + i * dim;
    T* th = tanh_out ? tanh_out + i * dim : nullptr;
    T score = T(0);
    for (Index a = 0; a < dim; ++a) {
      const T hval = std::tanh(query[a] + key[a]);
      if (th) th[a] = hval;
      score += v[a] * hval;
    }
    if (log_prior) score += log_prior[i];
    weights[i] = score;
    if (score > max_score) max_score = score;
  }
  T total = T(0);
  for (Index i = 0; i < len; ++i) {
    weights[i] = std::exp(weights[i] - max_score);
    total += weights[i];
  }
  for (Index i = 0; i < len; ++i) weights[i] /= total;
  for (Index i = len; i < max_len; ++i) weights[i] = T(0);
}

}  // namespace arflow::kernels
