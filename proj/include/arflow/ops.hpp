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

// Differentiable tensor operations.
//
// Binary elementwise ops accept either equal shapes or a right operand whose
// shape is a suffix of the left operand's shape (broadcast over leading batch
// dimensions). Nothing else broadcasts; use repeat_rows to expand explicitly.
// Shape errors throw ShapeError naming the op and both shapes.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "arflow/tensor.hpp"

namespace arflow {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

/// Sum of all elements, as a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Reductions removing `axis`.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& a, int axis);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& a, int axis);
/// Population variance along `axis`.
template <typename T> Tensor<T> var_axis(const Tensor<T>& a, int axis);

/// a[..., k] x w[k, n] -> [..., n]; leading dimensions of `a` are rows.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& w);
/// a[B, m, k] x b[B, k, n] -> [B, m, n]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t end);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Reverses the order of elements along `axis`.
template <typename T> Tensor<T> reverse(const Tensor<T>& a, int axis);
/// For a [B, T, C] batch, reverses the first lengths[b] frames of each row;
/// padding frames stay in place.
template <typename T> Tensor<T> reverse_time(const Tensor<T>& a, std::span<const std::int64_t> lengths);
/// For a [B, T, C] batch, prepends a zero frame and drops the last one.
template <typename T> Tensor<T> shift_time(const Tensor<T>& a);

/// table[V, C] gathered at ids -> [n, C]
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> ids);
/// [C] or [1, C] -> [n, C]
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& a, std::int64_t n);
/// Stacks [L_i, C] tensors into a zero-padded [B, max_len, C] batch.
template <typename T> Tensor<T> pad_stack(const std::vector<Tensor<T>>& rows, std::int64_t max_len);

/// Softmax over the last axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& a);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a);
/// log(sum(exp(a))) over the last axis, removing it.
template <typename T> Tensor<T> logsumexp(const Tensor<T>& a);

/// Runs an LSTM over xproj[B, T, 4H] (input projection plus bias, gate order
/// i, f, g, o) with recurrent weights w_hh[H, 4H] from a zero state.
/// Returns hidden states [B, T, H].
template <typename T> Tensor<T> lstm_sequence(const Tensor<T>& xproj, const Tensor<T>& w_hh);

/// Content-based tanh attention weights. score[b,t,i] = v . tanh(q[b,t] + k[b,i])
/// plus an optional constant log-prior [B, T, L], softmaxed over the first
/// key_lengths[b] keys. Returns weights [B, T, L].
template <typename T>
Tensor<T> additive_attention(const Tensor<T>& query, const Tensor<T>& keys, const Tensor<T>& v,
                             std::span<const std::int64_t> key_lengths, const std::vector<T>* log_prior = nullptr);

/// Normalizes each column of a[L, C] to zero mean and unit variance over L.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& a, T eps = T(1e-5));
/// Zero-padded sliding windows: a[L, C] -> [L, k*C] for odd k.
template <typename T> Tensor<T> unfold_time(const Tensor<T>& a, std::int64_t kernel);

template <typename T> Tensor<T> stop_gradient(const Tensor<T>& a);

/// Sum over elements of weight * binary cross-entropy between sigmoid(logits)
/// and targets.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets, std::span<const T> weights);

}  // namespace arflow
