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
// Binary tensor serialization. Each record is little-endian:
//   u32 rank | u64 dims[rank] | u8 dtype (1 = f32, 2 = f64) | raw values
// A named record prefixes u32 name length and the UTF-8 name.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "arflow/tensor.hpp"

namespace arflow {

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
/// Reads one record, converting the stored dtype to T.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
void write_named_tensors(std::ostream& out, const std::vector<NamedTensor<T>>& tensors);
template <typename T>
std::vector<NamedTensor<T>> read_named_tensors(std::istream& in);

/// Single-tensor files (e.g. synthesized mel-spectrograms).
template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor_file(const std::string& path);

}  // namespace arflow
