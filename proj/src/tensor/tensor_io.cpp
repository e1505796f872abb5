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
#include "arflow/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace arflow {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U byteswap_if_needed(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <typename U>
void put(std::ostream& out, U v) {
  v = byteswap_if_needed(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw FormatError("tensor record truncated");
  return byteswap_if_needed(v);
}

constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint32_t kMaxName = 4096;

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
  for (T v : t.data()) put<T>(out, v);
  if (!out) throw FormatError("failed writing tensor record");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  const auto rank = get<std::uint32_t>(in);
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& d : shape) {
    const auto v = get<std::uint64_t>(in);
    if (v > (1ull << 40)) throw FormatError("tensor dimension too large");
    d = static_cast<std::int64_t>(v);
  }
  const auto tag = get<std::uint8_t>(in);
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<T> values(n);
  if (tag == static_cast<std::uint8_t>(DType::kFloat32)) {
    for (auto& v : values) v = static_cast<T>(get<float>(in));
  } else if (tag == static_cast<std::uint8_t>(DType::kFloat64)) {
    for (auto& v : values) v = static_cast<T>(get<double>(in));
  } else {
    throw FormatError("unknown tensor dtype tag " + std::to_string(tag));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void write_named_tensors(std::ostream& out, const std::vector<NamedTensor<T>>& tensors) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    write_tensor(out, nt.tensor);
  }
}

template <typename T>
std::vector<NamedTensor<T>> read_named_tensors(std::istream& in) {
  const auto count = get<std::uint32_t>(in);
  std::vector<NamedTensor<T>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len > kMaxName) throw FormatError("tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw FormatError("tensor name truncated");
    out.push_back({std::move(name), read_tensor<T>(in)});
  }
  return out;
}

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_tensor(out, t);
}

template <typename T>
Tensor<T> load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_tensor<T>(in);
}

#define ARFLOW_INSTANTIATE_IO(T)                                                           \
  template void write_tensor(std::ostream&, const Tensor<T>&);                             \
  template Tensor<T> read_tensor(std::istream&);                                           \
  template void write_named_tensors(std::ostream&, const std::vector<NamedTensor<T>>&);    \
  template std::vector<NamedTensor<T>> read_named_tensors(std::istream&);                  \
  template void save_tensor_file(const std::string&, const Tensor<T>&);                    \
  template Tensor<T> load_tensor_file(const std::string&);

ARFLOW_INSTANTIATE_IO(float)
ARFLOW_INSTANTIATE_IO(double)

}  // namespace arflow
