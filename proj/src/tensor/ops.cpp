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

#include "arflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "arflow/kernels.hpp"

namespace arflow {

namespace {

using Index = std::int64_t;

template <typename T>
using NodeT = detail::Node<T>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const std::string& why = "") {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_fail1(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": invalid shape " + shape_str(a) + " (" + why + ")");
}

int norm_axis(const char* op, const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) shape_fail1(op, s, "axis out of range");
  return axis;
}

// Builds the result node. The backward closure is attached only when graph
// recording is on and some input requires gradients.
template <typename T, typename F>
Tensor<T> make_result(const char* name, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs, F&& backward) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward_fn = std::forward<F>(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T, typename F>
Tensor<T> make_result_list(const char* name, Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                           F&& backward) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::forward<F>(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
NodeT<T>* grad_target(NodeT<T>& self, std::size_t i) {
  NodeT<T>* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

// Returns the broadcast inner size: equal shapes, or b's shape a suffix of a's.
Index broadcast_inner(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return numel(a);
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return numel(b);
  }
  shape_fail(op, a, b, "right operand must match or be a trailing suffix");
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(const char* name, BinOp kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Index inner = broadcast_inner(name, a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  const Index n = static_cast<Index>(av.size());
  std::vector<T> out(av.size());
  if (inner > 0) {
    for (Index i = 0; i < n; ++i) {
      const T x = av[i];
      const T y = bv[i % inner];
      switch (kind) {
        case BinOp::kAdd: out[i] = x + y; break;
        case BinOp::kSub: out[i] = x - y; break;
        case BinOp::kMul: out[i] = x * y; break;
        case BinOp::kDiv: out[i] = x / y; break;
      }
    }
  }
  return make_result<T>(name, a.shape(), std::move(out), {&a, &b}, [kind, inner](NodeT<T>& self) {
    const auto& g = self.grad;
    const Index n = static_cast<Index>(g.size());
    NodeT<T>* pa = grad_target(self, 0);
    NodeT<T>* pb = grad_target(self, 1);
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    for (Index i = 0; i < n; ++i) {
      const Index j = i % inner;
      switch (kind) {
        case BinOp::kAdd:
          if (pa) pa->grad[i] += g[i];
          if (pb) pb->grad[j] += g[i];
          break;
        case BinOp::kSub:
          if (pa) pa->grad[i] += g[i];
          if (pb) pb->grad[j] -= g[i];
          break;
        case BinOp::kMul:
          if (pa) pa->grad[i] += g[i] * bv[j];
          if (pb) pb->grad[j] += g[i] * av[i];
          break;
        case BinOp::kDiv:
          if (pa) pa->grad[i] += g[i] / bv[j];
          if (pb) pb->grad[j] -= g[i] * av[i] / (bv[j] * bv[j]);
          break;
      }
    }
  });
}

// Unary elementwise op; `deriv(x, y)` returns dy/dx from input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(name, a.shape(), std::move(out), {&a}, [deriv](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    const auto& x = pa->value;
    for (std::size_t i = 0; i < x.size(); ++i) pa->grad[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

// Outer/axis/inner decomposition for axis-wise reductions.
struct AxisSplit {
  Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out = s;
  out.erase(out.begin() + axis);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", BinOp::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", BinOp::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("mul", BinOp::kMul, a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("div", BinOp::kDiv, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary("scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary("add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary("sigmoid", a, [](T x) { return kernels::sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary("relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary(
      "softplus", a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return kernels::sigmoid(x); });
}
template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T x : a.values()) total += x;
  return make_result<T>("sum", Shape{}, std::vector<T>{total}, {&a}, [](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    const T g = self.grad[0];
    for (auto& v : pa->grad) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) shape_fail1("mean", a.shape(), "empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis) {
  axis = norm_axis("sum_axis", a.shape(), axis);
  const AxisSplit sp = split_axis(a.shape(), axis);
  const auto& av = a.values();
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index l = 0; l < sp.len; ++l)
      for (Index i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  return make_result<T>("sum_axis", drop_axis(a.shape(), axis), std::move(out), {&a}, [sp](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index o = 0; o < sp.outer; ++o)
      for (Index l = 0; l < sp.len; ++l)
        for (Index i = 0; i < sp.inner; ++i) pa->grad[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  axis = norm_axis("mean_axis", a.shape(), axis);
  const Index len = a.shape()[axis];
  if (len == 0) shape_fail1("mean_axis", a.shape(), "empty reduction axis");
  return scale(sum_axis(a, axis), T(1) / static_cast<T>(len));
}

template <typename T>
Tensor<T> var_axis(const Tensor<T>& a, int axis) {
  axis = norm_axis("var_axis", a.shape(), axis);
  const AxisSplit sp = split_axis(a.shape(), axis);
  if (sp.len == 0) shape_fail1("var_axis", a.shape(), "empty reduction axis");
  const auto& av = a.values();
  std::vector<T> means(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  std::vector<T> out(means.size(), T(0));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      T m = T(0);
      for (Index l = 0; l < sp.len; ++l) m += av[(o * sp.len + l) * sp.inner + i];
      m /= static_cast<T>(sp.len);
      T v = T(0);
      for (Index l = 0; l < sp.len; ++l) {
        const T d = av[(o * sp.len + l) * sp.inner + i] - m;
        v += d * d;
      }
      means[o * sp.inner + i] = m;
      out[o * sp.inner + i] = v / static_cast<T>(sp.len);
    }
  return make_result<T>("var_axis", drop_axis(a.shape(), axis), std::move(out), {&a},
                        [sp, means = std::move(means)](NodeT<T>& self) {
                          NodeT<T>* pa = grad_target(self, 0);
                          if (!pa) return;
                          const auto& av = pa->value;
                          const T f = T(2) / static_cast<T>(sp.len);
                          for (Index o = 0; o < sp.outer; ++o)
                            for (Index l = 0; l < sp.len; ++l)
                              for (Index i = 0; i < sp.inner; ++i) {
                                const Index k = (o * sp.len + l) * sp.inner + i;
                                pa->grad[k] += self.grad[o * sp.inner + i] * f * (av[k] - means[o * sp.inner + i]);
                              }
                        });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& w) {
  if (a.rank() < 1 || w.rank() != 2 || a.shape().back() != w.shape()[0]) {
    shape_fail("matmul", a.shape(), w.shape(), "expected [..., k] x [k, n]");
  }
  const Index k = w.shape()[0];
  const Index n = w.shape()[1];
  const Index m = k == 0 ? 0 : a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::gemm_nn(a.values().data(), w.values().data(), out.data(), m, k, n, false);
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {&a, &w}, [m, k, n](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    NodeT<T>* pw = grad_target(self, 1);
    if (pa) kernels::gemm_nt_acc(self.grad.data(), self.parents[1]->value.data(), pa->grad.data(), m, n, k);
    if (pw) kernels::gemm_tn_acc(self.parents[0]->value.data(), self.grad.data(), pw->grad.data(), m, k, n);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]) {
    shape_fail("bmm", a.shape(), b.shape(), "expected [B, m, k] x [B, k, n]");
  }
  const Index batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (Index i = 0; i < batch; ++i) {
    kernels::gemm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n, out.data() + i * m * n, m, k, n,
                     false);
  }
  return make_result<T>("bmm", Shape{batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    NodeT<T>* pb = grad_target(self, 1);
    for (Index i = 0; i < batch; ++i) {
      const T* g = self.grad.data() + i * m * n;
      if (pa) kernels::gemm_nt_acc(g, self.parents[1]->value.data() + i * k * n, pa->grad.data() + i * m * k, m, n, k);
      if (pb) kernels::gemm_tn_acc(self.parents[0]->value.data() + i * m * k, g, pb->grad.data() + i * k * n, m, k, n);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3) shape_fail1("transpose", a.shape(), "expected rank 2 or 3");
  const bool batched = a.rank() == 3;
  const Index nb = batched ? a.shape()[0] : 1;
  const Index r = a.shape()[batched ? 1 : 0], c = a.shape()[batched ? 2 : 1];
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (Index b = 0; b < nb; ++b)
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) out[b * r * c + j * r + i] = av[b * r * c + i * c + j];
  Shape shape = batched ? Shape{nb, c, r} : Shape{c, r};
  return make_result<T>("transpose", std::move(shape), std::move(out), {&a}, [nb, r, c](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index b = 0; b < nb; ++b)
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) pa->grad[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  axis = norm_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s, "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) shape_fail("concat", first, s, "non-concat dims differ");
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<Index> offsets;
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  Index off = 0;
  for (const auto& p : parts) {
    const AxisSplit sp = split_axis(p.shape(), axis);
    const auto& pv = p.values();
    for (Index o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.begin() + o * sp.len * sp.inner, sp.len * sp.inner,
                  out.begin() + (o * total.len + off) * total.inner);
    }
    offsets.push_back(off);
    off += sp.len;
  }
  return make_result_list<T>("concat", out_shape, std::move(out), parts,
                             [total, axis, offsets = std::move(offsets)](NodeT<T>& self) {
                               for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                                 NodeT<T>* p = grad_target(self, pi);
                                 if (!p) continue;
                                 const AxisSplit sp = split_axis(p->shape, axis);
                                 for (Index o = 0; o < sp.outer; ++o) {
                                   const T* src = self.grad.data() + (o * total.len + offsets[pi]) * total.inner;
                                   T* dst = p->grad.data() + o * sp.len * sp.inner;
                                   for (Index i = 0; i < sp.len * sp.inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, Index start, Index end) {
  axis = norm_axis("slice", a.shape(), axis);
  const AxisSplit sp = split_axis(a.shape(), axis);
  if (start < 0 || end < start || end > sp.len) {
    shape_fail1("slice", a.shape(),
                "range [" + std::to_string(start) + ", " + std::to_string(end) + ") on axis " + std::to_string(axis));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - start;
  const Index len = end - start;
  const auto& av = a.values();
  std::vector<T> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
  for (Index o = 0; o < sp.outer; ++o) {
    std::copy_n(av.begin() + (o * sp.len + start) * sp.inner, len * sp.inner, out.begin() + o * len * sp.inner);
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&a}, [sp, start, len](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index o = 0; o < sp.outer; ++o) {
      const T* src = self.grad.data() + o * len * sp.inner;
      T* dst = pa->grad.data() + (o * sp.len + start) * sp.inner;
      for (Index i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape, "element count differs");
  return make_result<T>("reshape", std::move(shape), a.values(), {&a}, [](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> reverse(const Tensor<T>& a, int axis) {
  axis = norm_axis("reverse", a.shape(), axis);
  const AxisSplit sp = split_axis(a.shape(), axis);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  auto map = [sp](Index o, Index l) { return (o * sp.len + (sp.len - 1 - l)) * sp.inner; };
  for (Index o = 0; o < sp.outer; ++o)
    for (Index l = 0; l < sp.len; ++l) std::copy_n(av.begin() + (o * sp.len + l) * sp.inner, sp.inner, out.begin() + map(o, l));
  return make_result<T>("reverse", a.shape(), std::move(out), {&a}, [sp, map](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index o = 0; o < sp.outer; ++o)
      for (Index l = 0; l < sp.len; ++l)
        for (Index i = 0; i < sp.inner; ++i) pa->grad[(o * sp.len + l) * sp.inner + i] += self.grad[map(o, l) + i];
  });
}

template <typename T>
Tensor<T> reverse_time(const Tensor<T>& a, std::span<const Index> lengths) {
  if (a.rank() != 3) shape_fail1("reverse_time", a.shape(), "expected [B, T, C]");
  const Index batch = a.shape()[0], steps = a.shape()[1], ch = a.shape()[2];
  if (static_cast<Index>(lengths.size()) != batch) shape_fail1("reverse_time", a.shape(), "one length per row required");
  std::vector<Index> src_of(static_cast<std::size_t>(batch * steps));
  for (Index b = 0; b < batch; ++b) {
    const Index len = lengths[b];
    if (len < 0 || len > steps) shape_fail1("reverse_time", a.shape(), "length out of range");
    for (Index t = 0; t < steps; ++t) src_of[b * steps + t] = b * steps + (t < len ? len - 1 - t : t);
  }
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (Index r = 0; r < batch * steps; ++r) std::copy_n(av.begin() + src_of[r] * ch, ch, out.begin() + r * ch);
  return make_result<T>("reverse_time", a.shape(), std::move(out), {&a}, [ch, src_of = std::move(src_of)](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (std::size_t r = 0; r < src_of.size(); ++r)
      for (Index c = 0; c < ch; ++c) pa->grad[src_of[r] * ch + c] += self.grad[r * ch + c];
  });
}

template <typename T>
Tensor<T> shift_time(const Tensor<T>& a) {
  if (a.rank() != 3) shape_fail1("shift_time", a.shape(), "expected [B, T, C]");
  const Index batch = a.shape()[0], steps = a.shape()[1], ch = a.shape()[2];
  const auto& av = a.values();
  std::vector<T> out(av.size(), T(0));
  for (Index b = 0; b < batch; ++b)
    for (Index t = 1; t < steps; ++t) std::copy_n(av.begin() + (b * steps + t - 1) * ch, ch, out.begin() + (b * steps + t) * ch);
  return make_result<T>("shift_time", a.shape(), std::move(out), {&a}, [batch, steps, ch](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index b = 0; b < batch; ++b)
      for (Index t = 1; t < steps; ++t)
        for (Index c = 0; c < ch; ++c) pa->grad[(b * steps + t - 1) * ch + c] += self.grad[(b * steps + t) * ch + c];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const Index> ids) {
  if (table.rank() != 2) shape_fail1("gather_rows", table.shape(), "expected [V, C] table");
  const Index rows = table.shape()[0], ch = table.shape()[1];
  std::vector<Index> idx(ids.begin(), ids.end());
  std::vector<T> out(static_cast<std::size_t>(static_cast<Index>(idx.size()) * ch));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows) {
      throw std::out_of_range("gather_rows: id " + std::to_string(idx[r]) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(table.values().begin() + idx[r] * ch, ch, out.begin() + static_cast<Index>(r) * ch);
  }
  const auto n = static_cast<Index>(idx.size());
  return make_result<T>("gather_rows", Shape{n, ch}, std::move(out), {&table},
                        [ch, idx = std::move(idx)](NodeT<T>& self) {
                          NodeT<T>* pt = grad_target(self, 0);
                          if (!pt) return;
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (Index c = 0; c < ch; ++c) pt->grad[idx[r] * ch + c] += self.grad[static_cast<Index>(r) * ch + c];
                        });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& a, Index n) {
  const bool ok = a.rank() == 1 || (a.rank() == 2 && a.shape()[0] == 1);
  if (!ok) shape_fail1("repeat_rows", a.shape(), "expected [C] or [1, C]");
  const Index ch = a.shape().back();
  std::vector<T> out(static_cast<std::size_t>(n * ch));
  for (Index r = 0; r < n; ++r) std::copy_n(a.values().begin(), ch, out.begin() + r * ch);
  return make_result<T>("repeat_rows", Shape{n, ch}, std::move(out), {&a}, [n, ch](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < ch; ++c) pa->grad[c] += self.grad[r * ch + c];
  });
}

template <typename T>
Tensor<T> pad_stack(const std::vector<Tensor<T>>& rows, Index max_len) {
  if (rows.empty()) throw ShapeError("pad_stack: no operands");
  const Index ch = rows[0].dim(-1);
  for (const auto& r : rows) {
    if (r.rank() != 2 || r.shape()[1] != ch || r.shape()[0] > max_len) {
      shape_fail("pad_stack", rows[0].shape(), r.shape(), "rows must be [L <= max_len, C]");
    }
  }
  const Index batch = static_cast<Index>(rows.size());
  std::vector<T> out(static_cast<std::size_t>(batch * max_len * ch), T(0));
  for (Index b = 0; b < batch; ++b) std::copy(rows[b].values().begin(), rows[b].values().end(), out.begin() + b * max_len * ch);
  return make_result_list<T>("pad_stack", Shape{batch, max_len, ch}, std::move(out), rows, [max_len, ch](NodeT<T>& self) {
    for (std::size_t b = 0; b < self.parents.size(); ++b) {
      NodeT<T>* p = grad_target(self, b);
      if (!p) continue;
      const T* src = self.grad.data() + static_cast<Index>(b) * max_len * ch;
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() < 1 || a.shape().back() == 0) shape_fail1("softmax", a.shape(), "empty last axis");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (Index r = 0; r < rows; ++r) {
    const T* x = av.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = T(0);
    for (Index i = 0; i < n; ++i) total += (y[i] = std::exp(x[i] - mx));
    for (Index i = 0; i < n; ++i) y[i] /= total;
  }
  return make_result<T>("softmax", a.shape(), std::move(out), {&a}, [rows, n](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = T(0);
      for (Index i = 0; i < n; ++i) dot += g[i] * y[i];
      for (Index i = 0; i < n; ++i) pa->grad[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  if (a.rank() < 1 || a.shape().back() == 0) shape_fail1("log_softmax", a.shape(), "empty last axis");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (Index r = 0; r < rows; ++r) {
    const T* x = av.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = T(0);
    for (Index i = 0; i < n; ++i) total += std::exp(x[i] - mx);
    const T lse = mx + std::log(total);
    for (Index i = 0; i < n; ++i) out[r * n + i] = x[i] - lse;
  }
  return make_result<T>("log_softmax", a.shape(), std::move(out), {&a}, [rows, n](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * n;
      T gsum = T(0);
      for (Index i = 0; i < n; ++i) gsum += g[i];
      for (Index i = 0; i < n; ++i) pa->grad[r * n + i] += g[i] - std::exp(self.value[r * n + i]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> logsumexp(const Tensor<T>& a) {
  if (a.rank() < 1 || a.shape().back() == 0) shape_fail1("logsumexp", a.shape(), "empty last axis");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const auto& av = a.values();
  std::vector<T> out(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const T* x = av.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    if (!std::isfinite(mx)) {
      out[r] = mx;
      continue;
    }
    T total = T(0);
    for (Index i = 0; i < n; ++i) total += std::exp(x[i] - mx);
    out[r] = mx + std::log(total);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  return make_result<T>("logsumexp", std::move(out_shape), std::move(out), {&a}, [rows, n](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    const auto& x = pa->value;
    for (Index r = 0; r < rows; ++r) {
      const T lse = self.value[r];
      if (!std::isfinite(lse)) continue;
      for (Index i = 0; i < n; ++i) pa->grad[r * n + i] += self.grad[r] * std::exp(x[r * n + i] - lse);
    }
  });
}

template <typename T>
Tensor<T> lstm_sequence(const Tensor<T>& xproj, const Tensor<T>& w_hh) {
  if (xproj.rank() != 3 || w_hh.rank() != 2 || w_hh.shape()[1] != 4 * w_hh.shape()[0] ||
      xproj.shape()[2] != w_hh.shape()[1]) {
    shape_fail("lstm_sequence", xproj.shape(), w_hh.shape(), "expected xproj [B, T, 4H] and w_hh [H, 4H]");
  }
  const Index batch = xproj.shape()[0], steps = xproj.shape()[1], hidden = w_hh.shape()[0];
  const Index g4 = 4 * hidden;
  const auto& xv = xproj.values();
  const T* w = w_hh.values().data();

  // Saved per step: gate activations [B, 4H], cell state and tanh(cell) [B, H].
  auto gates = std::make_shared<std::vector<T>>(static_cast<std::size_t>(steps * batch * g4));
  auto cells = std::make_shared<std::vector<T>>(static_cast<std::size_t>(steps * batch * hidden));
  auto tanh_cells = std::make_shared<std::vector<T>>(cells->size());
  std::vector<T> out(static_cast<std::size_t>(batch * steps * hidden));
  std::vector<T> h(static_cast<std::size_t>(batch * hidden), T(0));
  std::vector<T> c(h.size(), T(0));
  for (Index t = 0; t < steps; ++t) {
    T* gt = gates->data() + t * batch * g4;
    for (Index b = 0; b < batch; ++b) std::copy_n(xv.begin() + (b * steps + t) * g4, g4, gt + b * g4);
    kernels::gemm_nn(h.data(), w, gt, batch, hidden, g4, true);
    for (Index b = 0; b < batch; ++b) {
      kernels::lstm_pointwise(gt + b * g4, c.data() + b * hidden, h.data() + b * hidden,
                              tanh_cells->data() + (t * batch + b) * hidden, hidden);
      std::copy_n(c.begin() + b * hidden, hidden, cells->begin() + (t * batch + b) * hidden);
      std::copy_n(h.begin() + b * hidden, hidden, out.begin() + (b * steps + t) * hidden);
    }
  }

  return make_result<T>(
      "lstm_sequence", Shape{batch, steps, hidden}, std::move(out), {&xproj, &w_hh},
      [batch, steps, hidden, gates, cells, tanh_cells](NodeT<T>& self) {
        const Index g4 = 4 * hidden;
        NodeT<T>* px = grad_target(self, 0);
        NodeT<T>* pw = grad_target(self, 1);
        const T* w = self.parents[1]->value.data();
        const auto& hs = self.value;
        std::vector<T> dh_next(static_cast<std::size_t>(batch * hidden), T(0));
        std::vector<T> dc_next(dh_next.size(), T(0));
        std::vector<T> dgates(static_cast<std::size_t>(batch * g4));
        std::vector<T> h_prev(static_cast<std::size_t>(batch * hidden));
        for (Index t = steps - 1; t >= 0; --t) {
          const T* gt = gates->data() + t * batch * g4;
          for (Index b = 0; b < batch; ++b) {
            const T* gi = gt + b * g4;
            const T* gf = gi + hidden;
            const T* gg = gi + 2 * hidden;
            const T* go = gi + 3 * hidden;
            const T* tc = tanh_cells->data() + (t * batch + b) * hidden;
            const T* cprev = t > 0 ? cells->data() + ((t - 1) * batch + b) * hidden : nullptr;
            T* dg = dgates.data() + b * g4;
            for (Index j = 0; j < hidden; ++j) {
              const T dh = self.grad[(b * steps + t) * hidden + j] + dh_next[b * hidden + j];
              const T d_o = dh * tc[j];
              const T dc = dh * go[j] * (T(1) - tc[j] * tc[j]) + dc_next[b * hidden + j];
              const T d_i = dc * gg[j];
              const T d_g = dc * gi[j];
              const T d_f = cprev ? dc * cprev[j] : T(0);
              dc_next[b * hidden + j] = dc * gf[j];
              dg[j] = d_i * gi[j] * (T(1) - gi[j]);
              dg[hidden + j] = d_f * gf[j] * (T(1) - gf[j]);
              dg[2 * hidden + j] = d_g * (T(1) - gg[j] * gg[j]);
              dg[3 * hidden + j] = d_o * go[j] * (T(1) - go[j]);
            }
            if (px) {
              T* dst = px->grad.data() + (b * steps + t) * g4;
              for (Index j = 0; j < g4; ++j) dst[j] += dg[j];
            }
          }
          if (t > 0) {
            for (Index b = 0; b < batch; ++b) std::copy_n(hs.begin() + (b * steps + t - 1) * hidden, hidden, h_prev.begin() + b * hidden);
            if (pw) kernels::gemm_tn_acc(h_prev.data(), dgates.data(), pw->grad.data(), batch, hidden, g4);
            std::fill(dh_next.begin(), dh_next.end(), T(0));
            kernels::gemm_nt_acc(dgates.data(), w, dh_next.data(), batch, g4, hidden);
          }
        }
      });
}

template <typename T>
Tensor<T> additive_attention(const Tensor<T>& query, const Tensor<T>& keys, const Tensor<T>& v,
                             std::span<const Index> key_lengths, const std::vector<T>* log_prior) {
  if (query.rank() != 3 || keys.rank() != 3 || query.shape()[0] != keys.shape()[0] ||
      query.shape()[2] != keys.shape()[2]) {
    shape_fail("additive_attention", query.shape(), keys.shape(), "expected query [B, T, A] and keys [B, L, A]");
  }
  const Index batch = query.shape()[0], steps = query.shape()[1], max_len = keys.shape()[1], dim = query.shape()[2];
  if (v.numel() != dim) shape_fail("additive_attention", query.shape(), v.shape(), "v must have A entries");
  if (static_cast<Index>(key_lengths.size()) != batch) {
    shape_fail1("additive_attention", keys.shape(), "one key length per batch row required");
  }
  if (log_prior && static_cast<Index>(log_prior->size()) != batch * steps * max_len) {
    shape_fail1("additive_attention", keys.shape(), "log prior must be [B, T, L]");
  }
  std::vector<Index> lens(key_lengths.begin(), key_lengths.end());
  for (Index len : lens) {
    if (len < 1 || len > max_len) shape_fail1("additive_attention", keys.shape(), "key length out of range");
  }
  const bool record = GradMode::enabled() && (query.requires_grad() || keys.requires_grad() || v.requires_grad());
  auto hidden = std::make_shared<std::vector<T>>(record ? static_cast<std::size_t>(batch * steps * max_len * dim) : 0);
  std::vector<T> out(static_cast<std::size_t>(batch * steps * max_len));
  const T* qv = query.values().data();
  const T* kv = keys.values().data();
  const T* vv = v.values().data();
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < steps; ++t) {
      const Index row = b * steps + t;
      kernels::additive_attention_row(qv + row * dim, kv + b * max_len * dim, vv,
                                      log_prior ? log_prior->data() + row * max_len : nullptr, lens[b], max_len, dim,
                                      out.data() + row * max_len, record ? hidden->data() + row * max_len * dim : nullptr);
    }
  return make_result<T>(
      "additive_attention", Shape{batch, steps, max_len}, std::move(out), {&query, &keys, &v},
      [batch, steps, max_len, dim, lens = std::move(lens), hidden](NodeT<T>& self) {
        NodeT<T>* pq = grad_target(self, 0);
        NodeT<T>* pk = grad_target(self, 1);
        NodeT<T>* pv = grad_target(self, 2);
        const T* vv = self.parents[2]->value.data();
        std::vector<T> dscore(static_cast<std::size_t>(max_len));
        for (Index b = 0; b < batch; ++b)
          for (Index t = 0; t < steps; ++t) {
            const Index row = b * steps + t;
            const T* w = self.value.data() + row * max_len;
            const T* g = self.grad.data() + row * max_len;
            T dot = T(0);
            for (Index i = 0; i < lens[b]; ++i) dot += w[i] * g[i];
            for (Index i = 0; i < lens[b]; ++i) {
              const T ds = w[i] * (g[i] - dot);
              const T* th = hidden->data() + (row * max_len + i) * dim;
              for (Index a = 0; a < dim; ++a) {
                if (pv) pv->grad[a] += ds * th[a];
                const T dpre = ds * vv[a] * (T(1) - th[a] * th[a]);
                if (pq) pq->grad[row * dim + a] += dpre;
                if (pk) pk->grad[(b * max_len + i) * dim + a] += dpre;
              }
            }
          }
      });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& a, T eps) {
  if (a.rank() != 2 || a.shape()[0] < 1) shape_fail1("instance_norm", a.shape(), "expected [L >= 1, C]");
  const Index len = a.shape()[0], ch = a.shape()[1];
  const auto& av = a.values();
  std::vector<T> out(av.size());
  std::vector<T> inv_std(static_cast<std::size_t>(ch));
  for (Index c = 0; c < ch; ++c) {
    T m = T(0);
    for (Index l = 0; l < len; ++l) m += av[l * ch + c];
    m /= static_cast<T>(len);
    T var = T(0);
    for (Index l = 0; l < len; ++l) {
      const T d = av[l * ch + c] - m;
      var += d * d;
    }
    var /= static_cast<T>(len);
    inv_std[c] = T(1) / std::sqrt(var + eps);
    for (Index l = 0; l < len; ++l) out[l * ch + c] = (av[l * ch + c] - m) * inv_std[c];
  }
  return make_result<T>("instance_norm", a.shape(), std::move(out), {&a},
                        [len, ch, inv_std = std::move(inv_std)](NodeT<T>& self) {
                          NodeT<T>* pa = grad_target(self, 0);
                          if (!pa) return;
                          const auto& y = self.value;
                          const auto& g = self.grad;
                          for (Index c = 0; c < ch; ++c) {
                            T gm = T(0), gy = T(0);
                            for (Index l = 0; l < len; ++l) {
                              gm += g[l * ch + c];
                              gy += g[l * ch + c] * y[l * ch + c];
                            }
                            gm /= static_cast<T>(len);
                            gy /= static_cast<T>(len);
                            for (Index l = 0; l < len; ++l) {
                              pa->grad[l * ch + c] += inv_std[c] * (g[l * ch + c] - gm - y[l * ch + c] * gy);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> unfold_time(const Tensor<T>& a, Index kernel) {
  if (a.rank() != 2) shape_fail1("unfold_time", a.shape(), "expected [L, C]");
  if (kernel < 1 || kernel % 2 == 0) shape_fail1("unfold_time", a.shape(), "kernel must be odd and positive");
  const Index len = a.shape()[0], ch = a.shape()[1], pad = kernel / 2;
  const auto& av = a.values();
  std::vector<T> out(static_cast<std::size_t>(len * kernel * ch), T(0));
  for (Index l = 0; l < len; ++l)
    for (Index j = 0; j < kernel; ++j) {
      const Index src = l + j - pad;
      if (src < 0 || src >= len) continue;
      std::copy_n(av.begin() + src * ch, ch, out.begin() + (l * kernel + j) * ch);
    }
  return make_result<T>("unfold_time", Shape{len, kernel * ch}, std::move(out), {&a}, [len, ch, kernel, pad](NodeT<T>& self) {
    NodeT<T>* pa = grad_target(self, 0);
    if (!pa) return;
    for (Index l = 0; l < len; ++l)
      for (Index j = 0; j < kernel; ++j) {
        const Index src = l + j - pad;
        if (src < 0 || src >= len) continue;
        for (Index c = 0; c < ch; ++c) pa->grad[src * ch + c] += self.grad[(l * kernel + j) * ch + c];
      }
  });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return a.detach();
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets, std::span<const T> weights) {
  const auto n = static_cast<std::size_t>(logits.numel());
  if (targets.size() != n || weights.size() != n) {
    shape_fail1("bce_with_logits", logits.shape(), "targets and weights must match logits");
  }
  const auto& x = logits.values();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    // max(x, 0) - x*y + log(1 + exp(-|x|))
    const T l = std::max(x[i], T(0)) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
    total += weights[i] * l;
  }
  std::vector<T> tgt(targets.begin(), targets.end());
  std::vector<T> wts(weights.begin(), weights.end());
  return make_result<T>("bce_with_logits", Shape{}, std::vector<T>{total}, {&logits},
                        [tgt = std::move(tgt), wts = std::move(wts)](NodeT<T>& self) {
                          NodeT<T>* pl = grad_target(self, 0);
                          if (!pl) return;
                          const T g = self.grad[0];
                          for (std::size_t i = 0; i < tgt.size(); ++i) {
                            pl->grad[i] += g * wts[i] * (kernels::sigmoid(pl->value[i]) - tgt[i]);
                          }
                        });
}

#define ARFLOW_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                         \
  template Tensor<T> neg(const Tensor<T>&);                                                                   \
  template Tensor<T> exp(const Tensor<T>&);                                                                   \
  template Tensor<T> log(const Tensor<T>&);                                                                   \
  template Tensor<T> tanh(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                                  \
  template Tensor<T> softplus(const Tensor<T>&);                                                              \
  template Tensor<T> square(const Tensor<T>&);                                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                                  \
  template Tensor<T> sum_axis(const Tensor<T>&, int);                                                         \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                                        \
  template Tensor<T> var_axis(const Tensor<T>&, int);                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> transpose(const Tensor<T>&);                                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                              \
  template Tensor<T> slice(const Tensor<T>&, int, Index, Index);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                        \
  template Tensor<T> reverse(const Tensor<T>&, int);                                                          \
  template Tensor<T> reverse_time(const Tensor<T>&, std::span<const Index>);                                  \
  template Tensor<T> shift_time(const Tensor<T>&);                                                            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const Index>);                                   \
  template Tensor<T> repeat_rows(const Tensor<T>&, Index);                                                    \
  template Tensor<T> pad_stack(const std::vector<Tensor<T>>&, Index);                                         \
  template Tensor<T> softmax(const Tensor<T>&);                                                               \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                           \
  template Tensor<T> logsumexp(const Tensor<T>&);                                                             \
  template Tensor<T> lstm_sequence(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> additive_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                        std::span<const Index>, const std::vector<T>*);                        \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                                      \
  template Tensor<T> unfold_time(const Tensor<T>&, Index);                                                    \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                                         \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>, std::span<const T>);

ARFLOW_INSTANTIATE_OPS(float)
ARFLOW_INSTANTIATE_OPS(double)

}  // namespace arflow
