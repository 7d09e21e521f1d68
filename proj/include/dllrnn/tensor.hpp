#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage, as with most
// array frameworks. Operations never write into their inputs' data; they only
// accumulate into input gradients during Tape::backward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dllrnn/errors.hpp"

namespace dllrnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  bool recorded = false;  // output of an op on some tape
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{1}, std::vector<T>{T(0)}) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorStorage<T>>()) {
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
  }

  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }

  // Gradient buffer, allocated as zeros on first access. Like the data it is
  // shared by every handle, so a const handle still exposes it for
  // accumulation by backward rules.
  std::span<T> grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy detached from any tape.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->data, requires_grad);
  }

 private:
  friend class Tape<T>;
  std::shared_ptr<detail::TensorStorage<T>> impl_;
};

// Ordered record of differentiable operations. Confined to one thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  // Registers `output` as produced by an operation whose backward rule is `fn`.
  void record(Tensor<T>& output, BackwardFn fn) {
    if (output.impl_->recorded) {
      throw ContractError("tensor is already the output of a recorded operation");
    }
    output.impl_->recorded = true;
    output.set_requires_grad(true);
    outputs_.push_back(output);
    backward_.push_back(std::move(fn));
  }

  // Populates dRoot/dLeaf for every leaf that requires grad. Leaf gradients
  // accumulate across calls; intermediate gradients are rebuilt each call.
  void backward(Tensor<T>& root) {
    if (root.numel() != 1) {
      throw ContractError("backward root must be a scalar, got shape " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) {
      throw ContractError("backward root does not depend on any tensor requiring grad");
    }
    for (auto& out : outputs_) std::ranges::fill(out.grad(), T(0));
    root.grad()[0] += T(1);
    for (std::size_t i = backward_.size(); i-- > 0;) backward_[i]();
  }

  std::size_t size() const { return backward_.size(); }

  void clear() {
    outputs_.clear();
    backward_.clear();
  }

 private:
  std::vector<Tensor<T>> outputs_;
  std::vector<BackwardFn> backward_;
};

template <typename T>
void backward(Tensor<T>& root, Tape<T>& tape) {
  tape.backward(root);
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  auto out = Tensor<T>::zeros({m, n});
  {
    auto A = a.data();
    auto Bd = b.data();
    auto C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * Bd[p * n + j];
      }
    }
  }
  if (any_requires_grad<T>({&a, &b})) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      auto G = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto gA = a.grad();
        auto Bd = std::as_const(b).data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bd[p * n + j];
            gA[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        auto gB = b.grad();
        auto A = std::as_const(a).data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += aip * G[i * n + j];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise ops with broadcasting

enum class EwKind { add, mul, sigmoid, tanh };

namespace detail {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> stride_a;  // 0 on broadcast axes
  std::vector<std::size_t> stride_b;
};

inline std::vector<std::size_t> padded_strides(const Shape& shape, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - shape.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i + offset] = shape[i] == 1 ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t eb = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("incompatible broadcast shapes " + shape_str(a) + " and " +
                           shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return {out, padded_strides(a, out), padded_strides(b, out)};
}

// Calls fn(out_index, a_offset, b_offset) in row-major output order.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out_shape.size();
  const std::size_t total = shape_numel(plan.out_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < total; ++i) {
    fn(i, oa, ob);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      oa += plan.stride_a[ax];
      ob += plan.stride_b[ax];
      if (idx[ax] < plan.out_shape[ax]) break;
      oa -= plan.stride_a[ax] * idx[ax];
      ob -= plan.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

template <typename T>
Tensor<T> ew_op(Tape<T>& tape, EwKind kind, const Tensor<T>& a,
                const std::optional<Tensor<T>>& b = std::nullopt) {
  const bool binary = kind == EwKind::add || kind == EwKind::mul;
  if (binary != b.has_value()) {
    throw ContractError(binary ? "binary elementwise op needs two operands"
                               : "unary elementwise op takes one operand");
  }
  if (!binary) {
    auto out = Tensor<T>::zeros(a.shape());
    auto x = a.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = kind == EwKind::sigmoid ? detail::sigmoid(x[i]) : std::tanh(x[i]);
    }
    if (a.requires_grad()) {
      tape.record(out, [a, out, kind]() mutable {
        auto g = std::as_const(out).grad();
        auto y = std::as_const(out).data();
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T d = kind == EwKind::sigmoid ? y[i] * (T(1) - y[i]) : T(1) - y[i] * y[i];
          ga[i] += g[i] * d;
        }
      });
    }
    return out;
  }

  const Tensor<T>& rhs = *b;
  auto plan = detail::broadcast_plan(a.shape(), rhs.shape());
  auto out = Tensor<T>::zeros(plan.out_shape);
  {
    auto x = a.data();
    auto z = rhs.data();
    auto y = out.data();
    if (kind == EwKind::add) {
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        y[i] = x[ia] + z[ib];
      });
    } else {
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        y[i] = x[ia] * z[ib];
      });
    }
  }
  if (any_requires_grad<T>({&a, &rhs})) {
    tape.record(out, [a, rhs, out, kind, plan = std::move(plan)]() mutable {
      auto g = std::as_const(out).grad();
      const bool ga_on = a.requires_grad(), gb_on = rhs.requires_grad();
      std::span<T> ga = ga_on ? a.grad() : std::span<T>{};
      std::span<T> gb = gb_on ? rhs.grad() : std::span<T>{};
      auto x = std::as_const(a).data();
      auto z = std::as_const(rhs).data();
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if (kind == EwKind::add) {
          if (ga_on) ga[ia] += g[i];
          if (gb_on) gb[ib] += g[i];
        } else {
          if (ga_on) ga[ia] += g[i] * z[ib];
          if (gb_on) gb[ib] += g[i] * x[ia];
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return ew_op(tape, EwKind::add, a, std::optional<Tensor<T>>(b));
}
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return ew_op(tape, EwKind::mul, a, std::optional<Tensor<T>>(b));
}
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a) {
  return ew_op(tape, EwKind::sigmoid, a);
}
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a) {
  return ew_op(tape, EwKind::tanh, a);
}

// ---------------------------------------------------------------------------
// structural ops

namespace detail {

// Splits a shape around `axis` into (outer, extent, inner) block sizes.
inline std::tuple<std::size_t, std::size_t, std::size_t> axis_blocks(const Shape& s,
                                                                     std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

}  // namespace detail

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of an empty list");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat off-axis extents differ: " + shape_str(ref) + " vs " +
                           shape_str(s));
    }
    out_shape[axis] += s[axis];
    needs_grad = needs_grad || p.requires_grad();
  }
  auto out = Tensor<T>::zeros(out_shape);
  auto [outer, total, inner] = detail::axis_blocks(out_shape, axis);
  {
    auto y = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t e = p.extent(axis);
      auto x = p.data();
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.begin() + o * e * inner, e * inner,
                    y.begin() + (o * total + offset) * inner);
      }
      offset += e;
    }
  }
  if (needs_grad) {
    tape.record(out, [parts, out, axis, outer = outer, total = total, inner = inner]() mutable {
      auto g = std::as_const(out).grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t e = p.extent(axis);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < e * inner; ++i)
              gp[o * e * inner + i] += g[(o * total + offset) * inner + i];
        }
        offset += e;
      }
    });
  }
  return out;
}

// Sub-range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& a, std::size_t axis, std::size_t begin,
                std::size_t end) {
  if (axis >= a.rank() || begin >= end || end > a.extent(axis)) {
    throw DimensionError("invalid slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  auto out = Tensor<T>::zeros(out_shape);
  auto [outer, total, inner] = detail::axis_blocks(a.shape(), axis);
  const std::size_t e = end - begin;
  {
    auto x = a.data();
    auto y = out.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + (o * total + begin) * inner, e * inner, y.begin() + o * e * inner);
  }
  if (a.requires_grad()) {
    tape.record(out, [a, out, begin, e, outer = outer, total = total, inner = inner]() mutable {
      auto g = std::as_const(out).grad();
      auto ga = a.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < e * inner; ++i)
          ga[(o * total + begin) * inner + i] += g[o * e * inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  if (a.requires_grad()) {
    tape.record(out, [a, out]() mutable {
      const T g = std::as_const(out).grad()[0];
      for (auto& v : a.grad()) v += g;
    });
  }
  return out;
}

// Multiplication by a constant.
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  auto out = Tensor<T>::zeros(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
  if (a.requires_grad()) {
    tape.record(out, [a, out, factor]() mutable {
      auto g = std::as_const(out).grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// Same data under a new shape with equal element count.
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (a.requires_grad()) {
    tape.record(out, [a, out]() mutable {
      auto g = std::as_const(out).grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

}  // namespace dllrnn
