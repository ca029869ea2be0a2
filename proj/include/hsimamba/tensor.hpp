#pragma once

// Dense n-d tensors with reverse-mode differentiation. The op set is exactly
// what the model needs: affine maps, 1-d/2-d convolution, layer norm, a few
// elementwise/reduction ops and a stable softmax cross entropy. Ops record
// backward closures onto the active Tape; without an active tape they run
// gradient-free.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hsimamba/common.hpp"

namespace hsi {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Node(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    MemoryMeter::on_alloc(data.size() * sizeof(T));
  }
  ~Node() {
    MemoryMeter::on_free((data.size() + grad.size()) * sizeof(T));
  }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  void ensure_grad() {
    if (grad.empty()) {
      grad.assign(data.size(), T(0));
      MemoryMeter::on_alloc(grad.size() * sizeof(T));
    }
  }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::vector<std::size_t> contiguous_strides(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size());
  std::size_t acc = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    s[d] = acc;
    acc *= shape[d];
  }
  return s;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = detail::shape_numel(shape);
    return from_node(std::make_shared<detail::Node<T>>(std::move(shape), std::vector<T>(n, T(0))));
  }
  static Tensor full(std::vector<std::size_t> shape, T value) {
    std::size_t n = detail::shape_numel(shape);
    return from_node(std::make_shared<detail::Node<T>>(std::move(shape), std::vector<T>(n, value)));
  }
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> values) {
    if (detail::shape_numel(shape) != values.size()) {
      throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                       detail::shape_str(shape));
    }
    return from_node(std::make_shared<detail::Node<T>>(std::move(shape), std::move(values)));
  }
  static Tensor scalar(T value) { return from_data({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node()->shape; }
  std::size_t ndim() const { return node()->shape.size(); }
  std::size_t numel() const { return node()->data.size(); }
  std::size_t extent(std::size_t axis) const { return node()->shape.at(axis); }

  std::span<const T> values() const { return node()->data; }
  /// Direct write access; used by the optimizer and by finite-difference
  /// probes on leaf tensors between forward passes.
  std::span<T> mutable_values() { return node()->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of " + std::to_string(numel()) + " values");
    return node()->data[0];
  }
  T at(std::initializer_list<std::size_t> idx) const {
    const auto& sh = shape();
    if (idx.size() != sh.size()) throw ShapeError("at(): rank mismatch");
    auto strides = detail::contiguous_strides(sh);
    std::size_t flat = 0, d = 0;
    for (std::size_t i : idx) {
      if (i >= sh[d]) throw ShapeError("at(): index out of range");
      flat += i * strides[d++];
    }
    return node()->data[flat];
  }

  Tensor& set_requires_grad(bool v) {
    node()->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return node()->requires_grad; }

  bool has_grad() const { return !node()->grad.empty(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw ValueError("grad(): no gradient recorded for this tensor");
    return node()->grad;
  }
  void zero_grad() {
    auto& g = node()->grad;
    if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
  }

  std::shared_ptr<detail::Node<T>> node_ptr() const { return node_; }
  detail::Node<T>* node() const {
    if (!node_) throw ValueError("use of undefined tensor");
    return node_.get();
  }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Records op nodes in creation order (which is topological by construction)
/// and replays backward rules in reverse. One tape per forward pass; a tape
/// cannot be reused after backward().
template <typename T>
class Tape {
 public:
  Tape() {
    if (active_tape()) throw ValueError("a tape is already active in this context");
    active_tape() = this;
  }
  ~Tape() { active_tape() = nullptr; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_tape(); }

  void record(std::shared_ptr<detail::Node<T>> n) { nodes_.push_back(std::move(n)); }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and visits every recorded node exactly once
  /// in reverse creation order, accumulating into leaf grads.
  void backward(const Tensor<T>& loss) {
    if (used_) throw ValueError("backward() called twice on the same tape");
    if (loss.numel() != 1) {
      throw ShapeError("backward() needs a scalar loss, got " +
                       detail::shape_str(loss.shape()));
    }
    used_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = *nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(n);
    }
  }

 private:
  static Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
  }
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
  bool used_ = false;
};

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericsError(std::string(op) + ": non-finite value produced");
    }
  }
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Shared op epilogue: finite-check the result, then register it on the
/// active tape when some input participates in differentiation.
template <typename T>
Tensor<T> finalize(std::shared_ptr<Node<T>> out, const char* op,
                   std::initializer_list<const Tensor<T>*> inputs,
                   std::function<void(Node<T>&)> backward) {
  check_finite(out->data, op);
  if (Tape<T>::active() && any_requires_grad<T>(inputs)) {
    out->requires_grad = true;
    out->parents.reserve(inputs.size());
    for (const Tensor<T>* t : inputs) out->parents.push_back(t->node_ptr());
    out->backward = std::move(backward);
    Tape<T>::active()->record(out);
  }
  return Tensor<T>::from_node(std::move(out));
}

inline int normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcasting ops

/// add/mul broadcast the right operand into the left: ranks must match and
/// each rhs extent is either equal to the lhs extent or 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size()) throw ShapeError("add: rank mismatch");
  for (std::size_t d = 0; d < sa.size(); ++d) {
    if (sb[d] != sa[d] && sb[d] != 1) {
      throw ShapeError("add: cannot broadcast " + detail::shape_str(sb) + " into " +
                       detail::shape_str(sa));
    }
  }
  const std::size_t rank = sa.size();
  auto bstr = detail::contiguous_strides(sb);
  std::vector<std::size_t> beff(rank);
  for (std::size_t d = 0; d < rank; ++d) beff[d] = (sb[d] == 1) ? 0 : bstr[d];

  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  std::vector<std::size_t> coord(rank, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[bi];
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      bi += beff[d];
      if (coord[d] < sa[d]) break;
      coord[d] = 0;
      bi -= beff[d] * sa[d];
    }
  }
  FlopCounter::add(out.size());

  auto node = std::make_shared<detail::Node<T>>(sa, std::move(out));
  return detail::finalize<T>(
      node, "add", {&a, &b}, [sa, beff](detail::Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const std::size_t rank = sa.size();
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          std::vector<std::size_t> coord(rank, 0);
          std::size_t bi = 0;
          for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pb.grad[bi] += n.grad[i];
            for (std::size_t d = rank; d-- > 0;) {
              ++coord[d];
              bi += beff[d];
              if (coord[d] < sa[d]) break;
              coord[d] = 0;
              bi -= beff[d] * sa[d];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size()) throw ShapeError("mul: rank mismatch");
  for (std::size_t d = 0; d < sa.size(); ++d) {
    if (sb[d] != sa[d] && sb[d] != 1) {
      throw ShapeError("mul: cannot broadcast " + detail::shape_str(sb) + " into " +
                       detail::shape_str(sa));
    }
  }
  const std::size_t rank = sa.size();
  auto bstr = detail::contiguous_strides(sb);
  std::vector<std::size_t> beff(rank);
  for (std::size_t d = 0; d < rank; ++d) beff[d] = (sb[d] == 1) ? 0 : bstr[d];

  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  std::vector<std::size_t> coord(rank, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[bi];
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      bi += beff[d];
      if (coord[d] < sa[d]) break;
      coord[d] = 0;
      bi -= beff[d] * sa[d];
    }
  }
  FlopCounter::add(out.size());

  auto node = std::make_shared<detail::Node<T>>(sa, std::move(out));
  return detail::finalize<T>(
      node, "mul", {&a, &b}, [sa, beff](detail::Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const std::size_t rank = sa.size();
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        std::vector<std::size_t> coord(rank, 0);
        std::size_t bi = 0;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.data[bi];
          if (pb.requires_grad) pb.grad[bi] += n.grad[i] * pa.data[i];
          for (std::size_t d = rank; d-- > 0;) {
            ++coord[d];
            bi += beff[d];
            if (coord[d] < sa[d]) break;
            coord[d] = 0;
            bi -= beff[d] * sa[d];
          }
        }
      });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  FlopCounter::add(out.size());
  auto node = std::make_shared<detail::Node<T>>(a.shape(), std::move(out));
  return detail::finalize<T>(node, "mul_scalar", {&a}, [c](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(xv[i]);
    double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    out[i] = static_cast<T>(v * s);
  }
  FlopCounter::add(2 * out.size());
  auto node = std::make_shared<detail::Node<T>>(x.shape(), std::move(out));
  return detail::finalize<T>(node, "silu", {&x}, [](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double v = static_cast<double>(p.data[i]);
      double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      p.grad[i] += n.grad[i] * static_cast<T>(s * (1.0 + v * (1.0 - s)));
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(std::tanh(static_cast<double>(xv[i])));
  FlopCounter::add(out.size());
  auto node = std::make_shared<detail::Node<T>>(x.shape(), std::move(out));
  return detail::finalize<T>(node, "tanh", {&x}, [](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      T y = n.data[i];
      p.grad[i] += n.grad[i] * (T(1) - y * y);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops (pure data movement; zero flops)

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> new_shape) {
  if (detail::shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: " + detail::shape_str(x.shape()) + " -> " +
                     detail::shape_str(new_shape) + " changes element count");
  }
  auto old_shape = x.shape();
  std::vector<T> out(x.values().begin(), x.values().end());
  auto node = std::make_shared<detail::Node<T>>(std::move(new_shape), std::move(out));
  return detail::finalize<T>(node, "reshape", {&x}, [](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, int axis) {
  const auto& sh = x.shape();
  int ax = detail::normalize_axis(axis, sh.size(), "flip");
  auto strides = detail::contiguous_strides(sh);
  const std::size_t len = sh[ax];
  const std::size_t stride = strides[ax];
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  std::vector<std::size_t> coord(sh.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t src = i + (len - 1 - 2 * coord[ax]) * stride;
    out[i] = xv[src];
    for (std::size_t d = sh.size(); d-- > 0;) {
      if (++coord[d] < sh[d]) break;
      coord[d] = 0;
    }
  }
  auto node = std::make_shared<detail::Node<T>>(sh, std::move(out));
  return detail::finalize<T>(node, "flip", {&x}, [sh, len, stride, ax](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    std::vector<std::size_t> coord(sh.size(), 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      std::size_t src = i + (len - 1 - 2 * coord[static_cast<std::size_t>(ax)]) * stride;
      p.grad[src] += n.grad[i];
      for (std::size_t d = sh.size(); d-- > 0;) {
        if (++coord[d] < sh[d]) break;
        coord[d] = 0;
      }
    }
  });
}

template <typename T>
Tensor<T> swap_axes(const Tensor<T>& x, int axis_a, int axis_b) {
  const auto& sh = x.shape();
  int a = detail::normalize_axis(axis_a, sh.size(), "swap_axes");
  int b = detail::normalize_axis(axis_b, sh.size(), "swap_axes");
  std::vector<std::size_t> out_shape = sh;
  std::swap(out_shape[a], out_shape[b]);

  auto in_strides = detail::contiguous_strides(sh);
  std::vector<std::size_t> src_stride(sh.size());
  for (std::size_t d = 0; d < sh.size(); ++d) src_stride[d] = in_strides[d];
  std::swap(src_stride[a], src_stride[b]);  // stride of input axis feeding out axis d

  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  std::vector<std::size_t> coord(sh.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[src];
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++coord[d];
      src += src_stride[d];
      if (coord[d] < out_shape[d]) break;
      coord[d] = 0;
      src -= src_stride[d] * out_shape[d];
    }
  }
  auto node = std::make_shared<detail::Node<T>>(out_shape, std::move(out));
  return detail::finalize<T>(node, "swap_axes", {&x}, [out_shape, src_stride](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    std::vector<std::size_t> coord(out_shape.size(), 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      p.grad[src] += n.grad[i];
      for (std::size_t d = out_shape.size(); d-- > 0;) {
        ++coord[d];
        src += src_stride[d];
        if (coord[d] < out_shape[d]) break;
        coord[d] = 0;
        src -= src_stride[d] * out_shape[d];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
  const auto& sh = x.shape();
  int ax = detail::normalize_axis(axis, sh.size(), "mean");
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= sh[d];
  for (std::size_t d = ax + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::size_t len = sh[ax];

  std::vector<std::size_t> out_shape;
  for (std::size_t d = 0; d < sh.size(); ++d) {
    if (static_cast<int>(d) != ax) out_shape.push_back(sh[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  const auto& xv = x.values();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t base = (o * len + j) * inner;
      for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += xv[base + in];
    }
  }
  const T inv = T(1) / static_cast<T>(len);
  for (auto& v : out) v *= inv;
  FlopCounter::add(xv.size() + out.size());

  auto node = std::make_shared<detail::Node<T>>(out_shape, std::move(out));
  return detail::finalize<T>(node, "mean", {&x}, [outer, inner, len, inv](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t base = (o * len + j) * inner;
        for (std::size_t in = 0; in < inner; ++in) {
          p.grad[base + in] += n.grad[o * inner + in] * inv;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto& xv = x.values();
  T acc = T(0);
  for (T v : xv) acc += v;
  FlopCounter::add(xv.size());
  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{1}, std::vector<T>{acc});
  return detail::finalize<T>(node, "sum", {&x}, [](detail::Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Affine maps and convolutions

/// y = x.w + b with x:[M,Din], w:[Din,Dout], b:[Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
    throw ShapeError("linear: expected x[M,Din], w[Din,Dout], b[Dout]");
  }
  const std::size_t m = x.extent(0), din = x.extent(1);
  const std::size_t dout = w.extent(1);
  if (w.extent(0) != din || b.extent(0) != dout) {
    throw ShapeError("linear: shapes do not conform: x" + detail::shape_str(x.shape()) + " w" +
                     detail::shape_str(w.shape()) + " b" + detail::shape_str(b.shape()));
  }
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<T> out(m * dout);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t o = 0; o < dout; ++o) out[r * dout + o] = bv[o];
    for (std::size_t i = 0; i < din; ++i) {
      const T xi = xv[r * din + i];
      const T* wrow = &wv[i * dout];
      T* yrow = &out[r * dout];
      for (std::size_t o = 0; o < dout; ++o) yrow[o] += xi * wrow[o];
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(m) * din * dout + m * dout);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{m, dout}, std::move(out));
  return detail::finalize<T>(node, "linear", {&x, &w, &b}, [m, din, dout](detail::Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t i = 0; i < din; ++i) {
          T acc = T(0);
          const T* wrow = &pw.data[i * dout];
          const T* grow = &n.grad[r * dout];
          for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * wrow[o];
          px.grad[r * din + i] += acc;
        }
      }
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        const T* grow = &n.grad[r * dout];
        for (std::size_t i = 0; i < din; ++i) {
          const T xi = px.data[r * din + i];
          T* wgrow = &pw.grad[i * dout];
          for (std::size_t o = 0; o < dout; ++o) wgrow[o] += xi * grow[o];
        }
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        const T* grow = &n.grad[r * dout];
        for (std::size_t o = 0; o < dout; ++o) pb.grad[o] += grow[o];
      }
    }
  });
}

/// y[i] = sum_j a[i,j] v[j] with a:[M,N], v:[N].
template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.ndim() != 2 || v.ndim() != 1 || a.extent(1) != v.extent(0)) {
    throw ShapeError("matvec: expected a[M,N], v[N]");
  }
  const std::size_t m = a.extent(0), nn = a.extent(1);
  const auto& av = a.values();
  const auto& vv = v.values();
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < nn; ++j) acc += av[i * nn + j] * vv[j];
    out[i] = acc;
  }
  FlopCounter::add(static_cast<std::uint64_t>(m) * nn);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{m}, std::move(out));
  return detail::finalize<T>(node, "matvec", {&a, &v}, [m, nn](detail::Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pv = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < nn; ++j) pa.grad[i * nn + j] += n.grad[i] * pv.data[j];
      }
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < nn; ++j) pv.grad[j] += pa.data[i * nn + j] * n.grad[i];
      }
    }
  });
}

/// Dense 1-d convolution, kernel length 3, zero padding 1, stride 1.
/// x:[N,C,L], kernel:[Cout,Cin,3], bias:[Cout]; output length equals L.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.ndim() != 3 || kernel.ndim() != 3 || bias.ndim() != 1) {
    throw ShapeError("conv1d: expected x[N,C,L], kernel[Cout,Cin,3], bias[Cout]");
  }
  const std::size_t n = x.extent(0), cin = x.extent(1), len = x.extent(2);
  const std::size_t cout = kernel.extent(0);
  if (kernel.extent(1) != cin) {
    throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.extent(1)) +
                     " input channels, input has " + std::to_string(cin));
  }
  if (kernel.extent(2) != 3) throw ShapeError("conv1d: kernel length must be 3");
  if (bias.extent(0) != cout) throw ShapeError("conv1d: bias/kernel channel mismatch");

  const auto& xv = x.values();
  const auto& kv = kernel.values();
  const auto& bv = bias.values();
  std::vector<T> out(n * cout * len);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* yrow = &out[(b * cout + co) * len];
      for (std::size_t l = 0; l < len; ++l) yrow[l] = bv[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xrow = &xv[(b * cin + ci) * len];
        const T* krow = &kv[(co * cin + ci) * 3];
        for (std::size_t l = 0; l < len; ++l) {
          T acc = krow[1] * xrow[l];
          if (l > 0) acc += krow[0] * xrow[l - 1];
          if (l + 1 < len) acc += krow[2] * xrow[l + 1];
          yrow[l] += acc;
        }
      }
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(n) * cout * len * cin * 3 +
                   static_cast<std::uint64_t>(n) * cout * len);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{n, cout, len}, std::move(out));
  return detail::finalize<T>(node, "conv1d", {&x, &kernel, &bias}, [n, cin, cout, len](detail::Node<T>& nd) {
    auto& px = *nd.parents[0];
    auto& pk = *nd.parents[1];
    auto& pb = *nd.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pk.requires_grad) pk.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        const T* grow = &nd.grad[(b * cout + co) * len];
        if (pb.requires_grad) {
          T acc = T(0);
          for (std::size_t l = 0; l < len; ++l) acc += grow[l];
          pb.grad[co] += acc;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* xrow = &px.data[(b * cin + ci) * len];
          const T* krow = &pk.data[(co * cin + ci) * 3];
          T* xgrow = px.requires_grad ? &px.grad[(b * cin + ci) * len] : nullptr;
          T* kgrow = pk.requires_grad ? &pk.grad[(co * cin + ci) * 3] : nullptr;
          for (std::size_t l = 0; l < len; ++l) {
            const T g = grow[l];
            if (xgrow) {
              xgrow[l] += krow[1] * g;
              if (l > 0) xgrow[l - 1] += krow[0] * g;
              if (l + 1 < len) xgrow[l + 1] += krow[2] * g;
            }
            if (kgrow) {
              kgrow[1] += xrow[l] * g;
              if (l > 0) kgrow[0] += xrow[l - 1] * g;
              if (l + 1 < len) kgrow[2] += xrow[l + 1] * g;
            }
          }
        }
      }
    }
  });
}

/// Dense 2-d convolution, 3x3 kernel, zero padding 1, stride 1.
/// x:[N,Cin,H,W], kernel:[Cout,Cin,3,3], bias:[Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.ndim() != 4 || kernel.ndim() != 4 || bias.ndim() != 1) {
    throw ShapeError("conv2d: expected x[N,Cin,H,W], kernel[Cout,Cin,3,3], bias[Cout]");
  }
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = kernel.extent(0);
  if (kernel.extent(1) != cin || kernel.extent(2) != 3 || kernel.extent(3) != 3 ||
      bias.extent(0) != cout) {
    throw ShapeError("conv2d: kernel/bias shapes do not conform");
  }
  const auto& xv = x.values();
  const auto& kv = kernel.values();
  const auto& bv = bias.values();
  std::vector<T> out(n * cout * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* yplane = &out[(b * cout + co) * h * w];
      for (std::size_t i = 0; i < h * w; ++i) yplane[i] = bv[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xplane = &xv[(b * cin + ci) * h * w];
        const T* k9 = &kv[(co * cin + ci) * 9];
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            T acc = T(0);
            for (int dr = -1; dr <= 1; ++dr) {
              const int rr = static_cast<int>(r) + dr;
              if (rr < 0 || rr >= static_cast<int>(h)) continue;
              for (int dc = -1; dc <= 1; ++dc) {
                const int cc = static_cast<int>(c) + dc;
                if (cc < 0 || cc >= static_cast<int>(w)) continue;
                acc += k9[(dr + 1) * 3 + (dc + 1)] * xplane[rr * w + cc];
              }
            }
            yplane[r * w + c] += acc;
          }
        }
      }
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(n) * cout * h * w * cin * 9 +
                   static_cast<std::uint64_t>(n) * cout * h * w);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{n, cout, h, w}, std::move(out));
  return detail::finalize<T>(node, "conv2d", {&x, &kernel, &bias}, [n, cin, cout, h, w](detail::Node<T>& nd) {
    auto& px = *nd.parents[0];
    auto& pk = *nd.parents[1];
    auto& pb = *nd.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pk.requires_grad) pk.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        const T* gplane = &nd.grad[(b * cout + co) * h * w];
        if (pb.requires_grad) {
          T acc = T(0);
          for (std::size_t i = 0; i < h * w; ++i) acc += gplane[i];
          pb.grad[co] += acc;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* xplane = &px.data[(b * cin + ci) * h * w];
          const T* k9 = &pk.data[(co * cin + ci) * 9];
          T* xg = px.requires_grad ? &px.grad[(b * cin + ci) * h * w] : nullptr;
          T* kg = pk.requires_grad ? &pk.grad[(co * cin + ci) * 9] : nullptr;
          for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
              const T g = gplane[r * w + c];
              for (int dr = -1; dr <= 1; ++dr) {
                const int rr = static_cast<int>(r) + dr;
                if (rr < 0 || rr >= static_cast<int>(h)) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                  const int cc = static_cast<int>(c) + dc;
                  if (cc < 0 || cc >= static_cast<int>(w)) continue;
                  const std::size_t ki = (dr + 1) * 3 + (dc + 1);
                  if (xg) xg[rr * w + cc] += k9[ki] * g;
                  if (kg) kg[ki] += xplane[rr * w + cc] * g;
                }
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and loss

/// Row-wise layer norm: each row of x:[N,F] is shifted/scaled to zero mean and
/// unit (biased) variance, then affinely transformed by gamma/beta.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1) {
    throw ShapeError("layernorm: expected x[N,F], gamma[F], beta[F]");
  }
  const std::size_t n = x.extent(0), f = x.extent(1);
  if (gamma.extent(0) != f || beta.extent(0) != f) {
    throw ShapeError("layernorm: gamma/beta length " + std::to_string(gamma.extent(0)) +
                     " does not match feature count " + std::to_string(f));
  }
  if (f < 1) throw ShapeError("layernorm: empty feature axis");
  if (!(eps > T(0))) throw ValueError("layernorm: eps must be positive");

  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<T> out(n * f);
  std::vector<T> xhat(n * f);
  std::vector<T> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = &xv[r * f];
    T mu = T(0);
    for (std::size_t i = 0; i < f; ++i) mu += row[i];
    mu /= static_cast<T>(f);
    T var = T(0);
    for (std::size_t i = 0; i < f; ++i) {
      const T d = row[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(f);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < f; ++i) {
      const T h = (row[i] - mu) * inv;
      xhat[r * f + i] = h;
      out[r * f + i] = gv[i] * h + bv[i];
    }
  }
  FlopCounter::add(5 * static_cast<std::uint64_t>(n) * f);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{n, f}, std::move(out));
  return detail::finalize<T>(
      node, "layernorm", {&x, &gamma, &beta},
      [n, f, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& pb = *nd.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          const T* g = &nd.grad[r * f];
          const T* h = &xhat[r * f];
          if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t i = 0; i < f; ++i) {
              if (pg.requires_grad) pg.grad[i] += g[i] * h[i];
              if (pb.requires_grad) pb.grad[i] += g[i];
            }
          }
          if (px.requires_grad) {
            // a = gamma * g; dx = (a - mean(a) - xhat * mean(a*xhat)) * inv_std
            T m1 = T(0), m2 = T(0);
            for (std::size_t i = 0; i < f; ++i) {
              const T a = pg.data[i] * g[i];
              m1 += a;
              m2 += a * h[i];
            }
            m1 /= static_cast<T>(f);
            m2 /= static_cast<T>(f);
            for (std::size_t i = 0; i < f; ++i) {
              const T a = pg.data[i] * g[i];
              px.grad[r * f + i] += (a - m1 - h[i] * m2) * inv_std[r];
            }
          }
        }
      });
}

/// Mean negative log-likelihood over rows, log-sum-exp stabilized.
/// logits:[N,K], labels in [0,K). Gradient: (softmax - onehot) / N.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: expected logits[N,K]");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ValueError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                       std::to_string(k) + ")");
    }
  }
  const auto& lv = logits.values();
  std::vector<T> softmax(n * k);
  T loss = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = &lv[r * k];
    T mx = row[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    T denom = T(0);
    for (std::size_t c = 0; c < k; ++c) {
      const T e = std::exp(row[c] - mx);
      softmax[r * k + c] = e;
      denom += e;
    }
    for (std::size_t c = 0; c < k; ++c) softmax[r * k + c] /= denom;
    const T lse = mx + std::log(denom);
    loss += lse - row[static_cast<std::size_t>(labels[r])];
  }
  loss /= static_cast<T>(n);
  FlopCounter::add(4 * static_cast<std::uint64_t>(n) * k);

  auto node = std::make_shared<detail::Node<T>>(std::vector<std::size_t>{1}, std::vector<T>{loss});
  return detail::finalize<T>(
      node, "softmax_cross_entropy", {&logits},
      [n, k, labels, softmax = std::move(softmax)](detail::Node<T>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = nd.grad[0] / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < k; ++c) {
            T v = softmax[r * k + c];
            if (c == static_cast<std::size_t>(labels[r])) v -= T(1);
            p.grad[r * k + c] += g * v;
          }
        }
      });
}

}  // namespace hsi
