#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tape is explicit and lives for one forward pass. Tensors obtained from
// Tape::watch() carry a node handle; every op whose inputs touch a tape records
// an adjoint closure on it. Tensors without a handle are constants, and ops on
// constants only compute values.
//
// There is no implicit broadcasting except scalar-with-tensor in the binary ops.
// Everything else is spelled out with reshape/expand.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "suda/errors.hpp"

namespace suda::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

struct NodeRef {
  Tape* tape = nullptr;
  std::size_t id = 0;

  explicit operator bool() const { return tape != nullptr; }
};

class Tensor {
 public:
  // Rank-0 zero.
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return data_; }
  // Mutable access to raw values. Mutating a taped tensor does not touch the
  // value recorded on the tape; callers use this on detached tensors only.
  std::span<double> values() { return data_; }
  const std::vector<double>& vector() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.at(1) + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.at(1) + c]; }

  double item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool on_tape() const { return static_cast<bool>(node_); }
  const NodeRef& node() const { return node_; }

  Tensor detached() const {
    Tensor t = *this;
    t.node_ = {};
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  NodeRef node_;
};

// Accumulation target handed to an adjoint; index k refers to the k-th input of the op.
class GradSink {
 public:
  GradSink(std::vector<std::vector<double>>& grads, const std::vector<std::size_t>& inputs,
           const std::vector<std::size_t>& sizes)
      : grads_(grads), inputs_(inputs), sizes_(sizes) {}

  static constexpr std::size_t kConstant = std::numeric_limits<std::size_t>::max();

  bool wants(std::size_t k) const { return inputs_[k] != kConstant; }

  // Zero-initialized on first use.
  std::span<double> buffer(std::size_t k) {
    auto& g = grads_[inputs_[k]];
    if (g.empty()) g.assign(sizes_[inputs_[k]], 0.0);
    return g;
  }

 private:
  std::vector<std::vector<double>>& grads_;
  const std::vector<std::size_t>& inputs_;
  const std::vector<std::size_t>& sizes_;
};

using Adjoint = std::function<void(std::span<const double> upstream, GradSink& sink)>;

class Gradients {
 public:
  Gradients(const Tape* tape, std::vector<std::vector<double>> grads, std::vector<Shape> shapes)
      : tape_(tape), grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  // Gradient of the root with respect to t; zeros when t did not influence the root.
  Tensor of(const Tensor& t) const {
    if (t.node().tape != tape_) throw ContractError("gradient requested for a tensor that is not on this tape");
    const auto id = t.node().id;
    if (grads_[id].empty()) return Tensor::zeros(shapes_[id]);
    return Tensor(shapes_[id], grads_[id]);
  }

 private:
  const Tape* tape_;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a leaf and returns a handle-carrying copy.
  Tensor watch(const Tensor& t) {
    Tensor out = t.detached();
    out.node_ = {this, push(out.shape(), {}, nullptr)};
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  // Records an op result. `inputs` lists every operand; operands on another
  // tape are rejected, operands on no tape are treated as constants.
  template <class MakeAdjoint>
  static Tensor record(Tensor value, std::span<const Tensor* const> inputs, MakeAdjoint&& make_adjoint) {
    Tape* tape = nullptr;
    for (const Tensor* in : inputs) {
      if (!in->on_tape()) continue;
      if (tape && in->node().tape != tape) throw ContractError("operands recorded on different tapes");
      tape = in->node().tape;
    }
    if (!tape) return value;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) ids.push_back(in->on_tape() ? in->node().id : GradSink::kConstant);
    value.node_ = {tape, tape->push(value.shape(), std::move(ids), make_adjoint())};
    return value;
  }

  template <class MakeAdjoint>
  static Tensor record(Tensor value, std::initializer_list<const Tensor*> inputs, MakeAdjoint&& make_adjoint) {
    return record(std::move(value), std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                  std::forward<MakeAdjoint>(make_adjoint));
  }

  Gradients backward(const Tensor& root) const {
    if (root.node().tape != this) throw ContractError("backward root is not on this tape");
    if (root.size() != 1) throw ContractError("backward root must be a scalar, got shape " + shape_string(root.shape()));
    std::vector<std::vector<double>> grads(nodes_.size());
    std::vector<std::size_t> sizes(nodes_.size());
    std::vector<Shape> shapes(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      sizes[i] = numel(nodes_[i].shape);
      shapes[i] = nodes_[i].shape;
    }
    grads[root.node().id] = {1.0};
    for (std::size_t id = root.node().id + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (grads[id].empty() || !node.adjoint) continue;
      GradSink sink(grads, node.inputs, sizes);
      // Copy: the sink may reallocate other entries but never this one; the
      // copy keeps the upstream view stable regardless.
      const std::vector<double> upstream = grads[id];
      node.adjoint(upstream, sink);
    }
    return Gradients(this, std::move(grads), std::move(shapes));
  }

 private:
  struct Node {
    Shape shape;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;
  };

  std::size_t push(Shape shape, std::vector<std::size_t> inputs, Adjoint adjoint) {
    nodes_.push_back({std::move(shape), std::move(inputs), std::move(adjoint)});
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

inline void require_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(t.shape()));
  }
}

// outer x extent x inner view of a tensor around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

enum class Broadcast { None, Left, Right };

inline Broadcast binary_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (b.size() == 1) return Broadcast::Right;
  if (a.size() == 1) return Broadcast::Left;
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " differ and neither is a scalar");
}

// Elementwise binary op with scalar broadcasting. `f` computes the value, `da`
// and `db` the partial derivatives at (x, y).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  const Broadcast bc = binary_broadcast(a, b, op);
  const Shape out_shape = bc == Broadcast::Left ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  auto lhs = [&](std::size_t i) { return bc == Broadcast::Left ? a[0] : a[i]; };
  auto rhs = [&](std::size_t i) { return bc == Broadcast::Right ? b[0] : b[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(lhs(i), rhs(i));
  return Tape::record(Tensor(out_shape, std::move(out)), {&a, &b}, [&] {
    return Adjoint([av = a.vector(), bv = b.vector(), bc, n, da, db](std::span<const double> g, GradSink& sink) {
      auto x = [&](std::size_t i) { return bc == Broadcast::Left ? av[0] : av[i]; };
      auto y = [&](std::size_t i) { return bc == Broadcast::Right ? bv[0] : bv[i]; };
      if (sink.wants(0)) {
        auto ga = sink.buffer(0);
        for (std::size_t i = 0; i < n; ++i) ga[bc == Broadcast::Left ? 0 : i] += g[i] * da(x(i), y(i));
      }
      if (sink.wants(1)) {
        auto gb = sink.buffer(1);
        for (std::size_t i = 0; i < n; ++i) gb[bc == Broadcast::Right ? 0 : i] += g[i] * db(x(i), y(i));
      }
    });
  });
}

// Elementwise unary op; `df(x, y)` is the derivative given input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  Tensor value(a.shape(), std::move(out));
  return Tape::record(std::move(value), {&a}, [&] {
    return Adjoint([av = a.vector(), df](std::span<const double> g, GradSink& sink) {
      auto ga = sink.buffer(0);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * df(av[i]);
    });
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: inner extents disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out(Shape{m, n});
  detail::MutMap(out.values().data(), m, n).noalias() =
      detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
  return Tape::record(std::move(out), {&a, &b}, [&] {
    return Adjoint([av = a.vector(), bv = b.vector(), m, k, n](std::span<const double> g, GradSink& sink) {
      detail::ConstMap dc(g.data(), m, n);
      if (sink.wants(0)) {
        detail::MutMap(sink.buffer(0).data(), m, k).noalias() += dc * detail::ConstMap(bv.data(), k, n).transpose();
      }
      if (sink.wants(1)) {
        detail::MutMap(sink.buffer(1).data(), k, n).noalias() += detail::ConstMap(av.data(), m, k).transpose() * dc;
      }
    });
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return Tape::record(std::move(out), {&a}, [&] {
    return Adjoint([m, n](std::span<const double> g, GradSink& sink) {
      auto ga = sink.buffer(0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.values()) {
    if (v == 0.0) throw DomainError("div: zero divisor");
  }
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sigmoid(const Tensor& a) {
  auto f = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return detail::unary(a, f, [f](double x) {
    const double s = f(x);
    return s * (1.0 - s);
  });
}

// log(sigmoid(x)) without forming sigmoid(x); stays finite for large |x|.
inline Tensor log_sigmoid(const Tensor& a) {
  auto f = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  auto sig_neg = [](double x) {
    // 1 - sigmoid(x)
    if (x >= 0) {
      const double e = std::exp(-x);
      return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
  };
  return detail::unary(a, f, sig_neg);
}

inline Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline Tensor sqrt(const Tensor& a) {
  for (double v : a.values()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return detail::unary(a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax family

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::require_axis(x, axis, "softmax");
  const auto v = detail::axis_view(x.shape(), axis);
  if (v.extent == 0) throw DimensionError("softmax over an empty axis");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
      double total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double ex = std::exp(x[base + e * v.inner] - mx);
        out[base + e * v.inner] = ex;
        total += ex;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  return Tape::record(out, {&x}, [&] {
    return Adjoint([y = out.vector(), v](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.extent * v.inner + in;
          double dot = 0;
          for (std::size_t e = 0; e < v.extent; ++e) dot += g[base + e * v.inner] * y[base + e * v.inner];
          for (std::size_t e = 0; e < v.extent; ++e) {
            const std::size_t i = base + e * v.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  });
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  detail::require_axis(x, axis, "log_softmax");
  const auto v = detail::axis_view(x.shape(), axis);
  if (v.extent == 0) throw DimensionError("log_softmax over an empty axis");
  Tensor out(x.shape());
  std::vector<double> probs(x.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
      double total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) total += std::exp(x[base + e * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t e = 0; e < v.extent; ++e) {
        const std::size_t i = base + e * v.inner;
        out[i] = x[i] - lse;
        probs[i] = std::exp(out[i]);
      }
    }
  }
  return Tape::record(std::move(out), {&x}, [&] {
    return Adjoint([p = std::move(probs), v](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.extent * v.inner + in;
          double total = 0;
          for (std::size_t e = 0; e < v.extent; ++e) total += g[base + e * v.inner];
          for (std::size_t e = 0; e < v.extent; ++e) {
            const std::size_t i = base + e * v.inner;
            gx[i] += g[i] - p[i] * total;
          }
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions. Reduced axes are dropped from the output shape.

enum class Reduce { Sum, Mean, Max };

inline Tensor reduce(Reduce kind, const Tensor& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(x.rank(), false);
  for (auto ax : axes) {
    detail::require_axis(x, ax, "reduce");
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t group = 1;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (reduced[i]) {
      group *= x.extent(i);
    } else {
      out_shape.push_back(x.extent(i));
    }
  }
  if (kind != Reduce::Sum && group == 0) throw DimensionError("reduce over an empty extent");

  // Map every input element to its output slot.
  std::vector<std::size_t> target(x.size());
  {
    std::vector<std::size_t> out_stride(x.rank(), 0);
    std::size_t s = 1;
    for (std::size_t i = x.rank(); i-- > 0;) {
      if (!reduced[i]) {
        out_stride[i] = s;
        s *= x.extent(i);
      }
    }
    std::vector<std::size_t> idx(x.rank(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t t = 0;
      for (std::size_t i = 0; i < x.rank(); ++i) t += idx[i] * out_stride[i];
      target[flat] = t;
      for (std::size_t i = x.rank(); i-- > 0;) {
        if (++idx[i] < x.extent(i)) break;
        idx[i] = 0;
      }
    }
  }

  const std::size_t out_n = numel(out_shape);
  Tensor out(out_shape, kind == Reduce::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> argmax(kind == Reduce::Max ? out_n : 0, 0);
  for (std::size_t flat = 0; flat < x.size(); ++flat) {
    const std::size_t t = target[flat];
    if (kind == Reduce::Max) {
      if (x[flat] > out[t]) {
        out[t] = x[flat];
        argmax[t] = flat;
      }
    } else {
      out[t] += x[flat];
    }
  }
  if (kind == Reduce::Mean) {
    for (auto& v : out.values()) v /= static_cast<double>(group);
  }
  return Tape::record(std::move(out), {&x}, [&] {
    return Adjoint([kind, target = std::move(target), argmax = std::move(argmax), group](std::span<const double> g,
                                                                                          GradSink& sink) {
      auto gx = sink.buffer(0);
      if (kind == Reduce::Max) {
        for (std::size_t t = 0; t < argmax.size(); ++t) gx[argmax[t]] += g[t];
        return;
      }
      const double w = kind == Reduce::Mean ? 1.0 / static_cast<double>(group) : 1.0;
      for (std::size_t flat = 0; flat < target.size(); ++flat) gx[flat] += w * g[target[flat]];
    });
  });
}

inline std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

inline Tensor sum(const Tensor& x, std::vector<std::size_t> axes) { return reduce(Reduce::Sum, x, std::move(axes)); }
inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes) { return reduce(Reduce::Mean, x, std::move(axes)); }
inline Tensor max(const Tensor& x, std::vector<std::size_t> axes) { return reduce(Reduce::Max, x, std::move(axes)); }
inline Tensor sum(const Tensor& x) { return sum(x, all_axes(x)); }
inline Tensor mean(const Tensor& x) { return mean(x, all_axes(x)); }

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  return Tape::record(Tensor(std::move(shape), x.vector()), {&x}, [&] {
    return Adjoint([](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Tensor& first = parts.front();
  detail::require_axis(first, axis, "concat");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch " + shape_string(p.shape()));
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != axis && p.extent(i) != first.extent(i)) {
        throw DimensionError("concat: extents disagree between " + shape_string(first.shape()) + " and " +
                             shape_string(p.shape()));
      }
    }
    out_shape[axis] += p.extent(axis);
  }
  const auto v = detail::axis_view(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t e = p.extent(axis);
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(p.values().begin() + o * e * v.inner, e * v.inner,
                  out.values().begin() + (o * v.extent + offset) * v.inner);
    }
    offset += e;
  }

  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.extent(axis));
  return Tape::record(std::move(out), inputs, [&] {
    return Adjoint([v, extents, offsets](std::span<const double> g, GradSink& sink) {
      for (std::size_t k = 0; k < extents.size(); ++k) {
        if (!sink.wants(k)) continue;
        auto gp = sink.buffer(k);
        const std::size_t e = extents[k];
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t i = 0; i < e * v.inner; ++i)
            gp[o * e * v.inner + i] += g[(o * v.extent + offsets[k]) * v.inner + i];
      }
    });
  });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require_axis(x, axis, "slice");
  if (begin > end || end > x.extent(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_string(x.shape()));
  }
  const auto v = detail::axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t e = end - begin;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(x.values().begin() + (o * v.extent + begin) * v.inner, e * v.inner,
                out.values().begin() + o * e * v.inner);
  }
  return Tape::record(std::move(out), {&x}, [&] {
    return Adjoint([v, e, begin](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < e * v.inner; ++i) gx[(o * v.extent + begin) * v.inner + i] += g[o * e * v.inner + i];
    });
  });
}

// Swaps the last two axes (a batched transpose).
inline Tensor swap_last_axes(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("swap_last_axes: rank < 2 for " + shape_string(x.shape()));
  const std::size_t r = x.extent(x.rank() - 2), c = x.extent(x.rank() - 1);
  const std::size_t outer = x.size() / std::max<std::size_t>(r * c, 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[o * r * c + j * r + i] = x[o * r * c + i * c + j];
  return Tape::record(std::move(out), {&x}, [&] {
    return Adjoint([outer, r, c](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[o * r * c + i * c + j] += g[o * r * c + j * r + i];
    });
  });
}

// Repeats an extent-1 axis `count` times.
inline Tensor expand(const Tensor& x, std::size_t axis, std::size_t count) {
  detail::require_axis(x, axis, "expand");
  if (x.extent(axis) != 1) {
    throw DimensionError("expand: axis " + std::to_string(axis) + " of " + shape_string(x.shape()) +
                         " must have extent 1");
  }
  const auto v = detail::axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(x.values().begin() + o * v.inner, v.inner, out.values().begin() + (o * count + c) * v.inner);
  return Tape::record(std::move(out), {&x}, [&] {
    return Adjoint([v, count](std::span<const double> g, GradSink& sink) {
      auto gx = sink.buffer(0);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t c = 0; c < count; ++c)
          for (std::size_t i = 0; i < v.inner; ++i) gx[o * v.inner + i] += g[(o * count + c) * v.inner + i];
    });
  });
}

// x[rows x n] + bias[n] broadcast over rows, spelled with expand.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_row_bias");
  if (bias.size() != x.extent(1)) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " vs rows " + shape_string(x.shape()));
  }
  return add(x, expand(reshape(bias, {1, x.extent(1)}), 0, x.extent(0)));
}

// ---------------------------------------------------------------------------
// Optimizer

// Plain SGD with heavy-ball momentum: v <- mu*v + g; p <- p - lr*v.
struct Sgd {
  double lr = 0.01;
  double momentum = 0.0;

  void step(Tensor& param, const Tensor& grad, Tensor& velocity) const {
    if (grad.shape() != param.shape() || velocity.shape() != param.shape()) {
      throw DimensionError("sgd: parameter " + shape_string(param.shape()) + ", gradient " +
                           shape_string(grad.shape()) + ", velocity " + shape_string(velocity.shape()));
    }
    auto p = param.values();
    auto v = velocity.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + grad[i];
      p[i] -= lr * v[i];
    }
  }
};

}  // namespace suda::ad
