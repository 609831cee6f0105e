#pragma once

// Minimal tape-based reverse-mode differentiation over float64 tensors.
//
// A Tape is built forward by calling the primitives below; every node stores its
// value and a closure that pushes the node's adjoint into its inputs. backward()
// walks the nodes once in reverse creation order, which is a valid reverse
// topological order because inputs always precede outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hyperrecon/error.hpp"

namespace hyperrecon::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (auto e : shape)
      if (e == 0) throw InvalidShape("Tensor: zero extent in " + shape_str(shape));
    if (data.size() != shape_size(shape))
      throw InvalidShape("Tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }
  static Tensor zeros(Shape s) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double item() const {
    if (data.size() != 1) throw InvalidUse("Tensor::item on non-scalar " + shape_str(shape));
    return data[0];
  }
};

struct Var {
  std::size_t id = 0;
};

class Tape;
using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

class Tape {
 public:
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  // Leaf whose gradient is reported by backward().
  Var parameter(Tensor value) {
    Var v = push(std::move(value), true, {});
    params_.push_back(v);
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_[in.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Var>& parameters() const { return params_; }

  // Adjoint buffer for v, allocated on first use. Only meaningful during backward.
  std::vector<double>& grad_buffer(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  // Gradient of the last backward() loss with respect to v (zeros if unreached).
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape);
    return Tensor(n.value.shape, n.grad);
  }

  /// Reverse sweep from a scalar node; returns gradients for parameter() leaves in
  /// registration order.
  std::vector<Tensor> backward(Var loss) {
    if (nodes_.at(loss.id).value.size() != 1)
      throw InvalidUse("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id].value.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (Var p : params_) out.push_back(grad(p));
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool needs, BackwardFn fn) {
    for (double x : value.data)
      if (!std::isfinite(x)) throw NumericalError("tape: non-finite value in node " + std::to_string(nodes_.size()));
    nodes_.push_back(Node{std::move(value), {}, needs, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Var> params_;
};

namespace detail {
inline void require_same(const Tape& t, Var a, Var b, const char* op) {
  if (t.shape(a) != t.shape(b))
    throw InvalidShape(std::string(op) + ": shape mismatch " + shape_str(t.shape(a)) + " vs " +
                       shape_str(t.shape(b)));
}
inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

// [m,k] x [k,n] -> [m,n]
inline Var matmul(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
    throw InvalidShape("matmul: " + shape_str(A.shape) + " x " + shape_str(B.shape));
  const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      const double* brow = B.data.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return t.record(Tensor({m, n}, std::move(out)), {a, b}, [a, b, m, k, n](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    const auto& B = tp.value(b).data;
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

inline Var add(Tape& t, Var a, Var b) {
  detail::require_same(t, a, b, "add");
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] + B.data[i];
  return t.record(Tensor(A.shape, std::move(out)), {a, b}, [a, b](Tape& tp, const std::vector<double>& g) {
    for (Var v : {a, b})
      if (tp.needs_grad(v)) {
        auto& gv = tp.grad_buffer(v);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
  });
}

// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::require_same(t, a, b, "mul");
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] * B.data[i];
  return t.record(Tensor(A.shape, std::move(out)), {a, b}, [a, b](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    const auto& B = tp.value(b).data;
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

inline Var scale(Tape& t, Var a, double c) {
  const auto& A = t.value(a);
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * A.data[i];
  return t.record(Tensor(A.shape, std::move(out)), {a}, [a, c](Tape& tp, const std::vector<double>& g) {
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var square(Tape& t, Var a) {
  const auto& A = t.value(a);
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] * A.data[i];
  return t.record(Tensor(A.shape, std::move(out)), {a}, [a](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * A[i] * g[i];
  });
}

inline Var leaky_relu(Tape& t, Var a, double slope) {
  const auto& A = t.value(a);
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] > 0.0 ? A.data[i] : slope * A.data[i];
  return t.record(Tensor(A.shape, std::move(out)), {a}, [a, slope](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += A[i] > 0.0 ? g[i] : slope * g[i];
  });
}

inline Var sum(Tape& t, Var a) {
  const auto& A = t.value(a);
  double s = 0.0;
  for (double x : A.data) s += x;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, const std::vector<double>& g) {
    auto& ga = tp.grad_buffer(a);
    for (double& x : ga) x += g[0];
  });
}

// sum |a_i|, with subgradient sign(0) = 0.
inline Var l1_norm(Tape& t, Var a) {
  const auto& A = t.value(a);
  double s = 0.0;
  for (double x : A.data) s += std::abs(x);
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g[0] * detail::sign(A[i]);
  });
}

inline Var reshape(Tape& t, Var a, Shape shape) {
  const auto& A = t.value(a);
  if (shape_size(shape) != A.size())
    throw InvalidShape("reshape: " + shape_str(A.shape) + " -> " + shape_str(shape));
  return t.record(Tensor(std::move(shape), A.data), {a}, [a](Tape& tp, const std::vector<double>& g) {
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// Contiguous block [offset, offset + size(shape)) of the flattened input.
inline Var slice(Tape& t, Var a, std::size_t offset, Shape shape) {
  const auto& A = t.value(a);
  const std::size_t n = shape_size(shape);
  if (offset + n > A.size())
    throw InvalidShape("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                       ") exceeds " + std::to_string(A.size()));
  std::vector<double> out(A.data.begin() + static_cast<std::ptrdiff_t>(offset),
                          A.data.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return t.record(Tensor(std::move(shape), std::move(out)), {a}, [a, offset](Tape& tp, const std::vector<double>& g) {
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
  });
}

namespace detail {

// Visits every (output row segment, input row segment) pair touched by a kernel tap
// (dy, dx) under zero padding: fn(out_offset, in_offset, length).
template <typename Fn>
inline void for_each_tap_row(std::ptrdiff_t h, std::ptrdiff_t w, std::ptrdiff_t dy, std::ptrdiff_t dx, Fn&& fn) {
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(h, h - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(w, w - dx);
  if (x1 <= x0) return;
  for (std::ptrdiff_t y = y0; y < y1; ++y)
    fn(static_cast<std::size_t>(y * w + x0), static_cast<std::size_t>((y + dy) * w + x0 + dx),
       static_cast<std::size_t>(x1 - x0));
}

}  // namespace detail

/// Stride-1 same-size convolution (cross-correlation) with zero padding.
/// x: [Cin,H,W], weight: [Cout,Cin,k,k] with k odd, bias: [Cout].
inline Var conv2d(Tape& t, Var x, Var weight, Var bias) {
  const auto& X = t.value(x);
  const auto& Wt = t.value(weight);
  const auto& Bs = t.value(bias);
  if (X.rank() != 3 || Wt.rank() != 4 || Wt.shape[1] != X.shape[0] || Wt.shape[2] != Wt.shape[3] ||
      Wt.shape[2] % 2 == 0 || Bs.size() != Wt.shape[0])
    throw InvalidShape("conv2d: input " + shape_str(X.shape) + ", weight " + shape_str(Wt.shape) + ", bias " +
                       shape_str(Bs.shape));
  const std::size_t cin = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t cout = Wt.shape[0], k = Wt.shape[2];
  const std::ptrdiff_t rad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);

  std::vector<double> out(cout * hw);
  for (std::size_t co = 0; co < cout; ++co) {
    double* o = out.data() + co * hw;
    std::fill(o, o + hw, Bs.data[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* in = X.data.data() + ci * hw;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = Wt.data[((co * cin + ci) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          detail::for_each_tap_row(ih, iw, static_cast<std::ptrdiff_t>(ky) - rad, static_cast<std::ptrdiff_t>(kx) - rad,
                                   [&](std::size_t oo, std::size_t io, std::size_t len) {
                                     double* dst = o + oo;
                                     const double* src = in + io;
                                     for (std::size_t j = 0; j < len; ++j) dst[j] += wv * src[j];
                                   });
        }
    }
  }

  return t.record(
      Tensor({cout, h, w}, std::move(out)), {x, weight, bias},
      [x, weight, bias, cin, cout, k, rad, ih, iw, hw](Tape& tp, const std::vector<double>& g) {
        const auto& X = tp.value(x).data;
        const auto& Wt = tp.value(weight).data;
        if (tp.needs_grad(bias)) {
          auto& gb = tp.grad_buffer(bias);
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += g[co * hw + i];
            gb[co] += s;
          }
        }
        const bool gw_needed = tp.needs_grad(weight);
        const bool gx_needed = tp.needs_grad(x);
        std::vector<double>* gw = gw_needed ? &tp.grad_buffer(weight) : nullptr;
        std::vector<double>* gx = gx_needed ? &tp.grad_buffer(x) : nullptr;
        for (std::size_t co = 0; co < cout; ++co) {
          const double* go = g.data() + co * hw;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = X.data() + ci * hw;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - rad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - rad;
                if (gw_needed) {
                  double s0 = 0.0, s1 = 0.0;
                  detail::for_each_tap_row(ih, iw, dy, dx, [&](std::size_t oo, std::size_t io, std::size_t len) {
                    const double* a = go + oo;
                    const double* b = in + io;
                    std::size_t j = 0;
                    for (; j + 1 < len; j += 2) {
                      s0 += a[j] * b[j];
                      s1 += a[j + 1] * b[j + 1];
                    }
                    for (; j < len; ++j) s0 += a[j] * b[j];
                  });
                  (*gw)[widx] += s0 + s1;
                }
                if (gx_needed) {
                  const double wv = Wt[widx];
                  if (wv == 0.0) continue;
                  double* gi = gx->data() + ci * hw;
                  detail::for_each_tap_row(ih, iw, dy, dx, [&](std::size_t oo, std::size_t io, std::size_t len) {
                    const double* a = go + oo;
                    double* dst = gi + io;
                    for (std::size_t j = 0; j < len; ++j) dst[j] += wv * a[j];
                  });
                }
              }
          }
        }
      });
}

/// Forward differences over the last two axes. [H,W] -> [2,H,W] and [C,H,W] ->
/// [C,2,H,W]: direction 0 holds x(i,j+1) - x(i,j), direction 1 holds x(i+1,j) - x(i,j);
/// the last column/row of each direction is zero (no wrap-around).
inline Var spatial_forward_diff(Tape& t, Var a) {
  const auto& A = t.value(a);
  if (A.rank() != 2 && A.rank() != 3)
    throw InvalidShape("spatial_forward_diff: expected [H,W] or [C,H,W], got " + shape_str(A.shape));
  const std::size_t h = A.shape[A.rank() - 2], w = A.shape[A.rank() - 1], hw = h * w;
  const std::size_t planes = A.rank() == 3 ? A.shape[0] : 1;
  Shape shape = A.rank() == 3 ? Shape{planes, 2, h, w} : Shape{2, h, w};
  std::vector<double> out(2 * planes * hw, 0.0);
  for (std::size_t c = 0; c < planes; ++c) {
    const double* x = A.data.data() + c * hw;
    double* o = out.data() + 2 * c * hw;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        if (j + 1 < w) o[i * w + j] = x[i * w + j + 1] - x[i * w + j];
        if (i + 1 < h) o[hw + i * w + j] = x[(i + 1) * w + j] - x[i * w + j];
      }
  }
  return t.record(Tensor(std::move(shape), std::move(out)), {a},
                  [a, planes, h, w, hw](Tape& tp, const std::vector<double>& g) {
                    auto& ga = tp.grad_buffer(a);
                    for (std::size_t c = 0; c < planes; ++c) {
                      double* gx = ga.data() + c * hw;
                      const double* go = g.data() + 2 * c * hw;
                      for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < w; ++j) {
                          if (j + 1 < w) {
                            gx[i * w + j + 1] += go[i * w + j];
                            gx[i * w + j] -= go[i * w + j];
                          }
                          if (i + 1 < h) {
                            gx[(i + 1) * w + j] += go[hw + i * w + j];
                            gx[i * w + j] -= go[hw + i * w + j];
                          }
                        }
                    }
                  });
}

/// Pixel magnitude of a 2-channel (real, imaginary) [2,H,W] image -> [H,W].
/// The gradient at a zero-magnitude pixel is taken as 0.
inline Var magnitude(Tape& t, Var a) {
  const auto& A = t.value(a);
  if (A.rank() != 3 || A.shape[0] != 2) throw InvalidShape("magnitude: expected [2,H,W], got " + shape_str(A.shape));
  const std::size_t h = A.shape[1], w = A.shape[2], hw = h * w;
  std::vector<double> out(hw);
  for (std::size_t i = 0; i < hw; ++i) out[i] = std::hypot(A.data[i], A.data[hw + i]);
  return t.record(Tensor({h, w}, std::move(out)), {a}, [a, hw](Tape& tp, const std::vector<double>& g) {
    const auto& A = tp.value(a).data;
    auto& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < hw; ++i) {
      const double m = std::hypot(A[i], A[hw + i]);
      if (m == 0.0) continue;
      ga[i] += g[i] * A[i] / m;
      ga[hw + i] += g[i] * A[hw + i] / m;
    }
  });
}

}  // namespace hyperrecon::ad
