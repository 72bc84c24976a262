#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Dense double-precision tensors with a define-by-run reverse-mode tape.
// A Tensor is a cheap shared handle; values are written once by the op that
// creates them and treated as read-only afterwards. Parameter owners (the
// optimizer) may rewrite values between tapes via mutable_values().

namespace ran {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

inline void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make_unchecked(std::move(shape), {}, requires_grad, 0.0);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    if (!std::isfinite(v)) throw std::invalid_argument("Tensor::full: non-finite value");
    return make_unchecked(std::move(shape), {}, requires_grad, v);
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) + " wants " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    }
    detail::check_finite(data, "Tensor::from_data");
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }
  double value() const {
    if (numel() != 1)
      throw std::invalid_argument("Tensor::value: not a scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }

  // Owner-side mutation between tapes (optimizer updates, gradcheck nudges).
  std::vector<double>& mutable_values() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: rank-0 shapes are not supported");
    for (std::size_t e : shape) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape));
    }
  }

  static Tensor make_unchecked(Shape shape, std::vector<double> data, bool requires_grad,
                               double fill) {
    validate_shape(shape);
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    std::size_t n = shape_numel(shape);
    t.node_->shape = std::move(shape);
    if (data.empty())
      t.node_->value.assign(n, fill);
    else
      t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Result of a forward op. Finiteness of op outputs is asserted in debug
// builds only; user-facing factories always validate.
inline Tensor op_result(Shape shape, std::vector<double> value, bool requires_grad) {
#ifndef NDEBUG
  check_finite(value, "op output");
#endif
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  t.node()->value = std::move(value);
  return t;
}

inline void accumulate(const std::shared_ptr<Node>& n, std::size_t i, double g) {
  n->grad[i] += g;
}

}  // namespace detail

class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void run_backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

// Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Ops were appended
// in execution order, so the reverse walk is a valid topological order.
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  tape.run_backward();
}

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

// out[i,j] = sum_k x[i,k] W[k,j] + b[j]
inline Tensor affine(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2) {
    throw std::invalid_argument("affine: need rank-2 x and W, got " + shape_str(x.shape()) +
                                " and " + shape_str(W.shape()));
  }
  const std::size_t n = x.shape()[0], p = x.shape()[1];
  const std::size_t q = W.shape()[1];
  if (W.shape()[0] != p) {
    throw std::invalid_argument("affine: inner dimensions disagree: x " + shape_str(x.shape()) +
                                " vs W " + shape_str(W.shape()));
  }
  if (b.rank() != 1 || b.shape()[0] != q) {
    throw std::invalid_argument("affine: bias " + shape_str(b.shape()) + " does not match W " +
                                shape_str(W.shape()));
  }
  const auto& xv = x.values();
  const auto& wv = W.values();
  const auto& bv = b.values();
  std::vector<double> out(n * q);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * q;
    for (std::size_t j = 0; j < q; ++j) orow[j] = bv[j];
    for (std::size_t k = 0; k < p; ++k) {
      const double xv_ik = xv[i * p + k];
      const double* wrow = wv.data() + k * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += xv_ik * wrow[j];
    }
  }
  bool rg = x.requires_grad() || W.requires_grad() || b.requires_grad();
  Tensor res = detail::op_result({n, q}, std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), wn = W.node(), bn = b.node(), on = res.node(), n, p, q] {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < p; ++k) {
            const double* wrow = wn->value.data() + k * q;
            const double* grow = go.data() + i * q;
            double acc = 0.0;
            for (std::size_t j = 0; j < q; ++j) acc += wrow[j] * grow[j];
            xn->grad[i * p + k] += acc;
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < p; ++k) {
            const double xv_ik = xn->value[i * p + k];
            double* wgrow = wn->grad.data() + k * q;
            const double* grow = go.data() + i * q;
            for (std::size_t j = 0; j < q; ++j) wgrow[j] += xv_ik * grow[j];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < q; ++j) bn->grad[j] += go[i * q + j];
      }
    });
  }
  return res;
}

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  Tensor zero_bias = Tensor::zeros({b.shape()[1]});
  return affine(tape, a, b, zero_bias);
}

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_elementwise(Tape& tape, const Tensor& x, Fwd f, Dfn dfn) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  bool rg = x.requires_grad();
  Tensor res = op_result(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node(), dfn] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += dfn(xn->value[i], on->value[i]) * on->grad[i];
    });
  }
  return res;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor tanh(Tape& tape, const Tensor& x) {
  return detail::unary_elementwise(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::unary_elementwise(
      tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::unary_elementwise(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor res = detail::op_result(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([an = a.node(), bn = b.node(), on = res.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return res;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor res = detail::op_result(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([an = a.node(), bn = b.node(), on = res.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += bn->value[i] * on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += an->value[i] * on->grad[i];
      }
    });
  }
  return res;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  return detail::unary_elementwise(
      tape, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

// Numerically shifted softmax over a rank-1 tensor.
inline Tensor softmax(Tape& tape, const Tensor& x) {
  if (x.rank() != 1) {
    throw std::invalid_argument("softmax: need a rank-1 tensor, got " + shape_str(x.shape()));
  }
  const auto& xv = x.values();
  const double mx = *std::max_element(xv.begin(), xv.end());
  std::vector<double> out(xv.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  bool rg = x.requires_grad();
  Tensor res = detail::op_result(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node()] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      double dot = 0.0;
      for (std::size_t i = 0; i < on->grad.size(); ++i) dot += on->grad[i] * on->value[i];
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->value[i] * (on->grad[i] - dot);
    });
  }
  return res;
}

// log with the argument floored at `floor` for stability; d/dx is 1/x above
// the floor and 0 below it.
inline Tensor log_floored(Tape& tape, const Tensor& x, double floor = 1e-12) {
  return detail::unary_elementwise(
      tape, x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  bool rg = x.requires_grad();
  Tensor res = detail::op_result({1}, {s}, rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node()] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    });
  }
  return res;
}

// Mean over the spatial extent of an HxWxC map, one output per channel.
inline Tensor global_average_pool(Tape& tape, const Tensor& x) {
  if (x.rank() != 3) {
    throw std::invalid_argument("global_average_pool: need HxWxC, got " + shape_str(x.shape()));
  }
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  const double inv = 1.0 / static_cast<double>(H * W);
  std::vector<double> out(C, 0.0);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < H * W; ++i) {
    const double* row = xv.data() + i * C;
    for (std::size_t c = 0; c < C; ++c) out[c] += row[c];
  }
  for (double& v : out) v *= inv;
  bool rg = x.requires_grad();
  Tensor res = detail::op_result({C}, std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node(), H, W, C, inv] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < H * W; ++i) {
        double* row = xn->grad.data() + i * C;
        for (std::size_t c = 0; c < C; ++c) row[c] += on->grad[c] * inv;
      }
    });
  }
  return res;
}

enum class Padding { kSame, kValid };

// Cross-correlation over an HxWxCin map with a khxkwxCinxCout kernel.
inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& k, const Tensor& b,
                     std::size_t stride = 1, Padding padding = Padding::kSame) {
  if (x.rank() != 3 || k.rank() != 4) {
    throw std::invalid_argument("conv2d: need HxWxCin input and khxkwxCinxCout kernel, got " +
                                shape_str(x.shape()) + " and " + shape_str(k.shape()));
  }
  const std::size_t H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
  const std::size_t kh = k.shape()[0], kw = k.shape()[1], Cout = k.shape()[3];
  if (k.shape()[2] != Cin) {
    throw std::invalid_argument("conv2d: channel mismatch: input " + shape_str(x.shape()) +
                                " vs kernel " + shape_str(k.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernel extents must be odd");
  if (b.rank() != 1 || b.shape()[0] != Cout) {
    throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) + " does not match kernel " +
                                shape_str(k.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");

  const std::ptrdiff_t pad_y = padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kh / 2) : 0;
  const std::ptrdiff_t pad_x = padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kw / 2) : 0;
  const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  std::size_t Ho, Wo;
  if (padding == Padding::kSame) {
    Ho = (H + stride - 1) / stride;
    Wo = (W + stride - 1) / stride;
  } else {
    if (H < kh || W < kw) throw std::invalid_argument("conv2d: input smaller than kernel");
    Ho = (H - kh) / stride + 1;
    Wo = (W - kw) / stride + 1;
  }

  const auto& xv = x.values();
  const auto& kv = k.values();
  const auto& bv = b.values();
  std::vector<double> out(Ho * Wo * Cout);
  for (std::size_t yo = 0; yo < Ho; ++yo) {
    for (std::size_t xo = 0; xo < Wo; ++xo) {
      double* orow = out.data() + (yo * Wo + xo) * Cout;
      for (std::size_t c = 0; c < Cout; ++c) orow[c] = bv[c];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo * stride + ky) - pad_y;
        if (yi < 0 || yi >= Hs) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo * stride + kx) - pad_x;
          if (xi < 0 || xi >= Ws) continue;
          const double* xrow = xv.data() + (yi * Ws + xi) * Cin;
          const double* krow = kv.data() + ((ky * kw + kx) * Cin) * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double xci = xrow[ci];
            const double* kslice = krow + ci * Cout;
            for (std::size_t c = 0; c < Cout; ++c) orow[c] += xci * kslice[c];
          }
        }
      }
    }
  }
  bool rg = x.requires_grad() || k.requires_grad() || b.requires_grad();
  Tensor res = detail::op_result({Ho, Wo, Cout}, std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), kn = k.node(), bn = b.node(), on = res.node(), H, W, Cin, kh, kw,
                 Cout, Ho, Wo, stride, pad_y, pad_x] {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      if (xn->requires_grad) xn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
      for (std::size_t yo = 0; yo < Ho; ++yo) {
        for (std::size_t xo = 0; xo < Wo; ++xo) {
          const double* grow = go.data() + (yo * Wo + xo) * Cout;
          if (bn->requires_grad)
            for (std::size_t c = 0; c < Cout; ++c) bn->grad[c] += grow[c];
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo * stride + ky) - pad_y;
            if (yi < 0 || yi >= Hs) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo * stride + kx) - pad_x;
              if (xi < 0 || xi >= Ws) continue;
              const std::size_t xbase = (yi * Ws + xi) * Cin;
              const std::size_t kbase = (ky * kw + kx) * Cin * Cout;
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* kslice = kn->value.data() + kbase + ci * Cout;
                if (kn->requires_grad) {
                  const double xci = xn->value[xbase + ci];
                  double* kgrow = kn->grad.data() + kbase + ci * Cout;
                  for (std::size_t c = 0; c < Cout; ++c) kgrow[c] += xci * grow[c];
                }
                if (xn->requires_grad) {
                  double acc = 0.0;
                  for (std::size_t c = 0; c < Cout; ++c) acc += kslice[c] * grow[c];
                  xn->grad[xbase + ci] += acc;
                }
              }
            }
          }
        }
      }
    });
  }
  return res;
}

// Non-overlapping window maxima; gradient routes to the first maximal element
// in row-major window order.
inline Tensor maxpool2d(Tape& tape, const Tensor& x, std::size_t window = 2) {
  if (x.rank() != 3) {
    throw std::invalid_argument("maxpool2d: need HxWxC, got " + shape_str(x.shape()));
  }
  if (window == 0) throw std::invalid_argument("maxpool2d: window must be positive");
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  if (H % window != 0 || W % window != 0) {
    throw std::invalid_argument("maxpool2d: extents of " + shape_str(x.shape()) +
                                " not divisible by window " + std::to_string(window));
  }
  const std::size_t Ho = H / window, Wo = W / window;
  const auto& xv = x.values();
  std::vector<double> out(Ho * Wo * C);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t yo = 0; yo < Ho; ++yo)
    for (std::size_t xo = 0; xo < Wo; ++xo)
      for (std::size_t c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = ((yo * window + dy) * W + (xo * window + dx)) * C + c;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        const std::size_t oidx = (yo * Wo + xo) * C + c;
        out[oidx] = best;
        argmax[oidx] = best_idx;
      }
  bool rg = x.requires_grad();
  Tensor res = detail::op_result({Ho, Wo, C}, std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node(), argmax = std::move(argmax)] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[argmax[i]] += on->grad[i];
    });
  }
  return res;
}

namespace detail {

// Half-pixel-center bilinear weights along one axis: src extent `n`,
// continuous source index `s` (align-corners-false convention).
struct LerpCoord {
  std::size_t lo, hi;
  double t;  // weight of hi
};

inline LerpCoord lerp_coord(double s, std::size_t n) {
  double f = std::floor(s);
  std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(f);
  double t = s - f;
  std::ptrdiff_t hi = lo + 1;
  std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1;
  if (lo < 0) {
    lo = 0;
    hi = 0;
    t = 0.0;
  } else if (hi > last) {
    lo = last;
    hi = last;
    t = 0.0;
  }
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi), t};
}

}  // namespace detail

// Bilinear upsampling by an integer factor, align-corners-false. factor == 1
// copies values exactly.
inline Tensor bilinear_upsample(Tape& tape, const Tensor& x, std::size_t factor) {
  if (x.rank() != 3) {
    throw std::invalid_argument("bilinear_upsample: need HxWxC, got " + shape_str(x.shape()));
  }
  if (factor == 0) throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  const std::size_t Ho = H * factor, Wo = W * factor;
  const auto& xv = x.values();
  std::vector<double> out(Ho * Wo * C);
  std::vector<detail::LerpCoord> ys(Ho), xs(Wo);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t i = 0; i < Ho; ++i)
    ys[i] = detail::lerp_coord((static_cast<double>(i) + 0.5) * inv - 0.5, H);
  for (std::size_t j = 0; j < Wo; ++j)
    xs[j] = detail::lerp_coord((static_cast<double>(j) + 0.5) * inv - 0.5, W);
  for (std::size_t i = 0; i < Ho; ++i) {
    const auto& cy = ys[i];
    for (std::size_t j = 0; j < Wo; ++j) {
      const auto& cx = xs[j];
      const double* p00 = xv.data() + (cy.lo * W + cx.lo) * C;
      const double* p01 = xv.data() + (cy.lo * W + cx.hi) * C;
      const double* p10 = xv.data() + (cy.hi * W + cx.lo) * C;
      const double* p11 = xv.data() + (cy.hi * W + cx.hi) * C;
      double* orow = out.data() + (i * Wo + j) * C;
      const double w00 = (1.0 - cy.t) * (1.0 - cx.t), w01 = (1.0 - cy.t) * cx.t;
      const double w10 = cy.t * (1.0 - cx.t), w11 = cy.t * cx.t;
      if (cy.t == 0.0 && cx.t == 0.0) {
        for (std::size_t c = 0; c < C; ++c) orow[c] = p00[c];
      } else {
        for (std::size_t c = 0; c < C; ++c)
          orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  bool rg = x.requires_grad();
  Tensor res = detail::op_result({Ho, Wo, C}, std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node(), ys = std::move(ys), xs = std::move(xs), W, C,
                 Wo = Wo, Ho = Ho] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < Ho; ++i) {
        const auto& cy = ys[i];
        for (std::size_t j = 0; j < Wo; ++j) {
          const auto& cx = xs[j];
          const double* grow = on->grad.data() + (i * Wo + j) * C;
          const double w00 = (1.0 - cy.t) * (1.0 - cx.t), w01 = (1.0 - cy.t) * cx.t;
          const double w10 = cy.t * (1.0 - cx.t), w11 = cy.t * cx.t;
          double* g00 = xn->grad.data() + (cy.lo * W + cx.lo) * C;
          double* g01 = xn->grad.data() + (cy.lo * W + cx.hi) * C;
          double* g10 = xn->grad.data() + (cy.hi * W + cx.lo) * C;
          double* g11 = xn->grad.data() + (cy.hi * W + cx.hi) * C;
          for (std::size_t c = 0; c < C; ++c) {
            g00[c] += w00 * grow[c];
            g01[c] += w01 * grow[c];
            g10[c] += w10 * grow[c];
            g11[c] += w11 * grow[c];
          }
        }
      }
    });
  }
  return res;
}

// Stacks rank-1 tensors of equal width into an N x d matrix.
inline Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const std::size_t d = rows[0].numel();
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.numel() != d) {
      throw std::invalid_argument("stack_rows: row shape " + shape_str(r.shape()) +
                                  " does not match first row " + shape_str(rows[0].shape()));
    }
  }
  const std::size_t n = rows.size();
  std::vector<double> out(n * d);
  bool rg = false;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(rows[i].values().begin(), rows[i].values().end(), out.begin() + i * d);
    rg = rg || rows[i].requires_grad();
  }
  Tensor res = detail::op_result({n, d}, std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<detail::Node>> nodes(n);
    for (std::size_t i = 0; i < n; ++i) nodes[i] = rows[i].node();
    tape.record([nodes = std::move(nodes), on = res.node(), d] {
      if (on->grad.empty()) return;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        nodes[i]->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) nodes[i]->grad[j] += on->grad[i * d + j];
      }
    });
  }
  return res;
}

// Same data, new shape (copy with pass-through gradient).
inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  bool rg = x.requires_grad();
  Tensor res = detail::op_result(std::move(shape), x.values(), rg);
  if (rg) {
    tape.record([xn = x.node(), on = res.node()] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return res;
}

// Mean negative log-likelihood of the labelled entries of an M x G
// probability matrix; the log argument is floored at 1e-12.
inline Tensor batch_loss(Tape& tape, const Tensor& probs, const std::vector<std::size_t>& labels) {
  if (probs.rank() != 2) {
    throw std::invalid_argument("batch_loss: need MxG probabilities, got " +
                                shape_str(probs.shape()));
  }
  const std::size_t M = probs.shape()[0], G = probs.shape()[1];
  if (labels.size() != M) {
    throw std::invalid_argument("batch_loss: " + std::to_string(M) + " rows vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= G) {
      throw std::invalid_argument("batch_loss: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(G) + " classes");
    }
  }
  constexpr double kFloor = 1e-12;
  const auto& pv = probs.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < M; ++i) acc += std::log(std::max(pv[i * G + labels[i]], kFloor));
  const double loss = -acc / static_cast<double>(M);
  bool rg = probs.requires_grad();
  Tensor res = detail::op_result({1}, {loss}, rg);
  if (rg) {
    tape.record([pn = probs.node(), on = res.node(), labels, M, G] {
      if (on->grad.empty()) return;
      pn->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(M);
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t idx = i * G + labels[i];
        if (pn->value[idx] > 1e-12) pn->grad[idx] -= g / pn->value[idx];
      }
    });
  }
  return res;
}

}  // namespace ran
