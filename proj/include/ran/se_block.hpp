#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "ran/rng.hpp"
#include "ran/tensor.hpp"

// Squeeze-and-Excitation block with an additive skip: squeeze by global
// average pooling, excite through a two-layer bottleneck gate, then scale
// each channel by (1 + gate). With the skip disabled the block is the plain
// SE scaling x * gate.

namespace ran {

struct SEParams {
  Tensor w1, b1;  // C -> bottleneck
  Tensor w2, b2;  // bottleneck -> C
  std::size_t channels = 0;
  std::size_t ratio = 0;
};

inline std::size_t se_bottleneck_width(std::size_t channels, std::size_t ratio) {
  return std::max<std::size_t>(channels / std::max<std::size_t>(ratio, 1), 4);
}

inline SEParams se_init(std::size_t channels, std::size_t ratio, Rng& rng) {
  if (channels < 1) throw std::invalid_argument("se_init: channels must be >= 1");
  const std::size_t mid = se_bottleneck_width(channels, ratio);
  SEParams p;
  p.channels = channels;
  p.ratio = ratio;
  std::vector<double> w1(channels * mid), w2(mid * channels);
  glorot_uniform_fill(rng, w1, channels, mid);
  glorot_uniform_fill(rng, w2, mid, channels);
  p.w1 = Tensor::from_data({channels, mid}, std::move(w1), true);
  p.b1 = Tensor::zeros({mid}, true);
  p.w2 = Tensor::from_data({mid, channels}, std::move(w2), true);
  p.b2 = Tensor::zeros({channels}, true);
  return p;
}

namespace detail {

// out[.,.,c] = x[.,.,c] * (gate[c] + skip); gate is a rank-1 channel vector.
inline Tensor channel_scale(Tape& tape, const Tensor& x, const Tensor& gate, double skip) {
  const std::size_t C = x.shape()[2];
  if (gate.rank() != 1 || gate.shape()[0] != C) {
    throw std::invalid_argument("channel_scale: gate " + shape_str(gate.shape()) +
                                " does not match map " + shape_str(x.shape()));
  }
  const std::size_t HW = x.shape()[0] * x.shape()[1];
  const auto& xv = x.values();
  const auto& gv = gate.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t c = 0; c < C; ++c) out[i * C + c] = xv[i * C + c] * (gv[c] + skip);
  bool rg = x.requires_grad() || gate.requires_grad();
  Tensor res = op_result(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([xn = x.node(), gn = gate.node(), on = res.node(), HW, C, skip] {
      if (on->grad.empty()) return;
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < HW; ++i)
          for (std::size_t c = 0; c < C; ++c)
            xn->grad[i * C + c] += (gn->value[c] + skip) * on->grad[i * C + c];
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t i = 0; i < HW; ++i)
          for (std::size_t c = 0; c < C; ++c)
            gn->grad[c] += xn->value[i * C + c] * on->grad[i * C + c];
      }
    });
  }
  return res;
}

}  // namespace detail

inline Tensor se_forward(Tape& tape, const Tensor& x, const SEParams& p, bool with_skip = true) {
  if (x.rank() != 3) {
    throw std::invalid_argument("se_forward: need HxWxC, got " + shape_str(x.shape()));
  }
  if (x.shape()[2] != p.channels) {
    throw std::invalid_argument("se_forward: map " + shape_str(x.shape()) + " vs params for " +
                                std::to_string(p.channels) + " channels");
  }
  Tensor z = global_average_pool(tape, x);
  Tensor zr = reshape(tape, z, {1, p.channels});
  Tensor hidden = relu(tape, affine(tape, zr, p.w1, p.b1));
  Tensor gate2d = sigmoid(tape, affine(tape, hidden, p.w2, p.b2));
  Tensor gate = reshape(tape, gate2d, {p.channels});
  return detail::channel_scale(tape, x, gate, with_skip ? 1.0 : 0.0);
}

}  // namespace ran
