#pragma once

#include <stdexcept>
#include <vector>

#include "ran/regions.hpp"
#include "ran/tensor.hpp"

// Fixed-size pooling of a feature map over a continuous box. Each output bin
// takes exactly one bilinear sample at its center; pixel centers sit at
// integer + 0.5, and sample neighborhoods clamp at the borders. Boxes are
// constants, so only the feature map receives gradient.

namespace ran {

inline Tensor roi_pool(Tape& tape, const Tensor& feat, const Box& box, std::size_t pooled_size) {
  if (feat.rank() != 3) {
    throw std::invalid_argument("roi_pool: need HxWxC features, got " + shape_str(feat.shape()));
  }
  if (pooled_size < 1) throw std::invalid_argument("roi_pool: pooled_size must be >= 1");
  const std::size_t H = feat.shape()[0], W = feat.shape()[1], C = feat.shape()[2];
  if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
    throw std::invalid_argument("roi_pool: degenerate box");
  }
  if (box.x0 < 0.0 || box.y0 < 0.0 || box.x1 > static_cast<double>(W) ||
      box.y1 > static_cast<double>(H)) {
    throw std::invalid_argument("roi_pool: box outside the feature map");
  }
  const std::size_t P = pooled_size;
  std::vector<detail::LerpCoord> ys(P), xs(P);
  for (std::size_t i = 0; i < P; ++i) {
    const double sy = box.y0 + (static_cast<double>(i) + 0.5) * box.height() / static_cast<double>(P);
    const double sx = box.x0 + (static_cast<double>(i) + 0.5) * box.width() / static_cast<double>(P);
    ys[i] = detail::lerp_coord(sy - 0.5, H);
    xs[i] = detail::lerp_coord(sx - 0.5, W);
  }
  const auto& fv = feat.values();
  std::vector<double> out(P * P * C);
  for (std::size_t i = 0; i < P; ++i) {
    const auto& cy = ys[i];
    for (std::size_t j = 0; j < P; ++j) {
      const auto& cx = xs[j];
      const double w00 = (1.0 - cy.t) * (1.0 - cx.t), w01 = (1.0 - cy.t) * cx.t;
      const double w10 = cy.t * (1.0 - cx.t), w11 = cy.t * cx.t;
      const double* p00 = fv.data() + (cy.lo * W + cx.lo) * C;
      const double* p01 = fv.data() + (cy.lo * W + cx.hi) * C;
      const double* p10 = fv.data() + (cy.hi * W + cx.lo) * C;
      const double* p11 = fv.data() + (cy.hi * W + cx.hi) * C;
      double* orow = out.data() + (i * P + j) * C;
      for (std::size_t c = 0; c < C; ++c)
        orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  bool rg = feat.requires_grad();
  Tensor res = detail::op_result({P, P, C}, std::move(out), rg);
  if (rg) {
    tape.record([fn = feat.node(), on = res.node(), ys = std::move(ys), xs = std::move(xs), W, C,
                 P] {
      if (on->grad.empty()) return;
      fn->ensure_grad();
      for (std::size_t i = 0; i < P; ++i) {
        const auto& cy = ys[i];
        for (std::size_t j = 0; j < P; ++j) {
          const auto& cx = xs[j];
          const double w00 = (1.0 - cy.t) * (1.0 - cx.t), w01 = (1.0 - cy.t) * cx.t;
          const double w10 = cy.t * (1.0 - cx.t), w11 = cy.t * cx.t;
          const double* grow = on->grad.data() + (i * P + j) * C;
          double* g00 = fn->grad.data() + (cy.lo * W + cx.lo) * C;
          double* g01 = fn->grad.data() + (cy.lo * W + cx.hi) * C;
          double* g10 = fn->grad.data() + (cy.hi * W + cx.lo) * C;
          double* g11 = fn->grad.data() + (cy.hi * W + cx.hi) * C;
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

}  // namespace ran
