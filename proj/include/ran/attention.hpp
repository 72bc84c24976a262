#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ran/rng.hpp"
#include "ran/tensor.hpp"

// Self-attention over region feature vectors followed by co-attention over
// the attended activations. Every ordered region pair (r, r') is scored with
// a shared tanh bottleneck; scores are normalized jointly over all
// off-diagonal pairs (a per-row variant exists for ablation), and each
// attended vector l_r is the alpha-weighted sum of the other regions'
// features. Co-attention then softmax-combines the l_r into one vector.

namespace ran {

struct AttentionParams {
  Tensor wh, wh2, bh;  // pair scorer bottleneck: d_f x d_h twice, bias d_h
  Tensor wg, bg;       // scalar score head: d_h x 1, bias [1]
  Tensor wc, bc;       // co-attention scorer: d_f x 1, bias [1]
  Tensor wout, bout;   // classifier: d_f x classes, bias [classes]
  std::size_t d_f = 0, d_h = 0, classes = 0;
};

inline AttentionParams attention_init(std::size_t d_f, std::size_t d_h, std::size_t classes,
                                      Rng& rng) {
  if (d_f < 1 || d_h < 1) throw std::invalid_argument("attention_init: zero feature width");
  if (classes < 2) throw std::invalid_argument("attention_init: need at least 2 classes");
  AttentionParams p;
  p.d_f = d_f;
  p.d_h = d_h;
  p.classes = classes;
  auto glorot = [&rng](Shape shape, std::size_t fin, std::size_t fout) {
    std::vector<double> v(shape_numel(shape));
    glorot_uniform_fill(rng, v, fin, fout);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  p.wh = glorot({d_f, d_h}, d_f, d_h);
  p.wh2 = glorot({d_f, d_h}, d_f, d_h);
  p.bh = Tensor::zeros({d_h}, true);
  p.wg = glorot({d_h, 1}, d_h, 1);
  p.bg = Tensor::zeros({1}, true);
  p.wc = glorot({d_f, 1}, d_f, 1);
  p.bc = Tensor::zeros({1}, true);
  p.wout = glorot({d_f, classes}, d_f, classes);
  p.bout = Tensor::zeros({classes}, true);
  return p;
}

enum class AlphaNorm { kGlobal, kPerRow };

struct AttentionOptions {
  AlphaNorm norm = AlphaNorm::kGlobal;
  bool include_diagonal = false;  // let (r, r) pairs join the normalization
};

struct SelfAttentionResult {
  Tensor alpha;     // N x N pair weights, zero diagonal unless included
  Tensor attended;  // N x d_f, row r is l_r
};

struct CoAttentionResult {
  Tensor weights;   // N
  Tensor combined;  // d_f
};

// Everything a forward pass exposes for inspection.
struct AttentionTrace {
  Tensor alpha;
  Tensor attended;
  Tensor weights;
  Tensor combined;
};

namespace detail {

// scores[r, r'] = Wg . tanh(A1[r] + A2[r']) + bg for each active ordered
// pair; skipped pairs stay zero and take no gradient.
inline Tensor pairwise_tanh_score(Tape& tape, const Tensor& a1, const Tensor& a2,
                                  const Tensor& wg, const Tensor& bg, bool include_diagonal) {
  const std::size_t N = a1.shape()[0], dh = a1.shape()[1];
  check_same_shape(a1, a2, "pairwise_tanh_score");
  if (wg.rank() != 2 || wg.shape()[0] != dh || wg.shape()[1] != 1 || bg.numel() != 1) {
    throw std::invalid_argument("pairwise_tanh_score: score head " + shape_str(wg.shape()) +
                                " does not match width " + std::to_string(dh));
  }
  const auto& v1 = a1.values();
  const auto& v2 = a2.values();
  const auto& wgv = wg.values();
  const double bgv = bg.values()[0];
  std::vector<double> scores(N * N, 0.0);
  auto h_cache = std::make_shared<std::vector<double>>(N * N * dh, 0.0);
  for (std::size_t r = 0; r < N; ++r) {
    const double* row1 = v1.data() + r * dh;
    for (std::size_t rp = 0; rp < N; ++rp) {
      if (r == rp && !include_diagonal) continue;
      const double* row2 = v2.data() + rp * dh;
      double* h = h_cache->data() + (r * N + rp) * dh;
      double s = bgv;
      for (std::size_t k = 0; k < dh; ++k) {
        h[k] = std::tanh(row1[k] + row2[k]);
        s += wgv[k] * h[k];
      }
      scores[r * N + rp] = s;
    }
  }
  bool rg = a1.requires_grad() || a2.requires_grad() || wg.requires_grad() || bg.requires_grad();
  Tensor res = op_result({N, N}, std::move(scores), rg);
  if (rg) {
    tape.record([n1 = a1.node(), n2 = a2.node(), wgn = wg.node(), bgn = bg.node(),
                 on = res.node(), h_cache, N, dh, include_diagonal] {
      if (on->grad.empty()) return;
      if (n1->requires_grad) n1->ensure_grad();
      if (n2->requires_grad) n2->ensure_grad();
      if (wgn->requires_grad) wgn->ensure_grad();
      if (bgn->requires_grad) bgn->ensure_grad();
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t rp = 0; rp < N; ++rp) {
          if (r == rp && !include_diagonal) continue;
          const double gs = on->grad[r * N + rp];
          if (gs == 0.0) continue;
          const double* h = h_cache->data() + (r * N + rp) * dh;
          if (bgn->requires_grad) bgn->grad[0] += gs;
          for (std::size_t k = 0; k < dh; ++k) {
            if (wgn->requires_grad) wgn->grad[k] += gs * h[k];
            const double dpre = gs * wgn->value[k] * (1.0 - h[k] * h[k]);
            if (n1->requires_grad) n1->grad[r * dh + k] += dpre;
            if (n2->requires_grad) n2->grad[rp * dh + k] += dpre;
          }
        }
      }
    });
  }
  return res;
}

// Softmax over the active entries of an N x N score matrix. Global mode
// normalizes jointly over every active pair; per-row mode normalizes each
// row. Inactive entries stay zero and ignore any incoming gradient.
inline Tensor masked_pair_softmax(Tape& tape, const Tensor& scores, AlphaNorm norm,
                                  bool include_diagonal) {
  const std::size_t N = scores.shape()[0];
  if (scores.rank() != 2 || scores.shape()[1] != N) {
    throw std::invalid_argument("masked_pair_softmax: need a square matrix, got " +
                                shape_str(scores.shape()));
  }
  const auto& sv = scores.values();
  std::vector<double> alpha(N * N, 0.0);
  auto active = [N, include_diagonal](std::size_t r, std::size_t rp) {
    return include_diagonal || r != rp;
  };
  if (norm == AlphaNorm::kGlobal) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t rp = 0; rp < N; ++rp)
        if (active(r, rp)) mx = std::max(mx, sv[r * N + rp]);
    double z = 0.0;
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t rp = 0; rp < N; ++rp)
        if (active(r, rp)) {
          alpha[r * N + rp] = std::exp(sv[r * N + rp] - mx);
          z += alpha[r * N + rp];
        }
    for (double& a : alpha) a /= z;
  } else {
    for (std::size_t r = 0; r < N; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t rp = 0; rp < N; ++rp)
        if (active(r, rp)) mx = std::max(mx, sv[r * N + rp]);
      double z = 0.0;
      for (std::size_t rp = 0; rp < N; ++rp)
        if (active(r, rp)) {
          alpha[r * N + rp] = std::exp(sv[r * N + rp] - mx);
          z += alpha[r * N + rp];
        }
      for (std::size_t rp = 0; rp < N; ++rp) alpha[r * N + rp] /= z;
    }
  }
  bool rg = scores.requires_grad();
  Tensor res = op_result({N, N}, std::move(alpha), rg);
  if (rg) {
    tape.record([sn = scores.node(), on = res.node(), N, norm, include_diagonal] {
      if (on->grad.empty()) return;
      sn->ensure_grad();
      auto active = [N, include_diagonal](std::size_t r, std::size_t rp) {
        return include_diagonal || r != rp;
      };
      if (norm == AlphaNorm::kGlobal) {
        double dot = 0.0;
        for (std::size_t r = 0; r < N; ++r)
          for (std::size_t rp = 0; rp < N; ++rp)
            if (active(r, rp)) dot += on->grad[r * N + rp] * on->value[r * N + rp];
        for (std::size_t r = 0; r < N; ++r)
          for (std::size_t rp = 0; rp < N; ++rp)
            if (active(r, rp))
              sn->grad[r * N + rp] +=
                  on->value[r * N + rp] * (on->grad[r * N + rp] - dot);
      } else {
        for (std::size_t r = 0; r < N; ++r) {
          double dot = 0.0;
          for (std::size_t rp = 0; rp < N; ++rp)
            if (active(r, rp)) dot += on->grad[r * N + rp] * on->value[r * N + rp];
          for (std::size_t rp = 0; rp < N; ++rp)
            if (active(r, rp))
              sn->grad[r * N + rp] +=
                  on->value[r * N + rp] * (on->grad[r * N + rp] - dot);
        }
      }
    });
  }
  return res;
}

// attended[r] = sum over r' != r of alpha[r, r'] * bank[r']; the diagonal is
// excluded even when it carries normalization weight.
inline Tensor offdiag_matmul(Tape& tape, const Tensor& alpha, const Tensor& bank) {
  const std::size_t N = alpha.shape()[0], d = bank.shape()[1];
  if (bank.shape()[0] != N) {
    throw std::invalid_argument("offdiag_matmul: alpha " + shape_str(alpha.shape()) +
                                " vs bank " + shape_str(bank.shape()));
  }
  const auto& av = alpha.values();
  const auto& bv = bank.values();
  std::vector<double> out(N * d, 0.0);
  for (std::size_t r = 0; r < N; ++r) {
    double* orow = out.data() + r * d;
    for (std::size_t rp = 0; rp < N; ++rp) {
      if (rp == r) continue;
      const double w = av[r * N + rp];
      const double* brow = bv.data() + rp * d;
      for (std::size_t j = 0; j < d; ++j) orow[j] += w * brow[j];
    }
  }
  bool rg = alpha.requires_grad() || bank.requires_grad();
  Tensor res = op_result({N, d}, std::move(out), rg);
  if (rg) {
    tape.record([an = alpha.node(), bn = bank.node(), on = res.node(), N, d] {
      if (on->grad.empty()) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t r = 0; r < N; ++r) {
        const double* grow = on->grad.data() + r * d;
        for (std::size_t rp = 0; rp < N; ++rp) {
          if (rp == r) continue;
          const double* brow = bn->value.data() + rp * d;
          if (an->requires_grad) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += brow[j] * grow[j];
            an->grad[r * N + rp] += acc;
          }
          if (bn->requires_grad) {
            const double w = an->value[r * N + rp];
            double* bgrow = bn->grad.data() + rp * d;
            for (std::size_t j = 0; j < d; ++j) bgrow[j] += w * grow[j];
          }
        }
      }
    });
  }
  return res;
}

}  // namespace detail

// bank: N x d_f matrix whose rows are the region feature vectors (the whole
// image last).
inline SelfAttentionResult self_attention(Tape& tape, const Tensor& bank,
                                          const AttentionParams& p,
                                          const AttentionOptions& opts = {}) {
  if (bank.rank() != 2 || bank.shape()[1] != p.d_f) {
    throw std::invalid_argument("self_attention: bank " + shape_str(bank.shape()) +
                                " vs feature width " + std::to_string(p.d_f));
  }
  if (bank.shape()[0] < 2) {
    throw std::invalid_argument("self_attention: need at least 2 items, got " +
                                std::to_string(bank.shape()[0]));
  }
  Tensor a1 = affine(tape, bank, p.wh, p.bh);
  Tensor a2 = matmul(tape, bank, p.wh2);
  Tensor scores = detail::pairwise_tanh_score(tape, a1, a2, p.wg, p.bg, opts.include_diagonal);
  Tensor alpha = detail::masked_pair_softmax(tape, scores, opts.norm, opts.include_diagonal);
  Tensor attended = detail::offdiag_matmul(tape, alpha, bank);
  return {alpha, attended};
}

inline CoAttentionResult co_attention(Tape& tape, const Tensor& attended,
                                      const AttentionParams& p) {
  if (attended.rank() != 2 || attended.shape()[1] != p.d_f) {
    throw std::invalid_argument("co_attention: input " + shape_str(attended.shape()) +
                                " vs feature width " + std::to_string(p.d_f));
  }
  const std::size_t N = attended.shape()[0];
  Tensor c = reshape(tape, affine(tape, attended, p.wc, p.bc), {N});
  Tensor a = softmax(tape, c);
  Tensor combined = reshape(tape, matmul(tape, reshape(tape, a, {1, N}), attended), {p.d_f});
  return {a, combined};
}

inline Tensor class_logits(Tape& tape, const Tensor& combined, const AttentionParams& p) {
  if (combined.rank() != 1 || combined.shape()[0] != p.d_f) {
    throw std::invalid_argument("class_logits: input " + shape_str(combined.shape()) +
                                " vs feature width " + std::to_string(p.d_f));
  }
  return reshape(tape, affine(tape, reshape(tape, combined, {1, p.d_f}), p.wout, p.bout),
                 {p.classes});
}

inline Tensor classify(Tape& tape, const Tensor& combined, const AttentionParams& p) {
  return softmax(tape, class_logits(tape, combined, p));
}

}  // namespace ran
