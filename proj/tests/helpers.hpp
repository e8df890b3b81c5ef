#ifndef HPTK_TESTS_HELPERS_HPP
#define HPTK_TESTS_HELPERS_HPP

#include <functional>
#include <vector>

#include "hptk/importance.hpp"
#include "hptk/model.hpp"
#include "hptk/ops.hpp"
#include "hptk/tensor.hpp"

namespace hptk::testutil {

/// Central-difference gradient of a scalar-valued rebuild function w.r.t.
/// one leaf tensor. The function must rebuild the graph on every call.
inline Array numeric_grad(const std::function<Tensor()>& loss_fn, Tensor leaf,
                          double h = 1e-6) {
  Array grad(leaf.numel());
  for (Index i = 0; i < leaf.numel(); ++i) {
    Array v = leaf.values();
    const double saved = v[i];
    v[i] = saved + h;
    leaf.set_values(v);
    const double up = loss_fn().scalar_value();
    v[i] = saved - h;
    leaf.set_values(v);
    const double down = loss_fn().scalar_value();
    v[i] = saved;
    leaf.set_values(v);
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Max relative error between the reverse-mode and central-difference
/// gradients of loss_fn w.r.t. leaf.
inline double grad_rel_err(const std::function<Tensor()>& loss_fn, Tensor leaf,
                           double h = 1e-6) {
  leaf.set_requires_grad(true);
  GradientMap gm = backward(loss_fn());
  Array analytic = gm.get(leaf);
  Array numeric = numeric_grad(loss_fn, leaf, h);
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-4});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline Tensor random_tensor(std::vector<Index> shape, Rng& rng, double scale = 1.0) {
  Index n = 1;
  for (Index d : shape) n *= d;
  Array v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal(0.0, scale);
  return Tensor::from_array(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Array& a, const Array& b) {
  return (a - b).abs().maxCoeff();
}

/// Small Mamba-heavy config used across tests.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.layer_pattern = pattern_from_string("MAF");
  c.d_e = 16;
  c.d_ffn = 24;
  c.m_h = 4;
  c.m_d = 4;
  c.g = 2;
  c.d_s = 8;
  c.n_att_heads = 2;
  c.vocab = 48;
  c.conv_k = 4;
  return c;
}

inline CalibSet random_tokens(Index n_seqs, Index seq_len, Index vocab, Rng& rng) {
  CalibSet out;
  for (Index s = 0; s < n_seqs; ++s) {
    TokenSeq seq;
    for (Index t = 0; t < seq_len; ++t) seq.push_back(rng.index(vocab));
    out.push_back(std::move(seq));
  }
  return out;
}

/// Jointly permute the per-head parameter blocks of a Mamba layer: columns of
/// w_x/w_z/w_dt, rows of w_o, the per-head vectors, the x-conv channels and
/// the gate-norm entries. perm maps new head index -> old head index.
inline MambaLayerWeights permute_mamba_heads(const MambaLayerWeights& w,
                                             const std::vector<Index>& perm) {
  auto pick_cols = [](const Tensor& t, const std::vector<Index>& cols) {
    const Index r = t.dim(0), c = t.dim(1);
    Array out(r * static_cast<Index>(cols.size()));
    for (Index i = 0; i < r; ++i) {
      for (size_t j = 0; j < cols.size(); ++j) {
        out[i * static_cast<Index>(cols.size()) + static_cast<Index>(j)] =
            t.at(i * c + cols[j]);
      }
    }
    return Tensor::from_array({r, static_cast<Index>(cols.size())}, std::move(out));
  };
  auto pick_rows = [](const Tensor& t, const std::vector<Index>& rows) {
    const Index c = t.dim(1);
    Array out(static_cast<Index>(rows.size()) * c);
    for (size_t i = 0; i < rows.size(); ++i) {
      out.segment(static_cast<Index>(i) * c, c) = t.values().segment(rows[i] * c, c);
    }
    return Tensor::from_array({static_cast<Index>(rows.size()), c}, std::move(out));
  };
  auto pick_entries = [](const Tensor& t, const std::vector<Index>& idx) {
    Array out(static_cast<Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = t.at(idx[i]);
    return Tensor::from_array({static_cast<Index>(idx.size())}, std::move(out));
  };

  std::vector<Index> inner_idx, head_idx;
  for (Index nh : perm) {
    head_idx.push_back(nh);
    for (Index d = 0; d < w.m_d; ++d) inner_idx.push_back(nh * w.m_d + d);
  }
  MambaLayerWeights out = w;
  out.w_x = pick_cols(w.w_x, inner_idx);
  out.w_z = pick_cols(w.w_z, inner_idx);
  out.w_o = pick_rows(w.w_o, inner_idx);
  out.w_dt = pick_cols(w.w_dt, head_idx);
  out.dt_bias = pick_entries(w.dt_bias, head_idx);
  out.a_log = pick_entries(w.a_log, head_idx);
  out.d = pick_entries(w.d, head_idx);
  out.conv_x_kernel = pick_cols(w.conv_x_kernel, inner_idx);
  out.conv_x_bias = pick_entries(w.conv_x_bias, inner_idx);
  out.gate_norm_scale = pick_entries(w.gate_norm_scale, inner_idx);
  return out;
}

/// Config shaped like the 52-layer hybrid parent (24 Mamba, 4 attention,
/// 24 FFN) used for the config-level budget checks. Never instantiated.
inline ModelConfig parent_52_layer_config() {
  ModelConfig c;
  std::string pattern;
  // 4 attention layers spread through an alternating Mamba/FFN stack.
  for (int block = 0; block < 4; ++block) {
    for (int i = 0; i < 6; ++i) pattern += "MF";
    pattern += "A";
  }
  c.layer_pattern = pattern_from_string(pattern);  // 52 layers
  c.d_e = 4096;
  c.d_ffn = 21504;
  c.m_h = 128;
  c.m_d = 64;
  c.g = 8;
  c.d_s = 128;
  c.n_att_heads = 32;
  c.vocab = 131072;
  c.conv_k = 4;
  return c;
}

}  // namespace hptk::testutil

#endif
