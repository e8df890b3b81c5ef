#include "hptk/ops.hpp"

#include <cmath>
#include <string>

namespace hptk {

namespace {

using detail::check_finite;
using detail::make_node;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a rank-2 tensor");
}

// Rows-by-last-axis view for ops that act on the trailing dimension.
std::pair<Index, Index> row_view(const Tensor& t) {
  if (t.rank() == 0) throw DimensionError("empty tensor");
  Index last = t.dim(t.rank() - 1);
  if (last == 0) throw DimensionError("trailing axis has size zero");
  return {t.numel() / last, last};
}

Tensor unary(const Tensor& a, Array value, Array dvalue_dx, const char* name) {
  check_finite(value, name);
  auto pa = a.node_ptr();
  auto node = make_node(
      a.shape(), std::move(value), {pa},
      [pa, d = std::move(dvalue_dx)](const Array& g, GradientMap& gm) {
        if (pa->requires_grad) gm.add(pa, (g * d).eval());
      });
  return Tensor(std::move(node));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " and " +
                         std::to_string(k2) + " do not match");
  }
  MatRM y = a.matrix() * b.matrix();
  Array value = Eigen::Map<const Array>(y.data(), y.size());
  check_finite(value, "matmul");
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  auto node = make_node(
      {m, n}, std::move(value), {pa, pb},
      [pa, pb, m, k, n](const Array& g, GradientMap& gm) {
        ConstMatMap G(g.data(), m, n);
        ConstMatMap A(pa->value.data(), m, k);
        ConstMatMap B(pb->value.data(), k, n);
        if (pa->requires_grad) {
          MatRM da = G * B.transpose();
          gm.add(pa, Eigen::Map<const Array>(da.data(), da.size()).eval());
        }
        if (pb->requires_grad) {
          MatRM db = A.transpose() * G;
          gm.add(pb, Eigen::Map<const Array>(db.data(), db.size()).eval());
        }
      });
  return Tensor(std::move(node));
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Index r = a.dim(0), c = a.dim(1);
  MatRM t = a.matrix().transpose();
  Array value = Eigen::Map<const Array>(t.data(), t.size());
  auto pa = a.node_ptr();
  auto node = make_node(
      {c, r}, std::move(value), {pa},
      [pa, r, c](const Array& g, GradientMap& gm) {
        if (!pa->requires_grad) return;
        ConstMatMap G(g.data(), c, r);
        MatRM gt = G.transpose();
        gm.add(pa, Eigen::Map<const Array>(gt.data(), gt.size()).eval());
      });
  return Tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Array value = a.values() + b.values();
  check_finite(value, "add");
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  auto node = make_node(a.shape(), std::move(value), {pa, pb},
                        [pa, pb](const Array& g, GradientMap& gm) {
                          if (pa->requires_grad) gm.add(pa, g);
                          if (pb->requires_grad) gm.add(pb, g);
                        });
  return Tensor(std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("sub: shape mismatch");
  Array value = a.values() - b.values();
  check_finite(value, "sub");
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  auto node = make_node(a.shape(), std::move(value), {pa, pb},
                        [pa, pb](const Array& g, GradientMap& gm) {
                          if (pa->requires_grad) gm.add(pa, g);
                          if (pb->requires_grad) gm.add(pb, (-g).eval());
                        });
  return Tensor(std::move(node));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Array value = a.values() * b.values();
  check_finite(value, "mul");
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  auto node = make_node(a.shape(), std::move(value), {pa, pb},
                        [pa, pb](const Array& g, GradientMap& gm) {
                          if (pa->requires_grad) gm.add(pa, (g * pb->value).eval());
                          if (pb->requires_grad) gm.add(pb, (g * pa->value).eval());
                        });
  return Tensor(std::move(node));
}

Tensor scale(const Tensor& a, double c) {
  Array value = a.values() * c;
  check_finite(value, "scale");
  auto pa = a.node_ptr();
  auto node = make_node(a.shape(), std::move(value), {pa},
                        [pa, c](const Array& g, GradientMap& gm) {
                          if (pa->requires_grad) gm.add(pa, (g * c).eval());
                        });
  return Tensor(std::move(node));
}

Tensor add_row(const Tensor& mat, const Tensor& vec) {
  require_rank2(mat, "add_row");
  if (vec.rank() != 1 || vec.dim(0) != mat.dim(1)) {
    throw DimensionError("add_row: vector length must equal matrix columns");
  }
  Index rows = mat.dim(0), cols = mat.dim(1);
  Array value = mat.values();
  for (Index i = 0; i < rows; ++i) {
    value.segment(i * cols, cols) += vec.values();
  }
  check_finite(value, "add_row");
  auto pm = mat.node_ptr();
  auto pv = vec.node_ptr();
  auto node = make_node(
      mat.shape(), std::move(value), {pm, pv},
      [pm, pv, rows, cols](const Array& g, GradientMap& gm) {
        if (pm->requires_grad) gm.add(pm, g);
        if (pv->requires_grad) {
          Array dv = Array::Zero(cols);
          for (Index i = 0; i < rows; ++i) dv += g.segment(i * cols, cols);
          gm.add(pv, dv);
        }
      });
  return Tensor(std::move(node));
}

Tensor exp(const Tensor& a) {
  Array value = a.values().exp();
  check_finite(value, "exp");
  Array d = value;
  return unary(a, std::move(value), std::move(d), "exp");
}

Tensor softplus(const Tensor& a) {
  Index n = a.numel();
  Array value(n), d(n);
  for (Index i = 0; i < n; ++i) {
    double x = a.at(i);
    value[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    d[i] = sigmoid(x);
  }
  check_finite(value, "softplus");
  return unary(a, std::move(value), std::move(d), "softplus");
}

Tensor silu(const Tensor& a) {
  Index n = a.numel();
  Array value(n), d(n);
  for (Index i = 0; i < n; ++i) {
    double x = a.at(i);
    double s = sigmoid(x);
    value[i] = x * s;
    d[i] = s * (1.0 + x * (1.0 - s));
  }
  check_finite(value, "silu");
  return unary(a, std::move(value), std::move(d), "silu");
}

Tensor relu_squared(const Tensor& a) {
  Index n = a.numel();
  Array value(n), d(n);
  for (Index i = 0; i < n; ++i) {
    double x = a.at(i) > 0.0 ? a.at(i) : 0.0;
    value[i] = x * x;
    d[i] = 2.0 * x;
  }
  check_finite(value, "relu_squared");
  return unary(a, std::move(value), std::move(d), "relu_squared");
}

double init_gamma_for_width(Index width) {
  return std::sqrt(static_cast<double>(width));
}

Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps) {
  auto [rows, cols] = row_view(x);
  if (gamma.rank() != 1 || gamma.dim(0) != cols) {
    throw DimensionError("rms_norm: gamma length must equal the trailing axis");
  }
  if (eps <= 0) throw ParameterError("rms_norm: eps must be positive");
  Array value(x.numel());
  Array inv_r(rows);
  for (Index i = 0; i < rows; ++i) {
    double ss = 0.0;
    for (Index j = 0; j < cols; ++j) {
      double v = x.at(i * cols + j);
      ss += v * v;
    }
    double r = std::sqrt(ss + eps);
    inv_r[i] = 1.0 / r;
    value.segment(i * cols, cols) =
        x.values().segment(i * cols, cols) * gamma.values() * inv_r[i];
  }
  check_finite(value, "rms_norm");
  auto px = x.node_ptr();
  auto pg = gamma.node_ptr();
  auto node = make_node(
      x.shape(), std::move(value), {px, pg},
      [px, pg, rows, cols, inv_r](const Array& g, GradientMap& gm) {
        Array dx = Array::Zero(px->value.size());
        Array dgamma = Array::Zero(cols);
        for (Index i = 0; i < rows; ++i) {
          auto xr = px->value.segment(i * cols, cols);
          auto gr = g.segment(i * cols, cols);
          double ir = inv_r[i];
          if (pg->requires_grad) dgamma += gr * xr * ir;
          if (px->requires_grad) {
            double s = (gr * pg->value * xr).sum();
            dx.segment(i * cols, cols) =
                gr * pg->value * ir - xr * (s * ir * ir * ir);
          }
        }
        if (px->requires_grad) gm.add(px, dx);
        if (pg->requires_grad) gm.add(pg, dgamma);
      });
  return Tensor(std::move(node));
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  if (tau <= 0.0) throw ParameterError("softmax_temp: tau must be positive");
  if (!logits.values().allFinite()) {
    throw InputError("softmax_temp: logits contain non-finite values");
  }
  auto [rows, cols] = row_view(logits);
  Array value(logits.numel());
  for (Index i = 0; i < rows; ++i) {
    auto xr = logits.values().segment(i * cols, cols);
    double m = xr.maxCoeff();
    Array e = ((xr - m) / tau).exp();
    value.segment(i * cols, cols) = e / e.sum();
  }
  auto pl = logits.node_ptr();
  Array probs = value;
  auto node = make_node(
      logits.shape(), std::move(value), {pl},
      [pl, rows, cols, tau, probs](const Array& g, GradientMap& gm) {
        if (!pl->requires_grad) return;
        Array dx(probs.size());
        for (Index i = 0; i < rows; ++i) {
          auto pr = probs.segment(i * cols, cols);
          auto gr = g.segment(i * cols, cols);
          double dot = (gr * pr).sum();
          dx.segment(i * cols, cols) = pr * (gr - dot) / tau;
        }
        gm.add(pl, dx);
      });
  return Tensor(std::move(node));
}

Tensor causal_softmax(const Tensor& scores, double scale) {
  require_rank2(scores, "causal_softmax");
  Index L = scores.dim(0);
  if (scores.dim(1) != L) throw DimensionError("causal_softmax: scores must be square");
  Array value = Array::Zero(L * L);
  for (Index t = 0; t < L; ++t) {
    Index n = t + 1;
    auto row = scores.values().segment(t * L, n);
    Array scaled = row * scale;
    double m = scaled.maxCoeff();
    Array e = (scaled - m).exp();
    value.segment(t * L, n) = e / e.sum();
  }
  check_finite(value, "causal_softmax");
  auto ps = scores.node_ptr();
  Array probs = value;
  auto node = make_node(
      scores.shape(), std::move(value), {ps},
      [ps, L, scale, probs](const Array& g, GradientMap& gm) {
        if (!ps->requires_grad) return;
        Array dx = Array::Zero(L * L);
        for (Index t = 0; t < L; ++t) {
          Index n = t + 1;
          auto pr = probs.segment(t * L, n);
          auto gr = g.segment(t * L, n);
          double dot = (gr * pr).sum();
          dx.segment(t * L, n) = pr * (gr - dot) * scale;
        }
        gm.add(ps, dx);
      });
  return Tensor(std::move(node));
}

Tensor conv1d_causal(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank2(x, "conv1d_causal");
  require_rank2(kernel, "conv1d_causal");
  Index L = x.dim(0), C = x.dim(1), K = kernel.dim(0);
  if (K < 1) throw DimensionError("conv1d_causal: kernel width must be >= 1");
  if (kernel.dim(1) != C || bias.rank() != 1 || bias.dim(0) != C) {
    throw DimensionError("conv1d_causal: channel counts do not match");
  }
  Array value(L * C);
  for (Index t = 0; t < L; ++t) {
    for (Index c = 0; c < C; ++c) {
      double acc = bias.at(c);
      for (Index k = 0; k < K; ++k) {
        Index src = t - (K - 1) + k;
        if (src >= 0) acc += kernel.at(k * C + c) * x.at(src * C + c);
      }
      value[t * C + c] = acc;
    }
  }
  check_finite(value, "conv1d_causal");
  auto px = x.node_ptr();
  auto pk = kernel.node_ptr();
  auto pb = bias.node_ptr();
  auto node = make_node(
      x.shape(), std::move(value), {px, pk, pb},
      [px, pk, pb, L, C, K](const Array& g, GradientMap& gm) {
        if (px->requires_grad) {
          Array dx = Array::Zero(L * C);
          for (Index t = 0; t < L; ++t)
            for (Index c = 0; c < C; ++c)
              for (Index k = 0; k < K; ++k) {
                Index src = t - (K - 1) + k;
                if (src >= 0) dx[src * C + c] += g[t * C + c] * pk->value[k * C + c];
              }
          gm.add(px, dx);
        }
        if (pk->requires_grad) {
          Array dk = Array::Zero(K * C);
          for (Index t = 0; t < L; ++t)
            for (Index c = 0; c < C; ++c)
              for (Index k = 0; k < K; ++k) {
                Index src = t - (K - 1) + k;
                if (src >= 0) dk[k * C + c] += g[t * C + c] * px->value[src * C + c];
              }
          gm.add(pk, dk);
        }
        if (pb->requires_grad) {
          Array db = Array::Zero(C);
          for (Index t = 0; t < L; ++t) db += g.segment(t * C, C);
          gm.add(pb, db);
        }
      });
  return Tensor(std::move(node));
}

Tensor slice_cols(const Tensor& t, Index start, Index count) {
  require_rank2(t, "slice_cols");
  Index rows = t.dim(0), cols = t.dim(1);
  if (start < 0 || count < 1 || start + count > cols) {
    throw ParameterError("slice_cols: range out of bounds");
  }
  Array value(rows * count);
  for (Index i = 0; i < rows; ++i) {
    value.segment(i * count, count) = t.values().segment(i * cols + start, count);
  }
  auto pt = t.node_ptr();
  auto node = make_node(
      {rows, count}, std::move(value), {pt},
      [pt, rows, cols, start, count](const Array& g, GradientMap& gm) {
        if (!pt->requires_grad) return;
        Array dx = Array::Zero(rows * cols);
        for (Index i = 0; i < rows; ++i) {
          dx.segment(i * cols + start, count) = g.segment(i * count, count);
        }
        gm.add(pt, dx);
      });
  return Tensor(std::move(node));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Index rows = parts[0].dim(0);
  Index cols = 0;
  std::vector<std::shared_ptr<Node>> ps;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.dim(1);
    widths.push_back(p.dim(1));
    ps.push_back(p.node_ptr());
  }
  Array value(rows * cols);
  Index off = 0;
  for (size_t n = 0; n < parts.size(); ++n) {
    Index w = widths[n];
    for (Index i = 0; i < rows; ++i) {
      value.segment(i * cols + off, w) = parts[n].values().segment(i * w, w);
    }
    off += w;
  }
  auto node = make_node(
      {rows, cols}, std::move(value), ps,
      [ps, widths, rows, cols](const Array& g, GradientMap& gm) {
        Index off = 0;
        for (size_t n = 0; n < ps.size(); ++n) {
          Index w = widths[n];
          if (ps[n]->requires_grad) {
            Array dp(rows * w);
            for (Index i = 0; i < rows; ++i) {
              dp.segment(i * w, w) = g.segment(i * cols + off, w);
            }
            gm.add(ps[n], dp);
          }
          off += w;
        }
      });
  return Tensor(std::move(node));
}

Tensor reshape(const Tensor& t, std::vector<Index> shape) {
  if (detail::shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: element count mismatch");
  }
  auto pt = t.node_ptr();
  auto node = make_node(std::move(shape), t.values(), {pt},
                        [pt](const Array& g, GradientMap& gm) {
                          if (pt->requires_grad) gm.add(pt, g);
                        });
  return Tensor(std::move(node));
}

Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids) {
  require_rank2(table, "gather_rows");
  Index V = table.dim(0), d = table.dim(1);
  Index L = static_cast<Index>(ids.size());
  for (Index id : ids) {
    if (id < 0 || id >= V) {
      throw InputError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(V) + ")");
    }
  }
  Array value(L * d);
  for (Index i = 0; i < L; ++i) {
    value.segment(i * d, d) = table.values().segment(ids[static_cast<size_t>(i)] * d, d);
  }
  auto pt = table.node_ptr();
  auto node = make_node(
      {L, d}, std::move(value), {pt},
      [pt, ids, V, d, L](const Array& g, GradientMap& gm) {
        if (!pt->requires_grad) return;
        Array dt = Array::Zero(V * d);
        for (Index i = 0; i < L; ++i) {
          dt.segment(ids[static_cast<size_t>(i)] * d, d) += g.segment(i * d, d);
        }
        gm.add(pt, dt);
      });
  return Tensor(std::move(node));
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (Index i = 0; i < t.numel(); ++i) acc += t.at(i);
  if (!std::isfinite(acc)) throw NonFiniteError("sum: non-finite result");
  auto pt = t.node_ptr();
  auto node = make_node({1}, Array::Constant(1, acc), {pt},
                        [pt](const Array& g, GradientMap& gm) {
                          if (pt->requires_grad)
                            gm.add(pt, Array::Constant(pt->value.size(), g[0]).eval());
                        });
  return Tensor(std::move(node));
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<Index>& targets) {
  require_rank2(logits, "cross_entropy_mean");
  Index L = logits.dim(0), V = logits.dim(1);
  if (static_cast<Index>(targets.size()) != L) {
    throw DimensionError("cross_entropy_mean: one target per row required");
  }
  for (Index t : targets) {
    if (t < 0 || t >= V) throw InputError("cross_entropy_mean: target out of range");
  }
  double loss = 0.0;
  Array probs(L * V);
  for (Index i = 0; i < L; ++i) {
    auto row = logits.values().segment(i * V, V);
    double m = row.maxCoeff();
    Array e = (row - m).exp();
    double z = e.sum();
    probs.segment(i * V, V) = e / z;
    loss += m + std::log(z) - row[targets[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(L);
  if (!std::isfinite(loss)) throw NonFiniteError("cross_entropy_mean: non-finite loss");
  auto pl = logits.node_ptr();
  auto node = make_node(
      {1}, Array::Constant(1, loss), {pl},
      [pl, targets, probs, L, V](const Array& g, GradientMap& gm) {
        if (!pl->requires_grad) return;
        Array dx = probs;
        for (Index i = 0; i < L; ++i) dx[i * V + targets[static_cast<size_t>(i)]] -= 1.0;
        dx *= g[0] / static_cast<double>(L);
        gm.add(pl, dx);
      });
  return Tensor(std::move(node));
}

Tensor kd_fkld(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
  if (tau <= 0.0) throw ParameterError("kd_fkld: tau must be positive");
  if (teacher_logits.shape() != student_logits.shape()) {
    throw DimensionError("kd_fkld: teacher/student shapes differ");
  }
  auto [rows, cols] = row_view(student_logits);
  Array pt(rows * cols), ps(rows * cols);
  double loss = 0.0;
  for (Index i = 0; i < rows; ++i) {
    auto tr = teacher_logits.values().segment(i * cols, cols);
    auto sr = student_logits.values().segment(i * cols, cols);
    double mt = tr.maxCoeff();
    double ms = sr.maxCoeff();
    Array et = ((tr - mt) / tau).exp();
    Array es = ((sr - ms) / tau).exp();
    double zt = et.sum(), zs = es.sum();
    Array pti = et / zt;
    Array log_pt = (tr - mt) / tau - std::log(zt);
    Array log_ps = (sr - ms) / tau - std::log(zs);
    pt.segment(i * cols, cols) = pti;
    ps.segment(i * cols, cols) = es / zs;
    loss += (pti * (log_pt - log_ps)).sum();
  }
  loss /= static_cast<double>(rows);
  if (!std::isfinite(loss)) throw NonFiniteError("kd_fkld: non-finite loss");
  auto psn = student_logits.node_ptr();
  auto node = make_node(
      {1}, Array::Constant(1, loss), {psn},
      [psn, pt, ps, rows, tau](const Array& g, GradientMap& gm) {
        if (!psn->requires_grad) return;
        Array dx = (ps - pt) * (g[0] / (tau * static_cast<double>(rows)));
        gm.add(psn, dx);
      });
  return Tensor(std::move(node));
}

}  // namespace hptk
