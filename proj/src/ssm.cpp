#include "hptk/ssm.hpp"

#include <cmath>

namespace hptk {

namespace {
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
double softplus_val(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
}  // namespace

Tensor ssm_scan(const Tensor& x_hat, const Tensor& b_hat, const Tensor& c_hat,
                const Tensor& a, const Tensor& d, const Tensor& dt) {
  if (x_hat.rank() != 3) throw DimensionError("ssm_scan: x_hat must be [L, m_h, m_d]");
  if (b_hat.rank() != 3 || c_hat.rank() != 3) {
    throw DimensionError("ssm_scan: b_hat/c_hat must be [L, g, d_s]");
  }
  const Index L = x_hat.dim(0), mh = x_hat.dim(1), md = x_hat.dim(2);
  const Index g = b_hat.dim(1), ds = b_hat.dim(2);
  if (b_hat.dim(0) != L || c_hat.dim(0) != L || c_hat.dim(1) != g || c_hat.dim(2) != ds) {
    throw DimensionError("ssm_scan: sequence or state shapes do not match");
  }
  if (a.numel() != mh || d.numel() != mh) {
    throw DimensionError("ssm_scan: a and d must have one entry per head");
  }
  if (dt.rank() != 2 || dt.dim(0) != L || dt.dim(1) != mh) {
    throw DimensionError("ssm_scan: dt must be [L, m_h]");
  }
  if (g < 1 || mh % g != 0) {
    throw ConfigError("ssm_scan: head count must be divisible by the group count");
  }
  const Index heads_per_group = mh / g;

  const Array& xv = x_hat.values();
  const Array& bv = b_hat.values();
  const Array& cv = c_hat.values();
  const Array& av = a.values();
  const Array& dv = d.values();
  const Array& dtv = dt.values();

  Array y(L * mh * md);
  // Full state history kept for the backward recurrence.
  Array hist(L * mh * md * ds);
  Array delta(L * mh), decay(L * mh);

  for (Index h = 0; h < mh; ++h) {
    const Index grp = h / heads_per_group;
    Array state = Array::Zero(md * ds);
    for (Index t = 0; t < L; ++t) {
      const double dl = softplus_val(dtv[t * mh + h]);
      const double dc = std::exp(dl * av[h]);
      delta[t * mh + h] = dl;
      decay[t * mh + h] = dc;
      const double* bt = bv.data() + (t * g + grp) * ds;
      const double* ct = cv.data() + (t * g + grp) * ds;
      const double* xt = xv.data() + (t * mh + h) * md;
      double* yt = y.data() + (t * mh + h) * md;
      double* ht = hist.data() + ((t * mh + h) * md) * ds;
      for (Index di = 0; di < md; ++di) {
        const double upd = dl * xt[di];
        double acc = 0.0;
        for (Index s = 0; s < ds; ++s) {
          double hs = dc * state[di * ds + s] + upd * bt[s];
          state[di * ds + s] = hs;
          ht[di * ds + s] = hs;
          acc += ct[s] * hs;
        }
        yt[di] = acc + dv[h] * xt[di];
      }
    }
  }
  detail::check_finite(y, "ssm_scan");

  auto px = x_hat.node_ptr();
  auto pb = b_hat.node_ptr();
  auto pc = c_hat.node_ptr();
  auto pa = a.node_ptr();
  auto pd = d.node_ptr();
  auto pdt = dt.node_ptr();
  auto node = detail::make_node(
      {L, mh, md}, std::move(y), {px, pb, pc, pa, pd, pdt},
      [=, hist = std::move(hist), delta = std::move(delta),
       decay = std::move(decay)](const Array& gout, GradientMap& gm) {
        Array dx = Array::Zero(L * mh * md);
        Array db = Array::Zero(L * g * ds);
        Array dc_ = Array::Zero(L * g * ds);
        Array da = Array::Zero(mh);
        Array dd = Array::Zero(mh);
        Array ddt = Array::Zero(L * mh);
        const Array& xv = px->value;
        const Array& bv = pb->value;
        const Array& cv = pc->value;
        const Array& av = pa->value;
        const Array& dv = pd->value;
        const Array& dtv = pdt->value;

        for (Index h = 0; h < mh; ++h) {
          const Index grp = h / heads_per_group;
          Array adj = Array::Zero(md * ds);  // dL/dH after step t
          for (Index t = L - 1; t >= 0; --t) {
            const double dl = delta[t * mh + h];
            const double dcay = decay[t * mh + h];
            const double* bt = bv.data() + (t * g + grp) * ds;
            const double* ct = cv.data() + (t * g + grp) * ds;
            const double* xt = xv.data() + (t * mh + h) * md;
            const double* gt = gout.data() + (t * mh + h) * md;
            const double* ht = hist.data() + ((t * mh + h) * md) * ds;
            const double* hprev =
                t > 0 ? hist.data() + (((t - 1) * mh + h) * md) * ds : nullptr;
            double d_decay = 0.0, d_delta = 0.0;
            for (Index di = 0; di < md; ++di) {
              const double gd = gt[di];
              dd[h] += gd * xt[di];
              double dxi = gd * dv[h];
              for (Index s = 0; s < ds; ++s) {
                double p = adj[di * ds + s] + gd * ct[s];
                dc_[(t * g + grp) * ds + s] += gd * ht[di * ds + s];
                const double hp = hprev ? hprev[di * ds + s] : 0.0;
                d_decay += p * hp;
                db[(t * g + grp) * ds + s] += p * dl * xt[di];
                dxi += p * dl * bt[s];
                d_delta += p * bt[s] * xt[di];
                adj[di * ds + s] = p * dcay;
              }
              dx[(t * mh + h) * md + di] += dxi;
            }
            // decay = exp(delta * a_h)
            d_delta += d_decay * av[h] * dcay;
            da[h] += d_decay * dl * dcay;
            ddt[t * mh + h] = d_delta * sigmoid(dtv[t * mh + h]);
          }
        }
        if (px->requires_grad) gm.add(px, dx);
        if (pb->requires_grad) gm.add(pb, db);
        if (pc->requires_grad) gm.add(pc, dc_);
        if (pa->requires_grad) gm.add(pa, da);
        if (pd->requires_grad) gm.add(pd, dd);
        if (pdt->requires_grad) gm.add(pdt, ddt);
      });
  return Tensor(std::move(node));
}

}  // namespace hptk
