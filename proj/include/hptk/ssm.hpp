#ifndef HPTK_SSM_HPP
#define HPTK_SSM_HPP

#include "hptk/tensor.hpp"

namespace hptk {

/// Selective scan over per-head states.
///
///   x_hat  [L, m_h, m_d]   conv output of the x projection
///   b_hat  [L, g, d_s]     conv output of the B projection
///   c_hat  [L, g, d_s]     conv output of the C projection
///   a      [m_h]           state-transition rates, strictly negative
///   d      [m_h]           feed-through
///   dt     [L, m_h]        raw step logits; delta = softplus(dt)
///
/// Head h reads the B/C block of its group floor(h / (m_h/g)). Per position:
///   decay  = exp(delta * a_h)
///   H      = decay * H + delta * b_hat[t,g,:] * x_hat[t,h,:]   (outer product)
///   y[t,h,d] = sum_s c_hat[t,g,s] * H[d,s] + d_h * x_hat[t,h,d]
///
/// Differentiable w.r.t. every tensor input.
Tensor ssm_scan(const Tensor& x_hat, const Tensor& b_hat, const Tensor& c_hat,
                const Tensor& a, const Tensor& d, const Tensor& dt);

}  // namespace hptk

#endif
