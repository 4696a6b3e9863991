#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "facesr/autodiff.hpp"
#include "facesr/tensor.hpp"

namespace facesr {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "add");
  Tensor out = a->val;
  for (int i = 0; i < out.numel(); ++i) out.v[i] += b->val.v[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) accumulate(n.parents[0]->grad, n.grad);
    if (n.parents[1]->needs_grad) accumulate(n.parents[1]->grad, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "sub");
  Tensor out = a->val;
  for (int i = 0; i < out.numel(); ++i) out.v[i] -= b->val.v[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) accumulate(n.parents[0]->grad, n.grad);
    if (n.parents[1]->needs_grad)
      for (int i = 0; i < n.grad.numel(); ++i) n.parents[1]->grad.v[i] -= n.grad.v[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "mul");
  Tensor out = a->val;
  for (int i = 0; i < out.numel(); ++i) out.v[i] *= b->val.v[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad)
      for (int i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad.v[i] += n.grad.v[i] * n.parents[1]->val.v[i];
    if (n.parents[1]->needs_grad)
      for (int i = 0; i < n.grad.numel(); ++i) n.parents[1]->grad.v[i] += n.grad.v[i] * n.parents[0]->val.v[i];
  });
}

inline Var scale(const Var& a, double k) {
  Tensor out = a->val;
  for (double& x : out.v) x *= k;
  return make_op(std::move(out), {a}, [k](Node& n) {
    if (n.parents[0]->needs_grad)
      for (int i = 0; i < n.grad.numel(); ++i) n.parents[0]->grad.v[i] += k * n.grad.v[i];
  });
}

inline Var add_scalar(const Var& a, double k) {
  Tensor out = a->val;
  for (double& x : out.v) x += k;
  return make_op(std::move(out), {a}, [](Node& n) {
    if (n.parents[0]->needs_grad) accumulate(n.parents[0]->grad, n.grad);
  });
}

// y[c] = x[c] * m for a single-channel constant map m (mask weighting).
inline Var mul_mask(const Var& x, const Tensor& mask) {
  const int c = x->val.channels(), h = x->val.height(), w = x->val.width();
  if (mask.shape != std::vector<int>{1, h, w}) throw std::invalid_argument("mul_mask: mask must be (1,H,W)");
  Tensor out = x->val;
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < plane; ++i) out.v[ch * plane + i] *= mask.v[i];
  return make_op(std::move(out), {x}, [mask, plane, c](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int ch = 0; ch < c; ++ch)
      for (size_t i = 0; i < plane; ++i) n.parents[0]->grad.v[ch * plane + i] += n.grad.v[ch * plane + i] * mask.v[i];
  });
}

inline Var concat_ch(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_ch: empty");
  const int h = parts[0]->val.height(), w = parts[0]->val.width();
  int ctot = 0;
  for (const Var& p : parts) {
    if (p->val.height() != h || p->val.width() != w) throw std::invalid_argument("concat_ch: spatial mismatch");
    ctot += p->val.channels();
  }
  Tensor out({ctot, h, w});
  size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p->val.v.begin(), p->val.v.end(), out.v.begin() + off);
    off += p->val.v.size();
  }
  return make_op(std::move(out), parts, [](Node& n) {
    size_t off = 0;
    for (const Var& p : n.parents) {
      if (p->needs_grad)
        for (size_t i = 0; i < p->val.v.size(); ++i) p->grad.v[i] += n.grad.v[off + i];
      off += p->val.v.size();
    }
  });
}

inline Var abs_(const Var& a) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::abs(x);
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i) {
      double x = n.parents[0]->val.v[i];
      n.parents[0]->grad.v[i] += n.grad.v[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
    }
  });
}

inline Var square(const Var& a) {
  Tensor out = a->val;
  for (double& x : out.v) x *= x;
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad.v[i] += 2.0 * n.parents[0]->val.v[i] * n.grad.v[i];
  });
}

inline Var mean_all(const Var& a) {
  double s = 0.0;
  for (double x : a->val.v) s += x;
  const double n_elems = a->val.numel();
  return make_op(Tensor::scalar(s / n_elems), {a}, [n_elems](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const double g = n.grad.v[0] / n_elems;
    for (double& gv : n.parents[0]->grad.v) gv += g;
  });
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double x : a->val.v) s += x;
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const double g = n.grad.v[0];
    for (double& gv : n.parents[0]->grad.v) gv += g;
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Var leaky_relu(const Var& a, double slope = 0.2) {
  Tensor out = a->val;
  for (double& x : out.v) x = x > 0 ? x : slope * x;
  return make_op(std::move(out), {a}, [slope](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad.v[i] += n.grad.v[i] * (n.parents[0]->val.v[i] > 0 ? 1.0 : slope);
  });
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

namespace detail {
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

// C-infinity stand-in for leaky_relu with the same asymptotes; used by the
// finite-difference gradient checks.
inline Var smooth_leaky(const Var& a, double slope = 0.2) {
  Tensor out = a->val;
  for (double& x : out.v) x = slope * x + (1.0 - slope) * detail::softplus(x);
  return make_op(std::move(out), {a}, [slope](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->grad.v[i] += n.grad.v[i] * (slope + (1.0 - slope) * detail::sigmoid(n.parents[0]->val.v[i]));
  });
}

// Saturating output: (tanh(x) + 1) / 2, bounded to (0, 1).
inline Var tanh01(const Var& a) {
  Tensor out = a->val;
  for (double& x : out.v) x = 0.5 * (std::tanh(x) + 1.0);
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i) {
      double y = n.val.v[i];
      n.parents[0]->grad.v[i] += n.grad.v[i] * 2.0 * y * (1.0 - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

// Gathers src (C, SH, SW) into a (C*KH*KW) x (OH*OW) matrix where column
// (oy, ox) row (c, ky, kx) reads src[c, oy*stride - pad + ky, ox*stride - pad + kx]
// (zero outside). The same mapping serves conv forward and transposed-conv
// backward; col2im_add is its scatter adjoint.
inline void im2col(const Tensor& src, int kh, int kw, int stride, int pad, int oh, int ow, std::vector<double>& col) {
  const int c = src.shape[0], sh = src.shape[1], sw = src.shape[2];
  col.assign(static_cast<size_t>(c) * kh * kw * oh * ow, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* crow = col.data() + (static_cast<size_t>((ch * kh + ky) * kw + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= sh) continue;
          const double* srow = src.v.data() + (static_cast<size_t>(ch) * sh + iy) * sw;
          double* drow = crow + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < sw) drow[ox] = srow[ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const std::vector<double>& col, int kh, int kw, int stride, int pad, int oh, int ow,
                       Tensor& dst) {
  const int c = dst.shape[0], sh = dst.shape[1], sw = dst.shape[2];
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* crow = col.data() + (static_cast<size_t>((ch * kh + ky) * kw + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= sh) continue;
          double* drow = dst.v.data() + (static_cast<size_t>(ch) * sh + iy) * sw;
          const double* srow = crow + static_cast<size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < sw) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x (IC,H,W), w (OC,IC,KH,KW), b (OC) -> (OC,OH,OW).
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const int ic = x->val.shape[0], h = x->val.shape[1], wd = x->val.shape[2];
  const int oc = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];
  if (w->val.shape[1] != ic) throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  std::vector<double> col;
  detail::im2col(x->val, kh, kw, stride, pad, oh, ow, col);
  Tensor out({oc, oh, ow});
  {
    ConstMatMap wm(w->val.v.data(), oc, ic * kh * kw);
    ConstMatMap cm(col.data(), ic * kh * kw, oh * ow);
    MatMap om(out.v.data(), oc, oh * ow);
    om.noalias() = wm * cm;
  }
  for (int o = 0; o < oc; ++o) {
    const double bias = b->val.v[o];
    double* row = out.v.data() + static_cast<size_t>(o) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) row[i] += bias;
  }

  return make_op(std::move(out), {x, w, b}, [stride, pad, kh, kw, oh, ow, ic, oc](Node& n) {
    const Var& x = n.parents[0];
    const Var& w = n.parents[1];
    const Var& b = n.parents[2];
    ConstMatMap dy(n.grad.v.data(), oc, oh * ow);
    if (b->needs_grad) {
      for (int o = 0; o < oc; ++o) b->grad.v[o] += dy.row(o).sum();
    }
    if (w->needs_grad) {
      std::vector<double> col;
      detail::im2col(x->val, kh, kw, stride, pad, oh, ow, col);
      ConstMatMap cm(col.data(), ic * kh * kw, oh * ow);
      MatMap dwm(w->grad.v.data(), oc, ic * kh * kw);
      dwm.noalias() += dy * cm.transpose();
    }
    if (x->needs_grad) {
      std::vector<double> dcol(static_cast<size_t>(ic) * kh * kw * oh * ow);
      ConstMatMap wm(w->val.v.data(), oc, ic * kh * kw);
      MatMap dcm(dcol.data(), ic * kh * kw, oh * ow);
      dcm.noalias() = wm.transpose() * dy;
      detail::col2im_add(dcol, kh, kw, stride, pad, oh, ow, x->grad);
    }
  });
}

// x (IC,H,W), w (IC,OC,KH,KW), b (OC) -> (OC,OH,OW) with OH = (H-1)*stride - 2*pad + KH.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const int ic = x->val.shape[0], h = x->val.shape[1], wd = x->val.shape[2];
  if (w->val.shape[0] != ic) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int oc = w->val.shape[1], kh = w->val.shape[2], kw = w->val.shape[3];
  const int oh = (h - 1) * stride - 2 * pad + kh;
  const int ow = (wd - 1) * stride - 2 * pad + kw;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv_transpose2d: degenerate output");

  Tensor out({oc, oh, ow});
  {
    std::vector<double> coly(static_cast<size_t>(oc) * kh * kw * h * wd);
    ConstMatMap wm(w->val.v.data(), ic, oc * kh * kw);
    ConstMatMap xm(x->val.v.data(), ic, h * wd);
    MatMap cym(coly.data(), oc * kh * kw, h * wd);
    cym.noalias() = wm.transpose() * xm;
    detail::col2im_add(coly, kh, kw, stride, pad, h, wd, out);
  }
  for (int o = 0; o < oc; ++o) {
    const double bias = b->val.v[o];
    double* row = out.v.data() + static_cast<size_t>(o) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) row[i] += bias;
  }

  return make_op(std::move(out), {x, w, b}, [stride, pad, kh, kw, oh, ow, ic, oc, h, wd](Node& n) {
    const Var& x = n.parents[0];
    const Var& w = n.parents[1];
    const Var& b = n.parents[2];
    if (b->needs_grad) {
      for (int o = 0; o < oc; ++o) {
        const double* row = n.grad.v.data() + static_cast<size_t>(o) * oh * ow;
        double s = 0.0;
        for (int i = 0; i < oh * ow; ++i) s += row[i];
        b->grad.v[o] += s;
      }
    }
    if (x->needs_grad || w->needs_grad) {
      std::vector<double> dycol;
      detail::im2col(n.grad, kh, kw, stride, pad, h, wd, dycol);
      ConstMatMap dyc(dycol.data(), oc * kh * kw, h * wd);
      if (x->needs_grad) {
        ConstMatMap wm(w->val.v.data(), ic, oc * kh * kw);
        MatMap dxm(x->grad.v.data(), ic, h * wd);
        dxm.noalias() += wm * dyc;
      }
      if (w->needs_grad) {
        ConstMatMap xm(x->val.v.data(), ic, h * wd);
        MatMap dwm(w->grad.v.data(), ic, oc * kh * kw);
        dwm.noalias() += xm * dyc.transpose();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

inline Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
  if (gamma->val.shape != std::vector<int>{c} || beta->val.shape != std::vector<int>{c})
    throw std::invalid_argument("instance_norm: gamma/beta must be (C)");
  const int plane = h * w;

  Tensor xhat({c, h, w});
  std::vector<double> inv_std(c);
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const double* xp = x->val.v.data() + static_cast<size_t>(ch) * plane;
    double mu = 0.0;
    for (int i = 0; i < plane; ++i) mu += xp[i];
    mu /= plane;
    double var = 0.0;
    for (int i = 0; i < plane; ++i) {
      double d = xp[i] - mu;
      var += d * d;
    }
    var /= plane;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = inv;
    double* xh = xhat.v.data() + static_cast<size_t>(ch) * plane;
    double* op = out.v.data() + static_cast<size_t>(ch) * plane;
    const double g = gamma->val.v[ch], bt = beta->val.v[ch];
    for (int i = 0; i < plane; ++i) {
      xh[i] = (xp[i] - mu) * inv;
      op[i] = g * xh[i] + bt;
    }
  }

  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), c, plane](Node& n) {
                   const Var& x = n.parents[0];
                   const Var& gamma = n.parents[1];
                   const Var& beta = n.parents[2];
                   for (int ch = 0; ch < c; ++ch) {
                     const double* dy = n.grad.v.data() + static_cast<size_t>(ch) * plane;
                     const double* xh = xhat.v.data() + static_cast<size_t>(ch) * plane;
                     double sum_dy = 0.0, sum_dy_xh = 0.0;
                     for (int i = 0; i < plane; ++i) {
                       sum_dy += dy[i];
                       sum_dy_xh += dy[i] * xh[i];
                     }
                     if (gamma->needs_grad) gamma->grad.v[ch] += sum_dy_xh;
                     if (beta->needs_grad) beta->grad.v[ch] += sum_dy;
                     if (x->needs_grad) {
                       const double g = gamma->val.v[ch];
                       const double k = g * inv_std[ch] / plane;
                       double* dx = x->grad.v.data() + static_cast<size_t>(ch) * plane;
                       for (int i = 0; i < plane; ++i)
                         dx[i] += k * (plane * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

inline Var avg_pool2(const Var& x) {
  const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        out.at(ch, oy, ox) = 0.25 * (x->val.at(ch, 2 * oy, 2 * ox) + x->val.at(ch, 2 * oy, 2 * ox + 1) +
                                     x->val.at(ch, 2 * oy + 1, 2 * ox) + x->val.at(ch, 2 * oy + 1, 2 * ox + 1));
  return make_op(std::move(out), {x}, [c, oh, ow](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& dx = n.parents[0]->grad;
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g = 0.25 * n.grad.at(ch, oy, ox);
          dx.at(ch, 2 * oy, 2 * ox) += g;
          dx.at(ch, 2 * oy, 2 * ox + 1) += g;
          dx.at(ch, 2 * oy + 1, 2 * ox) += g;
          dx.at(ch, 2 * oy + 1, 2 * ox + 1) += g;
        }
  });
}

inline Var max_pool2(const Var& x) {
  const int c = x->val.shape[0], h = x->val.shape[1], w = x->val.shape[2];
  if (h % 2 || w % 2) throw std::invalid_argument("max_pool2: odd spatial size");
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  std::vector<int> arg(static_cast<size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        int best = ((ch * h) + 2 * oy) * w + 2 * ox;
        double bv = x->val.v[best];
        const int cands[3] = {best + 1, best + w, best + w + 1};
        for (int idx : cands)
          if (x->val.v[idx] > bv) {
            bv = x->val.v[idx];
            best = idx;
          }
        out.at(ch, oy, ox) = bv;
        arg[(static_cast<size_t>(ch) * oh + oy) * ow + ox] = best;
      }
  return make_op(std::move(out), {x}, [arg = std::move(arg)](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (size_t i = 0; i < arg.size(); ++i) n.parents[0]->grad.v[arg[i]] += n.grad.v[i];
  });
}

}  // namespace facesr
