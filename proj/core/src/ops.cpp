#include "pillarnest/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "pillarnest/errors.hpp"

namespace pillarnest {

namespace {

using detail::Node;
using ArrMap = Eigen::Map<Eigen::Array<float, Eigen::Dynamic, 1>>;
using CArrMap = Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, 1>>;

CArrMap arr(const Tensor& t) { return CArrMap(t.data(), t.numel()); }
ArrMap arr(Tensor& t) { return ArrMap(t.data(), t.numel()); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

bool track(const std::initializer_list<const Tensor*>& ins) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Wire `out` onto the tape behind `parents` with the given pull-function.
void attach(Tensor& out, const std::vector<Tensor>& parents, std::function<void(Node&)> fn) {
  out.set_requires_grad(true);
  for (const auto& p : parents)
    if (p.defined()) out.node()->parents.push_back(p.node());
  out.node()->backward = std::move(fn);
}

}  // namespace

void debug_check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  const float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(p[i]))
      throw DomainError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
#else
  (void)t;
  (void)op;
#endif
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  arr(out) = arr(a) + arr(b);
  if (track({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(out, {a, b}, [ca, cb](Node& n) mutable {
      if (ca.requires_grad()) {
        ca.node()->ensure_grad();
        ArrMap(ca.node()->grad.data(), ca.numel()) += CArrMap(n.grad.data(), n.numel());
      }
      if (cb.requires_grad()) {
        cb.node()->ensure_grad();
        ArrMap(cb.node()->grad.data(), cb.numel()) += CArrMap(n.grad.data(), n.numel());
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  arr(out) = arr(a) - arr(b);
  if (track({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(out, {a, b}, [ca, cb](Node& n) mutable {
      if (ca.requires_grad()) {
        ca.node()->ensure_grad();
        ArrMap(ca.node()->grad.data(), ca.numel()) += CArrMap(n.grad.data(), n.numel());
      }
      if (cb.requires_grad()) {
        cb.node()->ensure_grad();
        ArrMap(cb.node()->grad.data(), cb.numel()) -= CArrMap(n.grad.data(), n.numel());
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  arr(out) = arr(a) * arr(b);
  if (track({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(out, {a, b}, [ca, cb](Node& n) mutable {
      CArrMap g(n.grad.data(), n.numel());
      if (ca.requires_grad()) {
        ca.node()->ensure_grad();
        ArrMap(ca.node()->grad.data(), ca.numel()) += g * CArrMap(cb.data(), cb.numel());
      }
      if (cb.requires_grad()) {
        cb.node()->ensure_grad();
        ArrMap(cb.node()->grad.data(), cb.numel()) += g * CArrMap(ca.data(), ca.numel());
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  arr(out) = arr(a) + s;
  if (track({&a})) {
    Tensor ca = a;
    attach(out, {a}, [ca](Node& n) mutable {
      ca.node()->ensure_grad();
      ArrMap(ca.node()->grad.data(), ca.numel()) += CArrMap(n.grad.data(), n.numel());
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  arr(out) = arr(a) * s;
  if (track({&a})) {
    Tensor ca = a;
    attach(out, {a}, [ca, s](Node& n) mutable {
      ca.node()->ensure_grad();
      ArrMap(ca.node()->grad.data(), ca.numel()) += s * CArrMap(n.grad.data(), n.numel());
    });
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).exp();
  debug_check_finite(out, "exp");
  if (track({&x})) {
    Tensor cx = x, y = out;
    attach(out, {x}, [cx, y](Node& n) mutable {
      cx.node()->ensure_grad();
      ArrMap(cx.node()->grad.data(), cx.numel()) +=
          CArrMap(n.grad.data(), n.numel()) * CArrMap(y.data(), y.numel());
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
#ifndef NDEBUG
  for (int64_t i = 0; i < x.numel(); ++i)
    if (x.data()[i] <= 0.0f)
      throw DomainError("log: non-positive input " + std::to_string(x.data()[i]) +
                        " at flat index " + std::to_string(i));
#endif
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).log();
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx](Node& n) mutable {
      cx.node()->ensure_grad();
      ArrMap(cx.node()->grad.data(), cx.numel()) +=
          CArrMap(n.grad.data(), n.numel()) / CArrMap(cx.data(), cx.numel());
    });
  }
  return out;
}

Tensor sqrt(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).sqrt();
  debug_check_finite(out, "sqrt");
  if (track({&x})) {
    Tensor y = out, cx = x;
    attach(out, {x}, [cx, y](Node& n) mutable {
      cx.node()->ensure_grad();
      ArrMap(cx.node()->grad.data(), cx.numel()) +=
          CArrMap(n.grad.data(), n.numel()) / (2.0f * CArrMap(y.data(), y.numel()));
    });
  }
  return out;
}

Tensor pow(const Tensor& x, float p) {
  Tensor out = Tensor::zeros(x.shape());
  if (p == 2.0f) {
    arr(out) = arr(x).square();
  } else {
    arr(out) = arr(x).pow(p);
  }
  debug_check_finite(out, "pow");
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx, p](Node& n) mutable {
      cx.node()->ensure_grad();
      CArrMap xv(cx.data(), cx.numel());
      ArrMap g(cx.node()->grad.data(), cx.numel());
      if (p == 2.0f)
        g += CArrMap(n.grad.data(), n.numel()) * 2.0f * xv;
      else
        g += CArrMap(n.grad.data(), n.numel()) * p * xv.pow(p - 1.0f);
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).logistic();
  if (track({&x})) {
    Tensor y = out, cx = x;
    attach(out, {x}, [cx, y](Node& n) mutable {
      cx.node()->ensure_grad();
      CArrMap yv(y.data(), y.numel());
      ArrMap(cx.node()->grad.data(), cx.numel()) +=
          CArrMap(n.grad.data(), n.numel()) * yv * (1.0f - yv);
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  Tensor th = Tensor::zeros(x.shape());  // cached tanh(u) for the backward pass
  {
    CArrMap xv(x.data(), x.numel());
    ArrMap tv(th.data(), th.numel());
    tv = (kGeluC0 * (xv + kGeluC1 * xv.cube())).tanh();
    arr(out) = 0.5f * xv * (1.0f + tv);
  }
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx, th](Node& n) mutable {
      cx.node()->ensure_grad();
      CArrMap xv(cx.data(), cx.numel());
      CArrMap tv(th.data(), th.numel());
      ArrMap(cx.node()->grad.data(), cx.numel()) +=
          CArrMap(n.grad.data(), n.numel()) *
          (0.5f * (1.0f + tv) +
           0.5f * xv * (1.0f - tv.square()) * kGeluC0 * (1.0f + 3.0f * kGeluC1 * xv.square()));
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo > hi");
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).max(lo).min(hi);
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx, lo, hi](Node& n) mutable {
      cx.node()->ensure_grad();
      const float* xv = cx.data();
      const float* g = n.grad.data();
      float* dst = cx.node()->grad.data();
      for (int64_t i = 0; i < cx.numel(); ++i)
        if (xv[i] >= lo && xv[i] <= hi) dst[i] += g[i];
    });
  }
  return out;
}

Tensor abs(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  arr(out) = arr(x).abs();
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx](Node& n) mutable {
      cx.node()->ensure_grad();
      const float* xv = cx.data();
      const float* g = n.grad.data();
      float* dst = cx.node()->grad.data();
      for (int64_t i = 0; i < cx.numel(); ++i) {
        if (xv[i] > 0.0f)
          dst[i] += g[i];
        else if (xv[i] < 0.0f)
          dst[i] -= g[i];
      }
    });
  }
  return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  // fixed left-to-right accumulation: bitwise reproducible by construction
  float acc = 0.0f;
  const float* p = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += p[i];
  Tensor out = Tensor::scalar(acc);
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx](Node& n) mutable {
      cx.node()->ensure_grad();
      ArrMap(cx.node()->grad.data(), cx.numel()) += n.grad[0];
    });
  }
  return out;
}

// ---- linear / normalization -------------------------------------------------

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() < 1 || w.ndim() != 2)
    throw ConfigError("linear: expected x [..., Din], w [Dout, Din]");
  int din = x.dim(x.ndim() - 1);
  if (w.dim(1) != din)
    throw ConfigError("linear: Din mismatch, x has " + std::to_string(din) + ", w has " +
                      std::to_string(w.dim(1)));
  int dout = w.dim(0);
  if (b.defined() && b.numel() != dout) throw ConfigError("linear: bias size mismatch");
  int64_t m = x.numel() / din;

  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor out = Tensor::zeros(out_shape);
  {
    CMatMap xm(x.data(), m, din);
    CMatMap wm(w.data(), dout, din);
    MatMap ym(out.data(), m, dout);
    ym.noalias() = xm * wm.transpose();
    if (b.defined()) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.data(), dout);
  }
  if (track({&x, &w, &b})) {
    Tensor cx = x, cw = w, cb = b;
    attach(out, {x, w, b}, [cx, cw, cb, m, din, dout](Node& n) mutable {
      CMatMap gy(n.grad.data(), m, dout);
      if (cx.requires_grad()) {
        cx.node()->ensure_grad();
        MatMap gx(cx.node()->grad.data(), m, din);
        gx.noalias() += gy * CMatMap(cw.data(), dout, din);
      }
      if (cw.requires_grad()) {
        cw.node()->ensure_grad();
        MatMap gw(cw.node()->grad.data(), dout, din);
        gw.noalias() += gy.transpose() * CMatMap(cx.data(), m, din);
      }
      if (cb.defined() && cb.requires_grad()) {
        cb.node()->ensure_grad();
        Eigen::Map<Eigen::RowVectorXf>(cb.node()->grad.data(), dout) += gy.colwise().sum();
      }
    });
  }
  return out;
}

Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (eps <= 0.0f) throw ConfigError("layer_norm: eps must be > 0");
  int d = x.dim(x.ndim() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ConfigError("layer_norm_lastdim: gamma/beta extent mismatch");
  int64_t m = x.numel() / d;

  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> mean(size_t(m), 0.0f), invstd(size_t(m), 0.0f);
  const float* xp = x.data();
  const float* gp = gamma.data();
  const float* bp = beta.data();
  float* yp = out.data();
  for (int64_t i = 0; i < m; ++i) {
    const float* row = xp + i * d;
    float mu = 0.0f;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= float(d);
    float var = 0.0f;
    for (int j = 0; j < d; ++j) {
      float c = row[j] - mu;
      var += c * c;
    }
    var /= float(d);
    float is = 1.0f / std::sqrt(var + eps);
    mean[size_t(i)] = mu;
    invstd[size_t(i)] = is;
    float* orow = yp + i * d;
    for (int j = 0; j < d; ++j) orow[j] = (row[j] - mu) * is * gp[j] + bp[j];
  }
  if (track({&x, &gamma, &beta})) {
    Tensor cx = x, cg = gamma, cb = beta;
    auto mean_s = std::make_shared<std::vector<float>>(std::move(mean));
    auto invstd_s = std::make_shared<std::vector<float>>(std::move(invstd));
    attach(out, {x, gamma, beta}, [cx, cg, cb, mean_s, invstd_s, m, d](Node& n) mutable {
      const float* xv = cx.data();
      const float* gv = cg.data();
      const float* gy = n.grad.data();
      float* gx = nullptr;
      if (cx.requires_grad()) {
        cx.node()->ensure_grad();
        gx = cx.node()->grad.data();
      }
      float* gg = nullptr;
      float* gb = nullptr;
      if (cg.requires_grad()) {
        cg.node()->ensure_grad();
        gg = cg.node()->grad.data();
      }
      if (cb.requires_grad()) {
        cb.node()->ensure_grad();
        gb = cb.node()->grad.data();
      }
      for (int64_t i = 0; i < m; ++i) {
        const float* row = xv + i * d;
        const float* gyr = gy + i * d;
        float mu = (*mean_s)[size_t(i)];
        float is = (*invstd_s)[size_t(i)];
        float s1 = 0.0f, s2 = 0.0f;
        for (int j = 0; j < d; ++j) {
          float xh = (row[j] - mu) * is;
          float t = gyr[j] * gv[j];
          s1 += t;
          s2 += t * xh;
          if (gg) gg[j] += gyr[j] * xh;
          if (gb) gb[j] += gyr[j];
        }
        if (gx) {
          float* gxr = gx + i * d;
          for (int j = 0; j < d; ++j) {
            float xh = (row[j] - mu) * is;
            gxr[j] += is * (gyr[j] * gv[j] - (s1 + xh * s2) / float(d));
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm_cf(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (eps <= 0.0f) throw ConfigError("layer_norm: eps must be > 0");
  if (x.ndim() != 4) throw ConfigError("layer_norm_cf: expected [N,C,H,W]");
  int n_ = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw ConfigError("layer_norm_cf: gamma/beta extent " + std::to_string(gamma.numel()) +
                      " does not match C=" + std::to_string(c));
  const int64_t hw = int64_t(h) * w;

  Tensor out = Tensor::zeros(x.shape());
  // mean/invstd per spatial position, vectorized along HW
  std::vector<float> mean(size_t(n_ * hw)), invstd(size_t(n_ * hw));
  const float* gp = gamma.data();
  const float* bp = beta.data();
  for (int b = 0; b < n_; ++b) {
    const float* xb = x.data() + int64_t(b) * c * hw;
    float* yb = out.data() + int64_t(b) * c * hw;
    float* mu = mean.data() + int64_t(b) * hw;
    float* is = invstd.data() + int64_t(b) * hw;
    ArrMap mu_a(mu, hw);
    ArrMap is_a(is, hw);
    mu_a.setZero();
    for (int j = 0; j < c; ++j) mu_a += CArrMap(xb + int64_t(j) * hw, hw);
    mu_a /= float(c);
    is_a.setZero();
    for (int j = 0; j < c; ++j) is_a += (CArrMap(xb + int64_t(j) * hw, hw) - mu_a).square();
    is_a = ((is_a / float(c)) + eps).rsqrt();
    for (int j = 0; j < c; ++j)
      ArrMap(yb + int64_t(j) * hw, hw) =
          (CArrMap(xb + int64_t(j) * hw, hw) - mu_a) * is_a * gp[j] + bp[j];
  }
  if (track({&x, &gamma, &beta})) {
    Tensor cx = x, cg = gamma, cbt = beta;
    auto mean_s = std::make_shared<std::vector<float>>(std::move(mean));
    auto invstd_s = std::make_shared<std::vector<float>>(std::move(invstd));
    attach(out, {x, gamma, beta}, [cx, cg, cbt, mean_s, invstd_s, n_, c, hw](Node& n) mutable {
      const float* gv = cg.data();
      std::vector<float> s1(size_t(hw), 0.0f), s2(size_t(hw), 0.0f), xh(size_t(hw), 0.0f);
      for (int b = 0; b < n_; ++b) {
        const float* xb = cx.data() + int64_t(b) * c * hw;
        const float* gyb = n.grad.data() + int64_t(b) * c * hw;
        CArrMap mu_a(mean_s->data() + int64_t(b) * hw, hw);
        CArrMap is_a(invstd_s->data() + int64_t(b) * hw, hw);
        ArrMap s1_a(s1.data(), hw), s2_a(s2.data(), hw), xh_a(xh.data(), hw);
        s1_a.setZero();
        s2_a.setZero();
        for (int j = 0; j < c; ++j) {
          CArrMap gy(gyb + int64_t(j) * hw, hw);
          xh_a = (CArrMap(xb + int64_t(j) * hw, hw) - mu_a) * is_a;
          s1_a += gy * gv[j];
          s2_a += gy * gv[j] * xh_a;
          if (cg.requires_grad()) {
            cg.node()->ensure_grad();
            cg.node()->grad[size_t(j)] += (gy * xh_a).sum();
          }
          if (cbt.requires_grad()) {
            cbt.node()->ensure_grad();
            cbt.node()->grad[size_t(j)] += gy.sum();
          }
        }
        if (cx.requires_grad()) {
          cx.node()->ensure_grad();
          float* gxb = cx.node()->grad.data() + int64_t(b) * c * hw;
          for (int j = 0; j < c; ++j) {
            CArrMap gy(gyb + int64_t(j) * hw, hw);
            xh_a = (CArrMap(xb + int64_t(j) * hw, hw) - mu_a) * is_a;
            ArrMap(gxb + int64_t(j) * hw, hw) +=
                is_a * (gy * gv[j] - (s1_a + xh_a * s2_a) / float(c));
          }
        }
      }
    });
  }
  return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  if (x.ndim() != 4) throw ConfigError("scale_channels: expected [N,C,H,W]");
  int n_ = x.dim(0), c = x.dim(1);
  int64_t hw = int64_t(x.dim(2)) * x.dim(3);
  if (s.numel() != c) throw ConfigError("scale_channels: scale extent mismatch");

  Tensor out = Tensor::zeros(x.shape());
  for (int b = 0; b < n_; ++b)
    for (int j = 0; j < c; ++j) {
      int64_t off = (int64_t(b) * c + j) * hw;
      ArrMap(out.data() + off, hw) = CArrMap(x.data() + off, hw) * s.data()[j];
    }
  if (track({&x, &s})) {
    Tensor cx = x, cs = s;
    attach(out, {x, s}, [cx, cs, n_, c, hw](Node& n) mutable {
      for (int b = 0; b < n_; ++b)
        for (int j = 0; j < c; ++j) {
          int64_t off = (int64_t(b) * c + j) * hw;
          CArrMap gy(n.grad.data() + off, hw);
          if (cx.requires_grad()) {
            cx.node()->ensure_grad();
            ArrMap(cx.node()->grad.data() + off, hw) += gy * cs.data()[j];
          }
          if (cs.requires_grad()) {
            cs.node()->ensure_grad();
            cs.node()->grad[size_t(j)] += (gy * CArrMap(cx.data() + off, hw)).sum();
          }
        }
    });
  }
  return out;
}

// ---- shaping ---------------------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ConfigError("concat_channels: empty input list");
  int n_ = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  if (n_ != 1) throw ConfigError("concat_channels: only N=1 supported");
  int ctot = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != 4 || t.dim(0) != n_ || t.dim(2) != h || t.dim(3) != w)
      throw ConfigError("concat_channels: spatial/batch mismatch " + shape_str(t.shape()));
    ctot += t.dim(1);
  }
  Tensor out = Tensor::zeros({1, ctot, h, w});
  int64_t off = 0;
  bool need = false;
  for (const Tensor& t : xs) {
    std::copy(t.data(), t.data() + t.numel(), out.data() + off);
    off += t.numel();
    need = need || (grad_enabled() && t.requires_grad());
  }
  if (need) {
    std::vector<Tensor> cap = xs;
    attach(out, cap, [cap](Node& n) mutable {
      int64_t o = 0;
      for (Tensor& t : cap) {
        if (t.requires_grad()) {
          t.node()->ensure_grad();
          ArrMap(t.node()->grad.data(), t.numel()) += CArrMap(n.grad.data() + o, t.numel());
        }
        o += t.numel();
      }
    });
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.ndim() != 4) throw ConfigError("upsample_nearest: expected [N,C,H,W]");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  int n_ = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int ho = h * factor, wo = w * factor;
  Tensor out = Tensor::zeros({n_, c, ho, wo});
  for (int b = 0; b < n_; ++b)
    for (int j = 0; j < c; ++j) {
      const float* src = x.data() + (int64_t(b) * c + j) * h * w;
      float* dst = out.data() + (int64_t(b) * c + j) * ho * wo;
      for (int iy = 0; iy < ho; ++iy) {
        const float* srow = src + int64_t(iy / factor) * w;
        float* drow = dst + int64_t(iy) * wo;
        for (int ix = 0; ix < wo; ++ix) drow[ix] = srow[ix / factor];
      }
    }
  if (track({&x})) {
    Tensor cx = x;
    attach(out, {x}, [cx, factor, n_, c, h, w, ho, wo](Node& n) mutable {
      cx.node()->ensure_grad();
      for (int b = 0; b < n_; ++b)
        for (int j = 0; j < c; ++j) {
          float* gdst = cx.node()->grad.data() + (int64_t(b) * c + j) * h * w;
          const float* gsrc = n.grad.data() + (int64_t(b) * c + j) * ho * wo;
          for (int iy = 0; iy < ho; ++iy) {
            float* grow = gdst + int64_t(iy / factor) * w;
            const float* srow = gsrc + int64_t(iy) * wo;
            for (int ix = 0; ix < wo; ++ix) grow[ix / factor] += srow[ix];
          }
        }
    });
  }
  return out;
}

// ---- point-set ops ---------------------------------------------------------

Tensor pool_points(const Tensor& features, const Tensor& mask) {
  if (features.ndim() != 3 || mask.ndim() != 2)
    throw ConfigError("pool_points: expected features [P,N,D], mask [P,N]");
  int p = features.dim(0), nmax = features.dim(1), d = features.dim(2);
  if (mask.dim(0) != p || mask.dim(1) != nmax)
    throw ConfigError("pool_points: mask shape mismatch");

  Tensor out = Tensor::zeros({p, 2 * d});
  // argmax slot per (pillar, feature) drives the max half's backward
  auto argmax = std::make_shared<std::vector<int>>(size_t(p) * d, -1);
  auto counts = std::make_shared<std::vector<int>>(size_t(p), 0);
  const float* fp = features.data();
  const float* mp = mask.data();
  float* op = out.data();
  for (int i = 0; i < p; ++i) {
    int cnt = 0;
    float* orow = op + int64_t(i) * 2 * d;
    int* am = argmax->data() + int64_t(i) * d;
    for (int j = 0; j < nmax; ++j) {
      if (mp[int64_t(i) * nmax + j] == 0.0f) continue;
      const float* pt = fp + (int64_t(i) * nmax + j) * d;
      if (cnt == 0) {
        for (int k = 0; k < d; ++k) {
          orow[k] = pt[k];
          am[k] = j;
          orow[d + k] = pt[k];
        }
      } else {
        for (int k = 0; k < d; ++k) {
          if (pt[k] > orow[k]) {
            orow[k] = pt[k];
            am[k] = j;
          }
          orow[d + k] += pt[k];
        }
      }
      ++cnt;
    }
    if (cnt == 0)
      throw UsageError("pool_points: pillar " + std::to_string(i) + " has no valid points");
    (*counts)[size_t(i)] = cnt;
    for (int k = 0; k < d; ++k) orow[d + k] /= float(cnt);
  }
  if (track({&features})) {
    Tensor cf = features, cm = mask;
    attach(out, {features}, [cf, cm, argmax, counts, p, nmax, d](Node& n) mutable {
      cf.node()->ensure_grad();
      float* gf = cf.node()->grad.data();
      const float* mp2 = cm.data();
      const float* gy = n.grad.data();
      for (int i = 0; i < p; ++i) {
        const float* grow = gy + int64_t(i) * 2 * d;
        const int* am = argmax->data() + int64_t(i) * d;
        float inv = 1.0f / float((*counts)[size_t(i)]);
        for (int k = 0; k < d; ++k)
          gf[(int64_t(i) * nmax + am[k]) * d + k] += grow[k];
        for (int j = 0; j < nmax; ++j) {
          if (mp2[int64_t(i) * nmax + j] == 0.0f) continue;
          float* gpt = gf + (int64_t(i) * nmax + j) * d;
          for (int k = 0; k < d; ++k) gpt[k] += grow[d + k] * inv;
        }
      }
    });
  }
  return out;
}

Tensor scatter_pillars(const Tensor& pooled, const std::vector<std::pair<int, int>>& coords,
                       int h, int w) {
  if (pooled.ndim() != 2) throw ConfigError("scatter_pillars: expected pooled [P,C]");
  int p = pooled.dim(0), c = pooled.dim(1);
  if (int(coords.size()) != p) throw ConfigError("scatter_pillars: coords size mismatch");
  Tensor out = Tensor::zeros({1, c, h, w});
  int64_t hw = int64_t(h) * w;
  for (int i = 0; i < p; ++i) {
    auto [r, col] = coords[size_t(i)];
    if (r < 0 || r >= h || col < 0 || col >= w)
      throw ConfigError("scatter_pillars: coord (" + std::to_string(r) + "," +
                        std::to_string(col) + ") outside " + std::to_string(h) + "x" +
                        std::to_string(w));
    const float* src = pooled.data() + int64_t(i) * c;
    for (int j = 0; j < c; ++j) out.data()[int64_t(j) * hw + int64_t(r) * w + col] = src[j];
  }
  if (track({&pooled})) {
    Tensor cp = pooled;
    auto coords_s = std::make_shared<std::vector<std::pair<int, int>>>(coords);
    attach(out, {pooled}, [cp, coords_s, c, w, hw](Node& n) mutable {
      cp.node()->ensure_grad();
      float* gp = cp.node()->grad.data();
      for (size_t i = 0; i < coords_s->size(); ++i) {
        auto [r, col] = (*coords_s)[i];
        for (int j = 0; j < c; ++j)
          gp[int64_t(i) * c + j] += n.grad[size_t(int64_t(j) * hw + int64_t(r) * w + col)];
      }
    });
  }
  return out;
}

}  // namespace pillarnest
