#include <Eigen/Core>
#include <cstring>
#include <memory>

#include "pillarnest/errors.hpp"
#include "pillarnest/ops.hpp"

namespace pillarnest {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

struct ConvDims {
  int n, c, h, w;        // input
  int co, cg, kh, kw;    // weight (cg = c / groups)
  int stride, padding, groups;
  int ho, wo;            // output
};

ConvDims resolve_dims(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                      int stride, int padding, int groups) {
  if (x.ndim() != 4) throw ConfigError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 4) throw ConfigError("conv2d: weight must be [Co,C/g,kh,kw], got " + shape_str(w.shape()));
  if (stride < 1 || padding < 0 || groups < 1) throw ConfigError("conv2d: bad stride/padding/groups");
  ConvDims d{};
  d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.co = w.dim(0); d.cg = w.dim(1); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.padding = padding; d.groups = groups;
  if (d.c % groups != 0)
    throw ConfigError("conv2d: C=" + std::to_string(d.c) + " not divisible by groups=" +
                      std::to_string(groups));
  if (d.co % groups != 0)
    throw ConfigError("conv2d: Co=" + std::to_string(d.co) + " not divisible by groups=" +
                      std::to_string(groups));
  if (d.cg != d.c / groups)
    throw ConfigError("conv2d: weight expects C/g=" + std::to_string(d.cg) + " input channels, input has C/g=" +
                      std::to_string(d.c / groups));
  if (bias && bias->numel() != d.co)
    throw ConfigError("conv2d: bias extent " + std::to_string(bias->numel()) + " != Co=" +
                      std::to_string(d.co));
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0)
    throw ConfigError("conv2d: non-positive output size for input " + shape_str(x.shape()) +
                      " kernel " + shape_str(w.shape()));
  return d;
}

// col buffer layout: [(cg*kh*kw) x (ho*wo)], row (c*kh+ki)*kw+kj
void im2col(const float* x, const ConvDims& d, int group, float* col) {
  const int64_t hw = int64_t(d.h) * d.w;
  const int64_t ohw = int64_t(d.ho) * d.wo;
  const float* xg = x + int64_t(group) * d.cg * hw;
  for (int c = 0; c < d.cg; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        float* dst = col + (int64_t(c) * d.kh * d.kw + int64_t(ki) * d.kw + kj) * ohw;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * d.stride - d.padding + ki;
          float* drow = dst + int64_t(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::memset(drow, 0, size_t(d.wo) * sizeof(float));
            continue;
          }
          const float* srow = xg + int64_t(c) * hw + int64_t(iy) * d.w;
          if (d.stride == 1) {
            int ix0 = -d.padding + kj;
            int lo = std::max(0, -ix0);            // first valid ox
            int hi = std::min(d.wo, d.w - ix0);    // one past last valid ox
            if (lo > 0) std::memset(drow, 0, size_t(lo) * sizeof(float));
            if (hi > lo) std::memcpy(drow + lo, srow + ix0 + lo, size_t(hi - lo) * sizeof(float));
            if (hi < d.wo) std::memset(drow + std::max(hi, 0), 0, size_t(d.wo - std::max(hi, 0)) * sizeof(float));
          } else {
            for (int ox = 0; ox < d.wo; ++ox) {
              int ix = ox * d.stride - d.padding + kj;
              drow[ox] = (ix >= 0 && ix < d.w) ? srow[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// transpose of im2col: accumulate col grads back into the input grad
void col2im_add(const float* col, const ConvDims& d, int group, float* gx) {
  const int64_t hw = int64_t(d.h) * d.w;
  const int64_t ohw = int64_t(d.ho) * d.wo;
  float* xg = gx + int64_t(group) * d.cg * hw;
  for (int c = 0; c < d.cg; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const float* src = col + (int64_t(c) * d.kh * d.kw + int64_t(ki) * d.kw + kj) * ohw;
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy * d.stride - d.padding + ki;
          if (iy < 0 || iy >= d.h) continue;
          float* drow = xg + int64_t(c) * hw + int64_t(iy) * d.w;
          const float* srow = src + int64_t(oy) * d.wo;
          if (d.stride == 1) {
            int ix0 = -d.padding + kj;
            int lo = std::max(0, -ix0);
            int hi = std::min(d.wo, d.w - ix0);
            for (int ox = lo; ox < hi; ++ox) drow[ix0 + ox] += srow[ox];
          } else {
            for (int ox = 0; ox < d.wo; ++ox) {
              int ix = ox * d.stride - d.padding + kj;
              if (ix >= 0 && ix < d.w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvDims& d) {
  return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.padding == 0;
}

bool is_depthwise(const ConvDims& d) {
  return d.groups == d.c && d.co == d.c && d.cg == 1 && d.stride == 1;
}

// depthwise stride-1 path; one shifted-row FMA sweep per kernel tap
void depthwise_forward(const float* x, const float* w, const float* b, const ConvDims& d,
                       float* y) {
  const int64_t hw = int64_t(d.h) * d.w;
  const int64_t ohw = int64_t(d.ho) * d.wo;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const float* xc = x + (int64_t(n) * d.c + c) * hw;
      float* yc = y + (int64_t(n) * d.c + c) * ohw;
      const float* wc = w + int64_t(c) * d.kh * d.kw;
      float bias = b ? b[c] : 0.0f;
      for (int64_t i = 0; i < ohw; ++i) yc[i] = bias;
      for (int oy = 0; oy < d.ho; ++oy) {
        float* yrow = yc + int64_t(oy) * d.wo;
        for (int ki = 0; ki < d.kh; ++ki) {
          int iy = oy - d.padding + ki;
          if (iy < 0 || iy >= d.h) continue;
          const float* xrow = xc + int64_t(iy) * d.w;
          for (int kj = 0; kj < d.kw; ++kj) {
            int ix0 = -d.padding + kj;
            int lo = std::max(0, -ix0);
            int hi = std::min(d.wo, d.w - ix0);
            const float wv = wc[ki * d.kw + kj];
            const float* xs = xrow + ix0;
            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xs[ox];
          }
        }
      }
    }
  }
}

void depthwise_backward(const float* x, const float* w, const float* gy, const ConvDims& d,
                        float* gx, float* gw, float* gb) {
  const int64_t hw = int64_t(d.h) * d.w;
  const int64_t ohw = int64_t(d.ho) * d.wo;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const float* xc = x + (int64_t(n) * d.c + c) * hw;
      const float* gyc = gy + (int64_t(n) * d.c + c) * ohw;
      const float* wc = w + int64_t(c) * d.kh * d.kw;
      float* gxc = gx ? gx + (int64_t(n) * d.c + c) * hw : nullptr;
      float* gwc = gw ? gw + int64_t(c) * d.kh * d.kw : nullptr;
      if (gb) {
        float acc = 0.0f;
        for (int64_t i = 0; i < ohw; ++i) acc += gyc[i];
        gb[c] += acc;
      }
      for (int oy = 0; oy < d.ho; ++oy) {
        const float* gyrow = gyc + int64_t(oy) * d.wo;
        for (int ki = 0; ki < d.kh; ++ki) {
          int iy = oy - d.padding + ki;
          if (iy < 0 || iy >= d.h) continue;
          for (int kj = 0; kj < d.kw; ++kj) {
            int ix0 = -d.padding + kj;
            int lo = std::max(0, -ix0);
            int hi = std::min(d.wo, d.w - ix0);
            if (gwc) {
              const float* xs = xc + int64_t(iy) * d.w + ix0;
              float acc = 0.0f;
              for (int ox = lo; ox < hi; ++ox) acc += gyrow[ox] * xs[ox];
              gwc[ki * d.kw + kj] += acc;
            }
            if (gxc) {
              float* xs = gxc + int64_t(iy) * d.w + ix0;
              const float wv = wc[ki * d.kw + kj];
              for (int ox = lo; ox < hi; ++ox) xs[ox] += wv * gyrow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              int stride, int padding, int groups) {
  ConvDims d = resolve_dims(x, w, bias, stride, padding, groups);
  const int64_t hw = int64_t(d.h) * d.w;
  const int64_t ohw = int64_t(d.ho) * d.wo;
  const int cog = d.co / d.groups;
  const int krows = d.cg * d.kh * d.kw;

  Tensor out = Tensor::zeros({d.n, d.co, d.ho, d.wo});
  const float* bp = bias ? bias->data() : nullptr;

  if (is_depthwise(d)) {
    depthwise_forward(x.data(), w.data(), bp, d, out.data());
  } else if (is_pointwise(d)) {
    for (int n = 0; n < d.n; ++n)
      for (int g = 0; g < d.groups; ++g) {
        CMatMap wm(w.data() + int64_t(g) * cog * d.cg, cog, d.cg);
        CMatMap xm(x.data() + (int64_t(n) * d.c + int64_t(g) * d.cg) * hw, d.cg, hw);
        MatMap ym(out.data() + (int64_t(n) * d.co + int64_t(g) * cog) * ohw, cog, ohw);
        ym.noalias() = wm * xm;
      }
    if (bp)
      for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.co; ++c) {
          float* yc = out.data() + (int64_t(n) * d.co + c) * ohw;
          for (int64_t i = 0; i < ohw; ++i) yc[i] += bp[c];
        }
  } else {
    std::vector<float> col(size_t(krows) * ohw);
    for (int n = 0; n < d.n; ++n)
      for (int g = 0; g < d.groups; ++g) {
        im2col(x.data() + int64_t(n) * d.c * hw, d, g, col.data());
        CMatMap wm(w.data() + int64_t(g) * cog * krows, cog, krows);
        CMatMap cm(col.data(), krows, ohw);
        MatMap ym(out.data() + (int64_t(n) * d.co + int64_t(g) * cog) * ohw, cog, ohw);
        ym.noalias() = wm * cm;
      }
    if (bp)
      for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.co; ++c) {
          float* yc = out.data() + (int64_t(n) * d.co + c) * ohw;
          for (int64_t i = 0; i < ohw; ++i) yc[i] += bp[c];
        }
  }
  debug_check_finite(out, "conv2d");

  Tensor cb = bias ? *bias : Tensor();
  if (grad_enabled() && (x.requires_grad() || w.requires_grad() ||
                         (cb.defined() && cb.requires_grad()))) {
    Tensor cx = x, cw = w;
    std::vector<Tensor> parents{x, w};
    if (cb.defined()) parents.push_back(cb);
    out.set_requires_grad(true);
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward = [cx, cw, cb, d, hw, ohw, cog, krows](Node& n) mutable {
      float* gx = nullptr;
      float* gw = nullptr;
      float* gb = nullptr;
      if (cx.requires_grad()) { cx.node()->ensure_grad(); gx = cx.node()->grad.data(); }
      if (cw.requires_grad()) { cw.node()->ensure_grad(); gw = cw.node()->grad.data(); }
      if (cb.defined() && cb.requires_grad()) { cb.node()->ensure_grad(); gb = cb.node()->grad.data(); }
      const float* gy = n.grad.data();

      if (gb && !is_depthwise(d)) {
        for (int b = 0; b < d.n; ++b)
          for (int c = 0; c < d.co; ++c) {
            const float* gyc = gy + (int64_t(b) * d.co + c) * ohw;
            float acc = 0.0f;
            for (int64_t i = 0; i < ohw; ++i) acc += gyc[i];
            gb[c] += acc;
          }
      }

      if (is_depthwise(d)) {
        depthwise_backward(cx.data(), cw.data(), gy, d, gx, gw, gb);
        return;
      }
      if (is_pointwise(d)) {
        for (int b = 0; b < d.n; ++b)
          for (int g = 0; g < d.groups; ++g) {
            CMatMap wm(cw.data() + int64_t(g) * cog * d.cg, cog, d.cg);
            CMatMap gym(gy + (int64_t(b) * d.co + int64_t(g) * cog) * ohw, cog, ohw);
            if (gx) {
              MatMap gxm(gx + (int64_t(b) * d.c + int64_t(g) * d.cg) * hw, d.cg, hw);
              gxm.noalias() += wm.transpose() * gym;
            }
            if (gw) {
              CMatMap xm(cx.data() + (int64_t(b) * d.c + int64_t(g) * d.cg) * hw, d.cg, hw);
              MatMap gwm(gw + int64_t(g) * cog * d.cg, cog, d.cg);
              gwm.noalias() += gym * xm.transpose();
            }
          }
        return;
      }
      // general path: rebuild the column matrix (cheaper than caching it)
      std::vector<float> col(size_t(krows) * ohw);
      std::vector<float> gcol(gx ? size_t(krows) * ohw : 0);
      for (int b = 0; b < d.n; ++b)
        for (int g = 0; g < d.groups; ++g) {
          CMatMap gym(gy + (int64_t(b) * d.co + int64_t(g) * cog) * ohw, cog, ohw);
          if (gw) {
            im2col(cx.data() + int64_t(b) * d.c * hw, d, g, col.data());
            CMatMap cm(col.data(), krows, ohw);
            MatMap gwm(gw + int64_t(g) * cog * krows, cog, krows);
            gwm.noalias() += gym * cm.transpose();
          }
          if (gx) {
            CMatMap wm(cw.data() + int64_t(g) * cog * krows, cog, krows);
            MatMap gcm(gcol.data(), krows, ohw);
            gcm.noalias() = wm.transpose() * gym;
            col2im_add(gcol.data(), d, g, gx + int64_t(b) * d.c * hw);
          }
        }
    };
  }
  return out;
}

}  // namespace pillarnest
