#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "pillarnest/tensor.hpp"

namespace pillarnest {

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);   // domain-checked in debug builds
Tensor sqrt(const Tensor& x);
Tensor pow(const Tensor& x, float p);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation (see kGeluC0/kGeluC1)
Tensor clamp(const Tensor& x, float lo, float hi);
Tensor abs(const Tensor& x);

inline constexpr float kGeluC0 = 0.7978845608028654f;  // sqrt(2/pi)
inline constexpr float kGeluC1 = 0.044715f;

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& x);  // full reduction, fixed left-to-right order

// ---- linear / normalization ------------------------------------------------
// x viewed as [M, Din] over its last axis; w is [Dout, Din], b is [Dout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// normalize over the last axis, then affine with gamma/beta of that extent
Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
// channels-first layer norm: normalize over C at each (n, h, w) position
Tensor layer_norm_cf(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
// per-channel scaling of [N,C,H,W] by s[C] (layer-scale)
Tensor scale_channels(const Tensor& x, const Tensor& s);

// ---- convolution -----------------------------------------------------------
// Cross-correlation. x: [N,C,H,W], w: [Co,C/groups,kh,kw], bias: [Co] or empty.
// H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              int stride, int padding, int groups);

// ---- shaping ---------------------------------------------------------------
Tensor concat_channels(const std::vector<Tensor>& xs);        // [1,Ci,H,W] -> [1,sum Ci,H,W]
Tensor upsample_nearest(const Tensor& x, int factor);         // [N,C,H,W] -> [N,C,fH,fW]

// ---- point-set ops ---------------------------------------------------------
// features: [P,Nmax,D], mask: [P,Nmax] in {0,1}. Output [P, 2D] = [max || mean]
// over valid slots; every pillar must have at least one valid point.
Tensor pool_points(const Tensor& features, const Tensor& mask);
// pooled: [P,C] scattered to [1,C,H,W] at (row,col) coords; empty cells zero.
Tensor scatter_pillars(const Tensor& pooled, const std::vector<std::pair<int, int>>& coords,
                       int h, int w);

// Debug-build finite check (no-op in release); throws DomainError on NaN/Inf.
void debug_check_finite(const Tensor& t, const char* op);

}  // namespace pillarnest
