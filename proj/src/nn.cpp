#include "dentseg/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dentseg::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int ci, h, w;    // conv input plane
  int co, kh, kw;  // kernel
  int stride, pad;
  int ho, wo;  // conv output plane
};

// Column buffer layout: (ci·kh·kw) rows × L cols, row-major,
// L = (p1-p0)·wo output cells.
void im2col(const float* x, const ConvGeom& g, int p0, int p1, float* col) {
  const int L = (p1 - p0) * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    const float* plane = x + static_cast<size_t>(c) * g.h * g.w;
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        float* dst = col + static_cast<size_t>((c * g.kh + u) * g.kw + v) * L;
        for (int p = p0; p < p1; ++p, dst += g.wo) {
          const int iy = p * g.stride + u - g.pad;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* srow = plane + static_cast<size_t>(iy) * g.w;
          if (g.stride == 1) {
            const int off = v - g.pad;  // ix = q + off
            const int q_lo = std::clamp(-off, 0, g.wo);
            const int q_hi = std::clamp(g.w - off, 0, g.wo);
            std::fill(dst, dst + q_lo, 0.0f);
            if (q_hi > q_lo) std::copy(srow + q_lo + off, srow + q_hi + off, dst + q_lo);
            std::fill(dst + std::max(q_hi, q_lo), dst + g.wo, 0.0f);
          } else {
            for (int q = 0; q < g.wo; ++q) {
              const int ix = q * g.stride + v - g.pad;
              dst[q] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeom& g, int p0, int p1, float* gx) {
  const int L = (p1 - p0) * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    float* plane = gx + static_cast<size_t>(c) * g.h * g.w;
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        const float* src = col + static_cast<size_t>((c * g.kh + u) * g.kw + v) * L;
        for (int p = p0; p < p1; ++p, src += g.wo) {
          const int iy = p * g.stride + u - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          float* drow = plane + static_cast<size_t>(iy) * g.w;
          if (g.stride == 1) {
            const int off = v - g.pad;
            const int q_lo = std::clamp(-off, 0, g.wo);
            const int q_hi = std::clamp(g.w - off, 0, g.wo);
            for (int q = q_lo; q < q_hi; ++q) drow[q + off] += src[q];
          } else {
            for (int q = 0; q < g.wo; ++q) {
              const int ix = q * g.stride + v - g.pad;
              if (ix >= 0 && ix < g.w) drow[ix] += src[q];
            }
          }
        }
      }
    }
  }
}

int tile_rows_for(const ConvGeom& g) {
  constexpr long kColBudget = 1L << 21;  // floats, ~8 MB
  const long per_row = static_cast<long>(g.ci) * g.kh * g.kw * g.wo;
  const long rows = std::max(1L, kColBudget / std::max(1L, per_row));
  return static_cast<int>(std::min<long>(g.ho, rows));
}

// All three kernels accumulate into their destination; fresh outputs and
// gradient buffers are zero-initialized by the callers.

// y[n,co,p,q] += Σ V[co,ci,u,v]·x[n,ci,sp+u-pad,sq+v-pad]
void corr_forward(const float* x, const float* v, float* y, int n_batch, const ConvGeom& g) {
  const int k = g.ci * g.kh * g.kw;
  const int tr = tile_rows_for(g);
  std::vector<float> col(static_cast<size_t>(k) * tr * g.wo);
  Eigen::Map<const MatRM> wmat(v, g.co, k);
  for (int n = 0; n < n_batch; ++n) {
    const float* xs = x + static_cast<size_t>(n) * g.ci * g.h * g.w;
    float* ys = y + static_cast<size_t>(n) * g.co * g.ho * g.wo;
    for (int p0 = 0; p0 < g.ho; p0 += tr) {
      const int p1 = std::min(g.ho, p0 + tr);
      const int len = (p1 - p0) * g.wo;
      im2col(xs, g, p0, p1, col.data());
      Eigen::Map<const MatRM> cmat(col.data(), k, len);
      Eigen::Map<MatRM, 0, Eigen::OuterStride<>> ymat(
          ys + static_cast<size_t>(p0) * g.wo, g.co, len,
          Eigen::OuterStride<>(static_cast<long>(g.ho) * g.wo));
      ymat.noalias() += wmat * cmat;
    }
  }
}

// gx[n,ci,i,j] += Σ V[co,ci,u,v]·gy[n,co,p,q] over sp+u-pad=i, sq+v-pad=j
void corr_backward_input(const float* gy, const float* v, float* gx, int n_batch,
                         const ConvGeom& g) {
  const int k = g.ci * g.kh * g.kw;
  const int tr = tile_rows_for(g);
  std::vector<float> col(static_cast<size_t>(k) * tr * g.wo);
  Eigen::Map<const MatRM> wmat(v, g.co, k);
  for (int n = 0; n < n_batch; ++n) {
    const float* gys = gy + static_cast<size_t>(n) * g.co * g.ho * g.wo;
    float* gxs = gx + static_cast<size_t>(n) * g.ci * g.h * g.w;
    for (int p0 = 0; p0 < g.ho; p0 += tr) {
      const int p1 = std::min(g.ho, p0 + tr);
      const int len = (p1 - p0) * g.wo;
      Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> gymat(
          gys + static_cast<size_t>(p0) * g.wo, g.co, len,
          Eigen::OuterStride<>(static_cast<long>(g.ho) * g.wo));
      Eigen::Map<MatRM> cmat(col.data(), k, len);
      cmat.noalias() = wmat.transpose() * gymat;
      col2im_add(col.data(), g, p0, p1, gxs);
    }
  }
}

// gV[co,ci,u,v] += Σ gy[n,co,p,q]·x[n,ci,sp+u-pad,sq+v-pad]
void corr_backward_weight(const float* x, const float* gy, float* gv, int n_batch,
                          const ConvGeom& g) {
  const int k = g.ci * g.kh * g.kw;
  const int tr = tile_rows_for(g);
  std::vector<float> col(static_cast<size_t>(k) * tr * g.wo);
  Eigen::Map<MatRM> gvmat(gv, g.co, k);
  for (int n = 0; n < n_batch; ++n) {
    const float* xs = x + static_cast<size_t>(n) * g.ci * g.h * g.w;
    const float* gys = gy + static_cast<size_t>(n) * g.co * g.ho * g.wo;
    for (int p0 = 0; p0 < g.ho; p0 += tr) {
      const int p1 = std::min(g.ho, p0 + tr);
      const int len = (p1 - p0) * g.wo;
      im2col(xs, g, p0, p1, col.data());
      Eigen::Map<const MatRM> cmat(col.data(), k, len);
      Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> gymat(
          gys + static_cast<size_t>(p0) * g.wo, g.co, len,
          Eigen::OuterStride<>(static_cast<long>(g.ho) * g.wo));
      gvmat.noalias() += gymat * cmat.transpose();
    }
  }
}

void add_channel_bias(float* y, const float* bias, int n_batch, int channels, long plane) {
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      float* p = y + (static_cast<size_t>(n) * channels + c) * plane;
      const float b = bias[c];
      for (long i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

void accumulate_bias_grad(const float* gy, float* gb, int n_batch, int channels, long plane) {
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const float* p = gy + (static_cast<size_t>(n) * channels + c) * plane;
      for (long i = 0; i < plane; ++i) s += p[i];
    }
    gb[c] += static_cast<float>(s);
  }
}

Tensor make_output(Shape s, const std::vector<std::shared_ptr<Node>>& parents) {
  Tensor out(s);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  out.set_requires_grad(rg);
  if (rg) out.node()->parents = parents;
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(ws.c) +
                                " input channels, got " + xs.str());
  }
  if (bias.numel() != ws.n) throw std::invalid_argument("conv2d: bias size must equal out_ch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }

  const ConvGeom g{xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, stride, pad, ho, wo};
  Tensor out = make_output({xs.n, ws.n, ho, wo}, {x.node(), weight.node(), bias.node()});
  corr_forward(x.data(), weight.data(), out.data(), xs.n, g);
  add_channel_bias(out.data(), bias.data(), xs.n, g.co, static_cast<long>(ho) * wo);

  if (out.requires_grad()) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    const int n_batch = xs.n;
    out.node()->backward_fn = [xn, wn, bn, g, n_batch](Node& self) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        corr_backward_input(self.grad.data(), wn->value.data(), xn->grad.data(), n_batch, g);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        corr_backward_weight(xn->value.data(), self.grad.data(), wn->grad.data(), n_batch, g);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        accumulate_bias_grad(self.grad.data(), bn->grad.data(), n_batch, g.co,
                             static_cast<long>(g.ho) * g.wo);
      }
    };
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad, int output_pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();  // (in_ch, out_ch, kh, kw)
  if (ws.n != xs.c) {
    throw std::invalid_argument("conv_transpose2d: weight expects " + std::to_string(ws.n) +
                                " input channels, got " + xs.str());
  }
  if (bias.numel() != ws.c) {
    throw std::invalid_argument("conv_transpose2d: bias size must equal out_ch");
  }
  if (stride < 1 || output_pad < 0 || output_pad >= stride) {
    throw std::invalid_argument("conv_transpose2d: need stride >= 1 and 0 <= output_pad < stride");
  }
  const int ho = (xs.h - 1) * stride - 2 * pad + ws.h + output_pad;
  const int wo = (xs.w - 1) * stride - 2 * pad + ws.w + output_pad;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv_transpose2d: output dims must be >= 1");

  // The op is the input-gradient of a conv whose input plane is our output:
  // geometry below describes that underlying convolution.
  const ConvGeom g{ws.c, ho, wo, ws.n, ws.h, ws.w, stride, pad, xs.h, xs.w};
  Tensor out = make_output({xs.n, ws.c, ho, wo}, {x.node(), weight.node(), bias.node()});
  corr_backward_input(x.data(), weight.data(), out.data(), xs.n, g);
  add_channel_bias(out.data(), bias.data(), xs.n, ws.c, static_cast<long>(ho) * wo);

  if (out.requires_grad()) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    const int n_batch = xs.n;
    out.node()->backward_fn = [xn, wn, bn, g, n_batch](Node& self) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        corr_forward(self.grad.data(), wn->value.data(), xn->grad.data(), n_batch, g);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        corr_backward_weight(self.grad.data(), xn->value.data(), wn->grad.data(), n_batch, g);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        accumulate_bias_grad(self.grad.data(), bn->grad.data(), n_batch, g.ci,
                             static_cast<long>(g.h) * g.w);
      }
    };
  }
  return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, double momentum, double eps) {
  const Shape& xs = x.shape();
  const int channels = xs.c;
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw std::invalid_argument("batchnorm: scale/shift size must equal channel count");
  }
  if (eps <= 0) throw std::invalid_argument("batchnorm: eps must be positive");

  const long plane = static_cast<long>(xs.h) * xs.w;
  const long m = static_cast<long>(xs.n) * plane;  // elements per channel

  std::vector<double> mean(channels), invstd(channels);
  if (training) {
    if (state.mean.size() != static_cast<size_t>(channels)) {
      state.mean.assign(channels, 0.0f);
      state.var.assign(channels, 1.0f);
    }
    for (int c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = x.data() + (static_cast<size_t>(n) * channels + c) * plane;
        for (long i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / m;
      double sq = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const float* p = x.data() + (static_cast<size_t>(n) * channels + c) * plane;
        for (long i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / m;
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      const double var_running = m > 1 ? var * m / (m - 1) : var;
      state.mean[c] = static_cast<float>((1.0 - momentum) * state.mean[c] + momentum * mu);
      state.var[c] = static_cast<float>((1.0 - momentum) * state.var[c] + momentum * var_running);
    }
    state.batches_seen++;
  } else {
    if (state.mean.size() != static_cast<size_t>(channels) || state.var.empty()) {
      throw std::runtime_error("batchnorm: eval mode requested before any statistics exist");
    }
    for (int c = 0; c < channels; ++c) {
      mean[c] = state.mean[c];
      invstd[c] = 1.0 / std::sqrt(static_cast<double>(state.var[c]) + eps);
    }
  }

  Tensor out = make_output(xs, {x.node(), gamma.node(), beta.node()});
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      const float* p = x.data() + (static_cast<size_t>(n) * channels + c) * plane;
      float* q = out.data() + (static_cast<size_t>(n) * channels + c) * plane;
      const float g1 = gamma.data()[c];
      const float b1 = beta.data()[c];
      const float mu = static_cast<float>(mean[c]);
      const float is = static_cast<float>(invstd[c]);
      for (long i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * g1 + b1;
    }
  }

  if (out.requires_grad()) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    const Shape shp = xs;
    out.node()->backward_fn = [xn, gn, bn, shp, plane, m, mean, invstd, training](Node& self) {
      const int chans = shp.c;
      for (int c = 0; c < chans; ++c) {
        // Coupled gradient: normalization statistics depend on the batch.
        double s1 = 0.0, s2 = 0.0;
        for (int n = 0; n < shp.n; ++n) {
          const size_t base = (static_cast<size_t>(n) * chans + c) * plane;
          const float* gp = self.grad.data() + base;
          const float* xp = xn->value.data() + base;
          for (long i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - mean[c]) * invstd[c];
            s1 += gp[i];
            s2 += gp[i] * xhat;
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          gn->grad[c] += static_cast<float>(s2);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          bn->grad[c] += static_cast<float>(s1);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const double scale = gn->value[c] * invstd[c];
          const double mg = s1 / m;
          const double mgx = s2 / m;
          for (int n = 0; n < shp.n; ++n) {
            const size_t base = (static_cast<size_t>(n) * chans + c) * plane;
            const float* gp = self.grad.data() + base;
            const float* xp = xn->value.data() + base;
            float* dst = xn->grad.data() + base;
            if (training) {
              for (long i = 0; i < plane; ++i) {
                const double xhat = (xp[i] - mean[c]) * invstd[c];
                dst[i] += static_cast<float>(scale * (gp[i] - mg - xhat * mgx));
              }
            } else {
              for (long i = 0; i < plane; ++i) dst[i] += static_cast<float>(scale * gp[i]);
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_output(x.shape(), {x.node()});
  const long n = x.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backward_fn = [xn](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (xn->value[i] > 0.0f) xn->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_output(x.shape(), {x.node()});
  const long n = x.numel();
  for (long i = 0; i < n; ++i) {
    const float v = x.data()[i];
    out.data()[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                              : std::exp(v) / (1.0f + std::exp(v));
  }
  if (out.requires_grad()) {
    auto xn = x.node();
    out.node()->backward_fn = [xn](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const float y = self.value[i];
        xn->grad[i] += self.grad[i] * y * (1.0f - y);
      }
    };
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw std::invalid_argument("concat_channels: batch/spatial dims differ: " + as.str() +
                                " vs " + bs.str());
  }
  const long plane = static_cast<long>(as.h) * as.w;
  Tensor out = make_output({as.n, as.c + bs.c, as.h, as.w}, {a.node(), b.node()});
  for (int n = 0; n < as.n; ++n) {
    float* dst = out.data() + static_cast<size_t>(n) * (as.c + bs.c) * plane;
    const float* pa = a.data() + static_cast<size_t>(n) * as.c * plane;
    const float* pb = b.data() + static_cast<size_t>(n) * bs.c * plane;
    std::copy(pa, pa + as.c * plane, dst);
    std::copy(pb, pb + bs.c * plane, dst + as.c * plane);
  }
  if (out.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    const Shape snap_a = as, snap_b = bs;
    out.node()->backward_fn = [an, bn, snap_a, snap_b, plane](Node& self) {
      for (int n = 0; n < snap_a.n; ++n) {
        const float* src = self.grad.data() + static_cast<size_t>(n) * (snap_a.c + snap_b.c) * plane;
        if (an->requires_grad) {
          an->ensure_grad();
          float* da = an->grad.data() + static_cast<size_t>(n) * snap_a.c * plane;
          for (long i = 0; i < snap_a.c * plane; ++i) da[i] += src[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          float* db = bn->grad.data() + static_cast<size_t>(n) * snap_b.c * plane;
          const float* sb = src + snap_a.c * plane;
          for (long i = 0; i < snap_b.c * plane; ++i) db[i] += sb[i];
        }
      }
    };
  }
  return out;
}

namespace {
constexpr double kProbEps = 1e-7;
}

Tensor weighted_bce(const Tensor& pred, const Tensor& target, float pos_weight) {
  if (!(pred.shape() == target.shape())) {
    throw std::invalid_argument("weighted_bce: prediction/target shapes differ");
  }
  if (!(pos_weight > 0.0f)) throw std::invalid_argument("weighted_bce: pos_weight must be > 0");

  const long m = pred.numel();
  double acc = 0.0;
  for (long i = 0; i < m; ++i) {
    const double p = std::clamp(static_cast<double>(pred.data()[i]), kProbEps, 1.0 - kProbEps);
    const double t = target.data()[i];
    acc -= pos_weight * t * std::log(p) + (1.0 - t) * std::log1p(-p);
  }
  Tensor out = make_output({1, 1, 1, 1}, {pred.node(), target.node()});
  out.data()[0] = static_cast<float>(acc / m);

  if (out.requires_grad()) {
    auto pn = pred.node();
    auto tn = target.node();
    const float w = pos_weight;
    out.node()->backward_fn = [pn, tn, w, m](Node& self) {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      const double g0 = self.grad[0] / static_cast<double>(m);
      for (long i = 0; i < m; ++i) {
        const double p = std::clamp(static_cast<double>(pn->value[i]), kProbEps, 1.0 - kProbEps);
        const double t = tn->value[i];
        pn->grad[i] += static_cast<float>(g0 * (-w * t / p + (1.0 - t) / (1.0 - p)));
      }
    };
  }
  return out;
}

Tensor weighted_bce_logits(const Tensor& logits, const Tensor& target, float pos_weight) {
  if (!(logits.shape() == target.shape())) {
    throw std::invalid_argument("weighted_bce_logits: logit/target shapes differ");
  }
  if (!(pos_weight > 0.0f)) throw std::invalid_argument("weighted_bce_logits: pos_weight must be > 0");

  auto softplus = [](double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); };
  const long m = logits.numel();
  double acc = 0.0;
  for (long i = 0; i < m; ++i) {
    const double z = logits.data()[i];
    const double t = target.data()[i];
    acc += pos_weight * t * softplus(-z) + (1.0 - t) * softplus(z);
  }
  Tensor out = make_output({1, 1, 1, 1}, {logits.node(), target.node()});
  out.data()[0] = static_cast<float>(acc / m);

  if (out.requires_grad()) {
    auto zn = logits.node();
    auto tn = target.node();
    const float w = pos_weight;
    out.node()->backward_fn = [zn, tn, w, m](Node& self) {
      if (!zn->requires_grad) return;
      zn->ensure_grad();
      const double g0 = self.grad[0] / static_cast<double>(m);
      for (long i = 0; i < m; ++i) {
        const double z = zn->value[i];
        const double t = tn->value[i];
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        zn->grad[i] += static_cast<float>(g0 * ((1.0 - t) * sig - w * t * (1.0 - sig)));
      }
    };
  }
  return out;
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0f);
    v_[i].assign(params_[i].numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::vector<float>* grad = p.grad_if_any();
    float* pv = p.data();
    const long n = p.numel();
    for (long j = 0; j < n; ++j) {
      const double g = grad ? (*grad)[j] : 0.0;
      const double mj = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      const double vj = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      m_[i][j] = static_cast<float>(mj);
      v_[i][j] = static_cast<float>(vj);
      pv[j] -= static_cast<float>(cfg_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

GradCheckReport gradcheck(const std::function<Tensor(const Tensor&)>& op, const Tensor& point,
                          double step_scale, std::uint64_t proj_seed) {
  Tensor x = Tensor::from_data(point.shape(), point.values(), true);
  Tensor y = op(x);

  // The projection lives in its own substream so it cannot reproduce the
  // sequence that generated the data point (a projection collinear with the
  // centered input is a null direction for normalizing ops).
  Rng rng = substream(proj_seed, 0x6A09E667F3BCC909ULL);
  std::normal_distribution<float> unit(0.0f, 1.0f);
  std::vector<float> proj(static_cast<size_t>(y.numel()));
  for (float& p : proj) p = unit(rng);

  y.backward(proj);
  const std::vector<float> analytic = x.grad();

  double gmax = 1e-12;
  for (float a : analytic) gmax = std::max(gmax, static_cast<double>(std::abs(a)));

  Tensor probe = Tensor::from_data(point.shape(), point.values(), false);
  auto objective = [&]() {
    Tensor out = op(probe);
    double s = 0.0;
    for (long i = 0; i < out.numel(); ++i) s += static_cast<double>(out.data()[i]) * proj[i];
    return s;
  };

  GradCheckReport report;
  const long n = point.numel();
  for (long i = 0; i < n; ++i) {
    const float orig = probe.data()[i];
    const double h = step_scale * std::max(1.0, std::abs(static_cast<double>(orig)));
    probe.data()[i] = static_cast<float>(orig + h);
    const double xp = probe.data()[i];
    const double fp = objective();
    probe.data()[i] = static_cast<float>(orig - h);
    const double xm = probe.data()[i];
    const double fm = objective();
    probe.data()[i] = orig;
    const double numeric = (fp - fm) / (xp - xm);  // divide by the realized step
    const double rel = std::abs(analytic[i] - numeric) / gmax;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric;
    }
  }
  return report;
}

void fill_normal(Tensor& t, float mean, float stddev, Rng& rng) {
  std::normal_distribution<float> d(mean, stddev);
  for (long i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
}

void fill_kaiming(Tensor& w, int fan_in, Rng& rng) {
  fill_normal(w, 0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)), rng);
}

}  // namespace dentseg::nn
