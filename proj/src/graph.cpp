#include "ttlab/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace ttlab {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatRM<T>>;

// Unrolls one sample's [C,H,W] block into a [C*k*k, Ho*Wo] column matrix,
// zero-filling where the padded window leaves the image.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, int k,
            int stride, int pad, std::int64_t Ho, std::int64_t Wo, T* cols) {
  const std::int64_t span = Ho * Wo;
  for (std::int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * span;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * stride - pad + ki;
          T* out = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          const T* xr = xc + ih * W;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * stride - pad + kj;
            out[ow] = (iw >= 0 && iw < W) ? xr[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column matrix back onto the image grid.
template <typename T>
void col2im_add(const T* cols, std::int64_t C, std::int64_t H, std::int64_t W,
                int k, int stride, int pad, std::int64_t Ho, std::int64_t Wo,
                T* dx) {
  const std::int64_t span = Ho * Wo;
  for (std::int64_t c = 0; c < C; ++c) {
    T* dxc = dx + c * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * span;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dxr = dxc + ih * W;
          const T* in = row + oh * Wo;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dxr[iw] += in[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_rank(const TensorT<T>& t, std::size_t rank, const char* op,
                  const char* arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                     std::to_string(rank) + ", got " + t.shape_string());
  }
}

}  // namespace

template <typename T>
ValueT<T> GraphT<T>::emplace(TensorT<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return ValueT<T>{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
typename GraphT<T>::Node& GraphT<T>::node(ValueT<T> v) {
  if (v.id < 0 || v.id >= static_cast<std::int32_t>(nodes_.size())) {
    throw StateError("value handle does not refer to a recorded node");
  }
  return nodes_[v.id];
}

template <typename T>
const typename GraphT<T>::Node& GraphT<T>::node(ValueT<T> v) const {
  if (v.id < 0 || v.id >= static_cast<std::int32_t>(nodes_.size())) {
    throw StateError("value handle does not refer to a recorded node");
  }
  return nodes_[v.id];
}

template <typename T>
bool GraphT<T>::needs_grad(ValueT<T> v) const {
  return node(v).requires_grad;
}

template <typename T>
TensorT<T>& GraphT<T>::grad_buffer(std::int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = TensorT<T>(n.value.shape(), T(0));
  n.touched = true;
  return n.grad;
}

template <typename T>
const TensorT<T>& GraphT<T>::value(ValueT<T> v) const {
  return node(v).value;
}

template <typename T>
const TensorT<T>& GraphT<T>::grad(ValueT<T> v) {
  if (!ran_backward_) {
    throw StateError("grad read before backward() ran on this graph");
  }
  Node& n = node(v);
  if (n.grad.empty()) n.grad = TensorT<T>(n.value.shape(), T(0));
  return n.grad;
}

template <typename T>
ValueT<T> GraphT<T>::input(TensorT<T> x, bool requires_grad) {
  if (x.empty()) throw ShapeError("input tensor must not be empty");
  return emplace(std::move(x), requires_grad);
}

template <typename T>
ValueT<T> GraphT<T>::param(ParamTapeT<T>& tape, std::string_view name,
                           bool trainable) {
  auto key = std::make_pair(static_cast<const void*>(&tape), std::string(name));
  auto it = param_lookup_.find(key);
  if (it != param_lookup_.end()) return ValueT<T>{it->second};
  ValueT<T> v = emplace(tape.value(name), trainable);
  bindings_.push_back({&tape, std::string(name), v.id});
  param_lookup_.emplace(std::move(key), v.id);
  return v;
}

template <typename T>
ValueT<T> GraphT<T>::conv2d(ValueT<T> x, ValueT<T> w, int stride,
                            int padding) {
  const TensorT<T>& xv = node(x).value;
  const TensorT<T>& wv = node(w).value;
  require_rank(xv, 4, "conv2d", "input");
  require_rank(wv, 4, "conv2d", "weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2),
                     W = xv.dim(3);
  const std::int64_t F = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C) {
    throw ShapeError("conv2d: weight channels " + std::to_string(wv.dim(1)) +
                     " != input channels " + std::to_string(C));
  }
  if (wv.dim(3) != k) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     wv.shape_string());
  }
  if (k > H + 2 * padding || k > W + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) +
                     " exceeds padded input " + xv.shape_string());
  }
  const std::int64_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - k) / stride + 1;
  const std::int64_t span = Ho * Wo, ckk = C * k * k;

  TensorT<T> y({N, F, Ho, Wo});
  std::vector<T> cols(ckk * span);
  CMapMat<T> wm(wv.data(), F, ckk);
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(xv.data() + n * C * H * W, C, H, W, static_cast<int>(k), stride,
           padding, Ho, Wo, cols.data());
    CMapMat<T> cm(cols.data(), ckk, span);
    MapMat<T> ym(y.data() + n * F * span, F, span);
    ym.noalias() = wm * cm;
  }

  const bool req = needs_grad(x) || needs_grad(w);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id, wid = w.id;
    const int ki = static_cast<int>(k);
    nodes_[oid].backprop = [this, oid, xid, wid, stride, padding, ki]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const TensorT<T>& xv2 = nodes_[xid].value;
      const TensorT<T>& wv2 = nodes_[wid].value;
      const std::int64_t N2 = xv2.dim(0), C2 = xv2.dim(1), H2 = xv2.dim(2),
                         W2 = xv2.dim(3);
      const std::int64_t F2 = wv2.dim(0);
      const std::int64_t Ho2 = go.dim(2), Wo2 = go.dim(3);
      const std::int64_t span2 = Ho2 * Wo2, ckk2 = C2 * ki * ki;
      std::vector<T> cols2(ckk2 * span2);
      const bool wantx = needs_grad(ValueT<T>{xid});
      const bool wantw = needs_grad(ValueT<T>{wid});
      CMapMat<T> wm2(wv2.data(), F2, ckk2);
      T* gx = wantx ? grad_buffer(xid).data() : nullptr;
      T* gw = wantw ? grad_buffer(wid).data() : nullptr;
      for (std::int64_t n = 0; n < N2; ++n) {
        CMapMat<T> gom(go.data() + n * F2 * span2, F2, span2);
        if (wantw) {
          im2col(xv2.data() + n * C2 * H2 * W2, C2, H2, W2, ki, stride,
                 padding, Ho2, Wo2, cols2.data());
          CMapMat<T> cm2(cols2.data(), ckk2, span2);
          MapMat<T> gwm(gw, F2, ckk2);
          gwm.noalias() += gom * cm2.transpose();
        }
        if (wantx) {
          MapMat<T> cm2(cols2.data(), ckk2, span2);
          cm2.noalias() = wm2.transpose() * gom;
          col2im_add(cols2.data(), C2, H2, W2, ki, stride, padding, Ho2, Wo2,
                     gx + n * C2 * H2 * W2);
        }
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::group_norm(ValueT<T> x, int groups, ValueT<T> gamma,
                                ValueT<T> beta, T eps) {
  const TensorT<T>& xv = node(x).value;
  const TensorT<T>& gv = node(gamma).value;
  const TensorT<T>& bv = node(beta).value;
  require_rank(xv, 4, "group_norm", "input");
  require_rank(gv, 1, "group_norm", "gamma");
  require_rank(bv, 1, "group_norm", "beta");
  if (groups < 1) throw ConfigError("group_norm: groups must be >= 1");
  if (!(eps > T(0))) throw ConfigError("group_norm: eps must be positive");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2),
                     W = xv.dim(3);
  if (C % groups != 0) {
    throw ConfigError("group_norm: channels " + std::to_string(C) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (gv.dim(0) != C || bv.dim(0) != C) {
    throw ShapeError("group_norm: gamma/beta must have length " +
                     std::to_string(C));
  }
  const std::int64_t cpg = C / groups;
  const std::int64_t m = cpg * H * W;

  TensorT<T> y(xv.shape());
  std::vector<T> mean(N * groups), invstd(N * groups);
  for (std::int64_t n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* base = xv.data() + (n * C + g * cpg) * H * W;
      T mu = T(0);
      for (std::int64_t i = 0; i < m; ++i) mu += base[i];
      mu /= static_cast<T>(m);
      T var = T(0);
      for (std::int64_t i = 0; i < m; ++i) {
        const T d = base[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T is = T(1) / std::sqrt(var + eps);
      mean[n * groups + g] = mu;
      invstd[n * groups + g] = is;
      T* out = y.data() + (n * C + g * cpg) * H * W;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const T ga = gv[g * cpg + c];
        const T be = bv[g * cpg + c];
        const T* xi = base + c * H * W;
        T* yi = out + c * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) {
          yi[i] = ga * (xi[i] - mu) * is + be;
        }
      }
    }
  }

  const bool req = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id, gid = gamma.id,
                       bid = beta.id;
    nodes_[oid].backprop = [this, oid, xid, gid, bid, groups,
                            mean = std::move(mean),
                            invstd = std::move(invstd)]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const TensorT<T>& xv2 = nodes_[xid].value;
      const TensorT<T>& gv2 = nodes_[gid].value;
      const std::int64_t N2 = xv2.dim(0), C2 = xv2.dim(1), H2 = xv2.dim(2),
                         W2 = xv2.dim(3);
      const std::int64_t cpg2 = C2 / groups;
      const std::int64_t m2 = cpg2 * H2 * W2;
      const std::int64_t hw = H2 * W2;
      const bool wantx = needs_grad(ValueT<T>{xid});
      const bool wantg = needs_grad(ValueT<T>{gid});
      const bool wantb = needs_grad(ValueT<T>{bid});
      T* gx = wantx ? grad_buffer(xid).data() : nullptr;
      T* gg = wantg ? grad_buffer(gid).data() : nullptr;
      T* gb = wantb ? grad_buffer(bid).data() : nullptr;
      for (std::int64_t n = 0; n < N2; ++n) {
        for (int g = 0; g < groups; ++g) {
          const std::int64_t off = (n * C2 + g * cpg2) * hw;
          const T* xb = xv2.data() + off;
          const T* gob = go.data() + off;
          const T mu = mean[n * groups + g];
          const T is = invstd[n * groups + g];
          if (wantg || wantb) {
            for (std::int64_t c = 0; c < cpg2; ++c) {
              T sg = T(0), sb = T(0);
              const T* xi = xb + c * hw;
              const T* gi = gob + c * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                sg += gi[i] * (xi[i] - mu) * is;
                sb += gi[i];
              }
              if (wantg) gg[g * cpg2 + c] += sg;
              if (wantb) gb[g * cpg2 + c] += sb;
            }
          }
          if (wantx) {
            // dxhat = go * gamma; dx = is/m * (m*dxhat - sum(dxhat)
            //                                 - xhat * sum(dxhat*xhat))
            T s1 = T(0), s2 = T(0);
            for (std::int64_t c = 0; c < cpg2; ++c) {
              const T ga = gv2[g * cpg2 + c];
              const T* xi = xb + c * hw;
              const T* gi = gob + c * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                const T dxh = gi[i] * ga;
                s1 += dxh;
                s2 += dxh * (xi[i] - mu) * is;
              }
            }
            T* gxb = gx + off;
            const T inv_m = T(1) / static_cast<T>(m2);
            for (std::int64_t c = 0; c < cpg2; ++c) {
              const T ga = gv2[g * cpg2 + c];
              const T* xi = xb + c * hw;
              const T* gi = gob + c * hw;
              T* gxi = gxb + c * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                const T xh = (xi[i] - mu) * is;
                const T dxh = gi[i] * ga;
                gxi[i] += is * (dxh - inv_m * (s1 + xh * s2));
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::relu(ValueT<T> x) {
  const TensorT<T>& xv = node(x).value;
  TensorT<T> y(xv.shape());
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  const bool req = needs_grad(x);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id;
    nodes_[oid].backprop = [this, oid, xid]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const TensorT<T>& xv2 = nodes_[xid].value;
      TensorT<T>& gx = grad_buffer(xid);
      const std::int64_t n2 = xv2.numel();
      for (std::int64_t i = 0; i < n2; ++i) {
        if (xv2[i] > T(0)) gx[i] += go[i];
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::avg_pool2d(ValueT<T> x, int kernel, int stride) {
  const TensorT<T>& xv = node(x).value;
  require_rank(xv, 4, "avg_pool2d", "input");
  if (kernel < 1) throw ConfigError("avg_pool2d: kernel must be >= 1");
  if (stride < 1) throw ConfigError("avg_pool2d: stride must be >= 1");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2),
                     W = xv.dim(3);
  if (kernel > H || kernel > W) {
    throw ShapeError("avg_pool2d: kernel " + std::to_string(kernel) +
                     " exceeds input " + xv.shape_string());
  }
  const std::int64_t Ho = (H - kernel) / stride + 1;
  const std::int64_t Wo = (W - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  TensorT<T> y({N, C, Ho, Wo});
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* xb = xv.data() + (n * C + c) * H * W;
      T* yb = y.data() + (n * C + c) * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T acc = T(0);
          for (int ki = 0; ki < kernel; ++ki) {
            const T* xr = xb + (oh * stride + ki) * W + ow * stride;
            for (int kj = 0; kj < kernel; ++kj) acc += xr[kj];
          }
          yb[oh * Wo + ow] = acc * inv;
        }
      }
    }
  }
  const bool req = needs_grad(x);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id;
    nodes_[oid].backprop = [this, oid, xid, kernel, stride, inv]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const TensorT<T>& xv2 = nodes_[xid].value;
      TensorT<T>& gx = grad_buffer(xid);
      const std::int64_t N2 = xv2.dim(0), C2 = xv2.dim(1), H2 = xv2.dim(2),
                         W2 = xv2.dim(3);
      const std::int64_t Ho2 = go.dim(2), Wo2 = go.dim(3);
      for (std::int64_t n = 0; n < N2; ++n) {
        for (std::int64_t c = 0; c < C2; ++c) {
          const T* gob = go.data() + (n * C2 + c) * Ho2 * Wo2;
          T* gxb = gx.data() + (n * C2 + c) * H2 * W2;
          for (std::int64_t oh = 0; oh < Ho2; ++oh) {
            for (std::int64_t ow = 0; ow < Wo2; ++ow) {
              const T g = gob[oh * Wo2 + ow] * inv;
              for (int ki = 0; ki < kernel; ++ki) {
                T* gxr = gxb + (oh * stride + ki) * W2 + ow * stride;
                for (int kj = 0; kj < kernel; ++kj) gxr[kj] += g;
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::linear(ValueT<T> x, ValueT<T> w, ValueT<T> b) {
  const TensorT<T>& xv = node(x).value;
  const TensorT<T>& wv = node(w).value;
  const TensorT<T>& bv = node(b).value;
  require_rank(xv, 2, "linear", "input");
  require_rank(wv, 2, "linear", "weight");
  require_rank(bv, 1, "linear", "bias");
  const std::int64_t N = xv.dim(0), D = xv.dim(1), K = wv.dim(0);
  if (wv.dim(1) != D) {
    throw ShapeError("linear: weight " + wv.shape_string() +
                     " does not match input " + xv.shape_string());
  }
  if (bv.dim(0) != K) {
    throw ShapeError("linear: bias length " + std::to_string(bv.dim(0)) +
                     " != output width " + std::to_string(K));
  }
  TensorT<T> y({N, K});
  {
    CMapMat<T> xm(xv.data(), N, D);
    CMapMat<T> wm(wv.data(), K, D);
    MapMat<T> ym(y.data(), N, K);
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bv.data(), K);
    ym.rowwise() += bvec.transpose();
  }
  const bool req = needs_grad(x) || needs_grad(w) || needs_grad(b);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id, wid = w.id, bid = b.id;
    nodes_[oid].backprop = [this, oid, xid, wid, bid]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const TensorT<T>& xv2 = nodes_[xid].value;
      const TensorT<T>& wv2 = nodes_[wid].value;
      const std::int64_t N2 = xv2.dim(0), D2 = xv2.dim(1), K2 = wv2.dim(0);
      CMapMat<T> gom(go.data(), N2, K2);
      if (needs_grad(ValueT<T>{xid})) {
        CMapMat<T> wm2(wv2.data(), K2, D2);
        MapMat<T> gxm(grad_buffer(xid).data(), N2, D2);
        gxm.noalias() += gom * wm2;
      }
      if (needs_grad(ValueT<T>{wid})) {
        CMapMat<T> xm2(xv2.data(), N2, D2);
        MapMat<T> gwm(grad_buffer(wid).data(), K2, D2);
        gwm.noalias() += gom.transpose() * xm2;
      }
      if (needs_grad(ValueT<T>{bid})) {
        TensorT<T>& gb = grad_buffer(bid);
        for (std::int64_t n = 0; n < N2; ++n) {
          for (std::int64_t j = 0; j < K2; ++j) gb[j] += go[n * K2 + j];
        }
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::reshape(ValueT<T> x, std::vector<std::int64_t> shape) {
  const TensorT<T>& xv = node(x).value;
  TensorT<T> y = xv.reshaped(std::move(shape));
  const bool req = needs_grad(x);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id;
    nodes_[oid].backprop = [this, oid, xid]() {
      const TensorT<T>& go = nodes_[oid].grad;
      TensorT<T>& gx = grad_buffer(xid);
      const std::int64_t n = gx.numel();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i];
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::softmax_cross_entropy(
    ValueT<T> logits, const std::vector<std::int64_t>& labels) {
  const TensorT<T>& lv = node(logits).value;
  require_rank(lv, 2, "softmax_cross_entropy", "logits");
  const std::int64_t N = lv.dim(0), C = lv.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(N) + " rows");
  }
  for (std::int64_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= C) {
      throw InputError("softmax_cross_entropy: label " +
                       std::to_string(labels[n]) + " outside [0," +
                       std::to_string(C) + ")");
    }
  }
  TensorT<T> probs({N, C});
  T loss = T(0);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* row = lv.data() + n * C;
    T mx = row[0];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T denom = T(0);
    for (std::int64_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    const T lse = mx + std::log(denom);
    loss += lse - row[labels[n]];
    T* p = probs.data() + n * C;
    for (std::int64_t c = 0; c < C; ++c) {
      p[c] = std::exp(row[c] - mx) / denom;
    }
  }
  loss /= static_cast<T>(N);

  const bool req = needs_grad(logits);
  ValueT<T> out = emplace(TensorT<T>({1}, std::vector<T>{loss}), req);
  if (req) {
    const std::int32_t oid = out.id, lid = logits.id;
    nodes_[oid].backprop = [this, oid, lid, probs = std::move(probs),
                            labels]() {
      const T g = nodes_[oid].grad[0];
      TensorT<T>& gl = grad_buffer(lid);
      const std::int64_t N2 = probs.dim(0), C2 = probs.dim(1);
      const T invn = T(1) / static_cast<T>(N2);
      for (std::int64_t n = 0; n < N2; ++n) {
        const T* p = probs.data() + n * C2;
        T* gr = gl.data() + n * C2;
        for (std::int64_t c = 0; c < C2; ++c) {
          gr[c] += g * invn * (p[c] - (labels[n] == c ? T(1) : T(0)));
        }
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::add(ValueT<T> a, ValueT<T> b) {
  const TensorT<T>& av = node(a).value;
  const TensorT<T>& bv = node(b).value;
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shapes " + av.shape_string() + " and " +
                     bv.shape_string() + " differ");
  }
  TensorT<T> y(av.shape());
  const std::int64_t n = av.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = av[i] + bv[i];
  const bool req = needs_grad(a) || needs_grad(b);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, aid = a.id, bid = b.id;
    nodes_[oid].backprop = [this, oid, aid, bid]() {
      const TensorT<T>& go = nodes_[oid].grad;
      const std::int64_t n2 = go.numel();
      if (needs_grad(ValueT<T>{aid})) {
        TensorT<T>& ga = grad_buffer(aid);
        for (std::int64_t i = 0; i < n2; ++i) ga[i] += go[i];
      }
      if (needs_grad(ValueT<T>{bid})) {
        TensorT<T>& gb = grad_buffer(bid);
        for (std::int64_t i = 0; i < n2; ++i) gb[i] += go[i];
      }
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::scale(ValueT<T> x, T c) {
  const TensorT<T>& xv = node(x).value;
  TensorT<T> y(xv.shape());
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = c * xv[i];
  const bool req = needs_grad(x);
  ValueT<T> out = emplace(std::move(y), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id;
    nodes_[oid].backprop = [this, oid, xid, c]() {
      const TensorT<T>& go = nodes_[oid].grad;
      TensorT<T>& gx = grad_buffer(xid);
      const std::int64_t n2 = go.numel();
      for (std::int64_t i = 0; i < n2; ++i) gx[i] += c * go[i];
    };
  }
  return out;
}

template <typename T>
ValueT<T> GraphT<T>::sum(ValueT<T> x) {
  const TensorT<T>& xv = node(x).value;
  T acc = T(0);
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += xv[i];
  const bool req = needs_grad(x);
  ValueT<T> out = emplace(TensorT<T>({1}, std::vector<T>{acc}), req);
  if (req) {
    const std::int32_t oid = out.id, xid = x.id;
    nodes_[oid].backprop = [this, oid, xid]() {
      const T g = nodes_[oid].grad[0];
      TensorT<T>& gx = grad_buffer(xid);
      const std::int64_t n2 = gx.numel();
      for (std::int64_t i = 0; i < n2; ++i) gx[i] += g;
    };
  }
  return out;
}

template <typename T>
void GraphT<T>::backward(ValueT<T> loss) {
  if (nodes_.empty()) {
    throw StateError("backward on an empty graph: no forward was recorded");
  }
  if (ran_backward_) {
    throw StateError("backward already ran on this graph; record a new one");
  }
  Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     ln.value.shape_string());
  }
  for (auto& b : bindings_) b.tape->zero_grad();
  if (ln.requires_grad) {
    grad_buffer(loss.id)[0] = T(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[id];
      if (nd.touched && nd.backprop) nd.backprop();
    }
    for (auto& b : bindings_) {
      const Node& pn = nodes_[b.id];
      if (!pn.touched) continue;
      TensorT<T>& g = b.tape->grad(b.name);
      const std::int64_t n = g.numel();
      for (std::int64_t i = 0; i < n; ++i) g[i] += pn.grad[i];
    }
  }
  ran_backward_ = true;
}

template <typename T>
std::vector<T> softmax_ce_per_sample(const TensorT<T>& logits,
                                     const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_ce_per_sample: logits must be [N,C], got " +
                     logits.shape_string());
  }
  const std::int64_t N = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N) {
    throw ShapeError("softmax_ce_per_sample: label count mismatch");
  }
  std::vector<T> out(N);
  for (std::int64_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= C) {
      throw InputError("softmax_ce_per_sample: label out of range");
    }
    const T* row = logits.data() + n * C;
    T mx = row[0];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T denom = T(0);
    for (std::int64_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    out[n] = mx + std::log(denom) - row[labels[n]];
  }
  return out;
}

template <typename T>
std::vector<std::int64_t> argmax_rows(const TensorT<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("argmax_rows: expected [N,C], got " +
                     logits.shape_string());
  }
  const std::int64_t N = logits.dim(0), C = logits.dim(1);
  std::vector<std::int64_t> out(N);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * C;
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = best;
  }
  return out;
}

template class GraphT<float>;
template class GraphT<double>;
template std::vector<float> softmax_ce_per_sample<float>(
    const TensorT<float>&, const std::vector<std::int64_t>&);
template std::vector<double> softmax_ce_per_sample<double>(
    const TensorT<double>&, const std::vector<std::int64_t>&);
template std::vector<std::int64_t> argmax_rows<float>(const TensorT<float>&);
template std::vector<std::int64_t> argmax_rows<double>(const TensorT<double>&);

}  // namespace ttlab
