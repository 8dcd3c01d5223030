#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scorelab/tensor.hpp"

namespace scorelab {

// Reverse-mode tape node. Each node owns its forward value, a lazily
// allocated gradient accumulator of the same shape, and a closure that pulls
// the accumulated gradient into its parents.
struct DiffNode;
using Var = std::shared_ptr<DiffNode>;

struct DiffNode {
  Tensor value;
  Tensor grad;  // allocated on first touch, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(DiffNode&)> backprop;

  Tensor& grad_ref() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

inline Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<DiffNode>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }
inline Var variable(Tensor value) { return make_leaf(std::move(value), true); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(DiffNode&)> backprop) {
  auto n = std::make_shared<DiffNode>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw NumericError(std::string(op) + " shape mismatch " + shape_str(a->value.shape()) + " vs " +
                       shape_str(b->value.shape()));
}

}  // namespace detail

// ---- elementwise (equal shapes or tensor-vs-scalar, per the numeric contract) ----

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return detail::make_op(t_add(a->value, b->value), {a, b}, [](DiffNode& n) {
    const Tensor& g = n.grad;
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return detail::make_op(t_sub(a->value, b->value), {a, b}, [](DiffNode& n) {
    const Tensor& g = n.grad;
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [](DiffNode& n) {
    const Tensor& g = n.grad;
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [](DiffNode& n) {
    const Tensor& g = n.grad;
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.span()) v += s;
  return detail::make_op(std::move(out), {a}, [](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i];
  });
}

inline Var mul_scalar(const Var& a, double s) {
  return detail::make_op(t_scale(a->value, s), {a}, [s](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) ga[i] += s * n.grad[i];
  });
}

inline Var neg(const Var& a) { return mul_scalar(a, -1.0); }

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || B.rank() != 2) throw NumericError("matmul requires rank-2 tensors");
  std::size_t m = A.shape()[0], k = A.shape()[1], k2 = B.shape()[0], n = B.shape()[1];
  if (k != k2)
    throw NumericError("matmul inner-dimension mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A.data() + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_op(std::move(out), {a, b}, [m, k, n](DiffNode& nd) {
    const Tensor& g = nd.grad;
    const Tensor& A = nd.parents[0]->value;
    const Tensor& B = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor& ga = nd.parents[0]->grad_ref();  // g @ B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gv = g[i * n + j];
          const double* brow = B.data() + 0;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * brow[p * n + j];
        }
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->grad_ref();  // A^T @ g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

// Cross-correlation conv2d: x[B,C,H,W] * w[F,C,kh,kw] with zero padding.
inline Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  if (X.rank() != 4 || W.rank() != 4) throw NumericError("conv2d requires rank-4 input and kernel");
  if (stride == 0) throw NumericError("conv2d stride must be >= 1");
  std::size_t B = X.shape()[0], C = X.shape()[1], H = X.shape()[2], Wd = X.shape()[3];
  std::size_t F = W.shape()[0], Ck = W.shape()[1], kh = W.shape()[2], kw = W.shape()[3];
  if (C != Ck) throw NumericError("conv2d channel mismatch");
  if (H + 2 * pad < kh || Wd + 2 * pad < kw) throw NumericError("conv2d kernel larger than padded input");
  std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  std::size_t Wo = (Wd + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({B, F, Ho, Wo});
  auto xi = [&](std::size_t b, std::size_t c, std::size_t h, std::size_t wc) {
    return ((b * C + c) * H + h) * Wd + wc;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c) {
            const double* wk = W.data() + (f * C + c) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                acc += X[xi(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))] * wk[ky * kw + kx];
              }
            }
          }
          out.at4(b, f, oy, ox) = acc;
        }
  return detail::make_op(std::move(out), {x, w}, [B, C, H, Wd, F, kh, kw, stride, pad](DiffNode& nd) {
    const Tensor& g = nd.grad;
    const Tensor& X = nd.parents[0]->value;
    const Tensor& W = nd.parents[1]->value;
    std::size_t Ho = g.shape()[2], Wo = g.shape()[3];
    bool need_gx = nd.parents[0]->requires_grad;
    bool need_gw = nd.parents[1]->requires_grad;
    Tensor* gx = need_gx ? &nd.parents[0]->grad_ref() : nullptr;
    Tensor* gw = need_gw ? &nd.parents[1]->grad_ref() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            double gv = g.at4(b, f, oy, ox);
            if (gv == 0) continue;
            for (std::size_t c = 0; c < C; ++c) {
              const double* wk = W.data() + (f * C + c) * kh * kw;
              double* gwk = need_gw ? gw->data() + (f * C + c) * kh * kw : nullptr;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                  std::size_t xoff = ((b * C + c) * H + static_cast<std::size_t>(iy)) * Wd + static_cast<std::size_t>(ix);
                  if (need_gx) (*gx)[xoff] += gv * wk[ky * kw + kx];
                  if (need_gw) gwk[ky * kw + kx] += gv * X[xoff];
                }
              }
            }
          }
  });
}

// ---- bias broadcasts (dedicated ops; general broadcasting is out of scope) ----

// x[B,N] + b[N]
inline Var add_row_bias(const Var& x, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& Bv = b->value;
  if (X.rank() != 2 || Bv.rank() != 1 || X.shape()[1] != Bv.shape()[0])
    throw NumericError("add_row_bias expects x[B,N] and b[N]");
  std::size_t Bn = X.shape()[0], N = X.shape()[1];
  Tensor out = X;
  for (std::size_t i = 0; i < Bn; ++i)
    for (std::size_t j = 0; j < N; ++j) out[i * N + j] += Bv[j];
  return detail::make_op(std::move(out), {x, b}, [Bn, N](DiffNode& nd) {
    const Tensor& g = nd.grad;
    if (nd.parents[0]->requires_grad) {
      Tensor& gx = nd.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->grad_ref();
      for (std::size_t i = 0; i < Bn; ++i)
        for (std::size_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
    }
  });
}

// x[B,F,H,W] + b[F], bias shared over batch and spatial extents
inline Var add_channel_bias(const Var& x, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& Bv = b->value;
  if (X.rank() != 4 || Bv.rank() != 1 || X.shape()[1] != Bv.shape()[0])
    throw NumericError("add_channel_bias expects x[B,F,H,W] and b[F]");
  std::size_t Bn = X.shape()[0], F = X.shape()[1], HW = X.shape()[2] * X.shape()[3];
  Tensor out = X;
  for (std::size_t i = 0; i < Bn; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      double bias = Bv[f];
      double* p = out.data() + (i * F + f) * HW;
      for (std::size_t k = 0; k < HW; ++k) p[k] += bias;
    }
  return detail::make_op(std::move(out), {x, b}, [Bn, F, HW](DiffNode& nd) {
    const Tensor& g = nd.grad;
    if (nd.parents[0]->requires_grad) {
      Tensor& gx = nd.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->grad_ref();
      for (std::size_t i = 0; i < Bn; ++i)
        for (std::size_t f = 0; f < F; ++f) {
          const double* p = g.data() + (i * F + f) * HW;
          double acc = 0;
          for (std::size_t k = 0; k < HW; ++k) acc += p[k];
          gb[f] += acc;
        }
    }
  });
}

// x[B,F,H,W] + b[B,F], per-image channel bias (timestep conditioning)
inline Var add_channel_bias_per_image(const Var& x, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& Bv = b->value;
  if (X.rank() != 4 || Bv.rank() != 2 || X.shape()[0] != Bv.shape()[0] || X.shape()[1] != Bv.shape()[1])
    throw NumericError("add_channel_bias_per_image expects x[B,F,H,W] and b[B,F]");
  std::size_t Bn = X.shape()[0], F = X.shape()[1], HW = X.shape()[2] * X.shape()[3];
  Tensor out = X;
  for (std::size_t i = 0; i < Bn; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      double bias = Bv[i * F + f];
      double* p = out.data() + (i * F + f) * HW;
      for (std::size_t k = 0; k < HW; ++k) p[k] += bias;
    }
  return detail::make_op(std::move(out), {x, b}, [Bn, F, HW](DiffNode& nd) {
    const Tensor& g = nd.grad;
    if (nd.parents[0]->requires_grad) {
      Tensor& gx = nd.parents[0]->grad_ref();
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->grad_ref();
      for (std::size_t i = 0; i < Bn; ++i)
        for (std::size_t f = 0; f < F; ++f) {
          const double* p = g.data() + (i * F + f) * HW;
          double acc = 0;
          for (std::size_t k = 0; k < HW; ++k) acc += p[k];
          gb[i * F + f] += acc;
        }
    }
  });
}

// ---- activations ----

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.span()) v = v > 0 ? v : 0;
  return detail::make_op(std::move(out), {a}, [](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      if (av[i] > 0) ga[i] += n.grad[i];
  });
}

inline Var silu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.span()) v = v / (1.0 + std::exp(-v));
  return detail::make_op(std::move(out), {a}, [](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-av[i]));
      ga[i] += n.grad[i] * s * (1.0 + av[i] * (1.0 - s));
    }
  });
}

// ---- row-wise softmax family on [B,K] ----

inline Var log_softmax(const Var& a) {
  const Tensor& X = a->value;
  if (X.rank() != 2) throw NumericError("log_softmax expects [B,K]");
  std::size_t B = X.shape()[0], K = X.shape()[1];
  Tensor out = X;
  for (std::size_t i = 0; i < B; ++i) {
    double* row = out.data() + i * K;
    double m = row[0];
    for (std::size_t j = 1; j < K; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (std::size_t j = 0; j < K; ++j) z += std::exp(row[j] - m);
    double lz = m + std::log(z);
    for (std::size_t j = 0; j < K; ++j) row[j] -= lz;
  }
  return detail::make_op(std::move(out), {a}, [B, K](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& ls = n.value;
    const Tensor& g = n.grad;
    for (std::size_t i = 0; i < B; ++i) {
      double gsum = 0;
      for (std::size_t j = 0; j < K; ++j) gsum += g[i * K + j];
      for (std::size_t j = 0; j < K; ++j) ga[i * K + j] += g[i * K + j] - std::exp(ls[i * K + j]) * gsum;
    }
  });
}

inline Var softmax(const Var& a) {
  const Tensor& X = a->value;
  if (X.rank() != 2) throw NumericError("softmax expects [B,K]");
  std::size_t B = X.shape()[0], K = X.shape()[1];
  Tensor out = X;
  for (std::size_t i = 0; i < B; ++i) {
    double* row = out.data() + i * K;
    double m = row[0];
    for (std::size_t j = 1; j < K; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (std::size_t j = 0; j < K; ++j) row[j] /= z;
  }
  return detail::make_op(std::move(out), {a}, [B, K](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& s = n.value;
    const Tensor& g = n.grad;
    for (std::size_t i = 0; i < B; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < K; ++j) dot += g[i * K + j] * s[i * K + j];
      for (std::size_t j = 0; j < K; ++j) ga[i * K + j] += s[i * K + j] * (g[i * K + j] - dot);
    }
  });
}

// gather-by-index: rows[B,K] indexed per row by labels[B] -> [B]
inline Var gather_rows(const Var& a, const std::vector<std::size_t>& labels) {
  const Tensor& X = a->value;
  if (X.rank() != 2) throw NumericError("gather_rows expects [B,K]");
  std::size_t B = X.shape()[0], K = X.shape()[1];
  if (labels.size() != B) throw NumericError("gather_rows label count mismatch");
  Tensor out = Tensor::zeros({B});
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] >= K) throw NumericError("gather index " + std::to_string(labels[i]) + " out of range [0," +
                                           std::to_string(K) + ")");
    out[i] = X[i * K + labels[i]];
  }
  return detail::make_op(std::move(out), {a}, [labels, K](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    for (std::size_t i = 0; i < labels.size(); ++i) ga[i * K + labels[i]] += n.grad[i];
  });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  double s = 0;
  for (double v : a->value.span()) s += v;
  return detail::make_op(Tensor::scalar(s), {a}, [](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    double g = n.grad[0];
    for (auto& v : ga.span()) v += g;
  });
}

inline Var mean(const Var& a) {
  double inv = 1.0 / static_cast<double>(a->value.numel());
  double s = 0;
  for (double v : a->value.span()) s += v;
  return detail::make_op(Tensor::scalar(s * inv), {a}, [inv](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    double g = n.grad[0] * inv;
    for (auto& v : ga.span()) v += g;
  });
}

// ---- structural ops ----

inline Var reshape(const Var& a, Shape s) {
  Shape orig = a->value.shape();
  return detail::make_op(a->value.reshaped(std::move(s)), {a}, [orig](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i];
  });
}

inline Var concat_channels(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 4 || B.rank() != 4 || A.shape()[0] != B.shape()[0] || A.shape()[2] != B.shape()[2] ||
      A.shape()[3] != B.shape()[3])
    throw NumericError("concat_channels shape mismatch");
  std::size_t Bn = A.shape()[0], Ca = A.shape()[1], Cb = B.shape()[1], HW = A.shape()[2] * A.shape()[3];
  Tensor out = Tensor::zeros({Bn, Ca + Cb, A.shape()[2], A.shape()[3]});
  for (std::size_t i = 0; i < Bn; ++i) {
    std::copy_n(A.data() + i * Ca * HW, Ca * HW, out.data() + i * (Ca + Cb) * HW);
    std::copy_n(B.data() + i * Cb * HW, Cb * HW, out.data() + (i * (Ca + Cb) + Ca) * HW);
  }
  return detail::make_op(std::move(out), {a, b}, [Bn, Ca, Cb, HW](DiffNode& n) {
    const Tensor& g = n.grad;
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->grad_ref();
      for (std::size_t i = 0; i < Bn; ++i)
        for (std::size_t k = 0; k < Ca * HW; ++k) ga[i * Ca * HW + k] += g[i * (Ca + Cb) * HW + k];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->grad_ref();
      for (std::size_t i = 0; i < Bn; ++i)
        for (std::size_t k = 0; k < Cb * HW; ++k) gb[i * Cb * HW + k] += g[(i * (Ca + Cb) + Ca) * HW + k];
    }
  });
}

inline Var upsample_nearest2(const Var& a) {
  const Tensor& X = a->value;
  if (X.rank() != 4) throw NumericError("upsample_nearest2 expects [B,C,H,W]");
  std::size_t B = X.shape()[0], C = X.shape()[1], H = X.shape()[2], W = X.shape()[3];
  Tensor out = Tensor::zeros({B, C, 2 * H, 2 * W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double v = X.at4(b, c, y, x);
          out.at4(b, c, 2 * y, 2 * x) = v;
          out.at4(b, c, 2 * y, 2 * x + 1) = v;
          out.at4(b, c, 2 * y + 1, 2 * x) = v;
          out.at4(b, c, 2 * y + 1, 2 * x + 1) = v;
        }
  return detail::make_op(std::move(out), {a}, [B, C, H, W](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& g = n.grad;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x)
            ga[((b * C + c) * H + y) * W + x] += g.at4(b, c, 2 * y, 2 * x) + g.at4(b, c, 2 * y, 2 * x + 1) +
                                                 g.at4(b, c, 2 * y + 1, 2 * x) + g.at4(b, c, 2 * y + 1, 2 * x + 1);
  });
}

// Clamp to [0,1] with pass-through gradient inside the range.
inline Var clamp01(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.span()) v = v < 0 ? 0 : (v > 1 ? 1 : v);
  return detail::make_op(std::move(out), {a}, [](DiffNode& n) {
    Tensor& ga = n.parents[0]->grad_ref();
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      if (av[i] >= 0 && av[i] <= 1) ga[i] += n.grad[i];
  });
}

// ---- backward pass ----

// Accumulates gradients of a scalar root into every reachable grad-enabled leaf.
inline void backward(const Var& root) {
  if (root->value.numel() != 1) throw NumericError("backward requires a scalar root");
  if (!root->requires_grad) return;

  // iterative post-order toposort
  std::vector<DiffNode*> order;
  std::unordered_set<DiffNode*> visited;
  std::vector<std::pair<DiffNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      DiffNode* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_ref()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    DiffNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---- composite losses ----

inline Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  return neg(mean(gather_rows(log_softmax(logits), labels)));
}

inline Var mse(const Var& a, const Var& b) {
  Var d = sub(a, b);
  return mean(mul(d, d));
}

}  // namespace scorelab
