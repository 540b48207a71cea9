#include "elm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "elm/counter.hpp"

namespace elm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
}

int div_floor(int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }
int div_ceil(int a, int b) { return (a >= 0) ? (a + b - 1) / b : -((-a) / b); }

// c[m,n] += a[m,k] * b[k,n]
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  count_muls(static_cast<uint64_t>(m) * k * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  count_muls(static_cast<uint64_t>(m) * k * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  count_muls(static_cast<uint64_t>(m) * k * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
    s[static_cast<size_t>(d)] = acc;
    acc *= shape[static_cast<size_t>(d)];
  }
  return s;
}

// Walks all positions of out_shape; in_idx advances by contrib[d] per unit of
// out coordinate d. fn(out_idx, in_idx) is called once per position.
template <class Fn>
void walk_mapping(const std::vector<int>& out_shape, const std::vector<int64_t>& contrib, Fn&& fn) {
  const int nd = static_cast<int>(out_shape.size());
  std::vector<int> coord(static_cast<size_t>(nd), 0);
  int64_t total = shape_numel(out_shape);
  int64_t in_idx = 0;
  for (int64_t i = 0; i < total; ++i) {
    fn(i, in_idx);
    for (int d = nd - 1; d >= 0; --d) {
      ++coord[static_cast<size_t>(d)];
      in_idx += contrib[static_cast<size_t>(d)];
      if (coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      in_idx -= static_cast<int64_t>(coord[static_cast<size_t>(d)]) * contrib[static_cast<size_t>(d)];
      coord[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace

// ----- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  attach(out, {a, b}, [n](Tensor& o) {
    const double* g = o.grad->data();
    for (int side = 0; side < 2; ++side) {
      Tensor& p = o.node->parents[static_cast<size_t>(side)];
      if (!p.requires_grad) continue;
      double* pg = p.grad_ptr();
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  attach(out, {a, b}, [n](Tensor& o) {
    const double* g = o.grad->data();
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    if (pa.requires_grad) {
      double* pg = pa.grad_ptr();
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i];
    }
    if (pb.requires_grad) {
      double* pg = pb.grad_ptr();
      for (int64_t i = 0; i < n; ++i) pg[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  attach(out, {a, b}, [n](Tensor& o) {
    const double* g = o.grad->data();
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    if (pa.requires_grad) {
      double* pg = pa.grad_ptr();
      const double* pv = pb.ptr();
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * pv[i];
    }
    if (pb.requires_grad) {
      double* pg = pb.grad_ptr();
      const double* pv = pa.ptr();
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * pv[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  double* po = out.ptr();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  attach(out, {a}, [n, s](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * s;
  });
  return out;
}

// ----- matmul family ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul: expected rank-2 operands, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimension mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  mm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  attach(out, {a, b}, [m, k, n](Tensor& o) {
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    const double* g = o.grad->data();
    if (pa.requires_grad) mm_nt(g, pb.ptr(), pa.grad_ptr(), m, n, k);  // dA += dC * B^T
    if (pb.requires_grad) mm_tn(pa.ptr(), g, pb.grad_ptr(), m, k, n);  // dB += A^T * dC
  });
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require(v.ndim() == 1, "add_rowvec: vector must be rank 1, got " + shape_str(v.shape));
  require(a.ndim() >= 1 && a.dim(a.ndim() - 1) == v.dim(0),
          "add_rowvec: trailing dimension of " + shape_str(a.shape) + " does not match " +
              shape_str(v.shape));
  const int c = v.dim(0);
  const int64_t rows = a.numel() / c;
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  const double* pv = v.ptr();
  double* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) po[r * c + j] = pa[r * c + j] + pv[j];
  attach(out, {a, v}, [rows, c](Tensor& o) {
    Tensor& pa = o.node->parents[0];
    Tensor& pv = o.node->parents[1];
    const double* g = o.grad->data();
    if (pa.requires_grad) {
      double* pg = pa.grad_ptr();
      const int64_t n = rows * c;
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i];
    }
    if (pv.requires_grad) {
      double* pg = pv.grad_ptr();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) pg[j] += g[r * c + j];
    }
  });
  return out;
}

Tensor add_bcast0(const Tensor& a, const Tensor& b) {
  require(a.ndim() == b.ndim() + 1, "add_bcast0: rank mismatch " + shape_str(a.shape) + " vs " +
                                        shape_str(b.shape));
  for (int d = 0; d < b.ndim(); ++d)
    require(a.dim(d + 1) == b.dim(d), "add_bcast0: trailing shape mismatch " + shape_str(a.shape) +
                                          " vs " + shape_str(b.shape));
  const int64_t inner = b.numel();
  const int64_t n0 = a.dim(0);
  Tensor out = Tensor::zeros(a.shape);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n0; ++i)
    for (int64_t j = 0; j < inner; ++j) po[i * inner + j] = pa[i * inner + j] + pb[j];
  attach(out, {a, b}, [n0, inner](Tensor& o) {
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    const double* g = o.grad->data();
    if (pa.requires_grad) {
      double* pg = pa.grad_ptr();
      const int64_t n = n0 * inner;
      for (int64_t i = 0; i < n; ++i) pg[i] += g[i];
    }
    if (pb.requires_grad) {
      double* pg = pb.grad_ptr();
      for (int64_t i = 0; i < n0; ++i)
        for (int64_t j = 0; j < inner; ++j) pg[j] += g[i * inner + j];
    }
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.ndim() == b.ndim() && a.ndim() >= 2,
          "bmm: rank mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int nd = a.ndim();
  int64_t batch = 1;
  for (int d = 0; d < nd - 2; ++d) {
    require(a.dim(d) == b.dim(d), "bmm: leading dimension mismatch " + shape_str(a.shape) +
                                      " vs " + shape_str(b.shape));
    batch *= a.dim(d);
  }
  const int m = a.dim(nd - 2), k = a.dim(nd - 1);
  int n;
  if (transpose_b) {
    require(b.dim(nd - 1) == k, "bmm: inner dimension mismatch " + shape_str(a.shape) + " x " +
                                    shape_str(b.shape) + " (transposed)");
    n = b.dim(nd - 2);
  } else {
    require(b.dim(nd - 2) == k, "bmm: inner dimension mismatch " + shape_str(a.shape) + " x " +
                                    shape_str(b.shape));
    n = b.dim(nd - 1);
  }
  std::vector<int> out_shape(a.shape.begin(), a.shape.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);
  const int64_t sa = static_cast<int64_t>(m) * k;
  const int64_t sb = static_cast<int64_t>(k) * n;
  const int64_t so = static_cast<int64_t>(m) * n;
  for (int64_t i = 0; i < batch; ++i) {
    if (transpose_b) {
      mm_nt(a.ptr() + i * sa, b.ptr() + i * sb, out.ptr() + i * so, m, k, n);
    } else {
      mm_nn(a.ptr() + i * sa, b.ptr() + i * sb, out.ptr() + i * so, m, k, n);
    }
  }
  attach(out, {a, b}, [batch, m, k, n, sa, sb, so, transpose_b](Tensor& o) {
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    const double* g = o.grad->data();
    for (int64_t i = 0; i < batch; ++i) {
      const double* gi = g + i * so;
      if (pa.requires_grad) {
        double* da = pa.grad_ptr() + i * sa;
        if (transpose_b) {
          mm_nn(gi, pb.ptr() + i * sb, da, m, n, k);  // dA += dC * B
        } else {
          mm_nt(gi, pb.ptr() + i * sb, da, m, n, k);  // dA += dC * B^T
        }
      }
      if (pb.requires_grad) {
        double* db = pb.grad_ptr() + i * sb;
        if (transpose_b) {
          mm_tn(gi, pa.ptr() + i * sa, db, m, n, k);  // dB += dC^T * A
        } else {
          mm_tn(pa.ptr() + i * sa, gi, db, m, k, n);  // dB += A^T * dC
        }
      }
    }
  });
  return out;
}

// ----- normalization and activations -------------------------------------------

Tensor softmax_lastdim(const Tensor& t) {
  require(t.ndim() >= 1, "softmax: rank-0 input");
  const int n = t.dim(t.ndim() - 1);
  const int64_t rows = t.numel() / n;
  Tensor out = Tensor::zeros(t.shape);
  const double* pi = t.ptr();
  double* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = pi + r * n;
    double* y = po + r * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) y[j] *= inv;
  }
  attach(out, {t}, [rows, n](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* prob = o.ptr();
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const double* pr = prob + r * n;
      const double* gr = g + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += pr[j] * gr[j];
      double* out_g = pg + r * n;
      for (int j = 0; j < n; ++j) out_g[j] += pr[j] * (gr[j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
  require(t.ndim() >= 1, "layer_norm: rank-0 input");
  const int c = t.dim(t.ndim() - 1);
  require(gamma.ndim() == 1 && gamma.dim(0) == c && beta.ndim() == 1 && beta.dim(0) == c,
          "layer_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
              shape_str(gamma.shape) + " and " + shape_str(beta.shape));
  require(eps > 0.0, "layer_norm: eps must be positive");
  const int64_t rows = t.numel() / c;
  Tensor out = Tensor::zeros(t.shape);
  std::vector<double> mean(static_cast<size_t>(rows)), istd(static_cast<size_t>(rows));
  const double* px = t.ptr();
  const double* pgm = gamma.ptr();
  const double* pbt = beta.ptr();
  double* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = px + r * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += x[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = x[j] - mu;
      var += d * d;
    }
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<size_t>(r)] = mu;
    istd[static_cast<size_t>(r)] = is;
    double* y = po + r * c;
    for (int j = 0; j < c; ++j) y[j] = (x[j] - mu) * is * pgm[j] + pbt[j];
  }
  attach(out, {t, gamma, beta},
         [rows, c, mean = std::move(mean), istd = std::move(istd)](Tensor& o) {
           Tensor& pt = o.node->parents[0];
           Tensor& pgamma = o.node->parents[1];
           Tensor& pbeta = o.node->parents[2];
           const double* g = o.grad->data();
           const double* px = pt.ptr();
           const double* pgm = pgamma.ptr();
           double* dgm = pgamma.requires_grad ? pgamma.grad_ptr() : nullptr;
           double* dbt = pbeta.requires_grad ? pbeta.grad_ptr() : nullptr;
           double* dx = pt.requires_grad ? pt.grad_ptr() : nullptr;
           std::vector<double> xhat(static_cast<size_t>(c));
           for (int64_t r = 0; r < rows; ++r) {
             const double* x = px + r * c;
             const double* gr = g + r * c;
             const double mu = mean[static_cast<size_t>(r)];
             const double is = istd[static_cast<size_t>(r)];
             for (int j = 0; j < c; ++j) xhat[static_cast<size_t>(j)] = (x[j] - mu) * is;
             if (dgm) {
               for (int j = 0; j < c; ++j) dgm[j] += gr[j] * xhat[static_cast<size_t>(j)];
             }
             if (dbt) {
               for (int j = 0; j < c; ++j) dbt[j] += gr[j];
             }
             if (dx) {
               double mg = 0.0, mgx = 0.0;
               for (int j = 0; j < c; ++j) {
                 const double gj = gr[j] * pgm[j];
                 mg += gj;
                 mgx += gj * xhat[static_cast<size_t>(j)];
               }
               mg /= c;
               mgx /= c;
               double* dr = dx + r * c;
               for (int j = 0; j < c; ++j) {
                 const double gj = gr[j] * pgm[j];
                 dr[j] += is * (gj - mg - xhat[static_cast<size_t>(j)] * mgx);
               }
             }
           }
         });
  return out;
}

Tensor sigmoid(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape);
  const double* pi = t.ptr();
  double* po = out.ptr();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pi[i]));
  attach(out, {t}, [n](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* y = o.ptr();
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return out;
}

Tensor gelu(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape);
  const double* pi = t.ptr();
  double* po = out.ptr();
  const int64_t n = t.numel();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (int64_t i = 0; i < n; ++i)
    po[i] = 0.5 * pi[i] * (1.0 + std::erf(pi[i] * kInvSqrt2));
  attach(out, {t}, [n](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* x = p.ptr();
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (int64_t i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      pg[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
  return out;
}

Tensor mean_all(const Tensor& t) {
  const int64_t n = t.numel();
  Tensor out = Tensor::zeros({1});
  const double* pi = t.ptr();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += pi[i];
  out.ptr()[0] = acc / static_cast<double>(n);
  attach(out, {t}, [n](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double g = o.grad->data()[0] / static_cast<double>(n);
    double* pg = p.grad_ptr();
    for (int64_t i = 0; i < n; ++i) pg[i] += g;
  });
  return out;
}

// ----- structure ----------------------------------------------------------------

Tensor reshape(const Tensor& t, const std::vector<int>& shape) {
  require(shape_numel(shape) == t.numel(), "reshape: cannot view " + shape_str(t.shape) + " as " +
                                               shape_str(shape));
  Tensor out;
  out.shape = shape;
  out.data = t.data;  // same buffer; ops never mutate inputs
  const int64_t n = t.numel();
  attach(out, {t}, [n](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    for (int64_t i = 0; i < n; ++i) pg[i] += g[i];
  });
  return out;
}

Tensor permute(const Tensor& t, const std::vector<int>& axes) {
  const int nd = t.ndim();
  require(static_cast<int>(axes.size()) == nd,
          "permute: axes count " + std::to_string(axes.size()) + " does not match rank of " +
              shape_str(t.shape));
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int a : axes) {
    require(a >= 0 && a < nd && !seen[static_cast<size_t>(a)], "permute: invalid axes list");
    seen[static_cast<size_t>(a)] = true;
  }
  std::vector<int> out_shape(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d) out_shape[static_cast<size_t>(d)] = t.dim(axes[static_cast<size_t>(d)]);
  const std::vector<int64_t> in_strides = strides_of(t.shape);
  std::vector<int64_t> contrib(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d) contrib[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(d)])];

  Tensor out = Tensor::zeros(out_shape);
  {
    const double* pi = t.ptr();
    double* po = out.ptr();
    walk_mapping(out_shape, contrib, [&](int64_t oi, int64_t ii) { po[oi] = pi[ii]; });
  }
  attach(out, {t}, [out_shape, contrib](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    walk_mapping(out_shape, contrib, [&](int64_t oi, int64_t ii) { pg[ii] += g[oi]; });
  });
  return out;
}

Tensor concat_dim0(const Tensor& a, const Tensor& b) {
  require(a.ndim() == b.ndim() && a.ndim() >= 1,
          "concat: rank mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  for (int d = 1; d < a.ndim(); ++d)
    require(a.dim(d) == b.dim(d), "concat: trailing shape mismatch " + shape_str(a.shape) +
                                      " vs " + shape_str(b.shape));
  std::vector<int> out_shape = a.shape;
  out_shape[0] = a.dim(0) + b.dim(0);
  Tensor out = Tensor::zeros(out_shape);
  const int64_t na = a.numel(), nb = b.numel();
  std::memcpy(out.ptr(), a.ptr(), static_cast<size_t>(na) * sizeof(double));
  std::memcpy(out.ptr() + na, b.ptr(), static_cast<size_t>(nb) * sizeof(double));
  attach(out, {a, b}, [na, nb](Tensor& o) {
    Tensor& pa = o.node->parents[0];
    Tensor& pb = o.node->parents[1];
    const double* g = o.grad->data();
    if (pa.requires_grad) {
      double* pg = pa.grad_ptr();
      for (int64_t i = 0; i < na; ++i) pg[i] += g[i];
    }
    if (pb.requires_grad) {
      double* pg = pb.grad_ptr();
      for (int64_t i = 0; i < nb; ++i) pg[i] += g[na + i];
    }
  });
  return out;
}

// ----- convolution ----------------------------------------------------------------

int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

void check_conv_spec(const ConvSpec& s) {
  require(s.in_channels > 0 && s.out_channels > 0 && s.kernel_h > 0 && s.kernel_w > 0 &&
              s.stride > 0 && s.padding >= 0,
          "conv: invalid spec (channels/kernel/stride must be positive)");
  if (s.depthwise)
    require(s.in_channels == s.out_channels, "conv: depthwise requires equal channel counts");
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& kernels, const Tensor& bias) {
  check_conv_spec(spec);
  require(input.ndim() == 3 && input.dim(0) == spec.in_channels,
          "conv2d: input " + shape_str(input.shape) + " does not match spec in_channels " +
              std::to_string(spec.in_channels));
  const int kc = spec.depthwise ? 1 : spec.in_channels;
  require(kernels.shape == std::vector<int>({spec.out_channels, kc, spec.kernel_h, spec.kernel_w}),
          "conv2d: kernels " + shape_str(kernels.shape) + " do not match spec");
  require(bias.shape == std::vector<int>({spec.out_channels}),
          "conv2d: bias " + shape_str(bias.shape) + " does not match out_channels");
  const int H = input.dim(1), W = input.dim(2);
  const int Ho = conv_out_extent(H, spec.kernel_h, spec.stride, spec.padding);
  const int Wo = conv_out_extent(W, spec.kernel_w, spec.stride, spec.padding);
  require(Ho >= 1 && Wo >= 1, "conv2d: output extent underflow for input " + shape_str(input.shape));

  Tensor out = Tensor::zeros({spec.out_channels, Ho, Wo});
  const int s = spec.stride, p = spec.padding, kh = spec.kernel_h, kw = spec.kernel_w;
  const double* in = input.ptr();
  const double* K = kernels.ptr();
  double* O = out.ptr();
  count_muls(static_cast<uint64_t>(Ho) * Wo * spec.out_channels * kc * kh * kw);
  for (int o = 0; o < spec.out_channels; ++o) {
    double* oplane = O + static_cast<size_t>(o) * Ho * Wo;
    std::fill(oplane, oplane + static_cast<size_t>(Ho) * Wo, bias.ptr()[o]);
    const int ci_lo = spec.depthwise ? o : 0;
    const int ci_hi = spec.depthwise ? o + 1 : spec.in_channels;
    for (int ci = ci_lo; ci < ci_hi; ++ci) {
      const double* iplane = in + static_cast<size_t>(ci) * H * W;
      const double* kbase = K + ((static_cast<size_t>(o) * kc + (spec.depthwise ? 0 : ci)) * kh) * kw;
      for (int dy = 0; dy < kh; ++dy) {
        for (int dx = 0; dx < kw; ++dx) {
          const double wgt = kbase[dy * kw + dx];
          const int oy_lo = std::max(0, div_ceil(p - dy, s));
          const int oy_hi = std::min(Ho - 1, div_floor(H - 1 + p - dy, s));
          const int ox_lo = std::max(0, div_ceil(p - dx, s));
          const int ox_hi = std::min(Wo - 1, div_floor(W - 1 + p - dx, s));
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const int iy = oy * s + dy - p;
            const double* irow = iplane + static_cast<size_t>(iy) * W;
            double* orow = oplane + static_cast<size_t>(oy) * Wo;
            for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wgt * irow[ox * s + dx - p];
          }
        }
      }
    }
  }

  ConvSpec sp = spec;
  attach(out, {input, kernels, bias}, [sp, H, W, Ho, Wo](Tensor& o) {
    Tensor& pin = o.node->parents[0];
    Tensor& pk = o.node->parents[1];
    Tensor& pb = o.node->parents[2];
    const double* g = o.grad->data();
    const int kc = sp.depthwise ? 1 : sp.in_channels;
    const int s = sp.stride, p = sp.padding, kh = sp.kernel_h, kw = sp.kernel_w;
    if (pb.requires_grad) {
      double* db = pb.grad_ptr();
      for (int o2 = 0; o2 < sp.out_channels; ++o2) {
        const double* gp = g + static_cast<size_t>(o2) * Ho * Wo;
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += gp[i];
        db[o2] += acc;
      }
    }
    const bool want_in = pin.requires_grad;
    const bool want_k = pk.requires_grad;
    if (!want_in && !want_k) return;
    const double* in = pin.ptr();
    const double* K = pk.ptr();
    double* din = want_in ? pin.grad_ptr() : nullptr;
    double* dk = want_k ? pk.grad_ptr() : nullptr;
    for (int o2 = 0; o2 < sp.out_channels; ++o2) {
      const double* gplane = g + static_cast<size_t>(o2) * Ho * Wo;
      const int ci_lo = sp.depthwise ? o2 : 0;
      const int ci_hi = sp.depthwise ? o2 + 1 : sp.in_channels;
      for (int ci = ci_lo; ci < ci_hi; ++ci) {
        const double* iplane = in + static_cast<size_t>(ci) * H * W;
        double* diplane = want_in ? din + static_cast<size_t>(ci) * H * W : nullptr;
        const size_t koff = (static_cast<size_t>(o2) * kc + (sp.depthwise ? 0 : ci)) * kh * kw;
        for (int dy = 0; dy < kh; ++dy) {
          for (int dx = 0; dx < kw; ++dx) {
            const double wgt = K[koff + static_cast<size_t>(dy) * kw + dx];
            double kacc = 0.0;
            const int oy_lo = std::max(0, div_ceil(p - dy, s));
            const int oy_hi = std::min(Ho - 1, div_floor(H - 1 + p - dy, s));
            const int ox_lo = std::max(0, div_ceil(p - dx, s));
            const int ox_hi = std::min(Wo - 1, div_floor(W - 1 + p - dx, s));
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const int iy = oy * s + dy - p;
              const double* irow = iplane + static_cast<size_t>(iy) * W;
              double* dirow = want_in ? diplane + static_cast<size_t>(iy) * W : nullptr;
              const double* grow = gplane + static_cast<size_t>(oy) * Wo;
              for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                const int ix = ox * s + dx - p;
                const double gv = grow[ox];
                if (want_k) kacc += gv * irow[ix];
                if (want_in) dirow[ix] += wgt * gv;
              }
            }
            if (want_k) dk[koff + static_cast<size_t>(dy) * kw + dx] += kacc;
          }
        }
      }
    }
  });
  return out;
}

Tensor transposed_conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& kernels,
                         const Tensor& bias) {
  check_conv_spec(spec);
  require(input.ndim() == 3 && input.dim(0) == spec.in_channels,
          "transposed_conv2d: input " + shape_str(input.shape) + " does not match spec in_channels " +
              std::to_string(spec.in_channels));
  require(!spec.depthwise, "transposed_conv2d: depthwise is not supported");
  require(kernels.shape ==
              std::vector<int>({spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w}),
          "transposed_conv2d: kernels " + shape_str(kernels.shape) + " do not match spec");
  require(bias.shape == std::vector<int>({spec.out_channels}),
          "transposed_conv2d: bias " + shape_str(bias.shape) + " does not match out_channels");
  const int H = input.dim(1), W = input.dim(2);
  const int s = spec.stride, p = spec.padding, kh = spec.kernel_h, kw = spec.kernel_w;
  const int Ho = (H - 1) * s - 2 * p + kh;
  const int Wo = (W - 1) * s - 2 * p + kw;
  require(Ho >= 1 && Wo >= 1, "transposed_conv2d: output extent underflow");

  Tensor out = Tensor::zeros({spec.out_channels, Ho, Wo});
  const double* in = input.ptr();
  const double* K = kernels.ptr();
  double* O = out.ptr();
  count_muls(static_cast<uint64_t>(H) * W * spec.in_channels * spec.out_channels * kh * kw);
  for (int o = 0; o < spec.out_channels; ++o) {
    double* oplane = O + static_cast<size_t>(o) * Ho * Wo;
    std::fill(oplane, oplane + static_cast<size_t>(Ho) * Wo, bias.ptr()[o]);
  }
  for (int i = 0; i < spec.in_channels; ++i) {
    const double* iplane = in + static_cast<size_t>(i) * H * W;
    for (int o = 0; o < spec.out_channels; ++o) {
      const double* kbase = K + (static_cast<size_t>(i) * spec.out_channels + o) * kh * kw;
      double* oplane = O + static_cast<size_t>(o) * Ho * Wo;
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
          const double v = iplane[static_cast<size_t>(r) * W + c];
          for (int dy = 0; dy < kh; ++dy) {
            const int y = r * s + dy - p;
            if (y < 0 || y >= Ho) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int x = c * s + dx - p;
              if (x < 0 || x >= Wo) continue;
              oplane[static_cast<size_t>(y) * Wo + x] += v * kbase[dy * kw + dx];
            }
          }
        }
      }
    }
  }

  ConvSpec sp = spec;
  attach(out, {input, kernels, bias}, [sp, H, W, Ho, Wo](Tensor& o) {
    Tensor& pin = o.node->parents[0];
    Tensor& pk = o.node->parents[1];
    Tensor& pb = o.node->parents[2];
    const double* g = o.grad->data();
    const int s = sp.stride, p = sp.padding, kh = sp.kernel_h, kw = sp.kernel_w;
    if (pb.requires_grad) {
      double* db = pb.grad_ptr();
      for (int o2 = 0; o2 < sp.out_channels; ++o2) {
        const double* gp = g + static_cast<size_t>(o2) * Ho * Wo;
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += gp[i];
        db[o2] += acc;
      }
    }
    const bool want_in = pin.requires_grad;
    const bool want_k = pk.requires_grad;
    if (!want_in && !want_k) return;
    const double* in = pin.ptr();
    const double* K = pk.ptr();
    double* din = want_in ? pin.grad_ptr() : nullptr;
    double* dk = want_k ? pk.grad_ptr() : nullptr;
    for (int i = 0; i < sp.in_channels; ++i) {
      const double* iplane = in + static_cast<size_t>(i) * H * W;
      double* diplane = want_in ? din + static_cast<size_t>(i) * H * W : nullptr;
      for (int o2 = 0; o2 < sp.out_channels; ++o2) {
        const double* kbase = K + (static_cast<size_t>(i) * sp.out_channels + o2) * kh * kw;
        double* dkbase = want_k ? dk + (static_cast<size_t>(i) * sp.out_channels + o2) * kh * kw : nullptr;
        const double* gplane = g + static_cast<size_t>(o2) * Ho * Wo;
        for (int r = 0; r < H; ++r) {
          for (int c = 0; c < W; ++c) {
            const double v = iplane[static_cast<size_t>(r) * W + c];
            double dacc = 0.0;
            for (int dy = 0; dy < kh; ++dy) {
              const int y = r * s + dy - p;
              if (y < 0 || y >= Ho) continue;
              for (int dx = 0; dx < kw; ++dx) {
                const int x = c * s + dx - p;
                if (x < 0 || x >= Wo) continue;
                const double gv = gplane[static_cast<size_t>(y) * Wo + x];
                if (want_k) dkbase[dy * kw + dx] += v * gv;
                dacc += kbase[dy * kw + dx] * gv;
              }
            }
            if (want_in) diplane[static_cast<size_t>(r) * W + c] += dacc;
          }
        }
      }
    }
  });
  return out;
}

// ----- windowing ---------------------------------------------------------------

namespace {

// fn(out_idx, in_idx) over the [C,H,W] -> [N,M*M,C] window gather.
template <class Fn>
void window_map_chw(int C, int H, int W, int M, Fn&& fn) {
  const int wx_n = W / M;
  const int wy_n = H / M;
  int64_t oi = 0;
  for (int wy = 0; wy < wy_n; ++wy)
    for (int wx = 0; wx < wx_n; ++wx)
      for (int ty = 0; ty < M; ++ty)
        for (int tx = 0; tx < M; ++tx) {
          const int64_t pix = static_cast<int64_t>(wy * M + ty) * W + (wx * M + tx);
          for (int c = 0; c < C; ++c)
            fn(oi++, static_cast<int64_t>(c) * H * W + pix);
        }
}

// fn(out_idx, in_idx) over the [H*W,C] -> [N,M*M,C] window gather.
template <class Fn>
void window_map_tokens(int C, int H, int W, int M, Fn&& fn) {
  const int wx_n = W / M;
  const int wy_n = H / M;
  int64_t oi = 0;
  for (int wy = 0; wy < wy_n; ++wy)
    for (int wx = 0; wx < wx_n; ++wx)
      for (int ty = 0; ty < M; ++ty)
        for (int tx = 0; tx < M; ++tx) {
          const int64_t base = (static_cast<int64_t>(wy * M + ty) * W + (wx * M + tx)) * C;
          for (int c = 0; c < C; ++c) fn(oi++, base + c);
        }
}

// fn(out_idx, in_idx) over the [N,M*M,C] -> [N,M*M/4,4,C] sub-window gather.
template <class Fn>
void subwindow_map(int N, int M, int C, Fn&& fn) {
  const int half = M / 2;
  int64_t oi = 0;
  for (int n = 0; n < N; ++n) {
    const int64_t nbase = static_cast<int64_t>(n) * M * M * C;
    for (int sy = 0; sy < half; ++sy)
      for (int sx = 0; sx < half; ++sx)
        for (int py = 0; py < 2; ++py)
          for (int px = 0; px < 2; ++px) {
            const int token = (sy * 2 + py) * M + (sx * 2 + px);
            const int64_t base = nbase + static_cast<int64_t>(token) * C;
            for (int c = 0; c < C; ++c) fn(oi++, base + c);
          }
  }
}

void check_window_args(int H, int W, int M, const char* op) {
  require(M >= 1, std::string(op) + ": window size must be positive");
  require(H % M == 0 && W % M == 0, std::string(op) + ": extents " + std::to_string(H) + "x" +
                                        std::to_string(W) + " are not divisible by window size " +
                                        std::to_string(M));
}

template <class MapBuilder>
Tensor gather_forward(const Tensor& t, const std::vector<int>& out_shape, MapBuilder build) {
  Tensor out = Tensor::zeros(out_shape);
  {
    const double* pi = t.ptr();
    double* po = out.ptr();
    build([&](int64_t oi, int64_t ii) { po[oi] = pi[ii]; });
  }
  attach(out, {t}, [build](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    build([&](int64_t oi, int64_t ii) { pg[ii] += g[oi]; });
  });
  return out;
}

}  // namespace

Tensor window_partition(const Tensor& t, int M) {
  require(t.ndim() == 3, "window_partition: expected [C,H,W], got " + shape_str(t.shape));
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  check_window_args(H, W, M, "window_partition");
  const int N = (H / M) * (W / M);
  auto build = [C, H, W, M](auto&& fn) { window_map_chw(C, H, W, M, fn); };
  return gather_forward(t, {N, M * M, C}, build);
}

Tensor window_reverse(const Tensor& w, int H, int W, int M) {
  require(w.ndim() == 3, "window_reverse: expected [N,M*M,C], got " + shape_str(w.shape));
  check_window_args(H, W, M, "window_reverse");
  const int C = w.dim(2);
  require(w.dim(1) == M * M, "window_reverse: token count " + std::to_string(w.dim(1)) +
                                 " does not match window size " + std::to_string(M));
  require(w.dim(0) == (H / M) * (W / M), "window_reverse: window count mismatch for " +
                                             std::to_string(H) + "x" + std::to_string(W));
  // The scatter inverse of window_partition: swap roles of the index pair.
  Tensor out = Tensor::zeros({C, H, W});
  {
    const double* pi = w.ptr();
    double* po = out.ptr();
    window_map_chw(C, H, W, M, [&](int64_t wi, int64_t ci) { po[ci] = pi[wi]; });
  }
  attach(out, {w}, [C, H, W, M](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    window_map_chw(C, H, W, M, [&](int64_t wi, int64_t ci) { pg[wi] += g[ci]; });
  });
  return out;
}

Tensor window_partition_tokens(const Tensor& t, int h, int w, int M) {
  require(t.ndim() == 2, "window_partition_tokens: expected [T,C], got " + shape_str(t.shape));
  check_window_args(h, w, M, "window_partition_tokens");
  require(t.dim(0) == h * w, "window_partition_tokens: token count " + std::to_string(t.dim(0)) +
                                 " does not match extents " + std::to_string(h) + "x" + std::to_string(w));
  const int C = t.dim(1);
  const int N = (h / M) * (w / M);
  auto build = [C, h, w, M](auto&& fn) { window_map_tokens(C, h, w, M, fn); };
  return gather_forward(t, {N, M * M, C}, build);
}

Tensor window_reverse_tokens(const Tensor& win, int h, int w, int M) {
  require(win.ndim() == 3, "window_reverse_tokens: expected [N,M*M,C], got " + shape_str(win.shape));
  check_window_args(h, w, M, "window_reverse_tokens");
  const int C = win.dim(2);
  require(win.dim(1) == M * M && win.dim(0) == (h / M) * (w / M),
          "window_reverse_tokens: window layout mismatch for " + std::to_string(h) + "x" +
              std::to_string(w));
  Tensor out = Tensor::zeros({h * w, C});
  {
    const double* pi = win.ptr();
    double* po = out.ptr();
    window_map_tokens(C, h, w, M, [&](int64_t wi, int64_t ti) { po[ti] = pi[wi]; });
  }
  attach(out, {win}, [C, h, w, M](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    window_map_tokens(C, h, w, M, [&](int64_t wi, int64_t ti) { pg[wi] += g[ti]; });
  });
  return out;
}

Tensor subwindow_rearrange(const Tensor& w) {
  require(w.ndim() == 3, "subwindow_rearrange: expected [N,M*M,C], got " + shape_str(w.shape));
  const int N = w.dim(0), MM = w.dim(1), C = w.dim(2);
  const int M = static_cast<int>(std::lround(std::sqrt(static_cast<double>(MM))));
  require(M * M == MM && M % 2 == 0, "subwindow_rearrange: token count " + std::to_string(MM) +
                                         " is not a square of an even window size");
  auto build = [N, M, C](auto&& fn) { subwindow_map(N, M, C, fn); };
  return gather_forward(w, {N, MM / 4, 4, C}, build);
}

Tensor subwindow_restore(const Tensor& g, int M) {
  require(g.ndim() == 4, "subwindow_restore: expected [N,M*M/4,4,C], got " + shape_str(g.shape));
  require(M >= 2 && M % 2 == 0, "subwindow_restore: window size must be even");
  const int N = g.dim(0), C = g.dim(3);
  require(g.dim(1) == M * M / 4 && g.dim(2) == 4,
          "subwindow_restore: group layout " + shape_str(g.shape) + " does not match window size " +
              std::to_string(M));
  Tensor out = Tensor::zeros({N, M * M, C});
  {
    const double* pi = g.ptr();
    double* po = out.ptr();
    subwindow_map(N, M, C, [&](int64_t gi, int64_t wi) { po[wi] = pi[gi]; });
  }
  attach(out, {g}, [N, M, C](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* gr = o.grad->data();
    double* pg = p.grad_ptr();
    subwindow_map(N, M, C, [&](int64_t gi, int64_t wi) { pg[gi] += gr[wi]; });
  });
  return out;
}

Tensor chw_to_tokens(const Tensor& t) {
  require(t.ndim() == 3, "chw_to_tokens: expected [C,H,W], got " + shape_str(t.shape));
  const int C = t.dim(0);
  const int64_t hw = static_cast<int64_t>(t.dim(1)) * t.dim(2);
  Tensor flat = reshape(t, {C, static_cast<int>(hw)});
  return permute(flat, {1, 0});
}

Tensor tokens_to_chw(const Tensor& t, int C, int H, int W) {
  require(t.ndim() == 2, "tokens_to_chw: expected [T,C], got " + shape_str(t.shape));
  require(t.dim(0) == H * W && t.dim(1) == C,
          "tokens_to_chw: " + shape_str(t.shape) + " does not match [" + std::to_string(C) + "," +
              std::to_string(H) + "," + std::to_string(W) + "]");
  Tensor moved = permute(t, {1, 0});
  return reshape(moved, {C, H, W});
}

Tensor pack_plane_op(const Tensor& t) {
  require(t.ndim() == 3 && t.dim(0) == 1, "pack: expected [1,H,W], got " + shape_str(t.shape));
  const int H = t.dim(1), W = t.dim(2);
  require(H % 2 == 0 && W % 2 == 0, "pack: extents " + std::to_string(H) + "x" + std::to_string(W) +
                                        " must be even");
  const int h2 = H / 2, w2 = W / 2;
  auto build = [H, W, h2, w2](auto&& fn) {
    int64_t oi = 0;
    for (int pidx = 0; pidx < 4; ++pidx) {
      const int py = pidx >> 1, px = pidx & 1;
      for (int i = 0; i < h2; ++i)
        for (int j = 0; j < w2; ++j)
          fn(oi++, static_cast<int64_t>(2 * i + py) * W + (2 * j + px));
    }
  };
  return gather_forward(t, {4, h2, w2}, build);
}

}  // namespace elm
