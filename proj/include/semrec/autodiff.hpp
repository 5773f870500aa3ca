#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>

#include "semrec/rng.hpp"
#include "semrec/tensor.hpp"

namespace semrec {

// Define-by-run reverse-mode autodiff. Every op builds a Variable node that
// holds its forward value and, while gradients are enabled, a closure that
// pushes the node's gradient into its inputs. The graph is rebuilt per step.
class Variable;
using Var = std::shared_ptr<Variable>;

class Variable {
 public:
  explicit Variable(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Variable&)> backward_fn;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
  }
  void zero_grad() {
    if (grad.defined()) grad.fill(0.0f);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII scope that disables graph recording (inference / oracles).
struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
};

inline Var make_var(Tensor t, bool requires_grad = false) {
  return std::make_shared<Variable>(std::move(t), requires_grad);
}

inline Var constant(Tensor t) { return make_var(std::move(t), false); }

namespace detail {

inline Var make_op(const char* name, Tensor out, std::vector<Var> ins,
                   std::function<void(Variable&)> bw) {
  out.check_finite(name);
  auto node = std::make_shared<Variable>(std::move(out));
  node->op = name;
  if (grad_mode()) {
    bool rg = false;
    for (const auto& in : ins) rg = rg || in->requires_grad;
    if (rg) {
      node->requires_grad = true;
      node->inputs = std::move(ins);
      node->backward_fn = std::move(bw);
    }
  }
  return node;
}

// Matmul kernels. Each output element is produced by exactly one iteration
// owner with a fixed inner-loop order, so results are bit-identical for any
// thread count.
inline void mm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
                  bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > 32768 && m > 1)
  for (int64_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0f);
    const float* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const float aip = ai[p];
      const float* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
inline void mm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
                  bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > 32768 && m > 1)
  for (int64_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      float acc = 0.0f;
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

// c[k,n] (+)= a[m,k]^T * b[m,n]
inline void mm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
                  bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > 32768 && k > 1)
  for (int64_t p = 0; p < k; ++p) {
    float* cp = c + p * n;
    if (!accumulate) std::fill(cp, cp + n, 0.0f);
    for (int64_t i = 0; i < m; ++i) {
      const float aip = a[i * k + p];
      const float* bi = b + i * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// True when small's shape equals the trailing dims of big's shape
// (leading length-1 dims of small are ignored).
inline bool suffix_broadcastable(const Shape& big, const Shape& small) {
  size_t bs = big.size(), ss = small.size();
  size_t skip = 0;
  while (skip < ss && small[skip] == 1) ++skip;
  size_t eff = ss - skip;
  if (eff > bs) return false;
  for (size_t i = 0; i < eff; ++i) {
    if (small[skip + i] != big[bs - eff + i]) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

inline Var add(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.shape() == bv.shape()) {
    Tensor out(av.shape());
    const int64_t n = av.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
    return detail::make_op("add", std::move(out), {a, b}, [](Variable& v) {
      Variable& x = *v.inputs[0];
      Variable& y = *v.inputs[1];
      const int64_t n = v.grad.numel();
      if (x.requires_grad) {
        x.ensure_grad();
        for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i];
      }
      if (y.requires_grad) {
        y.ensure_grad();
        for (int64_t i = 0; i < n; ++i) y.grad[i] += v.grad[i];
      }
    });
  }
  if (!detail::suffix_broadcastable(av.shape(), bv.shape())) {
    throw ShapeError(str_cat("add: shape mismatch ", shape_str(av.shape()), " vs ",
                             shape_str(bv.shape())));
  }
  const int64_t nb = bv.numel();
  Tensor out(av.shape());
  const int64_t n = av.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % nb];
  return detail::make_op("add", std::move(out), {a, b}, [nb](Variable& v) {
    Variable& x = *v.inputs[0];
    Variable& y = *v.inputs[1];
    const int64_t n = v.grad.numel();
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (int64_t i = 0; i < n; ++i) y.grad[i % nb] += v.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return detail::make_op("sub", std::move(out), {a, b}, [](Variable& v) {
    Variable& x = *v.inputs[0];
    Variable& y = *v.inputs[1];
    const int64_t n = v.grad.numel();
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (int64_t i = 0; i < n; ++i) y.grad[i] -= v.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return detail::make_op("mul", std::move(out), {a, b}, [](Variable& v) {
    Variable& x = *v.inputs[0];
    Variable& y = *v.inputs[1];
    const int64_t n = v.grad.numel();
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (int64_t i = 0; i < n; ++i) y.grad[i] += v.grad[i] * x.value[i];
    }
  });
}

inline Var scale(const Var& a, float c) {
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * c;
  return detail::make_op("scale", std::move(out), {a}, [c](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
    const int64_t n = v.grad.numel();
    for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i] * c;
  });
}

// ---------------------------------------------------------------------------
// Matrix products

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError(str_cat("matmul: incompatible shapes ", shape_str(av.shape()), " x ",
                             shape_str(bv.shape())));
  }
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  detail::mm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
  return detail::make_op("matmul", std::move(out), {a, b}, [m, k, n](Variable& v) {
    Variable& x = *v.inputs[0];
    Variable& y = *v.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      detail::mm_nt(v.grad.data(), y.value.data(), x.grad.data(), m, n, k, true);
    }
    if (y.requires_grad) {
      y.ensure_grad();
      detail::mm_tn(x.value.data(), v.grad.data(), y.grad.data(), m, k, n, true);
    }
  });
}

// Batched matmul: [g,m,k] x [g,k,n] -> [g,m,n].
inline Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw ShapeError(str_cat("bmm: incompatible shapes ", shape_str(av.shape()), " x ",
                             shape_str(bv.shape())));
  }
  const int64_t g = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out({g, m, n});
#pragma omp parallel for schedule(static) if (g > 1 && g * m * k * n > 32768)
  for (int64_t i = 0; i < g; ++i) {
    for (int64_t r = 0; r < m; ++r) {
      float* cr = out.data() + (i * m + r) * n;
      std::fill(cr, cr + n, 0.0f);
      const float* ar = av.data() + (i * m + r) * k;
      const float* bi = bv.data() + i * k * n;
      for (int64_t p = 0; p < k; ++p) {
        const float arp = ar[p];
        const float* bp = bi + p * n;
        for (int64_t j = 0; j < n; ++j) cr[j] += arp * bp[j];
      }
    }
  }
  return detail::make_op("bmm", std::move(out), {a, b}, [g, m, k, n](Variable& v) {
    Variable& x = *v.inputs[0];
    Variable& y = *v.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
#pragma omp parallel for schedule(static) if (g > 1)
      for (int64_t i = 0; i < g; ++i) {
        detail::mm_nt(v.grad.data() + i * m * n, y.value.data() + i * k * n,
                      x.grad.data() + i * m * k, m, n, k, true);
      }
    }
    if (y.requires_grad) {
      y.ensure_grad();
#pragma omp parallel for schedule(static) if (g > 1)
      for (int64_t i = 0; i < g; ++i) {
        detail::mm_tn(x.value.data() + i * m * k, v.grad.data() + i * m * n,
                      y.grad.data() + i * k * n, m, k, n, true);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a->value.numel()) {
    throw ShapeError(str_cat("reshape: ", shape_str(a->value.shape()), " -> ",
                             shape_str(shape), " changes element count"));
  }
  Tensor out(std::move(shape), a->value.vec());
  return detail::make_op("reshape", std::move(out), {a}, [](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
    const int64_t n = v.grad.numel();
    for (int64_t i = 0; i < n; ++i) x.grad[i] += v.grad[i];
  });
}

namespace detail {

inline std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Gather (invert=false): dst[coords] = src[perm(coords)], iterating dst in
// row-major order. Scatter-add (invert=true): dst[perm(coords)] += src[coords],
// iterating src in row-major order; used for the permute gradient.
inline void permute_copy(const Tensor& src, const std::vector<int>& perm, Tensor& dst,
                         bool invert) {
  const int r = src.rank();
  const Shape& walk_shape = invert ? src.shape() : dst.shape();
  const Shape& other_shape = invert ? dst.shape() : src.shape();
  auto other_strides = row_strides(other_shape);
  // map[d]: stride in the non-walked tensor for walked dimension d.
  std::vector<int64_t> map(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) {
    map[static_cast<size_t>(d)] = other_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];
  }
  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  const float* sp = src.data();
  float* dp = dst.data();
  for (int64_t flat = 0;; ++flat) {
    int64_t off = 0;
    for (int d = 0; d < r; ++d) off += coord[static_cast<size_t>(d)] * map[static_cast<size_t>(d)];
    if (invert) {
      dp[off] += sp[flat];
    } else {
      dp[flat] = sp[off];
    }
    int d = r - 1;
    while (d >= 0) {
      if (++coord[static_cast<size_t>(d)] < walk_shape[static_cast<size_t>(d)]) break;
      coord[static_cast<size_t>(d)] = 0;
      --d;
    }
    if (d < 0) break;
  }
}

}  // namespace detail

inline Var permute(const Var& a, std::vector<int> perm) {
  const Tensor& av = a->value;
  if (static_cast<int>(perm.size()) != av.rank()) {
    throw ShapeError(str_cat("permute: perm size ", perm.size(), " vs rank ", av.rank()));
  }
  Shape out_shape(perm.size());
  std::vector<bool> seen(perm.size(), false);
  for (size_t d = 0; d < perm.size(); ++d) {
    int p = perm[d];
    if (p < 0 || p >= av.rank() || seen[static_cast<size_t>(p)]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<size_t>(p)] = true;
    out_shape[d] = av.dim(p);
  }
  Tensor out(out_shape);
  detail::permute_copy(av, perm, out, false);
  return detail::make_op("permute", std::move(out), {a}, [perm](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
    detail::permute_copy(v.grad, perm, x.grad, true);
  });
}

inline Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0]->value.rank();
  if (axis < 0 || axis >= r) throw ShapeError(str_cat("concat: axis ", axis, " out of range"));
  Shape out_shape = xs[0]->value.shape();
  int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && x->value.dim(d) != out_shape[static_cast<size_t>(d)]) {
        throw ShapeError(str_cat("concat: shape mismatch ", shape_str(x->value.shape()),
                                 " vs ", shape_str(out_shape)));
      }
    }
    axis_total += x->value.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out(out_shape);
  // outer = product of dims before axis; inner = product after.
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[static_cast<size_t>(d)];
  int64_t offset = 0;
  for (const auto& x : xs) {
    const int64_t w = x->value.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * axis_total * inner + offset,
                  x->value.data() + o * w, static_cast<size_t>(w) * sizeof(float));
    }
    offset += w;
  }
  return detail::make_op("concat", std::move(out), xs,
                         [axis, outer, inner, axis_total](Variable& v) {
                           int64_t offset = 0;
                           for (auto& in : v.inputs) {
                             Variable& x = *in;
                             const int64_t w = x.value.dim(axis) * inner;
                             if (x.requires_grad) {
                               x.ensure_grad();
                               for (int64_t o = 0; o < outer; ++o) {
                                 const float* g = v.grad.data() + o * axis_total * inner + offset;
                                 float* xg = x.grad.data() + o * w;
                                 for (int64_t i = 0; i < w; ++i) xg[i] += g[i];
                               }
                             }
                             offset += w;
                           }
                         });
}

inline Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  const Tensor& av = a->value;
  const int r = av.rank();
  if (axis < 0 || axis >= r) throw ShapeError(str_cat("slice: axis ", axis, " out of range"));
  if (start < 0 || len < 0 || start + len > av.dim(axis)) {
    throw ShapeError(str_cat("slice: range [", start, ", ", start + len, ") out of extent ",
                             av.dim(axis), " in ", shape_str(av.shape())));
  }
  Shape out_shape = av.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= av.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= av.dim(d);
  Tensor out(out_shape);
  const int64_t src_w = av.dim(axis) * inner;
  const int64_t dst_w = len * inner;
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * dst_w, av.data() + o * src_w + start * inner,
                static_cast<size_t>(dst_w) * sizeof(float));
  }
  return detail::make_op("slice", std::move(out), {a},
                         [outer, inner, src_w, dst_w, start](Variable& v) {
                           Variable& x = *v.inputs[0];
                           x.ensure_grad();
                           for (int64_t o = 0; o < outer; ++o) {
                             const float* g = v.grad.data() + o * dst_w;
                             float* xg = x.grad.data() + o * src_w + start * inner;
                             for (int64_t i = 0; i < dst_w; ++i) xg[i] += g[i];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

inline Var softmax(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() < 1) throw ShapeError("softmax: rank-0 input");
  const int64_t cols = av.dim(av.rank() - 1);
  const int64_t rows = av.numel() / cols;
  Tensor out(av.shape());
#pragma omp parallel for schedule(static) if (rows > 8 && rows * cols > 16384)
  for (int64_t rI = 0; rI < rows; ++rI) {
    const float* x = av.data() + rI * cols;
    float* y = out.data() + rI * cols;
    float mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  return detail::make_op("softmax", std::move(out), {a}, [rows, cols](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
#pragma omp parallel for schedule(static) if (rows > 8 && rows * cols > 16384)
    for (int64_t rI = 0; rI < rows; ++rI) {
      const float* y = v.value.data() + rI * cols;
      const float* dy = v.grad.data() + rI * cols;
      float* dx = x.grad.data() + rI * cols;
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (int64_t j = 0; j < cols; ++j) {
        dx[j] += y[j] * (dy[j] - static_cast<float>(dot));
      }
    }
  });
}

inline Var layernorm(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5f) {
  const Tensor& xv = x->value;
  const int64_t cols = xv.dim(xv.rank() - 1);
  const int64_t rows = xv.numel() / cols;
  if (gain->value.numel() != cols || bias->value.numel() != cols) {
    throw ShapeError(str_cat("layernorm: gain/bias must have ", cols, " entries, got ",
                             gain->value.numel(), "/", bias->value.numel()));
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());     // normalized input, reused in backward
  Tensor inv_sigma({rows});
  for (int64_t rI = 0; rI < rows; ++rI) {
    const float* xi = xv.data() + rI * cols;
    double mean = 0.0;
    for (int64_t j = 0; j < cols; ++j) mean += xi[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_sigma[rI] = is;
    float* h = xhat.data() + rI * cols;
    float* y = out.data() + rI * cols;
    for (int64_t j = 0; j < cols; ++j) {
      h[j] = (xi[j] - static_cast<float>(mean)) * is;
      y[j] = h[j] * gain->value[j] + bias->value[j];
    }
  }
  auto xhat_ptr = std::make_shared<Tensor>(std::move(xhat));
  auto is_ptr = std::make_shared<Tensor>(std::move(inv_sigma));
  return detail::make_op(
      "layernorm", std::move(out), {x, gain, bias},
      [rows, cols, xhat_ptr, is_ptr](Variable& v) {
        Variable& xin = *v.inputs[0];
        Variable& g = *v.inputs[1];
        Variable& b = *v.inputs[2];
        const Tensor& h = *xhat_ptr;
        if (g.requires_grad) {
          g.ensure_grad();
          for (int64_t rI = 0; rI < rows; ++rI) {
            const float* dy = v.grad.data() + rI * cols;
            const float* hr = h.data() + rI * cols;
            for (int64_t j = 0; j < cols; ++j) g.grad[j] += dy[j] * hr[j];
          }
        }
        if (b.requires_grad) {
          b.ensure_grad();
          for (int64_t rI = 0; rI < rows; ++rI) {
            const float* dy = v.grad.data() + rI * cols;
            for (int64_t j = 0; j < cols; ++j) b.grad[j] += dy[j];
          }
        }
        if (xin.requires_grad) {
          xin.ensure_grad();
          for (int64_t rI = 0; rI < rows; ++rI) {
            const float* dy = v.grad.data() + rI * cols;
            const float* hr = h.data() + rI * cols;
            float* dx = xin.grad.data() + rI * cols;
            double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
            for (int64_t j = 0; j < cols; ++j) {
              double gd = static_cast<double>(g.value[j]) * dy[j];
              m1 += gd;
              m2 += gd * hr[j];
            }
            m1 /= static_cast<double>(cols);
            m2 /= static_cast<double>(cols);
            const float is = (*is_ptr)[rI];
            for (int64_t j = 0; j < cols; ++j) {
              double gd = static_cast<double>(g.value[j]) * dy[j];
              dx[j] += static_cast<float>((gd - m1 - hr[j] * m2) * is);
            }
          }
        }
      });
}

inline Var gelu(const Var& a) {
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    float x = a->value[i];
    out[i] = 0.5f * x * (1.0f + std::erf(x * kInvSqrt2));
  }
  return detail::make_op("gelu", std::move(out), {a}, [](Variable& v) {
    Variable& xin = *v.inputs[0];
    xin.ensure_grad();
    const int64_t n = v.grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      float x = xin.value[i];
      float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
      float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
      xin.grad[i] += v.grad[i] * (cdf + x * pdf);
    }
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    float x = a->value[i];
    out[i] = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                       : std::exp(x) / (1.0f + std::exp(x));
  }
  return detail::make_op("sigmoid", std::move(out), {a}, [](Variable& v) {
    Variable& xin = *v.inputs[0];
    xin.ensure_grad();
    const int64_t n = v.grad.numel();
    for (int64_t i = 0; i < n; ++i) {
      float y = v.value[i];
      xin.grad[i] += v.grad[i] * y * (1.0f - y);
    }
  });
}

// Inverted dropout; identity when not training or p == 0.
inline Var dropout(const Var& a, float p, Rng& rng, bool training) {
  if (!training || p <= 0.0f) return a;
  if (p >= 1.0f) throw ConfigError("dropout: p must be < 1");
  const float keep_scale = 1.0f / (1.0f - p);
  Tensor mask(a->value.shape());
  const int64_t n = mask.numel();
  for (int64_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() < p ? 0.0f : keep_scale;
  }
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * mask[i];
  auto mask_ptr = std::make_shared<Tensor>(std::move(mask));
  return detail::make_op("dropout", std::move(out), {a}, [mask_ptr](Variable& v) {
    Variable& xin = *v.inputs[0];
    xin.ensure_grad();
    const int64_t n = v.grad.numel();
    for (int64_t i = 0; i < n; ++i) xin.grad[i] += v.grad[i] * (*mask_ptr)[i];
  });
}

// ---------------------------------------------------------------------------
// Embedding lookup

inline Var embedding_lookup(const Var& table, const std::vector<int64_t>& indices) {
  const Tensor& tv = table->value;
  if (tv.rank() != 2) {
    throw ShapeError(str_cat("embedding_lookup: table must be rank-2, got ",
                             shape_str(tv.shape())));
  }
  const int64_t vocab = tv.dim(0), width = tv.dim(1);
  const int64_t n = static_cast<int64_t>(indices.size());
  Tensor out({n, width});
  for (int64_t r = 0; r < n; ++r) {
    const int64_t idx = indices[static_cast<size_t>(r)];
    if (idx < 0 || idx >= vocab) {
      throw DataError(str_cat("embedding_lookup: index ", idx, " out of range [0, ", vocab, ")"));
    }
    std::memcpy(out.data() + r * width, tv.data() + idx * width,
                static_cast<size_t>(width) * sizeof(float));
  }
  auto idx_ptr = std::make_shared<std::vector<int64_t>>(indices);
  return detail::make_op("embedding_lookup", std::move(out), {table},
                         [idx_ptr, width](Variable& v) {
                           Variable& t = *v.inputs[0];
                           t.ensure_grad();
                           const auto& idx = *idx_ptr;
                           for (size_t r = 0; r < idx.size(); ++r) {
                             const float* g = v.grad.data() + static_cast<int64_t>(r) * width;
                             float* tg = t.grad.data() + idx[r] * width;
                             for (int64_t j = 0; j < width; ++j) tg[j] += g[j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

inline Var sum(const Var& a) {
  Tensor out = Tensor::scalar(static_cast<float>(a->value.sum64()));
  return detail::make_op("sum", std::move(out), {a}, [](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
    const float g = v.grad[0];
    const int64_t n = x.grad.numel();
    for (int64_t i = 0; i < n; ++i) x.grad[i] += g;
  });
}

inline Var mean(const Var& a) {
  const int64_t n = a->value.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  Tensor out = Tensor::scalar(static_cast<float>(a->value.sum64() / static_cast<double>(n)));
  return detail::make_op("mean", std::move(out), {a}, [n](Variable& v) {
    Variable& x = *v.inputs[0];
    x.ensure_grad();
    const float g = v.grad[0] / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) x.grad[i] += g;
  });
}

// Weighted mean of elementwise binary cross-entropy on logits, accumulated in
// 64-bit. The double-valued form exists for finite-difference oracles, where
// the float32 cast of the scalar would dominate the difference quotient.
inline double bce_with_logits_value(const Tensor& scores, const Tensor& labels,
                                    const Tensor& weights) {
  require_same_shape(scores, labels, "bce_with_logits(labels)");
  require_same_shape(scores, weights, "bce_with_logits(weights)");
  const int64_t n = scores.numel();
  double wsum = 0.0;
  for (int64_t i = 0; i < n; ++i) wsum += weights[i];
  if (wsum <= 0.0) throw NumericError("bce_with_logits: total weight is 0");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double s = scores[i];
    const double y = labels[i];
    acc += weights[i] * (std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s))));
  }
  return acc / wsum;
}

inline Var bce_with_logits(const Var& scores, const Tensor& labels, const Tensor& weights) {
  const int64_t n = scores->value.numel();
  double wsum = 0.0;
  for (int64_t i = 0; i < n; ++i) wsum += weights[i];
  Tensor out = Tensor::scalar(static_cast<float>(bce_with_logits_value(scores->value, labels, weights)));
  auto lab = std::make_shared<Tensor>(labels);
  auto wts = std::make_shared<Tensor>(weights);
  return detail::make_op("bce_with_logits", std::move(out), {scores},
                         [lab, wts, wsum, n](Variable& v) {
                           Variable& s = *v.inputs[0];
                           s.ensure_grad();
                           const float g = v.grad[0];
                           for (int64_t i = 0; i < n; ++i) {
                             const float x = s.value[i];
                             const float p = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                                                       : std::exp(x) / (1.0f + std::exp(x));
                             s.grad[i] += g * static_cast<float>(
                                                  (*wts)[i] * (p - (*lab)[i]) / wsum);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Reverse pass

inline void backward(const Var& loss) {
  if (!loss->value.is_scalar()) {
    throw ShapeError(str_cat("backward: loss must be scalar, got ",
                             shape_str(loss->value.shape())));
  }
  if (!loss->requires_grad) return;  // constant loss: nothing reachable
  // Iterative post-order topological sort.
  std::vector<Variable*> order;
  std::unordered_set<Variable*> visited;
  std::vector<std::pair<Variable*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->inputs.size()) {
      Variable* child = node->inputs[next_child++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Variable* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

}  // namespace semrec
