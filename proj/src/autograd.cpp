// SPDX-License-Identifier: Apache-2.0
#include "cassi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace cassi::ag {

namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu_fn(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad_fn(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

Var constant(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->name = std::move(name);
  return n;
}

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->needs_grad = true;
  n->name = std::move(name);
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root->needs_grad) return;

  // Reverse post-order over the parent DAG is a valid backprop order: every
  // node is processed after all of its consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t idx;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.idx < f.n->parents.size()) {
      Node* p = f.n->parents[f.idx++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_alloc) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node* p = n.parents[static_cast<std::size_t>(k)].get();
      if (!p->needs_grad) continue;
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->needs_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb->needs_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->needs_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    }
    if (pb->needs_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    }
  });
}

Var affine(const Var& x, double scale, double offset) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + offset;
  return make_node(std::move(out), {x}, [scale](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
  });
}

Var mul_scalar(const Var& x, const Var& s) {
  if (s->value.size() != 1)
    throw std::invalid_argument("mul_scalar: scale must be scalar");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  return make_node(std::move(out), {x, s}, [sv](Node& n) {
    Node* px = n.parents[0].get();
    Node* ps = n.parents[1].get();
    if (px->needs_grad) {
      Tensor& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sv * n.grad[i];
    }
    if (ps->needs_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        acc += n.grad[i] * px->value[i];
      ps->ensure_grad()[0] += acc;
    }
  });
}

Var div_scalar(const Var& x, const Var& s) {
  if (s->value.size() != 1)
    throw std::invalid_argument("div_scalar: scale must be scalar");
  const double sv = s->value[0];
  if (sv == 0.0) throw std::invalid_argument("div_scalar: zero scale");
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sv;
  return make_node(std::move(out), {x, s}, [sv](Node& n) {
    Node* px = n.parents[0].get();
    Node* ps = n.parents[1].get();
    if (px->needs_grad) {
      Tensor& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / sv;
    }
    if (ps->needs_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        acc += n.grad[i] * n.value[i];
      ps->ensure_grad()[0] -= acc / sv;
    }
  });
}

Var sum(const Var& x) {
  Tensor out({1});
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  out[0] = s;
  return make_node(std::move(out), {x}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    const double gv = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x->value.size());
  Tensor out({1});
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  out[0] = s * inv;
  return make_node(std::move(out), {x}, [inv](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    const double gv = n.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_fn(out[i]);
  return make_node(std::move(out), {x}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double y = n.value[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_fn(out[i]);
  return make_node(std::move(out), {x}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * gelu_grad_fn(p->value[i]);
  });
}

Var clamp01(const Var& x) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(1.0, std::max(0.0, out[i]));
  return make_node(std::move(out), {x}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = p->value[i];
      if (v >= 0.0 && v <= 1.0) g[i] += n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out(shape);
  if (out.size() != x->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i];
  return make_node(std::move(out), {x}, [](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var concat_ch(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_ch: empty input");
  const int H = xs[0]->value.dim(1), W = xs[0]->value.dim(2);
  int C = 0;
  for (const auto& x : xs) {
    if (x->value.ndim() != 3 || x->value.dim(1) != H || x->value.dim(2) != W)
      throw std::invalid_argument("concat_ch: spatial mismatch");
    C += x->value.dim(0);
  }
  Tensor out({C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.size(),
              out.data() + off);
    off += x->value.size();
  }
  (void)plane;
  return make_node(std::move(out), xs, [](Node& n) {
    std::size_t off = 0;
    for (auto& pv : n.parents) {
      Node* p = pv.get();
      std::size_t sz = p->value.size();
      if (p->needs_grad) {
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
      }
      off += sz;
    }
  });
}

Var slice_ch(const Var& x, int c0, int c1) {
  if (x->value.ndim() != 3) throw std::invalid_argument("slice_ch: need 3D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw std::invalid_argument("slice_ch: bad range");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({c1 - c0, H, W});
  std::copy(x->value.data() + c0 * plane, x->value.data() + c1 * plane,
            out.data());
  return make_node(std::move(out), {x}, [c0, plane](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    const std::size_t off = static_cast<std::size_t>(c0) * plane;
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[off + i] += n.grad[i];
  });
}

Var chw_to_mat(const Var& x) {
  if (x->value.ndim() != 3) throw std::invalid_argument("chw_to_mat: need 3D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({static_cast<int>(P), C});
  const double* src = x->value.data();
  double* dst = out.data();
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) dst[p * C + c] = src[c * P + p];
  return make_node(std::move(out), {x}, [C, P](Node& n) {
    Node* pn = n.parents[0].get();
    if (!pn->needs_grad) return;
    Tensor& g = pn->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) g[c * P + p] += n.grad[p * C + c];
  });
}

Var mat_to_chw(const Var& m, int c, int h, int w) {
  const std::size_t P = static_cast<std::size_t>(h) * w;
  if (m->value.ndim() != 2 || m->value.dim(0) != static_cast<int>(P) ||
      m->value.dim(1) != c)
    throw std::invalid_argument("mat_to_chw: shape mismatch");
  Tensor out({c, h, w});
  const double* src = m->value.data();
  double* dst = out.data();
  for (int ci = 0; ci < c; ++ci)
    for (std::size_t p = 0; p < P; ++p) dst[ci * P + p] = src[p * c + ci];
  return make_node(std::move(out), {m}, [c, P](Node& n) {
    Node* pn = n.parents[0].get();
    if (!pn->needs_grad) return;
    Tensor& g = pn->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < P; ++p) g[p * c + ci] += n.grad[ci * P + p];
  });
}

namespace {
inline int reflect_index(int i, int n) {
  // torch-style reflect (no edge repeat); requires pad < n
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}
}  // namespace

Var reflect_pad(const Var& x, int top, int bottom, int left, int right) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (top >= H || bottom >= H || left >= W || right >= W)
    throw std::invalid_argument("reflect_pad: pad too large");
  const int Ho = H + top + bottom, Wo = W + left + right;
  Tensor out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y) {
      int sy = reflect_index(y - top, H);
      for (int xo = 0; xo < Wo; ++xo) {
        int sx = reflect_index(xo - left, W);
        out.at(c, y, xo) = x->value.at(c, sy, sx);
      }
    }
  return make_node(std::move(out), {x}, [top, left, H, W, C, Ho, Wo](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y) {
        int sy = reflect_index(y - top, H);
        for (int xo = 0; xo < Wo; ++xo) {
          int sx = reflect_index(xo - left, W);
          g.at(c, sy, sx) += n.grad.at(c, y, xo);
        }
      }
  });
}

Var crop(const Var& x, int top, int bottom, int left, int right) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Ho = H - top - bottom, Wo = W - left - right;
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("crop: too much");
  Tensor out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo)
        out.at(c, y, xo) = x->value.at(c, y + top, xo + left);
  return make_node(std::move(out), {x}, [top, left, C, Ho, Wo](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo)
          g.at(c, y + top, xo + left) += n.grad.at(c, y, xo);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.dim(1) != b->value.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  const int M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
  Tensor out({M, N});
  const double* pa = a->value.data();
  const double* pb = b->value.data();
  double* po = out.data();
  for (int i = 0; i < M; ++i)
    for (int l = 0; l < K; ++l) {
      const double av = pa[i * K + l];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(l) * N;
      double* orow = po + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  return make_node(std::move(out), {a, b}, [M, K, N](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    const double* go = n.grad.data();
    if (pa->needs_grad) {
      // dA = dC * B^T
      Tensor& ga = pa->ensure_grad();
      const double* bv = pb->value.data();
      for (int i = 0; i < M; ++i)
        for (int l = 0; l < K; ++l) {
          const double* grow = go + static_cast<std::size_t>(i) * N;
          const double* brow = bv + static_cast<std::size_t>(l) * N;
          double acc = 0.0;
          for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * K + l] += acc;
        }
    }
    if (pb->needs_grad) {
      // dB = A^T * dC
      Tensor& gb = pb->ensure_grad();
      const double* av = pa->value.data();
      for (int l = 0; l < K; ++l)
        for (int i = 0; i < M; ++i) {
          const double aval = av[static_cast<std::size_t>(i) * K + l];
          if (aval == 0.0) continue;
          const double* grow = go + static_cast<std::size_t>(i) * N;
          double* brow = gb.data() + static_cast<std::size_t>(l) * N;
          for (int j = 0; j < N; ++j) brow[j] += aval * grow[j];
        }
    }
  });
}

Var softmax_rows(const Var& x) {
  if (x->value.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2D");
  const int R = x->value.dim(0), C = x->value.dim(1);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    const double* row = x->value.data() + static_cast<std::size_t>(r) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    double* orow = out.data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    for (int c = 0; c < C; ++c) orow[c] /= denom;
  }
  return make_node(std::move(out), {x}, [R, C](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int r = 0; r < R; ++r) {
      const double* y = n.value.data() + static_cast<std::size_t>(r) * C;
      const double* dy = n.grad.data() + static_cast<std::size_t>(r) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += dy[c] * y[c];
      double* gr = g.data() + static_cast<std::size_t>(r) * C;
      for (int c = 0; c < C; ++c) gr[c] += y[c] * (dy[c] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and friends
// ---------------------------------------------------------------------------

namespace {

void conv2d_fwd_kernel(const double* x, int Cin, int H, int W, const double* w,
                       const double* b, int Cout, int k, int g, double* out) {
  const int cig = Cin / g, cog = Cout / g, p = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int co = 0; co < Cout; ++co) {
    double* oc = out + co * HW;
    const double bv = b ? b[co] : 0.0;
    for (std::size_t i = 0; i < HW; ++i) oc[i] = bv;
  }
  if (k == 1 && g == 1) {
    for (int co = 0; co < Cout; ++co) {
      double* oc = out + co * HW;
      for (int ci = 0; ci < Cin; ++ci) {
        const double wv = w[static_cast<std::size_t>(co) * Cin + ci];
        if (wv == 0.0) continue;
        const double* xc = x + ci * HW;
        for (std::size_t i = 0; i < HW; ++i) oc[i] += wv * xc[i];
      }
    }
    return;
  }
  for (int co = 0; co < Cout; ++co) {
    const int grp = co / cog;
    double* oc = out + co * HW;
    for (int cidx = 0; cidx < cig; ++cidx) {
      const int ci = grp * cig + cidx;
      const double* xc = x + ci * HW;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv =
              w[((static_cast<std::size_t>(co) * cig + cidx) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const int dy = ky - p, dx = kx - p;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int y = y0; y < y1; ++y) {
            const double* src = xc + static_cast<std::size_t>(y + dy) * W + (x0 + dx);
            double* dst = oc + static_cast<std::size_t>(y) * W + x0;
            const int len = x1 - x0;
            for (int i = 0; i < len; ++i) dst[i] += wv * src[i];
          }
        }
    }
  }
}

void conv2d_bwd_kernel(const double* x, double* dx, int Cin, int H, int W,
                       const double* w, double* dw, double* db, int Cout,
                       int k, int g, const double* dout) {
  const int cig = Cin / g, cog = Cout / g, p = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  if (db) {
    for (int co = 0; co < Cout; ++co) {
      const double* go = dout + co * HW;
      double acc = 0.0;
      for (std::size_t i = 0; i < HW; ++i) acc += go[i];
      db[co] += acc;
    }
  }
  if (k == 1 && g == 1) {
    for (int co = 0; co < Cout; ++co) {
      const double* go = dout + co * HW;
      for (int ci = 0; ci < Cin; ++ci) {
        const double* xc = x + ci * HW;
        if (dw) {
          double acc = 0.0;
          for (std::size_t i = 0; i < HW; ++i) acc += xc[i] * go[i];
          dw[static_cast<std::size_t>(co) * Cin + ci] += acc;
        }
        if (dx) {
          const double wv = w[static_cast<std::size_t>(co) * Cin + ci];
          if (wv != 0.0) {
            double* dxc = dx + ci * HW;
            for (std::size_t i = 0; i < HW; ++i) dxc[i] += wv * go[i];
          }
        }
      }
    }
    return;
  }
  for (int co = 0; co < Cout; ++co) {
    const int grp = co / cog;
    const double* go = dout + co * HW;
    for (int cidx = 0; cidx < cig; ++cidx) {
      const int ci = grp * cig + cidx;
      const double* xc = x + ci * HW;
      double* dxc = dx ? dx + ci * HW : nullptr;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t widx =
              ((static_cast<std::size_t>(co) * cig + cidx) * k + ky) * k + kx;
          const double wv = w[widx];
          const int dy = ky - p, dxo = kx - p;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dxo), x1 = std::min(W, W - dxo);
          double wacc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* gr = go + static_cast<std::size_t>(y) * W + x0;
            const double* xr = xc + static_cast<std::size_t>(y + dy) * W + (x0 + dxo);
            double* dxr =
                dxc ? dxc + static_cast<std::size_t>(y + dy) * W + (x0 + dxo)
                    : nullptr;
            const int len = x1 - x0;
            if (dxr && wv != 0.0) {
              for (int i = 0; i < len; ++i) {
                wacc += xr[i] * gr[i];
                dxr[i] += wv * gr[i];
              }
            } else {
              for (int i = 0; i < len; ++i) wacc += xr[i] * gr[i];
            }
          }
          if (dw) dw[widx] += wacc;
        }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int groups) {
  if (x->value.ndim() != 3 || w->value.ndim() != 4)
    throw std::invalid_argument("conv2d: bad ranks");
  const int Cin = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Cout = w->value.dim(0), k = w->value.dim(2);
  if (w->value.dim(1) != Cin / groups || w->value.dim(3) != k ||
      Cin % groups != 0 || Cout % groups != 0)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  if (b && b->value.size() != static_cast<std::size_t>(Cout))
    throw std::invalid_argument("conv2d: bias shape mismatch");
  Tensor out({Cout, H, W});
  conv2d_fwd_kernel(x->value.data(), Cin, H, W, w->value.data(),
                    b ? b->value.data() : nullptr, Cout, k, groups, out.data());
  std::vector<Var> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node(std::move(out), std::move(parents),
                   [Cin, H, W, Cout, k, groups](Node& n) {
                     Node* px = n.parents[0].get();
                     Node* pw = n.parents[1].get();
                     Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
                     double* dx = px->needs_grad ? px->ensure_grad().data() : nullptr;
                     double* dw = pw->needs_grad ? pw->ensure_grad().data() : nullptr;
                     double* db = pb && pb->needs_grad ? pb->ensure_grad().data() : nullptr;
                     conv2d_bwd_kernel(px->value.data(), dx, Cin, H, W,
                                       pw->value.data(), dw, db, Cout, k, groups,
                                       n.grad.data());
                   });
}

Var avgpool3(const Var& x) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xo = 0; xo < W; ++xo) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = xo + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            acc += x->value.at(c, yy, xx);
            ++cnt;
          }
        out.at(c, y, xo) = acc / cnt;
      }
  return make_node(std::move(out), {x}, [C, H, W](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xo = 0; xo < W; ++xo) {
          int cnt = (std::min(y + 1, H - 1) - std::max(y - 1, 0) + 1) *
                    (std::min(xo + 1, W - 1) - std::max(xo - 1, 0) + 1);
          const double gv = n.grad.at(c, y, xo) / cnt;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = y + dy, xx = xo + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              g.at(c, yy, xx) += gv;
            }
        }
  });
}

namespace {
struct LerpTable {
  std::vector<int> i0, i1;
  std::vector<double> t;
};
LerpTable make_lerp(int in, int out) {
  LerpTable tb;
  tb.i0.resize(static_cast<std::size_t>(out));
  tb.i1.resize(static_cast<std::size_t>(out));
  tb.t.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    int hi = std::min(lo + 1, in - 1);
    tb.i0[static_cast<std::size_t>(i)] = lo;
    tb.i1[static_cast<std::size_t>(i)] = hi;
    tb.t[static_cast<std::size_t>(i)] = src - lo;
  }
  return tb;
}
}  // namespace

Var bilinear(const Var& x, int out_h, int out_w) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  auto ty = make_lerp(H, out_h);
  auto tx = make_lerp(W, out_w);
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      const int y0 = ty.i0[y], y1 = ty.i1[y];
      const double wy = ty.t[y];
      for (int xo = 0; xo < out_w; ++xo) {
        const int x0 = tx.i0[xo], x1 = tx.i1[xo];
        const double wx = tx.t[xo];
        out.at(c, y, xo) = (1 - wy) * ((1 - wx) * x->value.at(c, y0, x0) +
                                       wx * x->value.at(c, y0, x1)) +
                           wy * ((1 - wx) * x->value.at(c, y1, x0) +
                                 wx * x->value.at(c, y1, x1));
      }
    }
  return make_node(std::move(out), {x}, [C, out_h, out_w, ty, tx](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < out_h; ++y) {
        const int y0 = ty.i0[y], y1 = ty.i1[y];
        const double wy = ty.t[y];
        for (int xo = 0; xo < out_w; ++xo) {
          const int x0 = tx.i0[xo], x1 = tx.i1[xo];
          const double wx = tx.t[xo];
          const double gv = n.grad.at(c, y, xo);
          g.at(c, y0, x0) += gv * (1 - wy) * (1 - wx);
          g.at(c, y0, x1) += gv * (1 - wy) * wx;
          g.at(c, y1, x0) += gv * wy * (1 - wx);
          g.at(c, y1, x1) += gv * wy * wx;
        }
      }
  });
}

Var layer_norm_ch(const Var& x, const Var& gamma, double eps) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (gamma->value.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("layer_norm_ch: gamma shape mismatch");
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({C, H, W});
  Tensor mu({H, W}), inv_sd({H, W});
  for (std::size_t p = 0; p < P; ++p) {
    double m = 0.0;
    for (int c = 0; c < C; ++c) m += x->value[c * P + p];
    m /= C;
    double v = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = x->value[c * P + p] - m;
      v += d * d;
    }
    v /= C;
    const double is = 1.0 / std::sqrt(v + eps);
    mu[p] = m;
    inv_sd[p] = is;
    for (int c = 0; c < C; ++c)
      out[c * P + p] = gamma->value[c] * (x->value[c * P + p] - m) * is;
  }
  return make_node(
      std::move(out), {x, gamma},
      [C, P, mu = std::move(mu), inv_sd = std::move(inv_sd)](Node& n) {
        Node* px = n.parents[0].get();
        Node* pg = n.parents[1].get();
        const double* xv = px->value.data();
        const double* gv = pg->value.data();
        if (pg->needs_grad) {
          Tensor& gg = pg->ensure_grad();
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p)
              acc += n.grad[c * P + p] * (xv[c * P + p] - mu[p]) * inv_sd[p];
            gg[c] += acc;
          }
        }
        if (px->needs_grad) {
          Tensor& gx = px->ensure_grad();
          for (std::size_t p = 0; p < P; ++p) {
            const double is = inv_sd[p];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int c = 0; c < C; ++c) {
              const double xhat = (xv[c * P + p] - mu[p]) * is;
              const double dxhat = n.grad[c * P + p] * gv[c];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            for (int c = 0; c < C; ++c) {
              const double xhat = (xv[c * P + p] - mu[p]) * is;
              const double dxhat = n.grad[c * P + p] * gv[c];
              gx[c * P + p] +=
                  is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / C);
            }
          }
        }
      });
}

Var global_avg_pool(const Var& x) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const std::size_t P = static_cast<std::size_t>(H) * W;
  const double inv = 1.0 / static_cast<double>(P);
  Tensor out({C, 1, 1});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < P; ++p) acc += x->value[c * P + p];
    out[static_cast<std::size_t>(c)] = acc * inv;
  }
  return make_node(std::move(out), {x}, [C, P, inv](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c) {
      const double gv = n.grad[static_cast<std::size_t>(c)] * inv;
      for (std::size_t i = 0; i < P; ++i) g[c * P + i] += gv;
    }
  });
}

Var mul_channels(const Var& x, const Var& s) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (s->value.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("mul_channels: scale shape mismatch");
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c) {
    const double sv = s->value[static_cast<std::size_t>(c)];
    for (std::size_t p = 0; p < P; ++p) out[c * P + p] = x->value[c * P + p] * sv;
  }
  return make_node(std::move(out), {x, s}, [C, P](Node& n) {
    Node* px = n.parents[0].get();
    Node* ps = n.parents[1].get();
    if (px->needs_grad) {
      Tensor& g = px->ensure_grad();
      for (int c = 0; c < C; ++c) {
        const double sv = ps->value[static_cast<std::size_t>(c)];
        for (std::size_t p = 0; p < P; ++p) g[c * P + p] += n.grad[c * P + p] * sv;
      }
    }
    if (ps->needs_grad) {
      Tensor& g = ps->ensure_grad();
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p)
          acc += n.grad[c * P + p] * px->value[c * P + p];
        g[static_cast<std::size_t>(c)] += acc;
      }
    }
  });
}

Var mul_spatial(const Var& x, const Var& m) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (m->value.ndim() != 3 || m->value.dim(0) != 1 || m->value.dim(1) != H ||
      m->value.dim(2) != W)
    throw std::invalid_argument("mul_spatial: map shape mismatch");
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p)
      out[c * P + p] = x->value[c * P + p] * m->value[p];
  return make_node(std::move(out), {x, m}, [C, P](Node& n) {
    Node* px = n.parents[0].get();
    Node* pm = n.parents[1].get();
    if (px->needs_grad) {
      Tensor& g = px->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p)
          g[c * P + p] += n.grad[c * P + p] * pm->value[p];
    }
    if (pm->needs_grad) {
      Tensor& g = pm->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p)
          g[p] += n.grad[c * P + p] * px->value[c * P + p];
    }
  });
}

// ---------------------------------------------------------------------------
// CASSI geometry
// ---------------------------------------------------------------------------

Var shift_bands(const Var& x, int step) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Wm = W + step * (C - 1);
  Tensor out({C, H, Wm});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int w = 0; w < W; ++w)
        out.at(c, y, w + step * c) = x->value.at(c, y, w);
  return make_node(std::move(out), {x}, [C, H, W, step](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int w = 0; w < W; ++w)
          g.at(c, y, w) += n.grad.at(c, y, w + step * c);
  });
}

Var unshift_bands(const Var& z, int step) {
  const int C = z->value.dim(0), H = z->value.dim(1), Wm = z->value.dim(2);
  const int W = Wm - step * (C - 1);
  if (W < 1) throw std::invalid_argument("unshift_bands: width/step mismatch");
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int w = 0; w < W; ++w)
        out.at(c, y, w) = z->value.at(c, y, w + step * c);
  return make_node(std::move(out), {z}, [C, H, W, step](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int w = 0; w < W; ++w)
          g.at(c, y, w + step * c) += n.grad.at(c, y, w);
  });
}

Var sum_channels(const Var& x) {
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({1, H, W});
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) out[p] += x->value[c * P + p];
  return make_node(std::move(out), {x}, [C, P](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < P; ++i) g[c * P + i] += n.grad[i];
  });
}

Var repeat_channels(const Var& y, int channels) {
  if (y->value.ndim() != 3 || y->value.dim(0) != 1)
    throw std::invalid_argument("repeat_channels: need {1,H,W}");
  const int H = y->value.dim(1), W = y->value.dim(2);
  const std::size_t P = static_cast<std::size_t>(H) * W;
  Tensor out({channels, H, W});
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < P; ++p) out[c * P + p] = y->value[p];
  return make_node(std::move(out), {y}, [channels, P](Node& n) {
    Node* p = n.parents[0].get();
    if (!p->needs_grad) return;
    Tensor& g = p->ensure_grad();
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < P; ++i) g[i] += n.grad[c * P + i];
  });
}

Var charbonnier(const Var& pred, const Var& target, double eps) {
  check_same_shape(pred, target, "charbonnier");
  const std::size_t N = pred->value.size();
  const double inv = 1.0 / static_cast<double>(N);
  Tensor out({1});
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double d = pred->value[i] - target->value[i];
    acc += std::sqrt(d * d + eps * eps);
  }
  out[0] = acc * inv;
  return make_node(std::move(out), {pred, target}, [eps, inv, N](Node& n) {
    Node* pp = n.parents[0].get();
    Node* pt = n.parents[1].get();
    const double g0 = n.grad[0] * inv;
    for (int side = 0; side < 2; ++side) {
      Node* p = side == 0 ? pp : pt;
      if (!p->needs_grad) continue;
      Tensor& g = p->ensure_grad();
      const double sgn = side == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < N; ++i) {
        double d = pp->value[i] - pt->value[i];
        double denom = std::sqrt(d * d + eps * eps);
        if (denom > 0.0) g[i] += sgn * g0 * d / denom;
      }
    }
  });
}

}  // namespace cassi::ag
