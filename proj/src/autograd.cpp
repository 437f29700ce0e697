#include "autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace udair::ag {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

thread_local bool g_grad_enabled = true;

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool req = false;
  if (g_grad_enabled)
    for (const auto& p : parents) req = req || p->requires_grad;
  n->requires_grad = req;
  if (req) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

std::vector<int> bcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  int r = int(std::max(a.size(), b.size()));
  std::vector<int> out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    int da = i < r - int(a.size()) ? 1 : a[size_t(i - (r - int(a.size())))];
    int db = i < r - int(b.size()) ? 1 : b[size_t(i - (r - int(b.size())))];
    if (da != db && da != 1 && db != 1)
      throw ConfigError("shapes not broadcastable");
    out[size_t(i)] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `shape` padded to rank r, zeroed on broadcast dims.
std::vector<int64_t> bcast_strides(const std::vector<int>& shape, const std::vector<int>& out) {
  int r = int(out.size());
  int off = r - int(shape.size());
  std::vector<int64_t> strides(size_t(r), 0);
  int64_t s = 1;
  for (int i = int(shape.size()) - 1; i >= 0; --i) {
    strides[size_t(i + off)] = (shape[size_t(i)] == 1) ? 0 : s;
    s *= shape[size_t(i)];
  }
  for (int i = 0; i < r; ++i)
    if (i < off) strides[size_t(i)] = 0;
  return strides;
}

template <class F>
void for_each_bcast(const std::vector<int>& out, const std::vector<int>& ashape,
                    const std::vector<int>& bshape, F&& f) {
  int r = int(out.size());
  int64_t total = 1;
  for (int d : out) total *= d;
  auto sa = bcast_strides(ashape, out);
  auto sb = bcast_strides(bshape, out);
  std::vector<int> idx(size_t(r), 0);
  int64_t ai = 0, bi = 0;
  for (int64_t oi = 0; oi < total; ++oi) {
    f(oi, ai, bi);
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[size_t(d)] < out[size_t(d)]) {
        ai += sa[size_t(d)];
        bi += sb[size_t(d)];
        break;
      }
      idx[size_t(d)] = 0;
      ai -= sa[size_t(d)] * (out[size_t(d)] - 1);
      bi -= sb[size_t(d)] * (out[size_t(d)] - 1);
    }
  }
}

// Accumulate an out-shaped contribution into a (possibly broadcast) operand grad.
void reduce_into(const Tensor& contrib, Tensor& target) {
  if (target.same_shape(contrib)) {
    const double* s = contrib.data();
    double* d = target.data();
    for (int64_t i = 0; i < contrib.numel(); ++i) d[i] += s[i];
    return;
  }
  for_each_bcast(contrib.shape(), target.shape(), target.shape(),
                 [&](int64_t oi, int64_t ti, int64_t) { target[ti] += contrib[oi]; });
}

enum class BinOp { Add, Sub, Mul, Div };

Var binary(const Var& a, const Var& b, BinOp op) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  Tensor out;
  if (av.same_shape(bv)) {
    out = Tensor(av.shape());
    const double* pa = av.data();
    const double* pb = bv.data();
    double* po = out.data();
    int64_t n = av.numel();
    switch (op) {
      case BinOp::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinOp::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinOp::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
      case BinOp::Div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
    }
  } else {
    out = Tensor(bcast_shape(av.shape(), bv.shape()));
    double* po = out.data();
    const double* pa = av.data();
    const double* pb = bv.data();
    for_each_bcast(out.shape(), av.shape(), bv.shape(), [&](int64_t oi, int64_t ai, int64_t bi) {
      switch (op) {
        case BinOp::Add: po[oi] = pa[ai] + pb[bi]; break;
        case BinOp::Sub: po[oi] = pa[ai] - pb[bi]; break;
        case BinOp::Mul: po[oi] = pa[ai] * pb[bi]; break;
        case BinOp::Div: po[oi] = pa[ai] / pb[bi]; break;
      }
    });
  }
  return make_op(std::move(out), {a, b}, [op](Node& n) {
    Var a = n.parents[0];
    Var b = n.parents[1];
    const Tensor& g = n.grad;
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    auto want = [&](const Var& v) { return v->requires_grad; };
    if (op == BinOp::Add || op == BinOp::Sub) {
      double sb = op == BinOp::Sub ? -1.0 : 1.0;
      if (want(a)) {
        a->ensure_grad();
        reduce_into(g, a->grad);
      }
      if (want(b)) {
        b->ensure_grad();
        if (sb > 0) {
          reduce_into(g, b->grad);
        } else {
          Tensor ng(g.shape());
          for (int64_t i = 0; i < g.numel(); ++i) ng[i] = -g[i];
          reduce_into(ng, b->grad);
        }
      }
      return;
    }
    if (want(a)) {
      a->ensure_grad();
      Tensor contrib(g.shape());
      for_each_bcast(g.shape(), av.shape(), bv.shape(), [&](int64_t oi, int64_t, int64_t bi) {
        contrib[oi] = op == BinOp::Mul ? g[oi] * bv[bi] : g[oi] / bv[bi];
      });
      reduce_into(contrib, a->grad);
    }
    if (want(b)) {
      b->ensure_grad();
      Tensor contrib(g.shape());
      for_each_bcast(g.shape(), av.shape(), bv.shape(), [&](int64_t oi, int64_t ai, int64_t bi) {
        contrib[oi] = op == BinOp::Mul ? g[oi] * av[ai]
                                       : -g[oi] * av[ai] / (bv[bi] * bv[bi]);
      });
      reduce_into(contrib, b->grad);
    }
  });
}

template <class FwdF, class BwdF>
Var unary(const Var& a, FwdF fwd, BwdF dydx) {
  Tensor out(a->value.shape());
  const double* p = a->value.data();
  double* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = fwd(p[i]);
  return make_op(std::move(out), {a}, [dydx](Node& n) {
    Var a = n.parents[0];
    a->ensure_grad();
    const double* x = a->value.data();
    const double* y = n.value.data();
    const double* g = n.grad.data();
    double* ga = a->grad.data();
    for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += g[i] * dydx(x[i], y[i]);
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw NumericError("backward() requires a scalar root");
  // reverse topological order: consumers before producers
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.numel()) n->backprop(*n);
  }
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var sqrt_v(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var exp_v(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log_v(const Var& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var tanh_v(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid_v(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& a) {
  return unary(a,
               [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](double x, double) {
                 double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                 double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                 return cdf + x * pdf;
               });
}

Var abs_v(const Var& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a, std::vector<int> axes, bool keepdim) {
  const Tensor& av = a->value;
  int r = av.rank();
  std::vector<bool> reduce(size_t(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r) throw ConfigError("sum axis out of range");
    reduce[size_t(ax)] = true;
  }
  std::vector<int> out_shape;
  std::vector<int> kept_shape(static_cast<size_t>(r));  // out shape with reduced dims as 1
  for (int i = 0; i < r; ++i) {
    kept_shape[size_t(i)] = reduce[size_t(i)] ? 1 : av.dim(i);
    if (reduce[size_t(i)]) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(av.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  double* po = out.data();
  const double* pa = av.data();
  for_each_bcast(av.shape(), kept_shape, kept_shape,
                 [&](int64_t ii, int64_t oi, int64_t) { po[oi] += pa[ii]; });
  auto kept = kept_shape;
  return make_op(std::move(out), {a}, [kept](Node& n) {
    Var a = n.parents[0];
    a->ensure_grad();
    const double* g = n.grad.data();
    double* ga = a->grad.data();
    for_each_bcast(a->value.shape(), kept, kept,
                   [&](int64_t ii, int64_t oi, int64_t) { ga[ii] += g[oi]; });
  });
}

Var mean(const Var& a, std::vector<int> axes, bool keepdim) {
  int64_t count = 1;
  for (int ax : axes) count *= a->value.dim(ax);
  return scale(sum(a, std::move(axes), keepdim), 1.0 / double(count));
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    Var a = n.parents[0];
    a->ensure_grad();
    double g = n.grad[0];
    double* ga = a->grad.data();
    for (int64_t i = 0; i < a->value.numel(); ++i) ga[i] += g;
  });
}

Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / double(a->value.numel()));
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& n) {
    Var a = n.parents[0];
    a->ensure_grad();
    const double* g = n.grad.data();
    double* ga = a->grad.data();
    for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += g[i];
  });
}

Var transpose2d(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ConfigError("transpose2d expects rank-2");
  int n = av.dim(0), m = av.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at2(j, i) = av.at2(i, j);
  return make_op(std::move(out), {a}, [n, m](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) a->grad.at2(i, j) += node.grad.at2(j, i);
  });
}

Var transpose_last2(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 3) throw ConfigError("transpose_last2 expects rank-3");
  int b = av.dim(0), n = av.dim(1), m = av.dim(2);
  Tensor out({b, m, n});
  for (int k = 0; k < b; ++k) {
    const double* src = av.data() + int64_t(k) * n * m;
    double* dst = out.data() + int64_t(k) * n * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) dst[int64_t(j) * n + i] = src[int64_t(i) * m + j];
  }
  return make_op(std::move(out), {a}, [b, n, m](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int k = 0; k < b; ++k) {
      const double* g = node.grad.data() + int64_t(k) * n * m;
      double* ga = a->grad.data() + int64_t(k) * n * m;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga[int64_t(i) * m + j] += g[int64_t(j) * n + i];
    }
  });
}

Var nchw_to_rows(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 4) throw ConfigError("nchw_to_rows expects rank-4");
  int n = av.dim(0), c = av.dim(1), h = av.dim(2), w = av.dim(3);
  Tensor out({n * h * w, c});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
          out.at2((in * h + ih) * w + iw, ic) = av.at4(in, ic, ih, iw);
  return make_op(std::move(out), {a}, [n, c, h, w](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int ih = 0; ih < h; ++ih)
          for (int iw = 0; iw < w; ++iw)
            a->grad.at4(in, ic, ih, iw) += node.grad.at2((in * h + ih) * w + iw, ic);
  });
}

Var rows_to_nchw(const Var& a, int n, int h, int w) {
  const Tensor& av = a->value;
  if (av.rank() != 2 || av.dim(0) != n * h * w)
    throw ConfigError("rows_to_nchw shape mismatch");
  int c = av.dim(1);
  Tensor out({n, c, h, w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
          out.at4(in, ic, ih, iw) = av.at2((in * h + ih) * w + iw, ic);
  return make_op(std::move(out), {a}, [n, c, h, w](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int ih = 0; ih < h; ++ih)
          for (int iw = 0; iw < w; ++iw)
            a->grad.at2((in * h + ih) * w + iw, ic) += node.grad.at4(in, ic, ih, iw);
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ConfigError("concat of nothing");
  int n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape();
    if (x->value.rank() != 4 || s[0] != n || s[2] != h || s[3] != w)
      throw ConfigError("concat_channels shape mismatch");
    ctot += s[1];
  }
  Tensor out({n, ctot, h, w});
  int64_t plane = int64_t(h) * w;
  int coff = 0;
  for (const auto& x : xs) {
    int c = x->value.dim(1);
    for (int in = 0; in < n; ++in) {
      const double* src = x->value.data() + int64_t(in) * c * plane;
      double* dst = out.data() + (int64_t(in) * ctot + coff) * plane;
      std::copy(src, src + int64_t(c) * plane, dst);
    }
    coff += c;
  }
  std::vector<Var> parents = xs;
  return make_op(std::move(out), std::move(parents), [n, h, w, ctot](Node& node) {
    int64_t plane = int64_t(h) * w;
    int coff = 0;
    for (auto& p : node.parents) {
      int c = p->value.dim(1);
      if (p->requires_grad) {
        p->ensure_grad();
        for (int in = 0; in < n; ++in) {
          const double* g = node.grad.data() + (int64_t(in) * ctot + coff) * plane;
          double* gp = p->grad.data() + int64_t(in) * c * plane;
          for (int64_t i = 0; i < int64_t(c) * plane; ++i) gp[i] += g[i];
        }
      }
      coff += c;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ConfigError("matmul shape mismatch " + av.shape_str() + " x " + bv.shape_str());
  int n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  {
    ConstMatMap A(av.data(), n, k), B(bv.data(), k, m);
    MatMap O(out.data(), n, m);
    O.noalias() = A * B;
  }
  return make_op(std::move(out), {a, b}, [n, k, m](Node& node) {
    Var a = node.parents[0];
    Var b = node.parents[1];
    ConstMatMap G(node.grad.data(), n, m);
    if (a->requires_grad) {
      a->ensure_grad();
      ConstMatMap B(b->value.data(), k, m);
      MatMap GA(a->grad.data(), n, k);
      GA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      ConstMatMap A(a->value.data(), n, k);
      MatMap GB(b->grad.data(), k, m);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
    throw ConfigError("bmm shape mismatch");
  int bs = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
  Tensor out({bs, n, m});
  for (int i = 0; i < bs; ++i) {
    ConstMatMap A(av.data() + int64_t(i) * n * k, n, k);
    ConstMatMap B(bv.data() + int64_t(i) * k * m, k, m);
    MatMap O(out.data() + int64_t(i) * n * m, n, m);
    O.noalias() = A * B;
  }
  return make_op(std::move(out), {a, b}, [bs, n, k, m](Node& node) {
    Var a = node.parents[0];
    Var b = node.parents[1];
    for (int i = 0; i < bs; ++i) {
      ConstMatMap G(node.grad.data() + int64_t(i) * n * m, n, m);
      if (a->requires_grad) {
        a->ensure_grad();
        ConstMatMap B(b->value.data() + int64_t(i) * k * m, k, m);
        MatMap GA(a->grad.data() + int64_t(i) * n * k, n, k);
        GA.noalias() += G * B.transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        ConstMatMap A(a->value.data() + int64_t(i) * n * k, n, k);
        MatMap GB(b->grad.data() + int64_t(i) * k * m, k, m);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

namespace {

struct ConvDims {
  int n, cin, hin, win, cout, kh, kw, hout, wout, groups, stride, pad;
  int cing() const { return cin / groups; }
  int coutg() const { return cout / groups; }
  int64_t krows() const { return int64_t(cing()) * kh * kw; }
  int64_t cols() const { return int64_t(n) * hout * wout; }
};

void im2col_group(const Tensor& x, const ConvDims& d, int g, Tensor& col) {
  // col: (cing*kh*kw, n*hout*wout)
  double* pc = col.data();
  for (int cl = 0; cl < d.cing(); ++cl) {
    int c = g * d.cing() + cl;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        int64_t row = (int64_t(cl) * d.kh + ki) * d.kw + kj;
        double* dst = pc + row * d.cols();
        for (int in = 0; in < d.n; ++in) {
          const double* src = x.data() + (int64_t(in) * d.cin + c) * d.hin * d.win;
          for (int ho = 0; ho < d.hout; ++ho) {
            int hi = ho * d.stride - d.pad + ki;
            int64_t base = (int64_t(in) * d.hout + ho) * d.wout;
            if (hi < 0 || hi >= d.hin) {
              for (int wo = 0; wo < d.wout; ++wo) dst[base + wo] = 0.0;
              continue;
            }
            for (int wo = 0; wo < d.wout; ++wo) {
              int wi = wo * d.stride - d.pad + kj;
              dst[base + wo] =
                  (wi >= 0 && wi < d.win) ? src[int64_t(hi) * d.win + wi] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_group(const Tensor& col, const ConvDims& d, int g, Tensor& gx) {
  const double* pc = col.data();
  for (int cl = 0; cl < d.cing(); ++cl) {
    int c = g * d.cing() + cl;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        int64_t row = (int64_t(cl) * d.kh + ki) * d.kw + kj;
        const double* src = pc + row * d.cols();
        for (int in = 0; in < d.n; ++in) {
          double* dst = gx.data() + (int64_t(in) * d.cin + c) * d.hin * d.win;
          for (int ho = 0; ho < d.hout; ++ho) {
            int hi = ho * d.stride - d.pad + ki;
            if (hi < 0 || hi >= d.hin) continue;
            int64_t base = (int64_t(in) * d.hout + ho) * d.wout;
            for (int wo = 0; wo < d.wout; ++wo) {
              int wi = wo * d.stride - d.pad + kj;
              if (wi >= 0 && wi < d.win) dst[int64_t(hi) * d.win + wi] += src[base + wo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4) throw ConfigError("conv2d expects rank-4 tensors");
  ConvDims d;
  d.n = xv.dim(0); d.cin = xv.dim(1); d.hin = xv.dim(2); d.win = xv.dim(3);
  d.cout = wv.dim(0); d.kh = wv.dim(2); d.kw = wv.dim(3);
  d.groups = groups; d.stride = stride; d.pad = pad;
  if (d.cin % groups || d.cout % groups || wv.dim(1) != d.cin / groups)
    throw ConfigError("conv2d channel/group mismatch");
  d.hout = (d.hin + 2 * pad - d.kh) / stride + 1;
  d.wout = (d.win + 2 * pad - d.kw) / stride + 1;
  if (d.hout <= 0 || d.wout <= 0) throw ConfigError("conv2d output would be empty");
  if (b && (b->value.rank() != 1 || b->value.dim(0) != d.cout))
    throw ConfigError("conv2d bias shape mismatch");

  Tensor out({d.n, d.cout, d.hout, d.wout});
  auto cols = std::make_shared<std::vector<Tensor>>();
  bool keep_cols = g_grad_enabled && (x->requires_grad || w->requires_grad);
  Tensor scratch({int(d.krows()), int(d.cols())});
  int64_t plane = int64_t(d.hout) * d.wout;
  for (int g = 0; g < groups; ++g) {
    im2col_group(xv, d, g, scratch);
    ConstMatMap W(wv.data() + int64_t(g) * d.coutg() * d.krows(), d.coutg(), int(d.krows()));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> O =
        W * ConstMatMap(scratch.data(), int(d.krows()), int(d.cols()));
    for (int co = 0; co < d.coutg(); ++co) {
      int c = g * d.coutg() + co;
      for (int in = 0; in < d.n; ++in) {
        const double* src = O.data() + int64_t(co) * d.cols() + int64_t(in) * plane;
        double* dst = out.data() + (int64_t(in) * d.cout + c) * plane;
        std::copy(src, src + plane, dst);
      }
    }
    if (keep_cols) cols->push_back(scratch);
  }
  if (b) {
    for (int in = 0; in < d.n; ++in)
      for (int c = 0; c < d.cout; ++c) {
        double bias = b->value[c];
        double* dst = out.data() + (int64_t(in) * d.cout + c) * plane;
        for (int64_t i = 0; i < plane; ++i) dst[i] += bias;
      }
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), std::move(parents), [d, cols](Node& node) {
    Var x = node.parents[0];
    Var w = node.parents[1];
    Var b = node.parents.size() > 2 ? node.parents[2] : nullptr;
    int64_t plane = int64_t(d.hout) * d.wout;
    // gather dOut per group as (coutg, n*hout*wout)
    Tensor gbuf({d.coutg(), int(d.cols())});
    Tensor dcol({int(d.krows()), int(d.cols())});
    for (int g = 0; g < d.groups; ++g) {
      for (int co = 0; co < d.coutg(); ++co) {
        int c = g * d.coutg() + co;
        for (int in = 0; in < d.n; ++in) {
          const double* src = node.grad.data() + (int64_t(in) * d.cout + c) * plane;
          double* dst = gbuf.data() + int64_t(co) * d.cols() + int64_t(in) * plane;
          std::copy(src, src + plane, dst);
        }
      }
      ConstMatMap G(gbuf.data(), d.coutg(), int(d.cols()));
      if (w->requires_grad) {
        w->ensure_grad();
        ConstMatMap C((*cols)[size_t(g)].data(), int(d.krows()), int(d.cols()));
        MatMap GW(w->grad.data() + int64_t(g) * d.coutg() * d.krows(), d.coutg(),
                  int(d.krows()));
        GW.noalias() += G * C.transpose();
      }
      if (x->requires_grad) {
        x->ensure_grad();
        ConstMatMap W(w->value.data() + int64_t(g) * d.coutg() * d.krows(), d.coutg(),
                      int(d.krows()));
        MatMap DC(dcol.data(), int(d.krows()), int(d.cols()));
        DC.noalias() = W.transpose() * G;
        col2im_group(dcol, d, g, x->grad);
      }
    }
    if (b && b->requires_grad) {
      b->ensure_grad();
      for (int in = 0; in < d.n; ++in)
        for (int c = 0; c < d.cout; ++c) {
          const double* src = node.grad.data() + (int64_t(in) * d.cout + c) * plane;
          double s = 0.0;
          for (int64_t i = 0; i < plane; ++i) s += src[i];
          b->grad[c] += s;
        }
    }
  });
}

Var upsample_nearest(const Var& x, int factor) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw ConfigError("upsample expects rank-4");
  int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, h * factor, w * factor});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int ih = 0; ih < h * factor; ++ih)
        for (int iw = 0; iw < w * factor; ++iw)
          out.at4(in, ic, ih, iw) = xv.at4(in, ic, ih / factor, iw / factor);
  return make_op(std::move(out), {x}, [n, c, h, w, factor](Node& node) {
    Var x = node.parents[0];
    x->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int ih = 0; ih < h * factor; ++ih)
          for (int iw = 0; iw < w * factor; ++iw)
            x->grad.at4(in, ic, ih / factor, iw / factor) += node.grad.at4(in, ic, ih, iw);
  });
}

Var softmax_lastdim(const Var& a) {
  const Tensor& av = a->value;
  int64_t last = av.dim(av.rank() - 1);
  int64_t rows = av.numel() / last;
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * last;
    double* y = out.data() + r * last;
    double m = x[0];
    for (int64_t i = 1; i < last; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < last; ++i) {
      y[i] = std::exp(x[i] - m);
      s += y[i];
    }
    for (int64_t i = 0; i < last; ++i) y[i] /= s;
  }
  return make_op(std::move(out), {a}, [rows, last](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * last;
      const double* g = node.grad.data() + r * last;
      double* ga = a->grad.data() + r * last;
      double dot = 0.0;
      for (int64_t i = 0; i < last; ++i) dot += y[i] * g[i];
      for (int64_t i = 0; i < last; ++i) ga[i] += y[i] * (g[i] - dot);
    }
  });
}

Var l2_normalize_lastdim(const Var& a, double eps) {
  const Tensor& av = a->value;
  int64_t last = av.dim(av.rank() - 1);
  int64_t rows = av.numel() / last;
  Tensor out(av.shape());
  std::vector<double> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * last;
    double s = 0.0;
    for (int64_t i = 0; i < last; ++i) s += x[i] * x[i];
    double nrm = std::max(std::sqrt(s), eps);
    norms[size_t(r)] = nrm;
    double* y = out.data() + r * last;
    for (int64_t i = 0; i < last; ++i) y[i] = x[i] / nrm;
  }
  return make_op(std::move(out), {a}, [rows, last, eps, norms](Node& node) {
    Var a = node.parents[0];
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * last;
      const double* g = node.grad.data() + r * last;
      double* ga = a->grad.data() + r * last;
      double nrm = norms[size_t(r)];
      bool clamped = nrm <= eps;
      if (clamped) {
        for (int64_t i = 0; i < last; ++i) ga[i] += g[i] / nrm;
      } else {
        double dot = 0.0;
        for (int64_t i = 0; i < last; ++i) dot += y[i] * g[i];
        for (int64_t i = 0; i < last; ++i) ga[i] += (g[i] - y[i] * dot) / nrm;
      }
    }
  });
}

Var gather_rows(const Var& table, std::vector<int> indices) {
  const Tensor& tv = table->value;
  if (tv.rank() != 2) throw ConfigError("gather_rows expects a matrix table");
  int k = tv.dim(0), dcols = tv.dim(1);
  int n = int(indices.size());
  Tensor out({n, dcols});
  for (int i = 0; i < n; ++i) {
    int idx = indices[size_t(i)];
    if (idx < 0 || idx >= k) throw ConfigError("gather index out of range");
    std::copy(tv.data() + int64_t(idx) * dcols, tv.data() + int64_t(idx + 1) * dcols,
              out.data() + int64_t(i) * dcols);
  }
  return make_op(std::move(out), {table}, [indices, dcols](Node& node) {
    Var t = node.parents[0];
    t->ensure_grad();
    for (size_t i = 0; i < indices.size(); ++i) {
      const double* g = node.grad.data() + int64_t(i) * dcols;
      double* gt = t->grad.data() + int64_t(indices[i]) * dcols;
      for (int j = 0; j < dcols; ++j) gt[j] += g[j];
    }
  });
}

Var stop_grad(const Var& a) { return constant(a->value); }

AdamW::AdamW(std::vector<Var> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (!p.grad.numel()) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void sgd_step(const std::vector<Var>& params, double lr) {
  for (const auto& p : params) {
    if (!p->grad.numel()) continue;
    double* w = p->value.data();
    const double* g = p->grad.data();
    for (int64_t j = 0; j < p->value.numel(); ++j) w[j] -= lr * g[j];
  }
}

}  // namespace udair::ag
