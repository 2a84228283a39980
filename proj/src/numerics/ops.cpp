#include "wss/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wss {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Arr2 = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using Node = typename Tensor<S>::Node;
template <typename S>
using Array = typename Tensor<S>::Array;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename S>
void require_rank(const char* op, const Tensor<S>& x, int rank) {
  if (!x.defined()) shape_fail(op, "undefined operand");
  if (x.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) shape_fail(op, "axis out of range");
  return axis;
}

// Splits a shape around one axis into (outer, length, inner) extents.
struct AxisSplit {
  Index outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[static_cast<std::size_t>(i)];
  a.length = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

struct Broadcast {
  Shape out;
  std::vector<Index> stride_a, stride_b;
  Index count = 0;
  bool same = false;
};

std::vector<Index> row_major_strides(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  }
  return st;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.count = shape_numel(a);
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  p.out.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    const Index ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const Index eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(ea, eb);
    if (ia >= 0 && ea != 1) p.stride_a[i] = sa[static_cast<std::size_t>(ia)];
    if (ib >= 0 && eb != 1) p.stride_b[i] = sb[static_cast<std::size_t>(ib)];
  }
  p.count = shape_numel(p.out);
  return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  if (p.same) {
    for (Index i = 0; i < p.count; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<Index> idx(r, 0);
  Index ia = 0, ib = 0;
  for (Index i = 0; i < p.count; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename S>
Tensor<S> binary(const char* name, BinOp kind, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.defined() || !b.defined()) shape_fail(name, "undefined operand");
  Broadcast plan = plan_broadcast(name, a.shape(), b.shape());
  Array<S> out(plan.count);
  const S* pa = a.data();
  const S* pb = b.data();
  if (plan.same) {
    const auto& va = a.value();
    const auto& vb = b.value();
    switch (kind) {
      case BinOp::Add: out = va + vb; break;
      case BinOp::Sub: out = va - vb; break;
      case BinOp::Mul: out = va * vb; break;
      case BinOp::Div: out = va / vb; break;
    }
  } else {
    for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
      switch (kind) {
        case BinOp::Add: out[i] = pa[ia] + pb[ib]; break;
        case BinOp::Sub: out[i] = pa[ia] - pb[ib]; break;
        case BinOp::Mul: out[i] = pa[ia] * pb[ib]; break;
        case BinOp::Div: out[i] = pa[ia] / pb[ib]; break;
      }
    });
  }
  return Tensor<S>::make_result(name, plan.out, std::move(out), {&a, &b}, [plan, kind](Node<S>& self) {
    Node<S>& na = *self.parents[0];
    Node<S>& nb = *self.parents[1];
    const S* g = self.grad.data();
    const S* va = na.value.data();
    const S* vb = nb.value.data();
    if (na.requires_grad) {
      Array<S> ga = Array<S>::Zero(na.value.size());
      for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
        switch (kind) {
          case BinOp::Add:
          case BinOp::Sub: ga[ia] += g[i]; break;
          case BinOp::Mul: ga[ia] += g[i] * vb[ib]; break;
          case BinOp::Div: ga[ia] += g[i] / vb[ib]; break;
        }
      });
      na.accumulate(ga);
    }
    if (nb.requires_grad) {
      Array<S> gb = Array<S>::Zero(nb.value.size());
      for_each_broadcast(plan, [&](Index i, Index ia, Index ib) {
        switch (kind) {
          case BinOp::Add: gb[ib] += g[i]; break;
          case BinOp::Sub: gb[ib] -= g[i]; break;
          case BinOp::Mul: gb[ib] += g[i] * va[ia]; break;
          case BinOp::Div: gb[ib] -= g[i] * va[ia] / (vb[ib] * vb[ib]); break;
        }
      });
      nb.accumulate(gb);
    }
  });
}

// Applies f elementwise; df(x, y) returns dy/dx.
template <typename S, typename F, typename DF>
Tensor<S> unary(const char* name, const Tensor<S>& x, F f, DF df) {
  if (!x.defined()) shape_fail(name, "undefined operand");
  Array<S> out = x.value().unaryExpr(f);
  return Tensor<S>::make_result(name, x.shape(), std::move(out), {&x}, [df](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    Array<S> g(self.grad.size());
    for (Index i = 0; i < g.size(); ++i) g[i] = self.grad[i] * df(nx.value[i], self.value[i]);
    nx.accumulate(g);
  });
}

}  // namespace

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return binary("add", BinOp::Add, a, b); }
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return binary("sub", BinOp::Sub, a, b); }
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return binary("mul", BinOp::Mul, a, b); }
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) { return binary("div", BinOp::Div, a, b); }

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return unary("add_scalar", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return unary("mul_scalar", x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> rsub_scalar(S c, const Tensor<S>& x) {
  return unary("rsub_scalar", x, [c](S v) { return c - v; }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary("relu", x, [](S v) { return v > S(0) ? v : S(0); },
               [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary(
      "sigmoid", x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return unary("log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return unary("clamp", x, [lo, hi](S v) { return std::clamp(v, lo, hi); },
               [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> safe_reciprocal(const Tensor<S>& x, S eps) {
  return unary("safe_reciprocal", x, [eps](S v) { return v >= eps ? S(1) / v : S(0); },
               [eps](S v, S) { return v >= eps ? S(-1) / (v * v) : S(0); });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Array<S> out = Array<S>::Constant(1, x.value().sum());
  return Tensor<S>::make_result("sum", Shape{}, std::move(out), {&x}, [](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (nx.requires_grad) nx.accumulate(Array<S>::Constant(nx.value.size(), self.grad[0]));
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim) {
  axis = normalize_axis("sum", axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    shape.erase(shape.begin() + axis);
  }
  Array<S> out(sp.outer * sp.inner);
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const Arr2<S>> xs(x.data() + o * sp.length * sp.inner, sp.inner, sp.length);
    out.segment(o * sp.inner, sp.inner) = xs.rowwise().sum();
  }
  return Tensor<S>::make_result("sum_axis", std::move(shape), std::move(out), {&x}, [sp](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    Array<S> g(nx.value.size());
    for (Index o = 0; o < sp.outer; ++o) {
      Eigen::Map<Arr2<S>> gs(g.data() + o * sp.length * sp.inner, sp.inner, sp.length);
      gs = self.grad.segment(o * sp.inner, sp.inner).replicate(1, sp.length);
    }
    nx.accumulate(g);
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.numel() == 0) shape_fail("mean", "empty tensor");
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> weighted_sum(const Tensor<S>& x, const Tensor<S>& weights) {
  if (x.shape() != weights.shape()) {
    shape_fail("weighted_sum", "values " + shape_str(x.shape()) + " vs weights " + shape_str(weights.shape()));
  }
  Array<S> w = weights.value();
  Array<S> out = Array<S>::Constant(1, (x.value() * w).sum());
  return Tensor<S>::make_result("weighted_sum", Shape{}, std::move(out), {&x},
                                [w = std::move(w)](Node<S>& self) {
                                  Node<S>& nx = *self.parents[0];
                                  if (nx.requires_grad) nx.accumulate(w * self.grad[0]);
                                });
}

template <typename S>
Tensor<S> weighted_mean(const Tensor<S>& x, const Tensor<S>& weights) {
  const S total = weights.value().sum();
  if (!(total > S(0))) throw NumericError("weighted_mean: weights sum to zero");
  return mul_scalar(weighted_sum(x, weights), S(1) / total);
}

template <typename S>
Tensor<S> l2_norm(const Tensor<S>& x, int axis) {
  axis = normalize_axis("l2_norm", axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  Array<S> out(sp.outer * sp.inner);
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const Arr2<S>> xs(x.data() + o * sp.length * sp.inner, sp.inner, sp.length);
    out.segment(o * sp.inner, sp.inner) = xs.square().rowwise().sum().sqrt();
  }
  return Tensor<S>::make_result("l2_norm", std::move(shape), std::move(out), {&x}, [sp](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    Array<S> scale = (self.value > S(0)).select(self.grad / self.value, S(0));
    Array<S> g(nx.value.size());
    for (Index o = 0; o < sp.outer; ++o) {
      Eigen::Map<const Arr2<S>> xs(nx.value.data() + o * sp.length * sp.inner, sp.inner, sp.length);
      Eigen::Map<Arr2<S>> gs(g.data() + o * sp.length * sp.inner, sp.inner, sp.length);
      gs = xs.colwise() * scale.segment(o * sp.inner, sp.inner);
    }
    nx.accumulate(g);
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor<S>::make_result("reshape", std::move(shape), x.value(), {&x}, [](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (nx.requires_grad) nx.accumulate(self.grad);
  });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  const int rank = parts[0].rank();
  axis = normalize_axis("concat", axis, rank);
  Shape shape = parts[0].shape();
  Index total = 0;
  std::vector<Index> lengths;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (p.rank() != rank) shape_fail("concat", "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) shape_fail("concat", "extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    lengths.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit sp = split_axis(shape, axis);
  Array<S> out(shape_numel(shape));
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index chunk = lengths[k] * sp.inner;
    for (Index o = 0; o < sp.outer; ++o) {
      out.segment(o * total * sp.inner + offset, chunk) = parts[k].value().segment(o * chunk, chunk);
    }
    offset += chunk;
  }
  return Tensor<S>::make_result("concat", std::move(shape), std::move(out), parts,
                                [sp, total, lengths](Node<S>& self) {
                                  Index off = 0;
                                  for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                    const Index chunk = lengths[k] * sp.inner;
                                    Node<S>& np = *self.parents[k];
                                    if (np.requires_grad) {
                                      Array<S> g(np.value.size());
                                      for (Index o = 0; o < sp.outer; ++o) {
                                        g.segment(o * chunk, chunk) = self.grad.segment(o * total * sp.inner + off, chunk);
                                      }
                                      np.accumulate(g);
                                    }
                                    off += chunk;
                                  }
                                });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  axis = normalize_axis("softmax", axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), axis);
  Array<S> out(x.numel());
  for (Index o = 0; o < sp.outer; ++o) {
    Eigen::Map<const Arr2<S>> xs(x.data() + o * sp.length * sp.inner, sp.inner, sp.length);
    Eigen::Map<Arr2<S>> ys(out.data() + o * sp.length * sp.inner, sp.inner, sp.length);
    Array<S> m = xs.rowwise().maxCoeff();
    ys = (xs.colwise() - m).exp();
    Array<S> s = ys.rowwise().sum();
    ys.colwise() /= s;
  }
  return Tensor<S>::make_result("softmax", x.shape(), std::move(out), {&x}, [sp](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    Array<S> g(nx.value.size());
    for (Index o = 0; o < sp.outer; ++o) {
      const Index base = o * sp.length * sp.inner;
      Eigen::Map<const Arr2<S>> ys(self.value.data() + base, sp.inner, sp.length);
      Eigen::Map<const Arr2<S>> gy(self.grad.data() + base, sp.inner, sp.length);
      Eigen::Map<Arr2<S>> gx(g.data() + base, sp.inner, sp.length);
      Array<S> dot = (gy * ys).rowwise().sum();
      gx = ys * (gy.colwise() - dot);
    }
    nx.accumulate(g);
  });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a, bool transpose_b) {
  if (!a.defined() || !b.defined()) shape_fail("matmul", "undefined operand");
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    shape_fail("matmul", "operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const Index batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) shape_fail("matmul", "batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Index ar = a.dim(-2), ac = a.dim(-1), br = b.dim(-2), bc = b.dim(-1);
  const Index m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
  const Index k2 = transpose_b ? bc : br, n = transpose_b ? br : bc;
  if (k != k2) shape_fail("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Array<S> out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    Eigen::Map<const RowMat<S>> A(a.data() + i * ar * ac, ar, ac);
    Eigen::Map<const RowMat<S>> B(b.data() + i * br * bc, br, bc);
    Eigen::Map<RowMat<S>> C(out.data() + i * m * n, m, n);
    if (transpose_a && transpose_b) C.noalias() = A.transpose() * B.transpose();
    else if (transpose_a) C.noalias() = A.transpose() * B;
    else if (transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  }
  return Tensor<S>::make_result(
      "matmul", std::move(shape), std::move(out), {&a, &b},
      [=](Node<S>& self) {
        Node<S>& na = *self.parents[0];
        Node<S>& nb = *self.parents[1];
        Array<S> ga, gb;
        if (na.requires_grad) ga = Array<S>::Zero(na.value.size());
        if (nb.requires_grad) gb = Array<S>::Zero(nb.value.size());
        for (Index i = 0; i < batch; ++i) {
          Eigen::Map<const RowMat<S>> A(na.value.data() + i * ar * ac, ar, ac);
          Eigen::Map<const RowMat<S>> B(nb.value.data() + i * br * bc, br, bc);
          Eigen::Map<const RowMat<S>> G(self.grad.data() + i * m * n, m, n);
          if (na.requires_grad) {
            Eigen::Map<RowMat<S>> GA(ga.data() + i * ar * ac, ar, ac);
            // d(op(A)) = G op(B)^T
            if (!transpose_a && !transpose_b) GA.noalias() = G * B.transpose();
            else if (!transpose_a && transpose_b) GA.noalias() = G * B;
            else if (transpose_a && !transpose_b) GA.noalias() = B * G.transpose();
            else GA.noalias() = B.transpose() * G.transpose();
          }
          if (nb.requires_grad) {
            Eigen::Map<RowMat<S>> GB(gb.data() + i * br * bc, br, bc);
            // d(op(B)) = op(A)^T G
            if (!transpose_a && !transpose_b) GB.noalias() = A.transpose() * G;
            else if (!transpose_a && transpose_b) GB.noalias() = G.transpose() * A;
            else if (transpose_a && !transpose_b) GB.noalias() = A * G;
            else GB.noalias() = G.transpose() * A.transpose();
          }
        }
        if (na.requires_grad) na.accumulate(ga);
        if (nb.requires_grad) nb.accumulate(gb);
      });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const Index n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != f) shape_fail("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != o)) shape_fail("linear", "bias " + shape_str(bias.shape()));
  Array<S> out(n * o);
  Eigen::Map<const RowMat<S>> X(x.data(), n, f);
  Eigen::Map<const RowMat<S>> Wm(weight.data(), o, f);
  Eigen::Map<RowMat<S>> Y(out.data(), n, o);
  Y.noalias() = X * Wm.transpose();
  if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.data(), o);
  return Tensor<S>::make_result("linear", Shape{n, o}, std::move(out), {&x, &weight, &bias},
                                [=](Node<S>& self) {
                                  Node<S>& nx = *self.parents[0];
                                  Node<S>& nw = *self.parents[1];
                                  Eigen::Map<const RowMat<S>> G(self.grad.data(), n, o);
                                  Eigen::Map<const RowMat<S>> Xv(nx.value.data(), n, f);
                                  Eigen::Map<const RowMat<S>> Wv(nw.value.data(), o, f);
                                  if (nx.requires_grad) {
                                    Array<S> gx(n * f);
                                    Eigen::Map<RowMat<S>>(gx.data(), n, f).noalias() = G * Wv;
                                    nx.accumulate(gx);
                                  }
                                  if (nw.requires_grad) {
                                    Array<S> gw(o * f);
                                    Eigen::Map<RowMat<S>>(gw.data(), o, f).noalias() = G.transpose() * Xv;
                                    nw.accumulate(gw);
                                  }
                                  if (has_bias && self.parents[2]->requires_grad) {
                                    Array<S> gb = G.colwise().sum().transpose().array();
                                    self.parents[2]->accumulate(gb);
                                  }
                                });
}

namespace {

struct ConvGeometry {
  Index n, c, h, w, o, kh, kw, ho, wo;
  int stride, pad;
  Index cols() const { return c * kh * kw; }
  Index pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col is (ho*wo) x (c*kh*kw), column-major.
template <typename S>
void im2col(const ConvGeometry& g, const S* x, S* col) {
  const Index p = g.pixels();
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        S* dst = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (Index oh = 0; oh < g.ho; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          S* row_out = dst + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(row_out, row_out + g.wo, S(0));
            continue;
          }
          const S* row_in = x + (c * g.h + ih) * g.w;
          for (Index ow = 0; ow < g.wo; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            row_out[ow] = (iw >= 0 && iw < g.w) ? row_in[iw] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const ConvGeometry& g, const S* col, S* x) {
  const Index p = g.pixels();
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const S* src = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (Index oh = 0; oh < g.ho; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          S* row = x + (c * g.h + ih) * g.w;
          const S* row_in = src + oh * g.wo;
          for (Index ow = 0; ow < g.wo; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) row[iw] += row_in[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int stride, int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (stride < 1 || padding < 0) shape_fail("conv2d", "invalid stride/padding");
  ConvGeometry g{};
  g.n = x.dim(0); g.c = x.dim(1); g.h = x.dim(2); g.w = x.dim(3);
  g.o = weight.dim(0); g.kh = weight.dim(2); g.kw = weight.dim(3);
  g.stride = stride; g.pad = padding;
  if (weight.dim(1) != g.c) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) shape_fail("conv2d", "kernel larger than padded input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.o)) shape_fail("conv2d", "bias " + shape_str(bias.shape()));

  const Index p = g.pixels(), k = g.cols();
  Array<S> out(g.n * g.o * p);
  Eigen::Map<const Mat<S>> Wt(weight.data(), k, g.o);
  Mat<S> col;
  if (!g.pointwise()) col.resize(p, k);
  for (Index i = 0; i < g.n; ++i) {
    const S* xi = x.data() + i * g.c * g.h * g.w;
    Eigen::Map<Mat<S>> Y(out.data() + i * g.o * p, p, g.o);
    if (g.pointwise()) {
      Y.noalias() = Eigen::Map<const Mat<S>>(xi, p, k) * Wt;
    } else {
      im2col(g, xi, col.data());
      Y.noalias() = col * Wt;
    }
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.data(), g.o);
  }
  return Tensor<S>::make_result(
      "conv2d", Shape{g.n, g.o, g.ho, g.wo}, std::move(out), {&x, &weight, &bias},
      [g, has_bias](Node<S>& self) {
        Node<S>& nx = *self.parents[0];
        Node<S>& nw = *self.parents[1];
        const Index p = g.pixels(), k = g.cols();
        Eigen::Map<const Mat<S>> Wt(nw.value.data(), k, g.o);
        Array<S> gx, gw, gb;
        if (nx.requires_grad) gx = Array<S>::Zero(nx.value.size());
        if (nw.requires_grad) gw = Array<S>::Zero(nw.value.size());
        const bool want_b = has_bias && self.parents[2]->requires_grad;
        if (want_b) gb = Array<S>::Zero(g.o);
        Mat<S> col, dcol;
        if (!g.pointwise()) {
          if (nw.requires_grad) col.resize(p, k);
          if (nx.requires_grad) dcol.resize(p, k);
        }
        for (Index i = 0; i < g.n; ++i) {
          const S* xi = nx.value.data() + i * g.c * g.h * g.w;
          Eigen::Map<const Mat<S>> G(self.grad.data() + i * g.o * p, p, g.o);
          if (nw.requires_grad) {
            Eigen::Map<Mat<S>> GW(gw.data(), k, g.o);
            if (g.pointwise()) {
              GW.noalias() += Eigen::Map<const Mat<S>>(xi, p, k).transpose() * G;
            } else {
              im2col(g, xi, col.data());
              GW.noalias() += col.transpose() * G;
            }
          }
          if (want_b) gb += G.colwise().sum().transpose().array();
          if (nx.requires_grad) {
            S* gxi = gx.data() + i * g.c * g.h * g.w;
            if (g.pointwise()) {
              Eigen::Map<Mat<S>>(gxi, p, k).noalias() += G * Wt.transpose();
            } else {
              dcol.noalias() = G * Wt.transpose();
              col2im(g, dcol.data(), gxi);
            }
          }
        }
        if (nx.requires_grad) nx.accumulate(gx);
        if (nw.requires_grad) nw.accumulate(gw);
        if (want_b) self.parents[2]->accumulate(gb);
      });
}

namespace {

struct LerpTable {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

LerpTable lerp_table(Index in, Index out) {
  LerpTable t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index l = static_cast<Index>(std::floor(src));
    if (l > in - 1) l = in - 1;
    const auto u = static_cast<std::size_t>(i);
    t.lo[u] = l;
    t.hi[u] = std::min(l + 1, in - 1);
    t.frac[u] = src - static_cast<double>(l);
  }
  return t;
}

}  // namespace

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int factor) {
  require_rank("upsample_bilinear", x, 4);
  if (factor < 1) shape_fail("upsample_bilinear", "factor must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  const LerpTable ty = lerp_table(h, oh), tx = lerp_table(w, ow);
  Array<S> out(n * c * oh * ow);
  for (Index plane = 0; plane < n * c; ++plane) {
    const S* src = x.data() + plane * h * w;
    S* dst = out.data() + plane * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const S fy = static_cast<S>(ty.frac[ui]);
      const S* r0 = src + ty.lo[ui] * w;
      const S* r1 = src + ty.hi[ui] * w;
      for (Index j = 0; j < ow; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const S fx = static_cast<S>(tx.frac[uj]);
        const S top = r0[tx.lo[uj]] * (S(1) - fx) + r0[tx.hi[uj]] * fx;
        const S bot = r1[tx.lo[uj]] * (S(1) - fx) + r1[tx.hi[uj]] * fx;
        dst[i * ow + j] = top * (S(1) - fy) + bot * fy;
      }
    }
  }
  return Tensor<S>::make_result(
      "upsample_bilinear", Shape{n, c, oh, ow}, std::move(out), {&x}, [=](Node<S>& self) {
        Node<S>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        Array<S> g = Array<S>::Zero(nx.value.size());
        for (Index plane = 0; plane < n * c; ++plane) {
          S* dst = g.data() + plane * h * w;
          const S* go = self.grad.data() + plane * oh * ow;
          for (Index i = 0; i < oh; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const S fy = static_cast<S>(ty.frac[ui]);
            S* r0 = dst + ty.lo[ui] * w;
            S* r1 = dst + ty.hi[ui] * w;
            for (Index j = 0; j < ow; ++j) {
              const auto uj = static_cast<std::size_t>(j);
              const S fx = static_cast<S>(tx.frac[uj]);
              const S v = go[i * ow + j];
              r0[tx.lo[uj]] += v * (S(1) - fy) * (S(1) - fx);
              r0[tx.hi[uj]] += v * (S(1) - fy) * fx;
              r1[tx.lo[uj]] += v * fy * (S(1) - fx);
              r1[tx.hi[uj]] += v * fy * fx;
            }
          }
        }
        nx.accumulate(g);
      });
}

template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int factor) {
  require_rank("upsample_nearest", x, 4);
  if (factor < 1) shape_fail("upsample_nearest", "factor must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  Array<S> out(n * c * oh * ow);
  for (Index plane = 0; plane < n * c; ++plane) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        out[(plane * oh + i) * ow + j] = x.data()[(plane * h + i / factor) * w + j / factor];
      }
    }
  }
  return Tensor<S>::make_result("upsample_nearest", Shape{n, c, oh, ow}, std::move(out), {&x},
                                [=](Node<S>& self) {
                                  Node<S>& nx = *self.parents[0];
                                  if (!nx.requires_grad) return;
                                  Array<S> g = Array<S>::Zero(nx.value.size());
                                  for (Index plane = 0; plane < n * c; ++plane) {
                                    for (Index i = 0; i < oh; ++i) {
                                      for (Index j = 0; j < ow; ++j) {
                                        g[(plane * h + i / factor) * w + j / factor] += self.grad[(plane * oh + i) * ow + j];
                                      }
                                    }
                                  }
                                  nx.accumulate(g);
                                });
}

template <typename S>
Tensor<S> max_pool2x2(const Tensor<S>& x) {
  require_rank("max_pool2x2", x, 4);
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) shape_fail("max_pool2x2", "input too small " + shape_str(x.shape()));
  Array<S> out(n * c * oh * ow);
  std::vector<Index> arg(static_cast<std::size_t>(out.size()));
  for (Index plane = 0; plane < n * c; ++plane) {
    const S* src = x.data() + plane * h * w;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index best = (2 * i) * w + 2 * j;
        for (Index di = 0; di < 2; ++di) {
          for (Index dj = 0; dj < 2; ++dj) {
            const Index idx = (2 * i + di) * w + 2 * j + dj;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const Index o = (plane * oh + i) * ow + j;
        out[o] = src[best];
        arg[static_cast<std::size_t>(o)] = plane * h * w + best;
      }
    }
  }
  return Tensor<S>::make_result("max_pool2x2", Shape{n, c, oh, ow}, std::move(out), {&x},
                                [arg = std::move(arg)](Node<S>& self) {
                                  Node<S>& nx = *self.parents[0];
                                  if (!nx.requires_grad) return;
                                  Array<S> g = Array<S>::Zero(nx.value.size());
                                  for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[static_cast<Index>(o)];
                                  nx.accumulate(g);
                                });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  require_rank("global_avg_pool", x, 4);
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Eigen::Map<const Arr2<S>> planes(x.data(), hw, n * c);
  Array<S> out = planes.colwise().mean().transpose();
  return Tensor<S>::make_result("global_avg_pool", Shape{n, c}, std::move(out), {&x}, [n, c, hw](Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    Array<S> g(nx.value.size());
    Eigen::Map<Arr2<S>> gp(g.data(), hw, n * c);
    gp = (self.grad / static_cast<S>(hw)).transpose().replicate(hw, 1);
    nx.accumulate(g);
  });
}

template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       Tensor<S>& running_mean, Tensor<S>& running_var, bool training, S momentum, S eps) {
  require_rank("batch_norm2d", x, 4);
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor<S>* t : std::initializer_list<const Tensor<S>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != c) {
      shape_fail("batch_norm2d", "per-channel parameter does not match input " + shape_str(x.shape()));
    }
  }
  const Index count = n * hw;
  if (training && count < 2) shape_fail("batch_norm2d", "training mode needs more than one value per channel");
  Array<S> mu(c), inv(c);
  if (training) {
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (Index i = 0; i < n; ++i) {
        const S* p = x.data() + (i * c + ch) * hw;
        for (Index k = 0; k < hw; ++k) s += p[k];
      }
      const double m = s / static_cast<double>(count);
      for (Index i = 0; i < n; ++i) {
        const S* p = x.data() + (i * c + ch) * hw;
        for (Index k = 0; k < hw; ++k) ss += (p[k] - m) * (p[k] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[ch] = static_cast<S>(m);
      inv[ch] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = ss / static_cast<double>(count - 1);
      auto& rm = running_mean.mutable_value();
      auto& rv = running_var.mutable_value();
      rm[ch] = momentum * rm[ch] + (S(1) - momentum) * static_cast<S>(m);
      rv[ch] = momentum * rv[ch] + (S(1) - momentum) * static_cast<S>(unbiased);
    }
  } else {
    mu = running_mean.value();
    inv = (running_var.value() + eps).rsqrt();
  }
  Array<S> xhat(x.numel()), out(x.numel());
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (i * c + ch) * hw;
      xhat.segment(base, hw) = (x.value().segment(base, hw) - mu[ch]) * inv[ch];
      out.segment(base, hw) = xhat.segment(base, hw) * gamma.value()[ch] + beta.value()[ch];
    }
  }
  return Tensor<S>::make_result(
      "batch_norm2d", x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, c, hw, count, training, inv, xhat = std::move(xhat)](Node<S>& self) {
        Node<S>& nx = *self.parents[0];
        Node<S>& ng = *self.parents[1];
        Node<S>& nb = *self.parents[2];
        Array<S> sum_g = Array<S>::Zero(c), sum_gx = Array<S>::Zero(c);
        for (Index i = 0; i < n; ++i) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = (i * c + ch) * hw;
            sum_g[ch] += self.grad.segment(base, hw).sum();
            sum_gx[ch] += (self.grad.segment(base, hw) * xhat.segment(base, hw)).sum();
          }
        }
        if (ng.requires_grad) ng.accumulate(sum_gx);
        if (nb.requires_grad) nb.accumulate(sum_g);
        if (!nx.requires_grad) return;
        Array<S> gx(nx.value.size());
        const S m = static_cast<S>(count);
        for (Index i = 0; i < n; ++i) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = (i * c + ch) * hw;
            const S scale = ng.value[ch] * inv[ch];
            if (training) {
              gx.segment(base, hw) =
                  scale / m * (m * self.grad.segment(base, hw) - sum_g[ch] - xhat.segment(base, hw) * sum_gx[ch]);
            } else {
              gx.segment(base, hw) = scale * self.grad.segment(base, hw);
            }
          }
        }
        nx.accumulate(gx);
      });
}

template <typename S>
Tensor<S> binary_cross_entropy(const Tensor<S>& probability, const Tensor<S>& target, S clamp_eps) {
  if (probability.shape() != target.shape()) {
    shape_fail("binary_cross_entropy", shape_str(probability.shape()) + " vs targets " + shape_str(target.shape()));
  }
  const Tensor<S> p = clamp(probability, clamp_eps, S(1) - clamp_eps);
  const Tensor<S> y = target.detach();
  const Tensor<S> ll = y * log(p) + (S(1) - y) * log(S(1) - p);
  return -mean(ll);
}

#define WSS_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                           \
  template Tensor<S> mul_scalar(const Tensor<S>&, S);                                           \
  template Tensor<S> rsub_scalar(S, const Tensor<S>&);                                          \
  template Tensor<S> relu(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> log(const Tensor<S>&);                                                     \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                             \
  template Tensor<S> safe_reciprocal(const Tensor<S>&, S);                                      \
  template Tensor<S> sum(const Tensor<S>&);                                                     \
  template Tensor<S> sum(const Tensor<S>&, int, bool);                                          \
  template Tensor<S> mean(const Tensor<S>&);                                                    \
  template Tensor<S> weighted_sum(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> weighted_mean(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> l2_norm(const Tensor<S>&, int);                                            \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                          \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                \
  template Tensor<S> softmax(const Tensor<S>&, int);                                            \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&, bool, bool);                    \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);    \
  template Tensor<S> upsample_bilinear(const Tensor<S>&, int);                                  \
  template Tensor<S> upsample_nearest(const Tensor<S>&, int);                                   \
  template Tensor<S> max_pool2x2(const Tensor<S>&);                                             \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                         \
  template Tensor<S> batch_norm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,         \
                                  Tensor<S>&, Tensor<S>&, bool, S, S);                          \
  template Tensor<S> binary_cross_entropy(const Tensor<S>&, const Tensor<S>&, S);

WSS_INSTANTIATE_OPS(float)
WSS_INSTANTIATE_OPS(double)

}  // namespace wss
