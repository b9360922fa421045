#include "focalforge/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "focalforge/error.hpp"

namespace focalforge::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ValidationError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Per-output-dimension strides into each operand (0 along broadcast dims).
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> sa, sb;
  bool same = false;
};

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto stA = contiguous_strides(a), stB = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ai = i + a.size() >= r ? static_cast<std::int64_t>(i + a.size() - r) : -1;
    const std::int64_t bi = i + b.size() >= r ? static_cast<std::int64_t>(i + b.size() - r) : -1;
    const std::int64_t da = ai >= 0 ? a[ai] : 1;
    const std::int64_t db = bi >= 0 ? b[bi] : 1;
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    p.out[i] = std::max(da, db);
    p.sa[i] = (ai >= 0 && da != 1) ? stA[ai] : 0;
    p.sb[i] = (bi >= 0 && db != 1) ? stB[bi] : 0;
  }
  return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <class F>
void for_each_bcast(const BroadcastPlan& p, F&& f) {
  const std::int64_t n = numel(p.out);
  if (p.same) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (n == 0) return;
  const int r = static_cast<int>(p.out.size());
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t ia_step = p.sa[r - 1], ib_step = p.sb[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; i += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(i + j, ia + j * ia_step, ib + j * ib_step);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) { return make_plan(a, b, "broadcast").out; }

Var add(const Var& a, const Var& b) {
  const auto plan = make_plan(a.shape(), b.shape(), "add");
  Tensor out(plan.out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = pa[ia] + pb[ib]; });
  return make_node(std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data();
    Node* na = self.parents[0].get();
    Node* nb = self.parents[1].get();
    double* ga = na->requires_grad ? na->grad_ref().data() : nullptr;
    double* gb = nb->requires_grad ? nb->grad_ref().data() : nullptr;
    for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] += g[i];
    });
  });
}

Var sub(const Var& a, const Var& b) {
  const auto plan = make_plan(a.shape(), b.shape(), "sub");
  Tensor out(plan.out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = pa[ia] - pb[ib]; });
  return make_node(std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data();
    Node* na = self.parents[0].get();
    Node* nb = self.parents[1].get();
    double* ga = na->requires_grad ? na->grad_ref().data() : nullptr;
    double* gb = nb->requires_grad ? nb->grad_ref().data() : nullptr;
    for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] -= g[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  const auto plan = make_plan(a.shape(), b.shape(), "mul");
  Tensor out(plan.out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = pa[ia] * pb[ib]; });
  return make_node(std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data();
    Node* na = self.parents[0].get();
    Node* nb = self.parents[1].get();
    const double* va = na->value.data();
    const double* vb = nb->value.data();
    double* ga = na->requires_grad ? na->grad_ref().data() : nullptr;
    double* gb = nb->requires_grad ? nb->grad_ref().data() : nullptr;
    for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[i] * vb[ib];
      if (gb) gb[ib] += g[i] * va[ia];
    });
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    Tensor& ga = self.parents[0]->grad_ref();
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += s * self.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {x}, [](Node& self) {
    Tensor& gx = self.parents[0]->grad_ref();
    const Tensor& xv = self.parents[0]->value;
    for (std::int64_t i = 0; i < gx.numel(); ++i)
      if (xv[i] > 0.0) gx[i] += self.grad[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_node(std::move(out), {x}, [](Node& self) {
    Tensor& gx = self.parents[0]->grad_ref();
    for (std::int64_t i = 0; i < gx.numel(); ++i) {
      const double s = self.value[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var sum(const Var& x) {
  const auto& v = x.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_node(Tensor({1}, s), {x}, [](Node& self) {
    Tensor& gx = self.parents[0]->grad_ref();
    const double g = self.grad[0];
    for (double& e : gx.values()) e += g;
  });
}

Var mean(const Var& x) {
  const std::int64_t n = x.value().numel();
  if (n == 0) throw ValidationError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

namespace {

struct ConvGeom {
  std::int64_t n, c, h, w, k, kh, kw, ho, wo;
  int stride, pad;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::int64_t p = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im(const double* col, const ConvGeom& g, double* x) {
  const std::int64_t p = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) shape_error("conv2d", xs, ws);
  if (xs[1] != ws[1]) shape_error("conv2d (channel mismatch)", xs, ws);
  if (b.defined() && (b.shape().size() != 1 || b.shape()[0] != ws[0])) shape_error("conv2d (bias)", ws, b.shape());
  if (stride < 1 || pad < 0) throw ValidationError("conv2d: invalid stride/pad");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, stride, pad};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) shape_error("conv2d (kernel larger than padded input)", xs, ws);

  const std::int64_t q = g.c * g.kh * g.kw, p = g.ho * g.wo;
  Tensor out({g.n, g.k, g.ho, g.wo});
  std::vector<double> col(g.pointwise() ? 0 : static_cast<std::size_t>(q * p));
  CMapRM wm(w.value().data(), g.k, q);
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* xn = x.value().data() + n * g.c * g.h * g.w;
    const double* cp = xn;
    if (!g.pointwise()) {
      im2col(xn, g, col.data());
      cp = col.data();
    }
    MapRM om(out.data() + n * g.k * p, g.k, p);
    om.noalias() = wm * CMapRM(cp, q, p);
    if (b.defined())
      for (std::int64_t k = 0; k < g.k; ++k) om.row(k).array() += b.value()[k];
  }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_node(std::move(out), std::move(parents), [g](Node& self) {
    Node* nx = self.parents[0].get();
    Node* nw = self.parents[1].get();
    Node* nb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const std::int64_t q = g.c * g.kh * g.kw, p = g.ho * g.wo;
    std::vector<double> col(g.pointwise() ? 0 : static_cast<std::size_t>(q * p));
    std::vector<double> dcol(g.pointwise() ? 0 : static_cast<std::size_t>(q * p));
    CMapRM wm(nw->value.data(), g.k, q);
    for (std::int64_t n = 0; n < g.n; ++n) {
      CMapRM gm(self.grad.data() + n * g.k * p, g.k, p);
      if (nb && nb->requires_grad) {
        double* gb = nb->grad_ref().data();
        for (std::int64_t k = 0; k < g.k; ++k) gb[k] += gm.row(k).sum();
      }
      const double* xn = nx->value.data() + n * g.c * g.h * g.w;
      if (nw->requires_grad) {
        const double* cp = xn;
        if (!g.pointwise()) {
          im2col(xn, g, col.data());
          cp = col.data();
        }
        MapRM(nw->grad_ref().data(), g.k, q).noalias() += gm * CMapRM(cp, q, p).transpose();
      }
      if (nx->requires_grad) {
        double* gx = nx->grad_ref().data() + n * g.c * g.h * g.w;
        if (g.pointwise()) {
          MapRM(gx, q, p).noalias() += wm.transpose() * gm;
        } else {
          MapRM(dcol.data(), q, p).noalias() = wm.transpose() * gm;
          col2im(dcol.data(), g, gx);
        }
      }
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  const std::int64_t n = as[as.size() - 2], d = as.back(), m = bs.back();
  if (bs[bs.size() - 2] != d) shape_error("matmul (inner dimension)", as, bs);
  Shape ba(as.begin(), as.end() - 2), bb(bs.begin(), bs.end() - 2);
  if (ba.empty()) ba = {1};
  if (bb.empty()) bb = {1};
  const auto plan = make_plan(ba, bb, "matmul (batch)");
  Shape os = plan.out;
  if (as.size() == 2 && bs.size() == 2) os.clear();
  os.push_back(n);
  os.push_back(m);
  Tensor out(os);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
    MapRM(out.data() + i * n * m, n, m).noalias() =
        CMapRM(pa + ia * n * d, n, d) * CMapRM(pb + ib * d * m, d, m);
  });
  return make_node(std::move(out), {a, b}, [plan, n, d, m](Node& self) {
    Node* na = self.parents[0].get();
    Node* nb = self.parents[1].get();
    const double* g = self.grad.data();
    for_each_bcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      CMapRM gm(g + i * n * m, n, m);
      if (na->requires_grad)
        MapRM(na->grad_ref().data() + ia * n * d, n, d).noalias() +=
            gm * CMapRM(nb->value.data() + ib * d * m, d, m).transpose();
      if (nb->requires_grad)
        MapRM(nb->grad_ref().data() + ib * d * m, d, m).noalias() +=
            CMapRM(na->value.data() + ia * n * d, n, d).transpose() * gm;
    });
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) shape_error("affine", xs, ws);
  if (b.defined() && (b.shape().size() != 1 || b.shape()[0] != ws[0])) shape_error("affine (bias)", ws, b.shape());
  const std::int64_t n = xs[0], din = xs[1], dout = ws[0];
  Tensor out({n, dout});
  MapRM om(out.data(), n, dout);
  om.noalias() = CMapRM(x.value().data(), n, din) * CMapRM(w.value().data(), dout, din).transpose();
  if (b.defined())
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < dout; ++j) om(i, j) += b.value()[j];
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_node(std::move(out), std::move(parents), [n, din, dout](Node& self) {
    Node* nx = self.parents[0].get();
    Node* nw = self.parents[1].get();
    Node* nb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    CMapRM gm(self.grad.data(), n, dout);
    if (nx->requires_grad)
      MapRM(nx->grad_ref().data(), n, din).noalias() += gm * CMapRM(nw->value.data(), dout, din);
    if (nw->requires_grad)
      MapRM(nw->grad_ref().data(), dout, din).noalias() += gm.transpose() * CMapRM(nx->value.data(), n, din);
    if (nb && nb->requires_grad) {
      double* gb = nb->grad_ref().data();
      for (std::int64_t j = 0; j < dout; ++j) gb[j] += gm.col(j).sum();
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ValidationError("global_avg_pool expects [N,C,H,W], got " + to_string(s));
  const std::int64_t nc = s[0] * s[1], hw = s[2] * s[3];
  Tensor out({s[0], s[1]});
  const double* px = x.value().data();
  for (std::int64_t i = 0; i < nc; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) acc += px[i * hw + j];
    out[i] = acc / static_cast<double>(hw);
  }
  return make_node(std::move(out), {x}, [nc, hw](Node& self) {
    double* gx = self.parents[0]->grad_ref().data();
    for (std::int64_t i = 0; i < nc; ++i) {
      const double g = self.grad[i] / static_cast<double>(hw);
      for (std::int64_t j = 0; j < hw; ++j) gx[i * hw + j] += g;
    }
  });
}

namespace {

// Sampling position along one axis for output index i.
struct AxisSample {
  std::int64_t i0, i1;
  double w;
  bool clamped;
};

inline AxisSample axis_sample(std::int64_t i, double scale, double offset, std::int64_t in_size) {
  double s = (static_cast<double>(i) + 0.5) * scale - 0.5 + offset;
  const double hi = static_cast<double>(in_size - 1);
  bool clamped = false;
  if (s < 0.0) {
    s = 0.0;
    clamped = true;
  } else if (s > hi) {
    s = hi;
    clamped = true;
  }
  const auto i0 = static_cast<std::int64_t>(std::floor(s));
  const std::int64_t i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, s - static_cast<double>(i0), clamped};
}

struct SampleShape {
  std::int64_t n, c, h, w, ho, wo;
};

// flow may be null (plain resize).
void sample_forward(const double* x, const double* flow, const SampleShape& s, double* out) {
  const double sy = static_cast<double>(s.h) / static_cast<double>(s.ho);
  const double sx = static_cast<double>(s.w) / static_cast<double>(s.wo);
  const std::int64_t po = s.ho * s.wo, pi = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t oy = 0; oy < s.ho; ++oy)
      for (std::int64_t ox = 0; ox < s.wo; ++ox) {
        const std::int64_t o = oy * s.wo + ox;
        const double dx = flow ? flow[(n * 2 + 0) * po + o] : 0.0;
        const double dy = flow ? flow[(n * 2 + 1) * po + o] : 0.0;
        const AxisSample ay = axis_sample(oy, sy, dy, s.h);
        const AxisSample ax = axis_sample(ox, sx, dx, s.w);
        for (std::int64_t c = 0; c < s.c; ++c) {
          const double* xp = x + (n * s.c + c) * pi;
          const double top = (1.0 - ax.w) * xp[ay.i0 * s.w + ax.i0] + ax.w * xp[ay.i0 * s.w + ax.i1];
          const double bot = (1.0 - ax.w) * xp[ay.i1 * s.w + ax.i0] + ax.w * xp[ay.i1 * s.w + ax.i1];
          out[(n * s.c + c) * po + o] = (1.0 - ay.w) * top + ay.w * bot;
        }
      }
}

void sample_backward(const double* x, const double* flow, const SampleShape& s, const double* g, double* gx,
                     double* gflow) {
  const double sy = static_cast<double>(s.h) / static_cast<double>(s.ho);
  const double sx = static_cast<double>(s.w) / static_cast<double>(s.wo);
  const std::int64_t po = s.ho * s.wo, pi = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t oy = 0; oy < s.ho; ++oy)
      for (std::int64_t ox = 0; ox < s.wo; ++ox) {
        const std::int64_t o = oy * s.wo + ox;
        const double dx = flow ? flow[(n * 2 + 0) * po + o] : 0.0;
        const double dy = flow ? flow[(n * 2 + 1) * po + o] : 0.0;
        const AxisSample ay = axis_sample(oy, sy, dy, s.h);
        const AxisSample ax = axis_sample(ox, sx, dx, s.w);
        double gdx = 0.0, gdy = 0.0;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const double go = g[(n * s.c + c) * po + o];
          const std::int64_t base = (n * s.c + c) * pi;
          if (gx) {
            gx[base + ay.i0 * s.w + ax.i0] += go * (1.0 - ay.w) * (1.0 - ax.w);
            gx[base + ay.i0 * s.w + ax.i1] += go * (1.0 - ay.w) * ax.w;
            gx[base + ay.i1 * s.w + ax.i0] += go * ay.w * (1.0 - ax.w);
            gx[base + ay.i1 * s.w + ax.i1] += go * ay.w * ax.w;
          }
          if (gflow) {
            const double* xp = x + base;
            const double v00 = xp[ay.i0 * s.w + ax.i0], v01 = xp[ay.i0 * s.w + ax.i1];
            const double v10 = xp[ay.i1 * s.w + ax.i0], v11 = xp[ay.i1 * s.w + ax.i1];
            if (!ax.clamped) gdx += go * ((1.0 - ay.w) * (v01 - v00) + ay.w * (v11 - v10));
            if (!ay.clamped) gdy += go * ((1.0 - ax.w) * (v10 - v00) + ax.w * (v11 - v01));
          }
        }
        if (gflow) {
          gflow[(n * 2 + 0) * po + o] += gdx;
          gflow[(n * 2 + 1) * po + o] += gdy;
        }
      }
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t height, std::int64_t width) {
  if (x.rank() != 4) throw ValidationError("bilinear_resize expects [N,C,H,W], got " + to_string(x.shape()));
  if (height < 1 || width < 1) throw ValidationError("bilinear_resize: output size must be positive");
  SampleShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), height, width};
  Tensor out({s.n, s.c, height, width});
  sample_forward(x.data(), nullptr, s, out.data());
  return out;
}

Var bilinear_resize(const Var& x, std::int64_t height, std::int64_t width) {
  Tensor out = bilinear_resize(x.value(), height, width);
  const Shape& xs = x.shape();
  SampleShape s{xs[0], xs[1], xs[2], xs[3], height, width};
  return make_node(std::move(out), {x}, [s](Node& self) {
    Node* nx = self.parents[0].get();
    sample_backward(nx->value.data(), nullptr, s, self.grad.data(), nx->grad_ref().data(), nullptr);
  });
}

Var grid_sample_flow(const Var& x, const Var& flow) {
  const Shape& xs = x.shape();
  const Shape& fs = flow.shape();
  if (xs.size() != 4 || fs.size() != 4 || fs[1] != 2 || fs[0] != xs[0]) shape_error("grid_sample_flow", xs, fs);
  SampleShape s{xs[0], xs[1], xs[2], xs[3], fs[2], fs[3]};
  Tensor out({s.n, s.c, s.ho, s.wo});
  sample_forward(x.value().data(), flow.value().data(), s, out.data());
  return make_node(std::move(out), {x, flow}, [s](Node& self) {
    Node* nx = self.parents[0].get();
    Node* nf = self.parents[1].get();
    sample_backward(nx->value.data(), nf->value.data(), s, self.grad.data(),
                    nx->requires_grad ? nx->grad_ref().data() : nullptr,
                    nf->requires_grad ? nf->grad_ref().data() : nullptr);
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ValidationError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  const int r = static_cast<int>(s0.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ValidationError("concat: axis out of range");
  Shape os = s0;
  os[axis] = 0;
  std::vector<std::int64_t> widths;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (static_cast<int>(s.size()) != r) shape_error("concat", s0, s);
    for (int i = 0; i < r; ++i)
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    os[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < r; ++i) inner *= s0[i];
  Tensor out(os);
  const std::int64_t row = os[axis] * inner;
  std::int64_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::int64_t chunk = widths[k] * inner;
    const double* src = xs[k].value().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * row + off);
    off += chunk;
  }
  return make_node(std::move(out), xs, [widths, outer, inner, row](Node& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::int64_t chunk = widths[k] * inner;
      Node* p = self.parents[k].get();
      if (p->requires_grad) {
        double* gp = p->grad_ref().data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t j = 0; j < chunk; ++j) gp[o * chunk + j] += self.grad[o * row + off + j];
      }
      off += chunk;
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ValidationError("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[infer] = known ? x.value().numel() / known : 0;
  Tensor out = x.value().reshaped(shape);
  return make_node(std::move(out), {x}, [](Node& self) {
    Tensor& gx = self.parents[0]->grad_ref();
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i];
  });
}

namespace {

// Offsets into the source for each element of the permuted output.
std::vector<std::int64_t> permute_offsets(const Shape& in, const std::vector<int>& perm, Shape& out_shape) {
  const int r = static_cast<int>(in.size());
  if (static_cast<int>(perm.size()) != r) throw ValidationError("permute: rank mismatch");
  std::vector<bool> used(r, false);
  out_shape.assign(r, 0);
  const auto st = contiguous_strides(in);
  std::vector<std::int64_t> ost(r);
  for (int i = 0; i < r; ++i) {
    if (perm[i] < 0 || perm[i] >= r || used[perm[i]]) throw ValidationError("permute: invalid permutation");
    used[perm[i]] = true;
    out_shape[i] = in[perm[i]];
    ost[i] = st[perm[i]];
  }
  const std::int64_t n = numel(in);
  std::vector<std::int64_t> offs(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    offs[i] = src;
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      src += ost[d];
      if (idx[d] < out_shape[d]) break;
      src -= ost[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return offs;
}

}  // namespace

Var permute(const Var& x, const std::vector<int>& perm) {
  Shape os;
  auto offs = std::make_shared<std::vector<std::int64_t>>(permute_offsets(x.shape(), perm, os));
  Tensor out(os);
  const double* px = x.value().data();
  for (std::size_t i = 0; i < offs->size(); ++i) out[static_cast<std::int64_t>(i)] = px[(*offs)[i]];
  return make_node(std::move(out), {x}, [offs](Node& self) {
    double* gx = self.parents[0]->grad_ref().data();
    for (std::size_t i = 0; i < offs->size(); ++i) gx[(*offs)[i]] += self.grad[static_cast<std::int64_t>(i)];
  });
}

Var pad_replicate(const Var& x, int top, int bottom, int left, int right) {
  const Shape& s = x.shape();
  if (s.size() < 2 || top < 0 || bottom < 0 || left < 0 || right < 0)
    throw ValidationError("pad_replicate: invalid arguments for " + to_string(s));
  const std::int64_t h = s[s.size() - 2], w = s.back();
  const std::int64_t planes = numel(s) / (h * w);
  const std::int64_t oh = h + top + bottom, ow = w + left + right;
  Shape os = s;
  os[os.size() - 2] = oh;
  os.back() = ow;
  Tensor out(os);
  const double* px = x.value().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t sy = std::clamp<std::int64_t>(y - top, 0, h - 1);
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const std::int64_t sx = std::clamp<std::int64_t>(xx - left, 0, w - 1);
        out[(p * oh + y) * ow + xx] = px[(p * h + sy) * w + sx];
      }
    }
  return make_node(std::move(out), {x}, [planes, h, w, oh, ow, top, left](Node& self) {
    double* gx = self.parents[0]->grad_ref().data();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t y = 0; y < oh; ++y) {
        const std::int64_t sy = std::clamp<std::int64_t>(y - top, 0, h - 1);
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const std::int64_t sx = std::clamp<std::int64_t>(xx - left, 0, w - 1);
          gx[(p * h + sy) * w + sx] += self.grad[(p * oh + y) * ow + xx];
        }
      }
  });
}

Var crop(const Var& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ValidationError("crop: rank < 2");
  const std::int64_t h = s[s.size() - 2], w = s.back();
  if (top < 0 || left < 0 || height < 0 || width < 0 || top + height > h || left + width > w)
    throw ValidationError("crop: window outside " + to_string(s));
  const std::int64_t planes = numel(s) / (h * w);
  Shape os = s;
  os[os.size() - 2] = height;
  os.back() = width;
  Tensor out(os);
  const double* px = x.value().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < height; ++y)
      std::copy_n(px + (p * h + top + y) * w + left, width, out.data() + (p * height + y) * width);
  return make_node(std::move(out), {x}, [planes, h, w, top, left, height, width](Node& self) {
    double* gx = self.parents[0]->grad_ref().data();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t xx = 0; xx < width; ++xx)
          gx[(p * h + top + y) * w + left + xx] += self.grad[(p * height + y) * width + xx];
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels, int ignore_value) {
  const Shape& s = logits.shape();
  if (s.size() != 4) throw ValidationError("softmax_cross_entropy expects [N,C,H,W], got " + to_string(s));
  const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  if (static_cast<std::int64_t>(labels.size()) != n * hw)
    throw ValidationError("softmax_cross_entropy: label count does not match logits " + to_string(s));
  const double* z = logits.value().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c * hw));
  auto valid_labels = std::make_shared<std::vector<int>>(labels.size(), -1);
  double total = 0.0;
  std::int64_t valid = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < hw; ++p) {
      const double* zp = z + b * c * hw + p;
      double mx = zp[0];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, zp[k * hw]);
      double se = 0.0;
      for (std::int64_t k = 0; k < c; ++k) se += std::exp(zp[k * hw] - mx);
      double* pp = probs->data() + b * c * hw + p;
      for (std::int64_t k = 0; k < c; ++k) pp[k * hw] = std::exp(zp[k * hw] - mx) / se;
      const int lab = labels[static_cast<std::size_t>(b * hw + p)];
      if (lab == ignore_value) continue;
      if (lab >= c) throw ValidationError("softmax_cross_entropy: label " + std::to_string(lab) + " >= classes");
      (*valid_labels)[static_cast<std::size_t>(b * hw + p)] = lab;
      total += mx + std::log(se) - zp[lab * hw];
      ++valid;
    }
  const double loss = valid > 0 ? total / static_cast<double>(valid) : 0.0;
  return make_node(Tensor({1}, loss), {logits}, [probs, valid_labels, valid, n, c, hw](Node& self) {
    if (valid == 0) return;
    double* gz = self.parents[0]->grad_ref().data();
    const double g = self.grad[0] / static_cast<double>(valid);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t p = 0; p < hw; ++p) {
        const int lab = (*valid_labels)[static_cast<std::size_t>(b * hw + p)];
        if (lab < 0) continue;
        const double* pp = probs->data() + b * c * hw + p;
        double* gp = gz + b * c * hw + p;
        for (std::int64_t k = 0; k < c; ++k) gp[k * hw] += g * (pp[k * hw] - (k == lab ? 1.0 : 0.0));
      }
  });
}

Var l1_loss(const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error("l1_loss", pred.shape(), target.shape());
  const std::int64_t n = target.numel();
  if (n == 0) throw ValidationError("l1_loss on empty tensors");
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(pred.value()[i] - target[i]);
  return make_node(Tensor({1}, s / static_cast<double>(n)), {pred}, [target, n](Node& self) {
    Node* np = self.parents[0].get();
    double* gp = np->grad_ref().data();
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = np->value[i] - target[i];
      gp[i] += d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
    }
  });
}

}  // namespace focalforge::ad
