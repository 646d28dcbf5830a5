#include "sac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

namespace sac {

namespace {

thread_local Tape* g_active_tape = nullptr;

void axpy(float* dst, const float* src, Dim n, float c = 1.0f) {
  for (Dim i = 0; i < n; ++i) dst[i] += c * src[i];
}

struct AxisSplit {
  Dim outer, len, inner;
};

AxisSplit axis_split(const Shape& shape, int axis) {
  int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError(strf("axis %d out of range for shape %s", axis, shape_str(shape).c_str()));
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) s.inner *= shape[static_cast<size_t>(i)];
  return s;
}

int norm_axis(const Shape& shape, int axis) {
  int nd = static_cast<int>(shape.size());
  int a = axis < 0 ? axis + nd : axis;
  if (a < 0 || a >= nd)
    throw ShapeError(strf("axis %d out of range for shape %s", axis, shape_str(shape).c_str()));
  return a;
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  Dim n = numel_of(shape);
  impl->shape = std::move(shape);
  impl->values = std::make_shared<std::vector<float>>(static_cast<size_t>(n), 0.0f);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->values->begin(), t.impl()->values->end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<Dim>(values.size()))
    throw ShapeError(strf("value count %zu does not match shape %s", values.size(),
                          shape_str(shape).c_str()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::make_shared<std::vector<float>>(std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stdev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& v : *t.impl()->values) v = static_cast<float>(rng.normal() * stdev);
  return t;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError(strf("item() on tensor of shape %s", shape_str(shape()).c_str()));
  return (*impl_->values)[0];
}

// ---- GradFlow ----

std::span<float> GradFlow::of(const std::shared_ptr<TensorImpl>& t) {
  auto it = index_.find(t.get());
  if (it == index_.end()) {
    index_.emplace(t.get(), entries_.size());
    entries_.push_back(Entry{t, std::vector<float>(t->values->size(), 0.0f)});
    return {entries_.back().g.data(), entries_.back().g.size()};
  }
  auto& g = entries_[it->second].g;
  return {g.data(), g.size()};
}

const std::vector<float>* GradFlow::find(const TensorImpl* t) const {
  auto it = index_.find(t);
  return it == index_.end() ? nullptr : &entries_[it->second].g;
}

// ---- Tape ----

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape* tape) : prev_(g_active_tape) { g_active_tape = tape; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> outs,
                  std::function<void(GradFlow&)> backward) {
  auto id = static_cast<std::int64_t>(nodes_.size());
  for (auto& o : outs) {
    o->node = id;
    o->requires_grad = true;
  }
  nodes_.push_back(Node{op, std::move(outs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss");
  if (!loss.requires_grad())
    throw ContractError("backward: loss is not connected to the tape");
  GradFlow flow;
  flow.of(loss.impl())[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    bool reached = false;
    for (auto& o : it->outs)
      if (flow.find(o.get())) {
        reached = true;
        break;
      }
    if (reached) it->backward(flow);
  }
  for (auto& e : flow.entries_) {
    if (!e.impl->requires_grad) continue;
    if (e.impl->grad.empty()) e.impl->grad.assign(e.impl->values->size(), 0.0f);
    axpy(e.impl->grad.data(), e.g.data(), static_cast<Dim>(e.g.size()));
  }
}

Tensor make_op_result(
    const char* op, Shape shape, std::vector<float> values,
    std::initializer_list<const Tensor*> inputs,
    const std::function<std::function<void(GradFlow&)>(const Tensor& out)>& make_backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::make_shared<std::vector<float>>(std::move(values));
  Tensor out(impl);
  Tape* tape = Tape::active();
  if (!tape) return out;
  bool needs_grad = false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) needs_grad = true;
  if (needs_grad) tape->record(op, {impl}, make_backward(out));
  return out;
}

// ---- elementwise ----

static void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(strf("%s: shape mismatch %s vs %s", op, shape_str(a.shape()).c_str(),
                          shape_str(b.shape()).c_str()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Dim n = a.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* pa = a.data();
  const float* pb = b.data();
  for (Dim i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = pa[i] + pb[i];
  return make_op_result("add", a.shape(), std::move(vals), {&a, &b}, [&](const Tensor& out) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    return [ai, bi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      if (ai->requires_grad) axpy(flow.of(ai).data(), g->data(), n);
      if (bi->requires_grad) axpy(flow.of(bi).data(), g->data(), n);
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Dim n = a.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* pa = a.data();
  const float* pb = b.data();
  for (Dim i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = pa[i] - pb[i];
  return make_op_result("sub", a.shape(), std::move(vals), {&a, &b}, [&](const Tensor& out) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    return [ai, bi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      if (ai->requires_grad) axpy(flow.of(ai).data(), g->data(), n);
      if (bi->requires_grad) axpy(flow.of(bi).data(), g->data(), n, -1.0f);
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Dim n = a.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* pa = a.data();
  const float* pb = b.data();
  for (Dim i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = pa[i] * pb[i];
  return make_op_result("mul", a.shape(), std::move(vals), {&a, &b}, [&](const Tensor& out) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    return [ai, bi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      const float* gd = g->data();
      if (ai->requires_grad) {
        auto da = flow.of(ai);
        const float* pb2 = bi->values->data();
        for (Dim i = 0; i < n; ++i) da[static_cast<size_t>(i)] += gd[i] * pb2[i];
      }
      if (bi->requires_grad) {
        auto db = flow.of(bi);
        const float* pa2 = ai->values->data();
        for (Dim i = 0; i < n; ++i) db[static_cast<size_t>(i)] += gd[i] * pa2[i];
      }
    };
  });
}

Tensor scale(const Tensor& x, float c) {
  Dim n = x.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* px = x.data();
  for (Dim i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = c * px[i];
  return make_op_result("scale", x.shape(), std::move(vals), {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, n, c](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      axpy(flow.of(xi).data(), g->data(), n, c);
    };
  });
}

// ---- matmul ----

namespace {

struct BatchMap {
  Shape out_batch;
  std::vector<Dim> a_stride, b_stride;  // strides in units of m*k / k*n blocks
  Dim count = 1;
};

BatchMap batch_map(const Shape& sa, const Shape& sb) {
  int ba = static_cast<int>(sa.size()) - 2;
  int bb = static_cast<int>(sb.size()) - 2;
  int nb = std::max(ba, bb);
  BatchMap m;
  m.out_batch.resize(static_cast<size_t>(nb));
  std::vector<Dim> da(static_cast<size_t>(nb), 1), db(static_cast<size_t>(nb), 1);
  for (int i = 0; i < nb; ++i) {
    int ia = i - (nb - ba);
    int ib = i - (nb - bb);
    if (ia >= 0) da[static_cast<size_t>(i)] = sa[static_cast<size_t>(ia)];
    if (ib >= 0) db[static_cast<size_t>(i)] = sb[static_cast<size_t>(ib)];
    Dim x = da[static_cast<size_t>(i)], y = db[static_cast<size_t>(i)];
    if (x != y && x != 1 && y != 1)
      throw ShapeError(strf("matmul: batch dims not broadcastable, %s vs %s",
                            shape_str(sa).c_str(), shape_str(sb).c_str()));
    m.out_batch[static_cast<size_t>(i)] = std::max(x, y);
    m.count *= m.out_batch[static_cast<size_t>(i)];
  }
  // row-major strides over each operand's own batch dims; 0 where broadcast
  m.a_stride.assign(static_cast<size_t>(nb), 0);
  m.b_stride.assign(static_cast<size_t>(nb), 0);
  Dim astr = 1, bstr = 1;
  for (int i = nb - 1; i >= 0; --i) {
    if (da[static_cast<size_t>(i)] != 1) {
      m.a_stride[static_cast<size_t>(i)] = astr;
      astr *= da[static_cast<size_t>(i)];
    }
    if (db[static_cast<size_t>(i)] != 1) {
      m.b_stride[static_cast<size_t>(i)] = bstr;
      bstr *= db[static_cast<size_t>(i)];
    }
  }
  return m;
}

void batch_offsets(const BatchMap& m, Dim flat, Dim* a_idx, Dim* b_idx) {
  Dim a = 0, b = 0;
  for (int i = static_cast<int>(m.out_batch.size()) - 1; i >= 0; --i) {
    Dim d = m.out_batch[static_cast<size_t>(i)];
    Dim r = flat % d;
    flat /= d;
    a += r * m.a_stride[static_cast<size_t>(i)];
    b += r * m.b_stride[static_cast<size_t>(i)];
  }
  *a_idx = a;
  *b_idx = b;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw ShapeError(strf("matmul: need >=2 dims, got %s and %s", shape_str(a.shape()).c_str(),
                          shape_str(b.shape()).c_str()));
  Dim mm = a.dim(-2), kk = a.dim(-1), k2 = b.dim(-2), nn = b.dim(-1);
  if (kk != k2)
    throw ShapeError(strf("matmul: inner dims differ, %s vs %s", shape_str(a.shape()).c_str(),
                          shape_str(b.shape()).c_str()));
  BatchMap bm = batch_map(a.shape(), b.shape());
  Shape out_shape = bm.out_batch;
  out_shape.push_back(mm);
  out_shape.push_back(nn);
  std::vector<float> vals(static_cast<size_t>(bm.count * mm * nn), 0.0f);
  const float* pa = a.data();
  const float* pb = b.data();
  for (Dim i = 0; i < bm.count; ++i) {
    Dim ai, bi;
    batch_offsets(bm, i, &ai, &bi);
    detail::gemm_nn(pa + ai * mm * kk, pb + bi * kk * nn, vals.data() + i * mm * nn, mm, kk, nn);
  }
  return make_op_result("matmul", std::move(out_shape), std::move(vals), {&a, &b},
                        [&](const Tensor& out) {
    auto aimpl = a.impl(), bimpl = b.impl(), oimpl = out.impl();
    return [aimpl, bimpl, oimpl, bm, mm, kk, nn](GradFlow& flow) {
      const auto* g = flow.find(oimpl.get());
      if (!g) return;
      const float* pg = g->data();
      if (aimpl->requires_grad) {
        auto da = flow.of(aimpl);
        const float* pb2 = bimpl->values->data();
        for (Dim i = 0; i < bm.count; ++i) {
          Dim ai, bi;
          batch_offsets(bm, i, &ai, &bi);
          // dA = dC * B^T
          detail::gemm_nt(pg + i * mm * nn, pb2 + bi * kk * nn, da.data() + ai * mm * kk, mm, nn, kk);
        }
      }
      if (bimpl->requires_grad) {
        auto db = flow.of(bimpl);
        const float* pa2 = aimpl->values->data();
        for (Dim i = 0; i < bm.count; ++i) {
          Dim ai, bi;
          batch_offsets(bm, i, &ai, &bi);
          // dB = A^T * dC
          detail::gemm_tn(pa2 + ai * mm * kk, pg + i * mm * nn, db.data() + bi * kk * nn, mm, kk, nn);
        }
      }
    };
  });
}

// ---- linear ----

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2)
    throw ShapeError(strf("linear: weight must be 2-d, got %s", shape_str(w.shape()).c_str()));
  Dim din = w.dim(1), dout = w.dim(0);
  if (x.dim(-1) != din)
    throw ShapeError(strf("linear: input %s incompatible with weight %s",
                          shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != dout))
    throw ShapeError(strf("linear: bias %s incompatible with weight %s",
                          shape_str(b.shape()).c_str(), shape_str(w.shape()).c_str()));
  Dim rows = x.numel() / din;
  std::vector<float> vals(static_cast<size_t>(rows * dout), 0.0f);
  detail::gemm_nt(x.data(), w.data(), vals.data(), rows, din, dout);
  if (b.defined()) {
    const float* pb = b.data();
    for (Dim r = 0; r < rows; ++r) axpy(vals.data() + r * dout, pb, dout);
  }
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  return make_op_result("linear", std::move(out_shape), std::move(vals), {&x, &w, &b},
                        [&](const Tensor& out) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    return [xi, wi, bi, oi, rows, din, dout](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      const float* pg = g->data();
      if (xi->requires_grad)
        detail::gemm_nn(pg, wi->values->data(), flow.of(xi).data(), rows, dout, din);
      if (wi->requires_grad)
        detail::gemm_tn(pg, xi->values->data(), flow.of(wi).data(), rows, dout, din);
      if (bi && bi->requires_grad) {
        auto db = flow.of(bi);
        for (Dim r = 0; r < rows; ++r) axpy(db.data(), pg + r * dout, dout);
      }
    };
  });
}

// ---- conv2d ----

namespace {

struct ConvGeom {
  Dim n, c, h, w;       // input
  Dim o, cg, kh, kw;    // kernel (cg = channels per group)
  Dim oh, ow, og;       // output (og = out channels per group)
  int stride, pad, groups;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride, int padding, int groups) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError(strf("conv2d: need 4-d input and kernel, got %s and %s",
                          shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str()));
  ConvGeom g;
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.cg = w.dim(1);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (stride < 1 || padding < 0 || groups < 1) throw GeometryError("conv2d: bad stride/pad/groups");
  if (g.c % groups != 0 || g.o % groups != 0 || g.cg != g.c / groups)
    throw ShapeError(strf("conv2d: input %s kernel %s incompatible with groups=%d",
                          shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str(), groups));
  g.og = g.o / groups;
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding || g.oh < 1 || g.ow < 1)
    throw GeometryError(strf("conv2d: kernel %lldx%lld with stride %d pad %d does not fit %lldx%lld",
                             static_cast<long long>(g.kh), static_cast<long long>(g.kw), stride,
                             padding, static_cast<long long>(g.h), static_cast<long long>(g.w)));
  return g;
}

// x points at one image [C,H,W]; writes col[cg*kh*kw, oh*ow] for one group.
void im2col(const float* x, const ConvGeom& g, Dim group, float* col) {
  Dim ohow = g.oh * g.ow;
  for (Dim cc = 0; cc < g.cg; ++cc) {
    const float* xc = x + (group * g.cg + cc) * g.h * g.w;
    for (Dim ki = 0; ki < g.kh; ++ki) {
      for (Dim kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((cc * g.kh + ki) * g.kw + kj) * ohow;
        for (Dim oy = 0; oy < g.oh; ++oy) {
          Dim iy = oy * g.stride - g.pad + ki;
          float* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, 0.0f);
            continue;
          }
          const float* src = xc + iy * g.w;
          for (Dim ox = 0; ox < g.ow; ++ox) {
            Dim ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Accumulates col[cg*kh*kw, oh*ow] back into one image's gradient.
void col2im_acc(const float* col, const ConvGeom& g, Dim group, float* dx) {
  Dim ohow = g.oh * g.ow;
  for (Dim cc = 0; cc < g.cg; ++cc) {
    float* xc = dx + (group * g.cg + cc) * g.h * g.w;
    for (Dim ki = 0; ki < g.kh; ++ki) {
      for (Dim kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((cc * g.kh + ki) * g.kw + kj) * ohow;
        for (Dim oy = 0; oy < g.oh; ++oy) {
          Dim iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* dst = xc + iy * g.w;
          const float* src = row + oy * g.ow;
          for (Dim ox = 0; ox < g.ow; ++ox) {
            Dim ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool conv_is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding, int groups) {
  ConvGeom g = conv_geom(x, w, stride, padding, groups);
  Dim kdim = g.cg * g.kh * g.kw;
  Dim ohow = g.oh * g.ow;
  std::vector<float> vals(static_cast<size_t>(g.n * g.o * ohow), 0.0f);
  const float* px = x.data();
  const float* pw = w.data();
  bool pointwise = conv_is_pointwise(g);
  std::vector<float> col(pointwise ? 0 : static_cast<size_t>(kdim * ohow));
  for (Dim im = 0; im < g.n; ++im) {
    const float* xim = px + im * g.c * g.h * g.w;
    float* yim = vals.data() + im * g.o * ohow;
    for (int gr = 0; gr < g.groups; ++gr) {
      const float* cptr;
      if (pointwise) {
        cptr = xim + gr * g.cg * g.h * g.w;
      } else {
        im2col(xim, g, gr, col.data());
        cptr = col.data();
      }
      detail::gemm_nn(pw + gr * g.og * kdim, cptr, yim + gr * g.og * ohow, g.og, kdim, ohow);
    }
  }
  Shape out_shape{g.n, g.o, g.oh, g.ow};
  return make_op_result("conv2d", std::move(out_shape), std::move(vals), {&x, &w},
                        [&](const Tensor& out) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    return [xi, wi, oi, g, kdim, ohow, pointwise](GradFlow& flow) {
      const auto* gout = flow.find(oi.get());
      if (!gout) return;
      const float* pg = gout->data();
      const float* pw2 = wi->values->data();
      const float* px2 = xi->values->data();
      bool need_dx = xi->requires_grad;
      bool need_dw = wi->requires_grad;
      std::span<float> dx = need_dx ? flow.of(xi) : std::span<float>();
      std::span<float> dw = need_dw ? flow.of(wi) : std::span<float>();
      std::vector<float> col(pointwise && !need_dw ? 0 : static_cast<size_t>(kdim * ohow));
      std::vector<float> dcol(pointwise ? 0 : static_cast<size_t>(kdim * ohow));
      for (Dim im = 0; im < g.n; ++im) {
        const float* gim = pg + im * g.o * ohow;
        const float* xim = px2 + im * g.c * g.h * g.w;
        for (int gr = 0; gr < g.groups; ++gr) {
          const float* gblk = gim + gr * g.og * ohow;
          if (need_dx) {
            if (pointwise) {
              detail::gemm_tn(pw2 + gr * g.og * kdim, gblk,
                              dx.data() + im * g.c * g.h * g.w + gr * g.cg * g.h * g.w, g.og, kdim,
                              ohow);
            } else {
              std::fill(dcol.begin(), dcol.end(), 0.0f);
              detail::gemm_tn(pw2 + gr * g.og * kdim, gblk, dcol.data(), g.og, kdim, ohow);
              col2im_acc(dcol.data(), g, gr, dx.data() + im * g.c * g.h * g.w);
            }
          }
          if (need_dw) {
            const float* cptr;
            if (pointwise) {
              cptr = xim + gr * g.cg * g.h * g.w;
            } else {
              im2col(xim, g, gr, col.data());
              cptr = col.data();
            }
            detail::gemm_nt(gblk, cptr, dw.data() + gr * g.og * kdim, g.og, ohow, kdim);
          }
        }
      }
    };
  });
}

// ---- layernorm ----

Tensor layernorm(const Tensor& x, int axis, const Tensor& gain, const Tensor& bias, float eps) {
  AxisSplit s = axis_split(x.shape(), axis);
  if (gain.numel() != s.len || bias.numel() != s.len)
    throw ShapeError(strf("layernorm: gain/bias must have %lld elements",
                          static_cast<long long>(s.len)));
  Dim positions = s.outer * s.inner;
  std::vector<float> vals(static_cast<size_t>(x.numel()));
  auto mean_buf = std::make_shared<std::vector<float>>(static_cast<size_t>(positions));
  auto istd_buf = std::make_shared<std::vector<float>>(static_cast<size_t>(positions));
  const float* px = x.data();
  const float* pgain = gain.data();
  const float* pbias = bias.data();
  for (Dim o = 0; o < s.outer; ++o) {
    for (Dim i = 0; i < s.inner; ++i) {
      const float* base = px + o * s.len * s.inner + i;
      double sum = 0.0, sq = 0.0;
      for (Dim c = 0; c < s.len; ++c) {
        double v = base[c * s.inner];
        sum += v;
        sq += v * v;
      }
      double mean = sum / static_cast<double>(s.len);
      double var = sq / static_cast<double>(s.len) - mean * mean;
      if (var < 0.0) var = 0.0;
      double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      Dim pos = o * s.inner + i;
      (*mean_buf)[static_cast<size_t>(pos)] = static_cast<float>(mean);
      (*istd_buf)[static_cast<size_t>(pos)] = static_cast<float>(istd);
      float* out_base = vals.data() + o * s.len * s.inner + i;
      for (Dim c = 0; c < s.len; ++c) {
        double xhat = (static_cast<double>(base[c * s.inner]) - mean) * istd;
        out_base[c * s.inner] = static_cast<float>(xhat * pgain[c] + pbias[c]);
      }
    }
  }
  return make_op_result("layernorm", x.shape(), std::move(vals), {&x, &gain, &bias},
                        [&](const Tensor& out) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    return [xi, gi, bi, oi, s, mean_buf, istd_buf](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      const float* pg = g->data();
      const float* px2 = xi->values->data();
      const float* pgain2 = gi->values->data();
      bool need_dx = xi->requires_grad;
      std::span<float> dx = need_dx ? flow.of(xi) : std::span<float>();
      std::span<float> dgain = gi->requires_grad ? flow.of(gi) : std::span<float>();
      std::span<float> dbias = bi->requires_grad ? flow.of(bi) : std::span<float>();
      double inv_len = 1.0 / static_cast<double>(s.len);
      for (Dim o = 0; o < s.outer; ++o) {
        for (Dim i = 0; i < s.inner; ++i) {
          Dim pos = o * s.inner + i;
          double mean = (*mean_buf)[static_cast<size_t>(pos)];
          double istd = (*istd_buf)[static_cast<size_t>(pos)];
          const float* xb = px2 + o * s.len * s.inner + i;
          const float* gb = pg + o * s.len * s.inner + i;
          double sum_gg = 0.0, sum_ggx = 0.0;
          for (Dim c = 0; c < s.len; ++c) {
            double xhat = (static_cast<double>(xb[c * s.inner]) - mean) * istd;
            double gg = static_cast<double>(gb[c * s.inner]) * pgain2[c];
            sum_gg += gg;
            sum_ggx += gg * xhat;
            if (!dgain.empty()) dgain[static_cast<size_t>(c)] += static_cast<float>(gb[c * s.inner] * xhat);
            if (!dbias.empty()) dbias[static_cast<size_t>(c)] += gb[c * s.inner];
          }
          if (!need_dx) continue;
          double m_gg = sum_gg * inv_len;
          double m_ggx = sum_ggx * inv_len;
          float* dxb = dx.data() + o * s.len * s.inner + i;
          for (Dim c = 0; c < s.len; ++c) {
            double xhat = (static_cast<double>(xb[c * s.inner]) - mean) * istd;
            double gg = static_cast<double>(gb[c * s.inner]) * pgain2[c];
            dxb[c * s.inner] += static_cast<float>((gg - m_gg - xhat * m_ggx) * istd);
          }
        }
      }
    };
  });
}

// ---- reductions ----

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4)
    throw ShapeError(strf("global_avg_pool: need [N,C,H,W], got %s", shape_str(x.shape()).c_str()));
  Dim n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<float> vals(static_cast<size_t>(n * c));
  const float* px = x.data();
  for (Dim i = 0; i < n * c; ++i) {
    double sum = 0.0;
    const float* base = px + i * hw;
    for (Dim j = 0; j < hw; ++j) sum += base[j];
    vals[static_cast<size_t>(i)] = static_cast<float>(sum / static_cast<double>(hw));
  }
  return make_op_result("global_avg_pool", {n, c}, std::move(vals), {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, n, c, hw](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      float inv = 1.0f / static_cast<float>(hw);
      for (Dim i = 0; i < n * c; ++i) {
        float gv = (*g)[static_cast<size_t>(i)] * inv;
        float* base = dx.data() + i * hw;
        for (Dim j = 0; j < hw; ++j) base[j] += gv;
      }
    };
  });
}

Tensor mean_axis(const Tensor& x, int axis) {
  AxisSplit s = axis_split(x.shape(), axis);
  int a = norm_axis(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < x.ndim(); ++i)
    if (i != a) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<float> vals(static_cast<size_t>(s.outer * s.inner));
  const float* px = x.data();
  for (Dim o = 0; o < s.outer; ++o) {
    for (Dim i = 0; i < s.inner; ++i) {
      double sum = 0.0;
      const float* base = px + o * s.len * s.inner + i;
      for (Dim c = 0; c < s.len; ++c) sum += base[c * s.inner];
      vals[static_cast<size_t>(o * s.inner + i)] = static_cast<float>(sum / static_cast<double>(s.len));
    }
  }
  return make_op_result("mean_axis", std::move(out_shape), std::move(vals), {&x},
                        [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, s](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      float inv = 1.0f / static_cast<float>(s.len);
      for (Dim o = 0; o < s.outer; ++o) {
        for (Dim i = 0; i < s.inner; ++i) {
          float gv = (*g)[static_cast<size_t>(o * s.inner + i)] * inv;
          float* base = dx.data() + o * s.len * s.inner + i;
          for (Dim c = 0; c < s.len; ++c) base[c * s.inner] += gv;
        }
      }
    };
  });
}

Tensor sum_all(const Tensor& x) {
  double sum = 0.0;
  Dim n = x.numel();
  const float* px = x.data();
  for (Dim i = 0; i < n; ++i) sum += px[i];
  return make_op_result("sum_all", {1}, {static_cast<float>(sum)}, {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      float gv = (*g)[0];
      for (Dim i = 0; i < n; ++i) dx[static_cast<size_t>(i)] += gv;
    };
  });
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError(strf("reshape: %s has %lld elements, target %s has %lld",
                          shape_str(x.shape()).c_str(), static_cast<long long>(x.numel()),
                          shape_str(shape).c_str(), static_cast<long long>(numel_of(shape))));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = x.impl()->values;  // view: same buffer
  Tensor out(impl);
  Tape* tape = Tape::active();
  if (tape && x.requires_grad()) {
    auto xi = x.impl();
    auto oi = impl;
    Dim n = x.numel();
    tape->record("reshape", {impl}, [xi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      axpy(flow.of(xi).data(), g->data(), n);
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd)
    throw ShapeError(strf("permute: got %zu axes for %d-d tensor", perm.size(), nd));
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)])
      throw ShapeError("permute: invalid axis list");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  // strides of input, mapped to output axis order
  std::vector<Dim> in_stride(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  std::vector<Dim> map_stride(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) map_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  Dim n = x.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* px = x.data();
  std::vector<Dim> idx(static_cast<size_t>(nd), 0);
  for (Dim flat = 0; flat < n; ++flat) {
    Dim src = 0;
    for (int i = 0; i < nd; ++i) src += idx[static_cast<size_t>(i)] * map_stride[static_cast<size_t>(i)];
    vals[static_cast<size_t>(flat)] = px[src];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  return make_op_result("permute", std::move(out_shape), std::move(vals), {&x},
                        [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    Shape oshape = out.shape();
    return [xi, oi, oshape, map_stride, n, nd](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      std::vector<Dim> idx(static_cast<size_t>(nd), 0);
      for (Dim flat = 0; flat < n; ++flat) {
        Dim src = 0;
        for (int i = 0; i < nd; ++i) src += idx[static_cast<size_t>(i)] * map_stride[static_cast<size_t>(i)];
        dx[static_cast<size_t>(src)] += (*g)[static_cast<size_t>(flat)];
        for (int i = nd - 1; i >= 0; --i) {
          if (++idx[static_cast<size_t>(i)] < oshape[static_cast<size_t>(i)]) break;
          idx[static_cast<size_t>(i)] = 0;
        }
      }
    };
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  int a = norm_axis(xs[0].shape(), axis);
  Shape out_shape = xs[0].shape();
  Dim total = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != xs[0].ndim())
      throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < t.ndim(); ++i) {
      if (i == a) continue;
      if (t.dim(i) != xs[0].dim(i))
        throw ShapeError(strf("concat: ragged shapes %s vs %s", shape_str(xs[0].shape()).c_str(),
                              shape_str(t.shape()).c_str()));
    }
    total += t.dim(a);
  }
  out_shape[static_cast<size_t>(a)] = total;
  AxisSplit s = axis_split(out_shape, a);
  std::vector<float> vals(static_cast<size_t>(numel_of(out_shape)));
  Dim off = 0;
  for (const Tensor& t : xs) {
    Dim len = t.dim(a);
    const float* pt = t.data();
    for (Dim o = 0; o < s.outer; ++o) {
      std::memcpy(vals.data() + (o * s.len + off) * s.inner, pt + o * len * s.inner,
                  static_cast<size_t>(len * s.inner) * sizeof(float));
    }
    off += len;
  }
  std::vector<const Tensor*> ins;
  for (const Tensor& t : xs) ins.push_back(&t);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = out_shape;
  impl->values = std::make_shared<std::vector<float>>(std::move(vals));
  Tensor out(impl);
  Tape* tape = Tape::active();
  bool rg = false;
  for (const Tensor& t : xs)
    if (t.requires_grad()) rg = true;
  if (tape && rg) {
    std::vector<std::shared_ptr<TensorImpl>> xi;
    std::vector<Dim> lens;
    for (const Tensor& t : xs) {
      xi.push_back(t.impl());
      lens.push_back(t.dim(a));
    }
    auto oi = impl;
    tape->record("concat", {impl}, [xi, lens, oi, s](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g) return;
      Dim off2 = 0;
      for (size_t t = 0; t < xi.size(); ++t) {
        Dim len = lens[t];
        if (xi[t]->requires_grad) {
          auto dx = flow.of(xi[t]);
          for (Dim o = 0; o < s.outer; ++o)
            axpy(dx.data() + o * len * s.inner, g->data() + (o * s.len + off2) * s.inner,
                 len * s.inner);
        }
        off2 += len;
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Dim>& sizes) {
  int a = norm_axis(x.shape(), axis);
  AxisSplit s = axis_split(x.shape(), a);
  Dim total = 0;
  for (Dim sz : sizes) {
    if (sz < 1) throw ShapeError("split: sizes must be positive");
    total += sz;
  }
  if (total != s.len)
    throw ShapeError(strf("split: sizes sum to %lld but axis %d of %s has %lld",
                          static_cast<long long>(total), axis, shape_str(x.shape()).c_str(),
                          static_cast<long long>(s.len)));
  std::vector<Tensor> parts;
  std::vector<std::shared_ptr<TensorImpl>> out_impls;
  const float* px = x.data();
  Dim off = 0;
  for (Dim sz : sizes) {
    Shape shp = x.shape();
    shp[static_cast<size_t>(a)] = sz;
    std::vector<float> vals(static_cast<size_t>(numel_of(shp)));
    for (Dim o = 0; o < s.outer; ++o)
      std::memcpy(vals.data() + o * sz * s.inner, px + (o * s.len + off) * s.inner,
                  static_cast<size_t>(sz * s.inner) * sizeof(float));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shp);
    impl->values = std::make_shared<std::vector<float>>(std::move(vals));
    out_impls.push_back(impl);
    parts.emplace_back(impl);
    off += sz;
  }
  Tape* tape = Tape::active();
  if (tape && x.requires_grad()) {
    auto xi = x.impl();
    std::vector<Dim> lens = sizes;
    tape->record("split", out_impls, [xi, out_impls, lens, s](GradFlow& flow) {
      auto dx = flow.of(xi);
      Dim off2 = 0;
      for (size_t t = 0; t < out_impls.size(); ++t) {
        const auto* g = flow.find(out_impls[t].get());
        if (g) {
          for (Dim o = 0; o < s.outer; ++o)
            axpy(dx.data() + (o * s.len + off2) * s.inner, g->data() + o * lens[t] * s.inner,
                 lens[t] * s.inner);
        }
        off2 += lens[t];
      }
    });
  }
  return parts;
}

Tensor repeat_axis0(const Tensor& x, Dim t) {
  if (t < 1) throw ContractError("repeat_axis0: t must be >= 1");
  Dim n = x.numel();
  Shape out_shape;
  out_shape.push_back(t);
  for (Dim d : x.shape()) out_shape.push_back(d);
  std::vector<float> vals(static_cast<size_t>(t * n));
  for (Dim i = 0; i < t; ++i)
    std::memcpy(vals.data() + i * n, x.data(), static_cast<size_t>(n) * sizeof(float));
  return make_op_result("repeat_axis0", std::move(out_shape), std::move(vals), {&x},
                        [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, t, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      for (Dim i = 0; i < t; ++i) axpy(dx.data(), g->data() + i * n, n);
    };
  });
}

// ---- nonlinearities ----

Tensor softmax_lastdim(const Tensor& x) {
  Dim c = x.dim(-1);
  Dim rows = x.numel() / c;
  std::vector<float> vals(static_cast<size_t>(x.numel()));
  const float* px = x.data();
  for (Dim r = 0; r < rows; ++r) {
    const float* xr = px + r * c;
    float* vr = vals.data() + r * c;
    float m = xr[0];
    for (Dim j = 1; j < c; ++j) m = std::max(m, xr[j]);
    double sum = 0.0;
    for (Dim j = 0; j < c; ++j) {
      double e = std::exp(static_cast<double>(xr[j]) - static_cast<double>(m));
      vr[j] = static_cast<float>(e);
      sum += e;
    }
    double inv = 1.0 / sum;
    for (Dim j = 0; j < c; ++j) vr[j] = static_cast<float>(vr[j] * inv);
  }
  return make_op_result("softmax", x.shape(), std::move(vals), {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, rows, c](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      const float* ps = oi->values->data();
      for (Dim r = 0; r < rows; ++r) {
        const float* sr = ps + r * c;
        const float* gr = g->data() + r * c;
        double dot = 0.0;
        for (Dim j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * sr[j];
        float* dr = dx.data() + r * c;
        for (Dim j = 0; j < c; ++j)
          dr[j] += static_cast<float>(sr[j] * (static_cast<double>(gr[j]) - dot));
      }
    };
  });
}

Tensor gelu(const Tensor& x) {
  Dim n = x.numel();
  std::vector<float> vals(static_cast<size_t>(n));
  const float* px = x.data();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (Dim i = 0; i < n; ++i) {
    double v = px[i];
    vals[static_cast<size_t>(i)] = static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_op_result("gelu", x.shape(), std::move(vals), {&x}, [&](const Tensor& out) {
    auto xi = x.impl(), oi = out.impl();
    return [xi, oi, n](GradFlow& flow) {
      const auto* g = flow.find(oi.get());
      if (!g || !xi->requires_grad) return;
      auto dx = flow.of(xi);
      const float* px2 = xi->values->data();
      constexpr double kInvSqrt2 = 0.70710678118654752440;
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      for (Dim i = 0; i < n; ++i) {
        double v = px2[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[static_cast<size_t>(i)] += static_cast<float>((*g)[static_cast<size_t>(i)] * (cdf + v * pdf));
      }
    };
  });
}

}  // namespace sac
