#include "xtransfer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xtransfer/errors.hpp"

namespace xtransfer::ad {

// --- Var / Tape ------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }
Tensor Var::grad() const { return tape_->grad(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  bool req = false;
  for (const auto& p : parents) {
    if (p.tape_ != this) throw Error("autodiff: mixing vars from different tapes");
    req = req || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, req, false, req ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id_];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id_];
  return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw Error("autodiff: root belongs to another tape");
  if (nodes_[root.id_].value.size() != 1) throw ShapeError("backward root must be a scalar");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[root.id_].requires_grad) return;
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw Error("autodiff: uninitialized Var");
  return *v.tape();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// --- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const Var parents[] = {a, b};
  return tape_of(a).record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    for (const Var& v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const Var parents[] = {a, b};
  return tape_of(a).record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Var parents[] = {a, b};
  return tape_of(a).record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv2 = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double s, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v * s + c;
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = 1.0 / (1.0 + std::exp(-x[i]));
      ga[i] += g[i] * y * (1.0 - y);
    }
  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (auto& x : out.values()) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    x = 0.5 * x * (1.0 + std::tanh(u));
  }
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = xv[i];
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      ga[i] += g[i] * d;
    }
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::exp(x[i]);
  });
}

Var mul_scalar(Var a, Var s) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: scalar operand must have one element");
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.values()) v *= sv;
  const Var parents[] = {a, s};
  return tape_of(a).record(std::move(out), parents, [a, s](Tape& t, const Tensor& g) {
    const double sv2 = t.value(s)[0];
    const Tensor& av = t.value(a);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv2;
    }
    if (t.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad_buffer(s)[0] += acc;
    }
  });
}

// --- reductions ------------------------------------------------------------

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const Var parents[] = {a};
  return tape_of(a).record(Tensor({1}, acc), parents, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const Var parents[] = {a};
  return tape_of(a).record(Tensor({1}, acc / static_cast<double>(n)), parents, [a, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const double d = g[0] / static_cast<double>(n);
    for (auto& v : ga.values()) v += d;
  });
}

Var abs_sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += std::abs(v);
  const Var parents[] = {a};
  return tape_of(a).record(Tensor({1}, acc), parents, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[0] * static_cast<double>((x[i] > 0) - (x[i] < 0));
  });
}

Var l2_norm(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v * v;
  const double n = std::sqrt(acc);
  const Var parents[] = {a};
  return tape_of(a).record(Tensor({1}, n), parents, [a, n](Tape& t, const Tensor& g) {
    if (n == 0.0) return;
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[0] * x[i] / n;
  });
}

Var total_variation(Var a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("total_variation needs at least two axes");
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t planes = (h > 0 && w > 0) ? a.value().size() / (h * w) : 0;
  const double* x = a.value().data();
  double acc = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* base = x + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        if (j + 1 < w) acc += std::abs(base[i * w + j + 1] - base[i * w + j]);
        if (i + 1 < h) acc += std::abs(base[(i + 1) * w + j] - base[i * w + j]);
      }
    }
  }
  const Var parents[] = {a};
  return tape_of(a).record(Tensor({1}, acc), parents, [a, h, w, planes](Tape& t, const Tensor& g) {
    const double* xv = t.value(a).data();
    double* gx = t.grad_buffer(a).data();
    const double gs = g[0];
    for (std::size_t p = 0; p < planes; ++p) {
      const double* base = xv + p * h * w;
      double* gb = gx + p * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          if (j + 1 < w) {
            const double d = base[i * w + j + 1] - base[i * w + j];
            const double sg = gs * static_cast<double>((d > 0) - (d < 0));
            gb[i * w + j + 1] += sg;
            gb[i * w + j] -= sg;
          }
          if (i + 1 < h) {
            const double d = base[(i + 1) * w + j] - base[i * w + j];
            const double sg = gs * static_cast<double>((d > 0) - (d < 0));
            gb[(i + 1) * w + j] += sg;
            gb[i * w + j] -= sg;
          }
        }
      }
    }
  });
}

// --- shape -----------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var add_broadcast(Var x, Var d) {
  const Shape& xs = x.shape();
  const Shape& ds = d.shape();
  if (xs.size() != ds.size() + 1 || !std::equal(ds.begin(), ds.end(), xs.begin() + 1)) {
    throw ShapeError("add_broadcast: " + shape_string(xs) + " vs " + shape_string(ds));
  }
  const std::size_t inner = d.value().size();
  const std::size_t batch = xs[0];
  Tensor out = x.value();
  const double* dv = d.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* o = out.data() + b * inner;
    for (std::size_t i = 0; i < inner; ++i) o[i] += dv[i];
  }
  const Var parents[] = {x, d};
  return tape_of(x).record(std::move(out), parents, [x, d, batch, inner](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(d)) {
      double* gd = t.grad_buffer(d).data();
      for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = g.data() + b * inner;
        for (std::size_t i = 0; i < inner; ++i) gd[i] += gb[i];
      }
    }
  });
}

Var patch_blend(Var x, Var mask_logits, Var pattern_logits) {
  require_rank(x, 4, "patch_blend");
  require_rank(mask_logits, 2, "patch_blend");
  require_rank(pattern_logits, 3, "patch_blend");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (mask_logits.shape() != Shape{h, w} || pattern_logits.shape() != Shape{ch, h, w}) {
    throw ShapeError("patch_blend: mask/pattern resolution does not match the image batch");
  }
  const std::size_t hw = h * w;
  std::vector<double> m(hw), p(ch * hw);
  for (std::size_t i = 0; i < hw; ++i) m[i] = 1.0 / (1.0 + std::exp(-mask_logits.value()[i]));
  for (std::size_t i = 0; i < ch * hw; ++i) p[i] = 1.0 / (1.0 + std::exp(-pattern_logits.value()[i]));
  Tensor out = x.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      double* o = out.data() + (b * ch + c) * hw;
      const double* pc = p.data() + c * hw;
      for (std::size_t i = 0; i < hw; ++i) o[i] = m[i] * pc[i] + (1.0 - m[i]) * o[i];
    }
  }
  const Var parents[] = {x, mask_logits, pattern_logits};
  return tape_of(x).record(
      std::move(out), parents,
      [x, mask_logits, pattern_logits, batch, ch, hw, m = std::move(m), p = std::move(p)](Tape& t, const Tensor& g) {
        const double* xv = t.value(x).data();
        const bool gx_req = t.requires_grad(x);
        const bool gm_req = t.requires_grad(mask_logits);
        const bool gp_req = t.requires_grad(pattern_logits);
        double* gx = gx_req ? t.grad_buffer(x).data() : nullptr;
        std::vector<double> dm(hw, 0.0), dp(ch * hw, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (b * ch + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double gi = g[off + i];
              if (gx) gx[off + i] += gi * (1.0 - m[i]);
              dm[i] += gi * (p[c * hw + i] - xv[off + i]);
              dp[c * hw + i] += gi * m[i];
            }
          }
        }
        if (gm_req) {
          double* gm = t.grad_buffer(mask_logits).data();
          for (std::size_t i = 0; i < hw; ++i) gm[i] += dm[i] * m[i] * (1.0 - m[i]);
        }
        if (gp_req) {
          double* gp = t.grad_buffer(pattern_logits).data();
          for (std::size_t i = 0; i < ch * hw; ++i) gp[i] += dp[i] * p[i] * (1.0 - p[i]);
        }
      });
}

namespace {

struct AxisSample {
  std::size_t i0, i1;
  double f;
};

// Corner-aligned source coordinate for each output index.
std::vector<AxisSample> axis_samples(std::size_t in, std::size_t out) {
  std::vector<AxisSample> s(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src =
        out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    s[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return s;
}

}  // namespace

Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("resize_bilinear needs at least two axes");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: zero output size");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h == out_h && w == out_w) return x;
  const std::size_t planes = x.value().size() / (h * w);
  Shape os = s;
  os[os.size() - 2] = out_h;
  os[os.size() - 1] = out_w;
  const auto ys = axis_samples(h, out_h);
  const auto xs = axis_samples(w, out_w);
  Tensor out(os);
  const double* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& sy = ys[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& sx = xs[ox];
        const double a = src[sy.i0 * w + sx.i0], b = src[sy.i0 * w + sx.i1];
        const double c = src[sy.i1 * w + sx.i0], d = src[sy.i1 * w + sx.i1];
        const double top = a + sx.f * (b - a);
        const double bot = c + sx.f * (d - c);
        dst[oy * out_w + ox] = top + sy.f * (bot - top);
      }
    }
  }
  const Var parents[] = {x};
  return tape_of(x).record(std::move(out), parents, [x, ys, xs, planes, h, w, out_h, out_w](Tape& t, const Tensor& g) {
    double* gx = t.grad_buffer(x).data();
    for (std::size_t p = 0; p < planes; ++p) {
      double* gs = gx + p * h * w;
      const double* go = g.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& sy = ys[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& sx = xs[ox];
          const double v = go[oy * out_w + ox];
          gs[sy.i0 * w + sx.i0] += v * (1 - sy.f) * (1 - sx.f);
          gs[sy.i0 * w + sx.i1] += v * (1 - sy.f) * sx.f;
          gs[sy.i1 * w + sx.i0] += v * sy.f * (1 - sx.f);
          gs[sy.i1 * w + sx.i1] += v * sy.f * sx.f;
        }
      }
    }
  });
}

// --- nn --------------------------------------------------------------------

namespace {

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  // need 0 <= o*stride + k - pad <= in-1
  const std::ptrdiff_t ks = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t l = 0;
  if (ks < 0) l = (-ks + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t hmax = (static_cast<std::ptrdiff_t>(in) - 1 - ks);
  std::ptrdiff_t h_ = hmax < 0 ? 0 : hmax / static_cast<std::ptrdiff_t>(stride) + 1;
  if (h_ > static_cast<std::ptrdiff_t>(out)) h_ = static_cast<std::ptrdiff_t>(out);
  if (l > h_) l = h_;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h_);
}

}  // namespace

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
  const std::size_t cout = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != cin || w.shape()[3] != k) throw ShapeError("conv2d: weight shape mismatch");
  if (b.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape mismatch");
  if (ih + 2 * pad < k || iw + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = (ih + 2 * pad - k) / stride + 1;
  const std::size_t ow = (iw + 2 * pad - k) / stride + 1;

  struct Geometry {
    std::vector<std::size_t> ylo, yhi, xlo, xhi;
  } geo;
  geo.ylo.resize(k);
  geo.yhi.resize(k);
  geo.xlo.resize(k);
  geo.xhi.resize(k);
  for (std::size_t kk = 0; kk < k; ++kk) {
    valid_range(ih, oh, kk, stride, pad, geo.ylo[kk], geo.yhi[kk]);
    valid_range(iw, ow, kk, stride, pad, geo.xlo[kk], geo.xhi[kk]);
  }

  Tensor out({batch, cout, oh, ow});
  const double* xv = x.value().data();
  const double* wv = w.value().data();
  const double* bv = b.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* op = out.data() + (n * cout + o) * oh * ow;
      std::fill(op, op + oh * ow, bv[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* ip = xv + (n * cin + c) * ih * iw;
        const double* wp = wv + (o * cin + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wt = wp[ky * k + kx];
            for (std::size_t y = geo.ylo[ky]; y < geo.yhi[ky]; ++y) {
              const double* irow = ip + (y * stride + ky - pad) * iw;
              double* orow = op + y * ow;
              for (std::size_t xo = geo.xlo[kx]; xo < geo.xhi[kx]; ++xo) {
                orow[xo] += wt * irow[xo * stride + kx - pad];
              }
            }
          }
        }
      }
    }
  }

  const Var parents[] = {x, w, b};
  return tape_of(x).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    const double* xv2 = t.value(x).data();
    const double* wv2 = t.value(w).data();
    double* gx = t.requires_grad(x) ? t.grad_buffer(x).data() : nullptr;
    double* gw = t.requires_grad(w) ? t.grad_buffer(w).data() : nullptr;
    double* gb = t.requires_grad(b) ? t.grad_buffer(b).data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < cout; ++o) {
        const double* gp = g.data() + (n * cout + o) * oh * ow;
        if (gb) {
          double acc = 0.0;
          for (std::size_t i = 0; i < oh * ow; ++i) acc += gp[i];
          gb[o] += acc;
        }
        for (std::size_t c = 0; c < cin; ++c) {
          const double* ip = xv2 + (n * cin + c) * ih * iw;
          double* gip = gx ? gx + (n * cin + c) * ih * iw : nullptr;
          const double* wp = wv2 + (o * cin + c) * k * k;
          double* gwp = gw ? gw + (o * cin + c) * k * k : nullptr;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double wt = wp[ky * k + kx];
              double wacc = 0.0;
              for (std::size_t y = geo.ylo[ky]; y < geo.yhi[ky]; ++y) {
                const std::size_t row = (y * stride + ky - pad) * iw;
                const double* grow = gp + y * ow;
                if (gip) {
                  double* girow = gip + row;
                  for (std::size_t xo = geo.xlo[kx]; xo < geo.xhi[kx]; ++xo) {
                    girow[xo * stride + kx - pad] += wt * grow[xo];
                  }
                }
                if (gwp) {
                  const double* irow = ip + row;
                  for (std::size_t xo = geo.xlo[kx]; xo < geo.xhi[kx]; ++xo) {
                    wacc += grow[xo] * irow[xo * stride + kx - pad];
                  }
                }
              }
              if (gwp) gwp[ky * k + kx] += wacc;
            }
          }
        }
      }
    }
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (w.shape()[1] != in || b.shape() != Shape{out_dim}) throw ShapeError("linear: shape mismatch");
  Tensor out({batch, out_dim});
  const double* xv = x.value().data();
  const double* wv = w.value().data();
  const double* bv = b.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = bv[o];
      const double* xr = xv + n * in;
      const double* wr = wv + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      out[n * out_dim + o] = acc;
    }
  }
  const Var parents[] = {x, w, b};
  return tape_of(x).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    const double* xv2 = t.value(x).data();
    const double* wv2 = t.value(w).data();
    double* gx = t.requires_grad(x) ? t.grad_buffer(x).data() : nullptr;
    double* gw = t.requires_grad(w) ? t.grad_buffer(w).data() : nullptr;
    double* gb = t.requires_grad(b) ? t.grad_buffer(b).data() : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double go = g[n * out_dim + o];
        if (go == 0.0) continue;
        if (gb) gb[o] += go;
        if (gx) {
          double* gxr = gx + n * in;
          const double* wr = wv2 + o * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
        if (gw) {
          double* gwr = gw + o * in;
          const double* xr = xv2 + n * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t n = a.shape()[0], d = a.shape()[1], m = b.shape()[0];
  if (b.shape()[1] != d) throw ShapeError("matmul_nt: inner dimension mismatch");
  Tensor out({n, m});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += av[i * d + k] * bv[j * d + k];
      out[i * m + j] = acc;
    }
  }
  const Var parents[] = {a, b};
  return tape_of(a).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    const double* av2 = t.value(a).data();
    const double* bv2 = t.value(b).data();
    double* ga = t.requires_grad(a) ? t.grad_buffer(a).data() : nullptr;
    double* gb = t.requires_grad(b) ? t.grad_buffer(b).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = g[i * m + j];
        for (std::size_t k = 0; k < d; ++k) {
          if (ga) ga[i * d + k] += gij * bv2[j * d + k];
          if (gb) gb[j * d + k] += gij * av2[i * d + k];
        }
      }
    }
  });
}

Var l2_normalize_rows(Var x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  Tensor out = x.value();
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    double* row = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) acc += row[i] * row[i];
    norms[r] = std::max(std::sqrt(acc), 1e-12);
    for (std::size_t i = 0; i < d; ++i) row[i] /= norms[r];
  }
  const Var parents[] = {x};
  return tape_of(x).record(std::move(out), parents, [x, rows, d, norms = std::move(norms)](Tape& t, const Tensor& g) {
    const double* xv = t.value(x).data();
    double* gx = t.grad_buffer(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv + r * d;
      const double* gr = g.data() + r * d;
      const double inv = 1.0 / norms[r];
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += xr[i] * inv * gr[i];
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += (gr[i] - xr[i] * inv * dot) * inv;
    }
  });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a, b, "row_dot");
  require_rank(a, 2, "row_dot");
  const std::size_t rows = a.shape()[0], d = a.shape()[1];
  Tensor out({rows});
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += av[r * d + i] * bv[r * d + i];
    out[r] = acc;
  }
  const Var parents[] = {a, b};
  return tape_of(a).record(std::move(out), parents, [=](Tape& t, const Tensor& g) {
    const double* av2 = t.value(a).data();
    const double* bv2 = t.value(b).data();
    double* ga = t.requires_grad(a) ? t.grad_buffer(a).data() : nullptr;
    double* gb = t.requires_grad(b) ? t.grad_buffer(b).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < d; ++i) {
        if (ga) ga[r * d + i] += g[r] * bv2[r * d + i];
        if (gb) gb[r * d + i] += g[r] * av2[r * d + i];
      }
    }
  });
}

Var embedding_bag_mean(Var table, const std::vector<std::vector<std::size_t>>& ids) {
  require_rank(table, 2, "embedding_bag_mean");
  const std::size_t vocab = table.shape()[0], e = table.shape()[1];
  Tensor out({ids.size(), e});
  const double* tv = table.value().data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r].empty()) continue;
    const double inv = 1.0 / static_cast<double>(ids[r].size());
    for (std::size_t id : ids[r]) {
      if (id >= vocab) throw ShapeError("embedding_bag_mean: token id out of range");
      for (std::size_t i = 0; i < e; ++i) out[r * e + i] += tv[id * e + i] * inv;
    }
  }
  const Var parents[] = {table};
  return tape_of(table).record(std::move(out), parents, [table, ids, e](Tape& t, const Tensor& g) {
    double* gt = t.grad_buffer(table).data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r].empty()) continue;
      const double inv = 1.0 / static_cast<double>(ids[r].size());
      for (std::size_t id : ids[r]) {
        for (std::size_t i = 0; i < e; ++i) gt[id * e + i] += g[r * e + i] * inv;
      }
    }
  });
}

Var symmetric_cross_entropy(Var logits) {
  require_rank(logits, 2, "symmetric_cross_entropy");
  const std::size_t b = logits.shape()[0];
  if (logits.shape()[1] != b || b == 0) throw ShapeError("symmetric_cross_entropy: logits must be square");
  const double* L = logits.value().data();
  std::vector<double> row_lse(b), col_lse(b);
  for (std::size_t j = 0; j < b; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < b; ++k) mx = std::max(mx, L[j * b + k]);
    double s = 0.0;
    for (std::size_t k = 0; k < b; ++k) s += std::exp(L[j * b + k] - mx);
    row_lse[j] = mx + std::log(s);
  }
  for (std::size_t k = 0; k < b; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, L[j * b + k]);
    double s = 0.0;
    for (std::size_t j = 0; j < b; ++j) s += std::exp(L[j * b + k] - mx);
    col_lse[k] = mx + std::log(s);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < b; ++j) acc += (L[j * b + j] - row_lse[j]) + (L[j * b + j] - col_lse[j]);
  const double loss = -acc / (2.0 * static_cast<double>(b));
  const Var parents[] = {logits};
  return tape_of(logits).record(Tensor({1}, loss), parents,
                                [logits, b, row_lse = std::move(row_lse), col_lse = std::move(col_lse)](
                                    Tape& t, const Tensor& g) {
                                  const double* Lv = t.value(logits).data();
                                  double* gl = t.grad_buffer(logits).data();
                                  const double s = g[0] / (2.0 * static_cast<double>(b));
                                  for (std::size_t j = 0; j < b; ++j) {
                                    for (std::size_t k = 0; k < b; ++k) {
                                      const double pr = std::exp(Lv[j * b + k] - row_lse[j]);
                                      const double pc = std::exp(Lv[j * b + k] - col_lse[k]);
                                      const double diag = j == k ? 2.0 : 0.0;
                                      gl[j * b + k] += s * (pr + pc - diag);
                                    }
                                  }
                                });
}

}  // namespace xtransfer::ad
