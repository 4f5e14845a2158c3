#include "plglue/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace plg::ops {
namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const Mat<T>>;
template <class T>
using MMap = Eigen::Map<Mat<T>>;

template <class T>
CMap<T> cmap(const BasicTensor<T>& t) {
  return CMap<T>(t.data().data(), Eigen::Index(t.dim(0)), Eigen::Index(t.dim(1)));
}

template <class T>
MMap<T> mmap(BasicTensor<T>& t) {
  return MMap<T>(t.data().data(), Eigen::Index(t.dim(0)), Eigen::Index(t.dim(1)));
}

[[noreturn]] void fail(Primitive kind, const std::string& msg) {
  throw ShapeError(std::string(primitive_name(kind)) + ": " + msg);
}

void require(bool ok, Primitive kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

template <class T>
void require_rank(const Var<T>& v, std::size_t rank, Primitive kind, const char* what) {
  if (v.value().rank() != rank) {
    fail(kind, std::string(what) + " must have rank " + std::to_string(rank) + ", got shape " +
                   shape_str(v.shape()));
  }
}

template <class T>
Tape<T>& same_tape(Primitive kind, std::initializer_list<Var<T>> vars) {
  Tape<T>* tape = vars.begin()->tape;
  for (const auto& v : vars) {
    require(v.tape == tape && tape != nullptr, kind, "inputs recorded on different tapes");
  }
  return *tape;
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  constexpr auto kind = Primitive::kLinear;
  Tape<T>& tape = same_tape(kind, {x, w, b});
  require_rank(x, 2, kind, "input");
  require_rank(w, 2, kind, "weight");
  require_rank(b, 1, kind, "bias");
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  require(w.dim(1) == in, kind,
          "weight " + shape_str(w.shape()) + " does not accept input " + shape_str(x.shape()));
  require(b.dim(0) == out, kind,
          "bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));

  BasicTensor<T> y({n, out});
  if (n > 0 && out > 0) {
    auto ym = mmap(y);
    ym.noalias() = cmap(x.value()) * cmap(w.value()).transpose();
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.value().data().data(),
                                                               Eigen::Index(out));
    ym.rowwise() += bias;
  }
  return tape.record(kind, std::move(y), {x.id, w.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto& g = t.grad(self);
    if (g.size() == 0) return;
    auto gm = cmap(g);
    if (t.needs_grad(in[0])) mmap(t.grad(in[0])).noalias() += gm * cmap(t.value(in[1]));
    if (t.needs_grad(in[1])) mmap(t.grad(in[1])).noalias() += gm.transpose() * cmap(t.value(in[0]));
    if (t.needs_grad(in[2])) {
      auto& gb = t.grad(in[2]);
      for (std::size_t r = 0; r < g.dim(0); ++r)
        for (std::size_t c = 0; c < g.dim(1); ++c) gb[c] += g(r, c);
    }
  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  constexpr auto kind = Primitive::kMatmul;
  Tape<T>& tape = same_tape(kind, {a, b});
  require_rank(a, 2, kind, "lhs");
  require_rank(b, 2, kind, "rhs");
  require(a.dim(1) == b.dim(0), kind,
          "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  BasicTensor<T> y({a.dim(0), b.dim(1)});
  if (y.size() > 0) mmap(y).noalias() = cmap(a.value()) * cmap(b.value());
  return tape.record(kind, std::move(y), {a.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto& g = t.grad(self);
    if (g.size() == 0) return;
    if (t.needs_grad(in[0])) mmap(t.grad(in[0])).noalias() += cmap(g) * cmap(t.value(in[1])).transpose();
    if (t.needs_grad(in[1])) mmap(t.grad(in[1])).noalias() += cmap(t.value(in[0])).transpose() * cmap(g);
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  constexpr auto kind = Primitive::kMatmul;
  Tape<T>& tape = same_tape(kind, {a, b});
  require_rank(a, 2, kind, "lhs");
  require_rank(b, 2, kind, "rhs");
  require(a.dim(1) == b.dim(1), kind,
          "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  BasicTensor<T> y({a.dim(0), b.dim(0)});
  if (y.size() > 0) mmap(y).noalias() = cmap(a.value()) * cmap(b.value()).transpose();
  return tape.record(kind, std::move(y), {a.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto& g = t.grad(self);
    if (g.size() == 0) return;
    if (t.needs_grad(in[0])) mmap(t.grad(in[0])).noalias() += cmap(g) * cmap(t.value(in[1]));
    if (t.needs_grad(in[1])) mmap(t.grad(in[1])).noalias() += cmap(g).transpose() * cmap(t.value(in[0]));
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  constexpr auto kind = Primitive::kTranspose;
  Tape<T>& tape = same_tape(kind, {a});
  require_rank(a, 2, kind, "input");
  const std::size_t n = a.dim(0), m = a.dim(1);
  BasicTensor<T> y({m, n});
  const auto& x = a.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) y(c, r) = x(r, c);
  return tape.record(kind, std::move(y), {a.id}, [](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(t.inputs(self)[0]);
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t c = 0; c < g.dim(1); ++c) ga(c, r) += g(r, c);
  });
}

template <class T>
Var<T> softmax(Var<T> x, int axis) {
  constexpr auto kind = Primitive::kSoftmax;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  require(axis == 0 || axis == 1, kind, "axis must be 0 or 1, got " + std::to_string(axis));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  // Iterate "lanes" along the reduced axis: lane count and stride depend on axis.
  const std::size_t lanes = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  const std::size_t lane_step = axis == 1 ? cols : 1;
  const std::size_t elem_step = axis == 1 ? 1 : cols;

  const auto& in = x.value();
  BasicTensor<T> y(in.shape());
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_step;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, in[base + e * elem_step]);
    T total = 0;
    for (std::size_t e = 0; e < len; ++e) {
      T v = std::exp(in[base + e * elem_step] - mx);
      y[base + e * elem_step] = v;
      total += v;
    }
    for (std::size_t e = 0; e < len; ++e) y[base + e * elem_step] /= total;
  }
  return tape.record(kind, std::move(y), {x.id},
                     [lanes, len, lane_step, elem_step](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       const auto& yv = t.value(self);
                       auto& gx = t.grad(t.inputs(self)[0]);
                       for (std::size_t l = 0; l < lanes; ++l) {
                         const std::size_t base = l * lane_step;
                         T dot = 0;
                         for (std::size_t e = 0; e < len; ++e) {
                           const std::size_t i = base + e * elem_step;
                           dot += g[i] * yv[i];
                         }
                         for (std::size_t e = 0; e < len; ++e) {
                           const std::size_t i = base + e * elem_step;
                           gx[i] += yv[i] * (g[i] - dot);
                         }
                       }
                     });
}

template <class T>
Var<T> masked_softmax(Var<T> x, const std::vector<std::uint8_t>& mask) {
  constexpr auto kind = Primitive::kSoftmax;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require(mask.size() == rows * cols, kind,
          "mask has " + std::to_string(mask.size()) + " entries for input " + shape_str(x.shape()));
  const auto& in = x.value();
  BasicTensor<T> y(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[r * cols + c]) {
        mx = std::max(mx, in(r, c));
        any = true;
      }
    }
    require(any, kind, "row " + std::to_string(r) + " has no unmasked entry");
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r * cols + c]) continue;
      T v = std::exp(in(r, c) - mx);
      y(r, c) = v;
      total += v;
    }
    for (std::size_t c = 0; c < cols; ++c) y(r, c) /= total;
  }
  return tape.record(kind, std::move(y), {x.id}, [rows, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& yv = t.value(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx(r, c) += yv(r, c) * (g(r, c) - dot);
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  constexpr auto kind = Primitive::kSigmoid;
  Tape<T>& tape = same_tape(kind, {x});
  BasicTensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = stable_sigmoid(in[i]);
  return tape.record(kind, std::move(y), {x.id}, [](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& yv = t.value(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <class T>
Var<T> gelu(Var<T> x) {
  constexpr auto kind = Primitive::kGelu;
  Tape<T>& tape = same_tape(kind, {x});
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  BasicTensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) {
    y[i] = T(0.5) * in[i] * (T(1) + std::erf(in[i] * inv_sqrt2));
  }
  return tape.record(kind, std::move(y), {x.id}, [inv_sqrt2](Tape<T>& t, std::size_t self) {
    const std::size_t src = t.inputs(self)[0];
    const auto& g = t.grad(self);
    const auto& xv = t.value(src);
    auto& gx = t.grad(src);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <class T>
Var<T> log_clamped(Var<T> x, T floor) {
  constexpr auto kind = Primitive::kLog;
  Tape<T>& tape = same_tape(kind, {x});
  BasicTensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = std::log(std::max(in[i], floor));
  return tape.record(kind, std::move(y), {x.id}, [floor](Tape<T>& t, std::size_t self) {
    const std::size_t src = t.inputs(self)[0];
    const auto& g = t.grad(self);
    const auto& xv = t.value(src);
    auto& gx = t.grad(src);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > floor) gx[i] += g[i] / xv[i];
    }
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  constexpr auto kind = Primitive::kConcat;
  require(!parts.empty(), kind, "no inputs");
  require(axis == 0 || axis == 1, kind, "axis must be 0 or 1, got " + std::to_string(axis));
  Tape<T>& tape = *parts.front().tape;
  const std::size_t other = axis == 0 ? 1 : 0;
  const std::size_t fixed = parts.front().dim(other);
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p];
    require(v.tape == &tape, kind, "inputs recorded on different tapes");
    require_rank(v, 2, kind, "input");
    require(v.dim(other) == fixed, kind,
            "input " + std::to_string(p) + " has shape " + shape_str(v.shape()) +
                ", expected extent " + std::to_string(fixed) + " on axis " +
                std::to_string(other));
    extents.push_back(v.dim(axis));
    total += v.dim(axis);
    ids.push_back(v.id);
  }
  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  BasicTensor<T> y(shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    for (std::size_t r = 0; r < v.dim(0); ++r)
      for (std::size_t c = 0; c < v.dim(1); ++c) {
        if (axis == 0) y(offset + r, c) = v(r, c);
        else y(r, offset + c) = v(r, c);
      }
    offset += extents[p];
  }
  return tape.record(kind, std::move(y), ids, [axis, extents](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      if (t.needs_grad(in[p])) {
        auto& gp = t.grad(in[p]);
        for (std::size_t r = 0; r < gp.dim(0); ++r)
          for (std::size_t c = 0; c < gp.dim(1); ++c)
            gp(r, c) += axis == 0 ? g(off + r, c) : g(r, off + c);
      }
      off += extents[p];
    }
  });
}

namespace {

template <class T, class Fwd, class Bwd>
Var<T> binary_same_shape(Primitive kind, Var<T> a, Var<T> b, Fwd fwd, Bwd bwd) {
  Tape<T>& tape = same_tape(kind, {a, b});
  require(a.shape() == b.shape(), kind,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto& av = a.value();
  const auto& bv = b.value();
  BasicTensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i], bv[i]);
  return tape.record(kind, std::move(y), {a.id, b.id}, [bwd](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto& g = t.grad(self);
    const auto& av2 = t.value(in[0]);
    const auto& bv2 = t.value(in[1]);
    const bool ga_on = t.needs_grad(in[0]), gb_on = t.needs_grad(in[1]);
    BasicTensor<T>* ga = ga_on ? &t.grad(in[0]) : nullptr;
    BasicTensor<T>* gb = gb_on ? &t.grad(in[1]) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto [da, db] = bwd(av2[i], bv2[i], g[i]);
      if (ga) (*ga)[i] += da;
      if (gb) (*gb)[i] += db;
    }
  });
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      Primitive::kAdd, a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return std::pair<T, T>{g, g}; });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      Primitive::kSub, a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return std::pair<T, T>{g, -g}; });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      Primitive::kMul, a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g) { return std::pair<T, T>{g * y, g * x}; });
}

template <class T>
Var<T> maximum(Var<T> a, Var<T> b) {
  return binary_same_shape<T>(
      Primitive::kMaximum, a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y, T g) { return x >= y ? std::pair<T, T>{g, T(0)} : std::pair<T, T>{T(0), g}; });
}

template <class T>
Var<T> broadcast(Var<T> x, const Shape& shape) {
  constexpr auto kind = Primitive::kBroadcast;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  require(shape.size() == 2, kind, "target must have rank 2, got " + shape_str(shape));
  const std::size_t r0 = x.dim(0), c0 = x.dim(1);
  require((r0 == shape[0] || r0 == 1) && (c0 == shape[1] || c0 == 1), kind,
          "cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  BasicTensor<T> y(shape);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < shape[0]; ++r)
    for (std::size_t c = 0; c < shape[1]; ++c) y(r, c) = xv(r0 == 1 ? 0 : r, c0 == 1 ? 0 : c);
  return tape.record(kind, std::move(y), {x.id}, [r0, c0](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t c = 0; c < g.dim(1); ++c) gx(r0 == 1 ? 0 : r, c0 == 1 ? 0 : c) += g(r, c);
  });
}

template <class T>
Var<T> affine(Var<T> x, T scale, T shift) {
  constexpr auto kind = Primitive::kAffine;
  Tape<T>& tape = same_tape(kind, {x});
  BasicTensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = scale * xv[i] + shift;
  return tape.record(kind, std::move(y), {x.id}, [scale](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  constexpr auto kind = Primitive::kLayerNorm;
  Tape<T>& tape = same_tape(kind, {x, gain, bias});
  require_rank(x, 2, kind, "input");
  const std::size_t n = x.dim(0), f = x.dim(1);
  require(gain.shape() == Shape{f} && bias.shape() == Shape{f}, kind,
          "gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
              " do not match feature size " + std::to_string(f));
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  BasicTensor<T> y(x.shape());
  std::vector<T> xhat(n * f), rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    T mu = 0;
    for (std::size_t c = 0; c < f; ++c) mu += xv(r, c);
    mu /= T(f);
    T var = 0;
    for (std::size_t c = 0; c < f; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= T(f);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < f; ++c) {
      xhat[r * f + c] = (xv(r, c) - mu) * rstd[r];
      y(r, c) = xhat[r * f + c] * gv[c] + bv[c];
    }
  }
  return tape.record(
      kind, std::move(y), {x.id, gain.id, bias.id},
      [n, f, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& in = t.inputs(self);
        const auto& g = t.grad(self);
        const auto& gv2 = t.value(in[1]);
        if (t.needs_grad(in[1]) || t.needs_grad(in[2])) {
          auto& gg = t.grad(in[1]);
          auto& gb = t.grad(in[2]);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < f; ++c) {
              gg[c] += g(r, c) * xhat[r * f + c];
              gb[c] += g(r, c);
            }
        }
        if (!t.needs_grad(in[0])) return;
        auto& gx = t.grad(in[0]);
        for (std::size_t r = 0; r < n; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < f; ++c) {
            const T d = g(r, c) * gv2[c];
            mean_d += d;
            mean_dx += d * xhat[r * f + c];
          }
          mean_d /= T(f);
          mean_dx /= T(f);
          for (std::size_t c = 0; c < f; ++c) {
            const T d = g(r, c) * gv2[c];
            gx(r, c) += rstd[r] * (d - mean_d - xhat[r * f + c] * mean_dx);
          }
        }
      });
}

template <class T>
Var<T> rotary(Var<T> x, Var<T> angles) {
  constexpr auto kind = Primitive::kRotary;
  Tape<T>& tape = same_tape(kind, {x, angles});
  require_rank(x, 2, kind, "input");
  require_rank(angles, 2, kind, "angles");
  const std::size_t n = x.dim(0), width = x.dim(1), pairs = angles.dim(1);
  const std::size_t block = 2 * pairs;
  require(angles.dim(0) == n, kind,
          "angles " + shape_str(angles.shape()) + " do not match input " + shape_str(x.shape()));
  require(pairs > 0 && width % block == 0, kind,
          "input width " + std::to_string(width) + " is not a multiple of rotary block " +
              std::to_string(block));
  const auto& xv = x.value();
  const auto& av = angles.value();
  std::vector<T> cs(n * pairs), sn(n * pairs);
  for (std::size_t i = 0; i < n * pairs; ++i) {
    cs[i] = std::cos(av[i]);
    sn[i] = std::sin(av[i]);
  }
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t h = 0; h < width / block; ++h)
      for (std::size_t k = 0; k < pairs; ++k) {
        const std::size_t c0 = h * block + 2 * k;
        const T a = xv(r, c0), b = xv(r, c0 + 1);
        const T c = cs[r * pairs + k], s = sn[r * pairs + k];
        y(r, c0) = c * a - s * b;
        y(r, c0 + 1) = s * a + c * b;
      }
  return tape.record(kind, std::move(y), {x.id, angles.id},
                     [n, width, pairs, block, cs = std::move(cs), sn = std::move(sn)](
                         Tape<T>& t, std::size_t self) {
                       const auto& in = t.inputs(self);
                       const auto& g = t.grad(self);
                       const auto& yv = t.value(self);
                       const bool gx_on = t.needs_grad(in[0]), ga_on = t.needs_grad(in[1]);
                       BasicTensor<T>* gx = gx_on ? &t.grad(in[0]) : nullptr;
                       BasicTensor<T>* ga = ga_on ? &t.grad(in[1]) : nullptr;
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t h = 0; h < width / block; ++h)
                           for (std::size_t k = 0; k < pairs; ++k) {
                             const std::size_t c0 = h * block + 2 * k;
                             const T g0 = g(r, c0), g1 = g(r, c0 + 1);
                             const T c = cs[r * pairs + k], s = sn[r * pairs + k];
                             if (gx) {
                               (*gx)(r, c0) += c * g0 + s * g1;
                               (*gx)(r, c0 + 1) += -s * g0 + c * g1;
                             }
                             if (ga) (*ga)(r, k) += -g0 * yv(r, c0 + 1) + g1 * yv(r, c0);
                           }
                     });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  constexpr auto kind = Primitive::kSlice;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  require(begin + count <= x.dim(1), kind,
          "columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") out of range for " + shape_str(x.shape()));
  const auto& xv = x.value();
  const std::size_t n = x.dim(0);
  BasicTensor<T> y({n, count});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = xv(r, begin + c);
  return tape.record(kind, std::move(y), {x.id}, [begin](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t c = 0; c < g.dim(1); ++c) gx(r, begin + c) += g(r, c);
  });
}

template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows) {
  constexpr auto kind = Primitive::kGather;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  const std::size_t n = x.dim(0), f = x.dim(1);
  for (auto r : rows) {
    require(r < n, kind, "row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  }
  const auto& xv = x.value();
  BasicTensor<T> y({rows.size(), f});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data().begin() + rows[i] * f, f, y.data().begin() + i * f);
  return tape.record(kind, std::move(y), {x.id}, [rows, f](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < f; ++c) gx(rows[i], c) += g(i, c);
  });
}

template <class T>
Var<T> scatter_rows(Var<T> base, const std::vector<std::size_t>& rows, Var<T> updates) {
  constexpr auto kind = Primitive::kScatter;
  Tape<T>& tape = same_tape(kind, {base, updates});
  require_rank(base, 2, kind, "base");
  require_rank(updates, 2, kind, "updates");
  const std::size_t n = base.dim(0), f = base.dim(1);
  require(updates.dim(0) == rows.size() && updates.dim(1) == f, kind,
          "updates " + shape_str(updates.shape()) + " do not match " +
              std::to_string(rows.size()) + " rows of " + shape_str(base.shape()));
  std::vector<std::uint8_t> hit(n, 0);
  for (auto r : rows) {
    require(r < n, kind, "row " + std::to_string(r) + " out of range for " + shape_str(base.shape()));
    require(!hit[r], kind, "row " + std::to_string(r) + " scattered twice");
    hit[r] = 1;
  }
  BasicTensor<T> y = base.value();
  const auto& uv = updates.value();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(uv.data().begin() + i * f, f, y.data().begin() + rows[i] * f);
  return tape.record(kind, std::move(y), {base.id, updates.id},
                     [rows, f, hit = std::move(hit)](Tape<T>& t, std::size_t self) {
                       const auto& in = t.inputs(self);
                       const auto& g = t.grad(self);
                       if (t.needs_grad(in[0])) {
                         auto& gb = t.grad(in[0]);
                         for (std::size_t r = 0; r < g.dim(0); ++r) {
                           if (hit[r]) continue;
                           for (std::size_t c = 0; c < f; ++c) gb(r, c) += g(r, c);
                         }
                       }
                       if (t.needs_grad(in[1])) {
                         auto& gu = t.grad(in[1]);
                         for (std::size_t i = 0; i < rows.size(); ++i)
                           for (std::size_t c = 0; c < f; ++c) gu(i, c) += g(rows[i], c);
                       }
                     });
}

template <class T>
Var<T> gather_elements(Var<T> x, const IndexPairs& pairs) {
  constexpr auto kind = Primitive::kGather;
  Tape<T>& tape = same_tape(kind, {x});
  require_rank(x, 2, kind, "input");
  for (auto [r, c] : pairs) {
    require(r < x.dim(0) && c < x.dim(1), kind,
            "index (" + std::to_string(r) + ", " + std::to_string(c) + ") out of range for " +
                shape_str(x.shape()));
  }
  const auto& xv = x.value();
  BasicTensor<T> y({pairs.size()});
  for (std::size_t i = 0; i < pairs.size(); ++i) y[i] = xv(pairs[i].first, pairs[i].second);
  return tape.record(kind, std::move(y), {x.id}, [pairs](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < pairs.size(); ++i) gx(pairs[i].first, pairs[i].second) += g[i];
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  constexpr auto kind = Primitive::kReduce;
  Tape<T>& tape = same_tape(kind, {x});
  T total = 0;
  for (T v : x.value().data()) total += v;
  return tape.record(kind, BasicTensor<T>::scalar(total), {x.id}, [](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  constexpr auto kind = Primitive::kReduce;
  Tape<T>& tape = same_tape(kind, {x});
  const std::size_t n = x.value().size();
  T total = 0;
  for (T v : x.value().data()) total += v;
  const T m = n ? total / T(n) : T(0);
  return tape.record(kind, BasicTensor<T>::scalar(m), {x.id}, [n](Tape<T>& t, std::size_t self) {
    if (n == 0) return;
    const T g = t.grad(self)[0] / T(n);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class T>
Var<T> reshape(Var<T> x, const Shape& shape) {
  constexpr auto kind = Primitive::kReshape;
  Tape<T>& tape = same_tape(kind, {x});
  require(shape_numel(shape) == x.value().size(), kind,
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return tape.record(kind, x.value().reshaped(shape), {x.id}, [](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

#define PLG_INSTANTIATE_OPS(T)                                                            \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                              \
  template Var<T> transpose(Var<T>);                                                      \
  template Var<T> softmax(Var<T>, int);                                                   \
  template Var<T> masked_softmax(Var<T>, const std::vector<std::uint8_t>&);               \
  template Var<T> sigmoid(Var<T>);                                                        \
  template Var<T> gelu(Var<T>);                                                           \
  template Var<T> log_clamped(Var<T>, T);                                                 \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> broadcast(Var<T>, const Shape&);                                        \
  template Var<T> affine(Var<T>, T, T);                                                   \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                  \
  template Var<T> rotary(Var<T>, Var<T>);                                                 \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> gather_rows(Var<T>, const std::vector<std::size_t>&);                   \
  template Var<T> scatter_rows(Var<T>, const std::vector<std::size_t>&, Var<T>);          \
  template Var<T> gather_elements(Var<T>, const IndexPairs&);                             \
  template Var<T> maximum(Var<T>, Var<T>);                                                \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> mean(Var<T>);                                                           \
  template Var<T> reshape(Var<T>, const Shape&);

PLG_INSTANTIATE_OPS(float)
PLG_INSTANTIATE_OPS(double)

#undef PLG_INSTANTIATE_OPS

}  // namespace plg::ops
