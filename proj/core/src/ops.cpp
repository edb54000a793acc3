#include "hdformer/ops.hpp"

#include <algorithm>
#include <cmath>

namespace hdf {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Right-aligned broadcast plan: per-output-axis element strides into each
// input, 0 on broadcast axes.
struct BcPlan {
  Shape shape;
  std::vector<std::int64_t> sa, sb;
  std::int64_t n = 0;
};

std::vector<std::int64_t> natural_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 0);
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const int r = static_cast<int>(out.size());
  const int ri = static_cast<int>(in.size());
  auto nat = natural_strides(in);
  std::vector<std::int64_t> st(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < r; ++i) {
    const int j = i - (r - ri);
    if (j < 0) continue;
    if (in[static_cast<std::size_t>(j)] == 1 && out[static_cast<std::size_t>(i)] != 1)
      continue;
    st[static_cast<std::size_t>(i)] = nat[static_cast<std::size_t>(j)];
  }
  return st;
}

BcPlan make_plan(const Shape& a, const Shape& b) {
  BcPlan p;
  p.shape = broadcast_shapes(a, b);
  p.sa = aligned_strides(a, p.shape);
  p.sb = aligned_strides(b, p.shape);
  p.n = shape_numel(p.shape);
  return p;
}

// Odometer walk over the broadcast output; f(flat_out, off_a, off_b).
template <class F>
void bc_loop(const BcPlan& p, F&& f) {
  const int r = static_cast<int>(p.shape.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < p.n; ++i) {
    f(i, oa, ob);
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      oa += p.sa[u];
      ob += p.sb[u];
      if (idx[u] < p.shape[u]) break;
      oa -= p.sa[u] * p.shape[u];
      ob -= p.sb[u] * p.shape[u];
      idx[u] = 0;
    }
  }
}

using Impl = std::shared_ptr<detail::TensorImpl>;

// Shared skeleton for broadcasting binary ops. `fwd(x, y)` computes one
// element; `bwd(g, x, y, &dx, &dy)` adds this element's contribution.
template <class Fwd, class Bwd>
Tensor binary_bc(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  BcPlan plan = make_plan(a.shape(), b.shape());
  Tensor out = Tensor::zeros(plan.shape);
  {
    const auto& av = a.raw();
    const auto& bv = b.raw();
    auto& ov = out.raw();
    bc_loop(plan, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
      ov[static_cast<std::size_t>(i)] = fwd(av[static_cast<std::size_t>(oa)],
                                            bv[static_cast<std::size_t>(ob)]);
    });
  }
  Tape* tape = detail::merge_tapes({&a, &b});
  const bool needs = tape && detail::any_needs_grad({&a, &b});
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    const bool na = a.needs_grad(), nb = b.needs_grad();
    tape->record([ai, bi, oi, plan, bwd, na, nb]() {
      oi->ensure_grad();
      if (na) ai->ensure_grad();
      if (nb) bi->ensure_grad();
      bc_loop(plan, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
        const double g = oi->grad[static_cast<std::size_t>(i)];
        double dx = 0.0, dy = 0.0;
        bwd(g, ai->data[static_cast<std::size_t>(oa)],
            bi->data[static_cast<std::size_t>(ob)], &dx, &dy);
        if (na) ai->grad[static_cast<std::size_t>(oa)] += dx;
        if (nb) bi->grad[static_cast<std::size_t>(ob)] += dy;
      });
    });
  }
  return out;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.raw();
  auto& ov = out.raw();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, bwd]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += bwd(oi->grad[i], xi->data[i], oi->data[i]);
    });
  }
  return out;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const int r = static_cast<int>(std::max(a.size(), b.size()));
  Shape out(static_cast<std::size_t>(r), 1);
  for (int i = 0; i < r; ++i) {
    const int ia = i - (r - static_cast<int>(a.size()));
    const int ib = i - (r - static_cast<int>(b.size()));
    const std::int64_t da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const std::int64_t db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(format_msg("cannot broadcast ", shape_str(a), " with ",
                                  shape_str(b)));
    out[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* dx, double* dy) {
        *dx = g;
        *dy = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* dx, double* dy) {
        *dx = g;
        *dy = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* dx, double* dy) {
        *dx = g * y;
        *dy = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.raw())
    if (v == 0.0) throw ValueError("div: divisor contains an exact zero");
  return binary_bc(
      a, b, [](double x, double y) { return x / y; },
      [](double g, double x, double y, double* dx, double* dy) {
        *dx = g / y;
        *dy = -g * x / (y * y);
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, [factor](double v) { return v * factor; },
      [factor](double g, double, double) { return g * factor; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double g, double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return g * (cdf + v * pdf);
      });
}

Tensor sqrt_elem(const Tensor& x) {
  for (double v : x.raw())
    if (v < 0.0) throw ValueError("sqrt: negative input");
  return unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double g, double, double y) {
        // guard keeps the exact-zero case finite
        return g * 0.5 / std::max(y, 1e-150);
      });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.raw()) acc += v;
  Tensor out = Tensor::scalar(acc);
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi]() {
      oi->ensure_grad();
      xi->ensure_grad();
      const double g = oi->grad[0];
      for (auto& dv : xi->grad) dv += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

Tensor reduce_lastdim(const Tensor& x, bool mean) {
  const std::int64_t n = x.extent(-1);
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Tensor out = Tensor::zeros(out_shape);
  const auto& xv = x.raw();
  auto& ov = out.raw();
  const std::int64_t rows = x.numel() / n;
  const double f = mean ? 1.0 / static_cast<double>(n) : 1.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      acc += xv[static_cast<std::size_t>(r * n + i)];
    ov[static_cast<std::size_t>(r)] = acc * f;
  }
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, rows, n, f]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double g = oi->grad[static_cast<std::size_t>(r)] * f;
        for (std::int64_t i = 0; i < n; ++i)
          xi->grad[static_cast<std::size_t>(r * n + i)] += g;
      }
    });
  }
  return out;
}

}  // namespace

Tensor sum_lastdim(const Tensor& x) { return reduce_lastdim(x, false); }
Tensor mean_lastdim(const Tensor& x) { return reduce_lastdim(x, true); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError(format_msg("reshape ", shape_str(x.shape()), " -> ",
                                shape_str(shape), " changes element count"));
  Tensor out = Tensor::from_data(std::move(shape), x.raw());
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2)
    throw ShapeError(format_msg("transpose_last2 needs rank >= 2, got ",
                                shape_str(x.shape())));
  const std::int64_t m = x.extent(-2), n = x.extent(-1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape);
  const auto& xv = x.raw();
  auto& ov = out.raw();
  const std::int64_t batches = x.numel() / (m * n);
  for (std::int64_t b = 0; b < batches; ++b) {
    const std::int64_t base = b * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        ov[static_cast<std::size_t>(base + j * m + i)] =
            xv[static_cast<std::size_t>(base + i * n + j)];
  }
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, batches, m, n]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::int64_t b = 0; b < batches; ++b) {
        const std::int64_t base = b * m * n;
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j)
            xi->grad[static_cast<std::size_t>(base + i * n + j)] +=
                oi->grad[static_cast<std::size_t>(base + j * m + i)];
      }
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError(format_msg("concat axis ", axis, " out of range"));
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r)
      throw ShapeError("concat: inputs differ in rank");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape()[static_cast<std::size_t>(i)] !=
                           out_shape[static_cast<std::size_t>(i)])
        throw ShapeError(format_msg("concat: ", shape_str(p.shape()),
                                    " incompatible with ",
                                    shape_str(parts[0].shape()), " on axis ", i));
    total += p.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i)
    inner *= out_shape[static_cast<std::size_t>(i)];

  Tensor out = Tensor::zeros(out_shape);
  auto& ov = out.raw();
  const std::int64_t out_row = total * inner;
  std::int64_t offset = 0;
  for (const Tensor& p : parts) {
    const std::int64_t ext = p.extent(axis);
    const auto& pv = p.raw();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * ext * inner, ext * inner,
                  ov.begin() + o * out_row + offset * inner);
    offset += ext;
  }

  Tape* tape = nullptr;
  bool needs = false;
  for (const Tensor& p : parts) {
    Tape* t = p.tape();
    if (t && tape && t != tape) throw ValueError("concat: mixed tapes");
    if (t) tape = t;
    needs = needs || p.needs_grad();
  }
  needs = needs && tape;
  detail::mark_result(out, tape, needs);
  if (needs) {
    std::vector<Impl> impls;
    std::vector<std::int64_t> exts;
    std::vector<bool> part_needs;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl_ptr());
      exts.push_back(p.extent(axis));
      part_needs.push_back(p.needs_grad());
    }
    Impl oi = out.impl_ptr();
    tape->record([impls, exts, part_needs, oi, outer, inner, out_row]() {
      oi->ensure_grad();
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        const std::int64_t ext = exts[k];
        if (part_needs[k]) {
          impls[k]->ensure_grad();
          auto& pg = impls[k]->grad;
          for (std::int64_t o = 0; o < outer; ++o) {
            const auto* src = oi->grad.data() + o * out_row + offset * inner;
            auto* dst = pg.data() + o * ext * inner;
            for (std::int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
          }
        }
        offset += ext;
      }
    });
  }
  return out;
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  return concat(parts, -1);
}

Tensor index_select(const Tensor& x, int axis,
                    std::span<const std::int64_t> indices) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError(format_msg("index_select axis ", axis, " out of range"));
  const std::int64_t ext = x.shape()[static_cast<std::size_t>(axis)];
  for (std::int64_t idx : indices)
    if (idx < 0 || idx >= ext)
      throw ShapeError(format_msg("index_select: index ", idx,
                                  " out of bounds for extent ", ext));
  if (indices.empty()) throw ShapeError("index_select: empty index list");

  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] =
      static_cast<std::int64_t>(indices.size());
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i)
    inner *= x.shape()[static_cast<std::size_t>(i)];

  Tensor out = Tensor::zeros(out_shape);
  auto& ov = out.raw();
  const auto& xv = x.raw();
  const std::int64_t k = static_cast<std::int64_t>(indices.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < k; ++i)
      std::copy_n(xv.begin() + (o * ext + indices[static_cast<std::size_t>(i)]) * inner,
                  inner, ov.begin() + (o * k + i) * inner);

  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    std::vector<std::int64_t> idx(indices.begin(), indices.end());
    tape->record([xi, oi, idx, outer, inner, ext, k]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < k; ++i) {
          const auto* src = oi->grad.data() + (o * k + i) * inner;
          auto* dst =
              xi->grad.data() + (o * ext + idx[static_cast<std::size_t>(i)]) * inner;
          for (std::int64_t j = 0; j < inner; ++j) dst[j] += src[j];
        }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError(format_msg("matmul needs rank >= 2 operands, got ",
                                shape_str(a.shape()), " and ",
                                shape_str(b.shape())));
  const std::int64_t m = a.extent(-2), ka = a.extent(-1);
  const std::int64_t kb = b.extent(-2), n = b.extent(-1);
  if (ka != kb)
    throw ShapeError(format_msg("matmul inner extents disagree: ",
                                shape_str(a.shape()), " vs ",
                                shape_str(b.shape())));
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  BcPlan plan = make_plan(batch_a, batch_b);  // strides in matrix units
  Shape out_shape = plan.shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);
  {
    const auto& av = a.raw();
    const auto& bv = b.raw();
    auto& ov = out.raw();
    const std::int64_t am = m * ka, bm = ka * n, om = m * n;
    bc_loop(plan, [&](std::int64_t bi, std::int64_t oa, std::int64_t ob) {
      const double* A = av.data() + oa * am;
      const double* B = bv.data() + ob * bm;
      double* C = ov.data() + bi * om;
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t kk = 0; kk < ka; ++kk) {
          const double v = A[i * ka + kk];
          const double* Brow = B + kk * n;
          double* Crow = C + i * n;
          for (std::int64_t j = 0; j < n; ++j) Crow[j] += v * Brow[j];
        }
    });
  }
  Tape* tape = detail::merge_tapes({&a, &b});
  const bool needs = tape && detail::any_needs_grad({&a, &b});
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    const bool na = a.needs_grad(), nb = b.needs_grad();
    tape->record([ai, bi, oi, plan, m, ka, n, na, nb]() {
      oi->ensure_grad();
      if (na) ai->ensure_grad();
      if (nb) bi->ensure_grad();
      const std::int64_t am = m * ka, bm = ka * n, om = m * n;
      bc_loop(plan, [&](std::int64_t bidx, std::int64_t oa, std::int64_t ob) {
        const double* A = ai->data.data() + oa * am;
        const double* B = bi->data.data() + ob * bm;
        const double* G = oi->grad.data() + bidx * om;
        if (na) {
          double* dA = ai->grad.data() + oa * am;
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t kk = 0; kk < ka; ++kk) {
              double acc = 0.0;
              const double* Grow = G + i * n;
              const double* Brow = B + kk * n;
              for (std::int64_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
              dA[i * ka + kk] += acc;
            }
        }
        if (nb) {
          double* dB = bi->grad.data() + ob * bm;
          for (std::int64_t kk = 0; kk < ka; ++kk)
            for (std::int64_t i = 0; i < m; ++i) {
              const double v = A[i * ka + kk];
              const double* Grow = G + i * n;
              double* dBrow = dB + kk * n;
              for (std::int64_t j = 0; j < n; ++j) dBrow[j] += v * Grow[j];
            }
        }
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor softmax_lastdim(const Tensor& x) {
  for (double v : x.raw())
    if (!std::isfinite(v))
      throw ValueError("softmax: non-finite input");
  const std::int64_t n = x.extent(-1);
  const std::int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.raw();
  auto& ov = out.raw();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double* orow = ov.data() + r * n;
    double mx = row[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      orow[i] = std::exp(row[i] - mx);
      denom += orow[i];
    }
    for (std::int64_t i = 0; i < n; ++i) orow[i] /= denom;
  }
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, rows, n]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = oi->data.data() + r * n;
        const double* g = oi->grad.data() + r * n;
        double* dx = xi->grad.data() + r * n;
        double dot = 0.0;
        for (std::int64_t i = 0; i < n; ++i) dot += g[i] * y[i];
        for (std::int64_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

Tensor temporal_conv(const Tensor& x, const ConvWeights& cw, int stride) {
  if (x.rank() != 4)
    throw ShapeError(format_msg("temporal_conv expects [B,T,J,C], got ",
                                shape_str(x.shape())));
  if (cw.w.rank() != 3)
    throw ShapeError(format_msg("conv weights expect [K,Cin,Cout], got ",
                                shape_str(cw.w.shape())));
  const std::int64_t B = x.extent(0), T = x.extent(1), J = x.extent(2),
                     C = x.extent(3);
  const std::int64_t K = cw.w.extent(0), Cin = cw.w.extent(1),
                     Cout = cw.w.extent(2);
  if (K % 2 == 0)
    throw ValueError(format_msg("temporal_conv kernel must be odd, got ", K));
  if (stride < 1) throw ValueError("temporal_conv stride must be >= 1");
  if (Cin != C)
    throw ShapeError(format_msg("conv input channels ", C,
                                " do not match weights ", shape_str(cw.w.shape())));
  if (cw.b.rank() != 1 || cw.b.extent(0) != Cout)
    throw ShapeError("conv bias extent must equal output channels");
  const std::int64_t pad = (K - 1) / 2;
  const std::int64_t To = (T + stride - 1) / stride;

  Tensor out = Tensor::zeros({B, To, J, Cout});
  const auto& xv = x.raw();
  const auto& wv = cw.w.raw();
  const auto& bv = cw.b.raw();
  auto& ov = out.raw();
  auto xat = [&](std::int64_t b, std::int64_t t, std::int64_t j, std::int64_t c) {
    return xv[static_cast<std::size_t>(((b * T + t) * J + j) * C + c)];
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t to = 0; to < To; ++to)
      for (std::int64_t j = 0; j < J; ++j)
        for (std::int64_t co = 0; co < Cout; ++co) {
          double acc = bv[static_cast<std::size_t>(co)];
          for (std::int64_t k = 0; k < K; ++k) {
            const std::int64_t t = to * stride + k - pad;
            if (t < 0 || t >= T) continue;
            for (std::int64_t ci = 0; ci < C; ++ci)
              acc += xat(b, t, j, ci) *
                     wv[static_cast<std::size_t>((k * Cin + ci) * Cout + co)];
          }
          ov[static_cast<std::size_t>(((b * To + to) * J + j) * Cout + co)] = acc;
        }

  Tape* tape = detail::merge_tapes({&x, &cw.w, &cw.b});
  const bool needs = tape && detail::any_needs_grad({&x, &cw.w, &cw.b});
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), wi = cw.w.impl_ptr(), bi = cw.b.impl_ptr(),
         oi = out.impl_ptr();
    const bool nx = x.needs_grad(), nw = cw.w.needs_grad(),
               nb = cw.b.needs_grad();
    const std::int64_t s = stride;
    tape->record([xi, wi, bi, oi, B, T, J, C, K, Cout, pad, To, s, nx, nw, nb]() {
      oi->ensure_grad();
      if (nx) xi->ensure_grad();
      if (nw) wi->ensure_grad();
      if (nb) bi->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t to = 0; to < To; ++to)
          for (std::int64_t j = 0; j < J; ++j)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const double g = oi->grad[static_cast<std::size_t>(
                  ((b * To + to) * J + j) * Cout + co)];
              if (g == 0.0) continue;
              if (nb) bi->grad[static_cast<std::size_t>(co)] += g;
              for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t t = to * s + k - pad;
                if (t < 0 || t >= T) continue;
                for (std::int64_t ci = 0; ci < C; ++ci) {
                  const std::size_t xidx =
                      static_cast<std::size_t>(((b * T + t) * J + j) * C + ci);
                  const std::size_t widx =
                      static_cast<std::size_t>((k * C + ci) * Cout + co);
                  if (nx) xi->grad[xidx] += g * wi->data[widx];
                  if (nw) wi->grad[widx] += g * xi->data[xidx];
                }
              }
            }
    });
  }
  return out;
}

Tensor temporal_upsample_bilinear(const Tensor& x, std::int64_t target_frames) {
  if (x.rank() != 4)
    throw ShapeError(format_msg("temporal_upsample expects [B,T,J,C], got ",
                                shape_str(x.shape())));
  if (target_frames < 1)
    throw ValueError(format_msg("target frame count must be >= 1, got ",
                                target_frames));
  const std::int64_t B = x.extent(0), T = x.extent(1), J = x.extent(2),
                     C = x.extent(3);
  const std::int64_t To = target_frames;

  // Per output frame: source index pair and interpolation weight.
  std::vector<std::int64_t> i0(static_cast<std::size_t>(To));
  std::vector<double> frac(static_cast<std::size_t>(To));
  for (std::int64_t t = 0; t < To; ++t) {
    double pos = 0.0;
    if (T > 1 && To > 1)
      pos = static_cast<double>(t) * static_cast<double>(T - 1) /
            static_cast<double>(To - 1);
    std::int64_t lo = static_cast<std::int64_t>(std::floor(pos));
    lo = std::min(lo, T - 1);
    i0[static_cast<std::size_t>(t)] = lo;
    frac[static_cast<std::size_t>(t)] = pos - static_cast<double>(lo);
  }

  Tensor out = Tensor::zeros({B, To, J, C});
  const auto& xv = x.raw();
  auto& ov = out.raw();
  const std::int64_t plane = J * C;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < To; ++t) {
      const std::int64_t lo = i0[static_cast<std::size_t>(t)];
      const double f = frac[static_cast<std::size_t>(t)];
      const std::int64_t hi = std::min(lo + 1, T - 1);
      const double* xlo = xv.data() + (b * T + lo) * plane;
      const double* xhi = xv.data() + (b * T + hi) * plane;
      double* o = ov.data() + (b * To + t) * plane;
      for (std::int64_t i = 0; i < plane; ++i)
        o[i] = (1.0 - f) * xlo[i] + f * xhi[i];
    }

  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, i0, frac, B, T, To, plane]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < To; ++t) {
          const std::int64_t lo = i0[static_cast<std::size_t>(t)];
          const double f = frac[static_cast<std::size_t>(t)];
          const std::int64_t hi = std::min(lo + 1, T - 1);
          const double* g = oi->grad.data() + (b * To + t) * plane;
          double* dlo = xi->grad.data() + (b * T + lo) * plane;
          double* dhi = xi->grad.data() + (b * T + hi) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            dlo[i] += (1.0 - f) * g[i];
            dhi[i] += f * g[i];
          }
        }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool train_mode,
               std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValueError(format_msg("dropout rate must be in [0,1), got ", rate));
  if (!train_mode || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(static_cast<std::size_t>(x.numel()));
  for (auto& f : factor)
    f = uniform_unit(rng) < rate ? 0.0 : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.raw();
  auto& ov = out.raw();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * factor[i];
  Tape* tape = detail::merge_tapes({&x});
  const bool needs = tape && x.needs_grad();
  detail::mark_result(out, tape, needs);
  if (needs) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    tape->record([xi, oi, factor]() {
      oi->ensure_grad();
      xi->ensure_grad();
      for (std::size_t i = 0; i < factor.size(); ++i)
        xi->grad[i] += oi->grad[i] * factor[i];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  Tensor mu = mean_lastdim(x);
  Tensor centered = sub(x, mu);
  Tensor var = mean_lastdim(mul(centered, centered));
  Tensor sd = sqrt_elem(add(var, Tensor::scalar(eps)));
  Tensor normed = div(centered, sd);
  return add(mul(normed, gain), bias);
}

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

std::vector<double> xavier_uniform(std::int64_t fan_in, std::int64_t fan_out,
                                   std::int64_t count, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(static_cast<std::size_t>(count));
  for (auto& e : v) e = uniform_range(rng, -a, a);
  return v;
}

}  // namespace hdf
