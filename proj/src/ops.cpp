#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "star/autodiff.hpp"
#include "star/errors.hpp"
#include "star/profiler.hpp"

namespace star {

namespace {

Tape& same_tape(Var a, Var b, std::string_view op) {
  if (!a.tape || a.tape != b.tape) {
    throw InvalidArgument(std::string(op) + ": operands must share a tape");
  }
  return *a.tape;
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// How the second operand of a binary op maps onto the first.
struct Broadcast {
  enum Mode { kSame, kScalar, kRow, kColumn } mode = kSame;
  std::size_t period = 1;  // kRow: numel of b; kColumn: last extent of a

  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case kSame: return i;
      case kScalar: return 0;
      case kRow: return i % period;
      case kColumn: return i / period;
    }
    return i;
  }
};

Broadcast resolve_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return {Broadcast::kSame, 1};
  if (shape_numel(b) == 1) return {Broadcast::kScalar, 1};
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<long>(b.size()))) {
    return {Broadcast::kRow, shape_numel(b)};
  }
  if (a.size() == b.size() && !a.empty() && b.back() == 1 &&
      std::equal(a.begin(), a.end() - 1, b.begin())) {
    return {Broadcast::kColumn, a.back()};
  }
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

template <class Fwd, class Dfn>
Var unary(std::string_view op, Var a, std::uint64_t macs, Fwd fwd, Dfn dydx) {
  const Tensor& x = a.value();
  std::vector<double> out(x.numel());
  {
    profiling::OpTimer timer(op, macs);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  }
  Tensor y(x.shape(), std::move(out));
  return a.tape->record(op, y, {a}, [x, y, dydx](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.input(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(x[i], y[i]);
    }
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t row_width(const Tensor& t, std::string_view op) {
  if (t.rank() == 0) throw DimensionError(std::string(op) + ": scalar has no rows");
  std::size_t rows = t.dim(0);
  return rows == 0 ? 0 : t.numel() / rows;
}

Shape with_rows(const Shape& s, std::size_t rows) {
  Shape out = s;
  out[0] = rows;
  return out;
}

void check_index(const Index& index, std::size_t bound, std::string_view op) {
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= bound) {
      throw IndexError(std::string(op) + ": index[" + std::to_string(i) + "] = " +
                       std::to_string(index[i]) + " out of range [0, " + std::to_string(bound) + ")");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw DimensionError("matmul: inner dims differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    profiling::OpTimer timer("matmul", m * k * n);
    const double* pa = A.ptr();
    const double* pb = B.ptr();
    for (std::size_t i = 0; i < m; ++i) {
      double* row = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        const double* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  }
  return tape.record("matmul", Tensor({m, n}, std::move(out)), {a, b},
                     [A, B, m, k, n](std::span<const double> g, GradSink& sink) {
                       if (double* ga = sink.input(0)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (double* gb = sink.input(1)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                           }
                       }
                     });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight, "linear");
  same_tape(x, bias, "linear");
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& Bv = bias.value();
  require_rank(X, 2, "linear");
  require_rank(W, 2, "linear");
  const std::size_t r = X.dim(0), in = X.dim(1), out_dim = W.dim(1);
  if (W.dim(0) != in || Bv.numel() != out_dim) {
    throw DimensionError("linear: input " + shape_str(X.shape()) + ", weight " + shape_str(W.shape()) +
                         ", bias " + shape_str(Bv.shape()));
  }
  std::vector<double> out(r * out_dim);
  {
    profiling::OpTimer timer("linear", r * in * out_dim);
    const double* px = X.ptr();
    const double* pw = W.ptr();
    for (std::size_t i = 0; i < r; ++i) {
      double* row = out.data() + i * out_dim;
      std::copy(Bv.ptr(), Bv.ptr() + out_dim, row);
      for (std::size_t p = 0; p < in; ++p) {
        const double xv = px[i * in + p];
        const double* wrow = pw + p * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) row[j] += xv * wrow[j];
      }
    }
  }
  return tape.record("linear", Tensor({r, out_dim}, std::move(out)), {x, weight, bias},
                     [X, W, r, in, out_dim](std::span<const double> g, GradSink& sink) {
                       const double* __restrict pg = g.data();
                       if (double* __restrict gx = sink.input(0)) {
                         // W transposed once so the row update vectorizes
                         std::vector<double> wt(in * out_dim);
                         const double* pw = W.ptr();
                         for (std::size_t p = 0; p < in; ++p)
                           for (std::size_t j = 0; j < out_dim; ++j) wt[j * in + p] = pw[p * out_dim + j];
                         for (std::size_t i = 0; i < r; ++i) {
                           double* __restrict row = gx + i * in;
                           for (std::size_t j = 0; j < out_dim; ++j) {
                             const double gv = pg[i * out_dim + j];
                             const double* __restrict wrow = wt.data() + j * in;
                             for (std::size_t p = 0; p < in; ++p) row[p] += gv * wrow[p];
                           }
                         }
                       }
                       if (double* __restrict gw = sink.input(1)) {
                         const double* __restrict px = X.ptr();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t p = 0; p < in; ++p) {
                             const double xv = px[i * in + p];
                             double* __restrict wrow = gw + p * out_dim;
                             const double* __restrict grow = pg + i * out_dim;
                             for (std::size_t j = 0; j < out_dim; ++j) wrow[j] += xv * grow[j];
                           }
                       }
                       if (double* __restrict gb = sink.input(2)) {
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < out_dim; ++j) gb[j] += pg[i * out_dim + j];
                       }
                     });
}

Var bmm(Var a, Var b) {
  Tape& tape = same_tape(a, b, "bmm");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 3, "bmm");
  require_rank(B, 3, "bmm");
  const std::size_t batch = A.dim(0), m = A.dim(1), k = A.dim(2), n = B.dim(2);
  if (B.dim(0) != batch || B.dim(1) != k) {
    throw DimensionError("bmm: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  {
    profiling::OpTimer timer("bmm", batch * m * k * n);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* pa = A.ptr() + bi * m * k;
      const double* pb = B.ptr() + bi * k * n;
      double* po = out.data() + bi * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[p * n + j];
        }
    }
  }
  return tape.record("bmm", Tensor({batch, m, n}, std::move(out)), {a, b},
                     [A, B, batch, m, k, n](std::span<const double> g, GradSink& sink) {
                       double* ga = sink.input(0);
                       double* gb = sink.input(1);
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         const double* pa = A.ptr() + bi * m * k;
                         const double* pb = B.ptr() + bi * k * n;
                         const double* pg = g.data() + bi * m * n;
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             if (ga) {
                               double s = 0.0;
                               for (std::size_t j = 0; j < n; ++j) s += pg[i * n + j] * pb[p * n + j];
                               ga[bi * m * k + i * k + p] += s;
                             }
                             if (gb) {
                               const double av = pa[i * k + p];
                               for (std::size_t j = 0; j < n; ++j) gb[bi * k * n + p * n + j] += av * pg[i * n + j];
                             }
                           }
                       }
                     });
}

Var rowwise_dot(Var a, Var b) {
  Tape& tape = same_tape(a, b, "rowwise_dot");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "rowwise_dot");
  if (A.shape() != B.shape()) {
    throw DimensionError("rowwise_dot: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1);
  std::vector<double> out(m);
  {
    profiling::OpTimer timer("rowwise_dot", m * k);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[i * k + p];
      out[i] = s;
    }
  }
  return tape.record("rowwise_dot", Tensor({m, 1}, std::move(out)), {a, b},
                     [A, B, m, k](std::span<const double> g, GradSink& sink) {
                       if (double* ga = sink.input(0))
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g[i] * B[i * k + p];
                       if (double* gb = sink.input(1))
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) gb[i * k + p] += g[i] * A[i * k + p];
                     });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Var binary(BinaryKind kind, Var a, Var b) {
  static constexpr std::string_view kNames[] = {"add", "sub", "mul", "div"};
  const std::string_view op = kNames[static_cast<int>(kind)];
  Tape& tape = same_tape(a, b, op);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Broadcast bc = resolve_broadcast(A.shape(), B.shape(), op);
  const std::size_t n = A.numel();
  std::vector<double> out(n);
  {
    profiling::OpTimer timer(op, kind == BinaryKind::kMul ? n : 0);
    switch (kind) {
      case BinaryKind::kAdd: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] + B[bc(i)]; break;
      case BinaryKind::kSub: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] - B[bc(i)]; break;
      case BinaryKind::kMul: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] * B[bc(i)]; break;
      case BinaryKind::kDiv: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] / B[bc(i)]; break;
    }
  }
  return tape.record(op, Tensor(A.shape(), std::move(out)), {a, b},
                     [kind, A, B, bc, n](std::span<const double> g, GradSink& sink) {
                       double* ga = sink.input(0);
                       double* gb = sink.input(1);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double bv = B[bc(i)];
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (ga) ga[i] += g[i];
                             if (gb) gb[bc(i)] += g[i];
                             break;
                           case BinaryKind::kSub:
                             if (ga) ga[i] += g[i];
                             if (gb) gb[bc(i)] -= g[i];
                             break;
                           case BinaryKind::kMul:
                             if (ga) ga[i] += g[i] * bv;
                             if (gb) gb[bc(i)] += g[i] * A[i];
                             break;
                           case BinaryKind::kDiv:
                             if (ga) ga[i] += g[i] / bv;
                             if (gb) gb[bc(i)] -= g[i] * A[i] / (bv * bv);
                             break;
                         }
                       }
                     });
}

}  // namespace

Var add(Var a, Var b) { return binary(BinaryKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(BinaryKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(BinaryKind::kMul, a, b); }
Var div(Var a, Var b) { return binary(BinaryKind::kDiv, a, b); }

Var exp(Var a) {
  return unary("exp", a, 0, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var tanh(Var a) {
  return unary("tanh", a, 0, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, 0, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
  return unary("silu", a, 0, [](double x) { return x * sigmoid_scalar(x); },
               [](double x, double) {
                 const double s = sigmoid_scalar(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Var elu(Var a) {
  return unary("elu", a, 0, [](double x) { return x > 0 ? x : std::expm1(x); },
               [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Var relu(Var a) {
  return unary("relu", a, 0, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var scale(Var a, double factor) {
  return unary("scale", a, 0, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary("add_scalar", a, 0, [value](double x) { return x + value; },
               [](double, double) { return 1.0; });
}

Var elementwise(ElementwiseKind kind, Var a, const Var* b, double factor) {
  auto need_b = [&]() -> Var {
    if (!b) throw InvalidArgument("elementwise: binary kind needs a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, need_b());
    case ElementwiseKind::kSub: return sub(a, need_b());
    case ElementwiseKind::kMul: return mul(a, need_b());
    case ElementwiseKind::kDiv: return div(a, need_b());
    case ElementwiseKind::kExp: return exp(a);
    case ElementwiseKind::kTanh: return tanh(a);
    case ElementwiseKind::kSigmoid: return sigmoid(a);
    case ElementwiseKind::kSilu: return silu(a);
    case ElementwiseKind::kElu: return elu(a);
    case ElementwiseKind::kScale: return scale(a, factor);
  }
  throw InvalidArgument("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", out, {a}, [](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.input(0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var permute(Var a, std::span<const std::size_t> axes) {
  const Tensor& x = a.value();
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw DimensionError("permute: axes size does not match rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: axes are not a permutation");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);

  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<double> out(n);
  {
    profiling::OpTimer timer("permute", 0);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < n; ++o) {
      std::size_t src = 0;
      for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[axes[d]];
      (*source)[o] = src;
      out[o] = x[src];
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < out_shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  return a.tape->record("permute", Tensor(out_shape, std::move(out)), {a},
                        [source](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.input(0))
                            for (std::size_t o = 0; o < g.size(); ++o) ga[(*source)[o]] += g[o];
                        });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return a.tape->record("sum", Tensor::scalar(s), {a}, [n](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.input(0))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
  });
}

// ---------------------------------------------------------------------------
// Gather / scatter
// ---------------------------------------------------------------------------

Var gather(Var src, IndexPtr index) {
  const Tensor& x = src.value();
  const std::size_t width = row_width(x, "gather");
  check_index(*index, x.dim(0), "gather");
  const std::size_t m = index->size();
  std::vector<double> out(m * width);
  {
    profiling::OpTimer timer("gather", 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* from = x.ptr() + (*index)[i] * width;
      std::copy(from, from + width, out.data() + i * width);
    }
  }
  return src.tape->record("gather", Tensor(with_rows(x.shape(), m), std::move(out)), {src},
                          [index, width](std::span<const double> g, GradSink& sink) {
                            if (double* gs = sink.input(0)) {
                              for (std::size_t i = 0; i < index->size(); ++i) {
                                double* to = gs + (*index)[i] * width;
                                const double* from = g.data() + i * width;
                                for (std::size_t c = 0; c < width; ++c) to[c] += from[c];
                              }
                            }
                          });
}

Var scatter_sum(Var src, IndexPtr index, std::size_t num_rows) {
  const Tensor& x = src.value();
  const std::size_t width = row_width(x, "scatter_sum");
  if (index->size() != x.dim(0)) {
    throw DimensionError("scatter_sum: index has " + std::to_string(index->size()) + " entries for " +
                         std::to_string(x.dim(0)) + " rows");
  }
  check_index(*index, num_rows, "scatter_sum");
  std::vector<double> out(num_rows * width, 0.0);
  {
    profiling::OpTimer timer("scatter_sum", 0);
    // ascending source row order within every group
    for (std::size_t i = 0; i < index->size(); ++i) {
      double* to = out.data() + (*index)[i] * width;
      const double* from = x.ptr() + i * width;
      for (std::size_t c = 0; c < width; ++c) to[c] += from[c];
    }
  }
  return src.tape->record("scatter_sum", Tensor(with_rows(x.shape(), num_rows), std::move(out)), {src},
                          [index, width](std::span<const double> g, GradSink& sink) {
                            if (double* gs = sink.input(0)) {
                              for (std::size_t i = 0; i < index->size(); ++i) {
                                const double* from = g.data() + (*index)[i] * width;
                                double* to = gs + i * width;
                                for (std::size_t c = 0; c < width; ++c) to[c] += from[c];
                              }
                            }
                          });
}

ScatterMaxResult scatter_max(Var src, IndexPtr index, std::size_t num_rows) {
  const Tensor& x = src.value();
  const std::size_t width = row_width(x, "scatter_max");
  if (index->size() != x.dim(0)) throw DimensionError("scatter_max: index/rows mismatch");
  check_index(*index, num_rows, "scatter_max");
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  auto argmax = std::make_shared<std::vector<std::size_t>>(num_rows * width, kNone);
  std::vector<double> out(num_rows * width, 0.0);
  std::vector<bool> empty(num_rows, true);
  {
    profiling::OpTimer timer("scatter_max", 0);
    for (std::size_t i = 0; i < index->size(); ++i) {
      const std::size_t row = (*index)[i];
      empty[row] = false;
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t slot = row * width + c;
        const double v = x[i * width + c];
        if ((*argmax)[slot] == kNone || v > out[slot]) {
          out[slot] = v;
          (*argmax)[slot] = i * width + c;
        }
      }
    }
  }
  Var values = src.tape->record("scatter_max", Tensor(with_rows(x.shape(), num_rows), std::move(out)), {src},
                                [argmax](std::span<const double> g, GradSink& sink) {
                                  if (double* gs = sink.input(0)) {
                                    for (std::size_t s = 0; s < g.size(); ++s)
                                      if ((*argmax)[s] != kNone) gs[(*argmax)[s]] += g[s];
                                  }
                                });
  return {values, std::move(empty)};
}

// ---------------------------------------------------------------------------
// Normalization, regularization, losses
// ---------------------------------------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  const Tensor& X = x.value();
  if (X.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = X.shape().back();
  if (d == 0) throw DimensionError("layer_norm: normalized dimension is 0");
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const Tensor G = gamma.value();
  const Tensor Bt = beta.value();
  const std::size_t rows = X.numel() / d;
  std::vector<double> xhat(X.numel());
  std::vector<double> rstd(rows);
  std::vector<double> out(X.numel());
  {
    profiling::OpTimer timer("layer_norm", X.numel());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = X.ptr() + r * d;
      double mean = 0.0;
      for (std::size_t c = 0; c < d; ++c) mean += row[c];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= static_cast<double>(d);
      rstd[r] = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < d; ++c) {
        const double h = (row[c] - mean) * rstd[r];
        xhat[r * d + c] = h;
        out[r * d + c] = h * G[c] + Bt[c];
      }
    }
  }
  auto saved_xhat = std::make_shared<const std::vector<double>>(std::move(xhat));
  auto saved_rstd = std::make_shared<const std::vector<double>>(std::move(rstd));
  return tape.record("layer_norm", Tensor(X.shape(), std::move(out)), {x, gamma, beta},
                     [G, d, rows, saved_xhat, saved_rstd](std::span<const double> g, GradSink& sink) {
                       const auto& xh = *saved_xhat;
                       double* gx = sink.input(0);
                       double* gg = sink.input(1);
                       double* gb = sink.input(2);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gr = g.data() + r * d;
                         const double* hr = xh.data() + r * d;
                         if (gg) for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * hr[c];
                         if (gb) for (std::size_t c = 0; c < d; ++c) gb[c] += gr[c];
                         if (!gx) continue;
                         double sum_dh = 0.0, sum_dh_h = 0.0;
                         for (std::size_t c = 0; c < d; ++c) {
                           const double dh = gr[c] * G[c];
                           sum_dh += dh;
                           sum_dh_h += dh * hr[c];
                         }
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t c = 0; c < d; ++c) {
                           const double dh = gr[c] * G[c];
                           gx[r * d + c] += (*saved_rstd)[r] * (dh - inv_d * sum_dh - hr[c] * inv_d * sum_dh_h);
                         }
                       }
                     });
}

Var dropout(Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const Tensor& X = x.value();
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(X.numel());
  std::vector<double> out(X.numel());
  {
    profiling::OpTimer timer("dropout", 0);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
      out[i] = X[i] * (*mask)[i];
    }
  }
  return x.tape->record("dropout", Tensor(X.shape(), std::move(out)), {x},
                        [mask](std::span<const double> g, GradSink& sink) {
                          if (double* gx = sink.input(0))
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                        });
}

Var masked_softmax(Var scores, const Tensor& mask) {
  const Tensor& S = scores.value();
  if (S.rank() < 2) throw DimensionError("masked_softmax: scores need rank >= 2");
  const std::size_t vq = S.dim(S.rank() - 2), vk = S.dim(S.rank() - 1);
  if (mask.rank() != 2 || mask.dim(0) != vq || mask.dim(1) != vk) {
    throw DimensionError("masked_softmax: mask " + shape_str(mask.shape()) + " for scores " + shape_str(S.shape()));
  }
  for (std::size_t i = 0; i < vq; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < vk; ++j) {
      const double m = mask.at(i, j);
      if (m != 0.0 && m != 1.0) throw InvalidArgument("masked_softmax: mask entries must be 0 or 1");
      any = any || m == 1.0;
    }
    if (!any) throw InvalidArgument("masked_softmax: mask row " + std::to_string(i) + " is all zero");
  }
  const std::size_t rows = S.numel() / vk;
  std::vector<double> out(S.numel(), 0.0);
  {
    profiling::OpTimer timer("masked_softmax", 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t qi = r % vq;
      const double* srow = S.ptr() + r * vk;
      double* orow = out.data() + r * vk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < vk; ++j)
        if (mask.at(qi, j) == 1.0) mx = std::max(mx, srow[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < vk; ++j) {
        if (mask.at(qi, j) != 1.0) continue;
        orow[j] = std::exp(srow[j] - mx);
        z += orow[j];
      }
      for (std::size_t j = 0; j < vk; ++j) orow[j] /= z;
    }
  }
  Tensor Y(S.shape(), std::move(out));
  return scores.tape->record("masked_softmax", Y, {scores},
                             [Y, vk](std::span<const double> g, GradSink& sink) {
                               double* gs = sink.input(0);
                               if (!gs) return;
                               const std::size_t rows = Y.numel() / vk;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < vk; ++j) dot += g[r * vk + j] * Y[r * vk + j];
                                 for (std::size_t j = 0; j < vk; ++j)
                                   gs[r * vk + j] += Y[r * vk + j] * (g[r * vk + j] - dot);
                               }
                             });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& L = logits.value();
  require_rank(L, 2, "cross_entropy");
  const std::size_t rows = L.dim(0), classes = L.dim(1);
  if (labels.size() != rows) throw DimensionError("cross_entropy: one label per row required");
  if (rows == 0) throw InvalidArgument("cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(rows * classes);
  auto targets = std::make_shared<std::vector<std::size_t>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " >= " + std::to_string(classes));
    }
    const double* row = L.ptr() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[r * classes + c] = std::exp(row[c] - mx) / z;
    loss += -(row[labels[r]] - mx - std::log(z));
  }
  loss /= static_cast<double>(rows);
  return logits.tape->record("cross_entropy", Tensor::scalar(loss), {logits},
                             [probs, targets, rows, classes](std::span<const double> g, GradSink& sink) {
                               double* gl = sink.input(0);
                               if (!gl) return;
                               const double w = g[0] / static_cast<double>(rows);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < classes; ++c) {
                                   const double target = c == (*targets)[r] ? 1.0 : 0.0;
                                   gl[r * classes + c] += w * ((*probs)[r * classes + c] - target);
                                 }
                             });
}

}  // namespace star
