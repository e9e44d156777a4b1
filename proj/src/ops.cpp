#include "hf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

namespace hf::ops {

namespace {

using std::size_t;

bool wants_grad(Tape* tape, const Tensor& a) { return tape && a.requires_grad(); }

void track_output(Tape* tape, const Tensor& out) {
  out.set_requires_grad(true);
  tape->mark_output(out);
}

bool wants_grad(Tape* tape, const Tensor& a, const Tensor& b) {
  return tape && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// ---------------------------------------------------------------------------
// matmul kernels. Accumulating variants so they serve forward and backward.
// Loop orders keep the innermost stride at 1; parallel rows write disjoint
// output, so results are identical for any thread count.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
//
// The reduction unrolls 8 deep so each pass over the C row amortizes eight
// fused multiply-adds per load/store. Every C element always accumulates
// over k in the same order, so results are bit-identical for any thread
// count.
void mm_nn_acc(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const size_t i = static_cast<size_t>(ii);
    double* c = C + i * n;
    const double* a = A + i * k;
    size_t t = 0;
    for (; t + 8 <= k; t += 8) {
      const double a0 = a[t], a1 = a[t + 1], a2 = a[t + 2], a3 = a[t + 3];
      const double a4 = a[t + 4], a5 = a[t + 5], a6 = a[t + 6], a7 = a[t + 7];
      const double* b = B + t * n;
      for (size_t j = 0; j < n; ++j) {
        c[j] += a0 * b[j] + a1 * b[n + j] + a2 * b[2 * n + j] + a3 * b[3 * n + j] +
                a4 * b[4 * n + j] + a5 * b[5 * n + j] + a6 * b[6 * n + j] +
                a7 * b[7 * n + j];
      }
    }
    for (; t < k; ++t) {
      const double av = a[t];
      const double* b = B + t * n;
      for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const size_t i = static_cast<size_t>(ii);
    const double* a = A + i * k;
    double* c = C + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s = 0.0;
      for (size_t t = 0; t < k; ++t) s += a[t] * b[t];
      c[j] += s;
    }
  }
}

// C[m,n] += A[p,m]^T * B[p,n]
void mm_tn_acc(const double* A, const double* B, double* C, size_t p, size_t m, size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const size_t i = static_cast<size_t>(ii);
    double* c = C + i * n;
    size_t t = 0;
    for (; t + 4 <= p; t += 4) {
      const double a0 = A[t * m + i], a1 = A[(t + 1) * m + i];
      const double a2 = A[(t + 2) * m + i], a3 = A[(t + 3) * m + i];
      const double* b = B + t * n;
      for (size_t j = 0; j < n; ++j) {
        c[j] += a0 * b[j] + a1 * b[n + j] + a2 * b[2 * n + j] + a3 * b[3 * n + j];
      }
    }
    for (; t < p; ++t) {
      const double av = A[t * m + i];
      const double* b = B + t * n;
      for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// ---------------------------------------------------------------------------
// conv1d kernels over [N,Cin,L]. Each sample lowers to a small column matrix
// (im2col) so forward and both backward passes run through the tiled matmul
// with every slice L1/L2-resident.
// ---------------------------------------------------------------------------

// ctn[(ci*K+kk)][t] = x[ci][t+kk], shape [Cin*K x Lout].
void lower_sample(const double* xn, double* ctn, size_t Cin, size_t L, size_t K,
                  size_t Lout) {
  for (size_t ci = 0; ci < Cin; ++ci) {
    const double* xrow = xn + ci * L;
    for (size_t kk = 0; kk < K; ++kk) {
      std::copy(xrow + kk, xrow + kk + Lout, ctn + (ci * K + kk) * Lout);
    }
  }
}

void conv_fwd(const double* in, const double* f, const double* b, double* out,
              size_t N, size_t Cin, size_t L, size_t Cout, size_t K) {
  const size_t Lout = L - K + 1;
  const size_t cik = Cin * K;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t nn = 0; nn < static_cast<std::ptrdiff_t>(N); ++nn) {
    const size_t n = static_cast<size_t>(nn);
    std::vector<double> ctn(cik * Lout);
    lower_sample(in + n * Cin * L, ctn.data(), Cin, L, K, Lout);
    double* on = out + n * Cout * Lout;
    for (size_t co = 0; co < Cout; ++co) {
      const double bias = b[co];
      for (size_t t = 0; t < Lout; ++t) on[co * Lout + t] = bias;
    }
    // out_n += F[Cout x cik] * ctn[cik x Lout]
    mm_nn_acc(f, ctn.data(), on, Cout, cik, Lout);
  }
}

void conv_bwd_input(const double* dout, const double* f, double* din, size_t N,
                    size_t Cin, size_t L, size_t Cout, size_t K) {
  const size_t Lout = L - K + 1;
  const size_t cik = Cin * K;
  // F transposed once: [cik x Cout].
  std::vector<double> ft(cik * Cout);
  for (size_t co = 0; co < Cout; ++co) {
    for (size_t j = 0; j < cik; ++j) ft[j * Cout + co] = f[co * cik + j];
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t nn = 0; nn < static_cast<std::ptrdiff_t>(N); ++nn) {
    const size_t n = static_cast<size_t>(nn);
    std::vector<double> dctn(cik * Lout, 0.0);
    // dctn = F^T * g_n, then scatter-add the lowering.
    mm_nn_acc(ft.data(), dout + n * Cout * Lout, dctn.data(), cik, Cout, Lout);
    double* dn = din + n * Cin * L;
    for (size_t ci = 0; ci < Cin; ++ci) {
      double* drow = dn + ci * L;
      for (size_t kk = 0; kk < K; ++kk) {
        const double* src = dctn.data() + (ci * K + kk) * Lout;
        double* ds = drow + kk;
        for (size_t t = 0; t < Lout; ++t) ds[t] += src[t];
      }
    }
  }
}

// Sequential over samples: the accumulation order into df/db never depends
// on thread settings.
void conv_bwd_params(const double* in, const double* dout, double* df, double* db,
                     size_t N, size_t Cin, size_t L, size_t Cout, size_t K) {
  const size_t Lout = L - K + 1;
  const size_t cik = Cin * K;
  std::vector<double> ctn(cik * Lout), cols(Lout * cik);
  for (size_t n = 0; n < N; ++n) {
    lower_sample(in + n * Cin * L, ctn.data(), Cin, L, K, Lout);
    for (size_t j = 0; j < cik; ++j) {
      for (size_t t = 0; t < Lout; ++t) cols[t * cik + j] = ctn[j * Lout + t];
    }
    const double* gn = dout + n * Cout * Lout;
    // dF += g_n[Cout x Lout] * cols[Lout x cik]
    mm_nn_acc(gn, cols.data(), df, Cout, Lout, cik);
    for (size_t co = 0; co < Cout; ++co) {
      double bias_acc = 0.0;
      for (size_t t = 0; t < Lout; ++t) bias_acc += gn[co * Lout + t];
      db[co] += bias_acc;
    }
  }
}

// Decompose a shape around an axis into outer x n x inner lanes.
void lane_split(const Shape& s, size_t axis, size_t* outer, size_t* n, size_t* inner) {
  *outer = 1;
  for (size_t i = 0; i < axis; ++i) *outer *= s[i];
  *n = s[axis];
  *inner = 1;
  for (size_t i = axis + 1; i < s.size(); ++i) *inner *= s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (wants_grad(tape, a, b)) {
    track_output(tape, out);
    tape->record([a, b, out, n]() {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
        for (size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        for (size_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (wants_grad(tape, a, b)) {
    track_output(tape, out);
    tape->record([a, b, out, n]() {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
        for (size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        for (size_t i = 0; i < n; ++i) db[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (wants_grad(tape, a, b)) {
    track_output(tape, out);
    tape->record([a, b, out, n]() {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
        const double* pb2 = b.data();
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * pb2[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        const double* pa2 = a.data();
        for (size_t i = 0; i < n; ++i) db[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor affine(Tape* tape, const Tensor& a, double scale, double shift) {
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = scale * pa[i] + shift;
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, scale, n]() {
      const double* g = out.grad();
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += scale * g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  mm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
  if (wants_grad(tape, a, b)) {
    track_output(tape, out);
    tape->record([a, b, out, m, k, n]() {
      const double* g = out.grad();
      if (a.requires_grad()) mm_nt_acc(g, b.data(), a.grad(), m, n, k);
      if (b.requires_grad()) mm_tn_acc(a.data(), g, b.grad(), m, k, n);
    });
  }
  return out;
}

Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = Tensor::zeros({B, m, n});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(B); ++bb) {
    const size_t i = static_cast<size_t>(bb);
    mm_nn_acc(a.data() + i * m * k, b.data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  if (wants_grad(tape, a, b)) {
    track_output(tape, out);
    tape->record([a, b, out, B, m, k, n]() {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(B); ++bb) {
          const size_t i = static_cast<size_t>(bb);
          mm_nt_acc(g + i * m * n, b.data() + i * k * n, da + i * m * k, m, n, k);
        }
      }
      if (b.requires_grad()) {
        double* db = b.grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(B); ++bb) {
          const size_t i = static_cast<size_t>(bb);
          mm_tn_acc(a.data() + i * m * k, g + i * m * n, db + i * k * n, m, k, n);
        }
      }
    });
  }
  return out;
}

Tensor conv1d_valid(Tape* tape, const Tensor& input, const Tensor& filters,
                    const Tensor& bias) {
  if (input.rank() != 2 && input.rank() != 3) {
    throw ShapeError("conv1d: input must be [Cin,L] or [N,Cin,L], got " +
                     shape_str(input.shape()));
  }
  const bool batched = input.rank() == 3;
  const size_t N = batched ? input.dim(0) : 1;
  const size_t Cin = batched ? input.dim(1) : input.dim(0);
  const size_t L = batched ? input.dim(2) : input.dim(1);
  if (filters.rank() != 3 || filters.dim(1) != Cin) {
    throw ShapeError("conv1d: filters " + shape_str(filters.shape()) +
                     " do not match input " + shape_str(input.shape()));
  }
  const size_t Cout = filters.dim(0), K = filters.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != Cout) {
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " must be [" +
                     std::to_string(Cout) + "]");
  }
  if (L < K) {
    throw ValueError("conv1d: window of length " + std::to_string(L) +
                     " is shorter than the kernel (" + std::to_string(K) + ")");
  }
  const size_t Lout = L - K + 1;
  Tensor out = batched ? Tensor::zeros({N, Cout, Lout}) : Tensor::zeros({Cout, Lout});
  conv_fwd(input.data(), filters.data(), bias.data(), out.data(), N, Cin, L, Cout, K);
  if (tape && (input.requires_grad() || filters.requires_grad() || bias.requires_grad())) {
    track_output(tape, out);
    tape->record([input, filters, bias, out, N, Cin, L, Cout, K]() {
      const double* g = out.grad();
      if (input.requires_grad()) {
        conv_bwd_input(g, filters.data(), input.grad(), N, Cin, L, Cout, K);
      }
      if (filters.requires_grad() || bias.requires_grad()) {
        std::vector<double> fscratch, bscratch;
        double* df = filters.requires_grad() ? filters.grad() : nullptr;
        double* db = bias.requires_grad() ? bias.grad() : nullptr;
        if (!df) {
          fscratch.assign(filters.numel(), 0.0);
          df = fscratch.data();
        }
        if (!db) {
          bscratch.assign(bias.numel(), 0.0);
          db = bscratch.data();
        }
        conv_bwd_params(input.data(), g, df, db, N, Cin, L, Cout, K);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Tensor relu(Tape* tape, const Tensor& a) {
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, n]() {
      const double* g = out.grad();
      const double* y = out.data();
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += y[i] > 0.0 ? g[i] : 0.0;
    });
  }
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& a) {
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) {
    const double x = pa[i];
    if (x >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      po[i] = e / (1.0 + e);
    }
  }
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, n]() {
      const double* g = out.grad();
      const double* y = out.data();
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor tanh(Tape* tape, const Tensor& a) {
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, n]() {
      const double* g = out.grad();
      const double* y = out.data();
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
  }
  size_t outer, n, inner;
  lane_split(a.shape(), axis, &outer, &n, &inner);
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      double mx = pa[base];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
      double s = 0.0;
      for (size_t j = 0; j < n; ++j) {
        const double e = std::exp(pa[base + j * inner] - mx);
        po[base + j * inner] = e;
        s += e;
      }
      const double invs = 1.0 / s;
      for (size_t j = 0; j < n; ++j) po[base + j * inner] *= invs;
    }
  }
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, outer, n, inner]() {
      const double* g = out.grad();
      const double* y = out.data();
      double* da = a.grad();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = o * n * inner + in;
          double dot = 0.0;
          for (size_t j = 0; j < n; ++j) {
            const size_t idx = base + j * inner;
            dot += g[idx] * y[idx];
          }
          for (size_t j = 0; j < n; ++j) {
            const size_t idx = base + j * inner;
            da[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& a, double p, bool training, Rng& rng) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw ValueError("dropout: probability must satisfy 0 <= p < 1, got " +
                     format_double(p));
  }
  if (!training || p == 0.0) return a;
  const size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  // Scaled keep mask; shared with the backward rule.
  auto mask = std::make_shared<std::vector<double>>(n, 0.0);
  const double keep_scale = 1.0 / (1.0 - p);
  const double* pa = a.data();
  double* po = out.data();
  double* pm = mask->data();
  for (size_t i = 0; i < n; ++i) {
    if (rng.uniform() >= p) pm[i] = keep_scale;
    po[i] = pa[i] * pm[i];
  }
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, mask, n]() {
      const double* g = out.grad();
      const double* pm2 = mask->data();
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * pm2[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

Tensor reshape(Tape* tape, const Tensor& a, Shape target) {
  if (shape_numel(target) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(target));
  }
  Tensor out = Tensor::from_vector(std::move(target), a.values());
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out]() {
      const double* g = out.grad();
      double* da = a.grad();
      const size_t n = a.numel();
      for (size_t i = 0; i < n; ++i) da[i] += g[i];
    });
  }
  return out;
}

Tensor permute(Tape* tape, const Tensor& a, const std::vector<std::size_t>& order) {
  const size_t r = a.rank();
  if (order.size() != r) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) +
                     " does not match rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (size_t ax : order) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axis order");
    seen[ax] = true;
  }
  const Shape& s = a.shape();
  Shape target(r);
  for (size_t i = 0; i < r; ++i) target[i] = s[order[i]];
  // Strides of the source viewed through the permutation.
  std::vector<size_t> src_stride(r, 1);
  for (size_t i = r; i-- > 1;) src_stride[i - 1] = src_stride[i] * s[i];
  std::vector<size_t> step(r);
  for (size_t i = 0; i < r; ++i) step[i] = src_stride[order[i]];

  Tensor out = Tensor::zeros(target);
  const size_t n = a.numel();
  const double* pa = a.data();
  double* po = out.data();
  std::vector<size_t> idx(r, 0);
  size_t src = 0;
  for (size_t flat = 0; flat < n; ++flat) {
    po[flat] = pa[src];
    for (size_t ax = r; ax-- > 0;) {
      idx[ax]++;
      src += step[ax];
      if (idx[ax] < target[ax]) break;
      src -= step[ax] * target[ax];
      idx[ax] = 0;
    }
  }
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, target, step, r, n]() {
      const double* g = out.grad();
      double* da = a.grad();
      std::vector<size_t> idx2(r, 0);
      size_t src2 = 0;
      for (size_t flat = 0; flat < n; ++flat) {
        da[src2] += g[flat];
        for (size_t ax = r; ax-- > 0;) {
          idx2[ax]++;
          src2 += step[ax];
          if (idx2[ax] < target[ax]) break;
          src2 -= step[ax] * target[ax];
          idx2[ax] = 0;
        }
      }
    });
  }
  return out;
}

Tensor concat(Tape* tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first));
  }
  size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: shapes disagree off-axis: " + shape_str(first) +
                         " vs " + shape_str(s));
      }
    }
    total += s[axis];
  }
  Shape target = first;
  target[axis] = total;
  size_t outer, n_out, inner;
  lane_split(target, axis, &outer, &n_out, &inner);
  Tensor out = Tensor::zeros(target);
  double* po = out.data();
  size_t offset = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const size_t np = p.dim(axis);
    const double* pp = p.data();
    for (size_t o = 0; o < outer; ++o) {
      std::copy(pp + o * np * inner, pp + (o + 1) * np * inner,
                po + (o * n_out + offset) * inner);
    }
    offset += np;
    any_grad = any_grad || p.requires_grad();
  }
  if (tape && any_grad) {
    track_output(tape, out);
    std::vector<Tensor> held = parts;
    tape->record([held, out, axis, outer, n_out, inner]() {
      const double* g = out.grad();
      size_t off = 0;
      for (const Tensor& p : held) {
        const size_t np = p.dim(axis);
        if (p.requires_grad()) {
          double* dp = p.grad();
          for (size_t o = 0; o < outer; ++o) {
            const double* gsrc = g + (o * n_out + off) * inner;
            double* dst = dp + o * np * inner;
            for (size_t i = 0; i < np * inner; ++i) dst[i] += gsrc[i];
          }
        }
        off += np;
      }
    });
  }
  return out;
}

Tensor slice(Tape* tape, const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length) {
  if (axis >= a.rank()) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
  }
  if (start + length > a.dim(axis) || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") invalid for axis of size " +
                     std::to_string(a.dim(axis)));
  }
  size_t outer, n, inner;
  lane_split(a.shape(), axis, &outer, &n, &inner);
  Shape target = a.shape();
  target[axis] = length;
  Tensor out = Tensor::zeros(target);
  const double* pa = a.data();
  double* po = out.data();
  for (size_t o = 0; o < outer; ++o) {
    std::copy(pa + (o * n + start) * inner, pa + (o * n + start + length) * inner,
              po + o * length * inner);
  }
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, outer, n, inner, start, length]() {
      const double* g = out.grad();
      double* da = a.grad();
      for (size_t o = 0; o < outer; ++o) {
        double* dst = da + (o * n + start) * inner;
        const double* gsrc = g + o * length * inner;
        for (size_t i = 0; i < length * inner; ++i) dst[i] += gsrc[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

Tensor sum(Tape* tape, const Tensor& a) {
  const size_t n = a.numel();
  const double* pa = a.data();
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += pa[i];
  Tensor out = Tensor::scalar(s);
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, n]() {
      const double g = out.grad()[0];
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += g;
    });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& a) {
  const size_t n = a.numel();
  const double* pa = a.data();
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += pa[i];
  const double inv = 1.0 / static_cast<double>(n);
  Tensor out = Tensor::scalar(s * inv);
  if (wants_grad(tape, a)) {
    track_output(tape, out);
    tape->record([a, out, n, inv]() {
      const double g = out.grad()[0] * inv;
      double* da = a.grad();
      for (size_t i = 0; i < n; ++i) da[i] += g;
    });
  }
  return out;
}

Tensor scale_rows(Tape* tape, const Tensor& x, const Tensor& s) {
  if (x.rank() != 2) throw ShapeError("scale_rows: x must be rank 2, got " + shape_str(x.shape()));
  const size_t m = x.dim(0), n = x.dim(1);
  const bool col = s.rank() == 2 && s.dim(0) == m && s.dim(1) == 1;
  if (!col && !(s.rank() == 1 && s.dim(0) == m)) {
    throw ShapeError("scale_rows: scale " + shape_str(s.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* ps = s.data();
  double* po = out.data();
  for (size_t i = 0; i < m; ++i) {
    const double sv = ps[i];
    for (size_t j = 0; j < n; ++j) po[i * n + j] = sv * px[i * n + j];
  }
  if (wants_grad(tape, x, s)) {
    track_output(tape, out);
    tape->record([x, s, out, m, n]() {
      const double* g = out.grad();
      if (x.requires_grad()) {
        double* dx = x.grad();
        const double* ps2 = s.data();
        for (size_t i = 0; i < m; ++i) {
          const double sv = ps2[i];
          for (size_t j = 0; j < n; ++j) dx[i * n + j] += sv * g[i * n + j];
        }
      }
      if (s.requires_grad()) {
        double* ds = s.grad();
        const double* px2 = x.data();
        for (size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (size_t j = 0; j < n; ++j) acc += g[i * n + j] * px2[i * n + j];
          ds[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  }
  if (wants_grad(tape, x, b)) {
    track_output(tape, out);
    tape->record([x, b, out, m, n]() {
      const double* g = out.grad();
      if (x.requires_grad()) {
        double* dx = x.grad();
        for (size_t i = 0; i < m * n; ++i) dx[i] += g[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

}  // namespace hf::ops
