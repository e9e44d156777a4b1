#include "hf/loss.hpp"

#include <algorithm>
#include <cmath>

#include "hf/ops.hpp"

namespace hf {

namespace {

void check_simplex(const Tensor& targets) {
  const std::size_t B = targets.dim(0);
  const std::size_t C = targets.dim(1);
  const double* y = targets.data();
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = y[i * C + c];
      if (v < -1e-9) {
        throw ValueError("cross_entropy: target row " + std::to_string(i) +
                         " has a negative entry");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValueError("cross_entropy: target row " + std::to_string(i) +
                       " sums to " + format_double(s) + ", off the simplex");
    }
  }
}

}  // namespace

Tensor cross_entropy(Tape* tape, const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || targets.rank() != 2 || logits.shape() != targets.shape()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  }
  check_simplex(targets);
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.dim(1);
  const double* l = logits.data();
  const double* y = targets.data();

  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double* row = l + i * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    double row_sum = 0.0;
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      row_sum += y[i * C + c];
      dot += y[i * C + c] * row[c];
    }
    total += row_sum * lse - dot;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));

  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    tape->mark_output(out);
    tape->record([logits, targets, out, B, C]() {
      const double g = out.grad()[0] / static_cast<double>(B);
      const double* l2 = logits.data();
      const double* y2 = targets.data();
      double* dl = logits.grad();
      for (std::size_t i = 0; i < B; ++i) {
        const double* row = l2 + i * C;
        double mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double se = 0.0;
        for (std::size_t c = 0; c < C; ++c) se += std::exp(row[c] - mx);
        double row_sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) row_sum += y2[i * C + c];
        for (std::size_t c = 0; c < C; ++c) {
          const double p = std::exp(row[c] - mx) / se;
          dl[i * C + c] += g * (row_sum * p - y2[i * C + c]);
        }
      }
    });
  }
  return out;
}

Tensor center_loss(Tape* tape, const Tensor& z, const Tensor& targets,
                   const Tensor& centers) {
  if (z.rank() != 2 || targets.rank() != 2 || centers.rank() != 2) {
    throw ShapeError("center_loss: all inputs must be rank 2");
  }
  const std::size_t B = z.dim(0);
  const std::size_t H = z.dim(1);
  const std::size_t C = targets.dim(1);
  if (targets.dim(0) != B || centers.dim(0) != C || centers.dim(1) != H) {
    throw ShapeError("center_loss: z " + shape_str(z.shape()) + ", targets " +
                     shape_str(targets.shape()) + ", centers " +
                     shape_str(centers.shape()) + " disagree");
  }
  const double* pz = z.data();
  const double* py = targets.data();
  const double* pc = centers.data();

  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double w = py[i * C + c];
      if (w == 0.0) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < H; ++k) {
        const double d = pz[i * H + k] - pc[c * H + k];
        d2 += d * d;
      }
      total += w * 0.5 * d2;
    }
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));

  if (tape && (z.requires_grad() || centers.requires_grad())) {
    out.set_requires_grad(true);
    tape->mark_output(out);
    tape->record([z, targets, centers, out, B, H, C]() {
      const double g = out.grad()[0] / static_cast<double>(B);
      const double* pz2 = z.data();
      const double* py2 = targets.data();
      const double* pc2 = centers.data();
      double* dz = z.requires_grad() ? z.grad() : nullptr;
      double* dc = centers.requires_grad() ? centers.grad() : nullptr;
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          const double w = py2[i * C + c];
          if (w == 0.0) continue;
          for (std::size_t k = 0; k < H; ++k) {
            const double d = pz2[i * H + k] - pc2[c * H + k];
            if (dz) dz[i * H + k] += g * w * d;
            if (dc) dc[c * H + k] -= g * w * d;
          }
        }
      }
    });
  }
  return out;
}

std::pair<Tensor, LossReport> total_loss(Tape* tape, const Tensor& ce,
                                         const Tensor& center, double gamma) {
  if (gamma < 0.0) {
    throw ValueError("total_loss: gamma must be nonnegative, got " + format_double(gamma));
  }
  Tensor total = ops::add(tape, ce, ops::affine(tape, center, gamma, 0.0));
  LossReport report;
  report.cross_entropy = ce.value();
  report.center = center.value();
  report.gamma = gamma;
  report.total = total.value();
  return {total, report};
}

}  // namespace hf
