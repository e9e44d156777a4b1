#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hf/loss.hpp"
#include "hf/ops.hpp"
#include "hf/rng.hpp"
#include "support/fd.hpp"
#include "support/oracles.hpp"

using namespace hf;
namespace op = hf::ops;
using hf::testing::fd_check;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

Tensor one_hot_targets(std::size_t B, std::size_t C, Rng& rng) {
  Tensor t = Tensor::zeros({B, C});
  for (std::size_t i = 0; i < B; ++i) t.at(i, rng.below(C)) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("cross entropy of uniform logits and a one-hot target is ln C") {
  Tensor logits = Tensor::full({1, 4}, 0.7);  // any constant row
  Tensor target = Tensor::from_vector({1, 4}, {0, 0, 1, 0});
  Tensor loss = cross_entropy(nullptr, logits, target);
  CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss.value() == doctest::Approx(1.38629).epsilon(1e-5));
}

TEST_CASE("cross entropy against its own softmax equals the entropy") {
  Rng rng(4);
  Tensor logits = random_tensor({3, 5}, rng, false, 2.0);
  Tensor p = op::softmax(nullptr, logits, 1);
  Tensor loss = cross_entropy(nullptr, logits, p);
  double entropy = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 5; ++c) {
      entropy -= p.at(i, c) * std::log(p.at(i, c));
    }
  }
  entropy /= 3.0;
  CHECK(loss.value() == doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("cross entropy is linear in the target vector") {
  Rng rng(5);
  Tensor logits = random_tensor({2, 4}, rng, false, 2.0);
  const double lam = 0.64;
  Tensor ei = Tensor::zeros({2, 4});
  Tensor ej = Tensor::zeros({2, 4});
  ei.at(0, 1) = 1.0;
  ei.at(1, 0) = 1.0;
  ej.at(0, 3) = 1.0;
  ej.at(1, 2) = 1.0;
  Tensor mixed = Tensor::zeros({2, 4});
  for (std::size_t i = 0; i < mixed.numel(); ++i) {
    mixed.data()[i] = lam * ei.data()[i] + (1.0 - lam) * ej.data()[i];
  }
  const double lhs = cross_entropy(nullptr, logits, mixed).value();
  const double rhs = lam * cross_entropy(nullptr, logits, ei).value() +
                     (1.0 - lam) * cross_entropy(nullptr, logits, ej).value();
  CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("cross entropy rejects targets off the simplex") {
  Tensor logits = Tensor::zeros({1, 3});
  Tensor bad_sum = Tensor::from_vector({1, 3}, {0.5, 0.5, 0.5});
  CHECK_THROWS_AS(cross_entropy(nullptr, logits, bad_sum), ValueError);
  Tensor negative = Tensor::from_vector({1, 3}, {1.2, -0.2, 0.0});
  CHECK_THROWS_AS(cross_entropy(nullptr, logits, negative), ValueError);
}

TEST_CASE("cross entropy is nonnegative and stable under extreme logits") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({4, 3}, rng, false, 400.0);
    Tensor targets = one_hot_targets(4, 3, rng);
    const double v = cross_entropy(nullptr, logits, targets).value();
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("cross entropy gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor logits = random_tensor({3, 4}, rng, true, 2.0);
    // Mix two one-hot targets so soft labels are exercised.
    Tensor targets = Tensor::zeros({3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t a = rng.below(4);
      const std::size_t b = rng.below(4);
      const double lam = rng.uniform();
      targets.at(i, a) += lam;
      targets.at(i, b) += 1.0 - lam;
    }
    auto res = fd_check({logits}, [&](Tape* tape) {
      return cross_entropy(tape, logits, targets);
    });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("center loss zero and single-sample examples") {
  Tensor centers = Tensor::from_vector({2, 2}, {1, 2, -3, 4});
  Tensor z = Tensor::from_vector({2, 2}, {1, 2, -3, 4});
  Tensor targets = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  CHECK(center_loss(nullptr, z, targets, centers).value() == 0.0);

  Tensor single_z = Tensor::from_vector({1, 2}, {1, 0});
  Tensor single_c = Tensor::from_vector({1, 2}, {0, 0});
  Tensor single_t = Tensor::from_vector({1, 1}, {1});
  CHECK(center_loss(nullptr, single_z, single_t, single_c).value() ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("center loss matches the naive per-sample loop") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t B = 5, H = 4, C = 3;
    Tensor z = random_tensor({B, H}, rng, false, 2.0);
    Tensor centers = random_tensor({C, H}, rng, false, 2.0);
    Tensor targets = seed % 2 == 0 ? one_hot_targets(B, C, rng) : Tensor::zeros({B, C});
    if (seed % 2 == 1) {
      for (std::size_t i = 0; i < B; ++i) {
        const std::size_t a = rng.below(C);
        const std::size_t b = rng.below(C);
        const double lam = rng.uniform();
        targets.at(i, a) += lam;
        targets.at(i, b) += 1.0 - lam;
      }
    }
    const double expect = hf::testing::center_loss_reference(
        z.values(), targets.values(), centers.values(), B, H, C);
    CHECK(std::abs(center_loss(nullptr, z, targets, centers).value() - expect) < 1e-12);
  }
}

TEST_CASE("center loss is invariant to rigid translation of z and centers") {
  Rng rng(17);
  const std::size_t B = 4, H = 3, C = 2;
  Tensor z = random_tensor({B, H}, rng, false, 2.0);
  Tensor centers = random_tensor({C, H}, rng, false, 2.0);
  Tensor targets = one_hot_targets(B, C, rng);
  const double base = center_loss(nullptr, z, targets, centers).value();

  std::vector<double> shift = {0.7, -1.3, 2.1};
  Tensor z2 = Tensor::zeros({B, H});
  Tensor c2 = Tensor::zeros({C, H});
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < H; ++k) z2.at(i, k) = z.at(i, k) + shift[k];
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < H; ++k) c2.at(c, k) = centers.at(c, k) + shift[k];
  }
  CHECK(std::abs(center_loss(nullptr, z2, targets, c2).value() - base) < 1e-9);
}

TEST_CASE("joint loss gradients w.r.t. z and centers match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t B = 4, H = 3, C = 3;
    Tensor z = random_tensor({B, H}, rng, true, 1.5);
    Tensor centers = random_tensor({C, H}, rng, true, 1.5);
    Tensor logits = random_tensor({B, C}, rng, true, 1.5);
    Tensor targets = one_hot_targets(B, C, rng);
    auto res = fd_check({z, centers, logits}, [&](Tape* tape) {
      Tensor ce = cross_entropy(tape, logits, targets);
      Tensor cl = center_loss(tape, z, targets, centers);
      return total_loss(tape, ce, cl, 0.37).first;
    });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("total loss composes the exact weighted sum") {
  Tensor ce = Tensor::scalar(1.0);
  Tensor cl = Tensor::scalar(2.0);
  auto [total, report] = total_loss(nullptr, ce, cl, 0.3);
  CHECK(total.value() == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(report.total == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(report.cross_entropy == 1.0);
  CHECK(report.center == 2.0);
  CHECK(report.gamma == 0.3);
  CHECK(std::abs(report.total - (report.cross_entropy + report.gamma * report.center)) <
        1e-12);

  // gamma = 0 leaves exactly the cross entropy.
  auto [inert, inert_report] = total_loss(nullptr, ce, cl, 0.0);
  CHECK(inert.value() == 1.0);
  CHECK(inert_report.total == 1.0);

  // The paper-style default echoes through.
  auto [t2, r2] = total_loss(nullptr, ce, cl, 3e-4);
  CHECK(r2.gamma == 3e-4);

  CHECK_THROWS_AS(total_loss(nullptr, ce, cl, -0.1), ValueError);
}

TEST_CASE("gamma zero makes the center term gradient-inert") {
  Rng rng(3);
  Tensor z = random_tensor({2, 3}, rng, true);
  Tensor centers = random_tensor({2, 3}, rng, true);
  Tensor logits = random_tensor({2, 2}, rng, true);
  Tensor targets = one_hot_targets(2, 2, rng);
  Tape tape;
  Tensor ce = cross_entropy(&tape, logits, targets);
  Tensor cl = center_loss(&tape, z, targets, centers);
  auto [total, report] = total_loss(&tape, ce, cl, 0.0);
  z.zero_grad();
  centers.zero_grad();
  logits.zero_grad();
  tape.backward(total);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.grad()[i] == 0.0);
  for (std::size_t i = 0; i < centers.numel(); ++i) CHECK(centers.grad()[i] == 0.0);
  bool logits_used = false;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (logits.grad()[i] != 0.0) logits_used = true;
  }
  CHECK(logits_used);
}

TEST_CASE("loss components are nonnegative on valid inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({3, 4}, rng, false, 3.0);
    Tensor targets = one_hot_targets(3, 4, rng);
    Tensor z = random_tensor({3, 5}, rng, false, 3.0);
    Tensor centers = random_tensor({4, 5}, rng, false, 3.0);
    Tensor ce = cross_entropy(nullptr, logits, targets);
    Tensor cl = center_loss(nullptr, z, targets, centers);
    auto [total, report] = total_loss(nullptr, ce, cl, 0.5);
    CHECK(report.cross_entropy >= 0.0);
    CHECK(report.center >= 0.0);
    CHECK(report.total >= 0.0);
  }
}
