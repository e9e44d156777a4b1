#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "hf/common.hpp"

namespace hf {

// Dense row-major tensor of 64-bit floats. A Tensor is a cheap handle:
// copying shares the underlying storage (like shared_ptr), so accessors are
// const while still exposing mutable buffers. The gradient buffer lives next
// to the data and is allocated when requires_grad is switched on, so a
// tensor that requires grad always has a zero-initialized grad to
// accumulate into.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  double* data() const;
  std::vector<double>& values() const;

  double value() const;  // scalar tensors only
  double& at(std::size_t i) const;
  double& at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j, std::size_t k) const;
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  bool requires_grad() const;
  void set_requires_grad(bool on) const;
  double* grad() const;
  std::vector<double>& grad_values() const;
  void zero_grad() const;

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  Impl& impl() const;
};

// Reverse-mode tape. Ops append their backward step in execution order and
// backward() replays the list in reverse, which is a valid topological order
// because every op's inputs were produced before it ran. A tape is rebuilt
// for every forward pass (define-by-run). Gradients accumulate across
// repeated backward() calls until tensors are zeroed explicitly.
class Tape {
 public:
  void record(std::function<void()> step);
  // Registers an op output whose grad buffer belongs to this tape. Output
  // grads are zeroed at the start of every backward() so repeated calls
  // accumulate exactly one gradient per call into the leaves.
  void mark_output(const Tensor& out);
  void backward(const Tensor& loss);
  std::size_t size() const { return steps_.size(); }
  void clear();

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<Tensor> outputs_;
};

}  // namespace hf
