#include "hf/tensor.hpp"

#include <algorithm>
#include <utility>

namespace hf {

namespace {
std::size_t flat_index(const Shape& s, std::size_t i, std::size_t j) {
  return i * s[1] + j;
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ValueError("Tensor: use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::numel() const { return impl().data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("Tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

double* Tensor::data() const { return impl().data.data(); }

std::vector<double>& Tensor::values() const { return impl().data; }

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("Tensor: value() needs a scalar, got " + shape_str(shape()));
  }
  return impl().data[0];
}

double& Tensor::at(std::size_t i) const { return impl().data.at(i); }

double& Tensor::at(std::size_t i, std::size_t j) const {
  return impl().data.at(flat_index(shape(), i, j));
}

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const Shape& s = shape();
  return impl().data.at((i * s[1] + j) * s[2] + k);
}

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  const Shape& s = shape();
  return impl().data.at(((i * s[1] + j) * s[2] + k) * s[3] + l);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) const {
  Impl& im = impl();
  im.requires_grad = on;
  if (on && im.grad.size() != im.data.size()) {
    im.grad.assign(im.data.size(), 0.0);
  }
}

double* Tensor::grad() const {
  Impl& im = impl();
  if (!im.requires_grad) {
    throw ValueError("Tensor: grad() on a tensor that does not require grad");
  }
  return im.grad.data();
}

std::vector<double>& Tensor::grad_values() const {
  Impl& im = impl();
  if (!im.requires_grad) {
    throw ValueError("Tensor: grad_values() on a tensor that does not require grad");
  }
  return im.grad;
}

void Tensor::zero_grad() const {
  Impl& im = impl();
  std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

void Tape::record(std::function<void()> step) { steps_.push_back(std::move(step)); }

void Tape::mark_output(const Tensor& out) { outputs_.push_back(out); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  for (const Tensor& out : outputs_) out.zero_grad();
  if (loss.requires_grad()) loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::clear() {
  steps_.clear();
  outputs_.clear();
}

}  // namespace hf
