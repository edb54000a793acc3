#include "hdformer/tensor.hpp"

#include <cmath>

namespace hdf {

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape,
                                              std::vector<double> data) {
  for (std::int64_t d : shape) {
    if (d <= 0)
      throw ShapeError(
          format_msg("tensor extents must be positive, got ", shape_str(shape)));
  }
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (data.size() != n)
    throw ShapeError(format_msg("shape ", shape_str(shape), " wants ", n,
                                " values, got ", data.size()));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::variable(Shape shape, std::vector<double> data, Tape& tape,
                        std::string name) {
  auto impl = make_impl(std::move(shape), std::move(data));
  impl->requires_grad = true;
  impl->needs_grad = true;
  impl->tape = &tape;
  impl->name = std::move(name);
  return Tensor(std::move(impl));
}

Tensor Tensor::variable_zeros(Shape shape, Tape& tape, std::string name) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return variable(std::move(shape), std::vector<double>(n, 0.0), tape,
                  std::move(name));
}

std::int64_t Tensor::extent(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError(format_msg("axis ", axis, " out of range for rank ", r));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::scalar_value() const {
  if (numel() != 1)
    throw ShapeError(
        format_msg("expected a scalar, got shape ", shape_str(shape())));
  return impl_->data[0];
}

double Tensor::at(std::span<const std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank())
    throw ShapeError(format_msg("index rank ", index.size(),
                                " does not match tensor rank ", rank()));
  std::int64_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= impl_->shape[i])
      throw ShapeError(format_msg("index ", index[i], " out of bounds for axis ",
                                  i, " with extent ", impl_->shape[i]));
    flat = flat * impl_->shape[i] + index[i];
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw ValueError(format_msg("tensor '", impl_->name,
                                "' has no gradient buffer; run backward first"));
  return impl_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor::from_data(impl_->shape, impl_->data);
}

void Tape::backward(const Tensor& output) {
  if (output.numel() != 1)
    throw ShapeError(format_msg("backward needs a scalar output, got ",
                                shape_str(output.shape())));
  if (output.tape() != this)
    throw ValueError("backward: output was not recorded on this tape");
  if (!output.needs_grad())
    throw ValueError("backward: output does not depend on any variable");
  output.impl()->ensure_grad();
  output.impl()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace detail {

Tape* merge_tapes(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->defined()) continue;
    Tape* tt = t->tape();
    if (!tt) continue;
    if (tape && tape != tt)
      throw ValueError("operands belong to different tapes");
    tape = tt;
  }
  return tape;
}

bool any_needs_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->defined() && t->needs_grad()) return true;
  return false;
}

void mark_result(Tensor& out, Tape* tape, bool needs_grad) {
  out.impl()->tape = tape;
  out.impl()->needs_grad = needs_grad;
}

}  // namespace detail

}  // namespace hdf
