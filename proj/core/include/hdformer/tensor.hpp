#pragma once

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>

#include "hdformer/common.hpp"

namespace hdf {

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first backward touch
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad leaf, or derived from one
  Tape* tape = nullptr;
  std::string name;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major 64-bit tensor. Copies share the underlying buffer;
/// use `clone()` for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  /// Leaf registered on `tape`; participates in backward passes.
  static Tensor variable(Shape shape, std::vector<double> data, Tape& tape,
                         std::string name = {});
  static Tensor variable_zeros(Shape shape, Tape& tape, std::string name = {});

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(impl_->data.size());
  }
  /// Extent along `axis`; negative axes count from the back.
  std::int64_t extent(int axis) const;

  std::vector<double>& raw() { return impl_->data; }
  const std::vector<double>& raw() const { return impl_->data; }
  double scalar_value() const;
  double at(std::span<const std::int64_t> index) const;
  double at(std::initializer_list<std::int64_t> index) const {
    return at(std::span<const std::int64_t>(index.begin(), index.size()));
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_->needs_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  /// Allocates the gradient buffer (zeros) if absent, then returns it.
  std::vector<double>& grad_buffer();
  void zero_grad();
  Tape* tape() const { return impl_->tape; }
  const std::string& name() const { return impl_->name; }

  /// Deep copy detached from any tape.
  Tensor clone() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Wengert list: forward ops append gradient-propagation entries in execution
/// order; backward() replays them strictly in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backprop) {
    entries_.push_back(std::move(backprop));
  }
  std::size_t size() const { return entries_.size(); }

  /// Drops every recorded entry. Leaves registered on this tape stay alive.
  void clear() { entries_.clear(); }

  /// Seeds d(output)/d(output) = 1 and propagates through all entries in
  /// reverse recording order. `output` must be a scalar recorded on this tape.
  void backward(const Tensor& output);

 private:
  std::vector<std::function<void()>> entries_;
};

namespace detail {

/// Tape the result of an op lives on: the unique non-null tape among inputs.
Tape* merge_tapes(std::initializer_list<const Tensor*> inputs);
bool any_needs_grad(std::initializer_list<const Tensor*> inputs);
void mark_result(Tensor& out, Tape* tape, bool needs_grad);

}  // namespace detail

}  // namespace hdf
