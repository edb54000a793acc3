#pragma once

#include <map>
#include <random>
#include <string>

#include "hdformer/ops.hpp"
#include "hdformer/tensor.hpp"

namespace hdf {

/// Owns every trainable tensor of a model, keyed by hierarchical name.
/// Initialization draws from one generator in creation order, so a fixed seed
/// reproduces identical weights.
class ParamRegistry {
 public:
  ParamRegistry(Tape& tape, std::uint64_t seed) : tape_(&tape), rng_(seed) {}

  /// Xavier-uniform [fan_in, fan_out] matrix.
  Tensor linear_weight(const std::string& name, std::int64_t fan_in,
                       std::int64_t fan_out);
  /// Xavier-uniform [kernel, cin, cout] stack; fans count kernel taps.
  Tensor conv_weight(const std::string& name, std::int64_t kernel,
                     std::int64_t cin, std::int64_t cout);
  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);

  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }
  Tensor get(const std::string& name) const;
  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::int64_t total_parameters() const;
  Tape& tape() const { return *tape_; }
  void zero_all_grads();

 private:
  Tensor insert(const std::string& name, Shape shape, std::vector<double> data);

  Tape* tape_;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor> entries_;
};

}  // namespace hdf
