#include "hdformer/params.hpp"

namespace hdf {

Tensor ParamRegistry::insert(const std::string& name, Shape shape,
                             std::vector<double> data) {
  if (entries_.count(name))
    throw ConfigError(format_msg("parameter '", name, "' registered twice"));
  Tensor t = Tensor::variable(std::move(shape), std::move(data), *tape_, name);
  entries_.emplace(name, t);
  return t;
}

Tensor ParamRegistry::linear_weight(const std::string& name,
                                    std::int64_t fan_in, std::int64_t fan_out) {
  return insert(name, {fan_in, fan_out},
                xavier_uniform(fan_in, fan_out, fan_in * fan_out, rng_));
}

Tensor ParamRegistry::conv_weight(const std::string& name, std::int64_t kernel,
                                  std::int64_t cin, std::int64_t cout) {
  return insert(name, {kernel, cin, cout},
                xavier_uniform(kernel * cin, kernel * cout,
                               kernel * cin * cout, rng_));
}

Tensor ParamRegistry::zeros(const std::string& name, Shape shape) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return insert(name, std::move(shape), std::vector<double>(n, 0.0));
}

Tensor ParamRegistry::ones(const std::string& name, Shape shape) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return insert(name, std::move(shape), std::vector<double>(n, 1.0));
}

Tensor ParamRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw ConfigError(format_msg("unknown parameter '", name, "'"));
  return it->second;
}

std::int64_t ParamRegistry::total_parameters() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamRegistry::zero_all_grads() {
  for (auto& [name, t] : entries_) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

}  // namespace hdf
