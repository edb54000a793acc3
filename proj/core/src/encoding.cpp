#include "hdformer/encoding.hpp"

#include <algorithm>

namespace hdf {

EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "subtraction") return EncoderMode::subtraction;
  if (s == "summation") return EncoderMode::summation;
  if (s == "multiplication") return EncoderMode::multiplication;
  if (s == "concatenation") return EncoderMode::concatenation;
  if (s == "sub_concat") return EncoderMode::sub_concat;
  throw ConfigError(format_msg(
      "unknown encoder mode '", s,
      "'; expected subtraction|summation|multiplication|concatenation|sub_concat"));
}

std::string to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::subtraction: return "subtraction";
    case EncoderMode::summation: return "summation";
    case EncoderMode::multiplication: return "multiplication";
    case EncoderMode::concatenation: return "concatenation";
    case EncoderMode::sub_concat: return "sub_concat";
  }
  return "?";
}

HyperboneEncoder::HyperboneEncoder(ParamRegistry& params,
                                   const std::string& prefix,
                                   HyperboneIndex index, EncoderMode mode,
                                   std::int64_t channels)
    : index_(std::move(index)), mode_(mode), channels_(channels) {
  if (channels <= 0)
    throw ConfigError("hyperbone encoder needs a positive channel count");
  switch (mode_) {
    case EncoderMode::subtraction:
    case EncoderMode::summation:
    case EncoderMode::multiplication:
      shared_map_ = params.linear_weight(prefix + ".f", channels, channels);
      break;
    case EncoderMode::concatenation:
    case EncoderMode::sub_concat:
      for (std::int64_t o = 2; o <= index_.max_order; ++o) {
        const std::int64_t width = mode_ == EncoderMode::concatenation
                                       ? o * channels
                                       : (o - 1) * channels;
        order_maps_.emplace(
            o, params.linear_weight(format_msg(prefix, ".f", o), width,
                                    channels));
      }
      break;
  }
}

Tensor HyperboneEncoder::shared_map() const {
  if (!shared_map_.defined())
    throw ConfigError(format_msg("encoder mode ", to_string(mode_),
                                 " has per-order maps, not a shared map"));
  return shared_map_;
}

Tensor HyperboneEncoder::order_map(std::int64_t order) const {
  auto it = order_maps_.find(order);
  if (it == order_maps_.end())
    throw ConfigError(format_msg("encoder has no linear map for order ", order,
                                 " (built for orders 2..", index_.max_order,
                                 ")"));
  return it->second;
}

Tensor HyperboneEncoder::encode_one(const Tensor& z, const Hyperbone& hb) const {
  if (z.rank() != 4)
    throw ShapeError(format_msg(
        "encoder expects joint features [B,T,J,C], got ", shape_str(z.shape())));
  if (z.extent(-1) != channels_)
    throw ShapeError(format_msg("encoder channels ", channels_,
                                " do not match features ",
                                shape_str(z.shape())));
  const std::int64_t joints = z.extent(2);
  for (std::int64_t j : hb.path)
    if (j < 0 || j >= joints)
      throw ShapeError(format_msg("hyperbone joint ", j, " out of range for ",
                                  joints, " joints"));

  auto sel = [&](std::int64_t j) {
    const std::int64_t idx[] = {j};
    return index_select(z, 2, idx);
  };

  const std::int64_t n = hb.order();
  switch (mode_) {
    case EncoderMode::subtraction:
      return matmul(sub(sel(hb.start()), sel(hb.end())), shared_map_);
    case EncoderMode::summation: {
      Tensor acc = matmul(sel(hb.path[0]), shared_map_);
      for (std::int64_t k = 1; k < n; ++k)
        acc = add(acc, matmul(sel(hb.path[static_cast<std::size_t>(k)]),
                              shared_map_));
      return scale(acc, 1.0 / static_cast<double>(n));
    }
    case EncoderMode::multiplication: {
      Tensor acc = matmul(sel(hb.path[0]), shared_map_);
      for (std::int64_t k = 1; k < n; ++k)
        acc = mul(acc, matmul(sel(hb.path[static_cast<std::size_t>(k)]),
                              shared_map_));
      return acc;
    }
    case EncoderMode::concatenation: {
      std::vector<Tensor> parts;
      parts.reserve(static_cast<std::size_t>(n));
      for (std::int64_t j : hb.path) parts.push_back(sel(j));
      return matmul(concat_lastdim(parts), order_map(n));
    }
    case EncoderMode::sub_concat: {
      std::vector<Tensor> diffs;
      diffs.reserve(static_cast<std::size_t>(n - 1));
      for (std::int64_t k = 0; k + 1 < n; ++k)
        diffs.push_back(sub(sel(hb.path[static_cast<std::size_t>(k)]),
                            sel(hb.path[static_cast<std::size_t>(k + 1)])));
      return matmul(concat_lastdim(diffs), order_map(n));
    }
  }
  throw ConfigError("unreachable encoder mode");
}

Tensor HyperboneEncoder::encode_all(const Tensor& z) const {
  if (index_.flat.empty())
    throw ValueError("encode_all: the hyperbone index is empty");
  std::vector<Tensor> rows;
  rows.reserve(index_.flat.size());
  for (const auto& hb : index_.flat) rows.push_back(encode_one(z, hb));
  return concat(rows, 2);
}

}  // namespace hdf
