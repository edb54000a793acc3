#pragma once

#include <map>
#include <string>

#include "hdformer/params.hpp"
#include "hdformer/skeleton.hpp"

namespace hdf {

/// How a path's joint features become one hyperbone feature vector.
enum class EncoderMode {
  subtraction,     // f(z_start - z_end); endpoint-determined
  summation,       // mean of f(z) over the path joints
  multiplication,  // elementwise product of f(z) over the path joints
  concatenation,   // f_o([z_1 .. z_n]) with a per-order map
  sub_concat,      // f_o([z_1 - z_2, .., z_{n-1} - z_n]) with a per-order map
};

EncoderMode encoder_mode_from_string(const std::string& s);
std::string to_string(EncoderMode mode);

/// Maps joint features [B,T,J,C] to hyperbone features [B,T,M,C] in the
/// canonical ordering of a HyperboneIndex. The aggregating modes share one
/// C x C map; the concatenating modes own one map per order because their
/// input width grows with the order.
class HyperboneEncoder {
 public:
  HyperboneEncoder(ParamRegistry& params, const std::string& prefix,
                   HyperboneIndex index, EncoderMode mode,
                   std::int64_t channels);

  Tensor encode_all(const Tensor& z) const;
  /// One hyperbone -> [B,T,1,C]; rows of encode_all match these calls.
  Tensor encode_one(const Tensor& z, const Hyperbone& hb) const;

  const HyperboneIndex& index() const { return index_; }
  EncoderMode mode() const { return mode_; }
  std::int64_t channels() const { return channels_; }
  /// Shared map for subtraction/summation/multiplication.
  Tensor shared_map() const;
  /// Per-order map for concatenation/sub_concat.
  Tensor order_map(std::int64_t order) const;

 private:
  HyperboneIndex index_;
  EncoderMode mode_;
  std::int64_t channels_;
  Tensor shared_map_;
  std::map<std::int64_t, Tensor> order_maps_;
};

}  // namespace hdf
