#pragma once

#include <map>
#include <span>
#include <string>

#include "hdformer/tensor.hpp"

namespace hdf {

/// Mean per-joint position error over all leading axes; same formula as the
/// training loss but computed outside the tape.
double mpjpe(const Tensor& pred, const Tensor& gt);

struct PMpjpeResult {
  double value = 0.0;
  std::int64_t degenerate_frames = 0;  // frames left unaligned
};

/// Procrustes-aligned MPJPE: per frame, the optimal similarity transform
/// (rotation, uniform scale, translation) maps pred onto gt before the error
/// is taken. Frames whose joints all coincide are flagged and left unaligned.
PMpjpeResult p_mpjpe_detailed(const Tensor& pred, const Tensor& gt);
double p_mpjpe(const Tensor& pred, const Tensor& gt);

/// Percentage of joints with error within `threshold` (millimeters).
double pck(const Tensor& pred, const Tensor& gt, double threshold = 150.0);

/// Mean PCK over the threshold grid 0..max_threshold in steps of `step`.
double auc(const Tensor& pred, const Tensor& gt, double max_threshold = 150.0,
           double step = 5.0);

struct ActionMetrics {
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
  double pck = 0.0;
  double auc = 0.0;
  std::int64_t samples = 0;  // joint samples (frames x joints)
};

struct EvalSample {
  Tensor pred;  // [..., J, 3]
  Tensor gt;
  std::string action = "all";
};

struct EvalReport {
  std::map<std::string, ActionMetrics> per_action;
  ActionMetrics overall;  // sample-weighted mean of the per-action rows

  std::string to_text() const;
  std::string to_json() const;
};

EvalReport evaluate(std::span<const EvalSample> samples,
                    double pck_threshold = 150.0);

}  // namespace hdf
