#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>

#include "hdformer/skeleton.hpp"
#include "hdformer/tensor.hpp"

namespace hdf {

/// In-memory pose sequence: frame-major [frames, joints, channels] doubles.
/// Channels are 2 for image-plane input and 3 for metric targets (mm).
struct PoseSequence {
  std::string name;
  std::string topology;
  std::int64_t joints = 0;
  std::int64_t channels = 0;
  double fps = 50.0;
  std::vector<double> data;

  std::int64_t frames() const {
    return joints * channels == 0
               ? 0
               : static_cast<std::int64_t>(data.size()) / (joints * channels);
  }
  double& at(std::int64_t f, std::int64_t j, std::int64_t c) {
    return data[static_cast<std::size_t>((f * joints + j) * channels + c)];
  }
  double at(std::int64_t f, std::int64_t j, std::int64_t c) const {
    return data[static_cast<std::size_t>((f * joints + j) * channels + c)];
  }
  /// [frames, joints, channels] tensor copy.
  Tensor tensor() const;
  void validate() const;
};

// Binary container with a text header; layout documented in docs/formats.md.
void save_pose_sequence(const std::string& path, const PoseSequence& seq);
PoseSequence load_pose_sequence(const std::string& path);

/// Structured-text import: one frame per line, joints*channels floats,
/// `#` comments allowed.
PoseSequence import_text_keypoints(const std::string& path,
                                   const std::string& topology,
                                   std::int64_t joints, std::int64_t channels,
                                   double fps = 50.0);

// --- windowing ---------------------------------------------------------------

struct Window {
  Tensor x2d;   // [T, J, 2]
  Tensor gt3d;  // [T, J, 3]
  std::int64_t sequence = 0;
  std::int64_t offset = 0;
};

struct WindowedDataset {
  std::vector<Window> windows;
  std::int64_t frames = 0;
  std::int64_t skipped_sequences = 0;  // shorter than one window
};

/// All complete windows of length T at the given stride; sequences shorter
/// than T are skipped (counted and warned on stderr).
WindowedDataset make_windows(std::span<const PoseSequence> seq2d,
                             std::span<const PoseSequence> seq3d,
                             std::int64_t frames, std::int64_t stride);

// --- sliding-window inference --------------------------------------------------

enum class StitchMode { mean, last };
StitchMode stitch_from_string(const std::string& s);
std::string to_string(StitchMode m);

/// Runs `forward` ([1,T,J,2] -> [1,T,J,3]) on windows at offsets 0, step,
/// 2*step, ... plus a final window aligned to the sequence end, and stitches
/// the overlapping predictions (mean by default). Output length equals input
/// length. Throws when the sequence is shorter than one window.
PoseSequence sliding_window_infer(
    const std::function<Tensor(const Tensor&)>& forward,
    const PoseSequence& seq2d, std::int64_t frames, std::int64_t step = 5,
    StitchMode stitch = StitchMode::mean);

// --- normalization -------------------------------------------------------------

/// Root-centering plus a fixed scale divisor. normalize() records the root
/// trajectory so denormalize() can restore the original values exactly.
struct Normalizer {
  std::int64_t root = 0;
  double scale = 1.0;

  PoseSequence normalize(const PoseSequence& seq,
                         std::vector<double>* roots_out = nullptr) const;
  PoseSequence denormalize(const PoseSequence& seq,
                           std::span<const double> roots) const;
};

/// Mean root-centered joint norm of a 3-channel sequence; the "size" of the
/// motion, used to resolve scale=auto and to set overfit thresholds.
double displacement_scale(const PoseSequence& seq3d, std::int64_t root);

// --- synthetic sequences ---------------------------------------------------------

/// Smooth random motion: per-joint unit directions from low-frequency
/// sinusoid mixtures times fixed bone lengths (forward kinematics), so bone
/// lengths are constant over time. The 2D view drops depth (orthographic)
/// and optionally adds noise.
struct SynthSpec {
  std::string topology = "h36m_17";
  std::int64_t frames = 96;
  double fps = 50.0;
  int harmonics = 3;
  double bone_min = 120.0;       // mm
  double bone_max = 360.0;       // mm
  double root_amplitude = 150.0; // mm
  double noise2d = 0.0;          // stddev, mm
};

std::pair<PoseSequence, PoseSequence> synth_generate(const SynthSpec& spec,
                                                     std::uint64_t seed);

}  // namespace hdf
