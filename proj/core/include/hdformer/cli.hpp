#pragma once

#include <optional>

#include "hdformer/metrics.hpp"
#include "hdformer/runconfig.hpp"

namespace hdf::cli {

/// Subcommand entry points. Each returns a process exit code and reports
/// failures on stderr; the thin main() binds them to argv.

int cmd_train(const std::optional<std::string>& config_path,
              const std::vector<std::string>& overrides);

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& protocol);

int cmd_infer(const std::string& checkpoint, const std::string& input_path,
              const std::string& output_path,
              std::optional<std::int64_t> step = std::nullopt,
              std::optional<std::string> stitch = std::nullopt);

int cmd_attn(const std::string& checkpoint, const std::string& input_path,
             const std::string& out_dir);

int cmd_synth(const std::string& topology, std::int64_t count,
              std::int64_t frames, std::uint64_t seed, double noise,
              const std::string& out_dir);

int cmd_validate(const std::string& path);

/// Converts a structured-text keypoint dump (one frame per line) into the
/// binary pose-sequence format.
int cmd_import(const std::string& input_path, const std::string& output_path,
               const std::string& topology, std::int64_t channels, double fps);

/// Matching *.2d.hdfpose / *.3d.hdfpose pairs in a directory, sorted by stem.
std::vector<std::pair<std::string, std::string>> find_sequence_pairs(
    const std::string& dir);

/// Action label for per-action aggregation: the file stem with a trailing
/// _<digits> chunk removed ("walk_03" -> "walk").
std::string action_of(const std::string& path);

}  // namespace hdf::cli
