#pragma once

#include <optional>

#include "hdformer/training.hpp"

namespace hdf {

struct DataConfig {
  std::string train_dir;
  std::string val_dir;
  std::int64_t window_stride = 0;  // 0 resolves to frames/2
  std::int64_t infer_step = 5;
  StitchMode stitch = StitchMode::mean;
  // Normalization divisor in millimeters; 0 resolves to the training set's
  // displacement scale and is echoed into the resolved config.
  double scale = 1000.0;
};

/// Complete declarative run description. Unknown keys in config files are
/// rejected with their key path; every default is echoed into the resolved
/// dump written next to the run outputs.
struct RunConfig {
  HDFormerConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
};

RunConfig default_run_config();

/// Loads `file` (optional) over the defaults, applies `key.path=value`
/// overrides, then the HDF_SEED environment variable (highest precedence for
/// the seed). Throws ConfigError naming the offending key path.
RunConfig load_run_config(const std::optional<std::string>& file,
                          const std::vector<std::string>& overrides);

std::string run_config_to_json(const RunConfig& rc);
RunConfig run_config_from_json_text(const std::string& text,
                                    const std::string& source);

// Model-config echo used inside checkpoints.
std::string model_config_to_json(const HDFormerConfig& cfg);
HDFormerConfig model_config_from_json(const std::string& text);

/// Built-in topology name, or a path to a topology file.
TopologySpec resolve_topology(const std::string& name_or_path);

}  // namespace hdf
