#include <CLI11.hpp>

#include "hdformer/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"HDFormer: high-order directed transformer for lifting 2D pose "
               "sequences to 3D"};
  app.require_subcommand(1);

  // train
  std::string config_path;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "Run configuration JSON file");
  train->add_option("--set", overrides,
                    "Override a config value, e.g. --set optimizer.epochs=2");

  // eval
  std::string eval_ckpt, eval_data, eval_protocol = "mpjpe";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on paired "
                                          "2D/3D sequences");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data,
                   "Directory of *.2d.hdfpose / *.3d.hdfpose pairs")
      ->required();
  eval->add_option("--protocol", eval_protocol,
                   "One of: mpjpe, p-mpjpe, pck-auc");

  // infer
  std::string infer_ckpt, infer_in, infer_out, infer_stitch;
  std::int64_t infer_step = 0;
  auto* infer = app.add_subcommand("infer", "Lift a 2D sequence to 3D with "
                                            "sliding-window stitching");
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer->add_option("--input", infer_in, "2D pose sequence file")->required();
  infer->add_option("--output", infer_out, "Output 3D sequence file")
      ->required();
  infer->add_option("--step", infer_step, "Window step length (default 5)");
  infer->add_option("--stitch", infer_stitch, "Overlap resolution: mean|last");

  // attn
  std::string attn_ckpt, attn_in, attn_dir;
  auto* attn = app.add_subcommand("attn", "Dump attention maps and the "
                                          "hyperbone legend for one window");
  attn->add_option("--checkpoint", attn_ckpt, "Checkpoint file")->required();
  attn->add_option("--input", attn_in, "2D pose sequence file")->required();
  attn->add_option("--out-dir", attn_dir, "Output directory")->required();

  // synth
  std::string synth_topology = "h36m_17", synth_dir;
  std::int64_t synth_count = 8, synth_frames = 96;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.0;
  auto* synth = app.add_subcommand("synth", "Generate deterministic synthetic "
                                            "pose sequence pairs");
  synth->add_option("--topology", synth_topology,
                    "Built-in name or topology file");
  synth->add_option("--count", synth_count, "Number of sequences");
  synth->add_option("--frames", synth_frames, "Frames per sequence");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--noise", synth_noise, "2D noise stddev (mm)");
  synth->add_option("--out-dir", synth_dir, "Output directory")->required();

  // import
  std::string import_in, import_out, import_topology = "h36m_17";
  std::int64_t import_channels = 2;
  double import_fps = 50.0;
  auto* import_cmd = app.add_subcommand(
      "import", "Convert a text keypoint dump to the binary pose format");
  import_cmd->add_option("--input", import_in, "Text keypoint file")
      ->required();
  import_cmd->add_option("--output", import_out, "Output pose sequence file")
      ->required();
  import_cmd->add_option("--topology", import_topology,
                         "Built-in name or topology file");
  import_cmd->add_option("--channels", import_channels, "2 or 3");
  import_cmd->add_option("--fps", import_fps, "Frame rate");

  // validate
  std::string validate_path;
  auto* validate = app.add_subcommand(
      "validate", "Validate a pose, checkpoint, or topology file");
  validate->add_option("--file", validate_path, "File to validate")->required();

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    std::optional<std::string> cfg;
    if (!config_path.empty()) cfg = config_path;
    return hdf::cli::cmd_train(cfg, overrides);
  }
  if (eval->parsed())
    return hdf::cli::cmd_eval(eval_ckpt, eval_data, eval_protocol);
  if (infer->parsed()) {
    std::optional<std::int64_t> step;
    if (infer_step > 0) step = infer_step;
    std::optional<std::string> stitch;
    if (!infer_stitch.empty()) stitch = infer_stitch;
    return hdf::cli::cmd_infer(infer_ckpt, infer_in, infer_out, step, stitch);
  }
  if (attn->parsed()) return hdf::cli::cmd_attn(attn_ckpt, attn_in, attn_dir);
  if (synth->parsed())
    return hdf::cli::cmd_synth(synth_topology, synth_count, synth_frames,
                               synth_seed, synth_noise, synth_dir);
  if (import_cmd->parsed())
    return hdf::cli::cmd_import(import_in, import_out, import_topology,
                                import_channels, import_fps);
  if (validate->parsed()) return hdf::cli::cmd_validate(validate_path);
  return 1;
}
