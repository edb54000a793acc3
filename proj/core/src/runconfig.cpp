#include "hdformer/runconfig.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace hdf {

namespace {

using nlohmann::json;

json model_to_json(const HDFormerConfig& c) {
  std::vector<std::string> placement;
  for (Stage s : c.hoa_placement) placement.push_back(to_string(s));
  return json{
      {"frames", c.frames},
      {"topology", c.topology},
      {"depth", c.depth},
      {"channels", c.channels},
      {"heads", c.heads},
      {"order", json{{"convention", c.order_convention == OrderConvention::spd_edges
                                        ? "spd_edges"
                                        : "order_joints"},
                     {"cap", c.order_cap}}},
      {"encoder", to_string(c.encoder)},
      {"hoa_placement", placement},
      {"fusion", to_string(c.fusion)},
      {"merge_fusion", to_string(c.merge_fusion)},
      {"dropout", c.dropout},
      {"activation", to_string(c.activation)},
      {"layer_norm", c.layer_norm},
      {"residual", c.residual},
      {"use_psi", c.use_psi},
      {"positional_encoding", c.positional_encoding},
      {"merge_blocks", c.merge_blocks},
      {"psi_sharing", to_string(c.psi_sharing)},
      {"seed", c.seed},
  };
}

HDFormerConfig model_from_json(const json& j) {
  HDFormerConfig c;
  c.frames = j.at("frames").get<std::int64_t>();
  c.topology = j.at("topology").get<std::string>();
  c.depth = j.at("depth").get<int>();
  c.channels = j.at("channels").get<std::vector<std::int64_t>>();
  c.heads = j.at("heads").get<int>();
  const auto& order = j.at("order");
  const std::string conv = order.at("convention").get<std::string>();
  if (conv == "spd_edges")
    c.order_convention = OrderConvention::spd_edges;
  else if (conv == "order_joints")
    c.order_convention = OrderConvention::order_joints;
  else
    throw ConfigError(format_msg("model.order.convention: unknown value '",
                                 conv, "'"));
  c.order_cap = order.at("cap").get<std::int64_t>();
  c.encoder = encoder_mode_from_string(j.at("encoder").get<std::string>());
  c.hoa_placement =
      parse_placement(j.at("hoa_placement").get<std::vector<std::string>>());
  c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  c.merge_fusion =
      merge_fusion_from_string(j.at("merge_fusion").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.layer_norm = j.at("layer_norm").get<bool>();
  c.residual = j.at("residual").get<bool>();
  c.use_psi = j.at("use_psi").get<bool>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.merge_blocks = j.at("merge_blocks").get<int>();
  c.psi_sharing =
      psi_sharing_from_string(j.at("psi_sharing").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json run_to_json(const RunConfig& rc) {
  return json{
      {"model", model_to_json(rc.model)},
      {"loss", json{{"lambda", rc.loss.lambda},
                    {"motion_intervals", rc.loss.motion_intervals}}},
      {"optimizer",
       json{{"method", to_string(rc.optimizer.method)},
            {"base_lr", rc.optimizer.base_lr},
            {"milestones", rc.optimizer.milestones},
            {"decay", rc.optimizer.decay},
            {"epochs", rc.optimizer.epochs},
            {"batch_size", rc.optimizer.batch_size},
            {"weight_decay", rc.optimizer.weight_decay},
            {"max_steps", rc.optimizer.max_steps},
            {"target_train_mpjpe", rc.optimizer.target_train_mpjpe}}},
      {"data", json{{"train_dir", rc.data.train_dir},
                    {"val_dir", rc.data.val_dir},
                    {"window_stride", rc.data.window_stride},
                    {"infer_step", rc.data.infer_step},
                    {"stitch", to_string(rc.data.stitch)},
                    {"scale", rc.data.scale}}},
      {"seed", rc.seed},
      {"out_dir", rc.out_dir},
  };
}

RunConfig run_from_json(const json& j) {
  RunConfig rc;
  rc.model = model_from_json(j.at("model"));
  rc.loss.lambda = j.at("loss").at("lambda").get<double>();
  rc.loss.motion_intervals =
      j.at("loss").at("motion_intervals").get<std::vector<std::int64_t>>();
  const auto& opt = j.at("optimizer");
  rc.optimizer.method =
      optimizer_method_from_string(opt.at("method").get<std::string>());
  rc.optimizer.base_lr = opt.at("base_lr").get<double>();
  rc.optimizer.milestones = opt.at("milestones").get<std::vector<int>>();
  rc.optimizer.decay = opt.at("decay").get<double>();
  rc.optimizer.epochs = opt.at("epochs").get<int>();
  rc.optimizer.batch_size = opt.at("batch_size").get<std::int64_t>();
  rc.optimizer.weight_decay = opt.at("weight_decay").get<double>();
  rc.optimizer.max_steps = opt.at("max_steps").get<std::int64_t>();
  rc.optimizer.target_train_mpjpe =
      opt.at("target_train_mpjpe").get<double>();
  const auto& data = j.at("data");
  rc.data.train_dir = data.at("train_dir").get<std::string>();
  rc.data.val_dir = data.at("val_dir").get<std::string>();
  rc.data.window_stride = data.at("window_stride").get<std::int64_t>();
  rc.data.infer_step = data.at("infer_step").get<std::int64_t>();
  rc.data.stitch = stitch_from_string(data.at("stitch").get<std::string>());
  rc.data.scale = data.at("scale").get<double>();
  rc.seed = j.at("seed").get<std::uint64_t>();
  rc.out_dir = j.at("out_dir").get<std::string>();
  return rc;
}

void reject_unknown_keys(const json& candidate, const json& reference,
                         const std::string& path) {
  if (!candidate.is_object()) return;
  if (!reference.is_object())
    throw ConfigError(format_msg("config key '", path,
                                 "' does not take an object"));
  for (const auto& [key, value] : candidate.items()) {
    const std::string kp = path.empty() ? key : path + "." + key;
    if (!reference.contains(key))
      throw ConfigError(format_msg("unknown config key '", kp, "'"));
    reject_unknown_keys(value, reference.at(key), kp);
  }
}

json parse_override_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);  // plain string
  return v;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

std::string run_config_to_json(const RunConfig& rc) {
  return run_to_json(rc).dump(2) + "\n";
}

RunConfig run_config_from_json_text(const std::string& text,
                                    const std::string& source) {
  json file = json::parse(text, nullptr, false);
  if (file.is_discarded())
    throw ConfigError(format_msg(source, ": not valid JSON"));
  json base = run_to_json(default_run_config());
  reject_unknown_keys(file, base, "");
  base.merge_patch(file);
  try {
    return run_from_json(base);
  } catch (const json::exception& e) {
    throw ConfigError(format_msg(source, ": ", e.what()));
  }
}

RunConfig load_run_config(const std::optional<std::string>& file,
                          const std::vector<std::string>& overrides) {
  json base = run_to_json(default_run_config());
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError(format_msg("cannot open config file ", *file));
    json parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded())
      throw ConfigError(format_msg(*file, ": not valid JSON"));
    reject_unknown_keys(parsed, base, "");
    base.merge_patch(parsed);
  }
  for (const std::string& assignment : overrides) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw ConfigError(format_msg("override '", assignment,
                                   "' is not of the form key.path=value"));
    const std::string key_path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);
    // navigate to the containing object
    json* node = &base;
    std::size_t start = 0;
    std::string leaf;
    while (true) {
      const auto dot = key_path.find('.', start);
      const std::string part = key_path.substr(
          start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty() || !node->contains(part))
        throw ConfigError(format_msg("unknown config key '", key_path, "'"));
      if (dot == std::string::npos) {
        leaf = part;
        break;
      }
      node = &(*node)[part];
      if (!node->is_object())
        throw ConfigError(format_msg("config key '",
                                     key_path.substr(0, dot),
                                     "' has no sub-keys"));
      start = dot + 1;
    }
    (*node)[leaf] = parse_override_value(value_text);
  }
  if (const char* env_seed = std::getenv("HDF_SEED"))
    base["seed"] = std::strtoull(env_seed, nullptr, 10);
  try {
    RunConfig rc = run_from_json(base);
    rc.model.seed = rc.seed;  // one seed governs the whole run
    rc.model.validate();
    return rc;
  } catch (const json::exception& e) {
    throw ConfigError(format_msg("config: ", e.what()));
  }
}

std::string model_config_to_json(const HDFormerConfig& cfg) {
  return model_to_json(cfg).dump();
}

HDFormerConfig model_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("model config echo is not valid JSON");
  try {
    return model_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(format_msg("model config echo: ", e.what()));
  }
}

TopologySpec resolve_topology(const std::string& name_or_path) {
  try {
    return builtin_topology(name_or_path);
  } catch (const ConfigError&) {
    if (std::filesystem::exists(name_or_path))
      return load_topology_file(name_or_path);
    throw;
  }
}

}  // namespace hdf
