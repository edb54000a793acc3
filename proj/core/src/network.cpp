#include "hdformer/network.hpp"

#include <cstring>
#include <fstream>
#include <iostream>

#include "hdformer/runconfig.hpp"

namespace hdf {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::down: return "down";
    case Stage::up: return "up";
    case Stage::merge: return "merge";
  }
  return "?";
}

std::string to_string(PsiSharing p) {
  return p == PsiSharing::per_block ? "per_block" : "per_resolution";
}

std::string to_string(MergeFusion m) {
  return m == MergeFusion::summation ? "summation" : "concat";
}

Stage stage_from_string(const std::string& s) {
  if (s == "down") return Stage::down;
  if (s == "up") return Stage::up;
  if (s == "merge") return Stage::merge;
  throw ConfigError(
      format_msg("unknown stage '", s, "'; expected down|up|merge|all"));
}

PsiSharing psi_sharing_from_string(const std::string& s) {
  if (s == "per_block") return PsiSharing::per_block;
  if (s == "per_resolution") return PsiSharing::per_resolution;
  throw ConfigError(format_msg("unknown psi sharing '", s,
                               "'; expected per_block|per_resolution"));
}

MergeFusion merge_fusion_from_string(const std::string& s) {
  if (s == "summation") return MergeFusion::summation;
  if (s == "concat") return MergeFusion::concat;
  throw ConfigError(format_msg("unknown merge fusion '", s,
                               "'; expected summation|concat"));
}

std::set<Stage> parse_placement(const std::vector<std::string>& names) {
  std::set<Stage> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.insert(Stage::down);
      out.insert(Stage::up);
      out.insert(Stage::merge);
    } else {
      out.insert(stage_from_string(n));
    }
  }
  return out;
}

void HDFormerConfig::validate() const {
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (depth < 0) throw ConfigError("depth must be >= 0");
  if (frames % (std::int64_t{1} << depth) != 0)
    throw ConfigError(format_msg("frames (", frames,
                                 ") must be divisible by 2^depth (",
                                 std::int64_t{1} << depth, ")"));
  if (static_cast<int>(channels.size()) != depth + 1)
    throw ConfigError(format_msg("expected ", depth + 1,
                                 " channel widths for depth ", depth, ", got ",
                                 channels.size()));
  for (std::int64_t c : channels)
    if (c <= 0) throw ConfigError("channel widths must be positive");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (merge_blocks < 1) throw ConfigError("merge_blocks must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must be in [0,1)");
  if (order_cap < 1) throw ConfigError("order cap must be >= 1");
  if (!hoa_placement.empty() && order_cap_joints() < 2)
    throw ConfigError(
        "high-order attention placement needs an order cap of at least two "
        "joints (one edge)");
}

HDFormerConfig HDFormerConfig::micro() {
  HDFormerConfig cfg;
  cfg.frames = 8;
  cfg.topology = "chain5";
  cfg.depth = 1;
  cfg.channels = {8, 16};
  cfg.heads = 2;
  cfg.order_cap = 3;
  cfg.order_convention = OrderConvention::order_joints;
  cfg.merge_blocks = 1;
  cfg.dropout = 0.0;
  return cfg;
}

HDFormerConfig HDFormerConfig::desk() {
  HDFormerConfig cfg;
  cfg.frames = 16;
  cfg.topology = "h36m_17";
  cfg.depth = 2;
  cfg.channels = {32, 64, 128};
  cfg.heads = 4;
  cfg.order_cap = 4;
  cfg.order_convention = OrderConvention::spd_edges;
  cfg.dropout = 0.1;
  return cfg;
}

HDFormerConfig HDFormerConfig::paper_scale() {
  HDFormerConfig cfg;
  cfg.frames = 96;
  cfg.topology = "h36m_17";
  cfg.depth = 2;
  cfg.channels = {80, 160, 320};
  cfg.heads = 4;
  cfg.order_cap = 4;
  cfg.order_convention = OrderConvention::spd_edges;
  cfg.dropout = 0.3;
  return cfg;
}

HDFormerConfig configure_stage_placement(HDFormerConfig cfg,
                                         const std::vector<std::string>& names) {
  cfg.hoa_placement = parse_placement(names);
  if (cfg.hoa_placement.empty() && cfg.order_cap_joints() >= 2)
    std::cerr << "[hdformer] warning: empty high-order placement; building a "
                 "first-order-only model\n";
  return cfg;
}

BlockSettings HDFormer::block_settings(std::int64_t channels) const {
  BlockSettings s;
  s.channels = channels;
  s.heads = cfg_.heads;
  s.fusion = cfg_.fusion;
  s.activation = cfg_.activation;
  s.dropout = cfg_.dropout;
  s.layer_norm = cfg_.layer_norm;
  s.residual = cfg_.residual;
  return s;
}

HDFormer::StageBlock HDFormer::make_block(const std::string& name,
                                          std::int64_t channels, Stage stage,
                                          Tensor shared_psi) {
  StageBlock block;
  block.foa = std::make_unique<FirstOrderAttentionBlock>(
      *params_, name + ".foa", block_settings(channels), adjacency_,
      shared_psi, cfg_.use_psi);
  const bool hoa = hyperbones_.has_value() && cfg_.hoa_placement.count(stage);
  if (hoa) {
    block.encoder = std::make_unique<HyperboneEncoder>(
        *params_, name + ".enc", *hyperbones_, cfg_.encoder, channels);
    block.hoa = std::make_unique<HighOrderAttentionBlock>(
        *params_, name + ".hoa", block_settings(channels));
  }
  return block;
}

Tensor HDFormer::StageBlock::forward(const Tensor& x,
                                     const RunContext& ctx) const {
  Tensor z = foa->forward(x, ctx);
  if (hoa) {
    Tensor h = encoder->encode_all(z);
    z = hoa->forward(z, h, ctx);
  }
  return z;
}

HDFormer::HDFormer(HDFormerConfig cfg, const SkeletonGraph& graph)
    : cfg_(std::move(cfg)), graph_(graph),
      dropout_rng_(split_seed(cfg_.seed, 0x0d0f)) {
  cfg_.validate();
  const std::int64_t joints = graph_.joint_count();
  params_ = std::make_unique<ParamRegistry>(tape_, cfg_.seed);
  adjacency_ = Tensor::from_data({joints, joints}, graph_.adjacency());

  const std::int64_t order_joints = cfg_.order_cap_joints();
  if (!cfg_.hoa_placement.empty() && order_joints >= 2)
    hyperbones_ = enumerate_hyperbones(graph_, order_joints);

  const auto& ch = cfg_.channels;
  embed_w_ = params_->linear_weight("embed.w", 2, ch[0]);
  embed_b_ = params_->zeros("embed.b", {ch[0]});
  if (cfg_.positional_encoding)
    pos_embedding_ = params_->zeros("pos_embedding", {joints, ch[0]});

  auto level_psi = [&](const std::string& level_name) -> Tensor {
    // With per-resolution sharing each level still owns one bias; blocks
    // inside the level (merge stage) reuse it.
    (void)level_name;
    return Tensor{};
  };

  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string name = format_msg("down.l", l);
    down_blocks_.push_back(
        make_block(name, ch[static_cast<std::size_t>(l)], Stage::down,
                   level_psi(name)));
    ConvWeights cw;
    cw.w = params_->conv_weight(name + ".conv.w", 5,
                                ch[static_cast<std::size_t>(l)],
                                ch[static_cast<std::size_t>(l + 1)]);
    cw.b = params_->zeros(name + ".conv.b",
                          {ch[static_cast<std::size_t>(l + 1)]});
    down_convs_.push_back(cw);
  }
  bottom_block_ = make_block("bottom", ch[static_cast<std::size_t>(cfg_.depth)],
                             Stage::down, Tensor{});

  for (int l = cfg_.depth - 1; l >= 0; --l) {
    const std::string name = format_msg("up.l", l);
    up_proj_.push_back(params_->linear_weight(
        name + ".proj", ch[static_cast<std::size_t>(l + 1)],
        ch[static_cast<std::size_t>(l)]));
    up_blocks_.push_back(
        make_block(name, ch[static_cast<std::size_t>(l)], Stage::up, Tensor{}));
  }

  // One projection per temporal scale feeding the merge fusion: the bottom
  // scale first, then each upsampling level from coarse to fine.
  const int scales = cfg_.depth + 1;
  for (int s = 0; s < scales; ++s) {
    const std::int64_t src =
        s == 0 ? ch[static_cast<std::size_t>(cfg_.depth)]
               : ch[static_cast<std::size_t>(cfg_.depth - s)];
    merge_proj_.push_back(params_->linear_weight(
        format_msg("merge.scale", s, ".proj"), src, ch[0]));
  }
  if (cfg_.merge_fusion == MergeFusion::concat)
    merge_fuse_w_ = params_->linear_weight("merge.fuse",
                                           scales * ch[0], ch[0]);

  Tensor merge_shared_psi;
  if (cfg_.use_psi && cfg_.psi_sharing == PsiSharing::per_resolution &&
      cfg_.merge_blocks > 1)
    merge_shared_psi = params_->zeros("merge.psi", {joints, joints});
  for (int b = 0; b < cfg_.merge_blocks; ++b)
    merge_blocks_.push_back(make_block(format_msg("merge.b", b), ch[0],
                                       Stage::merge, merge_shared_psi));

  head_w_ = params_->linear_weight("head.w", ch[0], 3);
  head_b_ = params_->zeros("head.b", {3});
}

const HyperboneIndex& HDFormer::hyperbones() const {
  if (!hyperbones_)
    throw ConfigError("model was built without hyperbones (first-order only)");
  return *hyperbones_;
}

Tensor HDFormer::forward(const Tensor& x2d, const RunContext& ctx,
                         ForwardTrace* trace) {
  if (x2d.rank() != 4)
    throw ShapeError(format_msg("forward expects [B,T,J,2], got ",
                                shape_str(x2d.shape())));
  if (x2d.extent(1) != cfg_.frames)
    throw ShapeError(format_msg("input has ", x2d.extent(1),
                                " frames, model expects ", cfg_.frames));
  if (x2d.extent(2) != graph_.joint_count())
    throw ShapeError(format_msg("input has ", x2d.extent(2),
                                " joints, skeleton has ",
                                graph_.joint_count()));
  if (x2d.extent(3) != 2)
    throw ShapeError(format_msg("input channels must be 2, got ",
                                x2d.extent(3)));
  last_recorder_ = ctx.recorder;

  Tensor x = linear(x2d, embed_w_, embed_b_);
  if (pos_embedding_.defined()) x = add(x, pos_embedding_);
  if (trace) trace->temporal_extents.push_back(x.extent(1));

  std::vector<Tensor> skips;
  for (int l = 0; l < cfg_.depth; ++l) {
    x = down_blocks_[static_cast<std::size_t>(l)].forward(x, ctx);
    skips.push_back(x);
    x = temporal_conv(x, down_convs_[static_cast<std::size_t>(l)], 2);
    if (trace) trace->temporal_extents.push_back(x.extent(1));
  }
  x = bottom_block_.forward(x, ctx);

  std::vector<Tensor> scales = {x};
  for (int i = 0; i < cfg_.depth; ++i) {
    const int level = cfg_.depth - 1 - i;
    const std::int64_t target =
        cfg_.frames / (std::int64_t{1} << level);
    x = temporal_upsample_bilinear(x, target);
    x = matmul(x, up_proj_[static_cast<std::size_t>(i)]);
    x = add(x, skips[static_cast<std::size_t>(level)]);
    x = up_blocks_[static_cast<std::size_t>(i)].forward(x, ctx);
    scales.push_back(x);
    if (trace) trace->temporal_extents.push_back(x.extent(1));
  }

  // Merge: bring every scale to full length, project, fuse.
  std::vector<Tensor> lifted;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    Tensor f = temporal_upsample_bilinear(scales[s], cfg_.frames);
    lifted.push_back(matmul(f, merge_proj_[s]));
  }
  Tensor fused;
  if (cfg_.merge_fusion == MergeFusion::summation) {
    fused = lifted[0];
    for (std::size_t s = 1; s < lifted.size(); ++s)
      fused = add(fused, lifted[s]);
  } else {
    fused = matmul(concat_lastdim(lifted), merge_fuse_w_);
  }
  for (auto& block : merge_blocks_) fused = block.forward(fused, ctx);

  return linear(fused, head_w_, head_b_);
}

Tensor HDFormer::predict(const Tensor& x2d) {
  RunContext ctx;
  Tensor out = forward(x2d, ctx);
  Tensor detached = out.clone();
  tape_.clear();
  return detached;
}

const std::vector<AttentionRecord>& HDFormer::dump_attention() const {
  if (!last_recorder_)
    throw ValueError(
        "dump_attention: the last forward ran with recording disabled; pass "
        "a recorder in the RunContext");
  return last_recorder_->records();
}

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::string& path, const HDFormer& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(format_msg("cannot open ", path, " for writing"));
  out << "HDFCKPT 1\n";
  out << "seed " << model.config().seed << "\n";
  out << "step " << model.step << "\n";
  char scale_buf[32];
  std::snprintf(scale_buf, sizeof scale_buf, "%.17g", model.norm_scale);
  out << "scale " << scale_buf << "\n";
  out << "config " << model_config_to_json(model.config()) << "\n";
  const auto& entries = model.params().entries();
  out << "tensors " << entries.size() << "\n";
  for (const auto& [name, t] : entries) {
    out << "tensor " << name << ' ' << t.rank();
    for (std::int64_t d : t.shape()) out << ' ' << d;
    out << "\n";
  }
  out << "data\n";
  for (const auto& [name, t] : entries) {
    const auto& v = t.raw();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError(format_msg("failed writing checkpoint ", path));
}

namespace {

struct CheckpointHeader {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  double norm_scale = 1.0;
  std::string config_json;
  std::vector<std::pair<std::string, Shape>> tensors;
  std::streampos data_begin;
};

CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "HDFCKPT" || version != 1)
    throw IoError(format_msg(path, ": not a checkpoint file"));
  CheckpointHeader hdr;
  std::string key;
  std::size_t tensor_count = 0;
  while (in >> key) {
    if (key == "seed") in >> hdr.seed;
    else if (key == "step") in >> hdr.step;
    else if (key == "scale") in >> hdr.norm_scale;
    else if (key == "config") {
      in.ignore(1);
      std::getline(in, hdr.config_json);
    } else if (key == "tensors") {
      in >> tensor_count;
    } else if (key == "tensor") {
      std::string name;
      int rank = 0;
      in >> name >> rank;
      Shape shape(static_cast<std::size_t>(rank));
      for (auto& d : shape) in >> d;
      hdr.tensors.emplace_back(std::move(name), std::move(shape));
    } else if (key == "data") {
      in.ignore(1);  // newline after "data"
      break;
    } else {
      throw IoError(format_msg(path, ": unexpected checkpoint field '", key, "'"));
    }
  }
  if (hdr.tensors.size() != tensor_count)
    throw IoError(format_msg(path, ": tensor count mismatch"));
  hdr.data_begin = in.tellg();
  return hdr;
}

}  // namespace

void load_checkpoint(const std::string& path, HDFormer& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(format_msg("cannot open checkpoint ", path));
  CheckpointHeader hdr = read_header(in, path);
  const auto& entries = model.params().entries();
  if (entries.size() != hdr.tensors.size())
    throw IoError(format_msg(path, ": checkpoint has ", hdr.tensors.size(),
                             " tensors, model has ", entries.size()));
  auto it = entries.begin();
  for (const auto& [name, shape] : hdr.tensors) {
    if (it->first != name)
      throw IoError(format_msg(path, ": tensor '", name,
                               "' does not match model tensor '", it->first,
                               "'"));
    if (it->second.shape() != shape)
      throw IoError(format_msg(path, ": tensor '", name, "' has shape ",
                               shape_str(shape), ", model wants ",
                               shape_str(it->second.shape())));
    ++it;
  }
  for (auto& [name, t] : entries) {
    Tensor tensor = t;
    auto& v = tensor.raw();
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in)
      throw IoError(format_msg(path, ": truncated payload at tensor '", name,
                               "'"));
  }
  model.step = hdr.step;
  model.norm_scale = hdr.norm_scale;
}

std::unique_ptr<HDFormer> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(format_msg("cannot open checkpoint ", path));
  CheckpointHeader hdr = read_header(in, path);
  in.close();
  HDFormerConfig cfg = model_config_from_json(hdr.config_json);
  SkeletonGraph graph = SkeletonGraph::build(resolve_topology(cfg.topology));
  auto model = std::make_unique<HDFormer>(cfg, graph);
  load_checkpoint(path, *model);
  return model;
}

}  // namespace hdf
