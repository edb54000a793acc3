#pragma once

#include <memory>
#include <optional>
#include <set>

#include "hdformer/attention.hpp"

namespace hdf {

enum class Stage { down, up, merge };
enum class PsiSharing { per_block, per_resolution };
enum class MergeFusion { summation, concat };

std::string to_string(Stage s);
std::string to_string(PsiSharing p);
std::string to_string(MergeFusion m);
Stage stage_from_string(const std::string& s);
PsiSharing psi_sharing_from_string(const std::string& s);
MergeFusion merge_fusion_from_string(const std::string& s);

/// Expands "all" and validates stage names.
std::set<Stage> parse_placement(const std::vector<std::string>& names);

struct HDFormerConfig {
  std::int64_t frames = 96;
  std::string topology = "h36m_17";
  int depth = 2;
  std::vector<std::int64_t> channels = {80, 160, 320};  // depth+1 widths
  int heads = 4;
  std::int64_t order_cap = 4;
  OrderConvention order_convention = OrderConvention::spd_edges;
  EncoderMode encoder = EncoderMode::sub_concat;
  std::set<Stage> hoa_placement = {Stage::merge};
  FusionMode fusion = FusionMode::summation;
  MergeFusion merge_fusion = MergeFusion::summation;
  double dropout = 0.3;
  Activation activation = Activation::gelu;
  bool layer_norm = true;
  bool residual = true;
  bool use_psi = true;
  bool positional_encoding = false;
  int merge_blocks = 2;
  PsiSharing psi_sharing = PsiSharing::per_resolution;
  std::uint64_t seed = 0;

  std::int64_t order_cap_joints() const {
    return order_cap_in_joints(order_cap, order_convention);
  }
  void validate() const;

  /// Smallest config that still exercises every stage; used by gradient checks.
  static HDFormerConfig micro();
  /// Fits a desk run: h36m joints, short windows, well under 1e6 parameters.
  static HDFormerConfig desk();
  /// The documented full-size configuration (96 frames, 17 joints).
  static HDFormerConfig paper_scale();
};

/// Replaces the high-order-attention placement, expanding "all".
/// An empty placement with order cap >= 2 leaves a first-order-only model and
/// warns on stderr.
HDFormerConfig configure_stage_placement(HDFormerConfig cfg,
                                         const std::vector<std::string>& names);

struct ForwardTrace {
  std::vector<std::int64_t> temporal_extents;
};

/// U-shaped pose lifter: a downsampling stage (attention + stride-2 temporal
/// conv per level), an upsampling stage (bilinear upsampling + skip
/// connections + attention), and a merging stage that fuses all temporal
/// scales before the final per-joint 3D regression head.
class HDFormer {
 public:
  HDFormer(HDFormerConfig cfg, const SkeletonGraph& graph);

  /// x2d: [B,T,J,2] -> [B,T,J,3]. Records on the model tape; callers that
  /// do not backpropagate should clear_tape() afterwards (predict does).
  Tensor forward(const Tensor& x2d, const RunContext& ctx,
                 ForwardTrace* trace = nullptr);
  /// Inference convenience: eval-mode forward, tape cleared, data detached.
  Tensor predict(const Tensor& x2d);

  /// Attention maps captured by the most recent forward. Throws ValueError
  /// when that forward ran without a recorder attached.
  const std::vector<AttentionRecord>& dump_attention() const;

  const HDFormerConfig& config() const { return cfg_; }
  const SkeletonGraph& skeleton() const { return graph_; }
  bool has_hyperbones() const { return hyperbones_.has_value(); }
  const HyperboneIndex& hyperbones() const;
  ParamRegistry& params() { return *params_; }
  const ParamRegistry& params() const { return *params_; }
  Tape& tape() { return tape_; }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  std::int64_t parameter_count() const { return params_->total_parameters(); }
  void clear_tape() { tape_.clear(); }

  std::uint64_t step = 0;
  /// Normalization divisor the model was trained with (mm); carried in
  /// checkpoints so inference can restore metric units.
  double norm_scale = 1.0;

 private:
  struct StageBlock {
    std::unique_ptr<FirstOrderAttentionBlock> foa;
    std::unique_ptr<HyperboneEncoder> encoder;
    std::unique_ptr<HighOrderAttentionBlock> hoa;
    Tensor forward(const Tensor& x, const RunContext& ctx) const;
  };

  StageBlock make_block(const std::string& name, std::int64_t channels,
                        Stage stage, Tensor shared_psi);
  BlockSettings block_settings(std::int64_t channels) const;

  HDFormerConfig cfg_;
  SkeletonGraph graph_;
  std::optional<HyperboneIndex> hyperbones_;
  Tape tape_;
  std::unique_ptr<ParamRegistry> params_;
  std::mt19937_64 dropout_rng_;
  AttentionRecorder* last_recorder_ = nullptr;

  Tensor adjacency_;
  Tensor embed_w_, embed_b_;
  Tensor pos_embedding_;
  std::vector<StageBlock> down_blocks_;
  std::vector<ConvWeights> down_convs_;
  StageBlock bottom_block_;
  std::vector<Tensor> up_proj_;  // level l: channels[l+1] -> channels[l]
  std::vector<StageBlock> up_blocks_;
  std::vector<Tensor> merge_proj_;  // per scale -> channels[0]
  Tensor merge_fuse_w_;             // concat merge fusion only
  std::vector<StageBlock> merge_blocks_;
  Tensor head_w_, head_b_;
};

// Checkpoints: text header with config echo, then raw float64 blobs for every
// named weight tensor in name order. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const HDFormer& model);
void load_checkpoint(const std::string& path, HDFormer& model);
/// Rebuilds the model recorded in the checkpoint (topology from its config).
std::unique_ptr<HDFormer> load_model(const std::string& path);

}  // namespace hdf
