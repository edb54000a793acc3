#pragma once

#include <optional>
#include <string>
#include <utility>

#include "hdformer/encoding.hpp"
#include "hdformer/params.hpp"

namespace hdf {

enum class Activation { gelu, relu };
enum class FusionMode { summation, concat };

Activation activation_from_string(const std::string& s);
FusionMode fusion_from_string(const std::string& s);
std::string to_string(Activation a);
std::string to_string(FusionMode f);

/// One captured attention map: mean over heads (and over batch and time),
/// so rows stay stochastic.
struct AttentionRecord {
  std::string block;
  std::string kind;  // "first_order" or "high_order"
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> weights;  // row-major rows x cols
};

class AttentionRecorder {
 public:
  void add(AttentionRecord rec) { records_.push_back(std::move(rec)); }
  const std::vector<AttentionRecord>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<AttentionRecord> records_;
};

/// Per-forward environment. Dropout is active only when `train` is set and a
/// generator is supplied.
struct RunContext {
  bool train = false;
  std::mt19937_64* dropout_rng = nullptr;
  AttentionRecorder* recorder = nullptr;
};

struct BlockSettings {
  std::int64_t channels = 0;
  int heads = 4;
  FusionMode fusion = FusionMode::summation;
  Activation activation = Activation::gelu;
  double dropout = 0.0;
  bool layer_norm = true;
  bool residual = true;
};

namespace detail {

struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

struct LayerNormWeights {
  Tensor gain, bias;
};

Tensor apply_activation(const Tensor& x, Activation act);
Tensor apply_mlp(const Tensor& x, const MlpWeights& mlp, Activation act,
                 double dropout_rate, const RunContext& ctx);
Tensor maybe_dropout(const Tensor& x, double rate, const RunContext& ctx);

}  // namespace detail

/// Self-attention over the joint axis. Heads are full token width; logits are
/// (QK^T + A + psi) / sqrt(C) with the fixed adjacency A and a learnable bias
/// psi, rows softmax-normalized over joints. Heads fuse by summation, or by
/// concatenation + W_o in the ablation mode. A residual connection and an MLP
/// follow the attention.
class FirstOrderAttentionBlock {
 public:
  /// `psi` shares an existing bias tensor; pass an undefined tensor to create
  /// a fresh one named `<name>.psi` (ignored when use_psi is false).
  FirstOrderAttentionBlock(ParamRegistry& params, std::string name,
                           BlockSettings settings, Tensor adjacency,
                           Tensor psi = {}, bool use_psi = true);

  Tensor forward(const Tensor& z, const RunContext& ctx) const;

  /// Fused attention output before residual/MLP, with the recorded mean
  /// attention map [J,J].
  std::pair<Tensor, AttentionRecord> attention(const Tensor& z) const;

  const std::string& name() const { return name_; }
  Tensor psi() const { return psi_; }
  bool has_psi() const { return psi_.defined(); }

 private:
  std::string name_;
  BlockSettings settings_;
  Tensor adjacency_;  // [J,J], constant
  Tensor psi_;        // [J,J], trainable; undefined when disabled
  std::vector<Tensor> wq_, wk_, wv_;
  Tensor wo_;  // only in concat fusion
  detail::MlpWeights mlp_;
  detail::LayerNormWeights ln1_, ln2_;
};

/// Cross-attention: queries from joint features [B,T,J,C], keys and values
/// from hyperbone features [B,T,M,C]. The score matrix is J x M, linear in
/// the hyperbone count. Heads fuse by summation; residual and MLP follow.
class HighOrderAttentionBlock {
 public:
  HighOrderAttentionBlock(ParamRegistry& params, std::string name,
                          BlockSettings settings);

  Tensor forward(const Tensor& zhat, const Tensor& h,
                 const RunContext& ctx) const;
  std::pair<Tensor, AttentionRecord> attention(const Tensor& zhat,
                                               const Tensor& h) const;

  const std::string& name() const { return name_; }

 private:
  std::string name_;
  BlockSettings settings_;
  std::vector<Tensor> wq_, wk_, wv_;
  detail::MlpWeights mlp_;
  detail::LayerNormWeights ln1_, ln2_;
};

// Attention dump file: text header, then one line of %.17g values per row.
// High-order dumps carry a legend mapping column index to the hyperbone path.
void write_attention_dump(const std::string& path, const AttentionRecord& rec,
                          const HyperboneIndex* legend);
AttentionRecord read_attention_dump(const std::string& path,
                                    std::vector<Hyperbone>* legend_out = nullptr);

}  // namespace hdf
