#include "hdformer/attention.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hdf {

Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  throw ConfigError(format_msg("unknown activation '", s, "'; expected gelu|relu"));
}

FusionMode fusion_from_string(const std::string& s) {
  if (s == "summation") return FusionMode::summation;
  if (s == "concat") return FusionMode::concat;
  throw ConfigError(
      format_msg("unknown head fusion '", s, "'; expected summation|concat"));
}

std::string to_string(Activation a) {
  return a == Activation::gelu ? "gelu" : "relu";
}

std::string to_string(FusionMode f) {
  return f == FusionMode::summation ? "summation" : "concat";
}

namespace detail {

Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : relu(x);
}

Tensor maybe_dropout(const Tensor& x, double rate, const RunContext& ctx) {
  if (!ctx.train || rate == 0.0 || ctx.dropout_rng == nullptr) return x;
  return dropout(x, rate, true, *ctx.dropout_rng);
}

Tensor apply_mlp(const Tensor& x, const MlpWeights& mlp, Activation act,
                 double dropout_rate, const RunContext& ctx) {
  Tensor hidden = apply_activation(linear(x, mlp.w1, mlp.b1), act);
  hidden = maybe_dropout(hidden, dropout_rate, ctx);
  return linear(hidden, mlp.w2, mlp.b2);
}

MlpWeights make_mlp(ParamRegistry& params, const std::string& prefix,
                    std::int64_t channels) {
  MlpWeights mlp;
  mlp.w1 = params.linear_weight(prefix + ".mlp.w1", channels, 2 * channels);
  mlp.b1 = params.zeros(prefix + ".mlp.b1", {2 * channels});
  mlp.w2 = params.linear_weight(prefix + ".mlp.w2", 2 * channels, channels);
  mlp.b2 = params.zeros(prefix + ".mlp.b2", {channels});
  return mlp;
}

LayerNormWeights make_ln(ParamRegistry& params, const std::string& prefix,
                         std::int64_t channels) {
  LayerNormWeights ln;
  ln.gain = params.ones(prefix + ".gain", {channels});
  ln.bias = params.zeros(prefix + ".bias", {channels});
  return ln;
}

// Mean attention over heads, then over batch and time: [rows, cols].
AttentionRecord summarize(const std::vector<Tensor>& head_maps,
                          const std::string& block, const std::string& kind) {
  AttentionRecord rec;
  rec.block = block;
  rec.kind = kind;
  const Tensor& first = head_maps.front();
  rec.rows = first.extent(-2);
  rec.cols = first.extent(-1);
  const std::int64_t cells = rec.rows * rec.cols;
  const std::int64_t groups = first.numel() / cells;
  rec.weights.assign(static_cast<std::size_t>(cells), 0.0);
  for (const Tensor& m : head_maps) {
    const auto& v = m.raw();
    for (std::int64_t g = 0; g < groups; ++g)
      for (std::int64_t i = 0; i < cells; ++i)
        rec.weights[static_cast<std::size_t>(i)] +=
            v[static_cast<std::size_t>(g * cells + i)];
  }
  const double denom =
      static_cast<double>(groups) * static_cast<double>(head_maps.size());
  for (auto& w : rec.weights) w /= denom;
  return rec;
}

}  // namespace detail

FirstOrderAttentionBlock::FirstOrderAttentionBlock(ParamRegistry& params,
                                                   std::string name,
                                                   BlockSettings settings,
                                                   Tensor adjacency, Tensor psi,
                                                   bool use_psi)
    : name_(std::move(name)), settings_(settings),
      adjacency_(std::move(adjacency)) {
  if (settings_.channels <= 0 || settings_.heads <= 0)
    throw ConfigError("attention block needs positive channels and heads");
  if (adjacency_.rank() != 2 || adjacency_.extent(0) != adjacency_.extent(1))
    throw ShapeError(format_msg("adjacency must be square, got ",
                                shape_str(adjacency_.shape())));
  if (use_psi) {
    if (psi.defined()) {
      if (psi.shape() != adjacency_.shape())
        throw ShapeError(format_msg("psi shape ", shape_str(psi.shape()),
                                    " must match adjacency ",
                                    shape_str(adjacency_.shape())));
      psi_ = std::move(psi);
    } else {
      // zero-initialized: the initial model reduces to content attention + A
      psi_ = params.zeros(name_ + ".psi", adjacency_.shape());
    }
  }
  const std::int64_t c = settings_.channels;
  for (int h = 0; h < settings_.heads; ++h) {
    const std::string hp = format_msg(name_, ".h", h);
    wq_.push_back(params.linear_weight(hp + ".wq", c, c));
    wk_.push_back(params.linear_weight(hp + ".wk", c, c));
    wv_.push_back(params.linear_weight(hp + ".wv", c, c));
  }
  if (settings_.fusion == FusionMode::concat)
    wo_ = params.linear_weight(name_ + ".wo", settings_.heads * c, c);
  mlp_ = detail::make_mlp(params, name_, c);
  if (settings_.layer_norm) {
    ln1_ = detail::make_ln(params, name_ + ".ln1", c);
    ln2_ = detail::make_ln(params, name_ + ".ln2", c);
  }
}

std::pair<Tensor, AttentionRecord> FirstOrderAttentionBlock::attention(
    const Tensor& z) const {
  if (z.rank() != 4)
    throw ShapeError(format_msg("attention expects [B,T,J,C], got ",
                                shape_str(z.shape())));
  if (z.extent(2) != adjacency_.extent(0))
    throw ShapeError(format_msg("joint axis ", z.extent(2),
                                " does not match adjacency ",
                                shape_str(adjacency_.shape())));
  if (z.extent(3) != settings_.channels)
    throw ShapeError(format_msg("channel axis ", z.extent(3),
                                " does not match block channels ",
                                settings_.channels));
  const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(settings_.channels));
  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_maps;
  for (int h = 0; h < settings_.heads; ++h) {
    const auto hu = static_cast<std::size_t>(h);
    Tensor q = matmul(z, wq_[hu]);
    Tensor k = matmul(z, wk_[hu]);
    Tensor v = matmul(z, wv_[hu]);
    Tensor logits = matmul(q, transpose_last2(k));
    logits = add(logits, adjacency_);
    if (psi_.defined()) logits = add(logits, psi_);
    Tensor attn = softmax_lastdim(scale(logits, inv_sqrt_dm));
    head_maps.push_back(attn);
    head_outputs.push_back(matmul(attn, v));
  }
  Tensor fused;
  if (settings_.fusion == FusionMode::summation) {
    fused = head_outputs[0];
    for (std::size_t h = 1; h < head_outputs.size(); ++h)
      fused = add(fused, head_outputs[h]);
  } else {
    fused = matmul(concat_lastdim(head_outputs), wo_);
  }
  return {fused, detail::summarize(head_maps, name_, "first_order")};
}

Tensor FirstOrderAttentionBlock::forward(const Tensor& z,
                                         const RunContext& ctx) const {
  Tensor pre = settings_.layer_norm
                   ? layer_norm(z, ln1_.gain, ln1_.bias)
                   : z;
  auto [fused, record] = attention(pre);
  if (ctx.recorder) ctx.recorder->add(record);
  fused = detail::maybe_dropout(fused, settings_.dropout, ctx);
  Tensor x = settings_.residual ? add(z, fused) : fused;
  Tensor pre2 = settings_.layer_norm
                    ? layer_norm(x, ln2_.gain, ln2_.bias)
                    : x;
  Tensor m = detail::apply_mlp(pre2, mlp_, settings_.activation,
                               settings_.dropout, ctx);
  return settings_.residual ? add(x, m) : m;
}

HighOrderAttentionBlock::HighOrderAttentionBlock(ParamRegistry& params,
                                                 std::string name,
                                                 BlockSettings settings)
    : name_(std::move(name)), settings_(settings) {
  if (settings_.channels <= 0 || settings_.heads <= 0)
    throw ConfigError("attention block needs positive channels and heads");
  const std::int64_t c = settings_.channels;
  for (int h = 0; h < settings_.heads; ++h) {
    const std::string hp = format_msg(name_, ".h", h);
    wq_.push_back(params.linear_weight(hp + ".wq", c, c));
    wk_.push_back(params.linear_weight(hp + ".wk", c, c));
    wv_.push_back(params.linear_weight(hp + ".wv", c, c));
  }
  mlp_ = detail::make_mlp(params, name_, c);
  if (settings_.layer_norm) {
    ln1_ = detail::make_ln(params, name_ + ".ln1", c);
    ln2_ = detail::make_ln(params, name_ + ".ln2", c);
  }
}

std::pair<Tensor, AttentionRecord> HighOrderAttentionBlock::attention(
    const Tensor& zhat, const Tensor& h) const {
  if (zhat.rank() != 4 || h.rank() != 4)
    throw ShapeError("cross-attention expects [B,T,J,C] and [B,T,M,C]");
  if (zhat.extent(0) != h.extent(0) || zhat.extent(1) != h.extent(1) ||
      zhat.extent(3) != h.extent(3))
    throw ShapeError(format_msg("joint features ", shape_str(zhat.shape()),
                                " and hyperbone features ", shape_str(h.shape()),
                                " disagree on batch/time/channels"));
  const double inv_sqrt_dm =
      1.0 / std::sqrt(static_cast<double>(settings_.channels));
  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_maps;
  for (int head = 0; head < settings_.heads; ++head) {
    const auto hu = static_cast<std::size_t>(head);
    Tensor q = matmul(zhat, wq_[hu]);
    Tensor k = matmul(h, wk_[hu]);
    Tensor v = matmul(h, wv_[hu]);
    // queries come from joints only, so scores are J x M
    Tensor attn = softmax_lastdim(scale(matmul(q, transpose_last2(k)),
                                        inv_sqrt_dm));
    head_maps.push_back(attn);
    head_outputs.push_back(matmul(attn, v));
  }
  Tensor fused = head_outputs[0];
  for (std::size_t k = 1; k < head_outputs.size(); ++k)
    fused = add(fused, head_outputs[k]);
  return {fused, detail::summarize(head_maps, name_, "high_order")};
}

Tensor HighOrderAttentionBlock::forward(const Tensor& zhat, const Tensor& h,
                                        const RunContext& ctx) const {
  Tensor pre = settings_.layer_norm
                   ? layer_norm(zhat, ln1_.gain, ln1_.bias)
                   : zhat;
  auto [fused, record] = attention(pre, h);
  if (ctx.recorder) ctx.recorder->add(record);
  fused = detail::maybe_dropout(fused, settings_.dropout, ctx);
  Tensor x = settings_.residual ? add(zhat, fused) : fused;
  Tensor pre2 = settings_.layer_norm
                    ? layer_norm(x, ln2_.gain, ln2_.bias)
                    : x;
  Tensor m = detail::apply_mlp(pre2, mlp_, settings_.activation,
                               settings_.dropout, ctx);
  return settings_.residual ? add(x, m) : m;
}

void write_attention_dump(const std::string& path, const AttentionRecord& rec,
                          const HyperboneIndex* legend) {
  std::ofstream out(path);
  if (!out) throw IoError(format_msg("cannot open ", path, " for writing"));
  out << "HDFATTN 1\n";
  out << "block " << rec.block << "\n";
  out << "kind " << rec.kind << "\n";
  out << "rows " << rec.rows << "\n";
  out << "cols " << rec.cols << "\n";
  if (legend) {
    if (legend->total() != rec.cols)
      throw ValueError(format_msg("legend has ", legend->total(),
                                  " hyperbones but the dump has ", rec.cols,
                                  " columns"));
    out << "legend " << legend->total() << "\n";
    for (std::int64_t i = 0; i < legend->total(); ++i) {
      out << "hb " << i;
      for (std::int64_t j : legend->flat[static_cast<std::size_t>(i)].path)
        out << ' ' << j;
      out << "\n";
    }
  }
  out << "data\n";
  char buf[32];
  for (std::int64_t r = 0; r < rec.rows; ++r) {
    for (std::int64_t c = 0; c < rec.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    rec.weights[static_cast<std::size_t>(r * rec.cols + c)]);
      out << (c ? " " : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError(format_msg("failed writing ", path));
}

AttentionRecord read_attention_dump(const std::string& path,
                                    std::vector<Hyperbone>* legend_out) {
  std::ifstream in(path);
  if (!in) throw IoError(format_msg("cannot open ", path));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "HDFATTN" || version != 1)
    throw IoError(format_msg(path, ": not an attention dump"));
  AttentionRecord rec;
  std::string key;
  std::int64_t legend_count = -1;
  while (in >> key) {
    if (key == "block") in >> rec.block;
    else if (key == "kind") in >> rec.kind;
    else if (key == "rows") in >> rec.rows;
    else if (key == "cols") in >> rec.cols;
    else if (key == "legend") in >> legend_count;
    else if (key == "hb") {
      std::int64_t idx = 0;
      in >> idx;
      std::string rest;
      std::getline(in, rest);
      if (legend_out) {
        Hyperbone hb;
        std::istringstream ls(rest);
        std::int64_t j;
        while (ls >> j) hb.path.push_back(j);
        legend_out->push_back(std::move(hb));
      }
    } else if (key == "data") {
      break;
    } else {
      throw IoError(format_msg(path, ": unexpected field '", key, "'"));
    }
  }
  if (rec.rows <= 0 || rec.cols <= 0)
    throw IoError(format_msg(path, ": missing shape header"));
  rec.weights.resize(static_cast<std::size_t>(rec.rows * rec.cols));
  for (auto& w : rec.weights)
    if (!(in >> w)) throw IoError(format_msg(path, ": truncated payload"));
  if (legend_out && legend_count >= 0 &&
      static_cast<std::int64_t>(legend_out->size()) != legend_count)
    throw IoError(format_msg(path, ": legend count mismatch"));
  return rec;
}

}  // namespace hdf
