#include <doctest.h>

#include <cstdio>
#include <random>

#include "gradcheck.hpp"
#include "hdformer/network.hpp"
#include "hdformer/runconfig.hpp"

using namespace hdf;

namespace {

SkeletonGraph graph_for(const HDFormerConfig& cfg) {
  return SkeletonGraph::build(builtin_topology(cfg.topology));
}

Tensor random_input(const HDFormerConfig& cfg, std::int64_t joints,
                    std::int64_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::size_t>(batch * cfg.frames * joints * 2);
  return Tensor::from_data({batch, cfg.frames, joints, 2},
                           gradcheck::random_values(n, rng));
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("desk config builds under a million parameters") {
  HDFormerConfig cfg = HDFormerConfig::desk();
  HDFormer model(cfg, graph_for(cfg));
  CHECK(model.parameter_count() > 0);
  CHECK(model.parameter_count() < 1000000);
}

TEST_CASE("paper-scale parameter count lands within 15 percent of 3.7M") {
  HDFormerConfig cfg = HDFormerConfig::paper_scale();
  HDFormer model(cfg, graph_for(cfg));
  const double target = 3.7e6;
  const double count = static_cast<double>(model.parameter_count());
  MESSAGE("paper-scale parameters: ", model.parameter_count());
  CHECK(count > target * 0.85);
  CHECK(count < target * 1.15);
}

TEST_CASE("same seed gives identical weights, different seed does not") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  cfg.seed = 1234;
  SkeletonGraph g = graph_for(cfg);
  HDFormer a(cfg, g), b(cfg, g);
  REQUIRE(a.params().entries().size() == b.params().entries().size());
  for (const auto& [name, t] : a.params().entries())
    CHECK(t.raw() == b.params().get(name).raw());

  cfg.seed = 4321;
  HDFormer c(cfg, g);
  bool any_diff = false;
  for (const auto& [name, t] : a.params().entries())
    if (t.raw() != c.params().get(name).raw()) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("frames must divide by 2^depth") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  cfg.frames = 10;  // depth 1 -> ok
  CHECK_NOTHROW(cfg.validate());
  cfg.depth = 2;
  cfg.channels = {8, 16, 32};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("forward shape and the T=96 temporal ladder") {
  HDFormerConfig cfg;
  cfg.frames = 96;
  cfg.topology = "h36m_17";
  cfg.depth = 2;
  cfg.channels = {8, 12, 16};
  cfg.heads = 2;
  cfg.order_cap = 2;
  cfg.order_convention = OrderConvention::order_joints;
  cfg.merge_blocks = 1;
  cfg.dropout = 0.0;
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  Tensor x = random_input(cfg, g.joint_count(), 1, 7);
  RunContext ctx;
  ForwardTrace trace;
  Tensor y = model.forward(x, ctx, &trace);
  model.clear_tape();
  CHECK(y.shape() == Shape{1, 96, 17, 3});
  CHECK(trace.temporal_extents ==
        std::vector<std::int64_t>{96, 48, 24, 48, 96});
}

TEST_CASE("micro end-to-end gradient check") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  std::mt19937_64 rng(99);
  Tensor x = Tensor::variable(
      {1, cfg.frames, g.joint_count(), 2},
      gradcheck::random_values(
          static_cast<std::size_t>(cfg.frames * g.joint_count() * 2), rng),
      model.tape());
  RunContext ctx;

  std::vector<Tensor> leaves = {x};
  for (const auto& [name, t] : model.params().entries()) leaves.push_back(t);
  auto rep = gradcheck::check(
      model.tape(), [&] { return mean_all(model.forward(x, ctx)); }, leaves,
      1e-5, /*max_coords_per_leaf=*/3, /*coord_seed=*/5);
  MESSAGE("micro model coords checked: ", rep.checked,
          " max rel err: ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("every named weight receives a gradient buffer") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  cfg.merge_blocks = 2;  // exercises the shared merge bias
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  Tensor x = random_input(cfg, g.joint_count(), 2, 11);
  RunContext ctx;
  Tensor out = mean_all(model.forward(x, ctx));
  model.tape().backward(out);
  for (const auto& [name, t] : model.params().entries()) {
    INFO("parameter: ", name);
    CHECK(t.has_grad());
  }
  model.clear_tape();
}

TEST_CASE("forward is deterministic for a fixed seed") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  Tensor x = random_input(cfg, g.joint_count(), 2, 13);
  Tensor a = model.predict(x);
  Tensor b = model.predict(x);
  CHECK(a.raw() == b.raw());
}

TEST_CASE("batched forward equals per-sample forwards") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  Tensor x = random_input(cfg, g.joint_count(), 2, 17);
  Tensor both = model.predict(x);

  const auto n = static_cast<std::size_t>(x.numel() / 2);
  std::vector<double> first(x.raw().begin(), x.raw().begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<double> second(x.raw().begin() + static_cast<std::ptrdiff_t>(n), x.raw().end());
  Tensor a = model.predict(Tensor::from_data({1, cfg.frames, g.joint_count(), 2}, first));
  Tensor b = model.predict(Tensor::from_data({1, cfg.frames, g.joint_count(), 2}, second));

  for (std::size_t i = 0; i < a.raw().size(); ++i) {
    CHECK(std::abs(both.raw()[i] - a.raw()[i]) < 1e-12);
    CHECK(std::abs(both.raw()[i + a.raw().size()] - b.raw()[i]) < 1e-12);
  }
}

TEST_CASE("stage placement: default, down-only, all, empty") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  CHECK(cfg.hoa_placement == std::set<Stage>{Stage::merge});

  HDFormerConfig down = configure_stage_placement(cfg, {"down"});
  CHECK(down.hoa_placement == std::set<Stage>{Stage::down});
  SkeletonGraph g = graph_for(cfg);
  HDFormer down_model(down, g);
  CHECK(down_model.params().contains("down.l0.hoa.h0.wq"));
  CHECK(!down_model.params().contains("merge.b0.hoa.h0.wq"));

  HDFormerConfig all = configure_stage_placement(cfg, {"all"});
  CHECK(all.hoa_placement ==
        std::set<Stage>{Stage::down, Stage::up, Stage::merge});
  HDFormerConfig expanded =
      configure_stage_placement(cfg, {"down", "up", "merge"});
  CHECK(all.hoa_placement == expanded.hoa_placement);

  HDFormerConfig none = configure_stage_placement(cfg, {});
  HDFormer foa_only(none, g);
  CHECK(!foa_only.has_hyperbones());
  Tensor x = random_input(cfg, g.joint_count(), 1, 19);
  CHECK(foa_only.predict(x).shape() == Shape{1, cfg.frames, g.joint_count(), 3});

  CHECK_THROWS_AS(configure_stage_placement(cfg, {"sideways"}), ConfigError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  cfg.seed = 2024;
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  model.step = 77;
  model.norm_scale = 123.456789012345678;
  const std::string path = "ckpt_roundtrip_test.bin";
  save_checkpoint(path, model);

  HDFormerConfig other = cfg;
  other.seed = 999;  // different init, must be overwritten by the load
  HDFormer restored(other, g);
  load_checkpoint(path, restored);
  CHECK(restored.step == 77);
  CHECK(restored.norm_scale == model.norm_scale);
  for (const auto& [name, t] : model.params().entries())
    CHECK(t.raw() == restored.params().get(name).raw());

  auto loaded = load_model(path);
  CHECK(loaded->config().topology == cfg.topology);
  CHECK(loaded->step == 77);
  for (const auto& [name, t] : model.params().entries())
    CHECK(t.raw() == loaded->params().get(name).raw());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects a mismatched model") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  const std::string path = "ckpt_mismatch_test.bin";
  save_checkpoint(path, model);

  HDFormerConfig bigger = cfg;
  bigger.channels = {16, 32};
  HDFormer other(bigger, g);
  CHECK_THROWS_AS(load_checkpoint(path, other), IoError);
  std::remove(path.c_str());
}

TEST_CASE("dump_attention needs a recorded forward") {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = graph_for(cfg);
  HDFormer model(cfg, g);
  Tensor x = random_input(cfg, g.joint_count(), 1, 23);

  model.predict(x);  // no recorder attached
  CHECK_THROWS_WITH_AS(model.dump_attention(),
                       doctest::Contains("recording disabled"), ValueError);

  AttentionRecorder recorder;
  RunContext ctx;
  ctx.recorder = &recorder;
  model.forward(x, ctx);
  model.clear_tape();
  const auto& records = model.dump_attention();
  // depth 1: down + bottom + up + merge FOA blocks, plus the merge HOA
  CHECK(records.size() == 5);
  for (const auto& rec : records) {
    for (std::int64_t r = 0; r < rec.rows; ++r) {
      double acc = 0;
      for (std::int64_t c = 0; c < rec.cols; ++c)
        acc += rec.weights[static_cast<std::size_t>(r * rec.cols + c)];
      CHECK(std::abs(acc - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("shape conservation over random valid configs") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    HDFormerConfig cfg;
    cfg.depth = 1 + static_cast<int>(rng() % 2);
    const std::int64_t mult = std::int64_t{1} << cfg.depth;
    cfg.frames = mult * static_cast<std::int64_t>(1 + rng() % 3);
    cfg.topology = (rng() % 2) ? "chain5" : "chain7";
    cfg.channels.clear();
    for (int d = 0; d <= cfg.depth; ++d)
      cfg.channels.push_back(4 + 4 * static_cast<std::int64_t>(rng() % 2) + 4 * d);
    cfg.heads = 1 + static_cast<int>(rng() % 2);
    cfg.order_cap = 2 + static_cast<std::int64_t>(rng() % 2);
    cfg.order_convention = OrderConvention::order_joints;
    cfg.merge_blocks = 1;
    cfg.dropout = 0.0;
    cfg.encoder = static_cast<EncoderMode>(rng() % 5);
    SkeletonGraph g = graph_for(cfg);
    HDFormer model(cfg, g);
    const std::int64_t batch = 1 + static_cast<std::int64_t>(rng() % 2);
    Tensor x = random_input(cfg, g.joint_count(), batch, rng());
    CHECK(model.predict(x).shape() ==
          Shape{batch, cfg.frames, g.joint_count(), 3});
  }
}

}  // TEST_SUITE
