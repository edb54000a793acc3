#include <benchmark/benchmark.h>

#include <random>

#include "hdformer/network.hpp"
#include "hdformer/training.hpp"

namespace {

using namespace hdf;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& e : v) e = uniform_range(rng, -1, 1);
  return Tensor::from_data(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Tensor a = random_tensor({n, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_EnumerateHyperbones(benchmark::State& state) {
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("h36m_17"));
  for (auto _ : state)
    benchmark::DoNotOptimize(enumerate_hyperbones(g, state.range(0)));
}
BENCHMARK(BM_EnumerateHyperbones)->Arg(3)->Arg(5)->Arg(8);

void BM_FirstOrderAttention(benchmark::State& state) {
  Tape tape;
  ParamRegistry params(tape, 3);
  const std::int64_t J = 17, C = state.range(0);
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("h36m_17"));
  Tensor adj = Tensor::from_data({J, J}, g.adjacency());
  BlockSettings settings;
  settings.channels = C;
  settings.heads = 4;
  settings.dropout = 0.0;
  FirstOrderAttentionBlock block(params, "foa", settings, adj);
  Tensor z = random_tensor({1, 16, J, C}, 4);
  RunContext ctx;
  for (auto _ : state) {
    benchmark::DoNotOptimize(block.forward(z, ctx));
    tape.clear();
  }
}
BENCHMARK(BM_FirstOrderAttention)->Arg(32)->Arg(64);

void BM_MicroForward(benchmark::State& state) {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = SkeletonGraph::build(builtin_topology(cfg.topology));
  HDFormer model(cfg, g);
  Tensor x = random_tensor({1, cfg.frames, g.joint_count(), 2}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_MicroForward);

void BM_MicroTrainStep(benchmark::State& state) {
  HDFormerConfig cfg = HDFormerConfig::micro();
  SkeletonGraph g = SkeletonGraph::build(builtin_topology(cfg.topology));
  HDFormer model(cfg, g);
  Tensor x = random_tensor({4, cfg.frames, g.joint_count(), 2}, 6);
  Tensor gt = random_tensor({4, cfg.frames, g.joint_count(), 3}, 7);
  OptimizerConfig opt_cfg;
  opt_cfg.milestones = {};
  opt_cfg.epochs = 1;
  Optimizer opt(model.params(), opt_cfg);
  RunContext ctx;
  ctx.train = true;
  ctx.dropout_rng = &model.dropout_rng();
  for (auto _ : state) {
    model.clear_tape();
    opt.zero_grad();
    Tensor loss = mpjpe_loss(model.forward(x, ctx), gt);
    model.tape().backward(loss);
    opt.step(1e-3);
  }
  model.clear_tape();
}
BENCHMARK(BM_MicroTrainStep);

void BM_DeskForward(benchmark::State& state) {
  HDFormerConfig cfg = HDFormerConfig::desk();
  SkeletonGraph g = SkeletonGraph::build(builtin_topology(cfg.topology));
  HDFormer model(cfg, g);
  Tensor x = random_tensor({1, cfg.frames, g.joint_count(), 2}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_DeskForward);

}  // namespace

BENCHMARK_MAIN();
