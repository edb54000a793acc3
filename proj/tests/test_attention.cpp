#include <doctest.h>

#include <cstdio>
#include <random>

#include "gradcheck.hpp"
#include "hdformer/attention.hpp"

using namespace hdf;

namespace {

BlockSettings plain_settings(std::int64_t channels, int heads) {
  BlockSettings s;
  s.channels = channels;
  s.heads = heads;
  s.dropout = 0.0;
  s.layer_norm = false;
  s.residual = true;
  return s;
}

Tensor random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::from_data(shape,
                           gradcheck::random_values(
                               static_cast<std::size_t>(shape_numel(shape)), rng));
}

void copy_weights(ParamRegistry& from, ParamRegistry& to,
                  const std::string& name) {
  to.get(name).raw() = from.get(name).raw();
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("identical value rows collapse attention to that row") {
  Tape tape;
  ParamRegistry params(tape, 5);
  const std::int64_t J = 4, C = 3;
  Tensor adj = Tensor::zeros({J, J});
  FirstOrderAttentionBlock block(params, "foa", plain_settings(C, 1), adj);

  // all joints share one feature vector, so V rows are identical
  std::vector<double> vals;
  for (std::int64_t j = 0; j < J; ++j) vals.insert(vals.end(), {0.3, -1.2, 2.0});
  Tensor z = Tensor::from_data({1, 1, J, C}, vals);
  auto [fused, rec] = block.attention(z);

  // expected row: the shared feature through this head's value projection
  Tensor row = matmul(Tensor::from_data({1, C}, {0.3, -1.2, 2.0}),
                      params.get("foa.h0.wv"));
  for (std::int64_t j = 0; j < J; ++j)
    for (std::int64_t c = 0; c < C; ++c)
      CHECK(fused.at({0, 0, j, c}) ==
            doctest::Approx(row.at({0, c})).epsilon(1e-12));
}

TEST_CASE("summation fusion of identical heads multiplies one head by S") {
  const std::int64_t J = 3, C = 2;
  Tensor adj = Tensor::zeros({J, J});
  Tensor z = random_input({1, 2, J, C}, 11);

  Tape tape1;
  ParamRegistry one(tape1, 21);
  FirstOrderAttentionBlock single(one, "foa", plain_settings(C, 1), adj);

  Tape tape3;
  ParamRegistry three(tape3, 22);
  FirstOrderAttentionBlock triple(three, "foa", plain_settings(C, 3), adj);
  for (int h = 0; h < 3; ++h) {
    three.get(format_msg("foa.h", h, ".wq")).raw() = one.get("foa.h0.wq").raw();
    three.get(format_msg("foa.h", h, ".wk")).raw() = one.get("foa.h0.wk").raw();
    three.get(format_msg("foa.h", h, ".wv")).raw() = one.get("foa.h0.wv").raw();
  }

  Tensor a = single.attention(z).first;
  Tensor b = triple.attention(z).first;
  for (std::size_t i = 0; i < a.raw().size(); ++i)
    CHECK(b.raw()[i] == doctest::Approx(3.0 * a.raw()[i]).epsilon(1e-12));
}

TEST_CASE("saturated psi pins attention to the diagonal") {
  Tape tape;
  ParamRegistry params(tape, 31);
  const std::int64_t J = 4, C = 2;
  Tensor adj = Tensor::zeros({J, J});
  FirstOrderAttentionBlock block(params, "foa", plain_settings(C, 1), adj);

  auto& psi = block.psi().raw();
  for (std::int64_t i = 0; i < J; ++i)
    for (std::int64_t j = 0; j < J; ++j)
      psi[static_cast<std::size_t>(i * J + j)] = i == j ? 0.0 : -1e5;

  Tensor z = random_input({1, 1, J, C}, 41);
  auto [fused, rec] = block.attention(z);
  Tensor v = matmul(z, params.get("foa.h0.wv"));
  for (std::int64_t j = 0; j < J; ++j)
    for (std::int64_t c = 0; c < C; ++c)
      CHECK(fused.at({0, 0, j, c}) ==
            doctest::Approx(v.at({0, 0, j, c})).epsilon(1e-9));
  // attention matrix is numerically the identity
  for (std::int64_t i = 0; i < J; ++i)
    for (std::int64_t j = 0; j < J; ++j)
      CHECK(rec.weights[static_cast<std::size_t>(i * J + j)] ==
            doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
}

TEST_CASE("adding a constant to psi leaves attention outputs unchanged") {
  Tape tape;
  ParamRegistry params(tape, 43);
  const std::int64_t J = 5, C = 4;
  Tensor adj = Tensor::zeros({J, J});
  std::mt19937_64 rng(47);
  FirstOrderAttentionBlock block(params, "foa", plain_settings(C, 2), adj);
  auto& psi = block.psi().raw();
  for (auto& v : psi) v = uniform_range(rng, -0.5, 0.5);

  Tensor z = random_input({2, 1, J, C}, 53);
  Tensor before = block.attention(z).first;
  for (auto& v : psi) v += 3.71;  // shift every logit of every row equally
  Tensor after = block.attention(z).first;
  for (std::size_t i = 0; i < before.raw().size(); ++i)
    CHECK(before.raw()[i] == doctest::Approx(after.raw()[i]).epsilon(1e-12));
}

TEST_CASE("summation fusion equals concat fusion with stacked identities") {
  const std::int64_t J = 4, C = 3;
  const int S = 3;
  Tensor adj = Tensor::zeros({J, J});

  Tape tsum;
  ParamRegistry psum(tsum, 61);
  FirstOrderAttentionBlock sum_block(psum, "foa", plain_settings(C, S), adj);

  BlockSettings cs = plain_settings(C, S);
  cs.fusion = FusionMode::concat;
  Tape tcat;
  ParamRegistry pcat(tcat, 62);
  FirstOrderAttentionBlock cat_block(pcat, "foa", cs, adj);

  for (int h = 0; h < S; ++h) {
    copy_weights(psum, pcat, format_msg("foa.h", h, ".wq"));
    copy_weights(psum, pcat, format_msg("foa.h", h, ".wk"));
    copy_weights(psum, pcat, format_msg("foa.h", h, ".wv"));
  }
  // W_o = [I; I; I] so concat fusion sums the heads
  Tensor wo = pcat.get("foa.wo");
  auto& w = wo.raw();
  std::fill(w.begin(), w.end(), 0.0);
  for (int h = 0; h < S; ++h)
    for (std::int64_t c = 0; c < C; ++c)
      w[static_cast<std::size_t>((h * C + c) * C + c)] = 1.0;

  Tensor z = random_input({1, 2, J, C}, 67);
  Tensor a = sum_block.attention(z).first;
  Tensor b = cat_block.attention(z).first;
  for (std::size_t i = 0; i < a.raw().size(); ++i)
    CHECK(std::abs(a.raw()[i] - b.raw()[i]) < 1e-12);
}

TEST_CASE("first-order block end-to-end gradient check including psi") {
  Tape tape;
  ParamRegistry params(tape, 71);
  const std::int64_t J = 4, C = 6;
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("chain4"));
  Tensor adj = Tensor::from_data({J, J}, g.adjacency());
  BlockSettings s = plain_settings(C, 2);
  s.layer_norm = true;
  FirstOrderAttentionBlock block(params, "foa", s, adj);

  std::mt19937_64 rng(73);
  Tensor z = Tensor::variable({1, 2, J, C}, gradcheck::random_values(48, rng),
                              tape);
  RunContext ctx;
  std::vector<Tensor> leaves = {z, block.psi(), params.get("foa.h0.wq"),
                                params.get("foa.h1.wv"),
                                params.get("foa.mlp.w1"),
                                params.get("foa.ln1.gain")};
  auto rep = gradcheck::check(
      tape, [&] { return mean_all(block.forward(z, ctx)); }, leaves);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("cross-attention with a single hyperbone gives weight one") {
  Tape tape;
  ParamRegistry params(tape, 81);
  const std::int64_t J = 3, C = 2;
  HighOrderAttentionBlock block(params, "hoa", plain_settings(C, 1));
  Tensor zhat = random_input({1, 1, J, C}, 83);
  Tensor h = random_input({1, 1, 1, C}, 89);  // M = 1
  auto [fused, rec] = block.attention(zhat, h);
  CHECK(rec.rows == J);
  CHECK(rec.cols == 1);
  for (double w : rec.weights) CHECK(w == 1.0);
  // every joint receives the value projection of the single hyperbone
  Tensor v = matmul(h, params.get("hoa.h0.wv"));
  for (std::int64_t j = 0; j < J; ++j)
    for (std::int64_t c = 0; c < C; ++c)
      CHECK(fused.at({0, 0, j, c}) ==
            doctest::Approx(v.at({0, 0, 0, c})).epsilon(1e-12));
}

TEST_CASE("cross-attention scores are J x M, linear in the hyperbone count") {
  Tape tape;
  ParamRegistry params(tape, 91);
  const std::int64_t J = 5, M = 9, C = 4;
  HighOrderAttentionBlock block(params, "hoa", plain_settings(C, 2));
  Tensor zhat = random_input({2, 3, J, C}, 93);
  Tensor h = random_input({2, 3, M, C}, 97);
  auto [fused, rec] = block.attention(zhat, h);
  CHECK(rec.rows == J);
  CHECK(rec.cols == M);
  CHECK(static_cast<std::int64_t>(rec.weights.size()) == J * M);
  CHECK(fused.shape() == Shape{2, 3, J, C});
  // rows sum to one
  for (std::int64_t r = 0; r < J; ++r) {
    double acc = 0;
    for (std::int64_t c = 0; c < M; ++c)
      acc += rec.weights[static_cast<std::size_t>(r * M + c)];
    CHECK(std::abs(acc - 1.0) < 1e-9);
  }
}

TEST_CASE("gradient flows through encode_all plus cross-attention") {
  Tape tape;
  ParamRegistry params(tape, 101);
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("chain4"));
  HyperboneIndex index = enumerate_hyperbones(g, 3);
  const std::int64_t C = 4;
  HyperboneEncoder enc(params, "enc", index, EncoderMode::sub_concat, C);
  BlockSettings s = plain_settings(C, 2);
  s.layer_norm = true;
  HighOrderAttentionBlock block(params, "hoa", s);

  std::mt19937_64 rng(103);
  Tensor z = Tensor::variable({1, 2, 4, C}, gradcheck::random_values(32, rng),
                              tape);
  RunContext ctx;
  std::vector<Tensor> leaves = {z, enc.order_map(3), params.get("hoa.h0.wk"),
                                params.get("hoa.h1.wq"),
                                params.get("hoa.mlp.w2")};
  auto rep = gradcheck::check(
      tape,
      [&] { return mean_all(block.forward(z, enc.encode_all(z), ctx)); },
      leaves);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("attention dump files round-trip with their legend") {
  Tape tape;
  ParamRegistry params(tape, 111);
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("chain5"));
  HyperboneIndex index = enumerate_hyperbones(g, 3);
  const std::int64_t J = 5, C = 2;
  HyperboneEncoder enc(params, "enc", index, EncoderMode::summation, C);
  HighOrderAttentionBlock block(params, "hoa", plain_settings(C, 2));
  Tensor z = random_input({1, 2, J, C}, 113);
  auto [fused, rec] = block.attention(z, enc.encode_all(z));

  const std::string path = "attn_dump_test.txt";
  write_attention_dump(path, rec, &index);
  std::vector<Hyperbone> legend;
  AttentionRecord back = read_attention_dump(path, &legend);
  CHECK(back.kind == "high_order");
  CHECK(back.rows == rec.rows);
  CHECK(back.cols == rec.cols);
  CHECK(back.weights == rec.weights);
  REQUIRE(legend.size() == static_cast<std::size_t>(index.total()));
  CHECK(legend[0] == index.flat[0]);
  for (std::int64_t r = 0; r < back.rows; ++r) {
    double acc = 0;
    for (std::int64_t c = 0; c < back.cols; ++c)
      acc += back.weights[static_cast<std::size_t>(r * back.cols + c)];
    CHECK(std::abs(acc - 1.0) < 1e-6);
  }
  std::remove(path.c_str());
}

TEST_CASE("two identical forwards record identical attention") {
  Tape tape;
  ParamRegistry params(tape, 121);
  const std::int64_t J = 4, C = 3;
  Tensor adj = Tensor::zeros({J, J});
  BlockSettings s = plain_settings(C, 2);
  s.layer_norm = true;
  FirstOrderAttentionBlock block(params, "foa", s, adj);
  Tensor z = random_input({1, 2, J, C}, 123);

  AttentionRecorder rec1, rec2;
  RunContext c1{false, nullptr, &rec1};
  RunContext c2{false, nullptr, &rec2};
  block.forward(z, c1);
  tape.clear();
  block.forward(z, c2);
  tape.clear();
  REQUIRE(rec1.records().size() == 1);
  REQUIRE(rec2.records().size() == 1);
  CHECK(rec1.records()[0].weights == rec2.records()[0].weights);
}

}  // TEST_SUITE
