#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "hdformer/encoding.hpp"
#include "hdformer/ops.hpp"

using namespace hdf;

namespace {

SkeletonGraph chain_graph(std::int64_t n) {
  return SkeletonGraph::build(builtin_topology("chain" + std::to_string(n)));
}

void set_identity(Tensor t) {
  auto& v = t.raw();
  std::fill(v.begin(), v.end(), 0.0);
  const std::int64_t rows = t.extent(0), cols = t.extent(1);
  for (std::int64_t i = 0; i < std::min(rows, cols); ++i)
    v[static_cast<std::size_t>(i * cols + i)] = 1.0;
}

// Joint features [1,1,J,C] from a flat row-per-joint list.
Tensor features(std::int64_t joints, std::int64_t channels,
                std::vector<double> values) {
  return Tensor::from_data({1, 1, joints, channels}, std::move(values));
}

double at_channel(const Tensor& t, std::int64_t m, std::int64_t c) {
  return t.at({0, 0, m, c});
}

}  // namespace

TEST_SUITE("encoding") {

TEST_CASE("subtraction encoder uses only the endpoints") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(4);
  HyperboneIndex index = enumerate_hyperbones(g, 4);
  HyperboneEncoder enc(params, "enc", index, EncoderMode::subtraction, 2);
  set_identity(enc.shared_map());

  Tensor z = features(4, 2, {1, 2, 9, 9, 8, 8, 0.5, 1});
  Tensor out = enc.encode_one(z, shortest_path(g, 0, 3));
  CHECK(at_channel(out, 0, 0) == 0.5);
  CHECK(at_channel(out, 0, 1) == 1.0);

  // equal start and end features cancel exactly
  Tensor same = features(4, 2, {1, 2, 7, 7, -3, 4, 1, 2});
  Tensor zero = enc.encode_one(same, shortest_path(g, 0, 3));
  CHECK(at_channel(zero, 0, 0) == 0.0);
  CHECK(at_channel(zero, 0, 1) == 0.0);

  // interior features do not matter
  std::mt19937_64 rng(5);
  Tensor a = features(4, 2, {1, 2, 0.1, 0.2, 0.3, 0.4, 0.5, 1});
  Tensor b = features(4, 2, {1, 2, -9, 4, 2, -7, 0.5, 1});
  Tensor oa = enc.encode_one(a, shortest_path(g, 0, 3));
  Tensor ob = enc.encode_one(b, shortest_path(g, 0, 3));
  CHECK(oa.raw() == ob.raw());
}

TEST_CASE("summation encoder averages mapped joint features") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(2);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 2),
                       EncoderMode::summation, 2);
  set_identity(enc.shared_map());

  Tensor z = features(2, 2, {2, 2, 4, 4});
  Tensor out = enc.encode_one(z, shortest_path(g, 0, 1));
  CHECK(at_channel(out, 0, 0) == 3.0);
  CHECK(at_channel(out, 0, 1) == 3.0);

  Tensor same = features(2, 2, {1.5, -2, 1.5, -2});
  Tensor o2 = enc.encode_one(same, shortest_path(g, 0, 1));
  CHECK(at_channel(o2, 0, 0) == 1.5);
  CHECK(at_channel(o2, 0, 1) == -2.0);
}

TEST_CASE("summation encoder ignores the order of interior features") {
  Tape tape;
  ParamRegistry params(tape, 3);
  SkeletonGraph g = chain_graph(4);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 4),
                       EncoderMode::summation, 3);
  std::mt19937_64 rng(7);
  Hyperbone hb = shortest_path(g, 0, 3);
  for (int trial = 0; trial < 10; ++trial) {
    auto vals = gradcheck::random_values(12, rng);
    Tensor z = features(4, 3, vals);
    // swap the two interior joints' features (indices 1 and 2)
    auto swapped = vals;
    for (int c = 0; c < 3; ++c)
      std::swap(swapped[static_cast<std::size_t>(3 + c)],
                swapped[static_cast<std::size_t>(6 + c)]);
    Tensor zs = features(4, 3, swapped);
    Tensor a = enc.encode_one(z, hb);
    Tensor b = enc.encode_one(zs, hb);
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(at_channel(a, 0, c) - at_channel(b, 0, c)) < 1e-12);
  }
}

TEST_CASE("multiplication encoder multiplies elementwise") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(2);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 2),
                       EncoderMode::multiplication, 1);
  set_identity(enc.shared_map());

  Tensor z = features(2, 1, {2, 3});
  CHECK(at_channel(enc.encode_one(z, shortest_path(g, 0, 1)), 0, 0) == 6.0);

  // a zero anywhere in a channel wipes that channel
  Tape tape3;
  ParamRegistry params3(tape3, 1);
  SkeletonGraph g3 = chain_graph(3);
  HyperboneEncoder enc3(params3, "enc", enumerate_hyperbones(g3, 3),
                        EncoderMode::multiplication, 2);
  set_identity(enc3.shared_map());
  Tensor zz = features(3, 2, {5, 1, 0, 2, 3, 4});
  Tensor out = enc3.encode_one(zz, shortest_path(g3, 0, 2));
  CHECK(at_channel(out, 0, 0) == 0.0);
  CHECK(at_channel(out, 0, 1) == 8.0);

  // multiplicative identity
  Tensor ones_first = features(2, 2, {1, 1, -2.5, 4});
  Tape tape2;
  ParamRegistry params2(tape2, 1);
  HyperboneEncoder enc2(params2, "enc", enumerate_hyperbones(g, 2),
                        EncoderMode::multiplication, 2);
  set_identity(enc2.shared_map());
  Tensor o = enc2.encode_one(ones_first, shortest_path(g, 0, 1));
  CHECK(at_channel(o, 0, 0) == -2.5);
  CHECK(at_channel(o, 0, 1) == 4.0);
}

TEST_CASE("concatenation encoder projects the ordered joint features") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(2);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 2),
                       EncoderMode::concatenation, 2);
  // [I ; 0] selects the first joint's feature block
  Tensor f2 = enc.order_map(2);
  auto& w = f2.raw();
  std::fill(w.begin(), w.end(), 0.0);
  w[0 * 2 + 0] = 1.0;
  w[1 * 2 + 1] = 1.0;

  Tensor z = features(2, 2, {3.5, -1, 9, 9});
  Tensor out = enc.encode_one(z, shortest_path(g, 0, 1));
  CHECK(at_channel(out, 0, 0) == 3.5);
  CHECK(at_channel(out, 0, 1) == -1.0);
}

TEST_CASE("concatenation encoder is order-sensitive for generic maps") {
  Tape tape;
  ParamRegistry params(tape, 99);
  SkeletonGraph g = chain_graph(3);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 3),
                       EncoderMode::concatenation, 2);
  std::mt19937_64 rng(13);
  Hyperbone hb = shortest_path(g, 0, 2);
  auto vals = gradcheck::random_values(6, rng);
  Tensor z = features(3, 2, vals);
  auto rev = vals;  // swap features of path ends
  std::swap(rev[0], rev[4]);
  std::swap(rev[1], rev[5]);
  Tensor zr = features(3, 2, rev);
  Tensor a = enc.encode_one(z, hb);
  Tensor b = enc.encode_one(zr, hb);
  bool differs = false;
  for (int c = 0; c < 2; ++c)
    differs = differs || std::abs(at_channel(a, 0, c) - at_channel(b, 0, c)) > 1e-9;
  CHECK(differs);
}

TEST_CASE("concatenation encoder sends gradient to every path joint") {
  Tape tape;
  ParamRegistry params(tape, 7);
  SkeletonGraph g = chain_graph(3);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 3),
                       EncoderMode::concatenation, 2);
  std::mt19937_64 rng(17);
  Tensor z = Tensor::variable({1, 1, 3, 2}, gradcheck::random_values(6, rng),
                              params.tape());
  Hyperbone hb = shortest_path(g, 0, 2);
  Tensor leaves[] = {z};
  auto rep = gradcheck::check(
      params.tape(), [&] { return sum_all(enc.encode_one(z, hb)); }, leaves);
  CHECK(rep.max_rel_err < 1e-5);

  params.tape().clear();
  z.zero_grad();
  Tensor out = sum_all(enc.encode_one(z, hb));
  params.tape().backward(out);
  for (int j = 0; j < 3; ++j) {
    double norm = 0;
    for (int c = 0; c < 2; ++c)
      norm += std::abs(z.grad()[static_cast<std::size_t>(j * 2 + c)]);
    CHECK(norm > 1e-9);
  }
}

TEST_CASE("sub_concat: order 2 is plain subtraction") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(2);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 2),
                       EncoderMode::sub_concat, 2);
  set_identity(enc.order_map(2));
  Tensor z = features(2, 2, {5, 1, 2, 4});
  Tensor out = enc.encode_one(z, shortest_path(g, 0, 1));
  CHECK(at_channel(out, 0, 0) == 3.0);
  CHECK(at_channel(out, 0, 1) == -3.0);
}

TEST_CASE("sub_concat ignores a common offset") {
  Tape tape;
  ParamRegistry params(tape, 23);
  SkeletonGraph g = chain_graph(4);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 4),
                       EncoderMode::sub_concat, 3);
  std::mt19937_64 rng(29);
  Hyperbone hb = shortest_path(g, 0, 3);
  for (int trial = 0; trial < 10; ++trial) {
    auto vals = gradcheck::random_values(12, rng);
    auto shifted = vals;
    const double off[3] = {gradcheck::random_values(1, rng)[0],
                           gradcheck::random_values(1, rng)[0],
                           gradcheck::random_values(1, rng)[0]};
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c)
        shifted[static_cast<std::size_t>(j * 3 + c)] += off[c];
    Tensor a = enc.encode_one(features(4, 3, vals), hb);
    Tensor b = enc.encode_one(features(4, 3, shifted), hb);
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(at_channel(a, 0, c) - at_channel(b, 0, c)) < 1e-12);
  }
}

TEST_CASE("sub_concat of an arithmetic progression is a constant block") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(4);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 4),
                       EncoderMode::sub_concat, 1);
  const double d = 0.75;
  // z decreases by d per step so each consecutive difference equals d
  Tensor z = features(4, 1, {3.0, 3.0 - d, 3.0 - 2 * d, 3.0 - 3 * d});
  Hyperbone hb = shortest_path(g, 0, 3);
  Tensor f4 = enc.order_map(4);  // [3, 1]
  for (int k = 0; k < 3; ++k) {
    auto& w = f4.raw();
    std::fill(w.begin(), w.end(), 0.0);
    w[static_cast<std::size_t>(k)] = 1.0;  // select the k-th difference
    Tensor out = enc.encode_one(z, hb);
    CHECK(at_channel(out, 0, 0) == doctest::Approx(d).epsilon(1e-12));
  }

  // a map for an order that was never built is a configuration error
  CHECK_THROWS_AS(enc.order_map(7), ConfigError);
}

TEST_CASE("encode_all stacks rows in canonical order") {
  Tape tape;
  ParamRegistry params(tape, 31);
  SkeletonGraph g = chain_graph(4);
  HyperboneIndex index = enumerate_hyperbones(g, 4);
  HyperboneEncoder enc(params, "enc", index, EncoderMode::sub_concat, 3);
  std::mt19937_64 rng(37);
  Tensor z = features(4, 3, gradcheck::random_values(12, rng));
  Tensor h = enc.encode_all(z);
  CHECK(h.shape() == Shape{1, 1, index.total(), 3});
  for (std::int64_t m = 0; m < index.total(); ++m) {
    Tensor row = enc.encode_one(z, index.flat[static_cast<std::size_t>(m)]);
    for (int c = 0; c < 3; ++c)
      CHECK(at_channel(h, m, c) == at_channel(row, 0, c));
  }
}

TEST_CASE("encode_all with order cap 2 reduces to the per-edge encoder") {
  Tape tape;
  ParamRegistry params(tape, 41);
  SkeletonGraph g = SkeletonGraph::build(builtin_topology("h36m_17"));
  HyperboneIndex index = enumerate_hyperbones(g, 2);
  HyperboneEncoder enc(params, "enc", index, EncoderMode::subtraction, 2);
  std::mt19937_64 rng(43);
  Tensor z = features(17, 2, gradcheck::random_values(34, rng));
  Tensor h = enc.encode_all(z);
  CHECK(h.extent(2) == 16);
  for (std::int64_t m = 0; m < 16; ++m) {
    Tensor row = enc.encode_one(z, index.flat[static_cast<std::size_t>(m)]);
    for (int c = 0; c < 2; ++c)
      CHECK(at_channel(h, m, c) == at_channel(row, 0, c));
  }
}

TEST_CASE("encode_all gradient matches finite differences") {
  Tape tape;
  ParamRegistry params(tape, 47);
  SkeletonGraph g = chain_graph(4);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 3),
                       EncoderMode::sub_concat, 2);
  std::mt19937_64 rng(53);
  Tensor z = Tensor::variable({1, 2, 4, 2}, gradcheck::random_values(16, rng),
                              params.tape());
  Tensor leaves[] = {z};
  auto rep = gradcheck::check(
      params.tape(), [&] { return sum_all(enc.encode_all(z)); }, leaves);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("channel mismatch is rejected") {
  Tape tape;
  ParamRegistry params(tape, 1);
  SkeletonGraph g = chain_graph(3);
  HyperboneEncoder enc(params, "enc", enumerate_hyperbones(g, 3),
                       EncoderMode::summation, 4);
  Tensor z = features(3, 2, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(enc.encode_all(z), ShapeError);
}

}  // TEST_SUITE
