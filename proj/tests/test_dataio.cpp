#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "hdformer/dataio.hpp"

using namespace hdf;

namespace {

PoseSequence small_sequence(std::int64_t frames, std::int64_t joints,
                            std::int64_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PoseSequence seq;
  seq.name = "test";
  seq.topology = "chain" + std::to_string(joints);
  seq.joints = joints;
  seq.channels = channels;
  seq.data = gradcheck::random_values(
      static_cast<std::size_t>(frames * joints * channels), rng, -100, 100);
  return seq;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("pose files round-trip bit-exactly") {
  PoseSequence seq = small_sequence(7, 5, 3, 1);
  seq.fps = 50.0;
  const std::string path = "pose_roundtrip_test.bin";
  save_pose_sequence(path, seq);
  PoseSequence back = load_pose_sequence(path);
  CHECK(back.joints == seq.joints);
  CHECK(back.channels == seq.channels);
  CHECK(back.fps == seq.fps);
  CHECK(back.topology == seq.topology);
  CHECK(back.data == seq.data);
  std::remove(path.c_str());
}

TEST_CASE("truncated payloads name the expected and actual byte counts") {
  PoseSequence seq = small_sequence(4, 3, 2, 2);
  const std::string path = "pose_truncate_test.bin";
  save_pose_sequence(path, seq);
  // chop off the last 16 bytes
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  out.close();
  CHECK_THROWS_WITH_AS(load_pose_sequence(path),
                       doctest::Contains("truncated"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("unsupported format versions are rejected") {
  const std::string path = "pose_version_test.bin";
  std::ofstream out(path, std::ios::binary);
  out << "HDFPOSE 9\njoints 2\nchannels 2\nframes 0\ndata\n";
  out.close();
  CHECK_THROWS_WITH_AS(load_pose_sequence(path), doctest::Contains("version"),
                       IoError);
  std::remove(path.c_str());
}

TEST_CASE("a 3-channel sequence cannot drive 2D inference") {
  PoseSequence seq3 = small_sequence(6, 4, 3, 3);
  auto identity = [](const Tensor& x) { return x; };
  CHECK_THROWS_WITH_AS(sliding_window_infer(identity, seq3, 4),
                       doctest::Contains("channels"), ValueError);
}

TEST_CASE("window counts follow the stride arithmetic") {
  PoseSequence in96 = small_sequence(96, 3, 2, 4);
  PoseSequence gt96 = small_sequence(96, 3, 3, 5);
  std::vector<PoseSequence> xs = {in96}, ys = {gt96};
  WindowedDataset one = make_windows(xs, ys, 96, 1);
  CHECK(one.windows.size() == 1);

  PoseSequence in100 = small_sequence(100, 3, 2, 6);
  PoseSequence gt100 = small_sequence(100, 3, 3, 7);
  xs = {in100};
  ys = {gt100};
  WindowedDataset five = make_windows(xs, ys, 96, 1);
  CHECK(five.windows.size() == 5);
  CHECK(five.windows[4].offset == 4);

  // too-short sequences are skipped with a warning, not an error
  PoseSequence short2d = small_sequence(10, 3, 2, 8);
  PoseSequence short3d = small_sequence(10, 3, 3, 9);
  xs = {short2d};
  ys = {short3d};
  WindowedDataset none = make_windows(xs, ys, 96, 1);
  CHECK(none.windows.empty());
  CHECK(none.skipped_sequences == 1);
}

TEST_CASE("sliding-window inference stitches offsets 0,5,... plus the tail") {
  const std::int64_t T = 8, J = 2;
  // the stub predicts a constant equal to the window's first input value,
  // so overlapping frames expose the averaging
  auto stub = [&](const Tensor& x) {
    return Tensor::full({1, T, J, 3}, x.raw()[0]);
  };
  PoseSequence seq = small_sequence(T + 5, J, 2, 10);
  PoseSequence out = sliding_window_infer(stub, seq, T, 5);
  CHECK(out.frames() == T + 5);
  CHECK(out.channels == 3);
  const double v0 = seq.at(0, 0, 0);
  const double v5 = seq.at(5, 0, 0);
  // frames [0,5): window 0 only; frames [5,8): both; frames [8,13): window 1
  CHECK(out.at(0, 0, 0) == v0);
  CHECK(out.at(6, 1, 2) == doctest::Approx((v0 + v5) / 2).epsilon(1e-15));
  CHECK(out.at(12, 0, 1) == v5);

  // stitch=last keeps the newest window's prediction
  PoseSequence last = sliding_window_infer(stub, seq, T, 5, StitchMode::last);
  CHECK(last.at(6, 1, 2) == v5);
}

TEST_CASE("a sequence of exactly one window length is a plain forward") {
  const std::int64_t T = 6, J = 3;
  auto stub = [&](const Tensor& x) {
    Tensor out = Tensor::zeros({1, T, J, 3});
    for (std::size_t i = 0; i < out.raw().size(); ++i)
      out.raw()[i] = static_cast<double>(i) + x.raw()[0];
    return out;
  };
  PoseSequence seq = small_sequence(T, J, 2, 11);
  PoseSequence out = sliding_window_infer(stub, seq, T, 5);
  CHECK(out.frames() == T);
  Tensor direct = stub(seq.tensor());
  // reshape comparison: the output must equal the single forward exactly
  for (std::int64_t f = 0; f < T; ++f)
    for (std::int64_t j = 0; j < J; ++j)
      for (std::int64_t c = 0; c < 3; ++c)
        CHECK(out.at(f, j, c) == direct.at({0, f, j, c}));
}

TEST_CASE("constant models stitch to constants for any length") {
  const std::int64_t T = 8;
  auto constant = [&](const Tensor&) { return Tensor::full({1, T, 2, 3}, 2.5); };
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t len = T + static_cast<std::int64_t>(rng() % 40);
    PoseSequence seq = small_sequence(len, 2, 2, rng());
    PoseSequence out = sliding_window_infer(constant, seq, T, 5);
    CHECK(out.frames() == len);
    for (double v : out.data) CHECK(v == 2.5);
  }
  PoseSequence tiny = small_sequence(T - 1, 2, 2, 13);
  CHECK_THROWS_WITH_AS(sliding_window_infer(constant, tiny, T, 5),
                       doctest::Contains("pad"), ValueError);
}

TEST_CASE("synthetic sequences are deterministic with constant bones") {
  SynthSpec spec;
  spec.topology = "h36m_17";
  spec.frames = 32;
  auto [a2, a3] = synth_generate(spec, 77);
  auto [b2, b3] = synth_generate(spec, 77);
  CHECK(a2.data == b2.data);
  CHECK(a3.data == b3.data);
  auto [c2, c3] = synth_generate(spec, 78);
  CHECK(a3.data != c3.data);

  SkeletonGraph g = SkeletonGraph::build(builtin_topology(spec.topology));
  for (const auto& [parent, child] : g.edges()) {
    double len0 = 0.0;
    for (std::int64_t f = 0; f < a3.frames(); ++f) {
      double d2 = 0.0;
      for (std::int64_t c = 0; c < 3; ++c) {
        const double d = a3.at(f, child, c) - a3.at(f, parent, c);
        d2 += d * d;
      }
      const double len = std::sqrt(d2);
      if (f == 0)
        len0 = len;
      else
        CHECK(std::abs(len - len0) < 1e-9);
    }
    CHECK(len0 >= spec.bone_min - 1e-9);
    CHECK(len0 <= spec.bone_max + 1e-9);
  }
}

TEST_CASE("the 2D view is the orthographic projection when noise is zero") {
  SynthSpec spec;
  spec.topology = "chain5";
  spec.frames = 16;
  spec.noise2d = 0.0;
  auto [p2, p3] = synth_generate(spec, 99);
  for (std::int64_t f = 0; f < p3.frames(); ++f)
    for (std::int64_t j = 0; j < p3.joints; ++j)
      for (std::int64_t c = 0; c < 2; ++c)
        CHECK(p2.at(f, j, c) == p3.at(f, j, c));

  SynthSpec noisy = spec;
  noisy.noise2d = 2.0;
  auto [n2, n3] = synth_generate(noisy, 99);
  CHECK(n3.data == p3.data);
  CHECK(n2.data != p2.data);
}

TEST_CASE("normalization round-trips within 1e-12") {
  PoseSequence seq = small_sequence(9, 5, 3, 14);
  Normalizer norm{2, 350.0};
  std::vector<double> roots;
  PoseSequence normed = norm.normalize(seq, &roots);
  // the root joint is pinned at zero
  for (std::int64_t f = 0; f < normed.frames(); ++f)
    for (std::int64_t c = 0; c < 3; ++c) CHECK(normed.at(f, 2, c) == 0.0);
  PoseSequence back = norm.denormalize(normed, roots);
  for (std::size_t i = 0; i < seq.data.size(); ++i)
    CHECK(std::abs(back.data[i] - seq.data[i]) < 1e-12);
}

TEST_CASE("text keypoint import parses frames and flags bad lines") {
  const std::string path = "keypoints_import_test.txt";
  {
    std::ofstream out(path);
    out << "# two joints, two channels\n";
    out << "1.0 2.0 3.0 4.0\n";
    out << "\n";
    out << "5.0 6.0 7.0 8.0  # second frame\n";
  }
  PoseSequence seq = import_text_keypoints(path, "chain2", 2, 2);
  CHECK(seq.frames() == 2);
  CHECK(seq.at(1, 1, 1) == 8.0);
  {
    std::ofstream out(path);
    out << "1.0 2.0 3.0\n";
  }
  CHECK_THROWS_WITH_AS(import_text_keypoints(path, "chain2", 2, 2),
                       doctest::Contains(":1:"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("displacement scale measures root-centered joint norms") {
  PoseSequence seq;
  seq.joints = 2;
  seq.channels = 3;
  // root at origin, second joint at distance 5 in every frame
  seq.data = {0, 0, 0, 3, 4, 0, 0, 0, 0, 0, 3, 4};
  CHECK(displacement_scale(seq, 0) == doctest::Approx(5.0).epsilon(1e-15));
}

}  // TEST_SUITE
