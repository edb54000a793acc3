#include "hdformer/dataio.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hdformer/ops.hpp"

namespace hdf {

Tensor PoseSequence::tensor() const {
  validate();
  return Tensor::from_data({frames(), joints, channels}, data);
}

void PoseSequence::validate() const {
  if (joints <= 0)
    throw ValueError(format_msg("sequence '", name, "': joints must be positive"));
  if (channels != 2 && channels != 3)
    throw ValueError(format_msg("sequence '", name, "': channels must be 2 or 3, got ",
                                channels));
  if (data.size() % static_cast<std::size_t>(joints * channels) != 0)
    throw ValueError(format_msg("sequence '", name, "': payload size ",
                                data.size(), " is not a multiple of joints*channels"));
}

void save_pose_sequence(const std::string& path, const PoseSequence& seq) {
  seq.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(format_msg("cannot open ", path, " for writing"));
  out << "HDFPOSE 1\n";
  out << "topology " << (seq.topology.empty() ? "unknown" : seq.topology) << "\n";
  out << "joints " << seq.joints << "\n";
  out << "channels " << seq.channels << "\n";
  char fps_buf[32];
  std::snprintf(fps_buf, sizeof fps_buf, "%.17g", seq.fps);
  out << "fps " << fps_buf << "\n";
  out << "frames " << seq.frames() << "\n";
  if (!seq.name.empty()) out << "name " << seq.name << "\n";
  out << "data\n";
  out.write(reinterpret_cast<const char*>(seq.data.data()),
            static_cast<std::streamsize>(seq.data.size() * sizeof(double)));
  if (!out) throw IoError(format_msg("failed writing ", path));
}

PoseSequence load_pose_sequence(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(format_msg("cannot open ", path));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "HDFPOSE")
    throw IoError(format_msg(path, ": not a pose sequence file"));
  if (version != 1)
    throw IoError(format_msg(path, ": format version ", version,
                             " is not supported (expected 1)"));
  PoseSequence seq;
  std::int64_t frames = -1;
  std::string key;
  while (in >> key) {
    if (key == "topology") in >> seq.topology;
    else if (key == "joints") in >> seq.joints;
    else if (key == "channels") in >> seq.channels;
    else if (key == "fps") in >> seq.fps;
    else if (key == "frames") in >> frames;
    else if (key == "name") in >> seq.name;
    else if (key == "data") {
      in.ignore(1);  // newline
      break;
    } else {
      throw IoError(format_msg(path, ": unexpected header field '", key, "'"));
    }
  }
  if (seq.joints <= 0 || seq.channels <= 0 || frames < 0)
    throw IoError(format_msg(path, ": incomplete header"));
  const std::size_t want =
      static_cast<std::size_t>(frames * seq.joints * seq.channels);
  seq.data.resize(want);
  in.read(reinterpret_cast<char*>(seq.data.data()),
          static_cast<std::streamsize>(want * sizeof(double)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != want * sizeof(double))
    throw IoError(format_msg(path, ": truncated payload, expected ",
                             want * sizeof(double), " bytes, got ", got));
  seq.validate();
  if (seq.name.empty()) seq.name = path;
  return seq;
}

PoseSequence import_text_keypoints(const std::string& path,
                                   const std::string& topology,
                                   std::int64_t joints, std::int64_t channels,
                                   double fps) {
  std::ifstream in(path);
  if (!in) throw IoError(format_msg("cannot open ", path));
  PoseSequence seq;
  seq.name = path;
  seq.topology = topology;
  seq.joints = joints;
  seq.channels = channels;
  seq.fps = fps;
  std::string line;
  std::int64_t line_no = 0;
  const std::int64_t per_frame = joints * channels;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;
    if (static_cast<std::int64_t>(vals.size()) != per_frame)
      throw IoError(format_msg(path, ":", line_no, ": expected ", per_frame,
                               " values per frame, got ", vals.size()));
    seq.data.insert(seq.data.end(), vals.begin(), vals.end());
  }
  seq.validate();
  return seq;
}

WindowedDataset make_windows(std::span<const PoseSequence> seq2d,
                             std::span<const PoseSequence> seq3d,
                             std::int64_t frames, std::int64_t stride) {
  if (seq2d.size() != seq3d.size())
    throw ValueError(format_msg("make_windows: ", seq2d.size(),
                                " input sequences vs ", seq3d.size(),
                                " target sequences"));
  if (frames < 1) throw ValueError("make_windows: frames must be >= 1");
  if (stride < 1) throw ValueError("make_windows: stride must be >= 1");
  WindowedDataset ds;
  ds.frames = frames;
  for (std::size_t s = 0; s < seq2d.size(); ++s) {
    const PoseSequence& in2d = seq2d[s];
    const PoseSequence& in3d = seq3d[s];
    if (in2d.channels != 2)
      throw ValueError(format_msg("sequence '", in2d.name,
                                  "': expected 2 input channels, got ",
                                  in2d.channels));
    if (in3d.channels != 3)
      throw ValueError(format_msg("sequence '", in3d.name,
                                  "': expected 3 target channels, got ",
                                  in3d.channels));
    if (in2d.frames() != in3d.frames() || in2d.joints != in3d.joints)
      throw ValueError(format_msg("sequence '", in2d.name,
                                  "': input/target shapes disagree"));
    const std::int64_t total = in2d.frames();
    if (total < frames) {
      ++ds.skipped_sequences;
      std::cerr << "[hdformer] warning: sequence '" << in2d.name << "' has "
                << total << " frames, shorter than a window of " << frames
                << "; skipped\n";
      continue;
    }
    const std::int64_t j = in2d.joints;
    for (std::int64_t off = 0; off + frames <= total; off += stride) {
      Window w;
      w.sequence = static_cast<std::int64_t>(s);
      w.offset = off;
      std::vector<double> x(static_cast<std::size_t>(frames * j * 2));
      std::vector<double> y(static_cast<std::size_t>(frames * j * 3));
      std::copy_n(in2d.data.begin() + off * j * 2, frames * j * 2, x.begin());
      std::copy_n(in3d.data.begin() + off * j * 3, frames * j * 3, y.begin());
      w.x2d = Tensor::from_data({frames, j, 2}, std::move(x));
      w.gt3d = Tensor::from_data({frames, j, 3}, std::move(y));
      ds.windows.push_back(std::move(w));
    }
  }
  return ds;
}

StitchMode stitch_from_string(const std::string& s) {
  if (s == "mean") return StitchMode::mean;
  if (s == "last") return StitchMode::last;
  throw ConfigError(format_msg("unknown stitch mode '", s, "'; expected mean|last"));
}

std::string to_string(StitchMode m) {
  return m == StitchMode::mean ? "mean" : "last";
}

PoseSequence sliding_window_infer(
    const std::function<Tensor(const Tensor&)>& forward,
    const PoseSequence& seq2d, std::int64_t frames, std::int64_t step,
    StitchMode stitch) {
  if (seq2d.channels != 2)
    throw ValueError(format_msg("sliding_window_infer: sequence '", seq2d.name,
                                "' has ", seq2d.channels,
                                " channels, expected 2"));
  if (step < 1) throw ValueError("sliding_window_infer: step must be >= 1");
  const std::int64_t total = seq2d.frames();
  if (total < frames)
    throw ValueError(format_msg(
        "sliding_window_infer: sequence has ", total,
        " frames but the model window is ", frames,
        "; pad the sequence or train a model with a shorter window"));

  std::vector<std::int64_t> offsets;
  for (std::int64_t off = 0; off + frames <= total; off += step)
    offsets.push_back(off);
  if (offsets.back() != total - frames) offsets.push_back(total - frames);

  const std::int64_t j = seq2d.joints;
  std::vector<double> acc(static_cast<std::size_t>(total * j * 3), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(total), 0.0);
  for (std::int64_t off : offsets) {
    std::vector<double> x(static_cast<std::size_t>(frames * j * 2));
    std::copy_n(seq2d.data.begin() + off * j * 2, frames * j * 2, x.begin());
    Tensor pred = forward(Tensor::from_data({1, frames, j, 2}, std::move(x)));
    if (pred.shape() != Shape{1, frames, j, 3})
      throw ShapeError(format_msg("window model returned ",
                                  shape_str(pred.shape()), ", expected ",
                                  shape_str({1, frames, j, 3})));
    const auto& p = pred.raw();
    for (std::int64_t f = 0; f < frames; ++f) {
      const std::int64_t dst = off + f;
      if (stitch == StitchMode::mean) {
        for (std::int64_t i = 0; i < j * 3; ++i)
          acc[static_cast<std::size_t>(dst * j * 3 + i)] +=
              p[static_cast<std::size_t>(f * j * 3 + i)];
        hits[static_cast<std::size_t>(dst)] += 1.0;
      } else {
        for (std::int64_t i = 0; i < j * 3; ++i)
          acc[static_cast<std::size_t>(dst * j * 3 + i)] =
              p[static_cast<std::size_t>(f * j * 3 + i)];
        hits[static_cast<std::size_t>(dst)] = 1.0;
      }
    }
  }
  for (std::int64_t f = 0; f < total; ++f)
    for (std::int64_t i = 0; i < j * 3; ++i)
      acc[static_cast<std::size_t>(f * j * 3 + i)] /=
          hits[static_cast<std::size_t>(f)];

  PoseSequence out;
  out.name = seq2d.name;
  out.topology = seq2d.topology;
  out.joints = j;
  out.channels = 3;
  out.fps = seq2d.fps;
  out.data = std::move(acc);
  return out;
}

PoseSequence Normalizer::normalize(const PoseSequence& seq,
                                   std::vector<double>* roots_out) const {
  seq.validate();
  if (root < 0 || root >= seq.joints)
    throw ValueError(format_msg("normalizer root ", root,
                                " out of range for ", seq.joints, " joints"));
  if (scale == 0.0) throw ValueError("normalizer scale must be nonzero");
  PoseSequence out = seq;
  const std::int64_t frames = seq.frames();
  if (roots_out)
    roots_out->assign(static_cast<std::size_t>(frames * seq.channels), 0.0);
  for (std::int64_t f = 0; f < frames; ++f) {
    for (std::int64_t c = 0; c < seq.channels; ++c) {
      const double r = seq.at(f, root, c);
      if (roots_out)
        (*roots_out)[static_cast<std::size_t>(f * seq.channels + c)] = r;
      for (std::int64_t j = 0; j < seq.joints; ++j)
        out.at(f, j, c) = (seq.at(f, j, c) - r) / scale;
    }
  }
  return out;
}

PoseSequence Normalizer::denormalize(const PoseSequence& seq,
                                     std::span<const double> roots) const {
  seq.validate();
  const std::int64_t frames = seq.frames();
  if (static_cast<std::int64_t>(roots.size()) != frames * seq.channels)
    throw ValueError(format_msg("denormalize: expected ", frames * seq.channels,
                                " root values, got ", roots.size()));
  PoseSequence out = seq;
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t c = 0; c < seq.channels; ++c) {
      const double r = roots[static_cast<std::size_t>(f * seq.channels + c)];
      for (std::int64_t j = 0; j < seq.joints; ++j)
        out.at(f, j, c) = seq.at(f, j, c) * scale + r;
    }
  return out;
}

double displacement_scale(const PoseSequence& seq3d, std::int64_t root) {
  seq3d.validate();
  if (seq3d.channels != 3)
    throw ValueError("displacement_scale expects a 3-channel sequence");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t f = 0; f < seq3d.frames(); ++f)
    for (std::int64_t j = 0; j < seq3d.joints; ++j) {
      if (j == root) continue;
      double d2 = 0.0;
      for (std::int64_t c = 0; c < 3; ++c) {
        const double d = seq3d.at(f, j, c) - seq3d.at(f, root, c);
        d2 += d * d;
      }
      acc += std::sqrt(d2);
      ++count;
    }
  return count ? acc / static_cast<double>(count) : 0.0;
}

std::pair<PoseSequence, PoseSequence> synth_generate(const SynthSpec& spec,
                                                     std::uint64_t seed) {
  SkeletonGraph graph = SkeletonGraph::build(builtin_topology(spec.topology));
  const std::int64_t n = graph.joint_count();
  const std::int64_t frames = spec.frames;
  if (frames < 1) throw ValueError("synth_generate: frames must be >= 1");

  std::mt19937_64 rng(seed);
  const int harmonics = std::max(1, spec.harmonics);

  struct Oscillator {
    double amp, omega, phase;
  };
  auto draw_osc = [&](double amp_scale) {
    Oscillator o;
    o.amp = amp_scale * uniform_range(rng, 0.2, 1.0);
    o.omega = uniform_range(rng, 0.1, 1.2);  // rad/s, low frequency
    o.phase = uniform_range(rng, 0.0, 6.283185307179586);
    return o;
  };
  auto mix = [](const std::vector<Oscillator>& os, double t) {
    double v = 0.0;
    for (const auto& o : os) v += o.amp * std::sin(o.omega * t + o.phase);
    return v;
  };

  // root trajectory: one mixture per axis
  std::vector<std::vector<Oscillator>> root_osc(3);
  for (auto& axis : root_osc)
    for (int h = 0; h < harmonics; ++h)
      axis.push_back(draw_osc(spec.root_amplitude / harmonics));

  // per joint: fixed bone length, slowly wandering spherical direction
  std::vector<double> bone_length(static_cast<std::size_t>(n), 0.0);
  std::vector<std::vector<Oscillator>> theta_osc(static_cast<std::size_t>(n));
  std::vector<std::vector<Oscillator>> phi_osc(static_cast<std::size_t>(n));
  std::vector<double> theta0(static_cast<std::size_t>(n), 0.0);
  std::vector<double> phi0(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t j = 0; j < n; ++j) {
    if (j == graph.root()) continue;
    bone_length[static_cast<std::size_t>(j)] =
        uniform_range(rng, spec.bone_min, spec.bone_max);
    theta0[static_cast<std::size_t>(j)] = uniform_range(rng, 0.3, 2.8);
    phi0[static_cast<std::size_t>(j)] = uniform_range(rng, 0.0, 6.28);
    for (int h = 0; h < harmonics; ++h) {
      theta_osc[static_cast<std::size_t>(j)].push_back(draw_osc(0.5 / harmonics));
      phi_osc[static_cast<std::size_t>(j)].push_back(draw_osc(0.8 / harmonics));
    }
  }

  // topological order so parents are computed first
  std::vector<std::int64_t> topo;
  {
    std::vector<std::int64_t> stack = {graph.root()};
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      topo.push_back(v);
      for (std::int64_t c : graph.children(v)) stack.push_back(c);
    }
  }

  PoseSequence p3;
  p3.topology = graph.name();
  p3.joints = n;
  p3.channels = 3;
  p3.fps = spec.fps;
  p3.data.assign(static_cast<std::size_t>(frames * n * 3), 0.0);

  for (std::int64_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / spec.fps;
    for (std::int64_t v : topo) {
      if (v == graph.root()) {
        for (std::int64_t c = 0; c < 3; ++c)
          p3.at(f, v, c) = mix(root_osc[static_cast<std::size_t>(c)], t);
        continue;
      }
      const std::int64_t parent = graph.parent(v);
      const double theta =
          theta0[static_cast<std::size_t>(v)] +
          mix(theta_osc[static_cast<std::size_t>(v)], t);
      const double phi = phi0[static_cast<std::size_t>(v)] +
                         mix(phi_osc[static_cast<std::size_t>(v)], t);
      const double dir[3] = {std::sin(theta) * std::cos(phi),
                             std::sin(theta) * std::sin(phi), std::cos(theta)};
      const double len = bone_length[static_cast<std::size_t>(v)];
      for (std::int64_t c = 0; c < 3; ++c)
        p3.at(f, v, c) = p3.at(f, parent, c) + len * dir[c];
    }
  }

  PoseSequence p2;
  p2.topology = p3.topology;
  p2.joints = n;
  p2.channels = 2;
  p2.fps = spec.fps;
  p2.data.assign(static_cast<std::size_t>(frames * n * 2), 0.0);
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t c = 0; c < 2; ++c) p2.at(f, j, c) = p3.at(f, j, c);
  if (spec.noise2d > 0.0) {
    // Box-Muller keeps the draw sequence portable across standard libraries.
    auto gauss = [&rng]() {
      const double u1 = std::max(uniform_unit(rng), 1e-300);
      const double u2 = uniform_unit(rng);
      return std::sqrt(-2.0 * std::log(u1)) *
             std::cos(6.283185307179586 * u2);
    };
    for (auto& v : p2.data) v += spec.noise2d * gauss();
  }
  return {std::move(p2), std::move(p3)};
}

}  // namespace hdf
