#include "hdformer/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hdformer/attention.hpp"
#include "hdformer/network.hpp"

namespace fs = std::filesystem;

namespace hdf::cli {

namespace {

struct LoadedPairs {
  std::vector<PoseSequence> in2d;
  std::vector<PoseSequence> gt3d;
};

LoadedPairs load_pairs(const std::string& dir) {
  LoadedPairs out;
  for (const auto& [p2, p3] : find_sequence_pairs(dir)) {
    out.in2d.push_back(load_pose_sequence(p2));
    out.gt3d.push_back(load_pose_sequence(p3));
  }
  return out;
}

double resolve_scale(const DataConfig& data,
                     std::span<const PoseSequence> gt3d, std::int64_t root) {
  if (data.scale > 0.0) return data.scale;
  double acc = 0.0;
  for (const auto& seq : gt3d) acc += displacement_scale(seq, root);
  if (gt3d.empty() || acc == 0.0)
    throw ConfigError("cannot resolve data.scale=auto without 3D sequences");
  return acc / static_cast<double>(gt3d.size());
}

WindowedDataset build_windows(const LoadedPairs& pairs, const Normalizer& norm,
                              std::int64_t frames, std::int64_t stride) {
  std::vector<PoseSequence> n2d, n3d;
  n2d.reserve(pairs.in2d.size());
  n3d.reserve(pairs.gt3d.size());
  for (const auto& s : pairs.in2d) n2d.push_back(norm.normalize(s));
  for (const auto& s : pairs.gt3d) n3d.push_back(norm.normalize(s));
  return make_windows(n2d, n3d, frames, stride);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> find_sequence_pairs(
    const std::string& dir) {
  if (!fs::is_directory(dir))
    throw IoError(format_msg("'", dir, "' is not a directory"));
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".2d.hdfpose";
    if (name.size() <= suffix.size() ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const std::string stem = name.substr(0, name.size() - suffix.size());
    const fs::path sibling = entry.path().parent_path() / (stem + ".3d.hdfpose");
    if (!fs::exists(sibling))
      throw IoError(format_msg("input '", entry.path().string(),
                               "' has no matching 3D file '",
                               sibling.string(), "'"));
    pairs.emplace_back(entry.path().string(), sibling.string());
  }
  std::sort(pairs.begin(), pairs.end());
  if (pairs.empty())
    throw IoError(format_msg("no *.2d.hdfpose sequences found in ", dir));
  return pairs;
}

std::string action_of(const std::string& path) {
  std::string stem = fs::path(path).filename().string();
  const auto dot = stem.find('.');
  if (dot != std::string::npos) stem.erase(dot);
  const auto us = stem.find_last_of('_');
  if (us != std::string::npos && us + 1 < stem.size()) {
    bool digits = true;
    for (std::size_t i = us + 1; i < stem.size(); ++i)
      digits = digits && std::isdigit(static_cast<unsigned char>(stem[i]));
    if (digits) stem.erase(us);
  }
  return stem;
}

int cmd_train(const std::optional<std::string>& config_path,
              const std::vector<std::string>& overrides) {
  try {
    RunConfig rc = load_run_config(config_path, overrides);
    SkeletonGraph graph = SkeletonGraph::build(resolve_topology(rc.model.topology));

    if (rc.data.train_dir.empty())
      throw ConfigError("data.train_dir is required for training");
    LoadedPairs train_pairs = load_pairs(rc.data.train_dir);
    const double scale =
        resolve_scale(rc.data, train_pairs.gt3d, graph.root());
    rc.data.scale = scale;  // echoed into the resolved dump
    Normalizer norm{graph.root(), scale};

    const std::int64_t stride = rc.data.window_stride > 0
                                    ? rc.data.window_stride
                                    : std::max<std::int64_t>(1, rc.model.frames / 2);
    WindowedDataset train_set =
        build_windows(train_pairs, norm, rc.model.frames, stride);

    std::optional<WindowedDataset> val_set;
    if (!rc.data.val_dir.empty()) {
      LoadedPairs val_pairs = load_pairs(rc.data.val_dir);
      val_set = build_windows(val_pairs, norm, rc.model.frames, stride);
    }

    fs::create_directories(rc.out_dir);
    {
      std::ofstream cfg_out(rc.out_dir + "/resolved_config.json");
      cfg_out << run_config_to_json(rc);
    }

    HDFormer model(rc.model, graph);
    model.norm_scale = scale;
    std::cerr << "[hdformer] model '" << rc.model.topology << "' with "
              << model.parameter_count() << " parameters, "
              << train_set.windows.size() << " training windows\n";

    TrainOptions opts;
    opts.optimizer = rc.optimizer;
    opts.loss = rc.loss;
    opts.out_dir = rc.out_dir;
    opts.seed = rc.seed;
    opts.verbose = true;
    TrainReport report =
        train(model, train_set, val_set ? &*val_set : nullptr, opts);
    std::cout << "trained " << report.steps << " steps over "
              << report.epochs.size() << " epochs; best val mpjpe "
              << report.best_val_mpjpe << " (epoch " << report.best_epoch
              << ")\n";
    std::cout << "checkpoints: " << report.best_checkpoint << ", "
              << report.last_checkpoint << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return 1;
  }
}

namespace {

// Root-relative ground truth in millimeters, matching denormalized output.
Tensor root_relative_mm(const PoseSequence& gt, std::int64_t root) {
  PoseSequence centered = Normalizer{root, 1.0}.normalize(gt);
  return centered.tensor();
}

}  // namespace

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& protocol) {
  try {
    if (protocol != "mpjpe" && protocol != "p-mpjpe" && protocol != "pck-auc") {
      std::cerr << "eval: unknown protocol '" << protocol
                << "'; valid protocols are: mpjpe, p-mpjpe, pck-auc\n";
      return 2;
    }
    auto model = load_model(checkpoint);
    const SkeletonGraph& graph = model->skeleton();
    Normalizer norm{graph.root(), model->norm_scale};
    const std::int64_t frames = model->config().frames;

    std::vector<EvalSample> samples;
    for (const auto& [p2, p3] : find_sequence_pairs(data_dir)) {
      PoseSequence in2d = load_pose_sequence(p2);
      PoseSequence gt3d = load_pose_sequence(p3);
      PoseSequence normed = norm.normalize(in2d);
      PoseSequence pred_norm = sliding_window_infer(
          [&](const Tensor& x) { return model->predict(x); }, normed, frames);
      Tensor pred_mm = scale(pred_norm.tensor(), model->norm_scale);
      samples.push_back({pred_mm, root_relative_mm(gt3d, graph.root()),
                         action_of(p2)});
    }
    EvalReport report = evaluate(samples);
    std::cout << "protocol: " << protocol << "\n";
    auto print_rows = [&](auto&& pick, const std::string& header) {
      std::cout << header << "\n";
      char buf[128];
      for (const auto& [name, am] : report.per_action) {
        std::snprintf(buf, sizeof buf, "  %-18s %s\n", name.c_str(),
                      pick(am).c_str());
        std::cout << buf;
      }
      std::snprintf(buf, sizeof buf, "  %-18s %s\n", "overall",
                    pick(report.overall).c_str());
      std::cout << buf;
    };
    auto fmt = [](double v) {
      char b[40];
      std::snprintf(b, sizeof b, "%.3f", v);
      return std::string(b);
    };
    if (protocol == "mpjpe") {
      print_rows([&](const ActionMetrics& am) { return fmt(am.mpjpe); },
                 "mpjpe (mm):");
    } else if (protocol == "p-mpjpe") {
      print_rows(
          [&](const ActionMetrics& am) {
            return fmt(am.mpjpe) + " / " + fmt(am.p_mpjpe);
          },
          "mpjpe / p-mpjpe (mm):");
    } else {
      print_rows(
          [&](const ActionMetrics& am) {
            return fmt(am.pck) + " / " + fmt(am.auc);
          },
          "pck@150mm / auc:");
    }
    std::cout << report.to_json();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return 1;
  }
}

int cmd_infer(const std::string& checkpoint, const std::string& input_path,
              const std::string& output_path, std::optional<std::int64_t> step,
              std::optional<std::string> stitch) {
  try {
    auto model = load_model(checkpoint);
    const SkeletonGraph& graph = model->skeleton();
    PoseSequence in2d = load_pose_sequence(input_path);
    if (in2d.channels != 2)
      throw ValueError(format_msg("input '", input_path, "' has ",
                                  in2d.channels,
                                  " channels; inference needs 2D input"));
    Normalizer norm{graph.root(), model->norm_scale};
    PoseSequence normed = norm.normalize(in2d);
    PoseSequence pred = sliding_window_infer(
        [&](const Tensor& x) { return model->predict(x); }, normed,
        model->config().frames, step.value_or(5),
        stitch ? stitch_from_string(*stitch) : StitchMode::mean);
    // back to millimeters; coordinates stay root-relative
    for (auto& v : pred.data) v *= model->norm_scale;
    pred.name = fs::path(output_path).stem().string();
    save_pose_sequence(output_path, pred);
    std::cout << "wrote " << pred.frames() << " frames to " << output_path
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "infer: " << e.what() << "\n";
    return 1;
  }
}

int cmd_attn(const std::string& checkpoint, const std::string& input_path,
             const std::string& out_dir) {
  try {
    auto model = load_model(checkpoint);
    const SkeletonGraph& graph = model->skeleton();
    PoseSequence in2d = load_pose_sequence(input_path);
    if (in2d.channels != 2)
      throw ValueError("attention dumps need a 2D input sequence");
    Normalizer norm{graph.root(), model->norm_scale};
    PoseSequence normed = norm.normalize(in2d);
    const std::int64_t frames = model->config().frames;
    if (normed.frames() < frames)
      throw ValueError(format_msg("input has ", normed.frames(),
                                  " frames, model window is ", frames));
    std::vector<double> window(
        normed.data.begin(),
        normed.data.begin() + frames * normed.joints * 2);
    Tensor x = Tensor::from_data({1, frames, normed.joints, 2},
                                 std::move(window));

    AttentionRecorder recorder;
    RunContext ctx;
    ctx.recorder = &recorder;
    model->forward(x, ctx);
    model->clear_tape();

    fs::create_directories(out_dir);
    const HyperboneIndex* legend =
        model->has_hyperbones() ? &model->hyperbones() : nullptr;
    int idx = 0;
    for (const auto& rec : model->dump_attention()) {
      const std::string file = format_msg(out_dir, "/attn_", idx++, "_",
                                          rec.block, ".txt");
      write_attention_dump(file, rec,
                           rec.kind == "high_order" ? legend : nullptr);
    }
    if (legend) {
      std::ofstream leg(out_dir + "/hyperbone_legend.txt");
      for (std::int64_t i = 0; i < legend->total(); ++i) {
        leg << i << ":";
        for (std::int64_t j : legend->flat[static_cast<std::size_t>(i)].path) {
          leg << ' ' << j;
          if (!graph.joint_name(j).empty()) leg << '(' << graph.joint_name(j) << ')';
        }
        leg << "\n";
      }
    }
    std::cout << "wrote " << recorder.records().size()
              << " attention dumps to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "attn: " << e.what() << "\n";
    return 1;
  }
}

int cmd_synth(const std::string& topology, std::int64_t count,
              std::int64_t frames, std::uint64_t seed, double noise,
              const std::string& out_dir) {
  try {
    if (count < 1) throw ConfigError("synth: count must be >= 1");
    fs::create_directories(out_dir);
    SynthSpec spec;
    spec.topology = topology;
    spec.frames = frames;
    spec.noise2d = noise;
    for (std::int64_t i = 0; i < count; ++i) {
      auto [p2, p3] = synth_generate(spec, split_seed(seed, static_cast<std::uint64_t>(i)));
      char stem[32];
      std::snprintf(stem, sizeof stem, "seq_%03lld", static_cast<long long>(i));
      p2.name = stem;
      p3.name = stem;
      save_pose_sequence(format_msg(out_dir, "/", stem, ".2d.hdfpose"), p2);
      save_pose_sequence(format_msg(out_dir, "/", stem, ".3d.hdfpose"), p3);
    }
    std::cout << "wrote " << count << " sequence pairs to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "synth: " << e.what() << "\n";
    return 1;
  }
}

int cmd_import(const std::string& input_path, const std::string& output_path,
               const std::string& topology, std::int64_t channels, double fps) {
  try {
    SkeletonGraph g = SkeletonGraph::build(resolve_topology(topology));
    PoseSequence seq = import_text_keypoints(input_path, g.name(),
                                             g.joint_count(), channels, fps);
    seq.name = fs::path(output_path).stem().string();
    save_pose_sequence(output_path, seq);
    std::cout << "imported " << seq.frames() << " frames to " << output_path
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "import: " << e.what() << "\n";
    return 1;
  }
}

int cmd_validate(const std::string& path) {
  try {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError(format_msg("cannot open ", path));
    std::string magic;
    probe >> magic;
    probe.close();
    if (magic == "HDFPOSE") {
      PoseSequence seq = load_pose_sequence(path);
      // cross-check the joint count when the declared topology is known
      try {
        SkeletonGraph g = SkeletonGraph::build(resolve_topology(seq.topology));
        if (g.joint_count() != seq.joints)
          throw ValueError(format_msg("sequence declares topology '",
                                      seq.topology, "' (", g.joint_count(),
                                      " joints) but carries ", seq.joints,
                                      " joints"));
      } catch (const ConfigError&) {
        // unknown topology name: nothing to check against
      }
      std::cout << "pose sequence: " << seq.frames() << " frames, "
                << seq.joints << " joints, " << seq.channels
                << " channels, topology " << seq.topology << "\n";
    } else if (magic == "HDFCKPT") {
      auto model = load_model(path);
      std::cout << "checkpoint: " << model->parameter_count()
                << " parameters, step " << model->step << ", topology "
                << model->config().topology << "\n";
    } else {
      SkeletonGraph g = SkeletonGraph::build(load_topology_file(path));
      std::cout << "topology: " << g.joint_count() << " joints, "
                << g.edges().size() << " edges, root " << g.root() << "\n";
    }
    std::cout << "ok\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "validate: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hdf::cli
