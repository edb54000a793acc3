#include "hdformer/skeleton.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace hdf {

SkeletonGraph SkeletonGraph::build(const TopologySpec& spec) {
  const std::int64_t n = spec.joint_count;
  if (n <= 0)
    throw ConfigError(format_msg("topology '", spec.name,
                                 "': joint count must be positive, got ", n));
  if (spec.root < 0 || spec.root >= n)
    throw ConfigError(format_msg("topology '", spec.name, "': root ", spec.root,
                                 " out of range for ", n, " joints"));

  SkeletonGraph g;
  g.name_ = spec.name;
  g.joint_count_ = n;
  g.root_ = spec.root;
  g.edges_ = spec.edges;
  g.adjacency_.assign(static_cast<std::size_t>(n * n), 0.0);
  g.parent_.assign(static_cast<std::size_t>(n), -1);
  g.children_.assign(static_cast<std::size_t>(n), {});

  for (const auto& [p, c] : spec.edges) {
    if (p < 0 || p >= n || c < 0 || c >= n)
      throw ConfigError(format_msg("topology '", spec.name, "': edge (", p, ",",
                                   c, ") out of range for ", n, " joints"));
    if (c == spec.root)
      throw ConfigError(format_msg("topology '", spec.name, "': root joint ", c,
                                   " has a parent"));
    if (g.parent_[static_cast<std::size_t>(c)] != -1)
      throw ConfigError(format_msg("topology '", spec.name, "': joint ", c,
                                   " has multiple parents"));
    if (p == c)
      throw ConfigError(
          format_msg("topology '", spec.name, "': self-loop on joint ", p));
    g.parent_[static_cast<std::size_t>(c)] = p;
    g.children_[static_cast<std::size_t>(p)].push_back(c);
    g.adjacency_[static_cast<std::size_t>(p * n + c)] = 1.0;
  }
  for (auto& ch : g.children_) std::sort(ch.begin(), ch.end());

  // Reachability from the root separates orphans from cycles.
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<std::int64_t> stack = {spec.root};
  seen[static_cast<std::size_t>(spec.root)] = true;
  while (!stack.empty()) {
    const std::int64_t v = stack.back();
    stack.pop_back();
    for (std::int64_t c : g.children_[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = true;
        stack.push_back(c);
      }
    }
  }
  for (std::int64_t j = 0; j < n; ++j) {
    if (seen[static_cast<std::size_t>(j)]) continue;
    if (g.parent_[static_cast<std::size_t>(j)] == -1)
      throw ConfigError(format_msg("topology '", spec.name, "': joint ", j,
                                   " is an orphan (no path from root)"));
    throw ConfigError(format_msg("topology '", spec.name, "': joint ", j,
                                 " lies on a cycle"));
  }

  if (!spec.joint_names.empty()) {
    if (static_cast<std::int64_t>(spec.joint_names.size()) != n)
      throw ConfigError(format_msg("topology '", spec.name, "': expected ", n,
                                   " joint names, got ",
                                   spec.joint_names.size()));
    g.joint_names_ = spec.joint_names;
  }
  return g;
}

std::int64_t SkeletonGraph::parent(std::int64_t joint) const {
  return parent_.at(static_cast<std::size_t>(joint));
}

const std::vector<std::int64_t>& SkeletonGraph::children(
    std::int64_t joint) const {
  return children_.at(static_cast<std::size_t>(joint));
}

const std::string& SkeletonGraph::joint_name(std::int64_t joint) const {
  static const std::string empty;
  if (joint_names_.empty()) return empty;
  return joint_names_.at(static_cast<std::size_t>(joint));
}

bool SkeletonGraph::is_ancestor(std::int64_t a, std::int64_t d) const {
  if (a == d) return false;
  std::int64_t v = d;
  while (v != -1) {
    v = parent_[static_cast<std::size_t>(v)];
    if (v == a) return true;
  }
  return false;
}

TopologySpec SkeletonGraph::to_spec() const {
  TopologySpec spec;
  spec.name = name_;
  spec.joint_count = joint_count_;
  spec.root = root_;
  spec.edges = edges_;
  spec.joint_names = joint_names_;
  return spec;
}

std::int64_t HyperboneIndex::count_of_order(std::int64_t order) const {
  std::int64_t c = 0;
  for (const auto& hb : flat)
    if (hb.order() == order) ++c;
  return c;
}

Hyperbone shortest_path(const SkeletonGraph& g, std::int64_t i,
                        std::int64_t j) {
  if (i < 0 || i >= g.joint_count() || j < 0 || j >= g.joint_count())
    throw ValueError(format_msg("shortest_path: joint out of range (", i, ",",
                                j, ") for ", g.joint_count(), " joints"));
  if (i == j)
    throw ValueError(
        format_msg("shortest_path: degenerate path (", i, ",", i,
                   "); a hyperbone needs at least two distinct joints"));
  std::vector<std::int64_t> reversed = {j};
  std::int64_t v = j;
  while (v != i) {
    v = g.parent(v);
    if (v == -1)
      throw ValueError(format_msg("shortest_path: no directed path from ", i,
                                  " to ", j,
                                  " (edges point away from the root)"));
    reversed.push_back(v);
  }
  Hyperbone hb;
  hb.path.assign(reversed.rbegin(), reversed.rend());
  return hb;
}

namespace {

void extend_paths(const SkeletonGraph& g, std::vector<std::int64_t>& path,
                  std::int64_t max_order, std::vector<Hyperbone>& out) {
  if (path.size() >= 2) out.push_back(Hyperbone{path});
  if (static_cast<std::int64_t>(path.size()) == max_order) return;
  for (std::int64_t c : g.children(path.back())) {
    path.push_back(c);
    extend_paths(g, path, max_order, out);
    path.pop_back();
  }
}

}  // namespace

HyperboneIndex enumerate_hyperbones(const SkeletonGraph& g,
                                    std::int64_t max_order) {
  if (max_order < 2)
    throw ConfigError(format_msg(
        "enumerate_hyperbones: max order must be >= 2, got ", max_order));
  HyperboneIndex index;
  index.max_order = max_order;
  for (std::int64_t s = 0; s < g.joint_count(); ++s) {
    std::vector<std::int64_t> path = {s};
    extend_paths(g, path, max_order, index.flat);
  }
  std::sort(index.flat.begin(), index.flat.end(),
            [](const Hyperbone& a, const Hyperbone& b) {
              if (a.order() != b.order()) return a.order() < b.order();
              if (a.start() != b.start()) return a.start() < b.start();
              return a.end() < b.end();
            });
  return index;
}

std::int64_t order_cap_in_joints(std::int64_t cap, OrderConvention convention) {
  return convention == OrderConvention::spd_edges ? cap + 1 : cap;
}

namespace {

// Human3.6M-style 17-joint tree rooted at the hip. Chains: right leg (1-3),
// left leg (4-6), spine/thorax (7-8), neck/head (9-10), left arm (11-13),
// right arm (14-16).
TopologySpec h36m_17() {
  TopologySpec spec;
  spec.name = "h36m_17";
  spec.joint_count = 17;
  spec.root = 0;
  spec.edges = {{0, 1},   {1, 2},  {2, 3},   {0, 4},   {4, 5},   {5, 6},
                {0, 7},   {7, 8},  {8, 9},   {9, 10},  {8, 11},  {11, 12},
                {12, 13}, {8, 14}, {14, 15}, {15, 16}};
  spec.joint_names = {"hip",       "r_hip",   "r_knee",     "r_foot",
                      "l_hip",     "l_knee",  "l_foot",     "spine",
                      "thorax",    "neck",    "head",       "l_shoulder",
                      "l_elbow",   "l_wrist", "r_shoulder", "r_elbow",
                      "r_wrist"};
  return spec;
}

// MPI-INF-3DHP-style 17-joint tree rooted at the pelvis.
TopologySpec mpi3dhp_17() {
  TopologySpec spec;
  spec.name = "mpi3dhp_17";
  spec.joint_count = 17;
  spec.root = 14;
  spec.edges = {{14, 8},  {8, 9},  {9, 10}, {14, 11}, {11, 12}, {12, 13},
                {14, 15}, {15, 1}, {1, 16}, {16, 0},  {1, 2},   {2, 3},
                {3, 4},   {1, 5},  {5, 6},  {6, 7}};
  spec.joint_names = {"head_top", "neck",       "r_shoulder", "r_elbow",
                      "r_wrist",  "l_shoulder", "l_elbow",    "l_wrist",
                      "r_hip",    "r_knee",     "r_ankle",    "l_hip",
                      "l_knee",   "l_ankle",    "pelvis",     "spine",
                      "head"};
  return spec;
}

TopologySpec chain(std::int64_t n) {
  TopologySpec spec;
  spec.name = format_msg("chain", n);
  spec.joint_count = n;
  spec.root = 0;
  for (std::int64_t i = 0; i + 1 < n; ++i) spec.edges.emplace_back(i, i + 1);
  return spec;
}

}  // namespace

TopologySpec builtin_topology(const std::string& name) {
  if (name == "h36m_17") return h36m_17();
  if (name == "mpi3dhp_17") return mpi3dhp_17();
  if (name.rfind("chain", 0) == 0) {
    const std::string num = name.substr(5);
    if (!num.empty() && std::all_of(num.begin(), num.end(), [](unsigned char c) {
          return std::isdigit(c);
        })) {
      const std::int64_t n = std::stoll(num);
      if (n >= 2) return chain(n);
    }
  }
  throw ConfigError(
      format_msg("unknown topology '", name,
                 "'; built-ins are h36m_17, mpi3dhp_17, and chainN (N >= 2)"));
}

TopologySpec parse_topology_text(std::istream& in, const std::string& source) {
  TopologySpec spec;
  spec.name = source;
  bool have_joints = false, have_root = false;
  std::string line;
  std::int64_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw IoError(format_msg(source, ":", line_no, ": ", what));
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "joints:") {
      if (!(ls >> spec.joint_count)) fail("expected a joint count");
      have_joints = true;
    } else if (key == "root:") {
      if (!(ls >> spec.root)) fail("expected a root joint index");
      have_root = true;
    } else if (key == "edge:") {
      std::int64_t p = 0, c = 0;
      if (!(ls >> p >> c)) fail("expected 'edge: parent child'");
      spec.edges.emplace_back(p, c);
    } else {
      fail(format_msg("unknown directive '", key, "'"));
    }
    std::string extra;
    if (ls >> extra) fail(format_msg("trailing tokens after '", key, "'"));
  }
  if (!have_joints)
    throw IoError(format_msg(source, ": missing 'joints:' line"));
  if (!have_root) throw IoError(format_msg(source, ": missing 'root:' line"));
  return spec;
}

TopologySpec load_topology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(format_msg("cannot open topology file ", path));
  return parse_topology_text(in, path);
}

std::string topology_to_text(const TopologySpec& spec) {
  std::ostringstream os;
  os << "joints: " << spec.joint_count << "\n";
  os << "root: " << spec.root << "\n";
  for (const auto& [p, c] : spec.edges) os << "edge: " << p << ' ' << c << "\n";
  return os.str();
}

}  // namespace hdf
