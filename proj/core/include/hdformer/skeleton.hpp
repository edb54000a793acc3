#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hdformer/common.hpp"

namespace hdf {

/// Raw topology description as read from a file or a built-in table.
struct TopologySpec {
  std::string name;
  std::int64_t joint_count = 0;
  std::int64_t root = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;  // parent -> child
  std::vector<std::string> joint_names;                      // optional
};

/// Directed path of joints following edge direction; `order` = joint count.
struct Hyperbone {
  std::vector<std::int64_t> path;

  std::int64_t order() const { return static_cast<std::int64_t>(path.size()); }
  std::int64_t start() const { return path.front(); }
  std::int64_t end() const { return path.back(); }

  bool operator==(const Hyperbone&) const = default;
};

/// Validated tree of joints directed away from the root. Immutable.
class SkeletonGraph {
 public:
  static SkeletonGraph build(const TopologySpec& spec);

  std::int64_t joint_count() const { return joint_count_; }
  std::int64_t root() const { return root_; }
  const std::string& name() const { return name_; }
  const std::vector<std::pair<std::int64_t, std::int64_t>>& edges() const {
    return edges_;
  }
  /// N*N row-major; entry [i*N+j] is 1 iff (i,j) is a directed edge.
  const std::vector<double>& adjacency() const { return adjacency_; }
  /// -1 for the root.
  std::int64_t parent(std::int64_t joint) const;
  const std::vector<std::int64_t>& children(std::int64_t joint) const;
  const std::string& joint_name(std::int64_t joint) const;
  bool is_ancestor(std::int64_t a, std::int64_t d) const;
  TopologySpec to_spec() const;

 private:
  SkeletonGraph() = default;
  std::string name_;
  std::int64_t joint_count_ = 0;
  std::int64_t root_ = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges_;
  std::vector<double> adjacency_;
  std::vector<std::int64_t> parent_;
  std::vector<std::vector<std::int64_t>> children_;
  std::vector<std::string> joint_names_;
};

/// All hyperbones up to a maximum order, in the canonical flat ordering:
/// orders ascending, then (start, end) lexicographic within an order.
struct HyperboneIndex {
  std::vector<Hyperbone> flat;
  std::int64_t max_order = 0;

  std::int64_t total() const { return static_cast<std::int64_t>(flat.size()); }
  std::int64_t count_of_order(std::int64_t order) const;
};

/// The unique directed path from ancestor i to descendant j.
/// Throws ValueError when i == j (order >= 2 required) or when j is not a
/// descendant of i (edges point away from the root, so there is no path).
Hyperbone shortest_path(const SkeletonGraph& g, std::int64_t i, std::int64_t j);

/// Every directed path with order (joint count) in [2, max_order].
HyperboneIndex enumerate_hyperbones(const SkeletonGraph& g,
                                    std::int64_t max_order);

/// Order-cap conventions: `order_joints` counts joints on the path,
/// `spd_edges` counts edges (joints - 1).
enum class OrderConvention { order_joints, spd_edges };
std::int64_t order_cap_in_joints(std::int64_t cap, OrderConvention convention);

// Topology sources ----------------------------------------------------------

/// Built-in trees: "h36m_17", "mpi3dhp_17", or "chainN" for an N-joint chain.
TopologySpec builtin_topology(const std::string& name);

/// Plain-text format: `joints: N`, `root: r`, and one `edge: parent child`
/// line per edge. `#` starts a comment. Parse errors report line numbers.
TopologySpec parse_topology_text(std::istream& in, const std::string& source);
TopologySpec load_topology_file(const std::string& path);
std::string topology_to_text(const TopologySpec& spec);

}  // namespace hdf
