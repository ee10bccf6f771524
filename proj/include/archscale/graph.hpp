#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace archscale {

using VertexId = int;

/// Operation carried by an edge of the computational graph.
enum class OpKind {
  WeightedReLU,  ///< W * relu(patch(z))
  WeightedGELU,  ///< W * gelu(patch(z))
  Identity,      ///< z, unchanged
  Zero,          ///< disabled edge; removed by prune_zero_edges
  AvgPool,       ///< zero-padded stride-1 window mean of z
};

enum class Activation { ReLU, GELU };

bool is_weighted(OpKind kind) noexcept;
std::string_view to_string(OpKind kind) noexcept;
std::string_view to_string(Activation act) noexcept;
Activation parse_activation(std::string_view name);

/// Window of every average-pool edge. The only pooling operator in the
/// supported search spaces is avg_pool_3x3.
inline constexpr int kAvgPoolWindow = 3;

struct EdgeOp {
  OpKind kind = OpKind::WeightedReLU;
  int kernel = 1;  ///< odd; always 1 for dense, identity and zero edges

  friend bool operator==(const EdgeOp&, const EdgeOp&) = default;
};

struct Edge {
  VertexId src = 0;
  VertexId dst = 0;
  EdgeOp op;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed acyclic computational graph on vertices [0, L+1]: vertex 0 is
/// the network input, L+1 the output, the rest hidden pre-activations.
///
/// A Dag is an immutable value. Construction does not validate; use
/// validate() to list invariant violations. Edges are stored in canonical
/// (src, dst) lexicographic order, so two Dags with the same edge set
/// compare equal regardless of insertion order.
class Dag {
 public:
  Dag() = default;
  Dag(int num_hidden, std::vector<Edge> edges);

  int num_hidden() const noexcept { return num_hidden_; }
  VertexId input() const noexcept { return 0; }
  VertexId output() const noexcept { return num_hidden_ + 1; }
  int num_vertices() const noexcept { return num_hidden_ + 2; }
  bool has_vertex(VertexId v) const noexcept { return v >= 0 && v <= output(); }
  bool is_hidden(VertexId v) const noexcept { return v >= 1 && v <= num_hidden_; }

  std::span<const Edge> edges() const noexcept { return edges_; }
  std::vector<Edge> in_edges(VertexId v) const;
  std::vector<Edge> out_edges(VertexId v) const;
  /// nullptr when absent.
  const Edge* find_edge(VertexId src, VertexId dst) const noexcept;

  friend bool operator==(const Dag&, const Dag&) = default;

 private:
  int num_hidden_ = 0;
  std::vector<Edge> edges_;
};

enum class ViolationKind {
  VertexOutOfRange,
  BackwardEdge,
  DuplicateEdge,
  BadKernel,
  NoInputOutputPath,
};

struct Violation {
  ViolationKind kind;
  VertexId src = -1;  ///< offending edge, or -1 for graph-level violations
  VertexId dst = -1;
  std::string message;
};

/// Every invariant violation of the Dag; empty iff the Dag is valid.
std::vector<Violation> validate(const Dag& dag);

/// Removes Zero edges, then every hidden vertex that is not both reachable
/// from the input and able to reach the output (with its incident edges).
/// Vertex ids are kept; removed vertices simply have no edges.
/// Throws PrunedToDisconnected when no input->output path remains.
Dag prune_zero_edges(const Dag& dag);

/// Number of incoming edges of v. Throws UnknownVertex when v is out of range.
int in_degree(const Dag& dag, VertexId v);

/// Active vertices (input, output, and every hidden vertex with at least one
/// incident edge) in increasing id order, which is a topological order
/// because every edge has src < dst.
std::vector<VertexId> topo_order(const Dag& dag);

/// Largest kernel over weighted edges, 1 for graphs without weighted edges.
int max_weighted_kernel(const Dag& dag);

/// Copy of dag with every weighted edge set to kernel q.
Dag with_uniform_kernel(const Dag& dag, int q);

/// Copy of dag with every weighted edge using the given nonlinearity.
Dag with_activation(const Dag& dag, Activation act);

/// Sequential network: 0 -> 1 -> ... -> L+1, every edge carrying op.
Dag make_chain(int num_hidden, EdgeOp op = {});

/// Every forward pair (i, j), i < j, connected by op.
Dag make_complete(int num_hidden, EdgeOp op = {});

// ---------------------------------------------------------------------------
// Path statistics

/// Exact path counts; dense DAGs overflow 64 bits quickly.
using PathCount = unsigned __int128;

std::string to_string(PathCount value);

/// DAG width and the multiset of path depths, stored as a histogram
/// (depth_histogram[d] = number of input->output paths of depth d).
///
/// The depth of a path is the number of weighted edges on it whose
/// destination is a hidden vertex, so a sequential network with L hidden
/// layers has a single path of depth L.
struct PathStats {
  PathCount width = 0;
  std::vector<PathCount> depth_histogram;
  PathCount depth_cubed_sum = 0;

  /// Depths in ascending order, one per path. Throws PathExplosion when
  /// width exceeds max_paths.
  std::vector<int> depths(std::uint64_t max_paths = 1'000'000) const;

  friend bool operator==(const PathStats&, const PathStats&) = default;
};

struct PathOptions {
  std::uint64_t max_explicit_paths = 1'000'000;
  bool dp_only = false;
};

/// Path statistics by dynamic programming over the topological order,
/// cross-checked against explicit DFS enumeration unless opts.dp_only.
/// Zero edges never carry paths. Throws PathExplosion when the width
/// exceeds opts.max_explicit_paths outside DP-only mode, or overflows 128
/// bits.
PathStats enumerate_paths(const Dag& dag, const PathOptions& opts = {});

/// Histogram DP only.
PathStats count_paths_dp(const Dag& dag);

/// Explicit DFS over every path; throws PathExplosion beyond max_paths.
PathStats enumerate_paths_dfs(const Dag& dag, std::uint64_t max_paths);

}  // namespace archscale
