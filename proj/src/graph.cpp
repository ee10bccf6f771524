#include "archscale/graph.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "archscale/error.hpp"

namespace archscale {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownVertex: return "UnknownVertex";
    case ErrorCode::PrunedToDisconnected: return "PrunedToDisconnected";
    case ErrorCode::PathExplosion: return "PathExplosion";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::SemanticError: return "SemanticError";
    case ErrorCode::UnknownOperator: return "UnknownOperator";
    case ErrorCode::NotWeightedEdge: return "NotWeightedEdge";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::KernelTooLarge: return "KernelTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::AllRunsDiverged: return "AllRunsDiverged";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_weighted(OpKind kind) noexcept {
  return kind == OpKind::WeightedReLU || kind == OpKind::WeightedGELU;
}

std::string_view to_string(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::WeightedReLU: return "relu_linear";
    case OpKind::WeightedGELU: return "gelu_linear";
    case OpKind::Identity: return "identity";
    case OpKind::Zero: return "zero";
    case OpKind::AvgPool: return "avg_pool";
  }
  return "?";
}

std::string_view to_string(Activation act) noexcept {
  return act == Activation::ReLU ? "relu" : "gelu";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "gelu") return Activation::GELU;
  throw Error(ErrorCode::InvalidArgument,
              "unknown activation '" + std::string(name) + "' (expected relu or gelu)");
}

Dag::Dag(int num_hidden, std::vector<Edge> edges)
    : num_hidden_(num_hidden), edges_(std::move(edges)) {
  if (num_hidden < 0) {
    throw Error(ErrorCode::InvalidArgument, "num_hidden must be >= 0");
  }
  std::stable_sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.src, a.dst) < std::pair(b.src, b.dst);
  });
}

std::vector<Edge> Dag::in_edges(VertexId v) const {
  std::vector<Edge> out;
  for (const auto& e : edges_) {
    if (e.dst == v) out.push_back(e);
  }
  return out;
}

std::vector<Edge> Dag::out_edges(VertexId v) const {
  std::vector<Edge> out;
  for (const auto& e : edges_) {
    if (e.src == v) out.push_back(e);
  }
  return out;
}

const Edge* Dag::find_edge(VertexId src, VertexId dst) const noexcept {
  auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair(src, dst),
                             [](const Edge& e, const std::pair<int, int>& key) {
                               return std::pair(e.src, e.dst) < key;
                             });
  if (it != edges_.end() && it->src == src && it->dst == dst) return &*it;
  return nullptr;
}

namespace {

std::string edge_label(const Edge& e) {
  std::ostringstream os;
  os << '(' << e.src << ',' << e.dst << ')';
  return os.str();
}

// Vertices reachable from the input and co-reachable from the output over
// non-Zero, in-range, forward edges.
std::pair<std::vector<char>, std::vector<char>> reachability(const Dag& dag) {
  const int nv = dag.num_vertices();
  std::vector<char> fwd(nv, 0), bwd(nv, 0);
  fwd[dag.input()] = 1;
  bwd[dag.output()] = 1;
  auto usable = [&](const Edge& e) {
    return e.op.kind != OpKind::Zero && dag.has_vertex(e.src) && dag.has_vertex(e.dst) &&
           e.src < e.dst;
  };
  // Edges are sorted by src, so one ascending sweep settles forward reachability.
  for (const auto& e : dag.edges()) {
    if (usable(e) && fwd[e.src]) fwd[e.dst] = 1;
  }
  auto edges = dag.edges();
  std::vector<Edge> by_dst(edges.begin(), edges.end());
  std::sort(by_dst.begin(), by_dst.end(), [](const Edge& a, const Edge& b) {
    return a.dst > b.dst;
  });
  for (const auto& e : by_dst) {
    if (usable(e) && bwd[e.dst]) bwd[e.src] = 1;
  }
  return {fwd, bwd};
}

}  // namespace

std::vector<Violation> validate(const Dag& dag) {
  std::vector<Violation> out;
  bool structural_ok = true;
  const Edge* prev = nullptr;
  for (const auto& e : dag.edges()) {
    if (!dag.has_vertex(e.src) || !dag.has_vertex(e.dst)) {
      out.push_back({ViolationKind::VertexOutOfRange, e.src, e.dst,
                     "edge " + edge_label(e) + " references a vertex outside [0, " +
                         std::to_string(dag.output()) + "]"});
      structural_ok = false;
    } else if (e.src >= e.dst) {
      out.push_back({ViolationKind::BackwardEdge, e.src, e.dst,
                     "edge " + edge_label(e) + " violates src < dst"});
      structural_ok = false;
    }
    if (prev != nullptr && prev->src == e.src && prev->dst == e.dst) {
      out.push_back({ViolationKind::DuplicateEdge, e.src, e.dst,
                     "duplicate edge " + edge_label(e)});
    }
    const bool kernel_ok =
        e.op.kernel >= 1 && e.op.kernel % 2 == 1 &&
        (is_weighted(e.op.kind) ||
         (e.op.kind == OpKind::AvgPool ? e.op.kernel == kAvgPoolWindow : e.op.kernel == 1));
    if (!kernel_ok) {
      out.push_back({ViolationKind::BadKernel, e.src, e.dst,
                     "edge " + edge_label(e) + " has invalid kernel " +
                         std::to_string(e.op.kernel) + " for " +
                         std::string(to_string(e.op.kind))});
    }
    prev = &e;
  }
  if (structural_ok) {
    auto [fwd, bwd] = reachability(dag);
    if (!fwd[dag.output()]) {
      out.push_back({ViolationKind::NoInputOutputPath, -1, -1,
                     "no input-output path after pruning zero edges"});
    }
  }
  return out;
}

Dag prune_zero_edges(const Dag& dag) {
  auto [fwd, bwd] = reachability(dag);
  if (!fwd[dag.output()]) {
    throw Error(ErrorCode::PrunedToDisconnected,
                "no input->output path remains after pruning zero edges");
  }
  std::vector<Edge> kept;
  for (const auto& e : dag.edges()) {
    if (e.op.kind == OpKind::Zero) continue;
    if (!dag.has_vertex(e.src) || !dag.has_vertex(e.dst)) continue;
    if (fwd[e.src] && bwd[e.src] && fwd[e.dst] && bwd[e.dst]) kept.push_back(e);
  }
  return Dag(dag.num_hidden(), std::move(kept));
}

int in_degree(const Dag& dag, VertexId v) {
  if (!dag.has_vertex(v)) {
    throw Error(ErrorCode::UnknownVertex, "vertex " + std::to_string(v) + " is not in [0, " +
                                              std::to_string(dag.output()) + "]");
  }
  int count = 0;
  for (const auto& e : dag.edges()) {
    if (e.dst == v && e.op.kind != OpKind::Zero) ++count;
  }
  return count;
}

std::vector<VertexId> topo_order(const Dag& dag) {
  std::vector<char> active(dag.num_vertices(), 0);
  active[dag.input()] = 1;
  active[dag.output()] = 1;
  for (const auto& e : dag.edges()) {
    if (dag.has_vertex(e.src)) active[e.src] = 1;
    if (dag.has_vertex(e.dst)) active[e.dst] = 1;
  }
  std::vector<VertexId> order;
  for (VertexId v = 0; v < dag.num_vertices(); ++v) {
    if (active[v]) order.push_back(v);
  }
  return order;
}

int max_weighted_kernel(const Dag& dag) {
  int q = 1;
  for (const auto& e : dag.edges()) {
    if (is_weighted(e.op.kind)) q = std::max(q, e.op.kernel);
  }
  return q;
}

Dag with_uniform_kernel(const Dag& dag, int q) {
  if (q < 1 || q % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "kernel must be odd and >= 1");
  }
  auto edges = dag.edges();
  std::vector<Edge> out(edges.begin(), edges.end());
  for (auto& e : out) {
    if (is_weighted(e.op.kind)) e.op.kernel = q;
  }
  return Dag(dag.num_hidden(), std::move(out));
}

Dag with_activation(const Dag& dag, Activation act) {
  auto edges = dag.edges();
  std::vector<Edge> out(edges.begin(), edges.end());
  for (auto& e : out) {
    if (is_weighted(e.op.kind)) {
      e.op.kind = act == Activation::ReLU ? OpKind::WeightedReLU : OpKind::WeightedGELU;
    }
  }
  return Dag(dag.num_hidden(), std::move(out));
}

Dag make_chain(int num_hidden, EdgeOp op) {
  std::vector<Edge> edges;
  for (int v = 0; v <= num_hidden; ++v) edges.push_back({v, v + 1, op});
  return Dag(num_hidden, std::move(edges));
}

Dag make_complete(int num_hidden, EdgeOp op) {
  std::vector<Edge> edges;
  for (int i = 0; i <= num_hidden + 1; ++i) {
    for (int j = i + 1; j <= num_hidden + 1; ++j) edges.push_back({i, j, op});
  }
  return Dag(num_hidden, std::move(edges));
}

// ---------------------------------------------------------------------------

std::string to_string(PathCount value) {
  if (value == 0) return "0";
  std::string digits;
  while (value > 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(value % 10)));
    value /= 10;
  }
  return {digits.rbegin(), digits.rend()};
}

namespace {

PathCount checked_add(PathCount a, PathCount b) {
  PathCount out;
  if (__builtin_add_overflow(a, b, &out)) {
    throw Error(ErrorCode::PathExplosion, "path count overflows 128 bits");
  }
  return out;
}

PathCount checked_mul(PathCount a, PathCount b) {
  PathCount out;
  if (__builtin_mul_overflow(a, b, &out)) {
    throw Error(ErrorCode::PathExplosion, "path statistics overflow 128 bits");
  }
  return out;
}

bool carries_path(const Dag& dag, const Edge& e) {
  return e.op.kind != OpKind::Zero && dag.has_vertex(e.src) && dag.has_vertex(e.dst) &&
         e.src < e.dst;
}

int depth_step(const Dag& dag, const Edge& e) {
  return is_weighted(e.op.kind) && dag.is_hidden(e.dst) ? 1 : 0;
}

PathStats finish(std::vector<PathCount> hist) {
  PathStats stats;
  while (!hist.empty() && hist.back() == 0) hist.pop_back();
  for (std::size_t d = 0; d < hist.size(); ++d) {
    stats.width = checked_add(stats.width, hist[d]);
    const PathCount cube = static_cast<PathCount>(d) * d * d;
    stats.depth_cubed_sum = checked_add(stats.depth_cubed_sum, checked_mul(cube, hist[d]));
  }
  stats.depth_histogram = std::move(hist);
  return stats;
}

}  // namespace

std::vector<int> PathStats::depths(std::uint64_t max_paths) const {
  if (width > max_paths) {
    throw Error(ErrorCode::PathExplosion,
                "width " + to_string(width) + " exceeds the explicit path cap");
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(width));
  for (std::size_t d = 0; d < depth_histogram.size(); ++d) {
    out.insert(out.end(), static_cast<std::size_t>(depth_histogram[d]), static_cast<int>(d));
  }
  return out;
}

PathStats count_paths_dp(const Dag& dag) {
  const int nv = dag.num_vertices();
  // hist[v][d]: number of paths input -> v of depth d. Depth never exceeds L.
  std::vector<std::vector<PathCount>> hist(nv, std::vector<PathCount>(dag.num_hidden() + 1, 0));
  hist[dag.input()][0] = 1;
  // Edges are sorted by src and src < dst, so every source row is final
  // before it is read.
  for (const auto& e : dag.edges()) {
    if (!carries_path(dag, e)) continue;
    const int step = depth_step(dag, e);
    auto& from = hist[e.src];
    auto& to = hist[e.dst];
    for (std::size_t d = 0; d + step < to.size(); ++d) {
      if (from[d] != 0) to[d + step] = checked_add(to[d + step], from[d]);
    }
  }
  return finish(std::move(hist[dag.output()]));
}

PathStats enumerate_paths_dfs(const Dag& dag, std::uint64_t max_paths) {
  std::vector<std::vector<std::pair<VertexId, int>>> adj(dag.num_vertices());
  for (const auto& e : dag.edges()) {
    if (carries_path(dag, e)) adj[e.src].push_back({e.dst, depth_step(dag, e)});
  }
  std::vector<PathCount> hist(dag.num_hidden() + 1, 0);
  std::uint64_t found = 0;
  struct Frame {
    VertexId v;
    int depth;
    std::size_t next;
  };
  std::vector<Frame> stack{{dag.input(), 0, 0}};
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.v == dag.output()) {
      if (++found > max_paths) {
        throw Error(ErrorCode::PathExplosion,
                    "more than " + std::to_string(max_paths) + " input->output paths");
      }
      hist[top.depth] += 1;
      stack.pop_back();
      continue;
    }
    if (top.next == adj[top.v].size()) {
      stack.pop_back();
      continue;
    }
    auto [next, step] = adj[top.v][top.next++];
    stack.push_back({next, top.depth + step, 0});
  }
  return finish(std::move(hist));
}

PathStats enumerate_paths(const Dag& dag, const PathOptions& opts) {
  PathStats dp = count_paths_dp(dag);
  if (opts.dp_only) return dp;
  if (dp.width > opts.max_explicit_paths) {
    throw Error(ErrorCode::PathExplosion,
                "width " + to_string(dp.width) + " exceeds the explicit enumeration cap of " +
                    std::to_string(opts.max_explicit_paths) + "; use DP-only mode");
  }
  PathStats dfs = enumerate_paths_dfs(dag, opts.max_explicit_paths);
  if (!(dfs == dp)) {
    throw std::logic_error("path DP and DFS enumeration disagree");
  }
  return dp;
}

}  // namespace archscale
