#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "archscale/error.hpp"
#include "archscale/graph.hpp"

namespace testsupport {

using archscale::Dag;
using archscale::Edge;
using archscale::EdgeOp;
using archscale::OpKind;

/// Random forward-edge graph on L+2 vertices. Each pair i<j gets an edge
/// with probability p and a random operator. Not necessarily connected.
inline Dag random_dag(std::mt19937_64& rng, int num_hidden, double p, bool allow_zero = true) {
  std::bernoulli_distribution take(p);
  std::uniform_int_distribution<int> pick(0, allow_zero ? 4 : 3);
  std::vector<Edge> edges;
  for (int i = 0; i <= num_hidden + 1; ++i) {
    for (int j = i + 1; j <= num_hidden + 1; ++j) {
      if (!take(rng)) continue;
      EdgeOp op;
      switch (pick(rng)) {
        case 0: op = {OpKind::WeightedReLU, 1}; break;
        case 1: op = {OpKind::WeightedGELU, 3}; break;
        case 2: op = {OpKind::Identity, 1}; break;
        case 3: op = {OpKind::AvgPool, archscale::kAvgPoolWindow}; break;
        default: op = {OpKind::Zero, 1}; break;
      }
      edges.push_back({i, j, op});
    }
  }
  return Dag(num_hidden, std::move(edges));
}

/// Brute force: walk every input->output path recursively and record its
/// depth (weighted edges landing on a hidden vertex).
inline std::vector<int> brute_force_depths(const Dag& dag) {
  std::vector<int> out;
  std::function<void(int, int)> walk = [&](int v, int depth) {
    if (v == dag.output()) {
      out.push_back(depth);
      return;
    }
    for (const auto& e : dag.edges()) {
      if (e.src != v || e.op.kind == OpKind::Zero) continue;
      int step = archscale::is_weighted(e.op.kind) && dag.is_hidden(e.dst) ? 1 : 0;
      walk(e.dst, depth + step);
    }
  };
  walk(0, 0);
  std::sort(out.begin(), out.end());
  return out;
}

/// Code of the archscale::Error thrown by fn, or nullopt when nothing is thrown.
inline std::optional<archscale::ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const archscale::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline Dag diamond(EdgeOp op = {}) {
  return Dag(2, {{0, 1, op}, {0, 2, op}, {1, 3, op}, {2, 3, op}});
}

}  // namespace testsupport
