#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "archscale/error.hpp"
#include "archscale/graph.hpp"
#include "support.hpp"

using namespace archscale;
using testsupport::brute_force_depths;
using testsupport::diamond;

TEST_CASE("validate") {
  CHECK(validate(make_chain(1)).empty());

  Dag backward(1, {{0, 2, {}}, {2, 1, {OpKind::Identity, 1}}});
  auto v = validate(backward);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::BackwardEdge);
  CHECK(v[0].src == 2);
  CHECK(v[0].dst == 1);

  Dag only_zero(1, {{0, 2, {OpKind::Zero, 1}}});
  v = validate(only_zero);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::NoInputOutputPath);

  Dag dup(0, {{0, 1, {}}, {0, 1, {OpKind::Identity, 1}}});
  v = validate(dup);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::DuplicateEdge);

  Dag even(0, {{0, 1, {OpKind::WeightedReLU, 2}}});
  CHECK(validate(even).at(0).kind == ViolationKind::BadKernel);
  Dag kernel_on_skip(0, {{0, 1, {OpKind::Identity, 3}}});
  CHECK(validate(kernel_on_skip).at(0).kind == ViolationKind::BadKernel);

  Dag out_of_range(1, {{0, 5, {}}});
  CHECK(validate(out_of_range).at(0).kind == ViolationKind::VertexOutOfRange);
}

TEST_CASE("edge order is canonical") {
  Dag a(2, {{1, 3, {}}, {0, 2, {}}, {0, 1, {}}, {2, 3, {}}});
  CHECK(a == diamond());
  CHECK(a.edges()[0] == Edge{0, 1, {}});
}

TEST_CASE("prune_zero_edges") {
  Dag d(2, {{0, 1, {}}, {0, 2, {OpKind::Zero, 1}}, {1, 3, {}}, {2, 3, {}}});
  Dag pruned = prune_zero_edges(d);
  CHECK(pruned == Dag(2, {{0, 1, {}}, {1, 3, {}}}));

  CHECK(prune_zero_edges(diamond()) == diamond());

  // 0->1->4, 0->3->4, 0->2 dead end, 2->3 zero: vertex 2 cannot reach the output
  Dag five(3, {{0, 1, {}}, {1, 4, {}}, {0, 3, {}}, {3, 4, {}}, {0, 2, {}},
               {2, 3, {OpKind::Zero, 1}}});
  Dag p5 = prune_zero_edges(five);
  CHECK(p5 == Dag(3, {{0, 1, {}}, {0, 3, {}}, {1, 4, {}}, {3, 4, {}}}));
  CHECK(p5.in_edges(2).empty());
  CHECK(p5.out_edges(2).empty());
  CHECK(prune_zero_edges(p5) == p5);

  CHECK(testsupport::code_of([] { prune_zero_edges(Dag(0, {{0, 1, {OpKind::Zero, 1}}})); }) ==
        ErrorCode::PrunedToDisconnected);
}

TEST_CASE("prune is idempotent on random graphs") {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    Dag d = testsupport::random_dag(rng, 1 + i % 6, 0.5);
    try {
      Dag once = prune_zero_edges(d);
      CHECK(prune_zero_edges(once) == once);
      CHECK(validate(once).empty());
      ++checked;
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::PrunedToDisconnected);
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("in_degree") {
  CHECK(in_degree(make_chain(2), 1) == 1);
  Dag fan(2, {{0, 3, {}}, {1, 3, {}}, {2, 3, {}}, {0, 1, {}}, {0, 2, {}}});
  CHECK(in_degree(fan, 3) == 3);
  CHECK(in_degree(fan, 0) == 0);
  CHECK(testsupport::code_of([&] { in_degree(fan, 4); }) == ErrorCode::UnknownVertex);
  CHECK(testsupport::code_of([&] { in_degree(fan, -1); }) == ErrorCode::UnknownVertex);
}

TEST_CASE("topo_order") {
  CHECK(topo_order(make_chain(2)) == std::vector<VertexId>{0, 1, 2, 3});
  Dag skip(2, {{0, 1, {}}, {1, 2, {}}, {2, 3, {}}, {0, 3, {OpKind::Identity, 1}}});
  CHECK(topo_order(skip) == std::vector<VertexId>{0, 1, 2, 3});
}

TEST_CASE("enumerate_paths examples") {
  PathStats chain = enumerate_paths(make_chain(3));
  CHECK(chain.width == 1);
  CHECK(chain.depths() == std::vector<int>{3});
  CHECK(chain.depth_cubed_sum == 27);

  PathStats complete = enumerate_paths(make_complete(3));
  CHECK(complete.width == 8);

  PathStats d = enumerate_paths(diamond());
  CHECK(d.width == 2);
  CHECK(d.depths() == std::vector<int>{1, 1});
  CHECK(d.depth_cubed_sum == 2);

  // direct weighted input->output edge has depth 0
  PathStats direct = enumerate_paths(Dag(0, {{0, 1, {}}}));
  CHECK(direct.depths() == std::vector<int>{0});
  CHECK(direct.depth_cubed_sum == 0);

  // avg_pool and identity are depth-transparent
  Dag mixed(2, {{0, 1, {OpKind::AvgPool, 3}}, {1, 2, {}}, {2, 3, {OpKind::Identity, 1}}});
  CHECK(enumerate_paths(mixed).depths() == std::vector<int>{1});
}

TEST_CASE("chain depths equal L") {
  for (int L = 0; L <= 32; ++L) {
    auto s = enumerate_paths(make_chain(L));
    CHECK(s.depths() == std::vector<int>{L});
    CHECK(s.depth_cubed_sum == PathCount(L) * L * L);
  }
}

TEST_CASE("complete DAG closed form") {
  for (int L = 0; L <= 12; ++L) {
    CHECK(count_paths_dp(make_complete(L)).width == (PathCount(1) << L));
  }
  // far beyond explicit enumeration, still exact
  PathStats big = count_paths_dp(make_complete(100));
  CHECK(big.width == (PathCount(1) << 100));
  PathOptions dp;
  dp.dp_only = true;
  CHECK(enumerate_paths(make_complete(40), dp).width == (PathCount(1) << 40));
  CHECK(testsupport::code_of([] { enumerate_paths(make_complete(40)); }) == ErrorCode::PathExplosion);
  CHECK(to_string(PathCount(1) << 100) == "1267650600228229401496703205376");
}

TEST_CASE("identity edge adds paths without changing existing depths") {
  Dag base = make_chain(3);
  Dag skip(3, {{0, 1, {}}, {1, 2, {}}, {2, 3, {}}, {3, 4, {}}, {1, 3, {OpKind::Identity, 1}}});
  auto before = enumerate_paths(base).depths();
  auto after = enumerate_paths(skip).depths();
  // the bypassed sub-path 1->2->3 carried two weighted edges; the shortcut carries none
  CHECK(after == std::vector<int>{1, 3});
  CHECK(std::includes(after.begin(), after.end(), before.begin(), before.end()));
}

TEST_CASE("DP matches brute force on random graphs") {
  std::mt19937_64 rng(2024);
  int compared = 0;
  for (int i = 0; i < 2000; ++i) {
    int L = static_cast<int>(rng() % 9);  // up to 10 vertices
    Dag d = testsupport::random_dag(rng, L, 0.2 + 0.6 * (i % 5) / 4.0);
    auto brute = brute_force_depths(d);
    PathStats dp = count_paths_dp(d);
    CHECK(dp.width == brute.size());
    if (!brute.empty()) {
      CHECK(dp.depths() == brute);
      CHECK(enumerate_paths_dfs(d, 1'000'000) == dp);
      ++compared;
    }
  }
  CHECK(compared > 1000);
}
