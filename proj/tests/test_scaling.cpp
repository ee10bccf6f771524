#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "archscale/archdsl.hpp"
#include "archscale/scaling.hpp"
#include "support.hpp"

using namespace archscale;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

BaseCalibration calib_on(const Dag& base, double lr, int q = 1) {
  GridResult g;
  g.ladder = {lr / 10, lr};
  g.seeds = {1};
  g.final_losses = {{1.0}, {0.5}};
  return calibrate_base(g, base, q);
}

}  // namespace

TEST_CASE("edge_variance") {
  CHECK(edge_variance(make_chain(1), 0, 1) == 2.0);
  Dag fan(2, {{0, 1, {}}, {0, 2, {}}, {1, 3, {}}, {2, 3, {}}, {0, 3, {OpKind::Identity, 1}}});
  CHECK(edge_variance(fan, 1, 3) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(edge_variance(testsupport::diamond(), 1, 3) == 1.0);
  CHECK(edge_variance(testsupport::diamond(), 2, 3) == 1.0);
  CHECK_THROWS_AS(edge_variance(fan, 0, 3), Error);
  try {
    edge_variance(fan, 1, 2);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotWeightedEdge);
  }
}

TEST_CASE("lr_scale") {
  BaseCalibration c = calib_on(make_chain(1), 0.1);
  CHECK(c.base_lr == 0.1);
  CHECK(c.constant_c == 0.1);
  CHECK(lr_scale(c, make_chain(4), 1) == 0.0125);
  CHECK(lr_scale(c, make_chain(1), 1) == 0.1);

  Dag cnn = with_uniform_kernel(make_chain(1), 3);
  BaseCalibration cc = calib_on(cnn, 0.1, 3);
  CHECK(cc.constant_c == doctest::Approx(0.3));
  CHECK(lr_scale(cc, cnn, 5) == doctest::Approx(0.1 * 3 / 5).epsilon(1e-15));
  CHECK(lr_scale(cc, cnn, 3) == 0.1);

  // all-skip graph: sum floored at 1
  Dag skip(0, {{0, 1, {OpKind::Identity, 1}}});
  CHECK(lr_scale(c, skip, 1) == 0.1);
}

TEST_CASE("calibration fixed point on random graphs") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    Dag d = testsupport::random_dag(rng, static_cast<int>(rng() % 6), 0.5);
    if (!validate(d).empty()) continue;
    d = prune_zero_edges(d);
    int q = 1 + 2 * static_cast<int>(rng() % 3);
    double lr = std::exp(-static_cast<double>(rng() % 1000) / 100.0);
    BaseCalibration c = calib_on(d, lr, q);
    CHECK(lr_scale(c, d, q) == lr);
  }
}

TEST_CASE("make_plan") {
  BaseCalibration c = calib_on(make_chain(1), 0.1);
  ScalingPlan p = make_plan(make_chain(1), c);
  CHECK(p.edge_variance.size() == 2);
  CHECK(p.edge_variance.at({0, 1}) == 2.0);
  CHECK(p.edge_variance.at({1, 2}) == 2.0);
  CHECK(p.lr == 0.1);

  ScalingPlan d = make_plan(testsupport::diamond(), c);
  CHECK(d.edge_variance == std::map<std::pair<int, int>, double>{
                               {{0, 1}, 2.0}, {{0, 2}, 2.0}, {{1, 3}, 1.0}, {{2, 3}, 1.0}});
  CHECK(d.lr == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-15));

  // cell: node1 = conv3(0); node2 = skip(0) + conv1(1) + none; node3 = conv1(0) + conv3(2) + pool(1)
  Dag cell = prune_zero_edges(parse_nasbench201(
      "|nor_conv_3x3~0|+|skip_connect~0|nor_conv_1x1~1|+|nor_conv_1x1~0|avg_pool_3x3~1|nor_conv_3x3~2|"));
  ScalingPlan pc = make_plan(cell, c);
  CHECK(pc.kernel == 3);
  CHECK(pc.edge_variance.size() == 4);
  CHECK(pc.edge_variance.at({0, 1}) == 2.0);
  CHECK(pc.edge_variance.at({1, 2}) == 1.0);    // node 2 has in-degree 2
  CHECK(pc.edge_variance.at({0, 3}) == 2.0 / 3);  // node 3 has in-degree 3
  CHECK(pc.edge_variance.at({2, 3}) == 2.0 / 3);
  // paths: 0-1-2-3 (depth 2), 0-2-3 (0), 0-3 (0), 0-1-3 via pool (1)  -> 8 + 1 = 9
  CHECK(pc.lr == doctest::Approx(0.1 / (3.0 * 3.0)).epsilon(1e-15));
  CHECK(make_plan(cell, c, 5).kernel == 5);
}

TEST_CASE("adding a weighted path never raises the learning rate") {
  BaseCalibration c = calib_on(make_chain(1), 0.1);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    int L = 1 + static_cast<int>(rng() % 6);
    Dag d = testsupport::random_dag(rng, L, 0.4, false);
    if (!validate(d).empty()) continue;
    int a = static_cast<int>(rng() % (L + 1));
    int b = a + 1 + static_cast<int>(rng() % (L + 1 - a));
    if (d.find_edge(a, b) != nullptr) continue;
    auto e = d.edges();
    std::vector<Edge> more(e.begin(), e.end());
    more.push_back({a, b, {}});
    Dag bigger(L, more);
    CHECK(lr_scale(c, bigger, 1) <= lr_scale(c, d, 1));
  }
}

TEST_CASE("relabeling invariance") {
  BaseCalibration c = calib_on(make_chain(1), 0.1);
  // the two branches of an asymmetric diamond swapped
  Dag a(3, {{0, 1, {}}, {1, 2, {}}, {2, 4, {}}, {0, 3, {}}, {3, 4, {}}});
  Dag b(3, {{0, 1, {}}, {1, 4, {}}, {0, 2, {}}, {2, 3, {}}, {3, 4, {}}});
  CHECK(lr_scale(c, a, 1) == lr_scale(c, b, 1));
}

TEST_CASE("calibrate_base selection") {
  GridResult g;
  g.ladder = {0.01, 0.1, 1.0};
  g.seeds = {1};
  g.final_losses = {{0.9}, {0.5}, {kNaN}};
  CHECK(calibrate_base(g, make_chain(1), 1).base_lr == 0.1);

  g.final_losses = {{0.5}, {0.50004}, {kNaN}};
  CHECK(calibrate_base(g, make_chain(1), 1).base_lr == 0.1);

  g.final_losses = {{kNaN}, {kNaN}, {kNaN}};
  try {
    calibrate_base(g, make_chain(1), 1);
    FAIL("expected AllRunsDiverged");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AllRunsDiverged);
  }

  // a single diverged seed disqualifies the LR
  g.seeds = {1, 2};
  g.final_losses = {{0.9, 0.9}, {0.5, 0.5}, {0.1, kNaN}};
  CHECK(calibrate_base(g, make_chain(1), 1).base_lr == 0.1);
}

TEST_CASE("plan and calibration files round trip") {
  BaseCalibration c = calib_on(testsupport::diamond(), 0.0731, 3);
  std::stringstream cs;
  write_calibration(cs, c);
  CHECK(read_calibration(cs) == c);

  ScalingPlan p = make_plan(make_chain(3), c, 3, Activation::GELU);
  std::stringstream ps;
  write_plan(ps, p);
  CHECK(ps.str().rfind("lr = ", 0) == 0);
  CHECK(read_plan(ps) == p);

  std::stringstream bad("kernel = 1\n0 1 2\n");
  CHECK_THROWS_AS(read_plan(bad), Error);
}

TEST_CASE("ladders") {
  auto l = default_ladder(0.1);
  CHECK(l.size() == 25);
  CHECK(l.front() == doctest::Approx(1e-3));
  CHECK(l.back() == doctest::Approx(10));
  CHECK(parse_ladder("0.001:1:4") == log_ladder(0.001, 1, 4));
  CHECK(parse_ladder("0.1, 0.2,0.5") == std::vector<double>{0.1, 0.2, 0.5});
  CHECK_THROWS_AS(parse_ladder(""), Error);
  CHECK_THROWS_AS(parse_ladder("0.2,0.1"), Error);
  CHECK_THROWS_AS(parse_ladder("0.1"), Error);
}
