#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "archscale/nn.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace archscale;

namespace {

NetworkConfig config_for(const Dag& dag, int width, int pixels = 1) {
  NetworkConfig c;
  c.dag = dag;
  c.width = width;
  c.pixels = pixels;
  return c;
}

Tensor gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}
}  // namespace

TEST_CASE("initialize is deterministic") {
  auto cfg = config_for(make_chain(1), 2);
  auto plan = plan_with_lr(cfg.dag, 0.1);
  CHECK(initialize(cfg, plan, 7) == initialize(cfg, plan, 7));
  CHECK_FALSE(initialize(cfg, plan, 7) == initialize(cfg, plan, 8));
}

TEST_CASE("initialize variances") {
  // 10^6 draws: hidden (1,2) is 100 x 100 per sample, so 100 seeds
  auto cfg = config_for(make_chain(1), 100);
  auto plan = plan_with_lr(cfg.dag, 0.1);
  double hidden = 0, output = 0;
  std::size_t nh = 0, no = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Params p = initialize(cfg, plan, s);
    hidden += p.find(0, 1)->weight.squaredNorm();
    nh += static_cast<std::size_t>(p.find(0, 1)->weight.size());
  }
  CHECK(hidden / nh == doctest::Approx(0.02).epsilon(0.01));

  // output edge is 1 x 100: 10^4 samples per seed
  for (std::uint64_t s = 0; s < 10000; ++s) {
    Params p = initialize(cfg, plan, 1000 + s);
    output += p.find(1, 2)->weight.squaredNorm();
    no += static_cast<std::size_t>(p.find(1, 2)->weight.size());
  }
  CHECK(output / no == doctest::Approx(2e-4).epsilon(0.02));
}

TEST_CASE("initialize rejects mismatched plans") {
  auto cfg = config_for(make_chain(1), 4);
  auto plan = plan_with_lr(make_chain(2), 0.1);
  CHECK(testsupport::code_of([&] { initialize(cfg, plan, 1); }) == ErrorCode::PlanMismatch);
  ScalingPlan partial = plan_with_lr(cfg.dag, 0.1);
  partial.edge_variance.erase({1, 2});
  CHECK(testsupport::code_of([&] { initialize(cfg, partial, 1); }) == ErrorCode::PlanMismatch);
}

TEST_CASE("patchify") {
  Tensor z(1, 3);
  z << 1, 2, 3;
  Tensor p = patchify(z, 3);
  Tensor expected(3, 3);
  expected << 0, 1, 2,
              1, 2, 3,
              2, 3, 0;
  CHECK(p == expected);
  CHECK(patchify(z, 1) == z);
  CHECK(patchify(Tensor::Zero(2, 5), 3).isZero());
  CHECK(testsupport::code_of([&] { patchify(z, 7); }) == ErrorCode::KernelTooLarge);
  CHECK(patchify(z, 5).rows() == 5);

  // channel-major rows, no leakage across samples in a batch
  Tensor two(2, 4);
  two << 1, 2, 5, 6,
         3, 4, 7, 8;
  Tensor pp = patchify(two, 3, 2);
  CHECK(pp.rows() == 6);
  CHECK(pp(0, 0) == 0);  // channel 0, offset -1, sample 0 pixel 0
  CHECK(pp(1, 0) == 1);
  CHECK(pp(2, 0) == 2);
  CHECK(pp(3, 0) == 0);
  CHECK(pp(4, 0) == 3);
  CHECK(pp(2, 1) == 0);  // pixel 1 + 1 is padding, not sample 1
  CHECK(pp(0, 2) == 0);
  CHECK(pp(1, 2) == 5);
}

TEST_CASE("unpatchify is the adjoint of patchify") {
  for (int q : {1, 3, 5}) {
    Tensor z = gaussian(3, 4 * 6, q);
    Tensor u = gaussian(3 * q, 4 * 6, 100 + q);
    const double lhs = (patchify(z, q, 6).array() * u.array()).sum();
    const double rhs = (z.array() * unpatchify(u, q, 6).array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("q=1 patch product reproduces dense matmul") {
  Tensor w = gaussian(4, 3, 1), z = gaussian(3, 5, 2);
  CHECK((w * patchify(z, 1)) == (w * z));
}

TEST_CASE("avg_pool") {
  Tensor z(1, 3);
  z << 3, 6, 9;
  Tensor a = avg_pool(z, 3, 3);
  CHECK(a(0, 0) == doctest::Approx(3.0));
  CHECK(a(0, 1) == doctest::Approx(6.0));
  CHECK(a(0, 2) == doctest::Approx(5.0));
}

TEST_CASE("activations") {
  CHECK(relu(-1) == 0);
  CHECK(relu(2) == 2);
  CHECK(relu_grad(0) == 0);
  CHECK(gelu(0) == 0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429));
  for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    const double h = 1e-6;
    CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-8));
  }
}

TEST_CASE("forward examples") {
  // chain L=1 with identity weights, nonnegative inputs: relu transparent
  auto cfg = config_for(make_chain(1), 3);
  cfg.output_dim = 3;
  Params p;
  p.edges.push_back({0, 1, 1, Eigen::MatrixXd::Identity(3, 3), {}});
  p.edges.push_back({1, 2, 1, Eigen::MatrixXd::Identity(3, 3), {}});
  Tensor x = gaussian(3, 4, 5).cwiseAbs();
  auto rec = forward(p, x, cfg);
  CHECK(rec.z[2] == x);
  CHECK(rec.z[0] == x);

  // diamond with shared weights: z3 = 2 Wout relu(W relu(x))
  auto dcfg = config_for(testsupport::diamond(), 4);
  Eigen::MatrixXd w = gaussian(4, 4, 9), wo = gaussian(1, 4, 10);
  Params dp;
  dp.edges = {{0, 1, 1, w, {}}, {0, 2, 1, w, {}}, {1, 3, 1, wo, {}}, {2, 3, 1, wo, {}}};
  Tensor xd = gaussian(4, 2, 11);
  auto r = forward(dp, xd, dcfg);
  Tensor expected = 2 * wo * (w * xd.cwiseMax(0.0)).cwiseMax(0.0);
  CHECK((r.z[3] - expected).norm() < 1e-12);

  // identity-only path
  NetworkConfig icfg = config_for(Dag(1, {{0, 1, {OpKind::Identity, 1}}, {1, 2, {OpKind::Identity, 1}}}), 3);
  icfg.output_dim = 3;
  Tensor xi = gaussian(3, 2, 12);
  CHECK(forward(Params{}, xi, icfg).z[2] == xi);

  CHECK(testsupport::code_of([&] { forward(p, gaussian(2, 4, 1), cfg); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("mse_loss") {
  Tensor a(2, 1);
  a << 1, 2;
  CHECK(mse_loss(a, a) == 0);
  Tensor b(2, 1);
  b << 0, 1;
  CHECK(mse_loss(a, b, 1) == 1.0);
  Tensor aa(2, 2), bb(2, 2);
  aa << a, a;
  bb << b, b;
  CHECK(mse_loss(aa, bb) == mse_loss(a, b));
  CHECK(testsupport::code_of([&] { mse_loss(a, aa); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("backward: zero residual gives zero gradients") {
  auto cfg = config_for(testsupport::diamond(), 4);
  Params p = initialize(cfg, plan_with_lr(cfg.dag, 0.1), 3);
  Tensor x = gaussian(4, 3, 1);
  auto rec = forward(p, x, cfg);
  Grads g = backward(p, rec, x, readout(rec, cfg), cfg);
  for (const auto& e : g.edges) CHECK(e.weight.isZero());
  // identity edges have no gradient entries
  Dag skip(1, {{0, 1, {}}, {1, 2, {}}, {0, 2, {OpKind::Identity, 1}}});
  auto scfg = config_for(skip, 4);
  scfg.output_dim = 4;
  Params sp = initialize(scfg, plan_with_lr(skip, 0.1), 1);
  auto srec = forward(sp, x, scfg);
  Grads sg = backward(sp, srec, x, gaussian(4, 3, 2), scfg);
  CHECK(sg.edges.size() == 2);
  CHECK(sg.find(0, 2) == nullptr);
}

TEST_CASE("backward matches finite differences") {
  std::mt19937_64 rng(77);
  int configs = 0;
  for (int n : {2, 4}) {
    for (int L : {1, 2, 3}) {
      for (Activation act : {Activation::ReLU, Activation::GELU}) {
        for (int q : {1, 3}) {
          for (int variant = 0; variant < 2; ++variant) {
            Dag dag = variant == 0 ? make_chain(L) : make_complete(L);
            dag = with_uniform_kernel(with_activation(dag, act), q);
            NetworkConfig cfg = config_for(dag, n, q == 1 ? 1 : 5);
            cfg.bias = variant == 1;
            cfg.output_dim = 2;
            Params p = initialize(cfg, plan_with_lr(dag, 0.1), rng());
            if (cfg.bias) {
              for (auto& e : p.edges) e.bias = gaussian(e.bias.size(), 1, rng());
            }
            Tensor x = gaussian(n, cfg.pixels * 3, rng());
            Tensor y = gaussian(2, 3, rng());
            auto r = testsupport::grad_check(p, x, y, cfg);
            CAPTURE(n);
            CAPTURE(L);
            CAPTURE(q);
            CHECK(r.failed == 0);
            CHECK(r.checked > r.skipped_kinks);
            ++configs;
          }
        }
      }
    }
  }
  CHECK(configs == 48);
}

TEST_CASE("backward through identity and avg_pool edges") {
  Dag cell(2, {{0, 1, {OpKind::WeightedReLU, 3}},
               {0, 2, {OpKind::Identity, 1}},
               {1, 2, {OpKind::AvgPool, 3}},
               {1, 3, {}},
               {2, 3, {OpKind::WeightedReLU, 3}}});
  NetworkConfig cfg = config_for(cell, 3, 6);
  Params p = initialize(cfg, plan_with_lr(cell, 0.1), 4);
  auto r = testsupport::grad_check(p, gaussian(3, 12, 1), gaussian(1, 2, 2), cfg);
  CHECK(r.failed == 0);
  CHECK(r.checked > 0);
}

TEST_CASE("sgd_step") {
  Params p;
  p.edges.push_back({0, 1, 1, Eigen::MatrixXd::Constant(1, 1, 1.0), {}});
  Grads g;
  g.edges.push_back({0, 1, 1, Eigen::MatrixXd::Constant(1, 1, 2.0), {}});
  CHECK(sgd_step(p, g, 0.0) == p);
  CHECK(sgd_step(p, g, 0.1).edges[0].weight(0, 0) == doctest::Approx(0.8));
  CHECK(sgd_step(sgd_step(p, g, 0.1), g, 0.1).edges[0].weight(0, 0) ==
        doctest::Approx(sgd_step(p, g, 0.2).edges[0].weight(0, 0)));

  // output edges step at lr / width under the mean-field rule
  NetworkConfig cfg = config_for(make_chain(1), 4);
  Params q = initialize(cfg, plan_with_lr(cfg.dag, 0.1), 1);
  Grads ones = q;
  for (auto& e : ones.edges) e.weight.setOnes();
  Params stepped = sgd_step(q, ones, 0.4, cfg);
  CHECK((q.find(0, 1)->weight - stepped.find(0, 1)->weight).isApproxToConstant(0.4));
  CHECK((q.find(1, 2)->weight - stepped.find(1, 2)->weight).isApproxToConstant(0.1));
  cfg.output_lr = OutputLr::Uniform;
  CHECK(sgd_step(q, ones, 0.4, cfg) == sgd_step(q, ones, 0.4));
}

TEST_CASE("train_one_epoch") {
  Dataset data = synth_dataset(8, 1, 64, 3, LabelMode::LinearTeacher);
  NetworkConfig cfg = config_for(make_chain(2), 8);
  Params p = initialize(cfg, plan_with_lr(cfg.dag, 0.1), 1);

  TrainResult zero = train_one_epoch(p, data, 0.0, cfg, {16, 5});
  CHECK(zero.params == p);
  CHECK(zero.loss_trace.size() == 4);
  CHECK(evaluate_loss(zero.params, data, cfg) == evaluate_loss(p, data, cfg));

  TrainResult a = train_one_epoch(p, data, 0.05, cfg, {16, 5});
  TrainResult b = train_one_epoch(p, data, 0.05, cfg, {16, 5});
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.diverged);

  TrainResult boom = train_one_epoch(p, data, 1e6, cfg, {4, 5});
  CHECK(boom.diverged);
  CHECK(boom.loss_trace.back() > 1e8);
  std::ostringstream os;
  write_loss_trace(os, boom);
  CHECK(os.str().find("diverged") != std::string::npos);
}

TEST_CASE("params archive round trip") {
  NetworkConfig cfg = config_for(testsupport::diamond(), 5);
  cfg.bias = true;
  Params p = initialize(cfg, plan_with_lr(cfg.dag, 0.1), 2);
  for (auto& e : p.edges) e.bias.setLinSpaced(-1, 1);
  auto dir = std::filesystem::temp_directory_path() / "archscale_test_nn";
  std::filesystem::create_directories(dir);
  save_params(p, dir / "p.bin", dir / "p.manifest");
  CHECK(load_params(dir / "p.bin", dir / "p.manifest") == p);
  std::filesystem::resize_file(dir / "p.bin", 16);
  CHECK(testsupport::code_of([&] { load_params(dir / "p.bin", dir / "p.manifest"); }) == ErrorCode::TruncatedFile);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config checks") {
  NetworkConfig cfg = config_for(Dag(0, {{0, 1, {OpKind::Identity, 1}}}), 4);
  CHECK(testsupport::code_of([&] { check_config(cfg); }) == ErrorCode::ShapeMismatch);
  NetworkConfig conv = config_for(with_uniform_kernel(make_chain(1), 5), 4, 2);
  CHECK(testsupport::code_of([&] { check_config(conv); }) == ErrorCode::KernelTooLarge);
}
