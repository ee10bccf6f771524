#include "archscale/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <thread>
#include <tuple>

#include "archscale/error.hpp"
#include "archscale/util.hpp"

namespace archscale {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t nthreads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::mutex mu;
  std::size_t next = 0;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= count) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// grid search

GridResult grid_search_max_lr(const NetworkConfig& config, const ScalingPlan& plan,
                              const Dataset& data, const std::vector<double>& ladder,
                              const std::vector<std::uint64_t>& seeds, const GridOptions& opts) {
  if (ladder.size() < 2) throw Error(ErrorCode::InvalidArgument, "ladder needs at least 2 entries");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i] > 0) || !std::isfinite(ladder[i]) || (i > 0 && !(ladder[i] > ladder[i - 1]))) {
      throw Error(ErrorCode::InvalidArgument, "ladder must be positive and strictly increasing");
    }
  }
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "at least one seed is required");

  std::vector<Params> inits;
  for (auto s : seeds) inits.push_back(initialize(config, plan, s));

  GridResult grid;
  grid.ladder = ladder;
  grid.seeds = seeds;
  grid.final_losses.assign(ladder.size(), std::vector<double>(seeds.size(), kNaN));
  parallel_for(ladder.size() * seeds.size(), opts.workers, [&](std::size_t job) {
    const std::size_t i = job / seeds.size(), s = job % seeds.size();
    TrainOptions to;
    to.batch_size = opts.batch_size;
    to.shuffle_seed = derive_seed(seeds[s], 1);
    to.divergence_loss = opts.divergence_loss;
    TrainResult r = train_one_epoch(inits[s], data, ladder[i], config, to);
    if (r.diverged) return;
    const double loss = evaluate_loss(r.params, data, config);
    if (std::isfinite(loss) && loss <= opts.divergence_loss) grid.final_losses[i][s] = loss;
  });
  grid.selected_lr = ladder[select_max_lr(ladder, grid.final_losses)];
  return grid;
}

// ---------------------------------------------------------------------------
// probes

namespace {

struct Accumulator {
  std::vector<double> sum, sq;
  void add(const std::vector<double>& v) {
    if (sum.empty()) {
      sum.assign(v.size(), 0);
      sq.assign(v.size(), 0);
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
    }
  }
  void finish(int trials, std::vector<double>& mean, std::vector<double>& hw) const {
    mean.assign(sum.size(), kNaN);
    hw.assign(sum.size(), kNaN);
    const double t = trials;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      if (std::isnan(sum[i])) continue;
      mean[i] = sum[i] / t;
      const double var = trials > 1 ? std::max(0.0, (sq[i] - t * mean[i] * mean[i]) / (t - 1)) : 0.0;
      hw[i] = 1.96 * std::sqrt(var / t);
    }
  }
};

std::vector<double> per_coordinate(const std::vector<Tensor>& zs) {
  std::vector<double> out(zs.size(), kNaN);
  for (std::size_t v = 0; v < zs.size(); ++v) {
    if (zs[v].size() > 0) out[v] = zs[v].squaredNorm() / static_cast<double>(zs[v].size());
  }
  return out;
}

Tensor gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(rows, cols);
  double* p = t.data();
  for (Eigen::Index i = 0; i < t.size(); ++i) p[i] = normal(rng);
  return t;
}

void check_trials(int trials, int minimum) {
  if (trials < minimum) {
    throw Error(ErrorCode::InvalidArgument, "probe needs at least " + std::to_string(minimum) + " trials");
  }
}

// Per-trial samples are computed independently, then reduced in trial order.
ProbeReport run_probe(const NetworkConfig& config, const ScalingPlan& plan, double lr, int trials,
                      std::uint64_t seed, int workers, bool with_delta) {
  check_config(config);
  std::vector<std::vector<double>> moments(trials), deltas(trials);
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    Params p = initialize(config, plan, derive_seed(seed, 2 * t));
    const std::uint64_t data_seed = derive_seed(seed, 2 * t + 1);
    Tensor x = gaussian(config.in_channels(), config.pixels, data_seed);
    ActivationRecord rec = forward(p, x, config);
    moments[t] = per_coordinate(rec.z);
    if (!with_delta) return;
    Tensor y = gaussian(config.output_dim, 1, derive_seed(data_seed, 1));
    Params q = sgd_step(p, backward(p, rec, x, y, config), lr, config);
    ActivationRecord after = forward(q, x, config);
    std::vector<Tensor> dz(rec.z.size());
    for (std::size_t v = 0; v < rec.z.size(); ++v) {
      if (rec.z[v].size() > 0) dz[v] = after.z[v] - rec.z[v];
    }
    deltas[t] = per_coordinate(dz);
  });
  ProbeReport report;
  report.trials = trials;
  report.width = config.width;
  Accumulator m, d;
  for (int t = 0; t < trials; ++t) {
    m.add(moments[t]);
    if (with_delta) d.add(deltas[t]);
  }
  m.finish(trials, report.moment, report.moment_hw);
  if (with_delta) {
    d.finish(trials, report.delta_moment, report.delta_moment_hw);
  } else {
    report.delta_moment.assign(report.moment.size(), kNaN);
    report.delta_moment_hw.assign(report.moment.size(), kNaN);
  }
  return report;
}

}  // namespace

ProbeReport info_flow_probe(const NetworkConfig& config, const ScalingPlan& plan, int trials,
                            std::uint64_t seed, int workers) {
  check_trials(trials, 100);
  return run_probe(config, plan, 0.0, trials, seed, workers, false);
}

ProbeReport delta_z_probe(const NetworkConfig& config, const ScalingPlan& plan, double lr,
                          int trials, std::uint64_t seed, int workers) {
  check_trials(trials, 1);
  if (!std::isfinite(lr) || lr < 0) throw Error(ErrorCode::InvalidArgument, "lr must be finite and >= 0");
  return run_probe(config, plan, lr, trials, seed, workers, true);
}

void write_probe_csv(std::ostream& os, const ProbeReport& report) {
  os << "vertex,moment,moment_hw,delta_moment,delta_moment_hw\n";
  for (std::size_t v = 0; v < report.moment.size(); ++v) {
    if (std::isnan(report.moment[v])) continue;
    os << v << ',' << format_double(report.moment[v]) << ',' << format_double(report.moment_hw[v])
       << ',' << format_double(report.delta_moment[v]) << ','
       << format_double(report.delta_moment_hw[v]) << '\n';
  }
}

double moment_ratio(const ProbeReport& report) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (std::size_t v = 1; v < report.moment.size(); ++v) {
    if (std::isnan(report.moment[v])) continue;
    lo = std::min(lo, report.moment[v]);
    hi = std::max(hi, report.moment[v]);
  }
  return hi / lo;
}

double binding_delta(const ProbeReport& report) {
  double hi = kNaN;
  const std::size_t output = report.delta_moment.size() - 1;
  for (std::size_t v = 1; v < output; ++v) {
    const double d = report.delta_moment[v];
    if (std::isnan(d)) continue;
    if (std::isnan(hi) || d > hi) hi = d;
  }
  return std::isnan(hi) && output > 0 ? report.delta_moment[output] : hi;
}

std::pair<double, double> loglog_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                                     double* residual) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::DegenerateInput, "fit inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::InsufficientPoints, "fit needs at least 2 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0) || !(ys[i] > 0)) throw Error(ErrorCode::DegenerateInput, "log-log fit needs positive values");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0) throw Error(ErrorCode::DegenerateInput, "fit needs at least 2 distinct x values");
  const double slope = sxy / sxx, intercept = my - slope * mx;
  if (residual) {
    double ss = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - (intercept + slope * lx[i]);
      ss += r * r;
    }
    *residual = std::sqrt(ss / n);
  }
  return {slope, intercept};
}

namespace {

GrowthFit fit_growth(std::vector<double> xs, const std::vector<ProbeReport>& reports) {
  GrowthFit fit;
  fit.xs = std::move(xs);
  for (const auto& r : reports) {
    fit.values.push_back(binding_delta(r));
    fit.output_values.push_back(r.delta_moment.back());
  }
  std::tie(fit.slope, fit.intercept) = loglog_fit(fit.xs, fit.values, &fit.residual);
  fit.output_slope = loglog_fit(fit.xs, fit.output_values).first;
  return fit;
}

}  // namespace

GrowthFit depth_growth_probe(const std::vector<int>& depths, int n, double eta, int trials,
                             std::uint64_t seed, int workers) {
  if (depths.size() < 4) throw Error(ErrorCode::InsufficientPoints, "depth probe needs at least 4 depths");
  std::set<int> distinct(depths.begin(), depths.end());
  if (distinct.size() != depths.size() || *distinct.begin() < 1) {
    throw Error(ErrorCode::InvalidArgument, "depths must be distinct and >= 1");
  }
  std::vector<ProbeReport> reports;
  std::vector<double> xs;
  NetworkConfig config;
  for (int L : depths) {
    config.dag = make_chain(L);
    config.width = n;
    config.output_dim = 1;
    reports.push_back(delta_z_probe(config, plan_with_lr(config.dag, eta), eta, trials, seed, workers));
    xs.push_back(L);
  }
  return fit_growth(std::move(xs), reports);
}

GrowthFit kernel_growth_probe(const std::vector<int>& kernels, const Dag& dag, int n, double eta,
                              int trials, std::uint64_t seed, const KernelProbeOptions& opts) {
  if (kernels.size() < 3) throw Error(ErrorCode::InsufficientPoints, "kernel probe needs at least 3 kernels");
  std::set<int> distinct(kernels.begin(), kernels.end());
  if (distinct.size() != kernels.size()) throw Error(ErrorCode::InvalidArgument, "kernels must be distinct");
  std::vector<ProbeReport> reports;
  std::vector<double> xs;
  NetworkConfig config;
  for (int q : kernels) {
    if (q < 1 || q % 2 == 0) throw Error(ErrorCode::InvalidArgument, "kernels must be odd and positive");
    config.dag = with_uniform_kernel(dag, q);
    config.width = n;
    config.pixels = opts.pixels;
    config.output_dim = 1;
    const double lr = opts.compensate ? eta / q : eta;
    reports.push_back(delta_z_probe(config, plan_with_lr(config.dag, lr), lr, trials, seed, opts.workers));
    xs.push_back(q);
  }
  return fit_growth(std::move(xs), reports);
}

void write_growth_csv(std::ostream& os, const GrowthFit& fit, const std::string& x_name) {
  os << x_name << ",value,output_value\n";
  for (std::size_t i = 0; i < fit.xs.size(); ++i) {
    os << format_double(fit.xs[i]) << ',' << format_double(fit.values[i]) << ','
       << format_double(fit.output_values[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// analytics

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::DegenerateInput, "pearson inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::DegenerateInput, "pearson needs at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0) || !(syy > 0)) throw Error(ErrorCode::DegenerateInput, "pearson input has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::uint64_t merge_count(std::vector<std::size_t>& v, std::vector<std::size_t>& tmp, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = merge_count(v, tmp, lo, mid) + merge_count(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

std::uint64_t count_inversions(std::vector<std::size_t> perm) {
  std::vector<std::size_t> tmp(perm.size());
  return merge_count(perm, tmp, 0, perm.size());
}

std::vector<std::pair<int, double>> kendall_tau_topk(const std::vector<std::string>& ranking_a,
                                                     const std::vector<std::string>& ranking_b,
                                                     const std::vector<int>& percentiles) {
  std::map<std::string, std::size_t> pos_b;
  for (std::size_t i = 0; i < ranking_b.size(); ++i) {
    if (!pos_b.emplace(ranking_b[i], i).second) {
      throw Error(ErrorCode::IdMismatch, "duplicate id '" + ranking_b[i] + "' in ranking b");
    }
  }
  std::set<std::string> seen_a;
  for (const auto& id : ranking_a) {
    if (!seen_a.insert(id).second) throw Error(ErrorCode::IdMismatch, "duplicate id '" + id + "' in ranking a");
    if (!pos_b.count(id)) throw Error(ErrorCode::IdMismatch, "id '" + id + "' missing from ranking b");
  }
  if (ranking_a.size() != ranking_b.size()) throw Error(ErrorCode::IdMismatch, "rankings cover different ids");
  if (ranking_a.size() < 2) throw Error(ErrorCode::DegenerateInput, "rankings need at least 2 ids");

  std::vector<std::pair<int, double>> out;
  const std::size_t n = ranking_a.size();
  for (int k : percentiles) {
    if (!(k == 1 || (k > 0 && k <= 100 && k % 5 == 0))) {
      throw Error(ErrorCode::InvalidArgument, "percentile " + std::to_string(k) + " not in {1, 5, 10, ..., 100}");
    }
    std::size_t top = (static_cast<std::size_t>(k) * n + 99) / 100;
    top = std::clamp<std::size_t>(top, 2, n);
    std::vector<std::size_t> perm(top);
    for (std::size_t i = 0; i < top; ++i) perm[i] = pos_b.at(ranking_a[i]);
    const double pairs = static_cast<double>(top) * static_cast<double>(top - 1) / 2;
    const double disc = static_cast<double>(count_inversions(perm));
    out.emplace_back(k, (pairs - 2 * disc) / pairs);
  }
  return out;
}

}  // namespace archscale
