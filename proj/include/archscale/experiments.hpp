#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "archscale/data.hpp"
#include "archscale/grid.hpp"
#include "archscale/nn.hpp"
#include "archscale/scaling.hpp"

namespace archscale {

/// Runs fn(0..count-1) on up to `workers` threads. Each index writes only its
/// own slot, so results never depend on the worker count. The first
/// exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

struct GridOptions {
  int batch_size = 16;
  int workers = 1;
  double divergence_loss = 1e8;
};

/// One epoch of SGD per (lr, seed) from the plan-based init of that seed,
/// scored by the full-dataset loss afterwards. Diverged runs are stored as
/// NaN. Throws InvalidArgument on a bad ladder or empty seeds, and
/// AllRunsDiverged when nothing qualifies for selection.
GridResult grid_search_max_lr(const NetworkConfig& config, const ScalingPlan& plan,
                              const Dataset& data, const std::vector<double>& ladder,
                              const std::vector<std::uint64_t>& seeds,
                              const GridOptions& opts = {});

/// Per-vertex Monte-Carlo moments. Entries are per-coordinate means, i.e.
/// ||z||^2 / (channels * pixels); inactive vertices hold NaN.
struct ProbeReport {
  std::vector<double> moment;           ///< E ||z^(v)||^2 per coordinate
  std::vector<double> moment_hw;        ///< 95% half-width
  std::vector<double> delta_moment;     ///< E (dz^(v))^2, NaN for info-flow probes
  std::vector<double> delta_moment_hw;
  int trials = 0;
  int width = 0;
};

/// "vertex,moment,moment_hw,delta_moment,delta_moment_hw" for active vertices.
void write_probe_csv(std::ostream& os, const ProbeReport& report);

/// max / min of report.moment over the non-input active vertices.
double moment_ratio(const ProbeReport& report);

/// Fresh init per trial with a standard-normal input of one sample
/// (E ||x||^2 / n = 1). Throws InvalidArgument when trials < 100.
ProbeReport info_flow_probe(const NetworkConfig& config, const ScalingPlan& plan, int trials,
                            std::uint64_t seed, int workers = 1);

/// Fresh init and one datapoint (x ~ N(0, I), y ~ N(0, I)) per trial; one
/// sgd_step at lr, then the change of every pre-activation on x.
ProbeReport delta_z_probe(const NetworkConfig& config, const ScalingPlan& plan, double lr,
                          int trials, std::uint64_t seed, int workers = 1);

struct GrowthFit {
  std::vector<double> xs;        ///< depths or kernels
  std::vector<double> values;    ///< fitted quantity per x
  std::vector<double> output_values;  ///< output-vertex delta moment per x
  double slope = 0;
  double intercept = 0;
  double residual = 0;  ///< RMS of the log-log fit residuals
  double output_slope = 0;
};

/// Least-squares line through (log x, log y). Throws InsufficientPoints for
/// fewer than 2 points and DegenerateInput for nonpositive values.
std::pair<double, double> loglog_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                                     double* residual = nullptr);

/// Largest per-coordinate delta moment over the hidden vertices (the output
/// vertex when there are none). Under the mean-field readout the output
/// vertex carries an extra 1/n and its own first-order update term, so the
/// growth laws show up on the deepest hidden vertex.
double binding_delta(const ProbeReport& report);

/// Chains of the given depths at width n, each probed at lr eta; the fitted
/// quantity is binding_delta. Throws InsufficientPoints for fewer than 4
/// depths.
GrowthFit depth_growth_probe(const std::vector<int>& depths, int n, double eta, int trials,
                             std::uint64_t seed, int workers = 1);

struct KernelProbeOptions {
  int pixels = 128;
  bool compensate = false;  ///< probe at eta / q instead of eta
  int workers = 1;
};

/// dag rewritten to each kernel q (odd), width n; fitted quantity as in
/// depth_growth_probe. Throws InsufficientPoints for fewer than 3 kernels.
GrowthFit kernel_growth_probe(const std::vector<int>& kernels, const Dag& dag, int n, double eta,
                              int trials, std::uint64_t seed, const KernelProbeOptions& opts = {});

/// "<x_name>,value,output_value", one row per probed x.
void write_growth_csv(std::ostream& os, const GrowthFit& fit, const std::string& x_name);

/// Sample Pearson correlation. Throws DegenerateInput on length mismatch,
/// fewer than 2 points, or zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

/// Number of pairs i < j with perm[i] > perm[j] (merge sort, O(N log N)).
std::uint64_t count_inversions(std::vector<std::size_t> perm);

/// ranking_a / ranking_b list ids best first. For each K, tau over the
/// top ceil(K * N / 100) ids of ranking_a (at least 2), comparing positions
/// in the two rankings. Throws IdMismatch when the id sets differ and
/// InvalidArgument for a percentile outside {1, 5, 10, ..., 100}.
std::vector<std::pair<int, double>> kendall_tau_topk(const std::vector<std::string>& ranking_a,
                                                     const std::vector<std::string>& ranking_b,
                                                     const std::vector<int>& percentiles);

}  // namespace archscale
