#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>

#include "archscale/graph.hpp"
#include "archscale/grid.hpp"

namespace archscale {

/// How output-edge weights are initialized and trained.
enum class OutputInit {
  MeanField,  ///< variance C/n^2 (default)
  FanIn,      ///< variance C/n, same as hidden edges
};

std::string_view to_string(OutputInit rule) noexcept;
OutputInit parse_output_init(std::string_view name);

struct ScalingPlan {
  std::map<std::pair<VertexId, VertexId>, double> edge_variance;  ///< C per weighted edge
  double lr = 0;
  Activation activation = Activation::ReLU;
  int kernel = 1;
  OutputInit output_init = OutputInit::MeanField;

  friend bool operator==(const ScalingPlan&, const ScalingPlan&) = default;
};

struct BaseCalibration {
  Dag base_dag;
  int base_kernel = 1;
  double base_lr = 0;
  double constant_c = 0;

  friend bool operator==(const BaseCalibration&, const BaseCalibration&) = default;
};

/// C = 2 / d_in(dst). Throws NotWeightedEdge when (src, dst) is absent or
/// parameter-free.
double edge_variance(const Dag& dag, VertexId src, VertexId dst);

/// sum of L_p^3 over the paths of dag, floored at 1, as a double.
double depth_cubed_floor(const Dag& dag);

/// eta* = constant_c / (sqrt(max(sum L_p^3, 1)) * q).
double lr_scale(const BaseCalibration& calib, const Dag& target, int kernel);

/// Per-edge variances for every weighted edge plus eta*. The LR kernel is
/// max(kernel, largest weighted-edge kernel of dag).
ScalingPlan make_plan(const Dag& dag, const BaseCalibration& calib, int kernel = 1,
                      Activation activation = Activation::ReLU);

/// Plan with the given LR and the architecture's variances; for probes that
/// do not go through calibration.
ScalingPlan plan_with_lr(const Dag& dag, double lr, Activation activation = Activation::ReLU);

/// Selects the base LR from the grid (see select_max_lr) and folds in the
/// base graph's depth sum and kernel.
BaseCalibration calibrate_base(const GridResult& grid, const Dag& base_dag, int base_kernel);

/// Plan export: "key = value" header (lr, activation, kernel, output_init),
/// then one "src dst variance" line per weighted edge.
void write_plan(std::ostream& os, const ScalingPlan& plan);
ScalingPlan read_plan(std::istream& is);

/// Calibration file: "key = value" lines, then "base_dag:" followed by the
/// base graph in native format.
void write_calibration(std::ostream& os, const BaseCalibration& calib);
BaseCalibration read_calibration(std::istream& is);

}  // namespace archscale
