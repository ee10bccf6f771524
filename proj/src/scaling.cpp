#include "archscale/scaling.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "archscale/archdsl.hpp"
#include "archscale/error.hpp"
#include "archscale/util.hpp"

namespace archscale {

std::string_view to_string(OutputInit rule) noexcept {
  return rule == OutputInit::MeanField ? "mean-field" : "fan-in";
}

OutputInit parse_output_init(std::string_view name) {
  if (name == "mean-field") return OutputInit::MeanField;
  if (name == "fan-in") return OutputInit::FanIn;
  throw Error(ErrorCode::InvalidArgument, "unknown output init '" + std::string(name) + "'");
}

double edge_variance(const Dag& dag, VertexId src, VertexId dst) {
  const Edge* e = dag.find_edge(src, dst);
  if (e == nullptr || !is_weighted(e->op.kind)) {
    throw Error(ErrorCode::NotWeightedEdge, "(" + std::to_string(src) + "," +
                                                std::to_string(dst) + ") is not a weighted edge");
  }
  return 2.0 / in_degree(dag, dst);
}

double depth_cubed_floor(const Dag& dag) {
  PathOptions dp;
  dp.dp_only = true;
  const double sum = static_cast<double>(enumerate_paths(dag, dp).depth_cubed_sum);
  return std::max(sum, 1.0);
}

namespace {

void check_kernel(int q) {
  if (q < 1 || q % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "kernel must be odd and >= 1, got " + std::to_string(q));
  }
}

}  // namespace

double lr_scale(const BaseCalibration& calib, const Dag& target, int kernel) {
  check_kernel(kernel);
  // Written as base_lr * (base factor / target factor), which equals
  // constant_c / (sqrt(sum) * q) and is exact when target == base.
  const double base = std::sqrt(depth_cubed_floor(calib.base_dag)) * calib.base_kernel;
  const double target_factor = std::sqrt(depth_cubed_floor(target)) * kernel;
  return calib.base_lr * (base / target_factor);
}

ScalingPlan make_plan(const Dag& dag, const BaseCalibration& calib, int kernel,
                      Activation activation) {
  check_kernel(kernel);
  ScalingPlan plan = plan_with_lr(dag, 1.0, activation);
  plan.kernel = std::max(kernel, max_weighted_kernel(dag));
  plan.lr = lr_scale(calib, dag, plan.kernel);
  return plan;
}

ScalingPlan plan_with_lr(const Dag& dag, double lr, Activation activation) {
  ScalingPlan plan;
  for (const auto& e : dag.edges()) {
    if (is_weighted(e.op.kind)) plan.edge_variance[{e.src, e.dst}] = edge_variance(dag, e.src, e.dst);
  }
  plan.lr = lr;
  plan.activation = activation;
  plan.kernel = max_weighted_kernel(dag);
  return plan;
}

BaseCalibration calibrate_base(const GridResult& grid, const Dag& base_dag, int base_kernel) {
  check_kernel(base_kernel);
  const std::size_t pick = select_max_lr(grid.ladder, grid.final_losses);
  BaseCalibration calib;
  calib.base_dag = base_dag;
  calib.base_kernel = base_kernel;
  calib.base_lr = grid.ladder[pick];
  calib.constant_c = calib.base_lr * std::sqrt(depth_cubed_floor(base_dag)) * base_kernel;
  return calib;
}

// ---------------------------------------------------------------------------
// text formats

namespace {

struct KeyValue {
  std::string key;
  std::string value;
};

// Splits "key = value"; returns false for blank and comment lines.
bool split_kv(const std::string& line, KeyValue& out) {
  std::string_view s = trim(line);
  if (s.empty() || s.front() == '#') return false;
  auto eq = s.find('=');
  if (eq == std::string_view::npos) {
    throw Error(ErrorCode::InvalidArgument, "expected 'key = value', got '" + std::string(s) + "'");
  }
  out.key = std::string(trim(s.substr(0, eq)));
  out.value = std::string(trim(s.substr(eq + 1)));
  return true;
}

}  // namespace

void write_plan(std::ostream& os, const ScalingPlan& plan) {
  os << "lr = " << format_double(plan.lr) << '\n';
  os << "activation = " << to_string(plan.activation) << '\n';
  os << "kernel = " << plan.kernel << '\n';
  os << "output_init = " << to_string(plan.output_init) << '\n';
  os << "# src dst variance\n";
  for (const auto& [edge, c] : plan.edge_variance) {
    os << edge.first << ' ' << edge.second << ' ' << format_double(c) << '\n';
  }
}

ScalingPlan read_plan(std::istream& is) {
  ScalingPlan plan;
  bool have_lr = false;
  std::string line;
  while (std::getline(is, line)) {
    std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (s.find('=') != std::string_view::npos) {
      KeyValue kv;
      split_kv(line, kv);
      if (kv.key == "lr") {
        plan.lr = parse_double(kv.value, "lr");
        have_lr = true;
      } else if (kv.key == "activation") {
        plan.activation = parse_activation(kv.value);
      } else if (kv.key == "kernel") {
        plan.kernel = static_cast<int>(parse_int(kv.value, "kernel"));
      } else if (kv.key == "output_init") {
        plan.output_init = parse_output_init(kv.value);
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown plan key '" + kv.key + "'");
      }
      continue;
    }
    std::istringstream row{std::string(s)};
    std::string a, b, c, extra;
    if (!(row >> a >> b >> c) || (row >> extra)) {
      throw Error(ErrorCode::InvalidArgument, "plan edge line must be 'src dst variance'");
    }
    plan.edge_variance[{static_cast<int>(parse_int(a, "src")), static_cast<int>(parse_int(b, "dst"))}] =
        parse_double(c, "variance");
  }
  if (!have_lr || !(plan.lr > 0) || !std::isfinite(plan.lr)) {
    throw Error(ErrorCode::InvalidArgument, "plan needs a positive finite lr");
  }
  return plan;
}

void write_calibration(std::ostream& os, const BaseCalibration& calib) {
  os << "base_lr = " << format_double(calib.base_lr) << '\n';
  os << "base_kernel = " << calib.base_kernel << '\n';
  os << "constant_c = " << format_double(calib.constant_c) << '\n';
  os << "base_dag:\n" << serialize(calib.base_dag);
}

BaseCalibration read_calibration(std::istream& is) {
  BaseCalibration calib;
  bool have_lr = false, have_c = false;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line) == "base_dag:") {
      std::ostringstream rest;
      rest << is.rdbuf();
      calib.base_dag = parse_dagspec(rest.str());
      if (!have_lr || !have_c || !(calib.base_lr > 0)) {
        throw Error(ErrorCode::InvalidArgument, "calibration file lacks base_lr or constant_c");
      }
      return calib;
    }
    KeyValue kv;
    if (!split_kv(line, kv)) continue;
    if (kv.key == "base_lr") {
      calib.base_lr = parse_double(kv.value, "base_lr");
      have_lr = true;
    } else if (kv.key == "base_kernel") {
      calib.base_kernel = static_cast<int>(parse_int(kv.value, "base_kernel"));
      check_kernel(calib.base_kernel);
    } else if (kv.key == "constant_c") {
      calib.constant_c = parse_double(kv.value, "constant_c");
      have_c = true;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown calibration key '" + kv.key + "'");
    }
  }
  throw Error(ErrorCode::InvalidArgument, "calibration file lacks the base_dag section");
}

}  // namespace archscale
