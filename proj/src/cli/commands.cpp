#include "archscale/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "archscale/archdsl.hpp"
#include "archscale/data.hpp"
#include "archscale/experiments.hpp"
#include "archscale/grid.hpp"
#include "archscale/nn.hpp"
#include "archscale/scaling.hpp"
#include "archscale/util.hpp"

namespace fs = std::filesystem;

namespace archscale {

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::IoError: return kExitMissingFile;
    case ErrorCode::AllRunsDiverged: return kExitAllDiverged;
    case ErrorCode::IdMismatch: return kExitIdMismatch;
    case ErrorCode::PathExplosion: return kExitInternal;
    default: return kExitConfig;
  }
}

namespace {

struct Options {
  std::string arch, cell, activation, ladder, seeds = "1,2,3", out, calibration, kind;
  std::string depths = "2,4,8,16", kernels = "1,3,5,7";
  std::string data = "synth", images, labels, label_mode = "centered-onehot";
  std::string predictions, groundtruth, table_a, table_b;
  std::string percentiles = "1,5,10,20,50,100";
  std::string output_init = "mean-field";
  int width = 128, pixels = 0, kernel = 1, trials = 200, workers = 1, batch = 16;
  int samples = 2048, classes = 10;
  std::uint64_t data_seed = 0;
  double lr = -1, lr_hint = 0.1, eta = 1e-3;
  bool compensate = false, linear = false, no_bias = false;
  bool ladder_given = false;
};

// Options that change results, in a fixed order. --out, --workers and
// --config are excluded: they never affect the produced numbers.
std::string canonical_config(const std::string& command, const Options& o) {
  std::ostringstream os;
  os << "command = " << command << '\n'
     << "arch = " << o.arch << '\n'
     << "cell = " << o.cell << '\n'
     << "width = " << o.width << '\n'
     << "pixels = " << o.pixels << '\n'
     << "kernel = " << o.kernel << '\n'
     << "activation = " << o.activation << '\n'
     << "output_init = " << o.output_init << '\n'
     << "ladder = " << o.ladder << '\n'
     << "lr_hint = " << format_double(o.lr_hint) << '\n'
     << "seeds = " << o.seeds << '\n'
     << "trials = " << o.trials << '\n'
     << "batch = " << o.batch << '\n'
     << "no_bias = " << o.no_bias << '\n'
     << "data = " << o.data << '\n'
     << "images = " << o.images << '\n'
     << "labels = " << o.labels << '\n'
     << "label_mode = " << o.label_mode << '\n'
     << "samples = " << o.samples << '\n'
     << "classes = " << o.classes << '\n'
     << "data_seed = " << o.data_seed << '\n'
     << "calibration = " << o.calibration << '\n'
     << "kind = " << o.kind << '\n'
     << "lr = " << format_double(o.lr) << '\n'
     << "eta = " << format_double(o.eta) << '\n'
     << "depths = " << o.depths << '\n'
     << "kernels = " << o.kernels << '\n'
     << "compensate = " << o.compensate << '\n'
     << "predictions = " << o.predictions << '\n'
     << "groundtruth = " << o.groundtruth << '\n'
     << "linear = " << o.linear << '\n'
     << "a = " << o.table_a << '\n'
     << "b = " << o.table_b << '\n'
     << "percentiles = " << o.percentiles << '\n';
  return os.str();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<int> int_list(const std::string& text, std::string_view what) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) out.push_back(static_cast<int>(parse_int(s, what)));
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " list is empty");
  return out;
}

std::vector<std::uint64_t> seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(text)) {
    const long long v = parse_int(s, "seed");
    if (v < 0) throw Error(ErrorCode::InvalidArgument, "seeds must be nonnegative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "at least one seed is required");
  return out;
}

// Architecture from --arch / --cell with the --kernel and --activation
// overrides applied; zero edges are pruned.
Dag load_arch(const Options& o, const Dag* fallback) {
  if (!o.arch.empty() && !o.cell.empty()) {
    throw Error(ErrorCode::InvalidArgument, "--arch and --cell are mutually exclusive");
  }
  Dag dag;
  if (!o.arch.empty()) {
    dag = parse_dagspec(read_text(o.arch));
  } else if (!o.cell.empty()) {
    dag = parse_nasbench201(o.cell);
  } else if (fallback) {
    dag = *fallback;
  } else {
    throw Error(ErrorCode::InvalidArgument, "an architecture is required (--arch or --cell)");
  }
  dag = prune_zero_edges(dag);
  if (o.kernel > max_weighted_kernel(dag)) dag = with_uniform_kernel(dag, o.kernel);
  if (!o.activation.empty()) dag = with_activation(dag, parse_activation(o.activation));
  return dag;
}

Activation plan_activation(const Options& o) {
  return o.activation.empty() ? Activation::ReLU : parse_activation(o.activation);
}

int pixels_or(const Options& o, int fallback) { return o.pixels > 0 ? o.pixels : fallback; }

// MLPs see each sample as one flat vector.
Dataset flatten(const Dataset& d) {
  Dataset out = d;
  out.channels = d.channels * d.pixels;
  out.pixels = 1;
  out.inputs = Eigen::Map<const Eigen::MatrixXd>(d.inputs.data(), out.channels,
                                                 static_cast<Eigen::Index>(d.count()));
  return out;
}

Dataset load_dataset(const Options& o, int pixels) {
  if (o.data == "synth") {
    if (o.samples < 1) throw Error(ErrorCode::InvalidArgument, "--samples must be >= 1");
    return synth_dataset(o.width, pixels, static_cast<std::size_t>(o.samples), o.data_seed,
                         parse_label_mode(o.label_mode), o.classes);
  }
  if (o.data == "idx") {
    if (o.images.empty() || o.labels.empty()) {
      throw Error(ErrorCode::InvalidArgument, "--data idx needs --images and --labels");
    }
    Dataset d = load_idx(o.images, o.labels);
    if (pixels == 1) return flatten(d);
    if (d.pixels != pixels) throw Error(ErrorCode::ShapeMismatch, "--pixels does not match the images");
    return d;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown --data '" + o.data + "' (synth or idx)");
}

class Outputs {
 public:
  Outputs(const Options& o, std::ostream& out) : dir_(o.out), out_(out) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  bool to_dir() const { return !dir_.empty(); }

  // Writes name under --out, or to stdout when no directory was given and
  // echo is set.
  void emit(const std::string& name, const std::string& content, bool echo = true) {
    if (!to_dir()) {
      if (echo) out_ << content;
      return;
    }
    std::ofstream f(fs::path(dir_) / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + (fs::path(dir_) / name).string());
    f << content;
  }

  void manifest(const std::string& command, const Options& o, const std::string& plan_text = {}) {
    if (!to_dir()) return;
    const std::string config = canonical_config(command, o);
    std::ostringstream os;
    os << "command = " << command << '\n'
       << "version = " << kToolVersion << '\n'
       << "config_hash = " << hex64(fnv1a64(config)) << '\n'
       << "seeds = " << o.seeds << '\n';
    if (!plan_text.empty()) os << "plan_hash = " << hex64(fnv1a64(plan_text)) << '\n';
    os << "# effective configuration\n" << config;
    emit("manifest.txt", os.str());
  }

 private:
  std::string dir_;
  std::ostream& out_;
};

std::string to_text(const auto& value, void (*writer)(std::ostream&, const std::decay_t<decltype(value)>&)) {
  std::ostringstream os;
  writer(os, value);
  return os.str();
}

// --- validate ---------------------------------------------------------------

int cmd_validate(const Options& o, std::ostream& out) {
  Dag dag = load_arch(o, nullptr);
  PathStats stats = enumerate_paths(dag, {.max_explicit_paths = 1'000'000, .dp_only = true});
  out << "P=" << to_string(stats.width) << " depths=";
  if (stats.width <= 64) {
    out << '[';
    bool first = true;
    for (int d : stats.depths()) {
      out << (first ? "" : ",") << d;
      first = false;
    }
    out << ']';
  } else {
    // too many paths to list; histogram depth:count
    out << '{';
    bool first = true;
    for (std::size_t d = 0; d < stats.depth_histogram.size(); ++d) {
      if (stats.depth_histogram[d] == 0) continue;
      out << (first ? "" : ",") << d << ':' << to_string(stats.depth_histogram[d]);
      first = false;
    }
    out << '}';
  }
  out << " sum=" << to_string(stats.depth_cubed_sum) << '\n';
  std::ostringstream csv;
  csv << "depth,paths\n";
  for (std::size_t d = 0; d < stats.depth_histogram.size(); ++d) {
    if (stats.depth_histogram[d] != 0) csv << d << ',' << to_string(stats.depth_histogram[d]) << '\n';
  }
  Outputs files(o, out);
  files.emit("paths.csv", csv.str(), false);
  files.manifest("validate", o);
  return kExitOk;
}

// --- plan -------------------------------------------------------------------

int cmd_plan(const Options& o, std::ostream& out) {
  if (o.calibration.empty()) throw Error(ErrorCode::IoError, "--calibration is required");
  std::istringstream cal(read_text(o.calibration));
  BaseCalibration calib = read_calibration(cal);
  Dag dag = load_arch(o, nullptr);
  ScalingPlan plan = make_plan(dag, calib, o.kernel, plan_activation(o));
  plan.output_init = parse_output_init(o.output_init);
  const std::string text = to_text(plan, &write_plan);
  Outputs files(o, out);
  out << "eta*=" << format_double(plan.lr) << '\n';
  files.emit("plan.txt", text);
  files.manifest("plan", o, text);
  return kExitOk;
}

// --- calibrate --------------------------------------------------------------

int cmd_calibrate(const Options& o, std::ostream& out) {
  const Dag base = make_chain(1);
  Dag dag = load_arch(o, &base);
  NetworkConfig config;
  config.dag = dag;
  config.width = o.width;
  config.pixels = pixels_or(o, 1);
  config.output_init = parse_output_init(o.output_init);
  config.bias = !o.no_bias;
  Dataset data = load_dataset(o, config.pixels);
  config.input_channels = data.channels;
  config.output_dim = data.output_dim();

  std::vector<double> ladder = !o.ladder_given ? default_ladder(o.lr_hint) : parse_ladder(o.ladder);
  ScalingPlan plan = plan_with_lr(dag, 0, plan_activation(o));
  plan.output_init = config.output_init;
  GridOptions go;
  go.batch_size = o.batch;
  go.workers = o.workers;
  GridResult grid = grid_search_max_lr(config, plan, data, ladder, seed_list(o.seeds), go);
  BaseCalibration calib = calibrate_base(grid, dag, std::max(o.kernel, max_weighted_kernel(dag)));

  Outputs files(o, out);
  out << "base_lr=" << format_double(calib.base_lr) << '\n';
  files.emit("calibration.txt", to_text(calib, &write_calibration));
  files.emit("grid.csv", to_text(grid, &write_grid_csv), false);
  files.emit("grid_summary.txt", to_text(grid, &write_grid_summary), false);
  files.manifest("calibrate", o, to_text(plan, &write_plan));
  return kExitOk;
}

// --- probe ------------------------------------------------------------------

int cmd_probe(const Options& o, std::ostream& out) {
  static const std::set<std::string> kinds{"info-flow", "delta-z", "depth-growth", "kernel-growth"};
  if (!kinds.count(o.kind)) {
    throw Error(ErrorCode::InvalidArgument,
                "--kind must be one of info-flow, delta-z, depth-growth, kernel-growth");
  }
  Outputs files(o, out);
  const auto seeds = seed_list(o.seeds);
  const std::uint64_t seed = seeds.front();

  if (o.kind == "depth-growth" || o.kind == "kernel-growth") {
    GrowthFit fit;
    std::string x_name;
    if (o.kind == "depth-growth") {
      fit = depth_growth_probe(int_list(o.depths, "depth"), o.width, o.eta, o.trials, seed, o.workers);
      x_name = "depth";
    } else {
      const Dag chain3 = make_chain(3);
      KernelProbeOptions ko;
      ko.pixels = pixels_or(o, 128);
      ko.compensate = o.compensate;
      ko.workers = o.workers;
      fit = kernel_growth_probe(int_list(o.kernels, "kernel"), load_arch(o, &chain3), o.width, o.eta,
                                o.trials, seed, ko);
      x_name = "kernel";
    }
    out << "slope=" << format_double(fit.slope) << " residual=" << format_double(fit.residual)
        << " output_slope=" << format_double(fit.output_slope) << '\n';
    std::ostringstream csv;
    write_growth_csv(csv, fit, x_name);
    files.emit("probe.csv", csv.str(), false);
    files.manifest("probe", o);
    return kExitOk;
  }

  NetworkConfig config;
  config.dag = load_arch(o, nullptr);
  config.width = o.width;
  config.pixels = pixels_or(o, 1);
  ScalingPlan plan = plan_with_lr(config.dag, 0, plan_activation(o));
  ProbeReport report;
  if (o.kind == "info-flow") {
    // every vertex, the output included, at the hidden scale
    config.output_dim = o.width;
    config.output_init = OutputInit::FanIn;
    plan.output_init = OutputInit::FanIn;
    report = info_flow_probe(config, plan, o.trials, seed, o.workers);
    out << "ratio=" << format_double(moment_ratio(report)) << '\n';
  } else {
    config.output_init = parse_output_init(o.output_init);
    double lr = o.lr;
    if (!o.calibration.empty()) {
      std::istringstream cal(read_text(o.calibration));
      plan = make_plan(config.dag, read_calibration(cal), o.kernel, plan_activation(o));
      if (lr < 0) lr = plan.lr;
    }
    if (lr < 0) throw Error(ErrorCode::InvalidArgument, "delta-z needs --lr or --calibration");
    plan.lr = lr;
    plan.output_init = config.output_init;
    report = delta_z_probe(config, plan, lr, o.trials, seed, o.workers);
    out << "output_delta=" << format_double(report.delta_moment.back()) << '\n';
  }
  std::ostringstream csv;
  write_probe_csv(csv, report);
  files.emit("probe.csv", csv.str(), false);
  files.manifest("probe", o, to_text(plan, &write_plan));
  return kExitOk;
}

// --- correlate / rank-compare -----------------------------------------------

// Two-column CSV "id,<value>" with a header row.
std::vector<std::pair<std::string, double>> read_id_table(const std::string& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::InvalidArgument, path + ": empty table");
  auto header = split_list(line);
  if (header.size() != 2 || header[0] != "id") {
    throw Error(ErrorCode::InvalidArgument, path + ": header must be id,<value>");
  }
  std::vector<std::pair<std::string, double>> rows;
  std::set<std::string> seen;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_list(line);
    if (cells.size() != 2) {
      throw Error(ErrorCode::InvalidArgument, path + ": line " + std::to_string(line_no) + " needs 2 fields");
    }
    if (!seen.insert(cells[0]).second) {
      throw Error(ErrorCode::IdMismatch, path + ": duplicate id '" + cells[0] + "'");
    }
    rows.emplace_back(cells[0], parse_double(cells[1], "value"));
  }
  return rows;
}

int cmd_correlate(const Options& o, std::ostream& out) {
  if (o.predictions.empty() || o.groundtruth.empty()) {
    throw Error(ErrorCode::InvalidArgument, "--predictions and --groundtruth are required");
  }
  auto pred = read_id_table(o.predictions);
  auto truth = read_id_table(o.groundtruth);
  std::map<std::string, double> p(pred.begin(), pred.end()), t(truth.begin(), truth.end());
  for (const auto& [id, v] : p) {
    if (!t.count(id)) throw Error(ErrorCode::IdMismatch, "id '" + id + "' has no ground truth");
  }
  if (p.size() != t.size()) throw Error(ErrorCode::IdMismatch, "ground truth has ids without predictions");

  std::vector<double> xs, ys;
  std::ostringstream csv;
  csv << "id,predicted_lr,groundtruth_lr\n";
  for (const auto& [id, v] : p) {
    const double g = t.at(id);
    csv << id << ',' << format_double(v) << ',' << format_double(g) << '\n';
    if (o.linear) {
      xs.push_back(v);
      ys.push_back(g);
    } else {
      if (!(v > 0) || !(g > 0)) throw Error(ErrorCode::DegenerateInput, "learning rates must be positive");
      xs.push_back(std::log10(v));
      ys.push_back(std::log10(g));
    }
  }
  const double r = pearson(xs, ys);
  Outputs files(o, out);
  out << "r=" << format_double(r) << '\n';
  files.emit("scatter.csv", csv.str(), false);
  files.manifest("correlate", o);
  return kExitOk;
}

// Best first: higher value, then id.
std::vector<std::string> ranking_of(std::vector<std::pair<std::string, double>> rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> ids;
  for (auto& r : rows) ids.push_back(r.first);
  return ids;
}

int cmd_rank_compare(const Options& o, std::ostream& out) {
  if (o.table_a.empty() || o.table_b.empty()) throw Error(ErrorCode::InvalidArgument, "--a and --b are required");
  auto a = ranking_of(read_id_table(o.table_a));
  auto b = ranking_of(read_id_table(o.table_b));
  auto taus = kendall_tau_topk(a, b, int_list(o.percentiles, "percentile"));
  std::ostringstream csv;
  csv << "K,tau\n";
  for (auto [k, tau] : taus) csv << k << ',' << format_double(tau) << '\n';
  Outputs files(o, out);
  files.emit("tau.csv", csv.str());
  files.manifest("rank-compare", o);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Architecture-aware learning-rate scaling and verification probes", "archscale"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "key = value configuration file; flags override it");
  app.require_subcommand(1);
  Options o;

  app.add_option("--arch", o.arch, "architecture file (native format)");
  app.add_option("--cell", o.cell, "NAS-Bench-201 cell string");
  app.add_option("--width", o.width, "hidden width n")->check(CLI::PositiveNumber);
  app.add_option("--pixels", o.pixels, "pixels per sample m (0: command default)")->check(CLI::NonNegativeNumber);
  app.add_option("--kernel", o.kernel, "kernel size q; rewrites weighted edges when larger")->check(CLI::PositiveNumber);
  app.add_option("--activation", o.activation, "relu or gelu");
  app.add_option("--output-init", o.output_init, "mean-field or fan-in");
  auto* ladder_opt = app.add_option("--ladder", o.ladder, "lo:hi:count or comma list");
  app.add_option("--lr-hint", o.lr_hint, "centre of the default ladder");
  app.add_option("--seeds", o.seeds, "comma-separated seeds");
  app.add_option("--trials", o.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "output directory (stdout when omitted)");
  app.add_option("--workers", o.workers, "parallel workers")->check(CLI::PositiveNumber);
  app.add_option("--batch", o.batch, "SGD batch size")->check(CLI::PositiveNumber);
  app.add_flag("--no-bias", o.no_bias, "train without biases");
  app.add_option("--data", o.data, "synth or idx");
  app.add_option("--images", o.images, "IDX image file");
  app.add_option("--labels", o.labels, "IDX label file");
  app.add_option("--label-mode", o.label_mode, "gaussian-scalar, linear-teacher or centered-onehot");
  app.add_option("--samples", o.samples, "synthetic sample count");
  app.add_option("--classes", o.classes, "classes for centered-onehot labels");
  app.add_option("--data-seed", o.data_seed, "synthetic data seed");
  app.add_option("--calibration", o.calibration, "calibration file from `calibrate`");
  app.add_option("--kind", o.kind, "info-flow, delta-z, depth-growth or kernel-growth");
  app.add_option("--lr", o.lr, "learning rate for delta-z");
  app.add_option("--eta", o.eta, "learning rate for the growth probes");
  app.add_option("--depths", o.depths, "depths for depth-growth");
  app.add_option("--kernels", o.kernels, "kernels for kernel-growth");
  app.add_flag("--compensate", o.compensate, "kernel-growth at eta / q");
  app.add_option("--predictions", o.predictions, "id,lr CSV of predicted learning rates");
  app.add_option("--groundtruth", o.groundtruth, "id,lr CSV of grid-search learning rates");
  app.add_flag("--linear", o.linear, "correlate raw learning rates instead of log10");
  app.add_option("--a", o.table_a, "id,accuracy CSV");
  app.add_option("--b", o.table_b, "id,accuracy CSV");
  app.add_option("--percentiles", o.percentiles, "top-K percentiles");

  auto* validate = app.add_subcommand("validate", "parse, validate and print path statistics");
  auto* plan = app.add_subcommand("plan", "per-edge variances and eta* from a calibration");
  auto* calibrate = app.add_subcommand("calibrate", "grid-search the base learning rate");
  auto* probe = app.add_subcommand("probe", "moment and growth-law probes");
  auto* correlate = app.add_subcommand("correlate", "Pearson r of predicted vs grid-search LRs");
  auto* rank = app.add_subcommand("rank-compare", "Kendall tau at top-K percentiles");
  for (auto* sub : {validate, plan, calibrate, probe, correlate, rank}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  o.ladder_given = ladder_opt->count() > 0;
  try {
    if (*validate) return cmd_validate(o, out);
    if (*plan) return cmd_plan(o, out);
    if (*calibrate) return cmd_calibrate(o, out);
    if (*probe) return cmd_probe(o, out);
    if (*correlate) return cmd_correlate(o, out);
    if (*rank) return cmd_rank_compare(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitConfig;
}

}  // namespace archscale
