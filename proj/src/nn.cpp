#include "archscale/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "archscale/error.hpp"
#include "archscale/util.hpp"

namespace archscale {

int NetworkConfig::channels(VertexId v) const noexcept {
  if (v == 0) return in_channels();
  if (v == dag.output()) return output_dim;
  return width;
}

void check_config(const NetworkConfig& config) {
  if (config.width < 1 || config.pixels < 1 || config.output_dim < 1 || config.input_channels < 0) {
    throw Error(ErrorCode::InvalidArgument, "width, pixels and output_dim must be >= 1");
  }
  auto violations = validate(config.dag);
  if (!violations.empty()) {
    throw Error(ErrorCode::InvalidArgument, "invalid graph: " + violations.front().message);
  }
  for (const auto& e : config.dag.edges()) {
    if (e.op.kind == OpKind::Zero) continue;
    if (is_weighted(e.op.kind)) {
      if (e.op.kernel > 2 * config.pixels - 1) {
        throw Error(ErrorCode::KernelTooLarge,
                    "kernel " + std::to_string(e.op.kernel) + " exceeds 2*pixels-1 for " +
                        std::to_string(config.pixels) + " pixels");
      }
    } else if (config.channels(e.src) != config.channels(e.dst)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "parameter-free edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                      ") joins vertices with " + std::to_string(config.channels(e.src)) + " and " +
                      std::to_string(config.channels(e.dst)) + " channels");
    }
  }
}

const EdgeParams* Params::find(VertexId src, VertexId dst) const noexcept {
  for (const auto& e : edges) {
    if (e.src == src && e.dst == dst) return &e;
  }
  return nullptr;
}

std::size_t Params::size() const noexcept {
  std::size_t n = 0;
  for (const auto& e : edges) n += static_cast<std::size_t>(e.weight.size() + e.bias.size());
  return n;
}

bool Params::all_finite() const {
  for (const auto& e : edges) {
    if (!e.weight.allFinite() || !e.bias.allFinite()) return false;
  }
  return true;
}

Params initialize(const NetworkConfig& config, const ScalingPlan& plan, std::uint64_t seed) {
  check_config(config);
  const Dag& dag = config.dag;
  for (const auto& [key, c] : plan.edge_variance) {
    const Edge* e = dag.find_edge(key.first, key.second);
    if (e == nullptr || !is_weighted(e->op.kind)) {
      throw Error(ErrorCode::PlanMismatch, "plan names (" + std::to_string(key.first) + "," +
                                               std::to_string(key.second) +
                                               "), which is not a weighted edge");
    }
    if (!(c > 0) || !std::isfinite(c)) {
      throw Error(ErrorCode::PlanMismatch, "plan variance must be positive and finite");
    }
  }
  Params p;
  for (const auto& e : dag.edges()) {
    if (!is_weighted(e.op.kind)) continue;
    auto it = plan.edge_variance.find({e.src, e.dst});
    if (it == plan.edge_variance.end()) {
      throw Error(ErrorCode::PlanMismatch, "plan lacks a variance for (" + std::to_string(e.src) +
                                               "," + std::to_string(e.dst) + ")");
    }
    const int fan_in = e.op.kernel * config.channels(e.src);
    double var = it->second / fan_in;
    if (e.dst == dag.output() && config.output_init == OutputInit::MeanField) var /= config.width;

    EdgeParams ep;
    ep.src = e.src;
    ep.dst = e.dst;
    ep.kernel = e.op.kernel;
    ep.weight.resize(config.channels(e.dst), fan_in);
    std::mt19937_64 rng(derive_seed(seed, (static_cast<std::uint64_t>(e.src) << 32) |
                                              static_cast<std::uint32_t>(e.dst)));
    std::normal_distribution<double> normal(0.0, std::sqrt(var));
    double* w = ep.weight.data();
    for (Eigen::Index i = 0; i < ep.weight.size(); ++i) w[i] = normal(rng);
    if (config.bias) ep.bias = Eigen::VectorXd::Zero(config.channels(e.dst));
    p.edges.push_back(std::move(ep));
  }
  return p;
}

// ---------------------------------------------------------------------------
// patch operator

namespace {

void check_patch_args(const Tensor& z, int q, int pixels) {
  if (q < 1 || q % 2 == 0) throw Error(ErrorCode::InvalidArgument, "kernel must be odd and >= 1");
  if (pixels < 1 || z.cols() % pixels != 0) {
    throw Error(ErrorCode::ShapeMismatch, "columns are not a multiple of the pixel count");
  }
  if (q > 2 * pixels - 1) {
    throw Error(ErrorCode::KernelTooLarge, "kernel " + std::to_string(q) + " exceeds 2*pixels-1 = " +
                                               std::to_string(2 * pixels - 1));
  }
}

}  // namespace

Tensor patchify(const Tensor& z, int q, int pixels) {
  check_patch_args(z, q, pixels);
  if (q == 1) return z;
  const Eigen::Index ch = z.rows();
  const Eigen::Index batch = z.cols() / pixels;
  const int half = (q - 1) / 2;
  Tensor out = Tensor::Zero(ch * q, z.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * pixels;
    for (int j = 0; j < pixels; ++j) {
      for (int k = 0; k < q; ++k) {
        const int src = j + k - half;
        if (src < 0 || src >= pixels) continue;
        for (Eigen::Index c = 0; c < ch; ++c) out(c * q + k, base + j) = z(c, base + src);
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, int q, int pixels) {
  if (q < 1 || patches.rows() % q != 0) {
    throw Error(ErrorCode::ShapeMismatch, "patch rows are not a multiple of the kernel");
  }
  const Eigen::Index ch = patches.rows() / q;
  check_patch_args(Tensor(ch, patches.cols()), q, pixels);
  if (q == 1) return patches;
  const Eigen::Index batch = patches.cols() / pixels;
  const int half = (q - 1) / 2;
  Tensor out = Tensor::Zero(ch, patches.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * pixels;
    for (int j = 0; j < pixels; ++j) {
      for (int k = 0; k < q; ++k) {
        const int src = j + k - half;
        if (src < 0 || src >= pixels) continue;
        for (Eigen::Index c = 0; c < ch; ++c) out(c, base + src) += patches(c * q + k, base + j);
      }
    }
  }
  return out;
}

Tensor avg_pool(const Tensor& z, int q, int pixels) {
  if (q < 1 || q % 2 == 0 || pixels < 1 || z.cols() % pixels != 0) {
    throw Error(ErrorCode::ShapeMismatch, "avg_pool needs odd window and whole samples");
  }
  const Eigen::Index batch = z.cols() / pixels;
  const int half = (q - 1) / 2;
  Tensor out = Tensor::Zero(z.rows(), z.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * pixels;
    for (int j = 0; j < pixels; ++j) {
      for (int k = -half; k <= half; ++k) {
        const int src = j + k;
        if (src >= 0 && src < pixels) out.col(base + j) += z.col(base + src);
      }
    }
  }
  return out / q;
}

double relu(double x) noexcept { return x > 0 ? x : 0.0; }
double relu_grad(double x) noexcept { return x > 0 ? 1.0 : 0.0; }

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

Tensor activate(const Tensor& z, OpKind kind) {
  return kind == OpKind::WeightedReLU ? z.unaryExpr([](double v) { return relu(v); }).eval()
                                      : z.unaryExpr([](double v) { return gelu(v); }).eval();
}

Tensor activate_grad(const Tensor& z, OpKind kind) {
  return kind == OpKind::WeightedReLU ? z.unaryExpr([](double v) { return relu_grad(v); }).eval()
                                      : z.unaryExpr([](double v) { return gelu_grad(v); }).eval();
}

const EdgeParams& params_for(const Params& params, const Edge& e, const NetworkConfig& config) {
  const EdgeParams* p = params.find(e.src, e.dst);
  if (p == nullptr) {
    throw Error(ErrorCode::PlanMismatch, "no parameters for edge (" + std::to_string(e.src) + "," +
                                             std::to_string(e.dst) + ")");
  }
  if (p->kernel != e.op.kernel || p->weight.rows() != config.channels(e.dst) ||
      p->weight.cols() != e.op.kernel * config.channels(e.src)) {
    throw Error(ErrorCode::ShapeMismatch, "parameter shape does not match edge (" +
                                              std::to_string(e.src) + "," + std::to_string(e.dst) + ")");
  }
  return *p;
}

}  // namespace

ActivationRecord forward(const Params& params, const Tensor& x, const NetworkConfig& config) {
  const Dag& dag = config.dag;
  const int m = config.pixels;
  if (x.rows() != config.in_channels() || x.cols() == 0 || x.cols() % m != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "input must be " + std::to_string(config.in_channels()) + " x (pixels * batch)");
  }
  ActivationRecord rec;
  rec.batch = static_cast<int>(x.cols() / m);
  rec.z.assign(dag.num_vertices(), Tensor());
  rec.z[0] = x;
  for (VertexId v : topo_order(dag)) {
    if (v == 0) continue;
    Tensor acc = Tensor::Zero(config.channels(v), x.cols());
    for (const auto& e : dag.in_edges(v)) {
      const Tensor& src = rec.z[e.src];
      switch (e.op.kind) {
        case OpKind::WeightedReLU:
        case OpKind::WeightedGELU: {
          const EdgeParams& p = params_for(params, e, config);
          Tensor a = activate(src, e.op.kind);
          if (e.op.kernel == 1) {
            acc.noalias() += p.weight * a;
          } else {
            acc.noalias() += p.weight * patchify(a, e.op.kernel, m);
          }
          if (p.bias.size() > 0) acc.colwise() += p.bias;
          break;
        }
        case OpKind::Identity:
          if (src.rows() != acc.rows()) throw Error(ErrorCode::ShapeMismatch, "identity edge channel mismatch");
          acc += src;
          break;
        case OpKind::AvgPool:
          if (src.rows() != acc.rows()) throw Error(ErrorCode::ShapeMismatch, "avg_pool edge channel mismatch");
          acc += avg_pool(src, e.op.kernel, m);
          break;
        case OpKind::Zero:
          break;
      }
    }
    rec.z[v] = std::move(acc);
  }
  return rec;
}

Tensor readout(const ActivationRecord& record, const NetworkConfig& config) {
  const Tensor& out = record.z.at(config.dag.output());
  const int m = config.pixels;
  if (m == 1) return out;
  Tensor pred(out.rows(), record.batch);
  for (int b = 0; b < record.batch; ++b) pred.col(b) = out.middleCols(b * m, m).rowwise().mean();
  return pred;
}

double mse_loss(const Tensor& pred, const Tensor& y, int batch) {
  if (pred.rows() != y.rows() || pred.cols() != y.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
  }
  if (batch < 1) throw Error(ErrorCode::InvalidArgument, "batch must be >= 1");
  return 0.5 * (pred - y).squaredNorm() / batch;
}

Grads backward(const Params& params, const ActivationRecord& record, const Tensor& x,
               const Tensor& y, const NetworkConfig& config) {
  const Dag& dag = config.dag;
  const int m = config.pixels;
  const int batch = record.batch;
  Tensor pred = readout(record, config);
  if (pred.rows() != y.rows() || pred.cols() != y.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "target shape does not match the network output");
  }

  std::vector<Tensor> g(dag.num_vertices());
  {
    const Tensor r = (pred - y) / static_cast<double>(batch);
    Tensor go(r.rows(), static_cast<Eigen::Index>(batch) * m);
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < m; ++j) go.col(static_cast<Eigen::Index>(b) * m + j) = r.col(b) / m;
    }
    g[dag.output()] = std::move(go);
  }

  Grads grads;
  for (const auto& p : params.edges) {
    EdgeParams z{p.src, p.dst, p.kernel, Eigen::MatrixXd::Zero(p.weight.rows(), p.weight.cols()),
                 Eigen::VectorXd::Zero(p.bias.size())};
    grads.edges.push_back(std::move(z));
  }
  auto grad_slot = [&](VertexId s, VertexId d) -> EdgeParams& {
    for (auto& e : grads.edges) {
      if (e.src == s && e.dst == d) return e;
    }
    throw Error(ErrorCode::PlanMismatch, "missing parameters");
  };
  auto accumulate = [&](VertexId v, const Tensor& t) {
    if (v == 0) return;  // no gradient w.r.t. the input is needed
    if (g[v].size() == 0) {
      g[v] = t;
    } else {
      g[v] += t;
    }
  };

  auto order = topo_order(dag);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const VertexId v = *it;
    if (v == 0 || g[v].size() == 0) continue;
    const Tensor& gv = g[v];
    for (const auto& e : dag.in_edges(v)) {
      const Tensor& zs = e.src == 0 ? x : record.z[e.src];
      switch (e.op.kind) {
        case OpKind::WeightedReLU:
        case OpKind::WeightedGELU: {
          const EdgeParams& p = params_for(params, e, config);
          EdgeParams& gp = grad_slot(e.src, e.dst);
          Tensor a = activate(zs, e.op.kind);
          if (e.op.kernel == 1) {
            gp.weight.noalias() += gv * a.transpose();
          } else {
            gp.weight.noalias() += gv * patchify(a, e.op.kernel, m).transpose();
          }
          if (gp.bias.size() > 0) gp.bias += gv.rowwise().sum();
          if (e.src != 0) {
            Tensor da = p.weight.transpose() * gv;
            if (e.op.kernel != 1) da = unpatchify(da, e.op.kernel, m);
            accumulate(e.src, da.cwiseProduct(activate_grad(zs, e.op.kind)));
          }
          break;
        }
        case OpKind::Identity:
          accumulate(e.src, gv);
          break;
        case OpKind::AvgPool:
          // a centred window mean with zero padding is self-adjoint
          accumulate(e.src, avg_pool(gv, e.op.kernel, m));
          break;
        case OpKind::Zero:
          break;
      }
    }
  }
  return grads;
}

Params sgd_step(const Params& params, const Grads& grads, double lr) {
  if (params.edges.size() != grads.edges.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter and gradient sets differ");
  }
  Params out = params;
  for (std::size_t i = 0; i < out.edges.size(); ++i) {
    auto& p = out.edges[i];
    const auto& g = grads.edges[i];
    if (p.src != g.src || p.dst != g.dst || p.weight.rows() != g.weight.rows() ||
        p.weight.cols() != g.weight.cols() || p.bias.size() != g.bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient shape mismatch");
    }
    p.weight -= lr * g.weight;
    if (p.bias.size() > 0) p.bias -= lr * g.bias;
  }
  return out;
}

Params sgd_step(const Params& params, const Grads& grads, double lr, const NetworkConfig& config) {
  Params out = sgd_step(params, grads, lr);
  if (config.output_lr == OutputLr::MeanField) {
    // undo the plain step on output edges and redo it at lr / width
    const double out_lr = lr / config.width;
    for (std::size_t i = 0; i < out.edges.size(); ++i) {
      auto& p = out.edges[i];
      if (p.dst != config.dag.output()) continue;
      p.weight = params.edges[i].weight - out_lr * grads.edges[i].weight;
      if (p.bias.size() > 0) p.bias = params.edges[i].bias - out_lr * grads.edges[i].bias;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// training

Tensor gather_inputs(const Dataset& data, const std::vector<std::size_t>& idx) {
  const int m = data.pixels;
  Tensor x(data.inputs.rows(), static_cast<Eigen::Index>(idx.size()) * m);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    x.middleCols(static_cast<Eigen::Index>(b) * m, m) =
        data.inputs.middleCols(static_cast<Eigen::Index>(idx[b]) * m, m);
  }
  return x;
}

Tensor gather_targets(const Dataset& data, const std::vector<std::size_t>& idx) {
  Tensor y(data.targets.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    y.col(static_cast<Eigen::Index>(b)) = data.targets.col(static_cast<Eigen::Index>(idx[b]));
  }
  return y;
}

namespace {

void check_dataset(const Dataset& data, const NetworkConfig& config) {
  if (data.count() == 0) throw Error(ErrorCode::InvalidArgument, "dataset is empty");
  if (data.pixels != config.pixels || data.inputs.rows() != config.in_channels() ||
      data.output_dim() != config.output_dim) {
    throw Error(ErrorCode::ShapeMismatch, "dataset shape does not match the network config");
  }
}

}  // namespace

TrainResult train_one_epoch(const Params& params, const Dataset& data, double lr,
                            const NetworkConfig& config, const TrainOptions& opts) {
  check_dataset(data, config);
  if (opts.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  std::vector<std::size_t> order(data.count());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  TrainResult result;
  result.params = params;
  const std::size_t bs = static_cast<std::size_t>(opts.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
    Tensor x = gather_inputs(data, idx);
    Tensor y = gather_targets(data, idx);
    ActivationRecord rec = forward(result.params, x, config);
    const double loss = mse_loss(readout(rec, config), y);
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss) || loss > opts.divergence_loss) {
      result.diverged = true;
      break;
    }
    Grads g = backward(result.params, rec, x, y, config);
    result.params = sgd_step(result.params, g, lr, config);
  }
  return result;
}

double evaluate_loss(const Params& params, const Dataset& data, const NetworkConfig& config) {
  check_dataset(data, config);
  constexpr std::size_t kChunk = 256;
  double total = 0;
  for (std::size_t start = 0; start < data.count(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.count(), start + kChunk); ++i) idx.push_back(i);
    ActivationRecord rec = forward(params, gather_inputs(data, idx), config);
    total += mse_loss(readout(rec, config), gather_targets(data, idx)) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.count());
}

void write_loss_trace(std::ostream& os, const TrainResult& result) {
  os << "step,loss\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    const double l = result.loss_trace[i];
    const bool marker = result.diverged && i + 1 == result.loss_trace.size();
    os << i << ',' << (marker || !std::isfinite(l) ? "diverged" : format_double(l)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// archive

namespace {

void put_le(std::ostream& os, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

double get_le(const std::string& bytes, std::size_t index) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(bytes[index * 8 + static_cast<std::size_t>(i)]);
  }
  double v = 0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_params(const Params& params, const std::filesystem::path& bin,
                 const std::filesystem::path& manifest) {
  std::ofstream data(bin, std::ios::binary | std::ios::trunc);
  std::ofstream text(manifest, std::ios::trunc);
  if (!data || !text) throw Error(ErrorCode::IoError, "cannot write parameter archive");
  text << "# name src dst rows cols offset kernel\n";
  std::size_t offset = 0;
  for (const auto& e : params.edges) {
    text << "weight " << e.src << ' ' << e.dst << ' ' << e.weight.rows() << ' ' << e.weight.cols()
         << ' ' << offset << ' ' << e.kernel << '\n';
    for (Eigen::Index i = 0; i < e.weight.size(); ++i) put_le(data, e.weight.data()[i]);
    offset += static_cast<std::size_t>(e.weight.size());
    if (e.bias.size() > 0) {
      text << "bias " << e.src << ' ' << e.dst << ' ' << e.bias.size() << " 1 " << offset << ' '
           << e.kernel << '\n';
      for (Eigen::Index i = 0; i < e.bias.size(); ++i) put_le(data, e.bias[i]);
      offset += static_cast<std::size_t>(e.bias.size());
    }
  }
  if (!data || !text) throw Error(ErrorCode::IoError, "parameter archive write failed");
}

Params load_params(const std::filesystem::path& bin, const std::filesystem::path& manifest) {
  std::ifstream data(bin, std::ios::binary);
  std::ifstream text(manifest);
  if (!data || !text) throw Error(ErrorCode::IoError, "cannot open parameter archive");
  std::ostringstream buf;
  buf << data.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() % 8 != 0) throw Error(ErrorCode::TruncatedFile, "archive size is not a multiple of 8");
  const std::size_t count = bytes.size() / 8;

  Params p;
  std::string line;
  while (std::getline(text, line)) {
    std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    std::istringstream row{std::string(s)};
    std::string name;
    long long src = 0, dst = 0, rows = 0, cols = 0, offset = 0, kernel = 1;
    if (!(row >> name >> src >> dst >> rows >> cols >> offset >> kernel) || rows < 0 || cols < 0 ||
        offset < 0) {
      throw Error(ErrorCode::InvalidArgument, "bad manifest line '" + std::string(s) + "'");
    }
    if (static_cast<std::size_t>(offset + rows * cols) > count) {
      throw Error(ErrorCode::TruncatedFile, "manifest entry runs past the end of the archive");
    }
    if (name == "weight") {
      EdgeParams e;
      e.src = static_cast<int>(src);
      e.dst = static_cast<int>(dst);
      e.kernel = static_cast<int>(kernel);
      e.weight.resize(rows, cols);
      for (long long i = 0; i < rows * cols; ++i) {
        e.weight.data()[i] = get_le(bytes, static_cast<std::size_t>(offset + i));
      }
      p.edges.push_back(std::move(e));
    } else if (name == "bias") {
      if (p.edges.empty() || p.edges.back().src != src || p.edges.back().dst != dst) {
        throw Error(ErrorCode::InvalidArgument, "bias entry must follow its weight entry");
      }
      auto& b = p.edges.back().bias;
      b.resize(rows);
      for (long long i = 0; i < rows; ++i) b[i] = get_le(bytes, static_cast<std::size_t>(offset + i));
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown manifest entry '" + name + "'");
    }
  }
  return p;
}

}  // namespace archscale
