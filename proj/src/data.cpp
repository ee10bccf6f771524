#include "archscale/data.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "archscale/error.hpp"
#include "archscale/util.hpp"

namespace archscale {

Eigen::MatrixXd Dataset::input(std::size_t i) const {
  return inputs.middleCols(static_cast<Eigen::Index>(i) * pixels, pixels);
}

Eigen::VectorXd Dataset::target(std::size_t i) const {
  return targets.col(static_cast<Eigen::Index>(i));
}

std::string_view to_string(LabelMode mode) noexcept {
  switch (mode) {
    case LabelMode::GaussianScalar: return "gaussian-scalar";
    case LabelMode::LinearTeacher: return "linear-teacher";
    case LabelMode::CenteredOneHot: return "centered-onehot";
  }
  return "?";
}

LabelMode parse_label_mode(std::string_view name) {
  if (name == "gaussian-scalar") return LabelMode::GaussianScalar;
  if (name == "linear-teacher") return LabelMode::LinearTeacher;
  if (name == "centered-onehot") return LabelMode::CenteredOneHot;
  throw Error(ErrorCode::InvalidArgument, "unknown label mode '" + std::string(name) + "'");
}

Eigen::MatrixXd centered_onehot(const std::vector<int>& labels, int classes) {
  if (classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
  const double k = classes;
  const double off = -1.0 / k;
  const double scale = 1.0 / std::sqrt((k - 1) / (k * k));
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Constant(classes, static_cast<Eigen::Index>(labels.size()), off * scale);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(labels[i]) + " out of range");
    }
    out(labels[i], static_cast<Eigen::Index>(i)) = (1.0 + off) * scale;
  }
  return out;
}

Dataset synth_dataset(int channels, int pixels, std::size_t count, std::uint64_t seed,
                      LabelMode mode, int classes) {
  if (channels < 1 || pixels < 1 || count < 1) {
    throw Error(ErrorCode::InvalidArgument, "synth_dataset needs channels, pixels, count >= 1");
  }
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.channels = channels;
  d.pixels = pixels;
  d.meta.source = "synthetic:" + std::string(to_string(mode)) + ":seed=" + std::to_string(seed);
  const auto cols = static_cast<Eigen::Index>(pixels * count);
  d.inputs.resize(channels, cols);
  // column by column so the stream layout does not depend on Eigen storage order
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index c = 0; c < channels; ++c) d.inputs(c, j) = normal(rng);
  }

  std::mt19937_64 label_rng(derive_seed(seed, 1));
  const auto n = static_cast<Eigen::Index>(count);
  switch (mode) {
    case LabelMode::GaussianScalar: {
      d.targets.resize(1, n);
      for (Eigen::Index i = 0; i < n; ++i) d.targets(0, i) = normal(label_rng);
      break;
    }
    case LabelMode::LinearTeacher:
    case LabelMode::CenteredOneHot: {
      const int outs = mode == LabelMode::LinearTeacher ? 1 : classes;
      Eigen::MatrixXd teacher(outs, channels * pixels);
      for (Eigen::Index j = 0; j < teacher.cols(); ++j) {
        for (Eigen::Index r = 0; r < outs; ++r) teacher(r, j) = normal(label_rng);
      }
      teacher /= std::sqrt(static_cast<double>(channels * pixels));
      Eigen::MatrixXd scores(outs, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Map<const Eigen::VectorXd> flat(d.inputs.col(i * pixels).data(),
                                               static_cast<Eigen::Index>(channels) * pixels);
        scores.col(i) = teacher * flat;
      }
      if (mode == LabelMode::LinearTeacher) {
        d.targets = scores;
      } else {
        std::vector<int> labels(count);
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::Index best = 0;
          scores.col(i).maxCoeff(&best);
          labels[i] = static_cast<int>(best);
        }
        d.targets = centered_onehot(labels, classes);
      }
      break;
    }
  }
  return normalize(d);
}

Dataset normalize(const Dataset& data) {
  if (data.count() == 0) throw Error(ErrorCode::DegenerateData, "empty dataset");
  Dataset out = data;
  const double per_entry =
      data.inputs.squaredNorm() / (static_cast<double>(data.inputs.rows()) * data.inputs.cols());
  if (!(per_entry > 0) || !std::isfinite(per_entry)) {
    throw Error(ErrorCode::DegenerateData, "inputs are all zero or non-finite");
  }
  const double s = 1.0 / std::sqrt(per_entry);
  out.inputs *= s;

  const Eigen::VectorXd mean = data.targets.rowwise().mean();
  Eigen::MatrixXd centered = data.targets.colwise() - mean;
  Eigen::VectorXd sd =
      (centered.array().square().rowwise().sum() / static_cast<double>(data.count())).sqrt();
  for (Eigen::Index r = 0; r < sd.size(); ++r) {
    if (!(sd[r] > 0) || !std::isfinite(sd[r])) {
      throw Error(ErrorCode::DegenerateData,
                  "target component " + std::to_string(r) + " has zero variance");
    }
  }
  out.targets = centered.array().colwise() / sd.array();

  // compose with any earlier normalization so meta always maps raw <-> current
  auto& m = out.meta;
  if (!data.meta.normalized) {
    m.input_scale = s;
    m.target_mean = mean;
    m.target_std = sd;
  } else {
    m.input_scale = data.meta.input_scale * s;
    m.target_mean = data.meta.target_mean + data.meta.target_std.cwiseProduct(mean);
    m.target_std = data.meta.target_std.cwiseProduct(sd);
  }
  m.normalized = true;
  return out;
}

Dataset inverse_normalize(const Dataset& data) {
  Dataset out = data;
  if (!data.meta.normalized) return out;
  out.inputs /= data.meta.input_scale;
  out.targets = (data.targets.array().colwise() * data.meta.target_std.array()).colwise() +
                data.meta.target_mean.array();
  out.meta = Dataset::Metadata{};
  out.meta.source = data.meta.source;
  return out;
}

// ---------------------------------------------------------------------------
// IDX

std::string encode_idx(const IdxArray& array) {
  std::string out;
  out.push_back(0);
  out.push_back(0);
  out.push_back(static_cast<char>(array.type));
  out.push_back(static_cast<char>(array.dims.size()));
  for (std::uint32_t d : array.dims) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((d >> shift) & 0xff));
  }
  out.append(reinterpret_cast<const char*>(array.data.data()), array.data.size());
  return out;
}

IdxArray parse_idx(const std::string& bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "IDX header shorter than 4 bytes");
  auto byte = [&](std::size_t i) { return static_cast<std::uint8_t>(bytes[i]); };
  if (byte(0) != 0 || byte(1) != 0) throw Error(ErrorCode::BadMagic, "IDX magic must start with two zero bytes");
  IdxArray a;
  a.type = byte(2);
  if (a.type != 0x08) {
    throw Error(ErrorCode::BadMagic, "unsupported IDX element type 0x" + hex64(a.type).substr(14));
  }
  const std::size_t ndim = byte(3);
  if (ndim == 0) throw Error(ErrorCode::BadMagic, "IDX with zero dimensions");
  if (bytes.size() < 4 + 4 * ndim) throw Error(ErrorCode::TruncatedFile, "IDX dimension table truncated");
  std::uint64_t total = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    std::uint32_t d = 0;
    for (int b = 0; b < 4; ++b) d = (d << 8) | byte(4 + 4 * k + b);
    a.dims.push_back(d);
    total *= d;
    if (total > (std::uint64_t(1) << 40)) throw Error(ErrorCode::TruncatedFile, "IDX dimensions implausibly large");
  }
  const std::size_t offset = 4 + 4 * ndim;
  if (bytes.size() - offset < total) {
    throw Error(ErrorCode::TruncatedFile, "IDX payload has " + std::to_string(bytes.size() - offset) +
                                              " bytes, expected " + std::to_string(total));
  }
  if (bytes.size() - offset > total) {
    throw Error(ErrorCode::TruncatedFile, "IDX payload has trailing bytes");
  }
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return a;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_idx(buf.str());
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::string bytes = encode_idx(array);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxArray img = read_idx(images);
  IdxArray lab = read_idx(labels);
  if (img.dims.size() < 2) throw Error(ErrorCode::ShapeMismatch, "image file needs N x pixels dims");
  if (lab.dims.size() != 1) throw Error(ErrorCode::ShapeMismatch, "label file needs a single dimension");
  const std::size_t n = img.dims[0];
  if (lab.dims[0] != n) {
    throw Error(ErrorCode::ShapeMismatch, "image and label counts differ");
  }
  std::size_t pixels = 1;
  for (std::size_t k = 1; k < img.dims.size(); ++k) pixels *= img.dims[k];

  Dataset d;
  d.channels = 1;
  d.pixels = static_cast<int>(pixels);
  d.meta.source = "idx:" + images.filename().string();
  d.inputs.resize(1, static_cast<Eigen::Index>(n * pixels));
  for (std::size_t i = 0; i < n * pixels; ++i) d.inputs(0, static_cast<Eigen::Index>(i)) = img.data[i];
  std::vector<int> ids(lab.data.begin(), lab.data.end());
  int classes = 2;
  for (int v : ids) classes = std::max(classes, v + 1);
  d.targets = centered_onehot(ids, classes);
  // classes absent from the file would have zero variance; keep only present ones
  std::vector<Eigen::Index> present;
  for (int c = 0; c < classes; ++c) {
    if (std::find(ids.begin(), ids.end(), c) != ids.end()) present.push_back(c);
  }
  if (present.size() < 2) throw Error(ErrorCode::DegenerateData, "labels contain a single class");
  if (static_cast<int>(present.size()) != classes) d.targets = d.targets(present, Eigen::all).eval();
  return normalize(d);
}

std::vector<LabelRow> read_label_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "id,label") {
    throw Error(ErrorCode::InvalidArgument, "label CSV must start with header 'id,label'");
  }
  std::vector<LabelRow> rows;
  while (std::getline(is, line)) {
    std::string_view s = trim(line);
    if (s.empty()) continue;
    auto comma = s.find(',');
    if (comma == std::string_view::npos) {
      throw Error(ErrorCode::InvalidArgument, "label CSV row needs two fields: '" + std::string(s) + "'");
    }
    rows.push_back({std::string(trim(s.substr(0, comma))), parse_double(s.substr(comma + 1), "label")});
  }
  return rows;
}

void write_label_csv(std::ostream& os, const std::vector<LabelRow>& rows) {
  os << "id,label\n";
  for (const auto& r : rows) os << r.id << ',' << format_double(r.label) << '\n';
}

}  // namespace archscale
