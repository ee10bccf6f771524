#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace archscale {

/// Samples stored side by side: sample i occupies input columns
/// [i*pixels, (i+1)*pixels) and target column i.
struct Dataset {
  Eigen::MatrixXd inputs;   ///< channels x (pixels * count)
  Eigen::MatrixXd targets;  ///< output_dim x count
  int channels = 0;
  int pixels = 1;

  struct Metadata {
    std::string source;
    double input_scale = 1;           ///< normalized = raw * input_scale
    Eigen::VectorXd target_mean;      ///< normalized = (raw - mean) / std
    Eigen::VectorXd target_std;
    bool normalized = false;
  } meta;

  std::size_t count() const noexcept { return static_cast<std::size_t>(targets.cols()); }
  int output_dim() const noexcept { return static_cast<int>(targets.rows()); }
  Eigen::MatrixXd input(std::size_t i) const;  ///< channels x pixels
  Eigen::VectorXd target(std::size_t i) const;
};

enum class LabelMode {
  GaussianScalar,  ///< y ~ N(0, 1), independent of x
  LinearTeacher,   ///< y = <v, x> / sqrt(channels * pixels) with fixed random v
  CenteredOneHot,  ///< k-class one-hot from a random linear teacher, centred and scaled
};

std::string_view to_string(LabelMode mode) noexcept;
LabelMode parse_label_mode(std::string_view name);

/// Standard Gaussian inputs of shape channels x pixels, labels per mode,
/// then normalize(). Deterministic in seed. classes is used by
/// CenteredOneHot only.
Dataset synth_dataset(int channels, int pixels, std::size_t count, std::uint64_t seed,
                      LabelMode mode, int classes = 10);

/// Scales inputs by one global scalar so that the dataset mean of
/// ||x||^2 / (channels * pixels) is 1, and standardizes each target
/// component to mean 0, variance 1 (population). Constants are composed
/// into meta so that inverse_normalize recovers the raw data. Throws
/// DegenerateData on all-zero inputs or a constant target component.
Dataset normalize(const Dataset& data);
Dataset inverse_normalize(const Dataset& data);

/// Per-sample label indices for one-hot encoding. Centred one-hot rows:
/// (onehot - 1/k) / sqrt((k-1)/k^2) so each component has mean 0 and
/// variance 1 under balanced classes; normalize() finishes the job.
Eigen::MatrixXd centered_onehot(const std::vector<int>& labels, int classes);

// ---------------------------------------------------------------------------
// IDX files (big-endian magic 0x00 0x00 type ndim, then ndim u32 dims)

struct IdxArray {
  std::uint8_t type = 0x08;  ///< only unsigned byte payloads are supported
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);
IdxArray parse_idx(const std::string& bytes);
std::string encode_idx(const IdxArray& array);

/// Images (N x rows x cols, or N x pixels) flattened to one channel with
/// rows*cols pixels; labels (N) turned into centred one-hot targets over
/// max(label)+1 classes (at least 2); then normalized. Throws BadMagic,
/// TruncatedFile, or ShapeMismatch when the two files disagree on N.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// CSV target table "id,label" (header required).
struct LabelRow {
  std::string id;
  double label = 0;
};
std::vector<LabelRow> read_label_csv(std::istream& is);
void write_label_csv(std::ostream& os, const std::vector<LabelRow>& rows);

}  // namespace archscale
