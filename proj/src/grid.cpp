#include "archscale/grid.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "archscale/error.hpp"
#include "archscale/util.hpp"

namespace archscale {

double mean_final_loss(const std::vector<double>& per_seed) {
  if (per_seed.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0;
  for (double v : per_seed) {
    if (!std::isfinite(v)) return std::numeric_limits<double>::quiet_NaN();
    sum += v;
  }
  return sum / static_cast<double>(per_seed.size());
}

std::size_t select_max_lr(const std::vector<double>& ladder,
                          const std::vector<std::vector<double>>& final_losses) {
  if (ladder.size() != final_losses.size()) {
    throw Error(ErrorCode::InvalidArgument, "ladder and loss table sizes differ");
  }
  std::vector<double> means(ladder.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    means[i] = mean_final_loss(final_losses[i]);
    if (std::isfinite(means[i]) && means[i] < best) best = means[i];
  }
  if (!std::isfinite(best)) {
    throw Error(ErrorCode::AllRunsDiverged, "every learning rate in the grid diverged");
  }
  const double band = kLossTieTolerance * std::max(std::abs(best), 1e-300);
  std::size_t pick = ladder.size();
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!std::isfinite(means[i]) || means[i] - best > band) continue;
    if (pick == ladder.size() || ladder[i] > ladder[pick]) pick = i;
  }
  return pick;
}

std::vector<double> log_ladder(double lo, double hi, int count) {
  if (!(lo > 0) || !(hi > lo) || count < 2) {
    throw Error(ErrorCode::InvalidArgument, "ladder needs 0 < lo < hi and at least 2 points");
  }
  std::vector<double> out(count);
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < count; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * i / (count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<double> default_ladder(double hint) {
  return log_ladder(hint * 1e-2, hint * 1e2, 25);
}

std::vector<double> parse_ladder(const std::string& spec) {
  std::string_view s = trim(spec);
  std::vector<double> out;
  if (auto colon = s.find(':'); colon != std::string_view::npos) {
    auto second = s.find(':', colon + 1);
    if (second == std::string_view::npos) {
      throw Error(ErrorCode::InvalidArgument, "ladder range must be lo:hi:count");
    }
    double lo = parse_double(s.substr(0, colon), "ladder lo");
    double hi = parse_double(s.substr(colon + 1, second - colon - 1), "ladder hi");
    long long n = parse_int(s.substr(second + 1), "ladder count");
    if (n < 2 || n > 10000) throw Error(ErrorCode::InvalidArgument, "ladder count out of range");
    return log_ladder(lo, hi, static_cast<int>(n));
  }
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    auto comma = s.find(',', pos);
    if (comma == std::string_view::npos) comma = s.size();
    out.push_back(parse_double(s.substr(pos, comma - pos), "ladder entry"));
    pos = comma + 1;
  }
  if (out.size() < 2) throw Error(ErrorCode::InvalidArgument, "ladder needs at least 2 entries");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0) || !std::isfinite(out[i]) || (i > 0 && !(out[i] > out[i - 1]))) {
      throw Error(ErrorCode::InvalidArgument,
                  "ladder entries must be positive and strictly increasing");
    }
  }
  return out;
}

void write_grid_csv(std::ostream& os, const GridResult& grid) {
  os << "lr,seed,final_loss,diverged\n";
  for (std::size_t i = 0; i < grid.ladder.size(); ++i) {
    for (std::size_t s = 0; s < grid.seeds.size(); ++s) {
      double loss = grid.final_losses[i][s];
      bool diverged = !std::isfinite(loss);
      os << format_double(grid.ladder[i]) << ',' << grid.seeds[s] << ','
         << (diverged ? std::string() : format_double(loss)) << ',' << (diverged ? 1 : 0) << '\n';
    }
  }
}

void write_grid_summary(std::ostream& os, const GridResult& grid) {
  os << "selected_lr = " << format_double(grid.selected_lr) << '\n';
  os << "ladder_size = " << grid.ladder.size() << '\n';
  os << "seeds =";
  for (auto s : grid.seeds) os << ' ' << s;
  os << '\n';
  for (std::size_t i = 0; i < grid.ladder.size(); ++i) {
    double m = mean_final_loss(grid.final_losses[i]);
    os << "mean_loss[" << format_double(grid.ladder[i])
       << "] = " << (std::isfinite(m) ? format_double(m) : "diverged") << '\n';
  }
}

}  // namespace archscale
