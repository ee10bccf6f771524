#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace archscale {

/// Outcome of a learning-rate grid search.
///
/// final_losses[i][s] is the one-epoch training loss of ladder[i] under
/// seeds[s]; a diverged run is stored as NaN.
struct GridResult {
  std::vector<double> ladder;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> final_losses;
  double selected_lr = 0;

  friend bool operator==(const GridResult&, const GridResult&) = default;
};

/// Relative loss tolerance inside which two ladder entries count as tied.
inline constexpr double kLossTieTolerance = 1e-3;

/// Index of the selected ladder entry: among entries whose runs all finished
/// with a finite loss, the one with the smallest mean loss over seeds; every
/// entry within kLossTieTolerance (relative) of that minimum is a tie and the
/// largest such LR wins. Throws AllRunsDiverged when no entry qualifies.
std::size_t select_max_lr(const std::vector<double>& ladder,
                          const std::vector<std::vector<double>>& final_losses);

/// Mean over seeds, NaN when any seed diverged.
double mean_final_loss(const std::vector<double>& per_seed);

/// `count` log-spaced points from lo to hi inclusive.
std::vector<double> log_ladder(double lo, double hi, int count);

/// Default ladder: 25 log-spaced points spanning 4 decades centred on hint.
std::vector<double> default_ladder(double hint);

/// Ladder spec "lo:hi:count" (log-spaced) or a comma-separated list. Throws
/// InvalidArgument unless the result has >= 2 strictly increasing positive
/// entries.
std::vector<double> parse_ladder(const std::string& spec);

/// CSV with header "lr,seed,final_loss,diverged", rows ordered (lr, seed).
void write_grid_csv(std::ostream& os, const GridResult& grid);

/// Key-value summary: selected_lr, ladder size, seeds, per-LR mean losses.
void write_grid_summary(std::ostream& os, const GridResult& grid);

}  // namespace archscale
