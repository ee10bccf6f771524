#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "archscale/error.hpp"
#include "archscale/graph.hpp"

namespace archscale {

/// Positioned parse failure. Lines and columns are 1-based.
class SyntaxError : public Error {
 public:
  SyntaxError(int line, int column, const std::string& message);

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  int line_;
  int column_;
  std::string detail_;
};

/// A text that parsed but describes an invalid graph. Each violation keeps
/// the source line of the edge it concerns (0 for graph-level violations).
class SemanticError : public Error {
 public:
  struct Entry {
    int line = 0;
    Violation violation;
  };

  explicit SemanticError(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

/// Parses the native line-oriented format:
///
///     # comment
///     hidden = 2
///     0 -> 1 : relu_linear
///     0 -> 2 : relu_linear, kernel=3
///     1 -> 3 : identity
///
/// Operators: relu_linear, gelu_linear, identity, zero, avg_pool. The kernel
/// option is accepted on weighted operators only. The parsed graph must pass
/// validate(); otherwise SemanticError.
Dag parse_dagspec(std::string_view text);

/// Canonical native text: the header, then one line per edge in (src, dst)
/// order. parse_dagspec(serialize(d)) == d for every valid d.
std::string serialize(const Dag& dag);

/// NAS-Bench-201 cell string, e.g.
/// "|nor_conv_3x3~0|+|skip_connect~0|nor_conv_1x1~1|".
///
/// Group k (1-based) lists the edges into node k; "op~j" is an edge j -> k.
/// The last node is the cell output, so a cell with G groups maps to a Dag
/// with G - 1 hidden vertices. Zero ("none") edges are kept for the caller
/// to prune. The result is not validated.
Dag parse_nasbench201(std::string_view cell);

/// Inverse of parse_nasbench201 for graphs whose operators all have a cell
/// spelling; every missing forward pair is written as "none".
std::string to_nasbench201(const Dag& dag);

}  // namespace archscale
