#include "archscale/archdsl.hpp"

#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <utility>

namespace archscale {

SyntaxError::SyntaxError(int line, int column, const std::string& message)
    : Error(ErrorCode::SyntaxError,
            "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                message),
      line_(line),
      column_(column),
      detail_(message) {}

namespace {

std::string describe(const std::vector<SemanticError::Entry>& entries) {
  std::ostringstream os;
  bool first = true;
  for (const auto& e : entries) {
    if (!first) os << "; ";
    first = false;
    if (e.line > 0) os << "line " << e.line << ": ";
    os << e.violation.message;
  }
  return os.str();
}

// Cursor over one line of the native format.
class LineScanner {
 public:
  LineScanner(std::string_view text, int line) : text_(text), line_(line) {}

  void skip_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }
  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }
  int column() const { return static_cast<int>(pos_) + 1; }

  [[noreturn]] void fail(const std::string& message) const {
    throw SyntaxError(line_, column(), message);
  }

  long integer(const char* what) {
    skip_space();
    long value = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
    if (ec != std::errc() || ptr == text_.data() + pos_) {
      fail(std::string("expected ") + what);
    }
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return value;
  }

  std::string_view word() {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  void expect(std::string_view token) {
    skip_space();
    if (text_.substr(pos_, token.size()) != token) {
      fail("expected '" + std::string(token) + "'");
    }
    pos_ += token.size();
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

 private:
  std::string_view text_;
  int line_;
  std::size_t pos_ = 0;
};

std::optional<OpKind> native_op(std::string_view name) {
  if (name == "relu_linear") return OpKind::WeightedReLU;
  if (name == "gelu_linear") return OpKind::WeightedGELU;
  if (name == "identity") return OpKind::Identity;
  if (name == "zero") return OpKind::Zero;
  if (name == "avg_pool") return OpKind::AvgPool;
  return std::nullopt;
}

}  // namespace

SemanticError::SemanticError(std::vector<Entry> entries)
    : Error(ErrorCode::SemanticError, describe(entries)), entries_(std::move(entries)) {}

Dag parse_dagspec(std::string_view text) {
  std::optional<long> hidden;
  std::vector<Edge> edges;
  std::map<std::pair<int, int>, int> edge_line;

  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

    LineScanner scan(line, line_no);
    if (scan.at_end()) {
      if (end == text.size()) break;
      continue;
    }

    if (!hidden) {
      scan.skip_space();
      const int header_column = scan.column();
      if (scan.word() != "hidden") {
        throw SyntaxError(line_no, header_column, "expected header 'hidden = L'");
      }
      scan.expect("=");
      long value = scan.integer("hidden vertex count");
      if (value < 0 || value > 100000) scan.fail("hidden vertex count out of range");
      if (!scan.at_end()) scan.fail("unexpected trailing text");
      hidden = value;
      continue;
    }

    long src = scan.integer("source vertex");
    scan.expect("->");
    long dst = scan.integer("destination vertex");
    scan.expect(":");
    const int op_column = (scan.skip_space(), scan.column());
    std::string_view op_name = scan.word();
    auto kind = native_op(op_name);
    if (!kind) {
      throw SyntaxError(line_no, op_column,
                        "unknown operator '" + std::string(op_name) + "'");
    }
    EdgeOp op{*kind, *kind == OpKind::AvgPool ? kAvgPoolWindow : 1};
    if (scan.accept(',')) {
      if (scan.word() != "kernel") scan.fail("expected 'kernel=q'");
      scan.expect("=");
      if (!is_weighted(*kind)) scan.fail("kernel is only allowed on weighted operators");
      scan.skip_space();
      const int kernel_column = scan.column();
      long q = scan.integer("kernel size");
      if (q < 1 || q % 2 == 0) {
        throw SyntaxError(line_no, kernel_column, "kernel must be odd and >= 1");
      }
      op.kernel = static_cast<int>(q);
    }
    if (!scan.at_end()) scan.fail("unexpected trailing text");
    const int max_vertex = static_cast<int>(*hidden) + 1;
    if (src < 0 || src > max_vertex || dst < 0 || dst > max_vertex) {
      throw SyntaxError(line_no, 1,
                        "vertex id outside [0, " + std::to_string(max_vertex) + "]");
    }
    edges.push_back({static_cast<int>(src), static_cast<int>(dst), op});
    edge_line.try_emplace({static_cast<int>(src), static_cast<int>(dst)}, line_no);
  }
  if (!hidden) throw SyntaxError(line_no == 0 ? 1 : line_no, 1, "missing header 'hidden = L'");

  Dag dag(static_cast<int>(*hidden), std::move(edges));
  auto violations = validate(dag);
  if (!violations.empty()) {
    std::vector<SemanticError::Entry> entries;
    for (auto& v : violations) {
      int line = 0;
      if (v.src >= 0) {
        if (auto it = edge_line.find({v.src, v.dst}); it != edge_line.end()) line = it->second;
      }
      entries.push_back({line, std::move(v)});
    }
    throw SemanticError(std::move(entries));
  }
  return dag;
}

std::string serialize(const Dag& dag) {
  std::ostringstream os;
  os << "hidden = " << dag.num_hidden() << '\n';
  for (const auto& e : dag.edges()) {
    os << e.src << " -> " << e.dst << " : " << to_string(e.op.kind);
    if (is_weighted(e.op.kind) && e.op.kernel != 1) os << ", kernel=" << e.op.kernel;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

std::optional<EdgeOp> cell_op(std::string_view name) {
  if (name == "none") return EdgeOp{OpKind::Zero, 1};
  if (name == "skip_connect") return EdgeOp{OpKind::Identity, 1};
  if (name == "avg_pool_3x3") return EdgeOp{OpKind::AvgPool, kAvgPoolWindow};
  constexpr std::string_view conv = "nor_conv_";
  if (name.substr(0, conv.size()) == conv) {
    // nor_conv_KxK
    std::string_view rest = name.substr(conv.size());
    auto x = rest.find('x');
    if (x == std::string_view::npos || rest.substr(0, x) != rest.substr(x + 1)) return std::nullopt;
    int q = 0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + x, q);
    if (ec != std::errc() || ptr != rest.data() + x || q < 1 || q % 2 == 0) return std::nullopt;
    return EdgeOp{OpKind::WeightedReLU, q};
  }
  return std::nullopt;
}

}  // namespace

Dag parse_nasbench201(std::string_view cell) {
  auto fail = [](std::size_t pos, const std::string& message) -> SyntaxError {
    return SyntaxError(1, static_cast<int>(pos) + 1, message);
  };
  while (!cell.empty() && (cell.back() == '\n' || cell.back() == '\r' || cell.back() == ' ')) {
    cell.remove_suffix(1);
  }
  if (cell.empty()) throw fail(0, "empty cell string");

  std::vector<Edge> edges;
  int node = 0;
  std::size_t pos = 0;
  while (pos <= cell.size()) {
    std::size_t end = cell.find('+', pos);
    if (end == std::string_view::npos) end = cell.size();
    std::string_view group = cell.substr(pos, end - pos);
    ++node;
    if (group.size() < 2 || group.front() != '|' || group.back() != '|') {
      throw fail(pos, "node group must be written as |op~j|...|");
    }
    std::size_t epos = 1;
    bool any = false;
    while (epos < group.size()) {
      std::size_t bar = group.find('|', epos);
      std::string_view entry = group.substr(epos, bar - epos);
      const std::size_t entry_col = pos + epos;
      auto tilde = entry.find('~');
      if (tilde == std::string_view::npos) throw fail(entry_col, "expected 'op~source'");
      std::string_view name = entry.substr(0, tilde);
      std::string_view src_text = entry.substr(tilde + 1);
      int src = -1;
      auto [ptr, ec] = std::from_chars(src_text.data(), src_text.data() + src_text.size(), src);
      if (ec != std::errc() || ptr != src_text.data() + src_text.size()) {
        throw fail(entry_col + tilde + 1, "expected a source node index");
      }
      if (src < 0 || src >= node) {
        throw fail(entry_col + tilde + 1, "source node " + std::to_string(src) +
                                              " must be less than node " + std::to_string(node));
      }
      auto op = cell_op(name);
      if (!op) {
        throw Error(ErrorCode::UnknownOperator,
                    "unknown NAS-Bench-201 operator '" + std::string(name) + "' at column " +
                        std::to_string(entry_col + 1));
      }
      edges.push_back({src, node, *op});
      any = true;
      epos = bar + 1;
    }
    if (!any) throw fail(pos, "empty node group");
    pos = end + 1;
    if (end == cell.size()) break;
  }
  return Dag(node - 1, std::move(edges));
}

std::string to_nasbench201(const Dag& dag) {
  std::ostringstream os;
  for (VertexId node = 1; node <= dag.output(); ++node) {
    if (node > 1) os << '+';
    os << '|';
    for (VertexId src = 0; src < node; ++src) {
      const Edge* e = dag.find_edge(src, node);
      std::string name = "none";
      if (e != nullptr) {
        switch (e->op.kind) {
          case OpKind::WeightedReLU:
            name = "nor_conv_" + std::to_string(e->op.kernel) + "x" + std::to_string(e->op.kernel);
            break;
          case OpKind::Identity: name = "skip_connect"; break;
          case OpKind::AvgPool: name = "avg_pool_3x3"; break;
          case OpKind::Zero: name = "none"; break;
          case OpKind::WeightedGELU:
            throw Error(ErrorCode::UnknownOperator, "GELU edges have no cell spelling");
        }
      }
      os << name << '~' << src << '|';
    }
  }
  return os.str();
}

}  // namespace archscale
