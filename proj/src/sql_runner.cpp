#include "ecpt/sql_runner.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace ecpt {

std::string render_value(const Value& v) {
  struct Visitor {
    std::string operator()(std::monostate) const { return "NULL"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.15g", d);
      return buf;
    }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(const Blob& b) const { return "<blob " + std::to_string(b.bytes.size()) + " bytes>"; }
  };
  return std::visit(Visitor{}, v);
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

struct DbCloser {
  void operator()(sqlite3* db) const { sqlite3_close_v2(db); }
};
struct StmtFinalizer {
  void operator()(sqlite3_stmt* s) const { sqlite3_finalize(s); }
};
using DbHandle = std::unique_ptr<sqlite3, DbCloser>;
using StmtHandle = std::unique_ptr<sqlite3_stmt, StmtFinalizer>;

using Clock = std::chrono::steady_clock;

int progress_deadline(void* arg) {
  const auto* deadline = static_cast<const Clock::time_point*>(arg);
  return Clock::now() > *deadline ? 1 : 0;
}

Value read_column(sqlite3_stmt* stmt, int i) {
  switch (sqlite3_column_type(stmt, i)) {
    case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(stmt, i));
    case SQLITE_FLOAT: return sqlite3_column_double(stmt, i);
    case SQLITE_TEXT: {
      const auto* text = reinterpret_cast<const char*>(sqlite3_column_text(stmt, i));
      return std::string(text, static_cast<std::size_t>(sqlite3_column_bytes(stmt, i)));
    }
    case SQLITE_BLOB: {
      const auto* data = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt, i));
      Blob b;
      b.bytes.assign(data, data + sqlite3_column_bytes(stmt, i));
      return b;
    }
    default: return std::monostate{};
  }
}

}  // namespace

SqlRunner::SqlRunner(RunnerConfig config) : config_(config) {}

void SqlRunner::register_database(std::string db_id, std::filesystem::path path) {
  std::unique_lock lock(mutex_);
  databases_[std::move(db_id)] = std::move(path);
}

bool SqlRunner::has_database(std::string_view db_id) const {
  std::shared_lock lock(mutex_);
  return databases_.find(db_id) != databases_.end();
}

ExecResult SqlRunner::execute(std::string_view db_id, std::string_view sql) const {
  return execute(db_id, sql, config_.timeout);
}

ExecResult SqlRunner::execute(std::string_view db_id, std::string_view sql,
                              std::chrono::milliseconds timeout) const {
  std::filesystem::path path;
  {
    std::shared_lock lock(mutex_);
    auto it = databases_.find(db_id);
    if (it == databases_.end()) {
      return ExecError{ExecErrorKind::UnknownDatabase, "unknown database: " + std::string(db_id)};
    }
    path = it->second;
  }

  sqlite3* raw = nullptr;
  int rc = sqlite3_open_v2(path.c_str(), &raw, SQLITE_OPEN_READONLY | SQLITE_OPEN_NOMUTEX, nullptr);
  DbHandle db(raw);
  if (rc != SQLITE_OK) {
    std::string msg = raw ? sqlite3_errmsg(raw) : "cannot open database";
    return ExecError{ExecErrorKind::Database, msg + ": " + path.string()};
  }

  const auto deadline = Clock::now() + timeout;
  sqlite3_progress_handler(db.get(), 1000, &progress_deadline, const_cast<Clock::time_point*>(&deadline));

  sqlite3_stmt* raw_stmt = nullptr;
  rc = sqlite3_prepare_v2(db.get(), sql.data(), static_cast<int>(sql.size()), &raw_stmt, nullptr);
  StmtHandle stmt(raw_stmt);
  if (rc != SQLITE_OK) {
    if (rc == SQLITE_INTERRUPT) {
      return ExecError{ExecErrorKind::Timeout, "query timed out after " + std::to_string(timeout.count()) + " ms"};
    }
    return ExecError{ExecErrorKind::Database, sqlite3_errmsg(db.get())};
  }
  if (!stmt) return ExecError{ExecErrorKind::Database, "empty SQL statement"};
  if (!sqlite3_stmt_readonly(stmt.get())) {
    return ExecError{ExecErrorKind::Database, "statement is not read-only"};
  }

  ResultTable table;
  const int ncol = sqlite3_column_count(stmt.get());
  table.columns.reserve(static_cast<std::size_t>(ncol));
  for (int i = 0; i < ncol; ++i) {
    const char* name = sqlite3_column_name(stmt.get(), i);
    table.columns.emplace_back(name ? name : "");
  }

  while (true) {
    rc = sqlite3_step(stmt.get());
    if (rc == SQLITE_DONE) break;
    if (rc == SQLITE_ROW) {
      if (table.rows.size() >= config_.row_cap) {
        table.truncated = true;
        break;
      }
      std::vector<Value> row;
      row.reserve(static_cast<std::size_t>(ncol));
      for (int i = 0; i < ncol; ++i) row.push_back(read_column(stmt.get(), i));
      table.rows.push_back(std::move(row));
      continue;
    }
    if (rc == SQLITE_INTERRUPT) {
      return ExecError{ExecErrorKind::Timeout, "query timed out after " + std::to_string(timeout.count()) + " ms"};
    }
    return ExecError{ExecErrorKind::Database, sqlite3_errmsg(db.get())};
  }
  return table;
}

// ---------------------------------------------------------------------------
// ORDER BY detection
// ---------------------------------------------------------------------------

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
         });
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

bool detect_order_by(std::string_view sql) {
  int depth = 0;
  bool prev_was_order = false;  // previous depth-0 word was ORDER
  std::size_t i = 0;
  const std::size_t n = sql.size();

  auto skip_quoted = [&](char close) {
    ++i;
    while (i < n) {
      if (sql[i] == close) {
        if (close != ']' && i + 1 < n && sql[i + 1] == close) {
          i += 2;  // doubled quote escape
          continue;
        }
        ++i;
        return;
      }
      ++i;
    }
  };

  while (i < n) {
    char c = sql[i];
    if (c == '\'' || c == '"' || c == '`') {
      skip_quoted(c);
      prev_was_order = false;
    } else if (c == '[') {
      skip_quoted(']');
      prev_was_order = false;
    } else if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? n : end + 2;
    } else if (c == '(') {
      ++depth;
      ++i;
      prev_was_order = false;
    } else if (c == ')') {
      if (depth > 0) --depth;
      ++i;
      prev_was_order = false;
    } else if (is_word_char(c)) {
      std::size_t start = i;
      while (i < n && is_word_char(sql[i])) ++i;
      std::string_view word = sql.substr(start, i - start);
      if (depth == 0) {
        if (prev_was_order && iequals(word, "BY")) return true;
        prev_was_order = iequals(word, "ORDER");
      }
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else {
      prev_was_order = false;
      ++i;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

ComparisonPolicy ComparisonPolicy::for_truth(std::string_view truth_sql) {
  ComparisonPolicy p;
  p.order_sensitive = detect_order_by(truth_sql);
  return p;
}

namespace {

bool is_numeric(const Value& v) {
  return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
}

double as_double(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::get<double>(v);
}

// NULL < numeric < text < blob, mirroring SQLite's cross-type ordering.
int type_rank(const Value& v) {
  if (std::holds_alternative<std::monostate>(v)) return 0;
  if (is_numeric(v)) return 1;
  if (std::holds_alternative<std::string>(v)) return 2;
  return 3;
}

int compare_values(const Value& a, const Value& b) {
  int ra = type_rank(a), rb = type_rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (ra) {
    case 0: return 0;
    case 1: {
      if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
        auto x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b);
        return x < y ? -1 : (x > y ? 1 : 0);
      }
      double x = as_double(a), y = as_double(b);
      return x < y ? -1 : (x > y ? 1 : 0);
    }
    case 2: {
      int c = std::get<std::string>(a).compare(std::get<std::string>(b));
      return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    default: {
      const auto& x = std::get<Blob>(a).bytes;
      const auto& y = std::get<Blob>(b).bytes;
      if (x < y) return -1;
      return y < x ? 1 : 0;
    }
  }
}

bool row_less(const std::vector<Value>& a, const std::vector<Value>& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    int c = compare_values(a[i], b[i]);
    if (c != 0) return c < 0;
  }
  return a.size() < b.size();
}

bool rows_equal(const std::vector<Value>& a, const std::vector<Value>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!values_equal(a[i], b[i], tol)) return false;
  }
  return true;
}

}  // namespace

bool values_equal(const Value& a, const Value& b, double tolerance) {
  if (is_numeric(a) && is_numeric(b)) {
    if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
      return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
    }
    double x = as_double(a), y = as_double(b);
    if (x == y) return true;
    if (!std::isfinite(x) || !std::isfinite(y)) return false;
    return std::fabs(x - y) <= tolerance * std::max(std::fabs(x), std::fabs(y));
  }
  return a == b;
}

bool compare(const ResultTable& generated, const ResultTable& truth, const ComparisonPolicy& policy) {
  if (generated.columns.size() != truth.columns.size()) return false;
  if (generated.rows.size() != truth.rows.size()) return false;
  if (policy.order_sensitive) {
    for (std::size_t i = 0; i < generated.rows.size(); ++i) {
      if (!rows_equal(generated.rows[i], truth.rows[i], policy.float_tolerance)) return false;
    }
    return true;
  }
  auto a = generated.rows;
  auto b = truth.rows;
  std::sort(a.begin(), a.end(), row_less);
  std::sort(b.begin(), b.end(), row_less);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!rows_equal(a[i], b[i], policy.float_tolerance)) return false;
  }
  return true;
}

ExecutionOutcome classify_outcome(const ExecResult& generated, const ExecResult& truth,
                                  const ComparisonPolicy& policy) {
  if (!truth.ok()) throw std::invalid_argument("ground truth failed to execute: " + truth.error().message);
  if (!generated.ok()) return ExecutionOutcome::execution_error(generated.error().message);

  const auto& g = generated.table();
  const auto& t = truth.table();
  if (compare(g, t, policy)) return ExecutionOutcome::success();
  if (g.empty() && !t.empty()) {
    return ExecutionOutcome::empty_table("generated query returned no rows; expected " + std::to_string(t.rows.size()));
  }
  return ExecutionOutcome::undesired("result mismatch: generated " + std::to_string(g.rows.size()) + "x" +
                                     std::to_string(g.columns.size()) + ", expected " +
                                     std::to_string(t.rows.size()) + "x" + std::to_string(t.columns.size()));
}

ResultPreview make_preview(const ResultTable& table, const PreviewLimits& limits) {
  ResultPreview p;
  for (const auto& c : table.columns) p.columns.push_back(elide(c, limits.max_value_chars));
  p.total_rows = table.rows.size();
  const std::size_t n = std::min(table.rows.size(), limits.max_rows);
  p.rows.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::string> cells;
    cells.reserve(table.rows[r].size());
    for (const auto& v : table.rows[r]) cells.push_back(elide(render_value(v), limits.max_value_chars));
    p.rows.push_back(std::move(cells));
  }
  return p;
}

}  // namespace ecpt
