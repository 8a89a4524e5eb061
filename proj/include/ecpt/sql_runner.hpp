#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ecpt/case_model.hpp"

namespace ecpt {

struct Blob {
  std::vector<std::uint8_t> bytes;
  bool operator==(const Blob&) const = default;
};

/// SQLite scalar: NULL, INTEGER, REAL, TEXT, BLOB.
using Value = std::variant<std::monostate, std::int64_t, double, std::string, Blob>;

std::string render_value(const Value& v);

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Value>> rows;
  bool truncated = false;  // row cap reached

  bool empty() const { return rows.empty(); }
};

enum class ExecErrorKind { Database, Timeout, UnknownDatabase };

struct ExecError {
  ExecErrorKind kind = ExecErrorKind::Database;
  std::string message;
};

/// Either a materialized table or the error that prevented it.
class ExecResult {
 public:
  ExecResult(ResultTable table) : value_(std::move(table)) {}
  ExecResult(ExecError error) : value_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<ResultTable>(value_); }
  const ResultTable& table() const { return std::get<ResultTable>(value_); }
  const ExecError& error() const { return std::get<ExecError>(value_); }

 private:
  std::variant<ResultTable, ExecError> value_;
};

struct RunnerConfig {
  std::chrono::milliseconds timeout{30'000};
  std::size_t row_cap = 50'000;
};

/// Executes read-only SQL against registered SQLite files. Every call opens
/// its own read-only connection, so concurrent calls never share one.
class SqlRunner {
 public:
  explicit SqlRunner(RunnerConfig config = {});

  void register_database(std::string db_id, std::filesystem::path path);
  bool has_database(std::string_view db_id) const;
  const RunnerConfig& config() const { return config_; }

  ExecResult execute(std::string_view db_id, std::string_view sql) const;
  ExecResult execute(std::string_view db_id, std::string_view sql, std::chrono::milliseconds timeout) const;

 private:
  RunnerConfig config_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::filesystem::path, std::less<>> databases_;
};

/// True iff ORDER BY appears at parenthesis depth 0, ignoring string
/// literals, quoted identifiers and comments.
bool detect_order_by(std::string_view sql);

struct ComparisonPolicy {
  bool order_sensitive = false;
  bool multiset = true;
  double float_tolerance = 1e-6;  // relative

  /// Order sensitivity follows the ground-truth query.
  static ComparisonPolicy for_truth(std::string_view truth_sql);
};

bool values_equal(const Value& a, const Value& b, double tolerance);

/// Row-multiset (or sequence) equality; column names are ignored.
bool compare(const ResultTable& generated, const ResultTable& truth, const ComparisonPolicy& policy);

/// Requires truth.ok(); throws std::invalid_argument otherwise.
ExecutionOutcome classify_outcome(const ExecResult& generated, const ExecResult& truth,
                                  const ComparisonPolicy& policy);

ResultPreview make_preview(const ResultTable& table, const PreviewLimits& limits = {});

}  // namespace ecpt
