#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ecpt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

struct Column {
  std::string name;
  std::string type;

  bool operator==(const Column&) const = default;
};

struct Table {
  std::string name;
  std::vector<Column> columns;

  bool operator==(const Table&) const = default;
};

struct ColumnRef {
  std::string table;
  std::string column;

  std::string str() const { return table + "." + column; }
  bool operator==(const ColumnRef&) const = default;
};

struct ForeignKey {
  ColumnRef from;
  ColumnRef to;

  bool operator==(const ForeignKey&) const = default;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SchemaDescription {
  std::string db_id;
  std::vector<Table> tables;
  std::vector<ColumnRef> primary_keys;
  std::vector<ForeignKey> foreign_keys;

  const Table* find_table(std::string_view name) const;
  bool has_column(const ColumnRef& ref) const;

  /// Throws SchemaError on duplicate names or dangling key references.
  void validate() const;

  bool operator==(const SchemaDescription&) const = default;
};

// ---------------------------------------------------------------------------
// Outcomes and error types
// ---------------------------------------------------------------------------

enum class OutcomeKind { Success, ExecutionError, EmptyTable, UndesiredResult };

std::string_view to_string(OutcomeKind kind);
OutcomeKind outcome_kind_from_string(std::string_view text);

struct ExecutionOutcome {
  OutcomeKind kind = OutcomeKind::Success;
  std::string detail;

  static ExecutionOutcome success() { return {OutcomeKind::Success, {}}; }
  /// An empty message is replaced by a generic one to keep the invariant.
  static ExecutionOutcome execution_error(std::string message);
  static ExecutionOutcome empty_table(std::string detail = {});
  static ExecutionOutcome undesired(std::string detail = {});

  bool is_success() const { return kind == OutcomeKind::Success; }
  bool operator==(const ExecutionOutcome&) const = default;
};

/// The thirteen failure categories plus the "success" label used for
/// embedding training. Numeric values match the e-number.
enum class ErrorTypeId : std::uint8_t {
  E1 = 1, E2, E3, E4, E5, E6, E7, E8, E9, E10, E11, E12, E13,
  Success = 14,
};

inline constexpr std::size_t kErrorTypeCount = 13;
inline constexpr std::size_t kLabelCount = 14;

struct ErrorType {
  ErrorTypeId id;
  std::string_view code;  // "e1".."e13", "success"
  std::string_view name;
  std::string_view short_explanation;
};

const std::array<ErrorType, kLabelCount>& error_type_catalog();
const ErrorType& error_type(ErrorTypeId id);

std::string_view to_string(ErrorTypeId id);
/// Accepts "e1".."e13" and "success"; nullopt otherwise.
std::optional<ErrorTypeId> parse_error_type_id(std::string_view text);
ErrorTypeId error_type_id_from_string(std::string_view text);  // throws
/// 0-based dense index usable as a class label (e1 -> 0, success -> 13).
std::size_t label_index(ErrorTypeId id);
ErrorTypeId label_from_index(std::size_t index);

/// Plain-text table of e1..e13 (id, name, short explanation), aligned.
std::string error_type_table_text();
/// One row of the table above, exactly as it appears there.
std::string error_type_table_row(ErrorTypeId id);
std::string error_type_table_header();

// ---------------------------------------------------------------------------
// Cases
// ---------------------------------------------------------------------------

struct PreviewLimits {
  std::size_t max_rows = 10;
  std::size_t max_value_chars = 64;
};

/// Already-rendered, bounded view of an execution result.
struct ResultPreview {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::size_t total_rows = 0;

  bool truncated() const { return total_rows > rows.size(); }
  bool operator==(const ResultPreview&) const = default;
};

/// Shortens `value` to `max_chars` with a trailing "..." marker.
std::string elide(std::string_view value, std::size_t max_chars);

class CaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Case {
  SchemaDescription schema;
  std::string question;
  std::string generated_sql;
  ExecutionOutcome outcome;
  ResultPreview preview;

  void validate(const PreviewLimits& limits = {}) const;
  bool operator==(const Case&) const = default;
};

struct CorrectionCase {
  Case case_;
  std::vector<ErrorTypeId> error_types;  // most severe first
  std::string ground_truth_sql;
  std::string reason;
  std::string instruction;

  ErrorTypeId primary_label() const { return error_types.front(); }
  bool has_label(ErrorTypeId id) const;
  void validate() const;
  bool operator==(const CorrectionCase&) const = default;
};

// ---------------------------------------------------------------------------
// Structured text
// ---------------------------------------------------------------------------

class MalformedSectionError : public std::runtime_error {
 public:
  MalformedSectionError(std::string section, const std::string& what)
      : std::runtime_error("malformed section " + section + ": " + what),
        section_(std::move(section)) {}
  const std::string& section() const { return section_; }

 private:
  std::string section_;
};

std::string serialize_schema(const SchemaDescription& schema);
std::string serialize_result(const ExecutionOutcome& outcome, const ResultPreview& preview);
std::string serialize_case(const Case& c, bool include_result);
Case parse_case(std::string_view text);

// ---------------------------------------------------------------------------
// Interchange records (line-delimited JSON)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kKbFormatVersion = "ecpt-kb/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json schema_to_json(const SchemaDescription& schema);
SchemaDescription schema_from_json(const json& j);
json outcome_to_json(const ExecutionOutcome& outcome);
ExecutionOutcome outcome_from_json(const json& j);
json preview_to_json(const ResultPreview& preview);
ResultPreview preview_from_json(const json& j);
json correction_case_to_json(const CorrectionCase& cc);
CorrectionCase correction_case_from_json(const json& j);

/// Correction-case file: header record {"version":"ecpt-kb/1"} followed by one
/// record per case. Store files written by KbStore also parse here.
void write_correction_cases(const std::filesystem::path& path, const std::vector<CorrectionCase>& cases);
std::vector<CorrectionCase> read_correction_cases(const std::filesystem::path& path);

}  // namespace ecpt
