#include "ecpt/case_model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ecpt/hashing.hpp"

namespace ecpt {

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

const Table* SchemaDescription::find_table(std::string_view name) const {
  for (const auto& t : tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool SchemaDescription::has_column(const ColumnRef& ref) const {
  const Table* t = find_table(ref.table);
  if (!t) return false;
  return std::any_of(t->columns.begin(), t->columns.end(),
                     [&](const Column& c) { return c.name == ref.column; });
}

void SchemaDescription::validate() const {
  std::set<std::string> table_names;
  for (const auto& t : tables) {
    if (!table_names.insert(t.name).second) {
      throw SchemaError(db_id + ": duplicate table " + t.name);
    }
    std::set<std::string> column_names;
    for (const auto& c : t.columns) {
      if (!column_names.insert(c.name).second) {
        throw SchemaError(db_id + ": duplicate column " + t.name + "." + c.name);
      }
    }
  }
  for (const auto& pk : primary_keys) {
    if (!has_column(pk)) throw SchemaError(db_id + ": primary key references unknown column " + pk.str());
  }
  for (const auto& fk : foreign_keys) {
    if (!has_column(fk.from)) throw SchemaError(db_id + ": foreign key from unknown column " + fk.from.str());
    if (!has_column(fk.to)) throw SchemaError(db_id + ": foreign key to unknown column " + fk.to.str());
  }
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

std::string_view to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::Success: return "Success";
    case OutcomeKind::ExecutionError: return "ExecutionError";
    case OutcomeKind::EmptyTable: return "EmptyTable";
    case OutcomeKind::UndesiredResult: return "UndesiredResult";
  }
  return "?";
}

OutcomeKind outcome_kind_from_string(std::string_view text) {
  if (text == "Success") return OutcomeKind::Success;
  if (text == "ExecutionError") return OutcomeKind::ExecutionError;
  if (text == "EmptyTable") return OutcomeKind::EmptyTable;
  if (text == "UndesiredResult") return OutcomeKind::UndesiredResult;
  throw FormatError("unknown outcome kind: " + std::string(text));
}

ExecutionOutcome ExecutionOutcome::execution_error(std::string message) {
  if (trim(message).empty()) message = "execution failed";
  return {OutcomeKind::ExecutionError, std::move(message)};
}

ExecutionOutcome ExecutionOutcome::empty_table(std::string detail) {
  return {OutcomeKind::EmptyTable, std::move(detail)};
}

ExecutionOutcome ExecutionOutcome::undesired(std::string detail) {
  return {OutcomeKind::UndesiredResult, std::move(detail)};
}

// ---------------------------------------------------------------------------
// Error type catalog
// ---------------------------------------------------------------------------

const std::array<ErrorType, kLabelCount>& error_type_catalog() {
  static const std::array<ErrorType, kLabelCount> catalog{{
      {ErrorTypeId::E1, "e1", "Other:DISTINCT", "Didn’t use or use keyword DISTINCT properly."},
      {ErrorTypeId::E2, "e2", "Other:DESC", "Didn’t use or use keyword DESC properly."},
      {ErrorTypeId::E3, "e3", "Other:Not Enough Value Information", "Wrong value in the WHERE clause."},
      {ErrorTypeId::E4, "e4", "Schema-Linking:Wrong Cols",
       "Unnecessary or wrong columns in SELECT clause refer to question."},
      {ErrorTypeId::E5, "e5", "Schema-Linking:Cond", "Missing or used wrong logic in the conditions."},
      {ErrorTypeId::E6, "e6", "Nested:Wrong Sub Query", "Unnecessary or wrong sub query."},
      {ErrorTypeId::E7, "e7", "Nested:Set Operation", "Didn’t used set operation."},
      {ErrorTypeId::E8, "e8", "Join:Wrong Tables/Cols", "Joined unnecessary or wrong tables or columns."},
      {ErrorTypeId::E9, "e9", "Join:Wrong Keyword",
       "Didn’t use JOIN keyword where it should be used or misuse LEFT/RIGHT JOIN."},
      {ErrorTypeId::E10, "e10", "Invalid:Wrong Cols", "Use columns that do not exist in the table."},
      {ErrorTypeId::E11, "e11", "Invalid:Alias", "Used same column name in a single statement without any alias."},
      {ErrorTypeId::E12, "e12", "Group-by:Not Detected", "Didn’t use GROUP BY keyword where it should be used."},
      {ErrorTypeId::E13, "e13", "Group-by:Wrong Cols", "Group by wrong columns or unnecessary group by."},
      {ErrorTypeId::Success, "success", "Success", "The SQL matches the ground-truth result."},
  }};
  return catalog;
}

const ErrorType& error_type(ErrorTypeId id) { return error_type_catalog()[label_index(id)]; }

std::string_view to_string(ErrorTypeId id) { return error_type(id).code; }

std::optional<ErrorTypeId> parse_error_type_id(std::string_view text) {
  for (const auto& t : error_type_catalog()) {
    if (t.code == text) return t.id;
  }
  return std::nullopt;
}

ErrorTypeId error_type_id_from_string(std::string_view text) {
  if (auto id = parse_error_type_id(text)) return *id;
  throw FormatError("unknown error type id: " + std::string(text));
}

std::size_t label_index(ErrorTypeId id) {
  auto v = static_cast<std::size_t>(id);
  if (v < 1 || v > kLabelCount) throw std::out_of_range("bad error type id");
  return v - 1;
}

ErrorTypeId label_from_index(std::size_t index) {
  if (index >= kLabelCount) throw std::out_of_range("bad label index");
  return static_cast<ErrorTypeId>(index + 1);
}

namespace {

constexpr std::size_t kIdWidth = 4;

std::size_t name_width() {
  std::size_t w = std::string_view("Error Name").size();
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) w = std::max(w, error_type_catalog()[i].name.size());
  return w;
}

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

}  // namespace

std::string error_type_table_header() {
  return pad("ID", kIdWidth) + " | " + pad("Error Name", name_width()) + " | Short Explanation";
}

std::string error_type_table_row(ErrorTypeId id) {
  const auto& t = error_type(id);
  return pad(t.code, kIdWidth) + " | " + pad(t.name, name_width()) + " | " + std::string(t.short_explanation);
}

std::string error_type_table_text() {
  std::string out = error_type_table_header() + "\n";
  out += std::string(kIdWidth, '-') + "-+-" + std::string(name_width(), '-') + "-+-" +
         std::string(std::string_view("Short Explanation").size(), '-') + "\n";
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) {
    out += error_type_table_row(error_type_catalog()[i].id) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cases
// ---------------------------------------------------------------------------

std::string elide(std::string_view value, std::size_t max_chars) {
  if (value.size() <= max_chars) return std::string(value);
  return std::string(value.substr(0, max_chars)) + "...";
}

void Case::validate(const PreviewLimits& limits) const {
  if (trim(question).empty()) throw CaseError("case question is empty");
  if (preview.rows.size() > limits.max_rows) throw CaseError("result preview exceeds row bound");
  if (outcome.kind == OutcomeKind::ExecutionError && outcome.detail.empty()) {
    throw CaseError("execution error outcome without detail");
  }
}

bool CorrectionCase::has_label(ErrorTypeId id) const {
  return std::find(error_types.begin(), error_types.end(), id) != error_types.end();
}

void CorrectionCase::validate() const {
  case_.validate();
  if (error_types.empty()) throw CaseError("correction case has no error types");
  std::set<ErrorTypeId> seen(error_types.begin(), error_types.end());
  if (seen.size() != error_types.size()) throw CaseError("duplicate error type in correction case");
  if (seen.count(ErrorTypeId::Success) && error_types.size() != 1) {
    throw CaseError("'success' label must be the only label");
  }
  if (trim(ground_truth_sql).empty()) throw CaseError("correction case has empty ground-truth SQL");
}

// ---------------------------------------------------------------------------
// Structured text
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 4> kSections{"SCHEMA", "QUESTION", "SQL", "RESULT"};

std::string single_line(std::string_view s) {
  std::string out(s);
  std::replace(out.begin(), out.end(), '\n', ' ');
  std::replace(out.begin(), out.end(), '\r', ' ');
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines = split(text, "\n");
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  return lines;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

std::string serialize_schema(const SchemaDescription& schema) {
  std::string out = "database: " + schema.db_id + "\n";
  for (const auto& t : schema.tables) {
    std::vector<std::string> cols;
    cols.reserve(t.columns.size());
    for (const auto& c : t.columns) cols.push_back(c.name + ":" + c.type);
    out += t.name + "(" + join(cols, ", ") + ")\n";
  }
  for (const auto& fk : schema.foreign_keys) {
    out += "FOREIGN KEY " + fk.from.str() + " -> " + fk.to.str() + "\n";
  }
  return out;
}

std::string serialize_result(const ExecutionOutcome& outcome, const ResultPreview& preview) {
  std::string out = "outcome: " + std::string(to_string(outcome.kind)) + "\n";
  if (!outcome.detail.empty()) out += "detail: " + single_line(outcome.detail) + "\n";
  if (!preview.columns.empty()) {
    out += "columns: " + join(preview.columns, " | ") + "\n";
    for (const auto& row : preview.rows) out += join(row, " | ") + "\n";
    if (preview.truncated()) {
      out += "(" + std::to_string(preview.total_rows - preview.rows.size()) + " more rows)\n";
    }
  }
  return out;
}

std::string serialize_case(const Case& c, bool include_result) {
  std::string out;
  out += "SCHEMA\n";
  out += serialize_schema(c.schema);
  out += "QUESTION\n";
  out += trim(c.question) + "\n";
  out += "SQL\n";
  out += trim(c.generated_sql) + "\n";
  if (include_result) {
    out += "RESULT\n";
    out += serialize_result(c.outcome, c.preview);
  }
  return out;
}

namespace {

SchemaDescription parse_schema_lines(const std::vector<std::string>& lines) {
  SchemaDescription schema;
  if (lines.empty() || !starts_with(lines[0], "database: ")) {
    throw MalformedSectionError("SCHEMA", "missing database line");
  }
  schema.db_id = lines[0].substr(std::string_view("database: ").size());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (starts_with(line, "FOREIGN KEY ")) {
      auto body = line.substr(std::string_view("FOREIGN KEY ").size());
      auto parts = split(body, " -> ");
      if (parts.size() != 2) throw MalformedSectionError("SCHEMA", "bad foreign key line: " + line);
      auto ref = [&](const std::string& s) {
        auto dot = s.find('.');
        if (dot == std::string::npos) throw MalformedSectionError("SCHEMA", "bad column reference: " + s);
        return ColumnRef{s.substr(0, dot), s.substr(dot + 1)};
      };
      schema.foreign_keys.push_back({ref(parts[0]), ref(parts[1])});
      continue;
    }
    auto open = line.find('(');
    if (open == std::string::npos || line.back() != ')') {
      throw MalformedSectionError("SCHEMA", "bad table line: " + line);
    }
    Table t;
    t.name = line.substr(0, open);
    std::string body = line.substr(open + 1, line.size() - open - 2);
    if (!body.empty()) {
      for (const auto& col : split(body, ", ")) {
        auto colon = col.rfind(':');
        if (colon == std::string::npos) throw MalformedSectionError("SCHEMA", "bad column: " + col);
        t.columns.push_back({col.substr(0, colon), col.substr(colon + 1)});
      }
    }
    schema.tables.push_back(std::move(t));
  }
  return schema;
}

void parse_result_lines(const std::vector<std::string>& lines, Case& c) {
  if (lines.empty() || !starts_with(lines[0], "outcome: ")) {
    throw MalformedSectionError("RESULT", "missing outcome line");
  }
  try {
    c.outcome.kind = outcome_kind_from_string(lines[0].substr(std::string_view("outcome: ").size()));
  } catch (const FormatError& e) {
    throw MalformedSectionError("RESULT", e.what());
  }
  std::size_t i = 1;
  if (i < lines.size() && starts_with(lines[i], "detail: ")) {
    c.outcome.detail = lines[i].substr(std::string_view("detail: ").size());
    ++i;
  }
  if (i < lines.size() && starts_with(lines[i], "columns: ")) {
    c.preview.columns = split(std::string_view(lines[i]).substr(std::string_view("columns: ").size()), " | ");
    ++i;
    for (; i < lines.size(); ++i) {
      const auto& line = lines[i];
      if (starts_with(line, "(") && line.size() > 12 && line.substr(line.size() - 11) == " more rows)") {
        c.preview.total_rows = c.preview.rows.size() + std::stoul(line.substr(1));
        ++i;
        break;
      }
      c.preview.rows.push_back(split(line, " | "));
    }
    if (c.preview.total_rows == 0) c.preview.total_rows = c.preview.rows.size();
  }
  if (i != lines.size()) throw MalformedSectionError("RESULT", "unexpected line: " + lines[i]);
}

std::string join_lines(const std::vector<std::string>& lines) { return join(lines, "\n"); }

}  // namespace

Case parse_case(std::string_view text) {
  auto lines = split_lines(text);

  std::vector<std::pair<std::string, std::vector<std::string>>> sections;
  for (const auto& line : lines) {
    bool is_header = std::find(kSections.begin(), kSections.end(), line) != kSections.end();
    if (is_header) {
      sections.emplace_back(line, std::vector<std::string>{});
    } else if (sections.empty()) {
      throw MalformedSectionError("SCHEMA", "content before first section header");
    } else {
      sections.back().second.push_back(line);
    }
  }

  for (std::size_t i = 0; i < kSections.size(); ++i) {
    if (i >= sections.size()) {
      if (i == 3) break;  // RESULT is optional
      throw MalformedSectionError(std::string(kSections[i]), "section missing");
    }
    if (sections[i].first != kSections[i]) {
      throw MalformedSectionError(std::string(kSections[i]),
                                  "expected here, found " + sections[i].first);
    }
  }
  if (sections.size() > kSections.size()) {
    throw MalformedSectionError(sections[kSections.size()].first, "duplicate section");
  }

  Case c;
  c.schema = parse_schema_lines(sections[0].second);
  c.question = join_lines(sections[1].second);
  if (trim(c.question).empty()) throw MalformedSectionError("QUESTION", "empty question");
  c.generated_sql = join_lines(sections[2].second);
  if (sections.size() == 4) parse_result_lines(sections[3].second, c);
  return c;
}

// ---------------------------------------------------------------------------
// JSON records
// ---------------------------------------------------------------------------

namespace {

ColumnRef column_ref_from_string(const std::string& s) {
  auto dot = s.find('.');
  if (dot == std::string::npos) throw FormatError("bad column reference: " + s);
  return {s.substr(0, dot), s.substr(dot + 1)};
}

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw FormatError(std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

}  // namespace

json schema_to_json(const SchemaDescription& schema) {
  json tables = json::array();
  for (const auto& t : schema.tables) {
    json cols = json::array();
    for (const auto& c : t.columns) cols.push_back({{"name", c.name}, {"type", c.type}});
    tables.push_back({{"name", t.name}, {"columns", std::move(cols)}});
  }
  json pks = json::array();
  for (const auto& pk : schema.primary_keys) pks.push_back(pk.str());
  json fks = json::array();
  for (const auto& fk : schema.foreign_keys) fks.push_back(json::array({fk.from.str(), fk.to.str()}));
  return {{"db_id", schema.db_id}, {"tables", std::move(tables)}, {"primary_keys", std::move(pks)},
          {"foreign_keys", std::move(fks)}};
}

SchemaDescription schema_from_json(const json& j) {
  SchemaDescription s;
  s.db_id = require_string(j, "db_id");
  for (const auto& t : require(j, "tables")) {
    Table table{require_string(t, "name"), {}};
    for (const auto& c : require(t, "columns")) table.columns.push_back({require_string(c, "name"), require_string(c, "type")});
    s.tables.push_back(std::move(table));
  }
  if (j.contains("primary_keys")) {
    for (const auto& pk : j.at("primary_keys")) s.primary_keys.push_back(column_ref_from_string(pk.get<std::string>()));
  }
  if (j.contains("foreign_keys")) {
    for (const auto& fk : j.at("foreign_keys")) {
      if (!fk.is_array() || fk.size() != 2) throw FormatError("foreign key must be a pair");
      s.foreign_keys.push_back({column_ref_from_string(fk[0].get<std::string>()),
                                column_ref_from_string(fk[1].get<std::string>())});
    }
  }
  return s;
}

json outcome_to_json(const ExecutionOutcome& outcome) {
  return {{"kind", std::string(to_string(outcome.kind))}, {"detail", outcome.detail}};
}

ExecutionOutcome outcome_from_json(const json& j) {
  ExecutionOutcome o;
  o.kind = outcome_kind_from_string(require_string(j, "kind"));
  if (j.contains("detail")) o.detail = j.at("detail").get<std::string>();
  if (o.kind == OutcomeKind::ExecutionError && o.detail.empty()) {
    throw FormatError("ExecutionError outcome requires a detail message");
  }
  return o;
}

json preview_to_json(const ResultPreview& preview) {
  return {{"columns", preview.columns}, {"rows", preview.rows}, {"total_rows", preview.total_rows}};
}

ResultPreview preview_from_json(const json& j) {
  ResultPreview p;
  p.columns = require(j, "columns").get<std::vector<std::string>>();
  p.rows = require(j, "rows").get<std::vector<std::vector<std::string>>>();
  p.total_rows = j.value("total_rows", p.rows.size());
  return p;
}

json correction_case_to_json(const CorrectionCase& cc) {
  json labels = json::array();
  for (auto id : cc.error_types) labels.push_back(std::string(to_string(id)));
  json j = {
      {"db_id", cc.case_.schema.db_id},
      {"question", cc.case_.question},
      {"generated_sql", cc.case_.generated_sql},
      {"outcome", outcome_to_json(cc.case_.outcome)},
      {"error_types", std::move(labels)},
      {"ground_truth_sql", cc.ground_truth_sql},
      {"reason", cc.reason},
      {"instruction", cc.instruction},
  };
  if (!cc.case_.schema.tables.empty()) j["schema"] = schema_to_json(cc.case_.schema);
  if (!cc.case_.preview.columns.empty()) j["result_preview"] = preview_to_json(cc.case_.preview);
  return j;
}

CorrectionCase correction_case_from_json(const json& j) {
  CorrectionCase cc;
  try {
    if (j.contains("schema")) {
      cc.case_.schema = schema_from_json(j.at("schema"));
    }
    cc.case_.schema.db_id = require_string(j, "db_id");
    cc.case_.question = require_string(j, "question");
    cc.case_.generated_sql = require_string(j, "generated_sql");
    cc.case_.outcome = outcome_from_json(require(j, "outcome"));
    if (j.contains("result_preview")) cc.case_.preview = preview_from_json(j.at("result_preview"));
    for (const auto& id : require(j, "error_types")) cc.error_types.push_back(error_type_id_from_string(id.get<std::string>()));
    cc.ground_truth_sql = require_string(j, "ground_truth_sql");
    cc.reason = require_string(j, "reason");
    cc.instruction = require_string(j, "instruction");
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupted correction-case record: ") + e.what());
  }
  try {
    cc.validate();
  } catch (const CaseError& e) {
    throw FormatError(std::string("invalid correction case: ") + e.what());
  }
  return cc;
}

void write_correction_cases(const std::filesystem::path& path, const std::vector<CorrectionCase>& cases) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << json{{"version", kKbFormatVersion}}.dump() << "\n";
  for (const auto& cc : cases) out << correction_case_to_json(cc).dump() << "\n";
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<CorrectionCase> read_correction_cases(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header record");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": header is not a JSON record");
  }
  if (!header.is_object() || header.value("version", "") != kKbFormatVersion) {
    throw FormatError(path.string() + ": version mismatch, expected " + std::string(kKbFormatVersion));
  }
  std::vector<CorrectionCase> cases;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      cases.push_back(correction_case_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

}  // namespace ecpt
