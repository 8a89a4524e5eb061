#include "ecpt/case_model.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fixtures.hpp"

using namespace ecpt;
using ecpt::testing::TempDir;

namespace {

Case food_case() {
  Case c;
  c.schema = ecpt::testing::shop_schema();
  c.question = "List the names of products in the food category.";
  c.generated_sql = "SELECT name FROM products WHERE category = \"food\"";
  c.outcome = ExecutionOutcome::empty_table("generated query returned no rows; expected 2");
  c.preview.columns = {"name"};
  c.preview.total_rows = 0;
  return c;
}

// Text form drops primary keys; everything else must survive.
Case without_primary_keys(Case c) {
  c.schema.primary_keys.clear();
  return c;
}

int count_lines_starting_with(const std::string& text, const std::string& prefix) {
  int n = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
    pos = end + 1;
  }
  return n;
}

}  // namespace

TEST(ErrorCatalog, HasThirteenErrorsPlusSuccess) {
  const auto& cat = error_type_catalog();
  std::set<std::string_view> codes;
  for (const auto& e : cat) codes.insert(e.code);
  EXPECT_EQ(codes.size(), 14u);
  EXPECT_EQ(cat.back().id, ErrorTypeId::Success);
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) {
    EXPECT_EQ(cat[i].code, "e" + std::to_string(i + 1));
    EXPECT_EQ(static_cast<int>(cat[i].id), static_cast<int>(i + 1));
  }
}

TEST(ErrorCatalog, NamesAndExplanationsMatchTheTable) {
  struct Row {
    ErrorTypeId id;
    std::string_view name, expl;
  };
  const Row expected[] = {
      {ErrorTypeId::E1, "Other:DISTINCT", "Didn’t use or use keyword DISTINCT properly."},
      {ErrorTypeId::E2, "Other:DESC", "Didn’t use or use keyword DESC properly."},
      {ErrorTypeId::E3, "Other:Not Enough Value Information", "Wrong value in the WHERE clause."},
      {ErrorTypeId::E5, "Schema-Linking:Cond", "Missing or used wrong logic in the conditions."},
      {ErrorTypeId::E6, "Nested:Wrong Sub Query", "Unnecessary or wrong sub query."},
      {ErrorTypeId::E7, "Nested:Set Operation", "Didn’t used set operation."},
      {ErrorTypeId::E8, "Join:Wrong Tables/Cols", "Joined unnecessary or wrong tables or columns."},
      {ErrorTypeId::E10, "Invalid:Wrong Cols", "Use columns that do not exist in the table."},
      {ErrorTypeId::E11, "Invalid:Alias", "Used same column name in a single statement without any alias."},
      {ErrorTypeId::E12, "Group-by:Not Detected", "Didn’t use GROUP BY keyword where it should be used."},
      {ErrorTypeId::E13, "Group-by:Wrong Cols", "Group by wrong columns or unnecessary group by."},
  };
  for (const auto& row : expected) {
    EXPECT_EQ(error_type(row.id).name, row.name);
    EXPECT_EQ(error_type(row.id).short_explanation, row.expl);
  }
  EXPECT_EQ(error_type(ErrorTypeId::E4).name, "Schema-Linking:Wrong Cols");
  EXPECT_EQ(error_type(ErrorTypeId::E9).name, "Join:Wrong Keyword");
}

TEST(ErrorCatalog, ParsingIsClosedOverTheFourteenIds) {
  for (const auto& e : error_type_catalog()) {
    EXPECT_EQ(parse_error_type_id(e.code), e.id);
    EXPECT_EQ(label_from_index(label_index(e.id)), e.id);
  }
  EXPECT_EQ(label_index(ErrorTypeId::E1), 0u);
  EXPECT_EQ(label_index(ErrorTypeId::Success), 13u);
  EXPECT_FALSE(parse_error_type_id("e0"));
  EXPECT_FALSE(parse_error_type_id("e14"));
  EXPECT_FALSE(parse_error_type_id("E3"));
  EXPECT_THROW(error_type_id_from_string("join"), std::exception);
  EXPECT_THROW(label_from_index(14), std::exception);
}

TEST(ErrorTypeTable, ThirteenRowsInOrder) {
  const std::string text = error_type_table_text();
  EXPECT_EQ(text, error_type_table_text());
  int rows = 0;
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) {
    const auto id = error_type_catalog()[i].id;
    const std::string row = error_type_table_row(id);
    EXPECT_NE(text.find(row + "\n"), std::string::npos) << row;
    rows += count_lines_starting_with(text, std::string(error_type(id).code) + " ");
  }
  EXPECT_EQ(rows, 13);
  EXPECT_EQ(text.find("success"), std::string::npos);
  EXPECT_NE(error_type_table_row(ErrorTypeId::E12).find("GROUP BY"), std::string::npos);
  EXPECT_EQ(text.rfind(error_type_table_header(), 0), 0u);
}

TEST(ExecutionOutcome, ExecutionErrorAlwaysCarriesDetail) {
  EXPECT_FALSE(ExecutionOutcome::execution_error("").detail.empty());
  EXPECT_EQ(ExecutionOutcome::execution_error("no such column: x").detail, "no such column: x");
  for (auto k : {OutcomeKind::Success, OutcomeKind::ExecutionError, OutcomeKind::EmptyTable, OutcomeKind::UndesiredResult}) {
    EXPECT_EQ(outcome_kind_from_string(to_string(k)), k);
  }
}

TEST(Schema, ValidateRejectsDanglingAndDuplicateNames) {
  auto s = ecpt::testing::shop_schema();
  EXPECT_NO_THROW(s.validate());
  auto dangling = s;
  dangling.foreign_keys.push_back({{"orders", "customer_id"}, {"customers", "id"}});
  EXPECT_THROW(dangling.validate(), SchemaError);
  auto dup_table = s;
  dup_table.tables.push_back(s.tables.front());
  EXPECT_THROW(dup_table.validate(), SchemaError);
  auto dup_col = s;
  dup_col.tables[0].columns.push_back({"name", "text"});
  EXPECT_THROW(dup_col.validate(), SchemaError);
}

TEST(Case, ValidateChecksQuestionAndPreviewBound) {
  Case c = food_case();
  EXPECT_NO_THROW(c.validate());
  c.question = "   ";
  EXPECT_THROW(c.validate(), CaseError);
  c = food_case();
  c.preview.rows.assign(11, {"x"});
  c.preview.total_rows = 11;
  EXPECT_THROW(c.validate(), CaseError);
}

TEST(CorrectionCase, LabelInvariants) {
  CorrectionCase cc;
  cc.case_ = food_case();
  cc.ground_truth_sql = "SELECT name FROM products WHERE category = \"Food\"";
  cc.error_types = {ErrorTypeId::E3};
  EXPECT_NO_THROW(cc.validate());
  cc.error_types = {};
  EXPECT_THROW(cc.validate(), CaseError);
  cc.error_types = {ErrorTypeId::E3, ErrorTypeId::E3};
  EXPECT_THROW(cc.validate(), CaseError);
  cc.error_types = {ErrorTypeId::E3, ErrorTypeId::Success};
  EXPECT_THROW(cc.validate(), CaseError);
  cc.error_types = {ErrorTypeId::Success};
  EXPECT_NO_THROW(cc.validate());
  cc.error_types = {ErrorTypeId::E3};
  cc.ground_truth_sql = "";
  EXPECT_THROW(cc.validate(), CaseError);
}

TEST(Elide, KeepsShortValuesAndMarksLongOnes) {
  EXPECT_EQ(elide("abc", 64), "abc");
  const std::string long_value(100, 'x');
  const std::string e = elide(long_value, 64);
  EXPECT_EQ(e.substr(0, 64), long_value.substr(0, 64));
  EXPECT_EQ(e.substr(64), "...");
}

TEST(StructuredText, SerializationIsDeterministicAndSectioned) {
  const Case c = food_case();
  const std::string a = serialize_case(c, true);
  EXPECT_EQ(a, serialize_case(c, true));
  EXPECT_EQ(a.rfind("SCHEMA\n", 0), 0u);
  for (const char* h : {"\nQUESTION\n", "\nSQL\n", "\nRESULT\n"}) EXPECT_NE(a.find(h), std::string::npos) << h;
  EXPECT_EQ(serialize_case(c, false).find("RESULT"), std::string::npos);
  EXPECT_EQ(count_lines_starting_with(a, "FOREIGN KEY "), 1);
}

TEST(StructuredText, NoForeignKeysMeansNoForeignKeyLines) {
  Case c = food_case();
  c.schema.foreign_keys.clear();
  EXPECT_EQ(serialize_case(c, true).find("FOREIGN KEY"), std::string::npos);
}

TEST(StructuredText, ExecutionErrorMessageReachesResultSection) {
  Case c = food_case();
  c.generated_sql = "SELECT title FROM products";
  c.outcome = ExecutionOutcome::execution_error("no such column: title");
  c.preview = {};
  const std::string text = serialize_case(c, true);
  const auto result_at = text.find("\nRESULT\n");
  ASSERT_NE(result_at, std::string::npos);
  EXPECT_NE(text.find("no such column: title", result_at), std::string::npos);
  EXPECT_EQ(parse_case(text).outcome, c.outcome);
}

TEST(StructuredText, RoundTripOverFixtureCorpus) {
  std::vector<Case> corpus{food_case()};
  for (const auto& cc : ecpt::testing::sample_correction_cases()) corpus.push_back(cc.case_);
  Case with_rows = food_case();
  with_rows.outcome = ExecutionOutcome::undesired("result mismatch: generated 3x1, expected 2x1");
  with_rows.preview = {{"name"}, {{"Apple"}, {"Bread"}, {"Hammer"}}, 14};
  corpus.push_back(with_rows);

  for (const auto& c : corpus) {
    const auto parsed = parse_case(serialize_case(c, true));
    EXPECT_EQ(parsed, without_primary_keys(c)) << c.question;
  }
}

TEST(StructuredText, SerializationIsInjectiveOnCorpus) {
  std::set<std::string> texts;
  const auto cases = ecpt::testing::sample_correction_cases();
  for (const auto& cc : cases) texts.insert(serialize_case(cc.case_, true));
  EXPECT_EQ(texts.size(), cases.size());
}

TEST(StructuredText, MissingOrPermutedSectionsAreRejected) {
  const std::string good = serialize_case(food_case(), true);
  const auto q = good.find("QUESTION\n");
  const auto s = good.find("\nSQL\n") + 1;
  const std::string missing_question = good.substr(0, q) + good.substr(s);
  try {
    parse_case(missing_question);
    FAIL() << "expected MalformedSectionError";
  } catch (const MalformedSectionError& e) {
    EXPECT_EQ(e.section(), "QUESTION");
  }

  const auto r = good.find("\nRESULT\n") + 1;
  const std::string question_block = good.substr(q, s - q);
  const std::string sql_block = good.substr(s, r - s);
  const std::string permuted = good.substr(0, q) + sql_block + question_block + good.substr(r);
  EXPECT_THROW(parse_case(permuted), MalformedSectionError);
  EXPECT_THROW(parse_case("QUESTION\nx\n"), MalformedSectionError);
}

TEST(Json, CorrectionCaseRoundTrip) {
  for (const auto& cc : ecpt::testing::sample_correction_cases()) {
    EXPECT_EQ(correction_case_from_json(correction_case_to_json(cc)), cc);
  }
}

TEST(Json, CorruptedRecordIsAFormatError) {
  auto j = correction_case_to_json(ecpt::testing::sample_correction_cases().front());
  j.erase("ground_truth_sql");
  EXPECT_THROW(correction_case_from_json(j), FormatError);
  j = correction_case_to_json(ecpt::testing::sample_correction_cases().front());
  j["error_types"] = {"e99"};
  EXPECT_THROW(correction_case_from_json(j), std::exception);
}

TEST(CorrectionCaseFile, WriteReadRoundTrip) {
  TempDir dir;
  const auto cases = ecpt::testing::sample_correction_cases();
  write_correction_cases(dir / "cases.jsonl", cases);
  EXPECT_EQ(read_correction_cases(dir / "cases.jsonl"), cases);

  ecpt::testing::write_text(dir / "bad.jsonl", "{\"version\":\"ecpt-kb/0\"}\n");
  EXPECT_THROW(read_correction_cases(dir / "bad.jsonl"), FormatError);
  EXPECT_THROW(read_correction_cases(dir / "missing.jsonl"), FormatError);
}

TEST(CorrectionCaseFile, EmptyFileHoldsNoCases) {
  TempDir dir;
  write_correction_cases(dir / "empty.jsonl", {});
  EXPECT_TRUE(read_correction_cases(dir / "empty.jsonl").empty());
}
