#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ecpt/case_model.hpp"
#include "ecpt/embedding.hpp"
#include "ecpt/kb_store.hpp"
#include "ecpt/llm_gateway.hpp"
#include "ecpt/pipeline.hpp"
#include "ecpt/sql_runner.hpp"

namespace ecpt::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

/// Creates a SQLite file and runs `script` (several statements) on it.
void make_sqlite(const std::filesystem::path& path, const std::string& script);

/// Two small databases, "shop" and "school", laid out like a Spider release:
/// <root>/tables.json, <root>/dev.json, <root>/database/<id>/<id>.sqlite.
/// dev.json holds the scripted scenario items below.
void write_mini_spider(const std::filesystem::path& root);

SchemaDescription shop_schema();
SchemaDescription school_schema();

/// Registers both fixture databases (from a write_mini_spider root).
void register_fixture_databases(SqlRunner& runner, const std::filesystem::path& root);

struct ClassifierCase {
  std::string name;
  std::string db_id;
  std::string generated;
  std::string truth;
  OutcomeKind expected;
};

/// Hand-labeled generated/truth query pairs over the fixture databases.
std::vector<ClassifierCase> classifier_cases();

/// One item of the scripted end-to-end scenario.
struct ScenarioItem {
  std::string db_id;
  std::string question;
  std::string truth;
  std::string zero_shot_reply;
  std::vector<std::string> treatment_replies;  // last one repeats
  int scheduled_trials = 0;                    // 0 when zero-shot succeeds
  bool fixed = false;
};

/// 20 items: 12 zero-shot successes, 8 failures of which 5 get fixed.
const std::vector<ScenarioItem>& scenario_items();

/// Mock script (ecpt-mock/1) that drives the scenario in ECPT and generic mode.
json scenario_mock_script();

/// Labeled correction cases over the fixture schemas, at least two per
/// error type, a few carrying two labels.
std::vector<CorrectionCase> sample_correction_cases();

struct SyntheticSet {
  std::vector<LabeledVector> train;
  std::vector<LabeledVector> held_out;
};

/// Base vectors = label prototype (unit, inside the first `signal_dims`
/// coordinates) plus Gaussian noise of scale `noise` on every coordinate.
SyntheticSet noisy_prototypes(std::size_t labels, std::size_t per_label, std::size_t held_out_per_label,
                              std::size_t dim, std::size_t signal_dims, double noise, std::uint64_t seed);

/// Brute-force nearest neighbour (cosine after projection) label precision:
/// fraction of queries whose most similar reference vector shares its label.
double precision_at_1(const ProjectionModel& model, const std::vector<LabeledVector>& reference,
                      const std::vector<LabeledVector>& queries);

/// Same scan within one set, each vector querying all the others.
double leave_one_out_precision(const ProjectionModel& model, const std::vector<LabeledVector>& set);

/// Full stable sort of every eligible entry by (similarity desc, id asc),
/// truncated to k: the reference for KbStore::search.
std::vector<std::uint64_t> brute_force_top_k(const KbStore& kb, const EmbeddingVector& query, std::size_t k,
                                             const ErrorTypeFilter& filter = {});

/// Store of `count` random unit vectors in `dim` dimensions; every fifth
/// vector duplicates an earlier one so that ties occur. Labels cycle through
/// sample_correction_cases().
KbStore random_store(std::size_t count, std::size_t dim, std::uint64_t seed);

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim);

/// Fixed inputs behind the prompt snapshots in tests/golden.
struct PromptInputs {
  Case failing;
  std::string truth_sql;
  Diagnosis diagnosis;
  Prescription prescription;
  std::vector<CorrectionCase> retrieved;
  DiagnosisExamples examples;  // first sample case per error type
};
PromptInputs golden_prompt_inputs();

/// Snapshot file name -> rendered prompt.
std::map<std::string, std::string> render_golden_prompts();

/// First sample correction case whose primary label is each of e1..e13.
DiagnosisExamples option_b_examples_from_samples();

/// The scripted scenario ready to run: mini Spider files in a temp dir,
/// registered databases, loaded items and a knowledge base of the sample
/// correction cases (hashing embedder, identity projection).
class ScenarioRig {
 public:
  ScenarioRig();

  /// Context over `gateway`; retrieval members are left null in generic mode.
  PipelineContext context(LlmGateway& gateway, const PipelineOptions& options) const;
  std::unique_ptr<MockBackend> scenario_mock() const;

  TempDir dir;
  SqlRunner runner;
  std::vector<SchemaDescription> schemas;
  std::vector<DatasetItem> items;
  HashingEmbedder embedder{256};
  ProjectionModel model = ProjectionModel::identity(256);
  KbStore kb{256, ProjectionModel::identity(256).hash(), HashingEmbedder(256).identity()};
};

}  // namespace ecpt::testing
