#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpt/case_model.hpp"
#include "ecpt/embedding.hpp"
#include "ecpt/kb_store.hpp"
#include "ecpt/llm_gateway.hpp"
#include "ecpt/spider_ingest.hpp"
#include "ecpt/sql_runner.hpp"

namespace ecpt {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineOptions {
  bool option_a_finetuned_embeddings = false;
  bool option_b_examples_in_diagnosis = false;
  /// true: retrieval filtered by every diagnosed type; false: top type only.
  bool option_c_resolve_all_at_once = false;
  int max_trials = 3;
  std::size_t retrieval_k = 3;
  /// Self-correction baseline: one generic fix prompt per trial, no
  /// diagnosis or retrieval.
  bool generic = false;

  void validate() const;
  bool operator==(const PipelineOptions&) const = default;
};

json options_to_json(const PipelineOptions& o);
PipelineOptions options_from_json(const json& j);

struct TrialRecord {
  int trial_index = 1;  // 1-based
  std::vector<ErrorTypeId> diagnosis;  // empty when the reply was unparseable
  std::vector<std::uint64_t> retrieved_ids;
  std::string candidate_sql;
  ExecutionOutcome outcome;
  TokenUsage usage;  // sum over the trial's LLM calls
  std::string failure;  // parse failure that ended the trial early

  bool operator==(const TrialRecord&) const = default;
};

enum class ItemStatus { Evaluated, TruthFailed, Error };

std::string_view to_string(ItemStatus s);

struct CaseResult {
  std::size_t index = 0;
  std::string item_ref;
  std::string db_id;
  std::string question;
  ItemStatus status = ItemStatus::Evaluated;
  std::string error;

  std::string zero_shot_sql;
  ExecutionOutcome zero_shot_outcome;
  TokenUsage zero_shot_usage;

  std::string final_sql;
  ExecutionOutcome final_outcome;
  std::vector<TrialRecord> trials;

  TokenUsage correction_usage() const;
  TokenUsage total_usage() const { return zero_shot_usage + correction_usage(); }
  bool evaluated() const { return status == ItemStatus::Evaluated; }
  bool zero_shot_success() const { return evaluated() && zero_shot_outcome.is_success(); }
  bool fixed() const { return evaluated() && !zero_shot_outcome.is_success() && final_outcome.is_success(); }

  bool operator==(const CaseResult&) const = default;
};

json case_result_to_json(const CaseResult& r);
CaseResult case_result_from_json(const json& j);

inline constexpr std::string_view kResultsFormatVersion = "ecpt-results/1";

/// Line-delimited results: a header record {"version","model","options"}
/// followed by one CaseResult per line. Checkpoints use the same format.
struct ResultsFile {
  std::string model;
  PipelineOptions options;
  std::vector<CaseResult> results;
};

void write_results(const std::filesystem::path& path, const ResultsFile& file);
ResultsFile read_results(const std::filesystem::path& path);

struct ZeroShotResult {
  std::string generated_sql;
  ExecutionOutcome outcome;
  TokenUsage usage;
  Case failing_case;  // the zero-shot case, with schema and result preview
};

struct RunHooks {
  std::function<void(const CaseResult&)> on_complete;
  const std::atomic<bool>* cancel = nullptr;  // stop taking new items when set
};

/// Everything the pipeline reads. Retrieval members may be null in generic
/// mode. All referenced objects must outlive the Pipeline.
struct PipelineContext {
  const SqlRunner* runner = nullptr;
  LlmGateway* gateway = nullptr;
  GenerationSettings settings;
  std::map<std::string, SchemaDescription> schemas;
  const KbStore* kb = nullptr;
  const BaseEmbedder* embedder = nullptr;
  const ProjectionModel* model = nullptr;
  PipelineOptions options;
  PreviewLimits preview;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineContext ctx);

  const PipelineContext& context() const { return ctx_; }

  /// Throws PipelineError if the item's ground truth fails; LLM errors propagate.
  ZeroShotResult run_zero_shot(const DatasetItem& item) const;

  /// Up to max_trials diagnose/prescribe/treat rounds, stopping at Success.
  CaseResult correct(const DatasetItem& item, const Case& failing_case) const;

  /// Zero-shot then correction; never throws, errors land in the result.
  CaseResult process(const DatasetItem& item, std::size_t index) const;

  /// Results come back in input order. With a checkpoint path, completed
  /// items are appended as they finish and reloaded on the next call.
  std::vector<CaseResult> run_dataset(const std::vector<DatasetItem>& items, std::size_t parallelism,
                                      const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                                      const RunHooks& hooks = {}) const;

 private:
  const SchemaDescription& schema_for(const std::string& db_id) const;
  Case make_case(const SchemaDescription& schema, const std::string& question, const std::string& sql,
                 const ExecResult& generated, const ExecutionOutcome& outcome) const;
  DiagnosisExamples option_b_examples(const EmbeddingVector& query) const;
  // Each returns the raw treatment completion, or nullopt when an earlier
  // step's reply could not be parsed (recorded in trial.failure).
  std::optional<std::string> ecpt_steps(const Case& current, TrialRecord& trial) const;
  std::optional<std::string> generic_step(const Case& current, TrialRecord& trial) const;

  PipelineContext ctx_;
};

}  // namespace ecpt
