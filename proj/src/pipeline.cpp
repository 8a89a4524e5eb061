#include "ecpt/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "ecpt/hashing.hpp"

namespace ecpt {

// ---------------------------------------------------------------------------
// Options and records
// ---------------------------------------------------------------------------

void PipelineOptions::validate() const {
  if (max_trials < 1) throw PipelineError("max_trials must be at least 1");
}

json options_to_json(const PipelineOptions& o) {
  return {{"option_a_finetuned_embeddings", o.option_a_finetuned_embeddings},
          {"option_b_examples_in_diagnosis", o.option_b_examples_in_diagnosis},
          {"option_c_resolve_all_at_once", o.option_c_resolve_all_at_once},
          {"max_trials", o.max_trials},
          {"retrieval_k", o.retrieval_k},
          {"generic", o.generic}};
}

PipelineOptions options_from_json(const json& j) {
  PipelineOptions o;
  o.option_a_finetuned_embeddings = j.value("option_a_finetuned_embeddings", o.option_a_finetuned_embeddings);
  o.option_b_examples_in_diagnosis = j.value("option_b_examples_in_diagnosis", o.option_b_examples_in_diagnosis);
  o.option_c_resolve_all_at_once = j.value("option_c_resolve_all_at_once", o.option_c_resolve_all_at_once);
  o.max_trials = j.value("max_trials", o.max_trials);
  o.retrieval_k = j.value("retrieval_k", o.retrieval_k);
  o.generic = j.value("generic", o.generic);
  o.validate();
  return o;
}

std::string_view to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::Evaluated: return "evaluated";
    case ItemStatus::TruthFailed: return "truth_failed";
    case ItemStatus::Error: return "error";
  }
  return "?";
}

namespace {

ItemStatus item_status_from_string(const std::string& s) {
  if (s == "evaluated") return ItemStatus::Evaluated;
  if (s == "truth_failed") return ItemStatus::TruthFailed;
  if (s == "error") return ItemStatus::Error;
  throw FormatError("unknown item status: " + s);
}

json usage_to_json(const TokenUsage& u) {
  return {{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}

TokenUsage usage_from_json(const json& j) {
  return {j.at("prompt_tokens").get<std::int64_t>(), j.at("completion_tokens").get<std::int64_t>()};
}

json ids_to_json(const std::vector<ErrorTypeId>& ids) {
  json out = json::array();
  for (auto id : ids) out.push_back(std::string(to_string(id)));
  return out;
}

}  // namespace

TokenUsage CaseResult::correction_usage() const {
  TokenUsage total;
  for (const auto& t : trials) total += t.usage;
  return total;
}

json case_result_to_json(const CaseResult& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"trial_index", t.trial_index},
                      {"diagnosis", ids_to_json(t.diagnosis)},
                      {"retrieved_ids", t.retrieved_ids},
                      {"candidate_sql", t.candidate_sql},
                      {"outcome", outcome_to_json(t.outcome)},
                      {"prompt_tokens", t.usage.prompt_tokens},
                      {"completion_tokens", t.usage.completion_tokens},
                      {"failure", t.failure}});
  }
  return {{"index", r.index},
          {"item_ref", r.item_ref},
          {"db_id", r.db_id},
          {"question", r.question},
          {"status", std::string(to_string(r.status))},
          {"error", r.error},
          {"zero_shot_sql", r.zero_shot_sql},
          {"zero_shot_outcome", outcome_to_json(r.zero_shot_outcome)},
          {"zero_shot_usage", usage_to_json(r.zero_shot_usage)},
          {"final_sql", r.final_sql},
          {"final_outcome", outcome_to_json(r.final_outcome)},
          {"trials", std::move(trials)}};
}

CaseResult case_result_from_json(const json& j) {
  try {
    CaseResult r;
    r.index = j.at("index").get<std::size_t>();
    r.item_ref = j.at("item_ref").get<std::string>();
    r.db_id = j.at("db_id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.status = item_status_from_string(j.at("status").get<std::string>());
    r.error = j.value("error", "");
    r.zero_shot_sql = j.at("zero_shot_sql").get<std::string>();
    r.zero_shot_outcome = outcome_from_json(j.at("zero_shot_outcome"));
    r.zero_shot_usage = usage_from_json(j.at("zero_shot_usage"));
    r.final_sql = j.at("final_sql").get<std::string>();
    r.final_outcome = outcome_from_json(j.at("final_outcome"));
    for (const auto& t : j.at("trials")) {
      TrialRecord tr;
      tr.trial_index = t.at("trial_index").get<int>();
      for (const auto& id : t.at("diagnosis")) tr.diagnosis.push_back(error_type_id_from_string(id.get<std::string>()));
      tr.retrieved_ids = t.at("retrieved_ids").get<std::vector<std::uint64_t>>();
      tr.candidate_sql = t.at("candidate_sql").get<std::string>();
      tr.outcome = outcome_from_json(t.at("outcome"));
      tr.usage = {t.at("prompt_tokens").get<std::int64_t>(), t.at("completion_tokens").get<std::int64_t>()};
      tr.failure = t.value("failure", "");
      r.trials.push_back(std::move(tr));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupted result record: ") + e.what());
  }
}

namespace {

json results_header(const std::string& model, const PipelineOptions& options) {
  return {{"version", kResultsFormatVersion}, {"model", model}, {"options", options_to_json(options)}};
}

// Reads a results/checkpoint file. With `tolerate_partial_tail`, a final
// line that fails to parse (an interrupted append) is dropped.
ResultsFile read_results_impl(const std::filesystem::path& path, bool tolerate_partial_tail) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open results file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header record");
  ResultsFile file;
  try {
    json header = json::parse(line);
    if (header.value("version", "") != kResultsFormatVersion) {
      throw FormatError(path.string() + ": version mismatch, expected " + std::string(kResultsFormatVersion));
    }
    file.model = header.at("model").get<std::string>();
    file.options = options_from_json(header.at("options"));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      file.results.push_back(case_result_from_json(json::parse(lines[i])));
    } catch (const std::exception& e) {
      if (tolerate_partial_tail && i + 1 == lines.size()) break;
      throw FormatError(path.string() + ": record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return file;
}

}  // namespace

void write_results(const std::filesystem::path& path, const ResultsFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write results file " + path.string());
  out << results_header(file.model, file.options).dump() << "\n";
  for (const auto& r : file.results) out << case_result_to_json(r).dump() << "\n";
  if (!out) throw FormatError("write failed: " + path.string());
}

ResultsFile read_results(const std::filesystem::path& path) { return read_results_impl(path, false); }

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineContext ctx) : ctx_(std::move(ctx)) {
  if (!ctx_.runner || !ctx_.gateway) throw PipelineError("pipeline needs a SQL runner and an LLM gateway");
  ctx_.options.validate();
  if (ctx_.options.generic) return;

  if (!ctx_.kb || !ctx_.embedder || !ctx_.model) {
    throw PipelineError("ECPT mode needs a knowledge base, an embedder and a projection model");
  }
  try {
    ctx_.kb->check_model(*ctx_.model);
    ctx_.kb->check_embedder(*ctx_.embedder);
  } catch (const KbError& e) {
    throw PipelineError(e.what());
  }
  const bool identity = ctx_.model->hash() == ProjectionModel::identity(ctx_.model->dimension()).hash();
  if (ctx_.options.option_a_finetuned_embeddings && identity) {
    throw PipelineError("option A requires a fine-tuned projection; the knowledge base uses the identity model");
  }
  if (!ctx_.options.option_a_finetuned_embeddings && !identity) {
    throw PipelineError("option A is off but the knowledge base was built with a fine-tuned projection");
  }
}

const SchemaDescription& Pipeline::schema_for(const std::string& db_id) const {
  auto it = ctx_.schemas.find(db_id);
  if (it == ctx_.schemas.end()) throw PipelineError("no schema for database " + db_id);
  return it->second;
}

Case Pipeline::make_case(const SchemaDescription& schema, const std::string& question, const std::string& sql,
                         const ExecResult& generated, const ExecutionOutcome& outcome) const {
  Case c;
  c.schema = schema;
  c.question = question;
  c.generated_sql = sql;
  c.outcome = outcome;
  if (generated.ok()) c.preview = make_preview(generated.table(), ctx_.preview);
  return c;
}

ZeroShotResult Pipeline::run_zero_shot(const DatasetItem& item) const {
  const auto& schema = schema_for(item.db_id);
  const auto truth = ctx_.runner->execute(item.db_id, item.ground_truth_sql);
  if (!truth.ok()) throw PipelineError("ground truth failed: " + truth.error().message);

  auto response = ctx_.gateway->complete(
      ctx_.settings.request(Step::ZeroShot, render_zero_shot(schema, item.question)));

  ZeroShotResult z;
  z.usage = response.usage();
  try {
    z.generated_sql = parse_sql(response.text);
  } catch (const ParseError&) {
    z.generated_sql = trim(response.text);
    z.outcome = ExecutionOutcome::execution_error("no SQL in completion");
    z.failing_case = make_case(schema, item.question, z.generated_sql, ExecError{}, z.outcome);
    return z;
  }
  const auto generated = ctx_.runner->execute(item.db_id, z.generated_sql);
  z.outcome = classify_outcome(generated, truth, ComparisonPolicy::for_truth(item.ground_truth_sql));
  z.failing_case = make_case(schema, item.question, z.generated_sql, generated, z.outcome);
  return z;
}

DiagnosisExamples Pipeline::option_b_examples(const EmbeddingVector& query) const {
  DiagnosisExamples examples;
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) {
    const auto id = error_type_catalog()[i].id;
    auto hits = ctx_.kb->search(query, 1, std::set<ErrorTypeId>{id});
    if (!hits.empty()) examples.emplace(id, hits.front().entry->correction_case);
  }
  return examples;
}

std::optional<std::string> Pipeline::ecpt_steps(const Case& current, TrialRecord& trial) const {
  const bool need_vector = ctx_.options.option_b_examples_in_diagnosis || ctx_.options.retrieval_k > 0;
  std::optional<EmbeddingVector> query;
  if (need_vector) query = embed(*ctx_.embedder, serialize_case(current, true), *ctx_.model);

  // 1. Diagnose
  DiagnosisExamples examples;
  if (ctx_.options.option_b_examples_in_diagnosis) examples = option_b_examples(*query);
  auto diag_reply = ctx_.gateway->complete(ctx_.settings.request(
      Step::Diagnosis, render_diagnosis(current, ctx_.options.option_b_examples_in_diagnosis ? &examples : nullptr)));
  trial.usage += diag_reply.usage();
  Diagnosis diagnosis;
  try {
    diagnosis = parse_diagnosis(diag_reply.text);
  } catch (const ParseError& e) {
    trial.failure = e.what();
    return std::nullopt;
  }
  trial.diagnosis = diagnosis.ranked_error_ids;

  // 2. Retrieve and prescribe
  std::vector<const CorrectionCase*> retrieved;
  if (ctx_.options.retrieval_k > 0) {
    std::set<ErrorTypeId> filter;
    if (ctx_.options.option_c_resolve_all_at_once) {
      filter.insert(diagnosis.ranked_error_ids.begin(), diagnosis.ranked_error_ids.end());
    } else {
      filter.insert(diagnosis.top());
    }
    for (const auto& hit : ctx_.kb->search(*query, ctx_.options.retrieval_k, filter)) {
      retrieved.push_back(&hit.entry->correction_case);
      trial.retrieved_ids.push_back(hit.entry->id);
    }
  }
  auto rx_reply = ctx_.gateway->complete(
      ctx_.settings.request(Step::Prescription, render_prescription(current, diagnosis, retrieved)));
  trial.usage += rx_reply.usage();
  Prescription prescription;
  try {
    prescription = parse_prescription(rx_reply.text);
  } catch (const ParseError& e) {
    trial.failure = e.what();
    return std::nullopt;
  }

  // 3. Treat
  auto tx_reply =
      ctx_.gateway->complete(ctx_.settings.request(Step::Treatment, render_treatment(current, prescription)));
  trial.usage += tx_reply.usage();
  return tx_reply.text;
}

std::optional<std::string> Pipeline::generic_step(const Case& current, TrialRecord& trial) const {
  auto reply = ctx_.gateway->complete(ctx_.settings.request(Step::Generic, render_generic_correction(current)));
  trial.usage += reply.usage();
  return reply.text;
}

CaseResult Pipeline::correct(const DatasetItem& item, const Case& failing_case) const {
  if (failing_case.outcome.is_success()) throw PipelineError("correct() called on a successful case");
  const auto truth = ctx_.runner->execute(item.db_id, item.ground_truth_sql);
  if (!truth.ok()) throw PipelineError("ground truth failed: " + truth.error().message);
  const auto policy = ComparisonPolicy::for_truth(item.ground_truth_sql);

  CaseResult result;
  result.item_ref = item.ref();
  result.db_id = item.db_id;
  result.question = item.question;
  result.zero_shot_sql = failing_case.generated_sql;
  result.zero_shot_outcome = failing_case.outcome;

  Case current = failing_case;
  for (int t = 1; t <= ctx_.options.max_trials; ++t) {
    TrialRecord trial;
    trial.trial_index = t;
    auto completion = ctx_.options.generic ? generic_step(current, trial) : ecpt_steps(current, trial);
    if (!completion) {
      trial.outcome = current.outcome;
      trial.candidate_sql = current.generated_sql;
      result.trials.push_back(std::move(trial));
      continue;
    }

    ExecResult generated = ExecError{};
    try {
      trial.candidate_sql = parse_sql(*completion);
      generated = ctx_.runner->execute(item.db_id, trial.candidate_sql);
      trial.outcome = classify_outcome(generated, truth, policy);
    } catch (const ParseError&) {
      trial.candidate_sql = trim(*completion);
      trial.failure = "no SQL in completion";
      trial.outcome = ExecutionOutcome::execution_error("no SQL in completion");
    }
    current = make_case(current.schema, current.question, trial.candidate_sql, generated, trial.outcome);
    const bool success = trial.outcome.is_success();
    result.trials.push_back(std::move(trial));
    if (success) break;
  }
  result.final_sql = current.generated_sql;
  result.final_outcome = current.outcome;
  return result;
}

CaseResult Pipeline::process(const DatasetItem& item, std::size_t index) const {
  CaseResult result;
  try {
    if (!item.truth_ok) {
      result.status = ItemStatus::TruthFailed;
      result.error = item.truth_error;
    } else {
      ZeroShotResult z;
      bool truth_failed = false;
      try {
        z = run_zero_shot(item);
      } catch (const PipelineError& e) {
        truth_failed = true;
        result.status = ItemStatus::TruthFailed;
        result.error = e.what();
      }
      if (!truth_failed) {
        if (!z.outcome.is_success()) {
          result = correct(item, z.failing_case);
        } else {
          result.final_sql = z.generated_sql;
          result.final_outcome = z.outcome;
        }
        result.zero_shot_sql = z.generated_sql;
        result.zero_shot_outcome = z.outcome;
        result.zero_shot_usage = z.usage;
      }
    }
  } catch (const std::exception& e) {
    result = CaseResult{};
    result.status = ItemStatus::Error;
    result.error = e.what();
  }
  result.index = index;
  result.item_ref = item.ref();
  result.db_id = item.db_id;
  result.question = item.question;
  return result;
}

std::vector<CaseResult> Pipeline::run_dataset(const std::vector<DatasetItem>& items, std::size_t parallelism,
                                              const std::optional<std::filesystem::path>& checkpoint,
                                              const RunHooks& hooks) const {
  std::vector<std::optional<CaseResult>> slots(items.size());

  std::ofstream checkpoint_out;
  std::mutex checkpoint_mutex;
  if (checkpoint) {
    ResultsFile done{ctx_.settings.model, ctx_.options, {}};
    if (std::filesystem::exists(*checkpoint)) {
      auto previous = read_results_impl(*checkpoint, true);
      if (previous.model != ctx_.settings.model || !(previous.options == ctx_.options)) {
        throw PipelineError("checkpoint " + checkpoint->string() + " was written with a different configuration");
      }
      for (auto& r : previous.results) {
        if (r.index >= items.size() || items[r.index].ref() != r.item_ref) {
          throw PipelineError("checkpoint entry " + r.item_ref + " does not match the dataset");
        }
        slots[r.index] = r;
        done.results.push_back(std::move(r));
      }
    }
    // Rewrite cleanly (drops any partial tail), then append as items finish.
    write_results(*checkpoint, done);
    checkpoint_out.open(*checkpoint, std::ios::binary | std::ios::app);
    if (!checkpoint_out) throw PipelineError("cannot append to checkpoint " + checkpoint->string());
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!slots[i]) pending.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      if (hooks.cancel && hooks.cancel->load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      CaseResult r = process(items[i], i);
      {
        std::lock_guard lock(checkpoint_mutex);
        if (checkpoint_out.is_open()) {
          checkpoint_out << case_result_to_json(r).dump() << "\n";
          checkpoint_out.flush();
        }
        if (hooks.on_complete) hooks.on_complete(r);
        slots[i] = std::move(r);
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(1, pending.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<CaseResult> results;
  results.reserve(items.size());
  for (auto& s : slots) {
    if (s) results.push_back(std::move(*s));
  }
  return results;
}

}  // namespace ecpt
