#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecpt/case_model.hpp"

namespace ecpt {

// ---------------------------------------------------------------------------
// Requests, responses, errors
// ---------------------------------------------------------------------------

struct LlmRequest {
  std::string model_name;
  double temperature = 0.01;
  int max_tokens = 600;
  std::string prompt;

  void validate() const;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) { return a += b; }
  bool operator==(const TokenUsage&) const = default;
};

struct LlmResponse {
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  TokenUsage usage() const { return {prompt_tokens, completion_tokens}; }
};

enum class LlmErrorKind { Transport, Authentication, RateLimit, MalformedReply };

class LlmError : public std::runtime_error {
 public:
  LlmError(LlmErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  LlmErrorKind kind() const { return kind_; }

 private:
  LlmErrorKind kind_;
};

/// Rough token estimate used for prompt budgets and synthetic mock counts.
std::int64_t approx_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Chat-completion backend. Implementations must tolerate concurrent calls.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
};

/// OpenAI-compatible `/chat/completions` client.
class OpenAiChatBackend final : public LlmBackend {
 public:
  struct Config {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{120};
  };

  explicit OpenAiChatBackend(Config config);
  LlmResponse complete(const LlmRequest& request) override;

 private:
  Config config_;
};

/// One scripted reply. `error` simulates a backend failure instead.
struct MockReply {
  std::string text;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  std::optional<LlmErrorKind> error;
};

/// A rule matches when the prompt contains every `contains` needle (and
/// equals `fingerprint`, when set). Replies are consumed in order; the last
/// one repeats.
struct MockRule {
  std::vector<std::string> contains;
  std::optional<std::string> fingerprint;
  std::vector<MockReply> replies;
};

/// Deterministic scripted backend. Script file (JSON):
///   {"version": "ecpt-mock/1",
///    "rules": [{"contains": [...], "fingerprint": "...", "responses": [...]}],
///    "sequence": [...], "default": ...}
/// A response is a string or {"text", "prompt_tokens", "completion_tokens",
/// "error"}. Unmatched prompts take the next `sequence` entry, then
/// `default`, else fail with MalformedReply.
class MockBackend final : public LlmBackend {
 public:
  MockBackend() = default;
  static std::unique_ptr<MockBackend> from_file(const std::filesystem::path& path);
  static std::unique_ptr<MockBackend> from_json(const json& script);

  void add_rule(MockRule rule);
  void push_sequence(MockReply reply);
  void set_default(MockReply reply);

  LlmResponse complete(const LlmRequest& request) override;

  std::size_t call_count() const;
  std::vector<std::string> prompts() const;

  /// Fingerprint used by `fingerprint` rules: 16 hex digits of the prompt hash.
  static std::string fingerprint(std::string_view prompt);

 private:
  struct RuleState {
    MockRule rule;
    std::size_t next = 0;
  };
  mutable std::mutex mutex_;
  std::vector<RuleState> rules_;
  std::vector<MockReply> sequence_;
  std::size_t sequence_next_ = 0;
  std::optional<MockReply> default_;
  std::vector<std::string> prompts_;
};

/// Bounds in-flight requests and meters token usage across calls.
class LlmGateway {
 public:
  explicit LlmGateway(LlmBackend& backend, std::ptrdiff_t max_in_flight = 4);

  LlmResponse complete(const LlmRequest& request);
  TokenUsage usage() const;
  std::int64_t calls() const { return calls_.load(); }

 private:
  LlmBackend& backend_;
  std::counting_semaphore<> slots_;
  std::atomic<std::int64_t> prompt_tokens_{0};
  std::atomic<std::int64_t> completion_tokens_{0};
  std::atomic<std::int64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Per-step generation settings
// ---------------------------------------------------------------------------

enum class Step { ZeroShot, Diagnosis, Prescription, Treatment, Generic };

struct StepParams {
  double temperature = 0.01;
  int max_tokens = 600;
};

struct GenerationSettings {
  std::string model = "gpt-4-turbo";
  StepParams zero_shot{0.01, 350};
  StepParams diagnosis{0.01, 100};
  StepParams prescription{0.01, 1024};
  StepParams treatment{0.01, 600};
  StepParams generic{0.01, 600};

  const StepParams& params(Step step) const;
  LlmRequest request(Step step, std::string prompt) const;
};

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

struct Diagnosis {
  std::vector<ErrorTypeId> ranked_error_ids;  // most severe first

  ErrorTypeId top() const { return ranked_error_ids.front(); }
  bool operator==(const Diagnosis&) const = default;
};

struct Prescription {
  std::string reason;
  std::string instruction;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using DiagnosisExamples = std::map<ErrorTypeId, CorrectionCase>;

std::string render_zero_shot(const SchemaDescription& schema, std::string_view question);

/// New error case, the e1..e13 table and, with option B, one example case
/// placed right after its error-type row.
std::string render_diagnosis(const Case& c, const DiagnosisExamples* option_b_examples = nullptr);

/// `retrieved` in retrieval-rank order; may be empty.
std::string render_prescription(const Case& c, const Diagnosis& diagnosis,
                                const std::vector<const CorrectionCase*>& retrieved);

std::string render_treatment(const Case& c, const Prescription& prescription);

/// Single-prompt self-correction baseline (no diagnosis, no retrieval).
std::string render_generic_correction(const Case& c);

/// Ids `e1`..`e13` in order of first appearance, deduplicated. Throws
/// ParseError when none is found.
Diagnosis parse_diagnosis(std::string_view text);

/// Splits on REASON:/INSTRUCTION: markers, else first paragraph = reason.
Prescription parse_prescription(std::string_view text);

/// First statement starting with SELECT/WITH/INSERT/UPDATE/DELETE, after
/// stripping code fences. Throws ParseError when there is none.
std::string parse_sql(std::string_view text);

}  // namespace ecpt
