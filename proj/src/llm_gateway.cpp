#include "ecpt/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include "ecpt/hashing.hpp"
#include "http_endpoint.hpp"

namespace ecpt {

void LlmRequest::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be > 0");
}

std::int64_t approx_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

// ---------------------------------------------------------------------------
// OpenAI-compatible backend
// ---------------------------------------------------------------------------

OpenAiChatBackend::OpenAiChatBackend(Config config) : config_(std::move(config)) {
  if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

LlmResponse OpenAiChatBackend::complete(const LlmRequest& request) {
  request.validate();
  auto endpoint = detail::parse_base_url(config_.base_url);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  json body = {
      {"model", request.model_name},
      {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
  };
  const std::string payload = body.dump();

  auto backoff = config_.initial_backoff;
  std::string last_error;
  LlmErrorKind last_kind = LlmErrorKind::Transport;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto client = detail::make_client(endpoint, config_.timeout);
    auto res = client->Post(endpoint.prefix + "/chat/completions", headers, payload, "application/json");
    if (!res) {
      last_kind = LlmErrorKind::Transport;
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw LlmError(LlmErrorKind::Authentication, "authentication failed (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status == 429) {
      last_kind = LlmErrorKind::RateLimit;
      last_error = "rate limited (HTTP 429)";
      continue;
    }
    if (res->status == 408 || res->status >= 500) {
      last_kind = LlmErrorKind::Transport;
      last_error = "server error (HTTP " + std::to_string(res->status) + ")";
      continue;
    }
    if (res->status != 200) {
      throw LlmError(LlmErrorKind::MalformedReply,
                     "unexpected HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
      auto reply = json::parse(res->body);
      LlmResponse out;
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      out.text = content.is_null() ? std::string{} : content.get<std::string>();
      if (reply.contains("usage")) {
        out.prompt_tokens = reply["usage"].value("prompt_tokens", std::int64_t{0});
        out.completion_tokens = reply["usage"].value("completion_tokens", std::int64_t{0});
      }
      return out;
    } catch (const json::exception& e) {
      throw LlmError(LlmErrorKind::MalformedReply, std::string("malformed chat reply: ") + e.what());
    }
  }
  throw LlmError(last_kind, last_error + " after " + std::to_string(config_.max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

namespace {

std::optional<LlmErrorKind> error_kind_from_string(const std::string& s) {
  if (s == "transport") return LlmErrorKind::Transport;
  if (s == "auth" || s == "authentication") return LlmErrorKind::Authentication;
  if (s == "rate_limit") return LlmErrorKind::RateLimit;
  if (s == "malformed") return LlmErrorKind::MalformedReply;
  throw FormatError("unknown mock error kind: " + s);
}

MockReply reply_from_json(const json& j) {
  if (j.is_string()) return MockReply{j.get<std::string>(), std::nullopt, std::nullopt, std::nullopt};
  MockReply r;
  r.text = j.value("text", "");
  if (j.contains("prompt_tokens")) r.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  if (j.contains("completion_tokens")) r.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  if (j.contains("error")) r.error = error_kind_from_string(j.at("error").get<std::string>());
  return r;
}

}  // namespace

std::unique_ptr<MockBackend> MockBackend::from_json(const json& script) {
  if (!script.is_object() || script.value("version", "") != "ecpt-mock/1") {
    throw FormatError("mock script must carry version ecpt-mock/1");
  }
  auto mock = std::make_unique<MockBackend>();
  try {
    for (const auto& r : script.value("rules", json::array())) {
      MockRule rule;
      rule.contains = r.value("contains", std::vector<std::string>{});
      if (r.contains("fingerprint")) rule.fingerprint = r.at("fingerprint").get<std::string>();
      for (const auto& resp : r.at("responses")) rule.replies.push_back(reply_from_json(resp));
      if (rule.replies.empty()) throw FormatError("mock rule without responses");
      mock->add_rule(std::move(rule));
    }
    for (const auto& resp : script.value("sequence", json::array())) mock->push_sequence(reply_from_json(resp));
    if (script.contains("default")) mock->set_default(reply_from_json(script.at("default")));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed mock script: ") + e.what());
  }
  return mock;
}

std::unique_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open mock script " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void MockBackend::add_rule(MockRule rule) {
  std::lock_guard lock(mutex_);
  rules_.push_back({std::move(rule), 0});
}

void MockBackend::push_sequence(MockReply reply) {
  std::lock_guard lock(mutex_);
  sequence_.push_back(std::move(reply));
}

void MockBackend::set_default(MockReply reply) {
  std::lock_guard lock(mutex_);
  default_ = std::move(reply);
}

std::string MockBackend::fingerprint(std::string_view prompt) { return to_hex16(fnv1a64(prompt)); }

LlmResponse MockBackend::complete(const LlmRequest& request) {
  request.validate();
  std::optional<MockReply> chosen;
  {
    std::lock_guard lock(mutex_);
    prompts_.push_back(request.prompt);
    std::optional<std::string> fp;
    for (auto& state : rules_) {
      const auto& rule = state.rule;
      if (rule.fingerprint) {
        if (!fp) fp = fingerprint(request.prompt);
        if (*rule.fingerprint != *fp) continue;
      }
      bool all = std::all_of(rule.contains.begin(), rule.contains.end(), [&](const std::string& needle) {
        return request.prompt.find(needle) != std::string::npos;
      });
      if (!all) continue;
      chosen = rule.replies[std::min(state.next, rule.replies.size() - 1)];
      ++state.next;
      break;
    }
    if (!chosen && sequence_next_ < sequence_.size()) chosen = sequence_[sequence_next_++];
    if (!chosen) chosen = default_;
  }
  if (!chosen) throw LlmError(LlmErrorKind::MalformedReply, "mock backend has no scripted response for prompt");
  if (chosen->error) throw LlmError(*chosen->error, "scripted mock failure");

  LlmResponse out;
  out.text = chosen->text;
  out.prompt_tokens = chosen->prompt_tokens.value_or(approx_tokens(request.prompt));
  out.completion_tokens = chosen->completion_tokens.value_or(approx_tokens(chosen->text));
  return out;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return prompts_.size();
}

std::vector<std::string> MockBackend::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

LlmGateway::LlmGateway(LlmBackend& backend, std::ptrdiff_t max_in_flight)
    : backend_(backend), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

LlmResponse LlmGateway::complete(const LlmRequest& request) {
  request.validate();
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};
  auto response = backend_.complete(request);
  if (response.prompt_tokens < 0 || response.completion_tokens < 0) {
    throw LlmError(LlmErrorKind::MalformedReply, "negative token counts in reply");
  }
  prompt_tokens_ += response.prompt_tokens;
  completion_tokens_ += response.completion_tokens;
  ++calls_;
  return response;
}

TokenUsage LlmGateway::usage() const { return {prompt_tokens_.load(), completion_tokens_.load()}; }

const StepParams& GenerationSettings::params(Step step) const {
  switch (step) {
    case Step::ZeroShot: return zero_shot;
    case Step::Diagnosis: return diagnosis;
    case Step::Prescription: return prescription;
    case Step::Treatment: return treatment;
    case Step::Generic: return generic;
  }
  return treatment;
}

LlmRequest GenerationSettings::request(Step step, std::string prompt) const {
  const auto& p = params(step);
  return LlmRequest{model, p.temperature, p.max_tokens, std::move(prompt)};
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

namespace {

std::string error_type_line(ErrorTypeId id) {
  const auto& t = error_type(id);
  return std::string(t.code) + " (" + std::string(t.name) + "): " + std::string(t.short_explanation);
}

std::string id_list(const std::vector<ErrorTypeId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += to_string(ids[i]);
  }
  return out;
}

}  // namespace

std::string render_zero_shot(const SchemaDescription& schema, std::string_view question) {
  std::string p;
  p += "### Task: Text-to-SQL\n";
  p += "Given the SQLite database schema below (tables with their columns, then foreign keys), "
       "write a query that answers the question.\n\n";
  p += "### Schema\n";
  p += serialize_schema(schema);
  p += "\n### Question\n";
  p += trim(question) + "\n\n";
  p += "Answer with a single SQLite SQL statement and nothing else.\n";
  p += "### SQL\n";
  return p;
}

std::string render_diagnosis(const Case& c, const DiagnosisExamples* option_b_examples) {
  std::string p;
  p += "### Task: Diagnosis\n";
  p += "A generated SQL query did not produce the expected result. Classify what went wrong "
       "using the error types table.\n\n";
  p += "### New error case\n";
  p += serialize_case(c, true);
  p += "\n### Error types\n";
  // Header and rule line of the table; rows follow with optional examples.
  const std::string table = error_type_table_text();
  p += table.substr(0, table.find('\n', table.find('\n') + 1) + 1);
  for (std::size_t i = 0; i < kErrorTypeCount; ++i) {
    const auto id = error_type_catalog()[i].id;
    p += error_type_table_row(id) + "\n";
    if (!option_b_examples) continue;
    auto it = option_b_examples->find(id);
    if (it == option_b_examples->end()) continue;
    const auto& ex = it->second;
    p += "[Example of " + std::string(to_string(id)) + "]\n";
    p += serialize_case(ex.case_, true);
    p += "Error types: " + id_list(ex.error_types) + "\n";
    if (!ex.reason.empty()) p += "Reason: " + trim(ex.reason) + "\n";
    p += "[End of example]\n";
  }
  p += "\n### Instructions\n";
  p += "Output one or more error type ids (e1 to e13) ranked from most to least severe, "
       "separated by commas. Output only the ids.\n";
  p += "### Answer\n";
  return p;
}

std::string render_prescription(const Case& c, const Diagnosis& diagnosis,
                                const std::vector<const CorrectionCase*>& retrieved) {
  std::string p;
  p += "### Task: Prescription\n";
  p += "Explain why the new error case failed and write an instruction for fixing its SQL. "
       "Solved cases with similar errors are given as examples.\n\n";
  p += "### Examples\n";
  if (retrieved.empty()) p += "(no relevant examples)\n";
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    const auto& ex = *retrieved[i];
    const std::string n = std::to_string(i + 1);
    p += "[Example " + n + "]\n";
    p += serialize_case(ex.case_, true);
    p += "Error types: " + id_list(ex.error_types) + "\n";
    p += "Correct SQL: " + trim(ex.ground_truth_sql) + "\n";
    p += "REASON: " + trim(ex.reason) + "\n";
    p += "INSTRUCTION: " + trim(ex.instruction) + "\n";
    p += "[End of example " + n + "]\n";
  }
  p += "\n### New error case\n";
  p += serialize_case(c, true);
  p += "\n### Diagnosed error types\n";
  for (auto id : diagnosis.ranked_error_ids) p += error_type_line(id) + "\n";
  p += "\n### Answer\n";
  p += "Fill in both fields.\n";
  p += "REASON: <why the SQL failed>\n";
  p += "INSTRUCTION: <how to fix the SQL>\n";
  return p;
}

std::string render_treatment(const Case& c, const Prescription& prescription) {
  std::string p;
  p += "### Task: Treatment\n";
  p += "Rewrite the failing SQL query by following the fixing instruction.\n\n";
  p += "### Schema\n";
  p += serialize_schema(c.schema);
  p += "\n### Question\n";
  p += trim(c.question) + "\n";
  p += "\n### Failing SQL\n";
  p += trim(c.generated_sql) + "\n";
  p += "\n### Execution result\n";
  p += serialize_result(c.outcome, c.preview);
  if (!trim(prescription.reason).empty()) {
    p += "\n### Reason\n";
    p += trim(prescription.reason) + "\n";
  }
  p += "\n### Fixing instruction\n";
  p += trim(prescription.instruction) + "\n\n";
  p += "Answer with exactly one corrected SQLite SQL statement and nothing else.\n";
  p += "### SQL\n";
  return p;
}

std::string render_generic_correction(const Case& c) {
  std::string p;
  p += "### Task: Self-correction\n";
  p += "For the given question, use the provided tables, columns and foreign keys to fix the "
       "given SQLite SQL query if it has any problems. If there are none, return it unchanged.\n\n";
  p += "### Schema\n";
  p += serialize_schema(c.schema);
  p += "\n### Question\n";
  p += trim(c.question) + "\n";
  p += "\n### SQL\n";
  p += trim(c.generated_sql) + "\n\n";
  p += "Answer with exactly one SQLite SQL statement and nothing else.\n";
  p += "### Fixed SQL\n";
  return p;
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

Diagnosis parse_diagnosis(std::string_view text) {
  Diagnosis d;
  std::set<ErrorTypeId> seen;
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (text[i] != 'e') continue;
    if (i > 0 && (std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '_')) continue;
    std::size_t j = i + 1;
    while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    const std::size_t digits = j - i - 1;
    if (digits < 1 || digits > 2) continue;
    if (j < n && (std::isalpha(static_cast<unsigned char>(text[j])) || text[j] == '_')) continue;
    int value = std::stoi(std::string(text.substr(i + 1, digits)));
    if (value < 1 || value > static_cast<int>(kErrorTypeCount)) continue;
    auto id = static_cast<ErrorTypeId>(value);
    if (seen.insert(id).second) d.ranked_error_ids.push_back(id);
  }
  if (d.ranked_error_ids.empty()) throw ParseError("unparseable diagnosis: no error type id in reply");
  return d;
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Strips markdown emphasis left around a marker, e.g. "**REASON:**".
std::string clean_field(std::string_view s) {
  std::string t = trim(s);
  while (!t.empty() && (t.front() == '*' || t.front() == '_')) t.erase(t.begin());
  while (!t.empty() && (t.back() == '*' || t.back() == '_')) t.pop_back();
  return trim(t);
}

}  // namespace

Prescription parse_prescription(std::string_view text) {
  const std::string up = upper(text);
  const auto r = up.find("REASON:");
  const auto ins = up.find("INSTRUCTION:");
  Prescription p;
  if (ins != std::string::npos) {
    const std::size_t instr_start = ins + std::string_view("INSTRUCTION:").size();
    if (r != std::string::npos && r < ins) {
      const std::size_t reason_start = r + std::string_view("REASON:").size();
      p.reason = clean_field(text.substr(reason_start, ins - reason_start));
      p.instruction = clean_field(text.substr(instr_start));
    } else if (r != std::string::npos) {
      p.instruction = clean_field(text.substr(instr_start, r - instr_start));
      p.reason = clean_field(text.substr(r + std::string_view("REASON:").size()));
    } else {
      p.reason = clean_field(text.substr(0, ins));
      p.instruction = clean_field(text.substr(instr_start));
    }
  } else {
    const std::string body = trim(text);
    auto blank = body.find("\n\n");
    if (blank == std::string::npos) {
      p.instruction = body;
    } else {
      p.reason = trim(body.substr(0, blank));
      p.instruction = trim(body.substr(blank + 2));
    }
  }
  if (p.instruction.empty()) throw ParseError("unparseable prescription: no instruction in reply");
  return p;
}

namespace {

std::string strip_code_fence(std::string_view text) {
  auto open = text.find("```");
  if (open == std::string_view::npos) return std::string(text);
  auto body_start = text.find('\n', open);
  if (body_start == std::string_view::npos) return std::string(text.substr(open + 3));
  auto close = text.find("```", body_start);
  return std::string(text.substr(body_start + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                  : close - body_start - 1));
}

const std::regex& statement_start() {
  static const std::regex re(
      R"((^|[^A-Za-z0-9_])(SELECT\s|WITH\s+(RECURSIVE\s+)?[A-Za-z_"`\[][^\n]*?\bAS\s*\(|INSERT\s+INTO\s|UPDATE\s+\S+\s+SET\s|DELETE\s+FROM\s))",
      std::regex::icase);
  return re;
}

// Statement end: first ';' outside quotes (inclusive), else a blank line.
std::size_t statement_end(std::string_view s) {
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == quote) quote = 0;
      continue;
    }
    if (c == '\'' || c == '"' || c == '`') {
      quote = c;
    } else if (c == ';') {
      return i + 1;
    } else if (c == '\n') {
      auto next = s.find_first_not_of(" \t\r", i + 1);
      if (next != std::string_view::npos && s[next] == '\n') return i;
    }
  }
  return s.size();
}

}  // namespace

std::string parse_sql(std::string_view text) {
  const std::string body = strip_code_fence(text);
  // Lower- or mixed-case keywords count only at the start of a line, so
  // prose such as "select the right column" is not taken for SQL.
  auto starts_statement = [&](const std::smatch& m) {
    const std::string keyword = m[2].str().substr(0, m[2].str().find_first_of(" \t\r\n"));
    if (std::none_of(keyword.begin(), keyword.end(), [](unsigned char c) { return std::islower(c); })) return true;
    const std::size_t pos = static_cast<std::size_t>(m.position(2));
    const std::size_t line_start = body.rfind('\n', pos == 0 ? 0 : pos - 1);
    const std::size_t from = (line_start == std::string::npos || pos == 0) ? 0 : line_start + 1;
    return body.find_first_not_of(" \t", from) == pos;
  };
  std::optional<std::size_t> found;
  for (std::sregex_iterator it(body.begin(), body.end(), statement_start()), end; it != end; ++it) {
    if (starts_statement(*it)) {
      found = static_cast<std::size_t>(it->position(2));
      break;
    }
  }
  if (!found) throw ParseError("no SQL statement in completion");
  const std::size_t start = *found;
  std::string_view rest(body);
  rest = rest.substr(start);
  std::string sql = trim(rest.substr(0, statement_end(rest)));
  if (sql.empty()) throw ParseError("no SQL statement in completion");
  return sql;
}

}  // namespace ecpt
