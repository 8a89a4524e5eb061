#include "ecpt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace ecpt {

namespace {

std::string fixed2(std::int64_t hundredths) {
  const bool negative = hundredths < 0;
  const std::uint64_t mag = negative ? 0 - static_cast<std::uint64_t>(hundredths) : static_cast<std::uint64_t>(hundredths);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%llu.%02llu", negative ? "-" : "", static_cast<unsigned long long>(mag / 100),
                static_cast<unsigned long long>(mag % 100));
  return buf;
}

std::string with_thousands(std::int64_t v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return v < 0 ? "-" + out : out;
}

// floor((2*num*scale + den) / (2*den)) == round-half-up(num*scale/den) for num >= 0.
std::int64_t round_half_up(__int128 num, __int128 den) {
  return static_cast<std::int64_t>((2 * num + den) / (2 * den));
}

}  // namespace

std::string Percentage::str() const { return fixed2(hundredths); }
std::string Cents::str() const { return fixed2(cents); }

Percentage ratio_percentage(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw MetricsError("percentage denominator must be positive");
  if (num < 0) throw MetricsError("percentage numerator must be non-negative");
  return {round_half_up(static_cast<__int128>(num) * 10000, den)};
}

Percentage execution_accuracy(std::int64_t zero_shot_successes, std::int64_t fixed_cases, std::int64_t total_cases) {
  if (total_cases <= 0) throw MetricsError("execution accuracy: total_cases must be positive");
  if (zero_shot_successes < 0 || fixed_cases < 0 || zero_shot_successes + fixed_cases > total_cases) {
    throw MetricsError("execution accuracy: inconsistent counts");
  }
  return ratio_percentage(zero_shot_successes + fixed_cases, total_cases);
}

Percentage correction_accuracy(std::int64_t fixed_cases, std::int64_t error_cases) {
  if (error_cases <= 0) throw MetricsError("correction accuracy: error_cases must be positive");
  if (fixed_cases < 0 || fixed_cases > error_cases) throw MetricsError("correction accuracy: inconsistent counts");
  return ratio_percentage(fixed_cases, error_cases);
}

Percentage hit_rate(std::int64_t successful_trials, std::int64_t total_trials) {
  if (total_trials <= 0) throw MetricsError("hit rate: total_trials must be positive");
  if (successful_trials < 0 || successful_trials > total_trials) throw MetricsError("hit rate: inconsistent counts");
  return ratio_percentage(successful_trials, total_trials);
}

ModelPrice ModelPrice::from_dollars(double prompt_per_1k, double completion_per_1k) {
  if (!(prompt_per_1k >= 0) || !(completion_per_1k >= 0) || !std::isfinite(prompt_per_1k) ||
      !std::isfinite(completion_per_1k)) {
    throw MetricsError("prices must be finite and non-negative");
  }
  return {std::llround(prompt_per_1k * 1e9), std::llround(completion_per_1k * 1e9)};
}

Cents total_cost(std::int64_t prompt_tokens, std::int64_t completion_tokens, const ModelPrice& price) {
  if (prompt_tokens < 0 || completion_tokens < 0) throw MetricsError("token counts must be non-negative");
  // tokens * nano-dollars-per-1k is in units of 1e-12 dollars; one cent is 1e10 of those.
  const __int128 pico = static_cast<__int128>(prompt_tokens) * price.prompt_nano_per_1k +
                        static_cast<__int128>(completion_tokens) * price.completion_nano_per_1k;
  return {round_half_up(pico, static_cast<__int128>(10'000'000'000LL))};
}

PricingTable PricingTable::from_json(const json& j) {
  if (!j.is_object()) throw MetricsError("pricing must be an object keyed by model name");
  PricingTable table;
  for (const auto& [model, entry] : j.items()) {
    try {
      table.set(model, ModelPrice::from_dollars(entry.at("prompt_price_per_1k").get<double>(),
                                                entry.at("completion_price_per_1k").get<double>()));
    } catch (const json::exception& e) {
      throw MetricsError("pricing for " + model + ": " + e.what());
    }
  }
  return table;
}

json PricingTable::to_json() const {
  json out = json::object();
  for (const auto& [model, p] : prices_) {
    out[model] = {{"prompt_price_per_1k", static_cast<double>(p.prompt_nano_per_1k) / 1e9},
                  {"completion_price_per_1k", static_cast<double>(p.completion_nano_per_1k) / 1e9}};
  }
  return out;
}

void PricingTable::set(const std::string& model, ModelPrice price) {
  if (price.prompt_nano_per_1k < 0 || price.completion_nano_per_1k < 0) {
    throw MetricsError("prices must be non-negative");
  }
  prices_[model] = price;
}

const ModelPrice& PricingTable::at(const std::string& model) const {
  auto it = prices_.find(model);
  if (it == prices_.end()) throw MetricsError("no pricing for model " + model);
  return it->second;
}

RunReport build_report(const std::vector<CaseResult>& results, const PricingTable& pricing, const std::string& model) {
  const ModelPrice& price = pricing.at(model);
  RunReport r;
  r.model = model;
  for (const auto& c : results) {
    const TokenUsage usage = c.total_usage();
    r.prompt_tokens += usage.prompt_tokens;
    r.completion_tokens += usage.completion_tokens;
    if (c.status == ItemStatus::TruthFailed) {
      ++r.truth_failed_items;
      continue;
    }
    if (c.status == ItemStatus::Error) {
      ++r.errored_items;
      continue;
    }
    ++r.total_cases;
    if (c.zero_shot_success()) {
      ++r.zero_shot_successes;
      continue;
    }
    ++r.error_cases;
    if (c.fixed()) ++r.fixed_cases;
    r.total_trials += static_cast<std::int64_t>(c.trials.size());
    for (const auto& t : c.trials) {
      if (t.outcome.is_success()) ++r.successful_trials;
    }
  }
  r.total_cost = total_cost(r.prompt_tokens, r.completion_tokens, price);
  if (r.total_cases > 0) r.execution_accuracy = execution_accuracy(r.zero_shot_successes, r.fixed_cases, r.total_cases);
  if (r.error_cases > 0) r.correction_accuracy = correction_accuracy(r.fixed_cases, r.error_cases);
  if (r.total_trials > 0) r.hit_rate = hit_rate(r.successful_trials, r.total_trials);
  return r;
}

json report_to_json(const RunReport& r) {
  auto pct = [](const std::optional<Percentage>& p) -> json { return p ? json(p->value()) : json(nullptr); };
  return {{"model", r.model},
          {"total_cases", r.total_cases},
          {"zero_shot_successes", r.zero_shot_successes},
          {"error_cases", r.error_cases},
          {"fixed_cases", r.fixed_cases},
          {"total_trials", r.total_trials},
          {"successful_trials", r.successful_trials},
          {"prompt_tokens", r.prompt_tokens},
          {"completion_tokens", r.completion_tokens},
          {"total_cost", r.total_cost.dollars()},
          {"execution_accuracy", pct(r.execution_accuracy)},
          {"correction_accuracy", pct(r.correction_accuracy)},
          {"hit_rate", pct(r.hit_rate)},
          {"truth_failed_items", r.truth_failed_items},
          {"errored_items", r.errored_items}};
}

std::string render_report_text(const RunReport& r) {
  auto pct = [](const std::optional<Percentage>& p) { return p ? p->str() + "%" : std::string("n/a"); };
  const std::vector<std::string> header = {"Model",       "Exec. Acc.",     "Corr. Acc.",    "Fixed/Errors", "Trials",
                                           "Hit Rate",    "Prompt Tokens",  "Compl. Tokens", "Cost($)"};
  const std::vector<std::string> row = {r.model,
                                        pct(r.execution_accuracy),
                                        pct(r.correction_accuracy),
                                        std::to_string(r.fixed_cases) + "/" + std::to_string(r.error_cases),
                                        std::to_string(r.total_trials),
                                        pct(r.hit_rate),
                                        with_thousands(r.prompt_tokens),
                                        with_thousands(r.completion_tokens),
                                        r.total_cost.str()};
  std::string top, bottom;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::size_t w = std::max(header[i].size(), row[i].size());
    const std::string sep = i + 1 < header.size() ? "  " : "";
    top += header[i] + std::string(w - header[i].size(), ' ') + sep;
    bottom += row[i] + std::string(w - row[i].size(), ' ') + sep;
  }
  auto rstrip = [](std::string s) {
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  std::string out = rstrip(top) + "\n" + rstrip(bottom) + "\n";
  out += "cases: " + std::to_string(r.total_cases) + " evaluated, " + std::to_string(r.zero_shot_successes) +
         " zero-shot successes, " + std::to_string(r.truth_failed_items) + " skipped (ground truth failed), " +
         std::to_string(r.errored_items) + " errored\n";
  return out;
}

void export_embeddings(const KbStore& kb, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MetricsError("cannot write embeddings file " + path.string());
  for (const auto& e : kb.entries()) {
    json labels = json::array();
    for (auto id : e.correction_case.error_types) labels.push_back(std::string(to_string(id)));
    const auto& v = e.vector.values();
    out << json{{"id", e.id},
                {"label", std::string(to_string(e.correction_case.primary_label()))},
                {"labels", std::move(labels)},
                {"vector", std::vector<double>(v.data(), v.data() + v.size())}}
               .dump()
        << "\n";
  }
  if (!out) throw MetricsError("write failed: " + path.string());
}

}  // namespace ecpt
