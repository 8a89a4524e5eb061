#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpt/kb_store.hpp"
#include "ecpt/pipeline.hpp"

namespace ecpt {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A percentage held as integer hundredths (8808 == 88.08%), rounded half-up
/// from an exact ratio.
struct Percentage {
  std::int64_t hundredths = 0;

  double value() const { return static_cast<double>(hundredths) / 100.0; }
  std::string str() const;  // "88.08"
  auto operator<=>(const Percentage&) const = default;
};

/// Dollar amount in whole cents.
struct Cents {
  std::int64_t cents = 0;

  double dollars() const { return static_cast<double>(cents) / 100.0; }
  std::string str() const;  // "20.23"
  auto operator<=>(const Cents&) const = default;
};

/// 100 * num / den rounded half-up to hundredths. Requires den > 0 and
/// 0 <= num.
Percentage ratio_percentage(std::int64_t num, std::int64_t den);

/// (zero_shot_successes + fixed_cases) / total_cases.
Percentage execution_accuracy(std::int64_t zero_shot_successes, std::int64_t fixed_cases, std::int64_t total_cases);
Percentage correction_accuracy(std::int64_t fixed_cases, std::int64_t error_cases);
Percentage hit_rate(std::int64_t successful_trials, std::int64_t total_trials);

/// Prices per 1k tokens, stored as integer nano-dollars.
struct ModelPrice {
  std::int64_t prompt_nano_per_1k = 0;
  std::int64_t completion_nano_per_1k = 0;

  static ModelPrice from_dollars(double prompt_per_1k, double completion_per_1k);
  bool operator==(const ModelPrice&) const = default;
};

Cents total_cost(std::int64_t prompt_tokens, std::int64_t completion_tokens, const ModelPrice& price);

class PricingTable {
 public:
  /// {"<model>": {"prompt_price_per_1k": 0.01, "completion_price_per_1k": 0.03}, ...}
  static PricingTable from_json(const json& j);
  json to_json() const;

  void set(const std::string& model, ModelPrice price);
  bool contains(const std::string& model) const { return prices_.count(model) > 0; }
  /// Throws MetricsError for an unknown model.
  const ModelPrice& at(const std::string& model) const;

 private:
  std::map<std::string, ModelPrice> prices_;
};

struct RunReport {
  std::string model;
  std::int64_t total_cases = 0;  // evaluated items only
  std::int64_t zero_shot_successes = 0;
  std::int64_t error_cases = 0;
  std::int64_t fixed_cases = 0;
  std::int64_t total_trials = 0;
  std::int64_t successful_trials = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  Cents total_cost;
  // Empty when the denominator is zero.
  std::optional<Percentage> execution_accuracy;
  std::optional<Percentage> correction_accuracy;
  std::optional<Percentage> hit_rate;
  std::int64_t truth_failed_items = 0;
  std::int64_t errored_items = 0;

  bool operator==(const RunReport&) const = default;
};

RunReport build_report(const std::vector<CaseResult>& results, const PricingTable& pricing, const std::string& model);

json report_to_json(const RunReport& report);
/// Aligned plain-text table: one header row, one data row, one counts line.
std::string render_report_text(const RunReport& report);

/// One JSON line per entry: {"id","label","labels","vector"}.
void export_embeddings(const KbStore& kb, const std::filesystem::path& path);

}  // namespace ecpt
