#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpt/case_model.hpp"

namespace ecpt {

class SqlRunner;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hash of the whitespace-normalized question text.
std::uint64_t question_hash(std::string_view question);

struct DatasetItem {
  std::string db_id;
  std::string question;
  std::string ground_truth_sql;
  std::size_t source_index = 0;  // position in the question file
  std::uint64_t question_hash = 0;

  // Filled by validate_ground_truth.
  bool truth_ok = true;
  std::string truth_error;

  /// "<db_id>:<16 hex digits>", the exclusion-list key.
  std::string ref() const;

  bool operator==(const DatasetItem&) const = default;
};

struct ExclusionEntry {
  std::string db_id;
  std::uint64_t hash = 0;
  auto operator<=>(const ExclusionEntry&) const = default;
};

/// Items keyed by (db_id, question hash) so lists survive file reordering.
/// File format: one `db_id<TAB>hash` entry per line, hash as 16 hex digits.
class ExclusionList {
 public:
  static ExclusionList load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void insert(const DatasetItem& item) { entries_.insert({item.db_id, item.question_hash}); }
  void insert(ExclusionEntry entry) { entries_.insert(std::move(entry)); }
  bool contains(const DatasetItem& item) const { return entries_.count({item.db_id, item.question_hash}) > 0; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::set<ExclusionEntry>& entries() const { return entries_; }

 private:
  std::set<ExclusionEntry> entries_;
};

/// Reads a Spider `tables.json` catalog.
std::vector<SchemaDescription> load_schemas(const std::filesystem::path& path);

/// Reads a Spider question file (`dev.json`, `train_spider.json`), keeping
/// input order. Items whose db_id is not among `schemas` raise DatasetError.
std::vector<DatasetItem> load_items(const std::filesystem::path& path, const std::vector<SchemaDescription>& schemas,
                                    const ExclusionList& exclusions = {},
                                    const std::optional<std::vector<std::string>>& subset = std::nullopt);

/// `<root>/database/<db_id>/<db_id>.sqlite`
std::filesystem::path database_path(const std::filesystem::path& root, const std::string& db_id);

/// Registers every schema's database file with the runner; returns db_ids
/// whose file is missing.
std::vector<std::string> register_databases(SqlRunner& runner, const std::filesystem::path& root,
                                            const std::vector<SchemaDescription>& schemas);

/// Executes each item's ground truth and flags failures in place (items are
/// kept). Returns the number of flagged items.
std::size_t validate_ground_truth(std::vector<DatasetItem>& items, const SqlRunner& runner);

}  // namespace ecpt
