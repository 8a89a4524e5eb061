#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpt/case_model.hpp"
#include "ecpt/embedding.hpp"

namespace ecpt {

class KbError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KbEntry {
  std::uint64_t id = 0;
  EmbeddingVector vector;
  CorrectionCase correction_case;
};

struct SearchHit {
  const KbEntry* entry = nullptr;
  double similarity = 0.0;
};

using ErrorTypeFilter = std::optional<std::set<ErrorTypeId>>;

/// Correction cases with exact top-k cosine retrieval. The store is bound to
/// the projection model (by hash) that produced its vectors.
///
/// Thread-safety: concurrent search() calls are fine; insert() and load
/// require exclusive access. Entries never move once inserted.
class KbStore {
 public:
  KbStore(std::size_t dimension, std::string model_hash, std::string embedder_identity = {});
  KbStore(KbStore&& other) noexcept;
  KbStore& operator=(KbStore&& other) noexcept;

  static KbStore load(const std::filesystem::path& path);
  /// Header {"version":"ecpt-kb/1","dimension",...,"model_hash",...} then
  /// one correction-case record per entry with "id" and "vector" added.
  void persist(const std::filesystem::path& path) const;

  std::uint64_t insert(const CorrectionCase& cc, const BaseEmbedder& embedder, const ProjectionModel& model);
  std::uint64_t insert_vector(CorrectionCase cc, EmbeddingVector vector);

  /// Top-k by similarity (descending), ties by ascending id. With a filter,
  /// only entries carrying at least one of the listed error types compete.
  std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k, const ErrorTypeFilter& filter = {}) const;

  /// Embeds `c` (with its result section) and searches; the model must be
  /// the one the store was built with.
  std::vector<SearchHit> search_case(const Case& c, const BaseEmbedder& embedder, const ProjectionModel& model,
                                     std::size_t k, const ErrorTypeFilter& filter = {}) const;

  /// Throws KbError when `model` is not the store's projection.
  void check_model(const ProjectionModel& model) const;
  void check_embedder(const BaseEmbedder& embedder) const;

  std::size_t size() const;
  std::size_t dimension() const { return dimension_; }
  const std::string& model_hash() const { return model_hash_; }
  const std::string& embedder_identity() const { return embedder_identity_; }
  const std::deque<KbEntry>& entries() const { return entries_; }

 private:
  std::size_t dimension_;
  std::string model_hash_;
  std::string embedder_identity_;
  std::deque<KbEntry> entries_;
  std::uint64_t next_id_ = 0;
  mutable std::shared_mutex mutex_;
};

}  // namespace ecpt
