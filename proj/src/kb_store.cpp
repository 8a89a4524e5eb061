#include "ecpt/kb_store.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include "ecpt/hashing.hpp"

namespace ecpt {

KbStore::KbStore(std::size_t dimension, std::string model_hash, std::string embedder_identity)
    : dimension_(dimension), model_hash_(std::move(model_hash)), embedder_identity_(std::move(embedder_identity)) {
  if (dimension == 0) throw KbError("store dimension must be positive");
}

KbStore::KbStore(KbStore&& other) noexcept
    : dimension_(other.dimension_),
      model_hash_(std::move(other.model_hash_)),
      embedder_identity_(std::move(other.embedder_identity_)),
      entries_(std::move(other.entries_)),
      next_id_(other.next_id_) {}

KbStore& KbStore::operator=(KbStore&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mutex_, other.mutex_);
    dimension_ = other.dimension_;
    model_hash_ = std::move(other.model_hash_);
    embedder_identity_ = std::move(other.embedder_identity_);
    entries_ = std::move(other.entries_);
    next_id_ = other.next_id_;
  }
  return *this;
}

std::size_t KbStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void KbStore::check_model(const ProjectionModel& model) const {
  if (model.dimension() != dimension_) {
    throw KbError("dimension mismatch: store " + std::to_string(dimension_) + ", model " +
                  std::to_string(model.dimension()));
  }
  if (model.hash() != model_hash_) {
    throw KbError("projection model " + model.hash() + " does not match store model " + model_hash_ +
                  "; rebuild the store with this model");
  }
}

void KbStore::check_embedder(const BaseEmbedder& embedder) const {
  if (!embedder_identity_.empty() && embedder.identity() != embedder_identity_) {
    throw KbError("embedder " + embedder.identity() + " does not match store embedder " + embedder_identity_);
  }
}

std::uint64_t KbStore::insert(const CorrectionCase& cc, const BaseEmbedder& embedder, const ProjectionModel& model) {
  check_model(model);
  check_embedder(embedder);
  auto vec = embed(embedder, serialize_case(cc.case_, true), model);
  return insert_vector(cc, std::move(vec));
}

std::uint64_t KbStore::insert_vector(CorrectionCase cc, EmbeddingVector vector) {
  if (vector.dimension() != dimension_) {
    throw KbError("dimension mismatch: store " + std::to_string(dimension_) + ", vector " +
                  std::to_string(vector.dimension()));
  }
  std::unique_lock lock(mutex_);
  const auto id = next_id_++;
  entries_.push_back(KbEntry{id, std::move(vector), std::move(cc)});
  return id;
}

std::vector<SearchHit> KbStore::search(const EmbeddingVector& query, std::size_t k,
                                       const ErrorTypeFilter& filter) const {
  if (k == 0) throw KbError("k must be at least 1");
  if (query.dimension() != dimension_) {
    throw KbError("dimension mismatch: store " + std::to_string(dimension_) + ", query " +
                  std::to_string(query.dimension()));
  }
  std::shared_lock lock(mutex_);
  std::vector<SearchHit> hits;
  hits.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (filter) {
      bool any = std::any_of(e.correction_case.error_types.begin(), e.correction_case.error_types.end(),
                             [&](ErrorTypeId id) { return filter->count(id) > 0; });
      if (!any) continue;
    }
    hits.push_back({&e, query.values().dot(e.vector.values())});
  }
  auto better = [](const SearchHit& a, const SearchHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry->id < b.entry->id;
  };
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), better);
  hits.resize(n);
  return hits;
}

std::vector<SearchHit> KbStore::search_case(const Case& c, const BaseEmbedder& embedder, const ProjectionModel& model,
                                            std::size_t k, const ErrorTypeFilter& filter) const {
  check_model(model);
  check_embedder(embedder);
  return search(embed(embedder, serialize_case(c, true), model), k, filter);
}

void KbStore::persist(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw KbError("cannot write store file " + path.string());
  json header = {{"version", kKbFormatVersion}, {"dimension", dimension_}, {"model_hash", model_hash_}};
  if (!embedder_identity_.empty()) header["embedder"] = embedder_identity_;
  out << header.dump() << "\n";
  for (const auto& e : entries_) {
    json rec = correction_case_to_json(e.correction_case);
    rec["id"] = e.id;
    rec["vector"] = std::vector<double>(e.vector.values().data(), e.vector.values().data() + e.vector.values().size());
    out << rec.dump() << "\n";
  }
  if (!out) throw KbError("write failed: " + path.string());
}

KbStore KbStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw KbError("cannot open store file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw KbError(path.string() + ": missing header record");

  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw KbError(path.string() + ": header is not a JSON record");
  }
  if (!header.is_object() || header.value("version", "") != kKbFormatVersion) {
    throw KbError(path.string() + ": version mismatch, expected " + std::string(kKbFormatVersion));
  }
  if (!header.contains("dimension") || !header.contains("model_hash")) {
    throw KbError(path.string() + ": header lacks dimension/model_hash (is this a plain correction-case file?)");
  }

  KbStore store(header.at("dimension").get<std::size_t>(), header.at("model_hash").get<std::string>(),
                header.value("embedder", ""));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      json rec = json::parse(line);
      auto values = rec.at("vector").get<std::vector<double>>();
      if (values.size() != store.dimension_) throw KbError("vector dimension mismatch");
      KbEntry e{rec.at("id").get<std::uint64_t>(),
                EmbeddingVector::from_unit(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))),
                correction_case_from_json(rec)};
      if (!store.entries_.empty() && e.id <= store.entries_.back().id) throw KbError("ids not increasing");
      store.next_id_ = e.id + 1;
      store.entries_.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw KbError(path.string() + ":" + std::to_string(line_no) + ": corrupted record: " + e.what());
    }
  }
  return store;
}

}  // namespace ecpt
