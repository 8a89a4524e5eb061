#include "ecpt/spider_ingest.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "ecpt/hashing.hpp"
#include "ecpt/sql_runner.hpp"

namespace ecpt {

std::uint64_t question_hash(std::string_view question) { return fnv1a64(collapse_whitespace(question)); }

std::string DatasetItem::ref() const { return db_id + ":" + to_hex16(question_hash); }

ExclusionList ExclusionList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open exclusion list: " + path.string());
  ExclusionList list;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto tab = t.find('\t');
    if (tab == std::string::npos) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": expected db_id<TAB>hash");
    }
    try {
      list.insert(ExclusionEntry{t.substr(0, tab), from_hex16(trim(t.substr(tab + 1)))});
    } catch (const std::invalid_argument& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return list;
}

void ExclusionList::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write exclusion list: " + path.string());
  for (const auto& e : entries_) out << e.db_id << '\t' << to_hex16(e.hash) << '\n';
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<SchemaDescription> load_schemas(const std::filesystem::path& path) {
  const json catalog = read_json_file(path);
  if (!catalog.is_array()) throw DatasetError(path.string() + ": expected a JSON array of databases");

  std::vector<SchemaDescription> schemas;
  schemas.reserve(catalog.size());
  for (const auto& entry : catalog) {
    SchemaDescription s;
    try {
      s.db_id = entry.at("db_id").get<std::string>();
      const auto table_names = entry.at("table_names_original").get<std::vector<std::string>>();
      const auto& columns = entry.at("column_names_original");
      const auto types = entry.at("column_types").get<std::vector<std::string>>();
      if (types.size() != columns.size()) {
        throw DatasetError(s.db_id + ": column_types and column_names_original differ in length");
      }
      for (const auto& name : table_names) s.tables.push_back({trim(name), {}});

      // Column index -> reference; index 0 is Spider's "*" pseudo-column.
      std::vector<std::optional<ColumnRef>> refs(columns.size());
      for (std::size_t i = 0; i < columns.size(); ++i) {
        int table_idx = columns[i].at(0).get<int>();
        std::string name = trim(columns[i].at(1).get<std::string>());
        if (table_idx < 0) continue;
        if (static_cast<std::size_t>(table_idx) >= s.tables.size()) {
          throw DatasetError(s.db_id + ": column " + name + " has dangling table index " + std::to_string(table_idx));
        }
        auto& table = s.tables[static_cast<std::size_t>(table_idx)];
        table.columns.push_back({name, trim(types[i])});
        refs[i] = ColumnRef{table.name, name};
      }
      auto resolve = [&](const json& idx_json) -> ColumnRef {
        auto idx = idx_json.get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= refs.size() || !refs[static_cast<std::size_t>(idx)]) {
          throw DatasetError(s.db_id + ": dangling column index " + std::to_string(idx));
        }
        return *refs[static_cast<std::size_t>(idx)];
      };
      for (const auto& pk : entry.value("primary_keys", json::array())) {
        if (pk.is_array()) {
          for (const auto& p : pk) s.primary_keys.push_back(resolve(p));
        } else {
          s.primary_keys.push_back(resolve(pk));
        }
      }
      for (const auto& fk : entry.value("foreign_keys", json::array())) {
        if (!fk.is_array() || fk.size() != 2) throw DatasetError(s.db_id + ": foreign key must be a pair");
        s.foreign_keys.push_back({resolve(fk[0]), resolve(fk[1])});
      }
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ": malformed catalog entry " + s.db_id + ": " + e.what());
    }
    try {
      s.validate();
    } catch (const SchemaError& e) {
      throw DatasetError(e.what());
    }
    schemas.push_back(std::move(s));
  }
  return schemas;
}

std::vector<DatasetItem> load_items(const std::filesystem::path& path, const std::vector<SchemaDescription>& schemas,
                                    const ExclusionList& exclusions,
                                    const std::optional<std::vector<std::string>>& subset) {
  const json questions = read_json_file(path);
  if (!questions.is_array()) throw DatasetError(path.string() + ": expected a JSON array of questions");

  std::set<std::string, std::less<>> known;
  for (const auto& s : schemas) known.insert(s.db_id);

  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    DatasetItem item;
    try {
      item.db_id = q.at("db_id").get<std::string>();
      item.question = q.at("question").get<std::string>();
      item.ground_truth_sql = q.at("query").get<std::string>();
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ": item " + std::to_string(i) + ": " + e.what());
    }
    if (!known.count(item.db_id)) {
      throw DatasetError(path.string() + ": item " + std::to_string(i) + " has unknown db_id " + item.db_id);
    }
    item.source_index = i;
    item.question_hash = question_hash(item.question);
    if (subset && std::find(subset->begin(), subset->end(), item.db_id) == subset->end()) continue;
    if (exclusions.contains(item)) continue;
    items.push_back(std::move(item));
  }
  return items;
}

std::filesystem::path database_path(const std::filesystem::path& root, const std::string& db_id) {
  return root / "database" / db_id / (db_id + ".sqlite");
}

std::vector<std::string> register_databases(SqlRunner& runner, const std::filesystem::path& root,
                                            const std::vector<SchemaDescription>& schemas) {
  std::vector<std::string> missing;
  for (const auto& s : schemas) {
    auto p = database_path(root, s.db_id);
    if (!std::filesystem::exists(p)) {
      missing.push_back(s.db_id);
      continue;
    }
    runner.register_database(s.db_id, p);
  }
  return missing;
}

std::size_t validate_ground_truth(std::vector<DatasetItem>& items, const SqlRunner& runner) {
  std::size_t flagged = 0;
  for (auto& item : items) {
    auto result = runner.execute(item.db_id, item.ground_truth_sql);
    item.truth_ok = result.ok();
    item.truth_error = result.ok() ? std::string{} : result.error().message;
    if (!item.truth_ok) ++flagged;
  }
  return flagged;
}

}  // namespace ecpt
