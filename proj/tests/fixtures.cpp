#include "fixtures.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ecpt/spider_ingest.hpp"

namespace ecpt::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = fs::temp_directory_path() /
                     ("ecpt-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("could not create a temporary directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_sqlite(const fs::path& path, const std::string& script) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::remove(path);
  sqlite3* db = nullptr;
  if (sqlite3_open(path.string().c_str(), &db) != SQLITE_OK) {
    std::string msg = db ? sqlite3_errmsg(db) : "out of memory";
    sqlite3_close(db);
    throw std::runtime_error("sqlite open failed: " + msg);
  }
  char* err = nullptr;
  if (sqlite3_exec(db, script.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    sqlite3_close(db);
    throw std::runtime_error("sqlite script failed: " + msg);
  }
  sqlite3_close(db);
}

namespace {

const char* kShopSql = R"sql(
CREATE TABLE products (product_id INTEGER PRIMARY KEY, name TEXT, category TEXT, price REAL);
CREATE TABLE orders (order_id INTEGER PRIMARY KEY, product_id INTEGER REFERENCES products(product_id),
                     quantity INTEGER, order_date TEXT);
INSERT INTO products VALUES (1, 'Apple', 'Food', 1.5), (2, 'Bread', 'Food', 2.25), (3, 'Hammer', 'Tools', 12.0),
                            (4, 'Saw', 'Tools', 20.5), (5, 'Lamp', 'Home', 35.0), (6, 'Rug', 'Home', 80.0);
INSERT INTO orders VALUES (1, 1, 10, '2023-01-05'), (2, 1, 5, '2023-01-09'), (3, 3, 1, '2023-02-01'),
                          (4, 5, 2, '2023-02-11'), (5, 2, 7, '2023-03-03'), (6, 6, 1, '2023-03-15');
)sql";

const char* kSchoolSql = R"sql(
CREATE TABLE departments (dept_id INTEGER PRIMARY KEY, name TEXT, building TEXT);
CREATE TABLE students (student_id INTEGER PRIMARY KEY, name TEXT, age INTEGER,
                       dept_id INTEGER REFERENCES departments(dept_id));
INSERT INTO departments VALUES (1, 'Math', 'North'), (2, 'History', 'South'), (3, 'Physics', 'North');
INSERT INTO students VALUES (1, 'Ana', 20, 1), (2, 'Ben', 22, 1), (3, 'Cai', 19, 2),
                            (4, 'Dee', 23, 3), (5, 'Eli', 21, 3), (6, 'Fay', 20, 2);
)sql";

// Spider tables.json entry for a schema (column index 0 is the "*" pseudo column).
json spider_entry(const SchemaDescription& s) {
  json tables = json::array(), columns = json::array(), types = json::array();
  columns.push_back(json::array({-1, "*"}));
  types.push_back("text");
  std::map<std::string, int> index;
  for (std::size_t t = 0; t < s.tables.size(); ++t) {
    tables.push_back(s.tables[t].name);
    for (const auto& c : s.tables[t].columns) {
      index[s.tables[t].name + "." + c.name] = static_cast<int>(columns.size());
      columns.push_back(json::array({static_cast<int>(t), c.name}));
      types.push_back(c.type);
    }
  }
  json pks = json::array(), fks = json::array();
  for (const auto& pk : s.primary_keys) pks.push_back(index.at(pk.str()));
  for (const auto& fk : s.foreign_keys) fks.push_back(json::array({index.at(fk.from.str()), index.at(fk.to.str())}));
  return {{"db_id", s.db_id},
          {"table_names_original", tables},
          {"table_names", tables},
          {"column_names_original", columns},
          {"column_names", columns},
          {"column_types", types},
          {"primary_keys", pks},
          {"foreign_keys", fks}};
}

}  // namespace

SchemaDescription shop_schema() {
  SchemaDescription s;
  s.db_id = "shop";
  s.tables = {{"products", {{"product_id", "number"}, {"name", "text"}, {"category", "text"}, {"price", "number"}}},
              {"orders", {{"order_id", "number"}, {"product_id", "number"}, {"quantity", "number"}, {"order_date", "text"}}}};
  s.primary_keys = {{"products", "product_id"}, {"orders", "order_id"}};
  s.foreign_keys = {{{"orders", "product_id"}, {"products", "product_id"}}};
  return s;
}

SchemaDescription school_schema() {
  SchemaDescription s;
  s.db_id = "school";
  s.tables = {{"departments", {{"dept_id", "number"}, {"name", "text"}, {"building", "text"}}},
              {"students", {{"student_id", "number"}, {"name", "text"}, {"age", "number"}, {"dept_id", "number"}}}};
  s.primary_keys = {{"departments", "dept_id"}, {"students", "student_id"}};
  s.foreign_keys = {{{"students", "dept_id"}, {"departments", "dept_id"}}};
  return s;
}

void write_mini_spider(const fs::path& root) {
  make_sqlite(database_path(root, "shop"), kShopSql);
  make_sqlite(database_path(root, "school"), kSchoolSql);
  write_text(root / "tables.json", json::array({spider_entry(shop_schema()), spider_entry(school_schema())}).dump(2));
  json dev = json::array();
  for (const auto& item : scenario_items()) {
    dev.push_back({{"db_id", item.db_id}, {"question", item.question}, {"query", item.truth}});
  }
  write_text(root / "dev.json", dev.dump(2));
}

void register_fixture_databases(SqlRunner& runner, const fs::path& root) {
  runner.register_database("shop", database_path(root, "shop"));
  runner.register_database("school", database_path(root, "school"));
}

std::vector<ClassifierCase> classifier_cases() {
  using K = OutcomeKind;
  return {
      {"identical query", "shop", "SELECT name FROM products WHERE price > 10", "SELECT name FROM products WHERE price > 10", K::Success},
      {"row order ignored without ORDER BY", "shop", "SELECT name FROM products ORDER BY name DESC", "SELECT name FROM products", K::Success},
      {"row order enforced by ORDER BY", "shop", "SELECT name FROM products ORDER BY price DESC", "SELECT name FROM products ORDER BY price", K::UndesiredResult},
      {"same order under ORDER BY", "shop", "SELECT name FROM products ORDER BY price ASC", "SELECT name FROM products ORDER BY price", K::Success},
      {"ORDER BY only inside a subquery", "shop", "SELECT name FROM products WHERE price > 10 ORDER BY name DESC",
       "SELECT name FROM (SELECT name, price FROM products ORDER BY price) WHERE price > 10", K::Success},
      {"column aliases ignored", "shop", "SELECT name AS product_name, price AS p FROM products WHERE category = 'Home'",
       "SELECT name, price FROM products WHERE category = 'Home'", K::Success},
      {"case-sensitive WHERE value", "shop", "SELECT name FROM products WHERE category = \"food\"",
       "SELECT name FROM products WHERE category = \"Food\"", K::EmptyTable},
      {"both results empty", "shop", "SELECT name FROM products WHERE price > 1000", "SELECT name FROM products WHERE price < 0", K::Success},
      {"syntax error", "shop", "SELEC name FROM products", "SELECT name FROM products", K::ExecutionError},
      {"unknown column", "shop", "SELECT title FROM products", "SELECT name FROM products", K::ExecutionError},
      {"unknown table", "shop", "SELECT name FROM product", "SELECT name FROM products", K::ExecutionError},
      {"write statement rejected", "shop", "DELETE FROM products", "SELECT name FROM products", K::ExecutionError},
      {"missing DISTINCT", "shop", "SELECT category FROM products", "SELECT DISTINCT category FROM products", K::UndesiredResult},
      {"extra column", "shop", "SELECT name, price FROM products", "SELECT name FROM products", K::UndesiredResult},
      {"wrong aggregate", "shop", "SELECT avg(price) FROM products", "SELECT max(price) FROM products", K::UndesiredResult},
      {"float within tolerance", "shop", "SELECT 0.1 + 0.2", "SELECT 0.3", K::Success},
      {"integer equals real", "shop", "SELECT count(*) FROM products", "SELECT 6.0", K::Success},
      {"generated non-empty, truth empty", "shop", "SELECT name FROM products", "SELECT name FROM products WHERE price < 0", K::UndesiredResult},
      {"missing join", "school", "SELECT name FROM students WHERE dept_id = 'Physics'",
       "SELECT T1.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'Physics'", K::EmptyTable},
      {"missing condition", "school", "SELECT name FROM students", "SELECT name FROM students WHERE age > 21", K::UndesiredResult},
  };
}

const std::vector<ScenarioItem>& scenario_items() {
  static const std::vector<ScenarioItem> items = {
      // shop: six zero-shot successes
      {"shop", "How many products are there?", "SELECT count(*) FROM products", "SELECT count(*) FROM products;", {}, 0, false},
      {"shop", "List the names of all tools.", "SELECT name FROM products WHERE category = 'Tools'",
       "```sql\nSELECT name FROM products WHERE category = 'Tools' ORDER BY name DESC;\n```", {}, 0, false},
      {"shop", "What is the most expensive product?", "SELECT name FROM products ORDER BY price DESC LIMIT 1",
       "SELECT name FROM products ORDER BY price DESC LIMIT 1", {}, 0, false},
      {"shop", "What is the total quantity ordered for Apple?",
       "SELECT sum(T2.quantity) FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id WHERE T1.name = 'Apple'",
       "SELECT sum(o.quantity) FROM orders o JOIN products p ON p.product_id = o.product_id WHERE p.name = 'Apple'", {}, 0, false},
      {"shop", "What is the average price of food products?", "SELECT avg(price) FROM products WHERE category = 'Food'",
       "SELECT avg(price) FROM products WHERE category = 'Food'", {}, 0, false},
      {"shop", "Which products have never been ordered?",
       "SELECT name FROM products WHERE product_id NOT IN (SELECT product_id FROM orders)",
       "SELECT name FROM products EXCEPT SELECT T1.name FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id",
       {}, 0, false},
      // shop: four failures
      {"shop", "List the names of products in the food category.", "SELECT name FROM products WHERE category = \"Food\"",
       "SELECT name FROM products WHERE category = \"food\"", {"SELECT name FROM products WHERE category = \"Food\""}, 1, true},
      {"shop", "How many orders were placed for each category?",
       "SELECT T1.category, count(*) FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id GROUP BY T1.category",
       "SELECT category, count(*) FROM products GROUP BY category",
       {"SELECT T1.category, count(*) FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id",
        "SELECT T1.category, count(*) FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id GROUP BY T1.category"},
       2, true},
      {"shop", "Show the order dates of orders with more than 4 items.", "SELECT order_date FROM orders WHERE quantity > 4",
       "SELECT order_day FROM orders WHERE quantity > 4", {"SELECT order_date FROM orders WHERE quantity > 5"}, 3, false},
      {"shop", "List product names sorted by price from cheapest to most expensive.",
       "SELECT name FROM products ORDER BY price ASC", "SELECT name FROM products ORDER BY price DESC",
       {"SELECT name FROM products ORDER BY name", "SELECT name FROM products ORDER BY product_id DESC",
        "SELECT name FROM products ORDER BY price"},
       3, true},
      // school: six zero-shot successes
      {"school", "How many students are there?", "SELECT count(*) FROM students", "SELECT count(*) FROM students", {}, 0, false},
      {"school", "What are the names of students older than 21?", "SELECT name FROM students WHERE age > 21",
       "SELECT name FROM students WHERE age > 21", {}, 0, false},
      {"school", "Which departments are in the North building?", "SELECT name FROM departments WHERE building = 'North'",
       "Here is the query:\nSELECT name FROM departments WHERE building = 'North';", {}, 0, false},
      {"school", "What is the average age of students in the Math department?",
       "SELECT avg(T1.age) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'Math'",
       "SELECT avg(T1.age) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'Math'",
       {}, 0, false},
      {"school", "What is the name of the youngest student?", "SELECT name FROM students ORDER BY age LIMIT 1",
       "SELECT name FROM students WHERE age = (SELECT min(age) FROM students)", {}, 0, false},
      {"school", "How many students does each department have?",
       "SELECT T2.name, count(*) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id GROUP BY T2.name",
       "SELECT T2.name, count(*) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id GROUP BY T2.name",
       {}, 0, false},
      // school: four failures
      {"school", "Which students are in the Physics department?",
       "SELECT T1.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'Physics'",
       "SELECT name FROM students WHERE dept_id = 'Physics'",
       {"SELECT T1.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'Physics'"},
       1, true},
      {"school", "What is the age of the student named Ana?", "SELECT age FROM students WHERE name = 'Ana'",
       "SELECT age FROM student WHERE name = 'Ana'",
       {"SELECT age FROM students WHERE name = 'ana'", "SELECT age FROM students WHERE name = 'Ana'"}, 2, true},
      {"school", "List the buildings of all departments without duplicates.", "SELECT DISTINCT building FROM departments",
       "SELECT building FROM departments", {"SELECT building FROM departments GROUP BY name"}, 3, false},
      {"school", "What is the oldest age among students?", "SELECT max(age) FROM students", "SELECT min(age) FROM students",
       {"SELECT avg(age) FROM students"}, 3, false},
  };
  return items;
}

json scenario_mock_script() {
  json rules = json::array();
  for (const auto& item : scenario_items()) {
    const std::string q = "### Question\n" + item.question + "\n";
    rules.push_back({{"contains", {"### Task: Text-to-SQL", q}}, {"responses", {item.zero_shot_reply}}});
    if (!item.treatment_replies.empty()) {
      rules.push_back({{"contains", {"### Task: Treatment", q}}, {"responses", item.treatment_replies}});
      rules.push_back({{"contains", {"### Task: Self-correction", q}}, {"responses", {item.zero_shot_reply}}});
    }
  }
  rules.push_back({{"contains", {"### Task: Diagnosis"}}, {"responses", {"e3, e5"}}});
  rules.push_back({{"contains", {"### Task: Prescription"}},
                   {"responses",
                    {"REASON: The query does not return what the question asks for.\n"
                     "INSTRUCTION: Check tables, values and clauses against the question and rewrite the query."}}});
  return {{"version", "ecpt-mock/1"}, {"rules", rules}};
}

namespace {

struct SampleRow {
  const char* db;
  const char* question;
  const char* generated;
  OutcomeKind kind;
  std::vector<ErrorTypeId> labels;
  const char* truth;
  const char* reason;
  const char* instruction;
};

}  // namespace

std::vector<CorrectionCase> sample_correction_cases() {
  using E = ErrorTypeId;
  using K = OutcomeKind;
  const std::vector<SampleRow> rows = {
      {"shop", "Which categories are sold?", "SELECT category FROM products", K::UndesiredResult, {E::E1},
       "SELECT DISTINCT category FROM products", "Categories repeat once per product.", "Add DISTINCT to the select list."},
      {"school", "List all buildings.", "SELECT building FROM departments", K::UndesiredResult, {E::E1},
       "SELECT DISTINCT building FROM departments", "North appears twice.", "Select distinct buildings."},
      {"shop", "List products from most to least expensive.", "SELECT name FROM products ORDER BY price", K::UndesiredResult,
       {E::E2}, "SELECT name FROM products ORDER BY price DESC", "The sort direction is ascending.", "Sort by price with DESC."},
      {"school", "Who is the oldest student?", "SELECT name FROM students ORDER BY age LIMIT 1", K::UndesiredResult, {E::E2},
       "SELECT name FROM students ORDER BY age DESC LIMIT 1", "Ascending order returns the youngest.", "Order by age DESC."},
      {"shop", "Show home products.", "SELECT name FROM products WHERE category = 'home'", K::EmptyTable, {E::E3},
       "SELECT name FROM products WHERE category = 'Home'", "Stored values are capitalized.", "Compare with 'Home'."},
      {"school", "Students in History?", "SELECT T1.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'history'",
       K::EmptyTable, {E::E3}, "SELECT T1.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T2.name = 'History'",
       "The department name is capitalized in the table.", "Use 'History' in the WHERE clause."},
      {"shop", "Give the price of each product.", "SELECT product_id, category FROM products", K::UndesiredResult, {E::E4},
       "SELECT name, price FROM products", "Selected identifiers instead of names and prices.", "Select name and price."},
      {"school", "Give the ages of students.", "SELECT student_id FROM students", K::UndesiredResult, {E::E4},
       "SELECT age FROM students", "Selected the id column.", "Select the age column."},
      {"shop", "Products cheaper than 10 in Food.", "SELECT name FROM products WHERE price < 10 OR category = 'Food'",
       K::UndesiredResult, {E::E5}, "SELECT name FROM products WHERE price < 10 AND category = 'Food'",
       "OR admits products matching only one condition.", "Combine the conditions with AND."},
      {"school", "Students aged at least 21.", "SELECT name FROM students WHERE age > 21", K::UndesiredResult, {E::E5},
       "SELECT name FROM students WHERE age >= 21", "Strict comparison drops age 21.", "Use >= 21."},
      {"shop", "Products priced above average.", "SELECT name FROM products WHERE price > (SELECT min(price) FROM products)",
       K::UndesiredResult, {E::E6}, "SELECT name FROM products WHERE price > (SELECT avg(price) FROM products)",
       "The sub query computes the minimum.", "Compare against avg(price) in the sub query."},
      {"school", "Students in North departments.", "SELECT name FROM students WHERE dept_id IN (SELECT dept_id FROM students)",
       K::UndesiredResult, {E::E6, E::E8}, "SELECT name FROM students WHERE dept_id IN (SELECT dept_id FROM departments WHERE building = 'North')",
       "The sub query reads the wrong table.", "Select dept_id from departments filtered by building."},
      {"shop", "Products that are Food or were ordered twice.", "SELECT name FROM products WHERE category = 'Food'",
       K::UndesiredResult, {E::E7}, "SELECT name FROM products WHERE category = 'Food' UNION SELECT T1.name FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id GROUP BY T1.name HAVING count(*) = 2",
       "Only one of the two sets was returned.", "Use UNION to combine both sets."},
      {"school", "Departments with no students.", "SELECT name FROM departments", K::UndesiredResult, {E::E7},
       "SELECT name FROM departments EXCEPT SELECT T2.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id",
       "All departments are listed.", "Subtract departments that have students with EXCEPT."},
      {"shop", "Order dates for Lamp.", "SELECT T2.order_date FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.order_id WHERE T1.name = 'Lamp'",
       K::UndesiredResult, {E::E8}, "SELECT T2.order_date FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id WHERE T1.name = 'Lamp'",
       "Joined on the order id.", "Join orders.product_id to products.product_id."},
      {"school", "Building of Ana's department.", "SELECT T2.building FROM students AS T1 JOIN departments AS T2 ON T1.student_id = T2.dept_id WHERE T1.name = 'Ana'",
       K::UndesiredResult, {E::E8}, "SELECT T2.building FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T1.name = 'Ana'",
       "Joined on the student id.", "Join on dept_id."},
      {"shop", "Products with their orders, including unordered ones.", "SELECT T1.name, T2.order_id FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id",
       K::UndesiredResult, {E::E9}, "SELECT T1.name, T2.order_id FROM products AS T1 LEFT JOIN orders AS T2 ON T1.product_id = T2.product_id",
       "An inner join drops unordered products.", "Use LEFT JOIN."},
      {"school", "Departments and their students, keeping empty departments.", "SELECT T1.name, T2.name FROM departments AS T1 JOIN students AS T2 ON T1.dept_id = T2.dept_id",
       K::UndesiredResult, {E::E9, E::E11}, "SELECT T1.name, T2.name FROM departments AS T1 LEFT JOIN students AS T2 ON T1.dept_id = T2.dept_id",
       "The join keyword drops departments without students.", "Switch to LEFT JOIN."},
      {"shop", "What is the cost of Saw?", "SELECT cost FROM products WHERE name = 'Saw'", K::ExecutionError, {E::E10},
       "SELECT price FROM products WHERE name = 'Saw'", "There is no cost column.", "Use the price column."},
      {"school", "What is the major of Ben?", "SELECT major FROM students WHERE name = 'Ben'", K::ExecutionError, {E::E10},
       "SELECT T2.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id WHERE T1.name = 'Ben'",
       "There is no major column.", "Join departments and select its name."},
      {"shop", "Product names with their order quantity.", "SELECT name, quantity FROM products JOIN orders ON product_id = product_id",
       K::ExecutionError, {E::E11}, "SELECT T1.name, T2.quantity FROM products AS T1 JOIN orders AS T2 ON T1.product_id = T2.product_id",
       "product_id is ambiguous without aliases.", "Alias both tables and qualify the columns."},
      {"school", "Student and department names.", "SELECT name, name FROM students JOIN departments ON students.dept_id = departments.dept_id",
       K::ExecutionError, {E::E11}, "SELECT T1.name, T2.name FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id",
       "name is ambiguous.", "Qualify each name column with a table alias."},
      {"shop", "Number of products per category.", "SELECT category, count(*) FROM products", K::UndesiredResult, {E::E12},
       "SELECT category, count(*) FROM products GROUP BY category", "The count spans all rows.", "Group by category."},
      {"school", "Average age per department.", "SELECT dept_id, avg(age) FROM students", K::UndesiredResult, {E::E12},
       "SELECT dept_id, avg(age) FROM students GROUP BY dept_id", "No grouping was applied.", "Add GROUP BY dept_id."},
      {"shop", "Total quantity per product.", "SELECT product_id, sum(quantity) FROM orders GROUP BY order_date", K::UndesiredResult,
       {E::E13}, "SELECT product_id, sum(quantity) FROM orders GROUP BY product_id", "Grouped by date.", "Group by product_id."},
      {"school", "Students per building.", "SELECT T2.building, count(*) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id GROUP BY T2.name",
       K::UndesiredResult, {E::E13, E::E1}, "SELECT T2.building, count(*) FROM students AS T1 JOIN departments AS T2 ON T1.dept_id = T2.dept_id GROUP BY T2.building",
       "Grouped by department name.", "Group by building."},
  };
  const auto shop = shop_schema();
  const auto school = school_schema();
  std::vector<CorrectionCase> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    CorrectionCase cc;
    cc.case_.schema = std::string(r.db) == "shop" ? shop : school;
    cc.case_.question = r.question;
    cc.case_.generated_sql = r.generated;
    cc.case_.outcome = r.kind == K::ExecutionError ? ExecutionOutcome::execution_error("query failed to run")
                                                    : ExecutionOutcome{r.kind, {}};
    cc.error_types = r.labels;
    cc.ground_truth_sql = r.truth;
    cc.reason = r.reason;
    cc.instruction = r.instruction;
    out.push_back(std::move(cc));
  }
  return out;
}

SyntheticSet noisy_prototypes(std::size_t labels, std::size_t per_label, std::size_t held_out_per_label,
                              std::size_t dim, std::size_t signal_dims, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> prototypes;
  for (std::size_t l = 0; l < labels; ++l) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < signal_dims; ++i) p[static_cast<Eigen::Index>(i)] = gauss(rng);
    prototypes.push_back(p.normalized());
  }
  auto draw = [&](std::size_t label) {
    Eigen::VectorXd v = prototypes[label];
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += noise * gauss(rng);
    return LabeledVector{v, label};
  };
  SyntheticSet set;
  for (std::size_t l = 0; l < labels; ++l) {
    for (std::size_t i = 0; i < per_label; ++i) set.train.push_back(draw(l));
    for (std::size_t i = 0; i < held_out_per_label; ++i) set.held_out.push_back(draw(l));
  }
  return set;
}

double precision_at_1(const ProjectionModel& model, const std::vector<LabeledVector>& reference,
                      const std::vector<LabeledVector>& queries) {
  auto project = [&](const Eigen::VectorXd& x) { Eigen::VectorXd u = model.weight() * x; return Eigen::VectorXd(u.normalized()); };
  std::vector<Eigen::VectorXd> ref;
  for (const auto& r : reference) ref.push_back(project(r.base));
  std::size_t hits = 0;
  for (const auto& q : queries) {
    const Eigen::VectorXd v = project(q.base);
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double sim = v.dot(ref[i]);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    if (reference[best].label == q.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double leave_one_out_precision(const ProjectionModel& model, const std::vector<LabeledVector>& set) {
  std::vector<Eigen::VectorXd> projected;
  for (const auto& s : set) projected.push_back((model.weight() * s.base).normalized());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::size_t best = i;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < set.size(); ++j) {
      if (j == i) continue;
      const double sim = projected[i].dot(projected[j]);
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    if (set[best].label == set[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

std::vector<std::uint64_t> brute_force_top_k(const KbStore& kb, const EmbeddingVector& query, std::size_t k,
                                             const ErrorTypeFilter& filter) {
  std::vector<std::pair<double, std::uint64_t>> all;
  for (const auto& e : kb.entries()) {
    if (filter) {
      bool eligible = false;
      for (auto id : e.correction_case.error_types) eligible = eligible || filter->count(id) > 0;
      if (!eligible) continue;
    }
    all.emplace_back(query.values().dot(e.vector.values()), e.id);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < all.size() && i < k; ++i) ids.push_back(all[i].second);
  return ids;
}

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
  return EmbeddingVector::normalized(v);
}

KbStore random_store(std::size_t count, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto cases = sample_correction_cases();
  KbStore kb(dim, ProjectionModel::identity(dim).hash());
  std::vector<EmbeddingVector> made;
  for (std::size_t i = 0; i < count; ++i) {
    EmbeddingVector v = (i % 5 == 4) ? made[i / 2] : random_unit(rng, dim);
    made.push_back(v);
    kb.insert_vector(cases[i % cases.size()], v);
  }
  return kb;
}

DiagnosisExamples option_b_examples_from_samples() {
  DiagnosisExamples out;
  for (const auto& cc : sample_correction_cases()) out.emplace(cc.primary_label(), cc);
  return out;
}

PromptInputs golden_prompt_inputs() {
  PromptInputs in;
  in.failing.schema = shop_schema();
  in.failing.question = "What are the names of all products in the Food category?";
  in.failing.generated_sql = "SELECT name FROM products WHERE category = 'food'";
  in.failing.outcome = ExecutionOutcome::empty_table();
  in.failing.preview.columns = {"name"};
  in.truth_sql = "SELECT name FROM products WHERE category = 'Food'";
  in.diagnosis.ranked_error_ids = {ErrorTypeId::E3, ErrorTypeId::E5};
  in.prescription.reason = "Category values are stored capitalized, so 'food' matches nothing.";
  in.prescription.instruction = "Compare category with 'Food' exactly as stored.";
  const auto cases = sample_correction_cases();
  in.retrieved = {cases[4], cases[5], cases[8]};
  in.examples = option_b_examples_from_samples();
  return in;
}

std::map<std::string, std::string> render_golden_prompts() {
  const auto in = golden_prompt_inputs();
  std::vector<const CorrectionCase*> retrieved;
  for (const auto& cc : in.retrieved) retrieved.push_back(&cc);
  return {
      {"zero_shot.txt", render_zero_shot(in.failing.schema, in.failing.question)},
      {"diagnosis.txt", render_diagnosis(in.failing)},
      {"diagnosis_option_b.txt", render_diagnosis(in.failing, &in.examples)},
      {"prescription.txt", render_prescription(in.failing, in.diagnosis, retrieved)},
      {"prescription_no_examples.txt", render_prescription(in.failing, in.diagnosis, {})},
      {"treatment.txt", render_treatment(in.failing, in.prescription)},
      {"generic_correction.txt", render_generic_correction(in.failing)},
  };
}

ScenarioRig::ScenarioRig() {
  write_mini_spider(dir.path());
  schemas = load_schemas(dir / "tables.json");
  items = load_items(dir / "dev.json", schemas);
  if (!register_databases(runner, dir.path(), schemas).empty()) throw std::runtime_error("fixture databases missing");
  for (const auto& cc : sample_correction_cases()) kb.insert(cc, embedder, model);
}

PipelineContext ScenarioRig::context(LlmGateway& gateway, const PipelineOptions& options) const {
  PipelineContext ctx;
  ctx.runner = &runner;
  ctx.gateway = &gateway;
  for (const auto& s : schemas) ctx.schemas.emplace(s.db_id, s);
  ctx.options = options;
  if (!options.generic) {
    ctx.kb = &kb;
    ctx.embedder = &embedder;
    ctx.model = &model;
  }
  return ctx;
}

std::unique_ptr<MockBackend> ScenarioRig::scenario_mock() const { return MockBackend::from_json(scenario_mock_script()); }

}  // namespace ecpt::testing
