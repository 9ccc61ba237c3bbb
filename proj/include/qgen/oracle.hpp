#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qgen/preprocess.hpp"
#include "qgen/schema.hpp"

namespace qgen {

// Column-major table storage; one typed vector per column.
struct ColumnData {
  ColumnType type;
  std::vector<long long> ints;
  std::vector<double> floats;
  std::vector<std::string> strings;

  size_t size() const {
    switch (type) {
      case ColumnType::Int: return ints.size();
      case ColumnType::Float: return floats.size();
      case ColumnType::String: return strings.size();
    }
    return 0;
  }
};

struct TableData {
  std::string name;
  size_t row_count = 0;
  std::vector<std::string> column_names;
  std::map<std::string, ColumnData> columns;
};

class Database {
 public:
  // Loads <dir>/<table>.csv for every schema table. Header row must carry the
  // schema's column names for that table.
  static Database load(const Schema& schema, const std::string& dir);

  const Schema& schema() const { return *schema_; }
  const TableData& table(const std::string& name) const;
  bool has_table(const std::string& name) const { return tables_.count(name) > 0; }

 private:
  std::shared_ptr<Schema> schema_;
  std::map<std::string, TableData> tables_;
};

// Exact row count of the query result over the loaded tables. Joins are
// unconstrained cross products filtered by the WHERE clause; GROUP BY and
// HAVING reduce to distinct group combinations.
long long execute_cardinality(const Database& db, const std::string& executable_sql);

// Deterministic cost proxy: full scan of every FROM table, plus every
// intermediate cross-product size under a left-to-right join of the filtered
// tables, plus the grouping input size, plus subquery costs.
double estimate_cost(const Database& db, const std::string& executable_sql);

struct FeatureVector {
  long long cardinality = 0;
  double cost = 0.0;
  int length = 0;      // canonical token count
  int join_count = 0;  // top-level FROM tables minus one
  std::map<std::string, int> aggregate_counts;
  std::map<std::string, int> operator_counts;
  bool nested = false;
};

// Executes one canonical bucketized query: samples concrete constants, runs
// it, and pairs the numbers with structural counts.
FeatureVector featurize(const Database& db, const BucketMap& map,
                        const std::string& canonical_bucketized, Rng& rng);

// Integration point for measuring against a real DBMS; no driver ships, the
// built-in evaluator above stands in.
class ExternalDbAdapter {
 public:
  virtual ~ExternalDbAdapter() = default;
  virtual void connect(const std::string& dsn) = 0;
  virtual long long run_count_query(const std::string& sql) = 0;
  virtual double fetch_estimated_cost(const std::string& sql) = 0;
};

}  // namespace qgen
