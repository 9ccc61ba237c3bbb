#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qgen/schema.hpp"
#include "qgen/util.hpp"

namespace qgen {

// Token over executable or canonical SQL text. String tokens hold the
// unescaped value; render_raw re-quotes them.
struct RawToken {
  enum Kind { Keyword, Ident, Number, String, Punct } kind = Ident;
  std::string text;
  int line = 0;
  int col = 0;
};

std::vector<RawToken> raw_tokenize(const std::string& sql);
std::string render_raw(const std::vector<RawToken>& tokens);
std::string quote_sql_string(const std::string& value);

// Reorders SELECT-FROM-WHERE-GROUP-HAVING into the canonical
// FROM-SELECT-WHERE-HAVING-GROUP clause order, recursing into IN(...)
// subqueries. Constants pass through untouched.
std::string restructure(const std::string& raw_sql);

// Inverse clause reordering back to executable SQL order.
std::string revert_structure(const std::string& canonical_sql);

struct Bucket {
  std::string key;
  std::vector<std::string> values;  // rendered constants, deduplicated
  // numeric bounds; unused for string buckets
  double lo = 0.0;
  double hi = 0.0;
  bool pooled = false;  // string overflow bucket
};

struct ColumnBuckets {
  std::string column;  // bare column name as it appears in queries
  std::string table;   // first owning table, for diagnostics
  ColumnType type;
  std::vector<Bucket> buckets;
};

struct PreprocessStats {
  int out_of_range = 0;  // constants mapped to a nearest bucket
};

inline constexpr int kDefaultBucketCount = 16;

// Per-column value histogram. Numeric columns get equi-depth buckets over the
// distinct observed constants; string columns get one bucket per distinct
// value up to the budget, with the remainder pooled.
class BucketMap {
 public:
  static BucketMap build(const std::vector<std::string>& raw_workload, const Schema& schema,
                         int bucket_count = kDefaultBucketCount);

  static BucketMap load(const std::string& path);
  void save(const std::string& path) const;
  std::string render() const;
  uint64_t digest() const { return fnv1a64(render()); }

  const std::vector<ColumnBuckets>& columns() const { return columns_; }
  const ColumnBuckets* find_column(const std::string& column_name) const;
  // both null when the key is unknown
  std::pair<const ColumnBuckets*, const Bucket*> find_key(const std::string& key) const;

  // Maps a constant to its bucket key. Out-of-range constants land in the
  // nearest bucket and bump the stats counter.
  std::string key_for(const std::string& column_name, const RawToken& constant,
                      PreprocessStats* stats) const;

  // Uniform draw from the bucket's stored values, rendered as an SQL literal.
  std::string sample_value(const std::string& key, Rng& rng) const;

  int bucket_count() const { return bucket_count_; }
  uint64_t source_digest() const { return source_digest_; }

 private:
  std::vector<ColumnBuckets> columns_;
  int bucket_count_ = kDefaultBucketCount;
  uint64_t source_digest_ = 0;
};

// Replaces every constant with its bucket key. Input and output are in
// canonical clause order.
std::string bucketize(const std::string& canonical_sql, const BucketMap& map, const Schema& schema,
                      PreprocessStats* stats = nullptr);

// Replaces bucket keys with sampled constants and reverts the clause order;
// the result is executable SQL.
std::string debucketize(const std::string& canonical_bucketized, const BucketMap& map, Rng& rng);

// Workload files: one query per line, '--' comments and blank lines skipped.
std::vector<std::string> read_workload_file(const std::string& path);
void write_workload_file(const std::string& path, const std::vector<std::string>& queries,
                         const std::vector<std::string>& header_comments = {});

}  // namespace qgen
