#pragma once

#include <string>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

enum class ColumnType { Int, Float, String };

const char* column_type_name(ColumnType t);
ColumnType parse_column_type(const std::string& name);  // throws on unknown
bool is_numeric(ColumnType t);

struct SchemaColumn {
  std::string table;
  std::string name;
  ColumnType type;
};

// Relational schema: flat list of typed columns grouped by table. Loaded from
// text with one 'table.column:type' entry per line.
class Schema {
 public:
  static Schema from_text(const std::string& text);
  static Schema from_file(const std::string& path);

  const std::vector<std::string>& tables() const { return tables_; }
  const std::vector<SchemaColumn>& columns() const { return columns_; }

  bool has_table(const std::string& name) const;
  // column indices of one table, in declaration order
  std::vector<int> columns_of(const std::string& table) const;
  // column indices sharing this bare name, in declaration order
  std::vector<int> owners_of(const std::string& column_name) const;
  bool has_column(const std::string& column_name) const { return !owners_of(column_name).empty(); }
  const SchemaColumn& column(int idx) const { return columns_[static_cast<size_t>(idx)]; }

  std::string render() const;
  uint64_t digest() const { return fnv1a64(render()); }
  std::string digest_hex() const { return to_hex(digest()); }

 private:
  std::vector<std::string> tables_;
  std::vector<SchemaColumn> columns_;
};

}  // namespace qgen
