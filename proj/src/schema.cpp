#include "qgen/schema.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace qgen {

const char* column_type_name(ColumnType t) {
  switch (t) {
    case ColumnType::Int: return "int";
    case ColumnType::Float: return "float";
    case ColumnType::String: return "string";
  }
  return "?";
}

ColumnType parse_column_type(const std::string& name) {
  if (name == "int") return ColumnType::Int;
  if (name == "float") return ColumnType::Float;
  if (name == "string") return ColumnType::String;
  fail("unknown column type '" + name + "' (expected int, float, or string)");
}

bool is_numeric(ColumnType t) { return t != ColumnType::String; }

namespace {

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {
      "FROM", "SELECT", "WHERE", "GROUP", "BY",  "HAVING", "AND",
      "IN",   "COUNT",  "SUM",   "AVG",   "MIN", "MAX"};
  return words;
}

void check_identifier(const std::string& name, int line, const char* what) {
  if (name.empty()) fail("schema line " + std::to_string(line) + ": empty " + what + " name");
  for (char c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
      fail("schema line " + std::to_string(line) + ": " + what + " name '" + name +
           "' contains unsupported character '" + std::string(1, c) + "'");
  }
  if (std::isdigit(static_cast<unsigned char>(name[0])))
    fail("schema line " + std::to_string(line) + ": " + what + " name '" + name +
         "' must not start with a digit");
  if (reserved_words().count(upper_ascii(name)))
    fail("schema line " + std::to_string(line) + ": " + what + " name '" + name +
         "' is a reserved word");
  if (starts_with(name, "K_"))
    fail("schema line " + std::to_string(line) + ": " + what + " name '" + name +
         "' collides with the bucket key namespace (K_ prefix)");
}

}  // namespace

Schema Schema::from_text(const std::string& text) {
  Schema s;
  std::set<std::pair<std::string, std::string>> seen;
  auto lines = split_on(text, '\n');
  for (size_t li = 0; li < lines.size(); ++li) {
    int line_no = static_cast<int>(li) + 1;
    std::string line = trim(lines[li]);
    if (line.empty() || line[0] == '#') continue;

    size_t dot = line.find('.');
    size_t colon = line.find(':');
    if (dot == std::string::npos || colon == std::string::npos || dot > colon)
      fail("schema line " + std::to_string(line_no) +
           ": expected 'table.column:type', got '" + line + "'");
    std::string table = trim(line.substr(0, dot));
    std::string column = trim(line.substr(dot + 1, colon - dot - 1));
    std::string type_name = trim(line.substr(colon + 1));
    check_identifier(table, line_no, "table");
    check_identifier(column, line_no, "column");
    ColumnType type;
    try {
      type = parse_column_type(type_name);
    } catch (const QgError& e) {
      fail("schema line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert({table, column}).second)
      fail("schema line " + std::to_string(line_no) + ": duplicate column " + table + "." +
           column);
    if (std::find(s.tables_.begin(), s.tables_.end(), table) == s.tables_.end())
      s.tables_.push_back(table);
    s.columns_.push_back({table, column, type});
  }
  if (s.columns_.empty()) fail("schema has no columns");
  return s;
}

Schema Schema::from_file(const std::string& path) { return from_text(read_text_file(path)); }

bool Schema::has_table(const std::string& name) const {
  return std::find(tables_.begin(), tables_.end(), name) != tables_.end();
}

std::vector<int> Schema::columns_of(const std::string& table) const {
  std::vector<int> out;
  for (size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].table == table) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Schema::owners_of(const std::string& column_name) const {
  std::vector<int> out;
  for (size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == column_name) out.push_back(static_cast<int>(i));
  return out;
}

std::string Schema::render() const {
  std::ostringstream ss;
  for (const auto& c : columns_)
    ss << c.table << "." << c.name << ":" << column_type_name(c.type) << "\n";
  return ss.str();
}

}  // namespace qgen
