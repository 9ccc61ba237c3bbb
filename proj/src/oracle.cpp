#include "qgen/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace qgen {

namespace {

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& file) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      cell += c;
      ++i;
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
      ++i;
      continue;
    }
    if (c == ',') {
      row.push_back(cell);
      cell.clear();
      any = true;
      ++i;
      continue;
    }
    if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.push_back(cell);
        rows.push_back(std::move(row));
        row.clear();
        cell.clear();
        any = false;
      }
      ++i;
      continue;
    }
    cell += c;
    any = true;
    ++i;
  }
  if (quoted) fail(file + ": unterminated quoted cell");
  if (any || !cell.empty()) {
    row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Query AST over canonical token order
// ---------------------------------------------------------------------------

struct SelectItem {
  bool star = false;
  std::string agg;  // empty for a plain column
  std::string column;
};

struct QueryAst;

struct Predicate {
  std::string column;
  std::string op;  // comparison, or "IN"
  RawToken value;  // comparison constant (Number/String) or bucket key Ident
  std::unique_ptr<QueryAst> subquery;
};

struct HavingPred {
  std::string agg;  // empty for a plain grouped column
  std::string column;
  std::string op;
  RawToken value;
};

struct QueryAst {
  std::vector<std::string> tables;
  std::vector<SelectItem> select;
  std::vector<Predicate> where;
  std::vector<HavingPred> having;
  std::vector<std::string> group;
};

[[noreturn]] void ast_fail(const RawToken& at, const std::string& msg) {
  if (at.line == 0) fail("query error: " + msg);
  std::ostringstream ss;
  ss << "query error at line " << at.line << ", column " << at.col << ": " << msg;
  fail(ss.str());
}

bool is_agg_kw(const RawToken& t) {
  return t.kind == RawToken::Keyword &&
         (t.text == "COUNT" || t.text == "SUM" || t.text == "AVG" || t.text == "MIN" ||
          t.text == "MAX");
}

class AstBuilder {
 public:
  explicit AstBuilder(const std::vector<RawToken>& toks) : t_(toks) {}

  QueryAst build() {
    QueryAst ast = parse_block();
    if (pos_ < t_.size()) ast_fail(t_[pos_], "trailing tokens after query");
    return ast;
  }

 private:
  const std::vector<RawToken>& t_;
  size_t pos_ = 0;

  const RawToken& peek() const {
    static RawToken eof{RawToken::Punct, "<end>", 0, 0};
    return pos_ < t_.size() ? t_[pos_] : eof;
  }
  bool at_kw(const char* kw) const {
    return pos_ < t_.size() && t_[pos_].kind == RawToken::Keyword && t_[pos_].text == kw;
  }
  bool at_punct(const char* p) const {
    return pos_ < t_.size() && t_[pos_].kind == RawToken::Punct && t_[pos_].text == p;
  }
  RawToken expect_kw(const char* kw) {
    if (!at_kw(kw)) ast_fail(peek(), std::string("expected ") + kw);
    return t_[pos_++];
  }
  RawToken expect_punct(const char* p) {
    if (!at_punct(p)) ast_fail(peek(), std::string("expected '") + p + "'");
    return t_[pos_++];
  }
  RawToken expect_ident() {
    if (pos_ >= t_.size() || t_[pos_].kind != RawToken::Ident)
      ast_fail(peek(), "expected an identifier");
    return t_[pos_++];
  }
  bool at_comparison() const {
    if (pos_ >= t_.size() || t_[pos_].kind != RawToken::Punct) return false;
    const std::string& p = t_[pos_].text;
    return p == "=" || p == "!=" || p == "<" || p == ">" || p == "<=" || p == ">=";
  }

  RawToken expect_value() {
    const RawToken& v = peek();
    if (v.kind == RawToken::Number || v.kind == RawToken::String) return t_[pos_++];
    if (v.kind == RawToken::Ident && starts_with(v.text, "K_")) return t_[pos_++];
    ast_fail(v, "expected a constant");
  }

  QueryAst parse_block() {
    QueryAst ast;
    expect_kw("FROM");
    ast.tables.push_back(expect_ident().text);
    while (at_punct(",")) {
      ++pos_;
      ast.tables.push_back(expect_ident().text);
    }
    expect_kw("SELECT");
    if (at_punct("*")) {
      ++pos_;
      ast.select.push_back({true, "", ""});
    } else {
      ast.select.push_back(parse_select_item());
      while (at_punct(",")) {
        ++pos_;
        ast.select.push_back(parse_select_item());
      }
    }
    if (at_kw("WHERE")) {
      ++pos_;
      ast.where.push_back(parse_predicate());
      while (at_kw("AND")) {
        ++pos_;
        ast.where.push_back(parse_predicate());
      }
    }
    if (at_kw("HAVING")) {
      ++pos_;
      ast.having.push_back(parse_having());
      while (at_kw("AND")) {
        ++pos_;
        ast.having.push_back(parse_having());
      }
    }
    if (at_kw("GROUP")) {
      ++pos_;
      expect_kw("BY");
      ast.group.push_back(expect_ident().text);
      while (at_punct(",")) {
        ++pos_;
        ast.group.push_back(expect_ident().text);
      }
    }
    return ast;
  }

  SelectItem parse_select_item() {
    if (is_agg_kw(peek())) {
      SelectItem item;
      item.agg = t_[pos_++].text;
      expect_punct("(");
      item.column = expect_ident().text;
      expect_punct(")");
      return item;
    }
    SelectItem item;
    item.column = expect_ident().text;
    return item;
  }

  Predicate parse_predicate() {
    Predicate p;
    p.column = expect_ident().text;
    if (at_kw("IN")) {
      ++pos_;
      p.op = "IN";
      expect_punct("(");
      p.subquery = std::make_unique<QueryAst>(parse_block());
      expect_punct(")");
      return p;
    }
    if (!at_comparison()) ast_fail(peek(), "expected a comparison operator or IN");
    p.op = t_[pos_++].text;
    p.value = expect_value();
    return p;
  }

  HavingPred parse_having() {
    HavingPred h;
    if (is_agg_kw(peek())) {
      h.agg = t_[pos_++].text;
      expect_punct("(");
      h.column = expect_ident().text;
      expect_punct(")");
    } else {
      h.column = expect_ident().text;
    }
    if (!at_comparison()) ast_fail(peek(), "expected a comparison operator");
    h.op = t_[pos_++].text;
    h.value = expect_value();
    return h;
  }
};

QueryAst ast_from_canonical(const std::string& canonical_sql) {
  auto toks = raw_tokenize(canonical_sql);
  return AstBuilder(toks).build();
}

QueryAst ast_from_executable(const std::string& executable_sql) {
  return ast_from_canonical(restructure(executable_sql));
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

constexpr long long kCardinalityCap = 1000000000000000LL;

struct Value {
  ColumnType type;
  double num = 0.0;
  std::string str;
};

Value cell_value(const ColumnData& col, size_t row) {
  Value v;
  v.type = col.type;
  switch (col.type) {
    case ColumnType::Int: v.num = static_cast<double>(col.ints[row]); break;
    case ColumnType::Float: v.num = col.floats[row]; break;
    case ColumnType::String: v.str = col.strings[row]; break;
  }
  return v;
}

Value constant_value(const RawToken& tok) {
  Value v;
  if (tok.kind == RawToken::Number) {
    v.type = ColumnType::Float;
    try {
      v.num = std::stod(tok.text);
    } catch (const std::exception&) {
      ast_fail(tok, "malformed numeric constant " + tok.text);
    }
    return v;
  }
  if (tok.kind == RawToken::String) {
    v.type = ColumnType::String;
    v.str = tok.text;
    return v;
  }
  ast_fail(tok, "query still contains a bucket key; it must be debucketized before execution");
}

bool compare(const Value& a, const std::string& op, const Value& b, const RawToken& at) {
  bool a_str = a.type == ColumnType::String;
  bool b_str = b.type == ColumnType::String;
  if (a_str != b_str)
    ast_fail(at, "type mismatch: comparing " + std::string(a_str ? "string" : "numeric") +
                     " with " + (b_str ? "string" : "numeric"));
  int c;
  if (a_str)
    c = a.str < b.str ? -1 : (a.str > b.str ? 1 : 0);
  else
    c = a.num < b.num ? -1 : (a.num > b.num ? 1 : 0);
  if (op == "=") return c == 0;
  if (op == "!=") return c != 0;
  if (op == "<") return c < 0;
  if (op == ">") return c > 0;
  if (op == "<=") return c <= 0;
  if (op == ">=") return c >= 0;
  ast_fail(at, "unknown operator " + op);
}

struct BoundColumn {
  std::string table;
  const ColumnData* data;
};

class Evaluator {
 public:
  explicit Evaluator(const Database& db) : db_(db) {}

  // filtered row indices per FROM table, in FROM order
  struct Filtered {
    std::vector<std::string> tables;
    std::vector<std::vector<size_t>> rows;
  };

  BoundColumn resolve(const QueryAst& ast, const std::string& column,
                      const RawToken& at) const {
    for (const auto& tname : ast.tables) {
      const TableData& t = db_.table(tname);
      auto it = t.columns.find(column);
      if (it != t.columns.end()) return {tname, &it->second};
    }
    ast_fail(at.line ? at : RawToken{RawToken::Ident, column, 0, 0},
             "unknown column '" + column + "' in the FROM tables");
  }

  Filtered filter_tables(const QueryAst& ast) const {
    Filtered f;
    for (const auto& tname : ast.tables) {
      if (!db_.has_table(tname)) fail("unknown table '" + tname + "'");
      f.tables.push_back(tname);
      const TableData& t = db_.table(tname);
      std::vector<size_t> keep(t.row_count);
      for (size_t i = 0; i < t.row_count; ++i) keep[i] = i;
      f.rows.push_back(std::move(keep));
    }
    for (const auto& pred : ast.where) {
      BoundColumn bc = resolve(ast, pred.column, pred.value);
      size_t ti = 0;
      while (f.tables[ti] != bc.table) ++ti;

      std::vector<size_t> next;
      if (pred.op == "IN") {
        auto sub_values = subquery_values(*pred.subquery);
        for (size_t r : f.rows[ti]) {
          Value v = cell_value(*bc.data, r);
          bool hit = false;
          for (const auto& sv : sub_values) {
            bool sv_str = sv.type == ColumnType::String;
            bool v_str = v.type == ColumnType::String;
            if (sv_str != v_str)
              fail("type mismatch between IN column '" + pred.column + "' and subquery values");
            if (sv_str ? sv.str == v.str : sv.num == v.num) {
              hit = true;
              break;
            }
          }
          if (hit) next.push_back(r);
        }
      } else {
        Value c = constant_value(pred.value);
        for (size_t r : f.rows[ti]) {
          if (compare(cell_value(*bc.data, r), pred.op, c, pred.value)) next.push_back(r);
        }
      }
      f.rows[ti] = std::move(next);
    }
    return f;
  }

  std::vector<Value> subquery_values(const QueryAst& sub) const {
    Filtered f = filter_tables(sub);
    if (sub.select.size() != 1 || sub.select[0].star || !sub.select[0].agg.empty())
      fail("subquery must select exactly one plain column");
    BoundColumn bc = resolve(sub, sub.select[0].column, RawToken{});
    std::vector<Value> out;
    std::set<std::string> seen_str;
    std::set<double> seen_num;
    size_t ti = 0;
    while (f.tables[ti] != bc.table) ++ti;
    for (size_t r : f.rows[ti]) {
      Value v = cell_value(*bc.data, r);
      if (v.type == ColumnType::String) {
        if (seen_str.insert(v.str).second) out.push_back(v);
      } else {
        if (seen_num.insert(v.num).second) out.push_back(v);
      }
    }
    return out;
  }

  long long cardinality(const QueryAst& ast) const {
    Filtered f = filter_tables(ast);
    for (const auto& rows : f.rows)
      if (rows.empty()) return 0;

    if (ast.group.empty()) {
      long long product = 1;
      for (const auto& rows : f.rows) {
        product *= static_cast<long long>(rows.size());
        if (product > kCardinalityCap) fail("cross product overflow while counting rows");
      }
      return product;
    }
    return grouped_cardinality(ast, f);
  }

  double cost(const QueryAst& ast) const {
    double c = 0.0;
    for (const auto& tname : ast.tables) c += static_cast<double>(db_.table(tname).row_count);
    Filtered f = filter_tables(ast);
    double inter = 1.0;
    for (size_t ti = 0; ti < f.rows.size(); ++ti) {
      inter *= static_cast<double>(f.rows[ti].size());
      if (ti >= 1) c += inter;
    }
    if (!ast.group.empty()) c += inter;
    for (const auto& pred : ast.where)
      if (pred.op == "IN") c += cost(*pred.subquery);
    return c;
  }

 private:
  const Database& db_;

  struct GroupStats {
    long long count = 0;
    std::map<std::string, double> sum;                 // per aggregated column
    std::map<std::string, double> min_num, max_num;
    std::map<std::string, std::string> min_str, max_str;
  };

  long long grouped_cardinality(const QueryAst& ast, const Filtered& f) const {
    // columns each table must group on / aggregate over
    std::vector<std::vector<std::string>> group_cols(f.tables.size());
    for (const auto& g : ast.group) {
      BoundColumn bc = resolve(ast, g, RawToken{});
      size_t ti = 0;
      while (f.tables[ti] != bc.table) ++ti;
      group_cols[ti].push_back(g);
    }
    std::vector<std::vector<std::string>> agg_cols(f.tables.size());
    for (const auto& h : ast.having) {
      if (h.agg.empty()) continue;
      BoundColumn bc = resolve(ast, h.column, h.value);
      size_t ti = 0;
      while (f.tables[ti] != bc.table) ++ti;
      agg_cols[ti].push_back(h.column);
    }

    // per table: group key -> stats
    std::vector<std::map<std::string, GroupStats>> table_groups(f.tables.size());
    for (size_t ti = 0; ti < f.tables.size(); ++ti) {
      const TableData& t = db_.table(f.tables[ti]);
      for (size_t r : f.rows[ti]) {
        std::string key;
        for (const auto& gc : group_cols[ti]) {
          Value v = cell_value(t.columns.at(gc), r);
          key += v.type == ColumnType::String ? ("s:" + v.str) : ("n:" + std::to_string(v.num));
          key += '\x1f';
        }
        GroupStats& gs = table_groups[ti][key];
        gs.count += 1;
        for (const auto& ac : agg_cols[ti]) {
          Value v = cell_value(t.columns.at(ac), r);
          if (v.type == ColumnType::String) {
            auto [it_min, new_min] = gs.min_str.try_emplace(ac, v.str);
            if (!new_min && v.str < it_min->second) it_min->second = v.str;
            auto [it_max, new_max] = gs.max_str.try_emplace(ac, v.str);
            if (!new_max && v.str > it_max->second) it_max->second = v.str;
          } else {
            gs.sum[ac] += v.num;
            auto [it_min, new_min] = gs.min_num.try_emplace(ac, v.num);
            if (!new_min && v.num < it_min->second) it_min->second = v.num;
            auto [it_max, new_max] = gs.max_num.try_emplace(ac, v.num);
            if (!new_max && v.num > it_max->second) it_max->second = v.num;
          }
        }
      }
    }

    long long combos = 1;
    for (const auto& tg : table_groups) {
      combos *= static_cast<long long>(tg.size());
      if (combos > 20000000LL) fail("group combination overflow");
    }

    // enumerate cross combinations of per-table groups
    std::vector<std::vector<const GroupStats*>> stats_list(f.tables.size());
    for (size_t ti = 0; ti < f.tables.size(); ++ti)
      for (const auto& [key, gs] : table_groups[ti]) stats_list[ti].push_back(&gs);

    std::vector<size_t> idx(f.tables.size(), 0);
    long long passing = 0;
    while (true) {
      bool ok = true;
      for (const auto& h : ast.having) {
        if (!having_holds(ast, f, stats_list, idx, h)) {
          ok = false;
          break;
        }
      }
      if (ok) ++passing;

      size_t d = 0;
      while (d < idx.size()) {
        if (++idx[d] < stats_list[d].size()) break;
        idx[d] = 0;
        ++d;
      }
      if (d == idx.size()) break;
    }
    return passing;
  }

  bool having_holds(const QueryAst& ast, const Filtered& f,
                    const std::vector<std::vector<const GroupStats*>>& stats_list,
                    const std::vector<size_t>& idx, const HavingPred& h) const {
    // plain grouped column predicates need the actual key value; recompute
    // from any member row
    BoundColumn bc = resolve(ast, h.column, h.value);
    size_t ti = 0;
    while (f.tables[ti] != bc.table) ++ti;
    const GroupStats& gs = *stats_list[ti][idx[ti]];

    if (h.agg.empty()) fail("HAVING predicates must apply an aggregate function");

    long long total_count = 1;
    for (size_t k = 0; k < idx.size(); ++k) total_count *= stats_list[k][idx[k]]->count;

    Value result;
    result.type = ColumnType::Float;
    if (h.agg == "COUNT") {
      result.num = static_cast<double>(total_count);
    } else if (h.agg == "SUM" || h.agg == "AVG") {
      auto it = gs.sum.find(h.column);
      if (it == gs.sum.end())
        fail("aggregate " + h.agg + " over non-numeric column '" + h.column + "'");
      if (h.agg == "SUM") {
        long long others = total_count / std::max<long long>(gs.count, 1);
        result.num = it->second * static_cast<double>(others);
      } else {
        result.num = it->second / static_cast<double>(gs.count);
      }
    } else {  // MIN / MAX
      auto itn = (h.agg == "MIN" ? gs.min_num : gs.max_num).find(h.column);
      if (itn != (h.agg == "MIN" ? gs.min_num : gs.max_num).end()) {
        result.num = itn->second;
      } else {
        auto its = (h.agg == "MIN" ? gs.min_str : gs.max_str).find(h.column);
        if (its == (h.agg == "MIN" ? gs.min_str : gs.max_str).end())
          fail("aggregate " + h.agg + " has no tracked values for column '" + h.column + "'");
        result.type = ColumnType::String;
        result.str = its->second;
      }
    }
    return compare(result, h.op, constant_value(h.value), h.value);
  }
};

}  // namespace

Database Database::load(const Schema& schema, const std::string& dir) {
  Database db;
  db.schema_ = std::make_shared<Schema>(schema);
  for (const auto& tname : schema.tables()) {
    std::string path = dir + "/" + tname + ".csv";
    auto rows = parse_csv(read_text_file(path), path);
    if (rows.empty()) fail(path + ": missing header row");

    TableData t;
    t.name = tname;
    t.column_names = rows[0];

    std::set<std::string> expected;
    for (int ci : schema.columns_of(tname)) expected.insert(schema.column(ci).name);
    std::set<std::string> got(t.column_names.begin(), t.column_names.end());
    if (expected != got) {
      fail(path + ": header columns do not match the schema for table '" + tname + "'");
    }

    for (const auto& cname : t.column_names) {
      ColumnType type = ColumnType::String;
      for (int ci : schema.columns_of(tname))
        if (schema.column(ci).name == cname) type = schema.column(ci).type;
      ColumnData cd;
      cd.type = type;
      t.columns.emplace(cname, std::move(cd));
    }

    for (size_t ri = 1; ri < rows.size(); ++ri) {
      if (rows[ri].size() != t.column_names.size())
        fail(path + ": row " + std::to_string(ri + 1) + " has " +
             std::to_string(rows[ri].size()) + " cells, expected " +
             std::to_string(t.column_names.size()));
      for (size_t ci = 0; ci < t.column_names.size(); ++ci) {
        ColumnData& cd = t.columns.at(t.column_names[ci]);
        const std::string& cell = rows[ri][ci];
        try {
          switch (cd.type) {
            case ColumnType::Int: {
              size_t used = 0;
              long long v = std::stoll(cell, &used);
              if (used != cell.size()) throw std::invalid_argument(cell);
              cd.ints.push_back(v);
              break;
            }
            case ColumnType::Float: {
              size_t used = 0;
              double v = std::stod(cell, &used);
              if (used != cell.size()) throw std::invalid_argument(cell);
              cd.floats.push_back(v);
              break;
            }
            case ColumnType::String: cd.strings.push_back(cell); break;
          }
        } catch (const std::invalid_argument&) {
          fail(path + ": row " + std::to_string(ri + 1) + ", column '" + t.column_names[ci] +
               "': cannot parse '" + cell + "'");
        } catch (const std::out_of_range&) {
          fail(path + ": row " + std::to_string(ri + 1) + ", column '" + t.column_names[ci] +
               "': value out of range '" + cell + "'");
        }
      }
    }
    t.row_count = rows.size() - 1;
    db.tables_.emplace(tname, std::move(t));
  }
  return db;
}

const TableData& Database::table(const std::string& name) const {
  auto it = tables_.find(name);
  if (it == tables_.end()) fail("unknown table '" + name + "'");
  return it->second;
}

long long execute_cardinality(const Database& db, const std::string& executable_sql) {
  QueryAst ast = ast_from_executable(executable_sql);
  return Evaluator(db).cardinality(ast);
}

double estimate_cost(const Database& db, const std::string& executable_sql) {
  QueryAst ast = ast_from_executable(executable_sql);
  return Evaluator(db).cost(ast);
}

FeatureVector featurize(const Database& db, const BucketMap& map,
                        const std::string& canonical_bucketized, Rng& rng) {
  FeatureVector fv;
  auto canon_tokens = raw_tokenize(canonical_bucketized);
  fv.length = static_cast<int>(canon_tokens.size());

  QueryAst ast = AstBuilder(canon_tokens).build();
  fv.join_count = static_cast<int>(ast.tables.size()) - 1;
  for (const auto& s : ast.select)
    if (!s.agg.empty()) fv.aggregate_counts[s.agg] += 1;
  for (const auto& h : ast.having) {
    if (!h.agg.empty()) fv.aggregate_counts[h.agg] += 1;
    fv.operator_counts[h.op] += 1;
  }
  std::vector<const QueryAst*> stack{&ast};
  while (!stack.empty()) {
    const QueryAst* q = stack.back();
    stack.pop_back();
    for (const auto& p : q->where) {
      if (p.op == "IN") {
        fv.nested = true;
        stack.push_back(p.subquery.get());
      } else {
        fv.operator_counts[p.op] += 1;
      }
    }
  }

  std::string executable = debucketize(canonical_bucketized, map, rng);
  fv.cardinality = execute_cardinality(db, executable);
  fv.cost = estimate_cost(db, executable);
  return fv;
}

}  // namespace qgen
