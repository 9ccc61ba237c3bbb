#include "qgen/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace qgen {

namespace {

const std::set<std::string>& supported_keywords() {
  static const std::set<std::string> kw = {"SELECT", "FROM", "WHERE", "GROUP",  "BY", "HAVING",
                                           "AND",    "IN",   "COUNT", "SUM",    "AVG", "MIN",
                                           "MAX"};
  return kw;
}

const std::set<std::string>& unsupported_keywords() {
  static const std::set<std::string> kw = {"ORDER", "LIMIT",    "OFFSET", "UNION", "JOIN",
                                           "ON",    "DISTINCT", "OR",     "NOT",   "BETWEEN",
                                           "LIKE",  "AS"};
  return kw;
}

[[noreturn]] void tok_fail(int line, int col, const std::string& msg) {
  std::ostringstream ss;
  ss << "query error at line " << line << ", column " << col << ": " << msg;
  fail(ss.str());
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

std::vector<RawToken> raw_tokenize(const std::string& sql) {
  std::vector<RawToken> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto step = [&](size_t n) {
    for (size_t k = 0; k < n; ++k) {
      if (sql[i + k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    i += n;
  };

  while (i < sql.size()) {
    char c = sql[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      step(1);
      continue;
    }
    int tline = line, tcol = col;
    if (c == '(' || c == ')' || c == ',' || c == '*') {
      out.push_back({RawToken::Punct, std::string(1, c), tline, tcol});
      step(1);
      continue;
    }
    if (c == '<' || c == '>' || c == '=' || c == '!') {
      size_t len = (i + 1 < sql.size() && sql[i + 1] == '=') ? 2 : 1;
      std::string op = sql.substr(i, len);
      if (op == "!") tok_fail(tline, tcol, "stray '!' (did you mean '!=')");
      out.push_back({RawToken::Punct, op, tline, tcol});
      step(len);
      continue;
    }
    if (c == '\'') {
      std::string value;
      size_t j = i + 1;
      bool closed = false;
      while (j < sql.size()) {
        if (sql[j] == '\'') {
          if (j + 1 < sql.size() && sql[j + 1] == '\'') {
            value += '\'';
            j += 2;
            continue;
          }
          closed = true;
          break;
        }
        value += sql[j++];
      }
      if (!closed) tok_fail(tline, tcol, "unterminated string literal");
      out.push_back({RawToken::String, value, tline, tcol});
      step(j + 1 - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && i + 1 < sql.size() && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
      size_t j = i + (c == '-' ? 1 : 0);
      bool seen_dot = false, seen_exp = false;
      while (j < sql.size()) {
        char d = sql[j];
        if (std::isdigit(static_cast<unsigned char>(d))) {
          ++j;
        } else if (d == '.' && !seen_dot && !seen_exp) {
          seen_dot = true;
          ++j;
        } else if ((d == 'e' || d == 'E') && !seen_exp && j + 1 < sql.size() &&
                   (std::isdigit(static_cast<unsigned char>(sql[j + 1])) || sql[j + 1] == '-' ||
                    sql[j + 1] == '+')) {
          seen_exp = true;
          j += 2;
        } else {
          break;
        }
      }
      out.push_back({RawToken::Number, sql.substr(i, j - i), tline, tcol});
      step(j - i);
      continue;
    }
    if (ident_start(c)) {
      size_t j = i;
      while (j < sql.size() && ident_char(sql[j])) ++j;
      std::string word = sql.substr(i, j - i);
      std::string up = upper_ascii(word);
      if (supported_keywords().count(up))
        out.push_back({RawToken::Keyword, up, tline, tcol});
      else if (unsupported_keywords().count(up))
        tok_fail(tline, tcol, "unsupported clause or operator '" + up + "'");
      else
        out.push_back({RawToken::Ident, word, tline, tcol});
      step(j - i);
      continue;
    }
    tok_fail(tline, tcol, std::string("unexpected character '") + c + "'");
  }
  return out;
}

std::string quote_sql_string(const std::string& value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'')
      out += "''";
    else
      out += c;
  }
  out += "'";
  return out;
}

std::string render_raw(const std::vector<RawToken>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].kind == RawToken::String ? quote_sql_string(tokens[i].text) : tokens[i].text;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clause reordering
// ---------------------------------------------------------------------------

namespace {

using Tokens = std::vector<RawToken>;

size_t matching_paren(const Tokens& t, size_t open) {
  int depth = 0;
  for (size_t i = open; i < t.size(); ++i) {
    if (t[i].kind == RawToken::Punct && t[i].text == "(") ++depth;
    if (t[i].kind == RawToken::Punct && t[i].text == ")") {
      if (--depth == 0) return i;
    }
  }
  tok_fail(t[open].line, t[open].col, "unbalanced parenthesis");
}

bool is_kw(const RawToken& t, const char* kw) {
  return t.kind == RawToken::Keyword && t.text == kw;
}

struct ClauseSpan {
  size_t begin = 0, end = 0;  // token range, keyword excluded
  bool present = false;
};

struct Clauses {
  ClauseSpan select, from, where, group, having;
};

// Finds the top-level clause layout of tokens[b, e). `raw_order` selects the
// executable SELECT-first layout; otherwise the canonical FROM-first one.
Clauses split_clauses(const Tokens& t, size_t b, size_t e, bool raw_order) {
  struct Mark {
    const char* kw;
    size_t pos;
  };
  std::vector<Mark> marks;
  int depth = 0;
  for (size_t i = b; i < e; ++i) {
    if (t[i].kind == RawToken::Punct && t[i].text == "(") ++depth;
    else if (t[i].kind == RawToken::Punct && t[i].text == ")") --depth;
    if (depth != 0 || t[i].kind != RawToken::Keyword) continue;
    const std::string& k = t[i].text;
    if (k == "SELECT" || k == "FROM" || k == "WHERE" || k == "GROUP" || k == "HAVING")
      marks.push_back({k == "SELECT"  ? "SELECT"
                       : k == "FROM"  ? "FROM"
                       : k == "WHERE" ? "WHERE"
                       : k == "GROUP" ? "GROUP"
                                      : "HAVING",
                       i});
  }
  if (marks.empty()) tok_fail(t[b].line, t[b].col, "expected a query clause");

  static const std::vector<std::string> raw_seq = {"SELECT", "FROM", "WHERE", "GROUP", "HAVING"};
  static const std::vector<std::string> canon_seq = {"FROM", "SELECT", "WHERE", "HAVING", "GROUP"};
  const auto& seq = raw_order ? raw_seq : canon_seq;

  size_t seq_pos = 0;
  for (const auto& m : marks) {
    while (seq_pos < seq.size() && seq[seq_pos] != m.kw) ++seq_pos;
    if (seq_pos == seq.size())
      tok_fail(t[m.pos].line, t[m.pos].col,
               "misplaced or duplicate clause '" + std::string(m.kw) + "'");
    ++seq_pos;
  }
  if (marks[0].kw != seq[0] || marks[0].pos != b)
    tok_fail(t[b].line, t[b].col, "query must start with " + seq[0]);

  Clauses c;
  for (size_t mi = 0; mi < marks.size(); ++mi) {
    size_t body_begin = marks[mi].pos + 1;
    size_t body_end = mi + 1 < marks.size() ? marks[mi + 1].pos : e;
    ClauseSpan span{body_begin, body_end, true};
    std::string kw = marks[mi].kw;
    if (kw == "GROUP") {
      if (body_begin >= body_end || !is_kw(t[body_begin], "BY"))
        tok_fail(t[marks[mi].pos].line, t[marks[mi].pos].col, "GROUP must be followed by BY");
      span.begin += 1;
    }
    if (span.begin >= span.end)
      tok_fail(t[marks[mi].pos].line, t[marks[mi].pos].col, "empty " + kw + " clause");
    if (kw == "SELECT") c.select = span;
    else if (kw == "FROM") c.from = span;
    else if (kw == "WHERE") c.where = span;
    else if (kw == "GROUP") c.group = span;
    else c.having = span;
  }
  if (!c.select.present) tok_fail(t[b].line, t[b].col, "missing SELECT clause");
  if (!c.from.present) tok_fail(t[b].line, t[b].col, "missing FROM clause");
  return c;
}

void append_range(Tokens& out, const Tokens& t, size_t b, size_t e) {
  out.insert(out.end(), t.begin() + static_cast<long>(b), t.begin() + static_cast<long>(e));
}

RawToken make_kw(const char* kw) { return {RawToken::Keyword, kw, 0, 0}; }

Tokens reorder_block(const Tokens& t, size_t b, size_t e, bool to_canonical);

// Copies a WHERE-clause body, recursing into IN ( ... ) subquery blocks.
void append_where(Tokens& out, const Tokens& t, size_t b, size_t e, bool to_canonical) {
  size_t i = b;
  while (i < e) {
    if (is_kw(t[i], "IN")) {
      if (i + 1 >= e || t[i + 1].text != "(")
        tok_fail(t[i].line, t[i].col, "IN must be followed by a parenthesized subquery");
      size_t close = matching_paren(t, i + 1);
      out.push_back(t[i]);
      out.push_back(t[i + 1]);
      Tokens inner = reorder_block(t, i + 2, close, to_canonical);
      out.insert(out.end(), inner.begin(), inner.end());
      out.push_back(t[close]);
      i = close + 1;
      continue;
    }
    out.push_back(t[i]);
    ++i;
  }
}

Tokens reorder_block(const Tokens& t, size_t b, size_t e, bool to_canonical) {
  if (b >= e) fail("query error: empty query block");
  Clauses c = split_clauses(t, b, e, /*raw_order=*/to_canonical);
  Tokens out;
  auto emit = [&](const char* kw, const ClauseSpan& span, bool recurse_subqueries) {
    if (!span.present) return;
    if (std::string(kw) == "GROUP") {
      out.push_back(make_kw("GROUP"));
      out.push_back(make_kw("BY"));
    } else {
      out.push_back(make_kw(kw));
    }
    if (recurse_subqueries)
      append_where(out, t, span.begin, span.end, to_canonical);
    else
      append_range(out, t, span.begin, span.end);
  };

  if (to_canonical) {
    emit("FROM", c.from, false);
    emit("SELECT", c.select, false);
    emit("WHERE", c.where, true);
    emit("HAVING", c.having, false);
    emit("GROUP", c.group, false);
  } else {
    emit("SELECT", c.select, false);
    emit("FROM", c.from, false);
    emit("WHERE", c.where, true);
    emit("GROUP", c.group, false);
    emit("HAVING", c.having, false);
  }
  return out;
}

}  // namespace

std::string restructure(const std::string& raw_sql) {
  Tokens t = raw_tokenize(raw_sql);
  if (t.empty()) fail("query error: empty query");
  return render_raw(reorder_block(t, 0, t.size(), /*to_canonical=*/true));
}

std::string revert_structure(const std::string& canonical_sql) {
  Tokens t = raw_tokenize(canonical_sql);
  if (t.empty()) fail("query error: empty query");
  return render_raw(reorder_block(t, 0, t.size(), /*to_canonical=*/false));
}

// ---------------------------------------------------------------------------
// Bucket map
// ---------------------------------------------------------------------------

namespace {

struct ParsedNumber {
  double value;
  std::string text;
};

double parse_numeric_constant(const RawToken& tok, ColumnType type, const std::string& column) {
  if (tok.kind != RawToken::Number)
    tok_fail(tok.line, tok.col,
             "value " + (tok.kind == RawToken::String ? quote_sql_string(tok.text) : tok.text) +
                 " fails type parse for " + column_type_name(type) + " column '" + column + "'");
  if (type == ColumnType::Int) {
    try {
      size_t used = 0;
      (void)std::stoll(tok.text, &used);
      if (used != tok.text.size()) throw std::invalid_argument(tok.text);
    } catch (const std::exception&) {
      tok_fail(tok.line, tok.col,
               "value " + tok.text + " fails type parse for int column '" + column + "'");
    }
  }
  try {
    return std::stod(tok.text);
  } catch (const std::exception&) {
    tok_fail(tok.line, tok.col,
             "value " + tok.text + " fails type parse for column '" + column + "'");
  }
}

// (column index in schema-bare-name space, constant token) pairs
struct ConstantRef {
  std::string column;
  RawToken token;
};

std::vector<ConstantRef> collect_constants(const Tokens& t, const Schema& schema) {
  std::vector<ConstantRef> out;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i].kind != RawToken::Number && t[i].kind != RawToken::String) continue;
    // nearest preceding identifier names the predicate column
    std::string column;
    for (size_t j = i; j-- > 0;) {
      if (t[j].kind == RawToken::Ident) {
        column = t[j].text;
        break;
      }
    }
    if (column.empty())
      tok_fail(t[i].line, t[i].col, "constant has no preceding column reference");
    if (schema.owners_of(column).empty())
      tok_fail(t[i].line, t[i].col, "constant references unknown column '" + column + "'");
    out.push_back({column, t[i]});
  }
  return out;
}

std::string bucket_key_name(const std::string& column, size_t idx) {
  return "K_" + column + "_" + std::to_string(idx);
}

}  // namespace

BucketMap BucketMap::build(const std::vector<std::string>& raw_workload, const Schema& schema,
                           int bucket_count) {
  if (bucket_count < 1) fail("bucket_count must be at least 1");
  BucketMap map;
  map.bucket_count_ = bucket_count;
  {
    std::string all;
    for (const auto& q : raw_workload) {
      all += q;
      all += '\n';
    }
    map.source_digest_ = fnv1a64(all);
  }

  // observed constants per bare column name
  std::map<std::string, std::vector<RawToken>> observed;
  for (const auto& q : raw_workload) {
    Tokens t = raw_tokenize(q);
    for (auto& ref : collect_constants(t, schema)) observed[ref.column].push_back(ref.token);
  }

  // column order follows the schema
  std::set<std::string> handled;
  for (const auto& sc : schema.columns()) {
    if (handled.count(sc.name)) continue;
    auto it = observed.find(sc.name);
    if (it == observed.end()) continue;
    handled.insert(sc.name);

    ColumnBuckets cb;
    cb.column = sc.name;
    cb.table = sc.table;
    cb.type = sc.type;

    if (is_numeric(sc.type)) {
      // dedupe by numeric value, keep first-seen rendering
      std::map<double, std::string> values;
      for (const auto& tok : it->second) {
        double v = parse_numeric_constant(tok, sc.type, sc.name);
        values.emplace(v, tok.text);
      }
      std::vector<ParsedNumber> sorted;
      for (auto& [v, text] : values) sorted.push_back({v, text});
      size_t n = sorted.size();
      size_t k = std::min<size_t>(static_cast<size_t>(bucket_count), n);
      // equi-depth split: chunk sizes differ by at most one
      size_t base = n / k, extra = n % k;
      size_t pos = 0;
      for (size_t bi = 0; bi < k; ++bi) {
        size_t len = base + (bi < extra ? 1 : 0);
        Bucket b;
        b.key = bucket_key_name(sc.name, bi);
        for (size_t j = 0; j < len; ++j) b.values.push_back(sorted[pos + j].text);
        b.lo = sorted[pos].value;
        b.hi = sorted[pos + len - 1].value;
        pos += len;
        cb.buckets.push_back(std::move(b));
      }
    } else {
      // frequency-ordered distinct strings
      std::map<std::string, int> freq;
      for (const auto& tok : it->second) {
        if (tok.kind != RawToken::String)
          tok_fail(tok.line, tok.col,
                   "value " + tok.text + " fails type parse for string column '" + sc.name + "'");
        freq[tok.text] += 1;
      }
      std::vector<std::pair<std::string, int>> ordered(freq.begin(), freq.end());
      std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
      });
      size_t n = ordered.size();
      if (n <= static_cast<size_t>(bucket_count)) {
        for (size_t bi = 0; bi < n; ++bi) {
          Bucket b;
          b.key = bucket_key_name(sc.name, bi);
          b.values.push_back(ordered[bi].first);
          cb.buckets.push_back(std::move(b));
        }
      } else {
        size_t singles = static_cast<size_t>(bucket_count) - 1;
        for (size_t bi = 0; bi < singles; ++bi) {
          Bucket b;
          b.key = bucket_key_name(sc.name, bi);
          b.values.push_back(ordered[bi].first);
          cb.buckets.push_back(std::move(b));
        }
        Bucket pool;
        pool.key = bucket_key_name(sc.name, singles);
        pool.pooled = true;
        std::vector<std::string> rest;
        for (size_t bi = singles; bi < n; ++bi) rest.push_back(ordered[bi].first);
        std::sort(rest.begin(), rest.end());
        pool.values = std::move(rest);
        cb.buckets.push_back(std::move(pool));
      }
    }
    map.columns_.push_back(std::move(cb));
  }
  return map;
}

const ColumnBuckets* BucketMap::find_column(const std::string& column_name) const {
  for (const auto& cb : columns_)
    if (cb.column == column_name) return &cb;
  return nullptr;
}

std::pair<const ColumnBuckets*, const Bucket*> BucketMap::find_key(const std::string& key) const {
  for (const auto& cb : columns_)
    for (const auto& b : cb.buckets)
      if (b.key == key) return {&cb, &b};
  return {nullptr, nullptr};
}

std::string BucketMap::key_for(const std::string& column_name, const RawToken& constant,
                               PreprocessStats* stats) const {
  const ColumnBuckets* cb = find_column(column_name);
  if (!cb)
    tok_fail(constant.line, constant.col,
             "no buckets were built for column '" + column_name + "'");

  if (is_numeric(cb->type)) {
    double v = parse_numeric_constant(constant, cb->type, column_name);
    const Bucket* nearest = nullptr;
    double nearest_dist = 0.0;
    for (const auto& b : cb->buckets) {
      if (v >= b.lo && v <= b.hi) return b.key;
      double d = v < b.lo ? b.lo - v : v - b.hi;
      if (!nearest || d < nearest_dist) {
        nearest = &b;
        nearest_dist = d;
      }
    }
    if (stats) stats->out_of_range += 1;
    log_debug("constant " + constant.text + " is outside all buckets of '" + column_name +
              "', using nearest key " + nearest->key);
    return nearest->key;
  }

  if (constant.kind != RawToken::String)
    tok_fail(constant.line, constant.col,
             "value " + constant.text + " fails type parse for string column '" + column_name +
                 "'");
  for (const auto& b : cb->buckets)
    for (const auto& v : b.values)
      if (v == constant.text) return b.key;
  if (stats) stats->out_of_range += 1;
  for (const auto& b : cb->buckets)
    if (b.pooled) return b.key;
  return cb->buckets.front().key;
}

std::string BucketMap::sample_value(const std::string& key, Rng& rng) const {
  auto [cb, bucket] = find_key(key);
  if (!bucket) fail("unknown bucket key '" + key + "'");
  const std::string& v = bucket->values[rng.uniform_index(bucket->values.size())];
  return cb->type == ColumnType::String ? quote_sql_string(v) : v;
}

std::string BucketMap::render() const {
  std::ostringstream ss;
  ss << "# bucket map\n";
  ss << "version 1\n";
  ss << "bucket_count " << bucket_count_ << "\n";
  ss << "source_digest " << to_hex(source_digest_) << "\n";
  for (const auto& cb : columns_) {
    ss << "column " << cb.column << " " << column_type_name(cb.type) << " " << cb.table << " "
       << cb.buckets.size() << "\n";
    for (const auto& b : cb.buckets) {
      ss << "bucket " << b.key << (b.pooled ? " pooled" : " plain");
      for (const auto& v : b.values)
        ss << " " << (cb.type == ColumnType::String ? quote_sql_string(v) : v);
      ss << "\n";
    }
  }
  return ss.str();
}

void BucketMap::save(const std::string& path) const { write_text_file(path, render()); }

BucketMap BucketMap::load(const std::string& path) {
  std::string text = read_text_file(path);
  BucketMap map;
  map.columns_.clear();
  ColumnBuckets* current = nullptr;
  bool version_seen = false;

  auto lines = split_on(text, '\n');
  for (size_t li = 0; li < lines.size(); ++li) {
    std::string line = trim(lines[li]);
    if (line.empty() || line[0] == '#') continue;
    std::string err_at = "bucket map " + path + " line " + std::to_string(li + 1) + ": ";

    if (starts_with(line, "version ")) {
      std::string v = trim(line.substr(8));
      if (v != "1") fail(err_at + "unsupported version " + v);
      version_seen = true;
      continue;
    }
    if (starts_with(line, "bucket_count ")) {
      map.bucket_count_ = std::stoi(trim(line.substr(13)));
      continue;
    }
    if (starts_with(line, "source_digest ")) {
      std::string hex = trim(line.substr(14));
      map.source_digest_ = std::stoull(hex, nullptr, 16);
      continue;
    }
    if (starts_with(line, "column ")) {
      auto parts = split_ws(line);
      if (parts.size() != 5) fail(err_at + "malformed column header");
      ColumnBuckets cb;
      cb.column = parts[1];
      cb.type = parse_column_type(parts[2]);
      cb.table = parts[3];
      map.columns_.push_back(std::move(cb));
      current = &map.columns_.back();
      continue;
    }
    if (starts_with(line, "bucket ")) {
      if (!current) fail(err_at + "bucket before any column header");
      // parse: bucket <key> <pooled|plain> values...
      Bucket b;
      size_t pos = 7;
      auto next_word = [&]() -> std::string {
        while (pos < line.size() && line[pos] == ' ') ++pos;
        size_t start = pos;
        while (pos < line.size() && line[pos] != ' ') ++pos;
        return line.substr(start, pos - start);
      };
      b.key = next_word();
      std::string mode = next_word();
      if (mode != "pooled" && mode != "plain") fail(err_at + "malformed bucket mode");
      b.pooled = mode == "pooled";
      while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ') ++pos;
        if (pos >= line.size()) break;
        if (line[pos] == '\'') {
          std::string value;
          ++pos;
          bool closed = false;
          while (pos < line.size()) {
            if (line[pos] == '\'') {
              if (pos + 1 < line.size() && line[pos + 1] == '\'') {
                value += '\'';
                pos += 2;
                continue;
              }
              ++pos;
              closed = true;
              break;
            }
            value += line[pos++];
          }
          if (!closed) fail(err_at + "unterminated string value");
          b.values.push_back(value);
        } else {
          b.values.push_back(next_word());
        }
      }
      if (b.values.empty()) fail(err_at + "bucket with no values");
      if (is_numeric(current->type)) {
        b.lo = std::stod(b.values.front());
        b.hi = std::stod(b.values.back());
      }
      current->buckets.push_back(std::move(b));
      continue;
    }
    fail(err_at + "unrecognized line '" + line + "'");
  }
  if (!version_seen) fail("bucket map " + path + " is missing its version line");
  return map;
}

std::string bucketize(const std::string& canonical_sql, const BucketMap& map, const Schema& schema,
                      PreprocessStats* stats) {
  Tokens t = raw_tokenize(canonical_sql);
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i].kind != RawToken::Number && t[i].kind != RawToken::String) continue;
    std::string column;
    for (size_t j = i; j-- > 0;) {
      if (t[j].kind == RawToken::Ident) {
        column = t[j].text;
        break;
      }
    }
    if (column.empty())
      tok_fail(t[i].line, t[i].col, "constant has no preceding column reference");
    if (schema.owners_of(column).empty())
      tok_fail(t[i].line, t[i].col, "constant references unknown column '" + column + "'");
    std::string key = map.key_for(column, t[i], stats);
    t[i] = {RawToken::Ident, key, t[i].line, t[i].col};
  }
  return render_raw(t);
}

std::string debucketize(const std::string& canonical_bucketized, const BucketMap& map, Rng& rng) {
  Tokens t = raw_tokenize(canonical_bucketized);
  std::vector<RawToken> replaced;
  replaced.reserve(t.size());
  for (const auto& tok : t) {
    if (tok.kind == RawToken::Ident && starts_with(tok.text, "K_")) {
      auto [cb, bucket] = map.find_key(tok.text);
      if (!bucket) tok_fail(tok.line, tok.col, "unknown bucket key '" + tok.text + "'");
      const std::string& v = bucket->values[rng.uniform_index(bucket->values.size())];
      RawToken r;
      r.kind = cb->type == ColumnType::String ? RawToken::String : RawToken::Number;
      r.text = v;
      r.line = tok.line;
      r.col = tok.col;
      replaced.push_back(r);
      continue;
    }
    replaced.push_back(tok);
  }
  return revert_structure(render_raw(replaced));
}

std::vector<std::string> read_workload_file(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> out;
  for (auto& line : split_on(text, '\n')) {
    std::string q = trim(line);
    if (q.empty() || starts_with(q, "--")) continue;
    out.push_back(q);
  }
  return out;
}

void write_workload_file(const std::string& path, const std::vector<std::string>& queries,
                         const std::vector<std::string>& header_comments) {
  std::ostringstream ss;
  for (const auto& c : header_comments) ss << "-- " << c << "\n";
  for (const auto& q : queries) ss << q << "\n";
  write_text_file(path, ss.str());
}

}  // namespace qgen
