#include "qgen/semantics.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "qgen/oracle.hpp"
#include "test_support.hpp"

using namespace qgen;

namespace {

Grammar load_dialect() {
  return Grammar::from_spec(read_text_file(qgen::test::repo_path("grammars/sql.grammar")), true);
}

Schema fixture_schema() {
  return Schema::from_text(
      "movies.id:int\n"
      "movies.year:int\n"
      "movies.rating:float\n"
      "people.name:string\n"
      "people.age:int\n"
      "roles.movie_id:int\n"
      "roles.pay:float\n");
}

BucketMap fixture_buckets(const Schema& schema) {
  std::vector<std::string> wl;
  for (int i = 1; i <= 12; ++i)
    wl.push_back("SELECT * FROM movies WHERE id = " + std::to_string(i));
  for (int y = 1990; y <= 1997; ++y)
    wl.push_back("SELECT * FROM movies WHERE year = " + std::to_string(y));
  for (const char* r : {"0.5", "1.5", "2.5", "3.5", "4.5", "5.0"})
    wl.push_back(std::string("SELECT * FROM movies WHERE rating > ") + r);
  for (const char* n : {"'alice'", "'bob'", "'carol'"})
    wl.push_back(std::string("SELECT * FROM people WHERE name = ") + n);
  for (int a : {20, 25, 30, 35})
    wl.push_back("SELECT * FROM people WHERE age < " + std::to_string(a));
  return BucketMap::build(wl, schema, 4);
}

struct Fixture {
  Schema schema = fixture_schema();
  BucketMap buckets = fixture_buckets(schema);
  BoundGrammar bound = BoundGrammar::bind(load_dialect(), schema, &buckets);
};

bool body_has(const BoundGrammar& bg, int pid, const std::string& name, SymbolKind kind) {
  int sym = bg.grammar().find_symbol(name, kind);
  if (sym < 0) return false;
  const auto& body = bg.grammar().production(pid).body;
  return std::find(body.begin(), body.end(), sym) != body.end();
}

bool body_has_kw(const BoundGrammar& bg, int pid, const std::string& kw) {
  return body_has(bg, pid, kw, SymbolKind::Terminal);
}

bool body_has_nt(const BoundGrammar& bg, int pid, const std::string& nt) {
  return body_has(bg, pid, nt, SymbolKind::Nonterminal);
}

std::string head_name(const BoundGrammar& bg, int pid) {
  return bg.grammar().symbol(bg.grammar().production(pid).head).name;
}

std::string expansion_name(const BoundGrammar& bg, const SemanticState& st) {
  int s = st.expansion_symbol();
  return s < 0 ? std::string() : bg.grammar().symbol(s).name;
}

std::vector<int> allowed_ids(const SemanticState& st) {
  std::vector<int> out;
  const Bitset& a = st.allowed();
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.test(i)) out.push_back(static_cast<int>(i));
  }
  return out;
}

int pick(const SemanticState& st, const std::function<bool(int)>& pred) {
  for (int id : allowed_ids(st)) {
    if (pred(id)) return id;
  }
  return -1;
}

void apply_pick(SemanticState& st, const std::function<bool(int)>& pred) {
  int id = pick(st, pred);
  REQUIRE(id >= 0);
  st.apply(id);
}

void apply_table(const BoundGrammar& bg, SemanticState& st, const std::string& table) {
  apply_pick(st, [&](int p) {
    const std::string* t = bg.table_of(p);
    return t && *t == table;
  });
}

void apply_column(const BoundGrammar& bg, SemanticState& st, const std::string& column) {
  apply_pick(st, [&](int p) {
    const std::string* c = bg.column_of(p);
    return c && *c == column;
  });
}

std::set<std::string> allowed_columns(const BoundGrammar& bg, const SemanticState& st) {
  std::set<std::string> out;
  for (int id : allowed_ids(st)) {
    if (const std::string* c = bg.column_of(id)) out.insert(*c);
  }
  return out;
}

std::set<std::string> allowed_tables(const BoundGrammar& bg, const SemanticState& st) {
  std::set<std::string> out;
  for (int id : allowed_ids(st)) {
    if (const std::string* t = bg.table_of(id)) out.insert(*t);
  }
  return out;
}

std::set<std::string> allowed_ops(const BoundGrammar& bg, const SemanticState& st) {
  std::set<std::string> out;
  for (int id : allowed_ids(st)) {
    if (const std::string* o = bg.comparison_of(id)) out.insert(*o);
  }
  return out;
}

// start a query: skeleton picked by clause keywords, FROM list as given
void start_query(const BoundGrammar& bg, SemanticState& st, bool where, bool having, bool group,
                 const std::vector<std::string>& tables) {
  apply_pick(st, [&](int p) {
    return head_name(bg, p) == "Start" && body_has_kw(bg, p, "WHERE") == where &&
           body_has_kw(bg, p, "HAVING") == having && body_has_kw(bg, p, "GROUP") == group;
  });
  for (size_t i = 0; i < tables.size(); ++i) {
    bool last = i + 1 == tables.size();
    apply_pick(st, [&](int p) {
      return head_name(bg, p) == "TableRefs" && body_has_nt(bg, p, "TableRefs") != last;
    });
    apply_table(bg, st, tables[i]);
  }
}

std::string generate_random(const BoundGrammar& bg, RuleToggles toggles, Rng& rng,
                            int* relaxations = nullptr) {
  SemanticState st(bg, toggles);
  int guard = 0;
  while (!st.complete() && guard++ < kMaxDerivationSteps) {
    std::vector<int> ids = allowed_ids(st);
    REQUIRE(!ids.empty());
    st.apply(ids[rng.uniform_index(ids.size())]);
  }
  REQUIRE(st.complete());
  if (relaxations) *relaxations = st.relaxation_count();
  return st.rendered();
}

}  // namespace

TEST_CASE("binding appends one production per table, column and bucket key") {
  Fixture f;
  const Grammar& g = f.bound.grammar();

  int keys = 0;
  for (const ColumnBuckets& cb : f.buckets.columns()) keys += static_cast<int>(cb.buckets.size());
  CHECK(g.production_count() == 38 + 3 + 7 + keys);

  int tables = 0, columns = 0, key_values = 0, aggs = 0, ops = 0;
  for (const Production& p : g.productions()) {
    if (f.bound.table_of(p.id)) tables++;
    if (f.bound.column_of(p.id)) columns++;
    if (const auto* vb = f.bound.value_of(p.id)) {
      CHECK(vb->is_key);
      key_values++;
    }
    if (f.bound.aggregate_of(p.id)) aggs++;
    if (f.bound.comparison_of(p.id)) ops++;
  }
  CHECK(tables == 3);
  CHECK(columns == 7);
  CHECK(key_values == keys);
  CHECK(aggs == 5);
  CHECK(ops == 6);

  CHECK(f.bound.column_has_buckets("id"));
  CHECK(f.bound.column_has_buckets("name"));
  CHECK_FALSE(f.bound.column_has_buckets("pay"));
  CHECK_FALSE(f.bound.has_numeric_literal());
  CHECK_FALSE(f.bound.has_string_literal());

  BoundGrammar again = BoundGrammar::bind(load_dialect(), f.schema, &f.buckets);
  CHECK(again.grammar().digest() == g.digest());
}

TEST_CASE("binding validates static table and column terminals against the schema") {
  Grammar t1 = Grammar::from_spec(
      read_text_file(qgen::test::repo_path("grammars/table1.grammar")));

  Schema ok = Schema::from_text("TITLE.ID:int\n");
  BoundGrammar bound = BoundGrammar::bind(t1, ok, nullptr);
  CHECK(bound.has_numeric_literal());
  CHECK_FALSE(bound.has_string_literal());
  const BoundGrammar::ValueBinding* vb = bound.value_of(7);
  REQUIRE(vb != nullptr);
  CHECK_FALSE(vb->is_key);
  CHECK(is_numeric(vb->type));

  Schema wrong_table = Schema::from_text("FILMS.ID:int\n");
  CHECK_THROWS_WITH_AS(BoundGrammar::bind(t1, wrong_table, nullptr),
                       doctest::Contains("grammar table 'TITLE' is not in the schema"),
                       std::exception);

  Schema wrong_column = Schema::from_text("TITLE.KEY:int\n");
  CHECK_THROWS_WITH_AS(BoundGrammar::bind(t1, wrong_column, nullptr),
                       doctest::Contains("grammar column 'ID' is not in the schema"),
                       std::exception);
}

TEST_CASE("a fresh state carries an all-ones semantic mask") {
  Fixture f;
  SemanticState st(f.bound);
  CHECK(st.semantic_mask().count() == static_cast<size_t>(f.bound.grammar().production_count()));
  CHECK(expansion_name(f.bound, st) == "Start");
  CHECK(allowed_ids(st).size() == 6);
  CHECK(st.relaxation_count() == 0);
}

TEST_CASE("columns are limited to the tables joined in FROM") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, true, false, false, {"movies"});
  apply_pick(st, [&](int p) { return body_has_nt(f.bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "SelectItems"; });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItem" && !body_has_nt(f.bound, p, "Agg");
  });

  CHECK(expansion_name(f.bound, st) == "Column");
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"id", "year", "rating"});

  const Bitset& mask = st.semantic_mask();
  for (const Production& p : f.bound.grammar().productions()) {
    if (const std::string* c = f.bound.column_of(p.id)) {
      bool movies_col = *c == "id" || *c == "year" || *c == "rating";
      CHECK(mask.test(static_cast<size_t>(p.id)) == movies_col);
    }
  }
}

TEST_CASE("FROM lists never repeat a table and stop when tables run out") {
  Fixture f;
  SemanticState st(f.bound);
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "Start" && !body_has_kw(f.bound, p, "WHERE") &&
           !body_has_kw(f.bound, p, "GROUP");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "TableRefs" && body_has_nt(f.bound, p, "TableRefs");
  });
  apply_table(f.bound, st, "movies");

  CHECK(expansion_name(f.bound, st) == "TableRefs");
  apply_pick(st, [&](int p) { return body_has_nt(f.bound, p, "TableRefs"); });
  CHECK(allowed_tables(f.bound, st) == std::set<std::string>{"people", "roles"});
  apply_table(f.bound, st, "people");

  // one unused table left: the list can only close now
  CHECK(expansion_name(f.bound, st) == "TableRefs");
  for (int id : allowed_ids(st)) CHECK_FALSE(body_has_nt(f.bound, id, "TableRefs"));
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "TableRefs"; });
  CHECK(allowed_tables(f.bound, st) == std::set<std::string>{"roles"});
}

TEST_CASE("string predicate columns restrict operators and values") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, true, false, false, {"people"});
  apply_pick(st, [&](int p) { return body_has_kw(f.bound, p, "*"); });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "WhereClause" && !body_has_nt(f.bound, p, "WhereClause");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "Pred" && body_has_nt(f.bound, p, "Value");
  });
  apply_column(f.bound, st, "name");

  CHECK(expansion_name(f.bound, st) == "Op");
  CHECK(allowed_ops(f.bound, st) == std::set<std::string>{"=", "!="});
  apply_pick(st, [&](int p) {
    const std::string* o = f.bound.comparison_of(p);
    return o && *o == "=";
  });

  CHECK(expansion_name(f.bound, st) == "Value");
  for (int id : allowed_ids(st)) {
    const BoundGrammar::ValueBinding* vb = f.bound.value_of(id);
    REQUIRE(vb != nullptr);
    CHECK(vb->is_key);
    CHECK(vb->column == "name");
  }
  CHECK(allowed_ids(st).size() == f.buckets.find_column("name")->buckets.size());
}

TEST_CASE("numeric predicate columns keep the full operator set") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, true, false, false, {"movies"});
  apply_pick(st, [&](int p) { return body_has_kw(f.bound, p, "*"); });
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "WhereClause"; });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "Pred" && body_has_nt(f.bound, p, "Value");
  });

  // compare predicates may only start from bucketed columns
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"id", "year", "rating"});
  apply_column(f.bound, st, "id");
  CHECK(allowed_ops(f.bound, st) ==
        std::set<std::string>{"=", "!=", "<", ">", "<=", ">="});
}

TEST_CASE("AVG and SUM are masked down to numeric columns") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, false, false, true, {"people"});
  apply_pick(st, [&](int p) { return body_has_nt(f.bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "SelectItems"; });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItem" && body_has_nt(f.bound, p, "Agg");
  });

  CHECK(expansion_name(f.bound, st) == "Agg");
  apply_pick(st, [&](int p) {
    const std::string* a = f.bound.aggregate_of(p);
    return a && *a == "SUM";
  });
  CHECK(expansion_name(f.bound, st) == "Column");
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"age"});
}

TEST_CASE("aggregates over an all-string table are reduced to COUNT MIN MAX") {
  Schema schema = Schema::from_text("t.s:string\nt.u:string\n");
  std::vector<std::string> wl = {"SELECT * FROM t WHERE s = 'a'", "SELECT * FROM t WHERE s = 'b'",
                                 "SELECT * FROM t WHERE u = 'x'"};
  BucketMap buckets = BucketMap::build(wl, schema, 4);
  BoundGrammar bound = BoundGrammar::bind(load_dialect(), schema, &buckets);

  SemanticState st(bound);
  start_query(bound, st, false, false, true, {"t"});
  apply_pick(st, [&](int p) { return body_has_nt(bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) { return head_name(bound, p) == "SelectItems"; });
  apply_pick(st, [&](int p) {
    return head_name(bound, p) == "SelectItem" && body_has_nt(bound, p, "Agg");
  });

  std::set<std::string> aggs;
  for (int id : allowed_ids(st)) {
    if (const std::string* a = bound.aggregate_of(id)) aggs.insert(*a);
  }
  CHECK(aggs == std::set<std::string>{"COUNT", "MIN", "MAX"});
}

TEST_CASE("star select is masked under GROUP BY skeletons") {
  Fixture f;
  {
    SemanticState st(f.bound);
    start_query(f.bound, st, false, false, true, {"movies"});
    CHECK(expansion_name(f.bound, st) == "SelectList");
    CHECK(pick(st, [&](int p) { return body_has_kw(f.bound, p, "*"); }) == -1);
  }
  {
    SemanticState st(f.bound);
    start_query(f.bound, st, false, false, false, {"movies"});
    CHECK(pick(st, [&](int p) { return body_has_kw(f.bound, p, "*"); }) >= 0);
  }
}

TEST_CASE("aggregate select items require a GROUP BY skeleton") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, false, false, false, {"movies"});
  apply_pick(st, [&](int p) { return body_has_nt(f.bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "SelectItems"; });
  CHECK(expansion_name(f.bound, st) == "SelectItem");
  CHECK(pick(st, [&](int p) { return body_has_nt(f.bound, p, "Agg"); }) == -1);
}

TEST_CASE("GROUP BY is forced to cover exactly the selected plain columns") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, false, false, true, {"movies"});
  apply_pick(st, [&](int p) { return body_has_nt(f.bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItems" && body_has_nt(f.bound, p, "SelectItems");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItem" && !body_has_nt(f.bound, p, "Agg");
  });
  apply_column(f.bound, st, "id");
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItems" && !body_has_nt(f.bound, p, "SelectItems");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SelectItem" && !body_has_nt(f.bound, p, "Agg");
  });
  apply_column(f.bound, st, "year");

  // two pending columns: the group list cannot close yet
  CHECK(expansion_name(f.bound, st) == "GroupClause");
  for (int id : allowed_ids(st)) CHECK(body_has_nt(f.bound, id, "GroupClause"));
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "GroupClause"; });
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"id", "year"});
  apply_column(f.bound, st, "year");

  // one pending column left: the list must close on it
  CHECK(expansion_name(f.bound, st) == "GroupClause");
  for (int id : allowed_ids(st)) CHECK_FALSE(body_has_nt(f.bound, id, "GroupClause"));
  apply_pick(st, [&](int p) { return head_name(f.bound, p) == "GroupClause"; });
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"id"});
  apply_column(f.bound, st, "id");

  while (!st.complete()) apply_pick(st, [](int) { return true; });
  CHECK(st.relaxation_count() == 0);
  ValidityReport report = validate_query(f.bound, st.rendered());
  CHECK(report.syntactic);
  CHECK(report.semantic);
}

TEST_CASE("IN subqueries bind the outer column type and respect the depth cap") {
  Fixture f;
  SemanticState st(f.bound);
  start_query(f.bound, st, true, false, false, {"movies"});
  apply_pick(st, [&](int p) { return body_has_kw(f.bound, p, "*"); });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "WhereClause" && !body_has_nt(f.bound, p, "WhereClause");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "Pred" && body_has_nt(f.bound, p, "SubQuery");
  });
  apply_column(f.bound, st, "id");

  // depth 1 subquery over the int-typed outer column
  CHECK(expansion_name(f.bound, st) == "SubQuery");
  apply_pick(st, [&](int p) { return body_has_kw(f.bound, p, "WHERE"); });
  apply_table(f.bound, st, "people");
  CHECK(allowed_columns(f.bound, st) == std::set<std::string>{"age"});
  apply_column(f.bound, st, "age");

  // depth 2 via a nested IN on the subquery's own predicate
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "SubWhere" && !body_has_nt(f.bound, p, "SubWhere");
  });
  apply_pick(st, [&](int p) {
    return head_name(f.bound, p) == "Pred" && body_has_nt(f.bound, p, "SubQuery");
  });
  apply_column(f.bound, st, "age");
  CHECK(expansion_name(f.bound, st) == "SubQuery");
  apply_pick(st, [&](int p) { return body_has_kw(f.bound, p, "WHERE"); });
  apply_table(f.bound, st, "movies");
  apply_pick(st, [](int) { return true; });

  // at the cap: predicates inside this subquery cannot open another IN
  CHECK(expansion_name(f.bound, st) == "SubWhere");
  apply_pick(st, [&](int p) { return !body_has_nt(f.bound, p, "SubWhere"); });
  CHECK(expansion_name(f.bound, st) == "Pred");
  CHECK(pick(st, [&](int p) { return body_has_nt(f.bound, p, "SubQuery"); }) == -1);

  while (!st.complete()) apply_pick(st, [](int) { return true; });
  CHECK(st.relaxation_count() == 0);
  ValidityReport report = validate_query(f.bound, st.rendered());
  CHECK(report.syntactic);
  CHECK(report.semantic);
}

TEST_CASE("fully masked random generation stays valid across seeds") {
  Fixture f;
  int valid = 0;
  const int runs = 200;
  for (int seed = 1; seed <= runs; ++seed) {
    Rng rng(static_cast<uint64_t>(seed));
    int relaxations = -1;
    std::string canonical = generate_random(f.bound, RuleToggles{}, rng, &relaxations);
    CHECK(relaxations == 0);
    ValidityReport report = validate_query(f.bound, canonical);
    CHECK(report.syntactic);
    if (report.semantic) valid++;
    if (!report.semantic) {
      CAPTURE(canonical);
      CAPTURE(report.violations.front());
      CHECK(report.semantic);
    }
  }
  CHECK(valid == runs);
}

TEST_CASE("fully masked generation yields executable queries end to end") {
  Fixture f;
  qgen::test::TempDir dir("semgen");
  std::string movies = "id,year,rating\n1,1990,2.5\n2,1991,3.5\n3,1992,1.5\n4,1997,4.5\n";
  std::string people = "name,age\nalice,20\nbob,30\ncarol,35\n";
  std::string roles = "movie_id,pay\n1,100.0\n2,200.0\n2,300.0\n";
  write_text_file(dir.file("movies.csv"), movies);
  write_text_file(dir.file("people.csv"), people);
  write_text_file(dir.file("roles.csv"), roles);
  Database db = Database::load(f.schema, dir.path().string());

  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    std::string canonical = generate_random(f.bound, RuleToggles{}, rng);
    std::string executable = debucketize(canonical, f.buckets, rng);
    long long card = execute_cardinality(db, executable);
    CHECK(card >= 0);
    double cost = estimate_cost(db, executable);
    CHECK(cost > 0.0);
  }
}

TEST_CASE("disabling the rules lets invalid queries through") {
  Fixture f;
  const int runs = 300;

  int invalid_all_off = 0;
  bool syntax_held = true;
  for (int seed = 1; seed <= runs; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 31 + 1);
    std::string canonical = generate_random(f.bound, RuleToggles::all_disabled(), rng);
    ValidityReport report = validate_query(f.bound, canonical);
    syntax_held = syntax_held && report.syntactic;
    if (!report.semantic) invalid_all_off++;
  }
  CHECK(syntax_held);
  CHECK(invalid_all_off > 0);

  RuleToggles no_r1;
  no_r1.r1 = false;
  bool saw_r1_violation = false;
  for (int seed = 1; seed <= runs && !saw_r1_violation; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 17 + 3);
    std::string canonical = generate_random(f.bound, no_r1, rng);
    ValidityReport report = validate_query(f.bound, canonical);
    for (const std::string& violation : report.violations) {
      if (violation.rfind("R1:", 0) == 0) saw_r1_violation = true;
    }
  }
  CHECK(saw_r1_violation);
}

TEST_CASE("validate_query names the broken rule") {
  Fixture f;

  ValidityReport ok = validate_query(f.bound, "FROM movies SELECT *");
  CHECK(ok.syntactic);
  CHECK(ok.semantic);
  CHECK(ok.violations.empty());

  ValidityReport wrong_table = validate_query(f.bound, "FROM movies SELECT name");
  CHECK(wrong_table.syntactic);
  CHECK_FALSE(wrong_table.semantic);
  REQUIRE(!wrong_table.violations.empty());
  CHECK(wrong_table.violations.front().rfind("R1:", 0) == 0);

  ValidityReport malformed = validate_query(f.bound, "FROM movies SELECT");
  CHECK_FALSE(malformed.syntactic);
  CHECK_FALSE(malformed.semantic);
  REQUIRE(!malformed.violations.empty());
  CHECK(malformed.violations.front().rfind("syntax:", 0) == 0);

  std::string star_grouped = "FROM movies SELECT * GROUP BY year";
  ValidityReport grouped = validate_query(f.bound, star_grouped);
  CHECK(grouped.syntactic);
  CHECK_FALSE(grouped.semantic);
  bool named_r4 = false;
  for (const std::string& v : grouped.violations) {
    if (v.rfind("R4:", 0) == 0) named_r4 = true;
  }
  CHECK(named_r4);
}

TEST_CASE("forcing a masked choice relaxes instead of deadlocking") {
  Schema schema = Schema::from_text("t.s:string\nt.n:int\n");
  std::vector<std::string> wl = {"SELECT * FROM t WHERE s = 'a'",
                                 "SELECT * FROM t WHERE s = 'b'"};
  BucketMap buckets = BucketMap::build(wl, schema, 4);
  BoundGrammar bound = BoundGrammar::bind(load_dialect(), schema, &buckets);

  SemanticState st(bound);
  start_query(bound, st, false, true, true, {"t"});
  apply_pick(st, [&](int p) { return body_has_nt(bound, p, "SelectItems"); });
  apply_pick(st, [&](int p) {
    return head_name(bound, p) == "SelectItems" && !body_has_nt(bound, p, "SelectItems");
  });
  apply_pick(st, [&](int p) {
    return head_name(bound, p) == "SelectItem" && !body_has_nt(bound, p, "Agg");
  });
  apply_column(bound, st, "s");
  apply_pick(st, [&](int p) {
    return head_name(bound, p) == "HavingClause" && !body_has_nt(bound, p, "HavingClause");
  });
  apply_pick(st, [&](int p) { return head_name(bound, p) == "HavingPred"; });
  REQUIRE(expansion_name(bound, st) == "Agg");

  // only MIN and MAX have usable HAVING values here; COUNT is masked
  int count_prod = -1;
  for (const Production& p : bound.grammar().productions()) {
    const std::string* a = bound.aggregate_of(p.id);
    if (a && *a == "COUNT") count_prod = p.id;
  }
  REQUIRE(count_prod >= 0);
  CHECK_FALSE(st.allowed().test(static_cast<size_t>(count_prod)));
  CHECK(!st.blocking_rules(count_prod).empty());

  st.apply(count_prod);
  CHECK(expansion_name(bound, st) == "Column");
  CHECK(st.relaxation_count() >= 1);
  REQUIRE(!st.relaxation_notes().empty());
  CHECK(st.relaxation_notes().front().rfind("R5", 0) == 0);

  while (!st.complete()) apply_pick(st, [](int) { return true; });
}
