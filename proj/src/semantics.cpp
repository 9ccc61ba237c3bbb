#include "qgen/semantics.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

namespace qgen {

namespace {

bool parses_as_number(const std::string& text) {
  if (text.empty()) return false;
  char* end = nullptr;
  std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size();
}

bool body_contains(const Production& p, int symbol) {
  if (symbol < 0) return false;
  return std::find(p.body.begin(), p.body.end(), symbol) != p.body.end();
}

std::string production_text(const Grammar& g, int id) {
  const Production& p = g.production(id);
  std::string out = g.symbol(p.head).name + " ->";
  for (int s : p.body) out += " " + g.symbol(s).name;
  return out;
}

bool types_compatible(ColumnType a, ColumnType b) { return is_numeric(a) == is_numeric(b); }

}  // namespace

BoundGrammar BoundGrammar::bind(const Grammar& dialect, const Schema& schema,
                                const BucketMap* buckets) {
  BoundGrammar b;
  b.grammar_ = dialect;
  b.schema_ = schema;
  Grammar& g = b.grammar_;

  Vocab& v = b.vocab_;
  auto nt = [&](const char* name) { return g.find_symbol(name, SymbolKind::Nonterminal); };
  auto term = [&](const char* name) { return g.find_symbol(name, SymbolKind::Terminal); };
  v.table_refs = nt("TableRefs");
  v.table_name = nt("TableName");
  v.select_list = nt("SelectList");
  v.select_items = nt("SelectItems");
  v.select_item = nt("SelectItem");
  v.where_clause = nt("WhereClause");
  v.pred = nt("Pred");
  v.having_clause = nt("HavingClause");
  v.having_pred = nt("HavingPred");
  v.group_clause = nt("GroupClause");
  v.subquery = nt("SubQuery");
  v.subwhere = nt("SubWhere");
  v.op = nt("Op");
  v.agg = nt("Agg");
  v.column = nt("Column");
  v.value = nt("Value");
  v.kw_from = term("FROM");
  v.kw_select = term("SELECT");
  v.kw_where = term("WHERE");
  v.kw_having = term("HAVING");
  v.kw_group = term("GROUP");
  v.star = term("*");

  if (v.table_name >= 0) {
    for (const std::string& t : schema.tables()) {
      int sym = g.intern(t, SymbolKind::Terminal);
      if (g.production_by_shape(v.table_name, {sym}) < 0) g.add_production(v.table_name, {sym});
    }
  }
  if (v.column >= 0) {
    std::set<std::string> seen;
    for (const SchemaColumn& c : schema.columns()) {
      if (!seen.insert(c.name).second) continue;
      int sym = g.intern(c.name, SymbolKind::Terminal);
      if (g.production_by_shape(v.column, {sym}) < 0) g.add_production(v.column, {sym});
    }
  }
  if (buckets && v.value >= 0) {
    for (const ColumnBuckets& cb : buckets->columns()) {
      b.keyed_columns_.insert(cb.column);
      for (const Bucket& bk : cb.buckets) {
        int sym = g.intern(bk.key, SymbolKind::Terminal);
        if (g.production_by_shape(v.value, {sym}) < 0) g.add_production(v.value, {sym});
      }
    }
  }

  for (const Production& p : g.productions()) {
    if (p.body.size() == 1 && !g.is_nonterminal(p.body[0])) {
      const std::string& text = g.symbol(p.body[0]).name;
      if (p.head == v.table_name) {
        if (!schema.has_table(text))
          fail("binding error: grammar table '" + text + "' is not in the schema");
        b.prod_table_[p.id] = text;
      } else if (p.head == v.column) {
        if (!schema.has_column(text))
          fail("binding error: grammar column '" + text + "' is not in the schema");
        b.prod_column_[p.id] = text;
      } else if (p.head == v.value) {
        ValueBinding vb;
        const ColumnBuckets* cb = buckets ? buckets->find_key(text).first : nullptr;
        if (cb) {
          vb.is_key = true;
          vb.column = cb->column;
          vb.type = cb->type;
        } else if (parses_as_number(text)) {
          vb.type = ColumnType::Float;
          b.has_numeric_literal_ = true;
        } else {
          vb.type = ColumnType::String;
          b.has_string_literal_ = true;
        }
        b.prod_value_[p.id] = vb;
      } else if (p.head == v.agg) {
        b.prod_agg_[p.id] = text;
      } else if (p.head == v.op) {
        b.prod_op_[p.id] = text;
      }
    }
  }

  g.check_validity();
  b.masks_ = MaskMatrix::build(g);
  b.tables_ = LalrTables::build(g);
  return b;
}

const std::string* BoundGrammar::table_of(int production_id) const {
  auto it = prod_table_.find(production_id);
  return it == prod_table_.end() ? nullptr : &it->second;
}

const std::string* BoundGrammar::column_of(int production_id) const {
  auto it = prod_column_.find(production_id);
  return it == prod_column_.end() ? nullptr : &it->second;
}

const BoundGrammar::ValueBinding* BoundGrammar::value_of(int production_id) const {
  auto it = prod_value_.find(production_id);
  return it == prod_value_.end() ? nullptr : &it->second;
}

const std::string* BoundGrammar::aggregate_of(int production_id) const {
  auto it = prod_agg_.find(production_id);
  return it == prod_agg_.end() ? nullptr : &it->second;
}

const std::string* BoundGrammar::comparison_of(int production_id) const {
  auto it = prod_op_.find(production_id);
  return it == prod_op_.end() ? nullptr : &it->second;
}

bool BoundGrammar::column_has_buckets(const std::string& column_name) const {
  return keyed_columns_.count(column_name) > 0;
}

std::optional<ColumnType> BoundGrammar::resolve_type(const std::vector<std::string>& tables,
                                                     const std::string& column_name) const {
  for (const std::string& t : tables) {
    for (int ci : schema_.columns_of(t)) {
      if (schema_.column(ci).name == column_name) return schema_.column(ci).type;
    }
  }
  auto owners = schema_.owners_of(column_name);
  if (!owners.empty()) return schema_.column(owners[0]).type;
  return std::nullopt;
}

SemanticState::SemanticState(const BoundGrammar& bound, RuleToggles toggles)
    : bound_(&bound), toggles_(toggles), deriv_(new_derivation(bound.grammar())) {
  scopes_.push_back(Scope{});
  mirror_.push_back(Entry{bound.grammar().start(), 0, kNoClause, false});
  recompute();
}

int SemanticState::expansion_symbol() const {
  return complete() ? -1 : deriv_.stack.back();
}

std::set<std::string> SemanticState::column_pool(const Scope& sc) const {
  std::set<std::string> out;
  const Schema& s = bound_->schema();
  if (!toggles_.r1) {
    for (const SchemaColumn& c : s.columns()) out.insert(c.name);
    return out;
  }
  for (const std::string& t : sc.tables) {
    for (int ci : s.columns_of(t)) out.insert(s.column(ci).name);
  }
  return out;
}

std::optional<ColumnType> SemanticState::resolved(const Scope& sc,
                                                  const std::string& column) const {
  return bound_->resolve_type(sc.tables, column);
}

bool SemanticState::value_source_for_column(const Scope& sc, const std::string& column) const {
  if (bound_->column_has_buckets(column)) return true;
  auto rt = resolved(sc, column);
  if (!rt) return false;
  return is_numeric(*rt) ? bound_->has_numeric_literal() : bound_->has_string_literal();
}

bool SemanticState::value_source_for_aggregate(const Scope& sc, const std::string& agg,
                                               const std::string& column) const {
  bool numeric_result = agg == "COUNT" || agg == "SUM" || agg == "AVG";
  if (numeric_result) {
    if (bound_->has_numeric_literal()) return true;
    auto rt = resolved(sc, column);
    return rt && is_numeric(*rt) && bound_->column_has_buckets(column);
  }
  return value_source_for_column(sc, column);
}

std::optional<ColumnType> SemanticState::comparison_type(const Scope& sc) const {
  if (sc.pending_agg == "COUNT" || sc.pending_agg == "SUM" || sc.pending_agg == "AVG")
    return ColumnType::Float;
  return sc.pending_type;
}

std::vector<SemanticState::Stage> SemanticState::stages() const {
  std::vector<Stage> out;
  const Grammar& g = bound_->grammar();
  const BoundGrammar::Vocab& v = bound_->vocab_;
  const Schema& schema = bound_->schema();
  const Entry& top = mirror_.back();
  const Scope& sc = scopes_[static_cast<size_t>(top.scope)];
  const int sym = top.symbol;
  const std::vector<int>& prods = g.productions_of(sym);
  const size_t np = static_cast<size_t>(g.production_count());

  auto add_stage = [&](const char* rule, std::string note, auto&& keep_pred) {
    Bitset keep(np, true);
    bool restricted = false;
    for (int pid : prods) {
      if (!keep_pred(pid)) {
        keep.reset(static_cast<size_t>(pid));
        restricted = true;
      }
    }
    if (restricted) out.push_back(Stage{rule, std::move(keep), std::move(note)});
  };

  int produced = -1;
  if (sym == v.select_items) produced = sc.select_items;
  if (sym == v.where_clause || sym == v.subwhere) produced = sc.where_preds;
  if (sym == v.having_clause) produced = sc.having_preds;
  if (sym == v.group_clause) produced = sc.group_items;
  if (produced >= 0 && produced + 1 >= kMaxListItems) {
    add_stage("structure", "clause list reached its length cap",
              [&](int pid) { return !body_contains(g.production(pid), sym); });
  }

  if (v.subquery >= 0 && sc.depth >= kMaxSubqueryDepth) {
    add_stage("structure", "subquery nesting reached its depth cap",
              [&](int pid) { return !body_contains(g.production(pid), v.subquery); });
  }

  if (toggles_.r5 && top.clause == kWhere && v.value >= 0) {
    bool source = false;
    for (const std::string& c : column_pool(sc)) {
      if (value_source_for_column(sc, c)) {
        source = true;
        break;
      }
    }
    if (!source) {
      add_stage("R5", "no column has usable predicate values", [&](int pid) {
        const Production& p = g.production(pid);
        return !(body_contains(p, v.column) && body_contains(p, v.value));
      });
    }
  }

  if (sym == v.table_name) {
    if (toggles_.r1) {
      add_stage("R1", "table already joined in this FROM list", [&](int pid) {
        const std::string* t = bound_->table_of(pid);
        if (!t) return true;
        return std::find(sc.tables.begin(), sc.tables.end(), *t) == sc.tables.end();
      });
    }
    if (toggles_.r2 && sc.is_subquery && sc.in_type) {
      add_stage("R2", "subquery table must offer a column matching the outer predicate type",
                [&](int pid) {
                  const std::string* t = bound_->table_of(pid);
                  if (!t) return true;
                  for (int ci : schema.columns_of(*t)) {
                    if (types_compatible(schema.column(ci).type, *sc.in_type)) return true;
                  }
                  return false;
                });
    }
    if (toggles_.r5 && sc.require_keyed_table) {
      add_stage("R5", "this FROM table must contribute usable predicate values", [&](int pid) {
        const std::string* t = bound_->table_of(pid);
        if (!t) return true;
        for (int ci : schema.columns_of(*t)) {
          const SchemaColumn& col = schema.column(ci);
          bool lit = is_numeric(col.type) ? bound_->has_numeric_literal()
                                          : bound_->has_string_literal();
          if (lit || bound_->column_has_buckets(col.name)) return true;
        }
        return false;
      });
    }
  }

  if (sym == v.table_refs && toggles_.r1) {
    std::set<std::string> used(sc.tables.begin(), sc.tables.end());
    int unused = 0;
    for (const std::string& t : schema.tables()) {
      if (!used.count(t)) unused++;
    }
    if (unused < 2) {
      add_stage("R1", "not enough unused tables to extend the FROM list",
                [&](int pid) { return !body_contains(g.production(pid), v.table_refs); });
    }
  }

  if (sym == v.select_list && toggles_.r4 && sc.has_group && v.star >= 0) {
    add_stage("R4", "SELECT * cannot satisfy GROUP BY coverage",
              [&](int pid) { return !body_contains(g.production(pid), v.star); });
  }

  if (sym == v.select_items) {
    bool aggregates_open = sc.has_group || !toggles_.r4;
    if (!aggregates_open) {
      int fresh = 0;
      for (const std::string& c : column_pool(sc)) {
        if (!sc.selected_plain.count(c)) fresh++;
      }
      if (fresh < 2) {
        add_stage("structure", "not enough unselected columns to extend the select list",
                  [&](int pid) { return !body_contains(g.production(pid), v.select_items); });
      }
    }
  }

  if (sym == v.select_item) {
    if (toggles_.r4 && !sc.has_group && v.agg >= 0) {
      add_stage("R4", "aggregates need a GROUP BY clause",
                [&](int pid) { return !body_contains(g.production(pid), v.agg); });
    }
    bool fresh = false;
    for (const std::string& c : column_pool(sc)) {
      if (!sc.selected_plain.count(c)) {
        fresh = true;
        break;
      }
    }
    if (!fresh && v.agg >= 0) {
      add_stage("structure", "every available column is already selected",
                [&](int pid) { return body_contains(g.production(pid), v.agg); });
    }
  }

  if (sym == v.agg) {
    if (toggles_.r3) {
      bool numeric_col = false;
      for (const std::string& c : column_pool(sc)) {
        auto rt = resolved(sc, c);
        if (rt && is_numeric(*rt)) {
          numeric_col = true;
          break;
        }
      }
      if (!numeric_col) {
        add_stage("R3", "AVG and SUM need a numeric column", [&](int pid) {
          const std::string* a = bound_->aggregate_of(pid);
          if (!a) return true;
          return *a != "AVG" && *a != "SUM";
        });
      }
    }
    if (toggles_.r5 && top.clause == kHaving) {
      add_stage("R5", "HAVING aggregate needs comparable values", [&](int pid) {
        const std::string* a = bound_->aggregate_of(pid);
        if (!a) return true;
        for (const std::string& c : column_pool(sc)) {
          if (value_source_for_aggregate(sc, *a, c)) return true;
        }
        return false;
      });
    }
  }

  if (sym == v.column) {
    if (toggles_.r1) {
      std::set<std::string> pool = column_pool(sc);
      add_stage("R1", "column must come from the FROM tables", [&](int pid) {
        const std::string* c = bound_->column_of(pid);
        if (!c) return true;
        return pool.count(*c) > 0;
      });
    }
    if (top.clause == kSelect && !top.in_agg) {
      add_stage("structure", "column already selected", [&](int pid) {
        const std::string* c = bound_->column_of(pid);
        if (!c) return true;
        return !sc.selected_plain.count(*c);
      });
      if (toggles_.r2 && sc.is_subquery && sc.in_type) {
        add_stage("R2", "subquery column type must match the outer predicate column",
                  [&](int pid) {
                    const std::string* c = bound_->column_of(pid);
                    if (!c) return true;
                    auto rt = resolved(sc, *c);
                    return rt && types_compatible(*rt, *sc.in_type);
                  });
      }
    }
    if (top.in_agg) {
      if (toggles_.r3 && (sc.pending_agg == "AVG" || sc.pending_agg == "SUM")) {
        add_stage("R3", "AVG and SUM need a numeric column", [&](int pid) {
          const std::string* c = bound_->column_of(pid);
          if (!c) return true;
          auto rt = resolved(sc, *c);
          return rt && is_numeric(*rt);
        });
      }
      if (toggles_.r5 && top.clause == kHaving && !sc.pending_agg.empty()) {
        add_stage("R5", "HAVING aggregate needs comparable values for this column",
                  [&](int pid) {
                    const std::string* c = bound_->column_of(pid);
                    if (!c) return true;
                    return value_source_for_aggregate(sc, sc.pending_agg, *c);
                  });
      }
    }
    if (top.clause == kWhere && toggles_.r5 && sc.pred_kind == PredKind::Compare) {
      add_stage("R5", "predicate column needs bucketed values", [&](int pid) {
        const std::string* c = bound_->column_of(pid);
        if (!c) return true;
        return value_source_for_column(sc, *c);
      });
    }
    if (top.clause == kGroup) {
      std::set<std::string> pending;
      for (const std::string& c : sc.selected_plain) {
        if (!sc.group_cols.count(c)) pending.insert(c);
      }
      if (toggles_.r4 && !pending.empty()) {
        add_stage("R4", "GROUP BY must cover the selected columns first", [&](int pid) {
          const std::string* c = bound_->column_of(pid);
          if (!c) return true;
          return pending.count(*c) > 0;
        });
      }
      add_stage("structure", "column already grouped", [&](int pid) {
        const std::string* c = bound_->column_of(pid);
        if (!c) return true;
        return !sc.group_cols.count(*c);
      });
    }
  }

  if (sym == v.op && toggles_.r2) {
    auto ct = comparison_type(sc);
    if (ct && !is_numeric(*ct)) {
      add_stage("R2", "string comparisons support only = and !=", [&](int pid) {
        const std::string* o = bound_->comparison_of(pid);
        if (!o) return true;
        return *o == "=" || *o == "!=";
      });
    }
  }

  if (sym == v.value) {
    if (toggles_.r5 && !sc.pending_column.empty()) {
      add_stage("R5", "value must come from the predicate column's buckets", [&](int pid) {
        const BoundGrammar::ValueBinding* vb = bound_->value_of(pid);
        if (!vb || !vb->is_key) return true;
        return vb->column == sc.pending_column;
      });
    }
    if (toggles_.r2) {
      auto ct = comparison_type(sc);
      if (ct) {
        add_stage("R2", "value type must match the comparison", [&](int pid) {
          const BoundGrammar::ValueBinding* vb = bound_->value_of(pid);
          if (!vb) return true;
          return types_compatible(vb->type, *ct);
        });
      }
    }
  }

  if (sym == v.subquery && toggles_.r5 && sc.depth >= kMaxSubqueryDepth && v.kw_where >= 0) {
    bool feasible = false;
    for (const std::string& t : schema.tables()) {
      bool compat = !sc.in_type;
      bool source = false;
      for (int ci : schema.columns_of(t)) {
        const SchemaColumn& col = schema.column(ci);
        if (sc.in_type && types_compatible(col.type, *sc.in_type)) compat = true;
        bool lit = is_numeric(col.type) ? bound_->has_numeric_literal()
                                        : bound_->has_string_literal();
        if (lit || bound_->column_has_buckets(col.name)) source = true;
      }
      if (compat && source) {
        feasible = true;
        break;
      }
    }
    if (!feasible) {
      add_stage("R5", "a subquery WHERE would have no usable predicate values",
                [&](int pid) { return !body_contains(g.production(pid), v.kw_where); });
    }
  }

  if (sym == v.group_clause && toggles_.r4) {
    std::set<std::string> pending;
    for (const std::string& c : sc.selected_plain) {
      if (!sc.group_cols.count(c)) pending.insert(c);
    }
    if (pending.size() > 1) {
      add_stage("R4", "more selected columns still need grouping",
                [&](int pid) { return body_contains(g.production(pid), v.group_clause); });
    } else {
      add_stage("R4", "grouping already covers the selected columns",
                [&](int pid) { return !body_contains(g.production(pid), v.group_clause); });
    }
  }

  return out;
}

void SemanticState::recompute() {
  const Grammar& g = bound_->grammar();
  const size_t np = static_cast<size_t>(g.production_count());
  semantic_mask_ = Bitset(np, true);
  if (complete()) {
    allowed_ = Bitset(np, false);
    return;
  }
  const Entry& top = mirror_.back();
  Bitset cur = bound_->syntax_masks().row_unchecked(top.symbol);
  for (const Stage& st : stages()) {
    Bitset next = cur;
    next &= st.keep;
    if (next.none()) {
      relaxation_count_++;
      relaxation_notes_.push_back(std::string(st.rule) + " relaxed: " + st.note);
      continue;
    }
    cur = next;
  }
  allowed_ = cur;
  for (int pid : g.productions_of(top.symbol)) {
    if (!allowed_.test(static_cast<size_t>(pid))) semantic_mask_.reset(static_cast<size_t>(pid));
  }
}

std::vector<std::string> SemanticState::blocking_rules(int production_id) const {
  std::vector<std::string> out;
  if (complete()) return out;
  const Grammar& g = bound_->grammar();
  if (production_id < 0 || production_id >= g.production_count()) return out;
  for (const Stage& st : stages()) {
    if (!st.keep.test(static_cast<size_t>(production_id))) {
      out.push_back(std::string(st.rule) + ": " + st.note);
    }
  }
  return out;
}

void SemanticState::apply(int production_id) {
  const Grammar& g = bound_->grammar();
  if (production_id < 0 || production_id >= g.production_count())
    fail("production id " + std::to_string(production_id) + " out of range");
  const Production& p = g.production(production_id);
  const Entry top = mirror_.back();
  apply_production(g, deriv_, production_id);
  mirror_.pop_back();
  chosen_.push_back(production_id);

  const BoundGrammar::Vocab& v = bound_->vocab_;
  const int scope_id = top.scope;

  bool body_where = body_contains(p, v.kw_where);
  bool body_column = body_contains(p, v.column);
  bool body_value = body_contains(p, v.value);
  bool body_subquery = body_contains(p, v.subquery);
  bool body_agg = body_contains(p, v.agg);

  {
    Scope& sc = scopes_[static_cast<size_t>(scope_id)];
    sc.has_where |= body_where;
    sc.has_having |= body_contains(p, v.kw_having);
    sc.has_group |= body_contains(p, v.kw_group);
    if (p.head == v.select_items) sc.select_items++;
    if (p.head == v.where_clause || p.head == v.subwhere) sc.where_preds++;
    if (p.head == v.having_clause) sc.having_preds++;
    if (p.head == v.group_clause) sc.group_items++;

    if (body_column && (body_value || body_subquery)) {
      sc.pending_agg.clear();
      sc.pending_column.clear();
      sc.pending_type.reset();
      sc.pred_kind = body_subquery ? PredKind::In : PredKind::Compare;
      sc.pending_child = -1;
    }

    if (p.head == v.table_refs && !body_contains(p, v.table_refs) && toggles_.r5 &&
        sc.has_having) {
      bool covered = false;
      for (const std::string& c : column_pool(sc)) {
        if (value_source_for_column(sc, c)) {
          covered = true;
          break;
        }
      }
      if (!covered) sc.require_keyed_table = true;
    }
    if (p.head == v.subquery && body_where && sc.depth >= kMaxSubqueryDepth && toggles_.r5) {
      sc.require_keyed_table = true;
    }

    if (const std::string* t = bound_->table_of(production_id)) {
      if (std::find(sc.tables.begin(), sc.tables.end(), *t) == sc.tables.end())
        sc.tables.push_back(*t);
      sc.require_keyed_table = false;
    }
    if (const std::string* c = bound_->column_of(production_id)) {
      auto rt = resolved(sc, *c);
      switch (top.clause) {
        case kSelect:
          if (!top.in_agg) sc.selected_plain.insert(*c);
          break;
        case kWhere:
          sc.pending_column = *c;
          sc.pending_type = rt;
          if (sc.pending_child >= 0 && rt)
            scopes_[static_cast<size_t>(sc.pending_child)].in_type = rt;
          break;
        case kHaving:
          sc.pending_column = *c;
          sc.pending_type = rt;
          break;
        case kGroup:
          sc.group_cols.insert(*c);
          break;
        default:
          break;
      }
    }
    if (const std::string* a = bound_->aggregate_of(production_id)) sc.pending_agg = *a;
    if (bound_->value_of(production_id)) {
      sc.pending_agg.clear();
      sc.pending_column.clear();
      sc.pending_type.reset();
      sc.pred_kind = PredKind::None;
    }
    if (p.head == v.select_list && body_contains(p, v.star)) sc.select_star = true;
  }

  uint8_t clause = top.clause;
  std::vector<Entry> forward;
  forward.reserve(p.body.size());
  for (int sym : p.body) {
    if (!g.is_nonterminal(sym)) {
      if (sym == v.kw_from) clause = kFrom;
      if (sym == v.kw_select) clause = kSelect;
      if (sym == v.kw_where) clause = kWhere;
      if (sym == v.kw_having) clause = kHaving;
      if (sym == v.kw_group) clause = kGroup;
      forward.push_back(Entry{sym, scope_id, clause, top.in_agg});
      continue;
    }
    int child_scope = scope_id;
    if (sym == v.subquery) {
      Scope child;
      child.depth = scopes_[static_cast<size_t>(scope_id)].depth + 1;
      child.is_subquery = true;
      child_scope = static_cast<int>(scopes_.size());
      scopes_.push_back(child);
      scopes_[static_cast<size_t>(scope_id)].pending_child = child_scope;
    }
    bool in_agg = top.in_agg || (body_agg && sym == v.column);
    forward.push_back(Entry{sym, child_scope, clause, in_agg});
  }
  for (auto it = forward.rbegin(); it != forward.rend(); ++it) mirror_.push_back(*it);
  while (!mirror_.empty() && !g.is_nonterminal(mirror_.back().symbol)) mirror_.pop_back();
  if (mirror_.size() != deriv_.stack.size()) fail("internal error: semantic mirror out of sync");

  recompute();
}

std::string SemanticState::rendered() const {
  return render_terminals(bound_->grammar(), deriv_.emitted);
}

ValidityReport validate_sequence(const BoundGrammar& bound, const std::vector<int>& ids) {
  ValidityReport r;
  r.syntactic = true;
  const Grammar& g = bound.grammar();
  SemanticState st(bound);
  for (size_t i = 0; i < ids.size(); ++i) {
    int pid = ids[i];
    for (const std::string& why : st.blocking_rules(pid)) {
      r.violations.push_back(why + " (step " + std::to_string(i) + ", " +
                             production_text(g, pid) + ")");
    }
    try {
      st.apply(pid);
    } catch (const std::exception& e) {
      r.violations.push_back(std::string("structure: ") + e.what());
      r.semantic = false;
      return r;
    }
  }
  if (!st.complete()) r.violations.push_back("structure: derivation left unexpanded symbols");
  r.semantic = r.violations.empty();
  return r;
}

ValidityReport validate_query(const BoundGrammar& bound, const std::string& canonical_bucketized) {
  std::vector<int> ids;
  try {
    std::vector<Token> tokens = tokenize(bound.grammar(), canonical_bucketized);
    ParseTree tree = bound.parser().parse(bound.grammar(), tokens);
    ids = tree_to_productions(bound.grammar(), tree).ids;
  } catch (const std::exception& e) {
    ValidityReport r;
    r.violations.push_back(std::string("syntax: ") + e.what());
    return r;
  }
  return validate_sequence(bound, ids);
}

}  // namespace qgen
