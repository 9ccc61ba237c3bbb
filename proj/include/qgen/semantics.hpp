#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qgen/derivation.hpp"
#include "qgen/grammar.hpp"
#include "qgen/parser.hpp"
#include "qgen/preprocess.hpp"
#include "qgen/schema.hpp"

namespace qgen {

// Semantic rules, individually toggleable for ablation runs. R1..R5 is the
// vocabulary used by the CLI and by validity reports:
//   R1  columns and tables referenced must come from the active FROM list
//   R2  string columns compare with = and != only; comparison types match
//   R3  AVG and SUM apply to numeric columns only
//   R4  plain selected columns force a covering GROUP BY
//   R5  predicate values come from the pending column's bucket keys
struct RuleToggles {
  bool r1 = true;
  bool r2 = true;
  bool r3 = true;
  bool r4 = true;
  bool r5 = true;

  static RuleToggles all_disabled() { return RuleToggles{false, false, false, false, false}; }
  bool all_enabled() const { return r1 && r2 && r3 && r4 && r5; }
};

// Structural caps that keep clause lists finite no matter which rules are
// disabled. They are hygiene, not semantics, and are never toggleable.
inline constexpr int kMaxListItems = 4;
inline constexpr int kMaxSubqueryDepth = 2;

// A dialect grammar closed over a schema and bucket map. Binding appends one
// production per table (TableName), per bare column name (Column) and per
// bucket key (Value), validates any static productions under those heads
// against the schema, and builds the parser and syntax masks once.
class BoundGrammar {
 public:
  // buckets may be null: the grammar then only offers static Value literals.
  static BoundGrammar bind(const Grammar& dialect, const Schema& schema,
                           const BucketMap* buckets);

  const Grammar& grammar() const { return grammar_; }
  const Schema& schema() const { return schema_; }
  const MaskMatrix& syntax_masks() const { return masks_; }
  const LalrTables& parser() const { return tables_; }

  struct ValueBinding {
    bool is_key = false;
    std::string column;  // owning column for keys, empty for literals
    ColumnType type = ColumnType::Int;
  };

  // Production annotations; null when the production has no such binding.
  const std::string* table_of(int production_id) const;
  const std::string* column_of(int production_id) const;
  const ValueBinding* value_of(int production_id) const;
  const std::string* aggregate_of(int production_id) const;
  const std::string* comparison_of(int production_id) const;

  bool column_has_buckets(const std::string& column_name) const;
  bool has_numeric_literal() const { return has_numeric_literal_; }
  bool has_string_literal() const { return has_string_literal_; }

  // Resolves a bare column the way execution does: the first owning table in
  // FROM order wins. Falls back to schema declaration order when none of the
  // given tables owns the column; nullopt when the schema does not know it.
  std::optional<ColumnType> resolve_type(const std::vector<std::string>& tables,
                                         const std::string& column_name) const;

 private:
  Grammar grammar_;
  Schema schema_;
  MaskMatrix masks_;
  LalrTables tables_;

  std::map<int, std::string> prod_table_;
  std::map<int, std::string> prod_column_;
  std::map<int, ValueBinding> prod_value_;
  std::map<int, std::string> prod_agg_;
  std::map<int, std::string> prod_op_;
  std::set<std::string> keyed_columns_;
  bool has_numeric_literal_ = false;
  bool has_string_literal_ = false;

  struct Vocab {
    int table_refs = -1, table_name = -1, select_list = -1, select_items = -1, select_item = -1,
        where_clause = -1, pred = -1, having_clause = -1, having_pred = -1, group_clause = -1,
        subquery = -1, subwhere = -1, op = -1, agg = -1, column = -1, value = -1;
    int kw_from = -1, kw_select = -1, kw_where = -1, kw_having = -1, kw_group = -1, star = -1;
  } vocab_;

  friend class SemanticState;
};

// One in-flight generation episode: a leftmost derivation plus the semantic
// context needed to mask the next choice. The mirror stack shadows the
// derivation stack entry for entry, tagging each symbol with its query scope
// (subqueries get child scopes) and the clause it belongs to.
class SemanticState {
 public:
  explicit SemanticState(const BoundGrammar& bound, RuleToggles toggles = RuleToggles{});

  bool complete() const { return derivation_complete(deriv_); }
  // current leftmost nonterminal, -1 once complete
  int expansion_symbol() const;

  // Productions selectable now: the syntax row of the expansion symbol
  // restricted by the enabled rules. When a rule would leave nothing, that
  // rule is skipped for the step and a relaxation is recorded, so the result
  // is never empty while the derivation is incomplete.
  const Bitset& allowed() const { return allowed_; }

  // Full-width semantic mask: all ones except the bits the rules cleared for
  // the expansion symbol's productions.
  const Bitset& semantic_mask() const { return semantic_mask_; }

  void apply(int production_id);

  const DerivationState& derivation() const { return deriv_; }
  const std::vector<int>& chosen() const { return chosen_; }
  std::string rendered() const;

  int relaxation_count() const { return relaxation_count_; }
  const std::vector<std::string>& relaxation_notes() const { return relaxation_notes_; }

  // Names of rules that forbid this production at the current step,
  // independent of the relaxation fallback. Empty means the choice is clean.
  std::vector<std::string> blocking_rules(int production_id) const;

 private:
  enum Clause : uint8_t { kNoClause, kFrom, kSelect, kWhere, kHaving, kGroup };
  enum class PredKind : uint8_t { None, Compare, In };

  struct Scope {
    int depth = 0;
    bool is_subquery = false;
    std::optional<ColumnType> in_type;  // outer predicate column type
    std::vector<std::string> tables;
    bool has_where = false, has_having = false, has_group = false;
    bool select_star = false;
    std::set<std::string> selected_plain;
    std::set<std::string> group_cols;
    int select_items = 0, where_preds = 0, having_preds = 0, group_items = 0;
    std::string pending_agg;
    std::string pending_column;
    std::optional<ColumnType> pending_type;
    PredKind pred_kind = PredKind::None;
    bool require_keyed_table = false;
    int pending_child = -1;  // scope awaiting in_type
  };

  struct Entry {
    int symbol = -1;
    int scope = 0;
    uint8_t clause = kNoClause;
    bool in_agg = false;
  };

  struct Stage {
    const char* rule;  // "R1".."R5" or "structure"
    Bitset keep;
    std::string note;
  };

  const BoundGrammar* bound_;
  RuleToggles toggles_;
  DerivationState deriv_;
  std::vector<Entry> mirror_;
  std::vector<Scope> scopes_;
  std::vector<int> chosen_;
  Bitset allowed_;
  Bitset semantic_mask_;
  int relaxation_count_ = 0;
  std::vector<std::string> relaxation_notes_;

  std::vector<Stage> stages() const;
  void recompute();

  std::set<std::string> column_pool(const Scope& sc) const;
  std::optional<ColumnType> resolved(const Scope& sc, const std::string& column) const;
  bool value_source_for_column(const Scope& sc, const std::string& column) const;
  bool value_source_for_aggregate(const Scope& sc, const std::string& agg,
                                  const std::string& column) const;
  std::optional<ColumnType> comparison_type(const Scope& sc) const;
};

struct ValidityReport {
  bool syntactic = false;
  bool semantic = false;
  std::vector<std::string> violations;  // one entry per broken rule occurrence
};

// Parses canonical bucketized text under the bound grammar, then replays the
// production sequence through a fresh all-rules-on state, collecting every
// step where the chosen production was masked.
ValidityReport validate_query(const BoundGrammar& bound, const std::string& canonical_bucketized);

// Same replay over an already-parsed sequence.
ValidityReport validate_sequence(const BoundGrammar& bound, const std::vector<int>& ids);

}  // namespace qgen
