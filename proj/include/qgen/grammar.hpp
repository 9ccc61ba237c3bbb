#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

enum class SymbolKind { Terminal, Nonterminal };

struct Symbol {
  std::string name;
  SymbolKind kind;
};

struct Production {
  int id = -1;
  int head = -1;            // nonterminal symbol id
  std::vector<int> body;    // symbol ids, never empty
};

// Context-free grammar with interned symbols. Production ids follow the order
// rules appear in the grammar text, alternatives counted left to right.
class Grammar {
 public:
  // Text format, one rule per line:
  //   %start Start
  //   Head -> Sym 'term' | OtherSym
  // '#' starts a comment, quoted atoms are terminals, bare atoms nonterminals.
  // allow_open skips the every-nonterminal-is-defined check for grammars that
  // get their remaining productions appended during schema binding.
  static Grammar from_spec(const std::string& spec_text, bool allow_open = false);

  int symbol_count() const { return static_cast<int>(symbols_.size()); }
  const Symbol& symbol(int id) const { return symbols_[static_cast<size_t>(id)]; }
  bool is_nonterminal(int id) const { return symbol(id).kind == SymbolKind::Nonterminal; }

  // -1 when absent
  int find_symbol(const std::string& name, SymbolKind kind) const;

  const std::vector<Production>& productions() const { return productions_; }
  const Production& production(int id) const { return productions_[static_cast<size_t>(id)]; }
  int production_count() const { return static_cast<int>(productions_.size()); }

  // ids of productions with the given head, in id order
  const std::vector<int>& productions_of(int head) const;

  // -1 when no production has this exact shape
  int production_by_shape(int head, const std::vector<int>& body) const;

  int start() const { return start_; }

  const std::vector<int>& terminal_ids() const { return terminal_ids_; }
  const std::vector<int>& nonterminal_ids() const { return nonterminal_ids_; }

  // Canonical text rendering; equal grammars render identically.
  std::string render() const;
  uint64_t digest() const;
  std::string digest_hex() const { return to_hex(digest()); }

  // Used by schema binding to extend a loaded grammar. Returns the symbol id.
  int intern(const std::string& name, SymbolKind kind);
  // Appends a production; rejects duplicates of an existing shape.
  int add_production(int head, std::vector<int> body);

  // Confirms every referenced nonterminal has a production; open grammars
  // fail here until binding closes them.
  void check_validity() const;

 private:
  friend class GrammarSpecParser;
  std::vector<Symbol> symbols_;
  std::map<std::string, int> terminals_by_name_;
  std::map<std::string, int> nonterminals_by_name_;
  std::vector<Production> productions_;
  std::map<int, std::vector<int>> productions_by_head_;
  std::map<std::pair<int, std::string>, int> productions_by_shape_;
  std::vector<int> terminal_ids_;
  std::vector<int> nonterminal_ids_;
  int start_ = -1;

  static std::string body_key(const std::vector<int>& body);
};

// Syntax mask: one row per nonterminal, bit i set iff production i's head is
// that nonterminal. Rows partition the production space.
class MaskMatrix {
 public:
  static MaskMatrix build(const Grammar& g);

  // Throws when the symbol id is out of range or names a terminal.
  const Bitset& row(const Grammar& g, int nonterminal_id) const;
  const Bitset& row_unchecked(int nonterminal_id) const {
    return rows_.at(static_cast<size_t>(nonterminal_id));
  }

 private:
  // indexed by symbol id; terminal rows stay empty bitsets
  std::vector<Bitset> rows_;
};

}  // namespace qgen
