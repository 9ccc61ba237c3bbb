#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qgen/grammar.hpp"

namespace qgen {

struct Token {
  int terminal;      // symbol id
  std::string text;
  int line;
  int col;           // 1-based, token start
};

// Splits canonical query text on whitespace and punctuation and resolves each
// piece against the grammar's terminal alphabet. Unknown pieces are an error
// with their position.
std::vector<Token> tokenize(const Grammar& g, const std::string& text);

struct ParseNode {
  int symbol;
  std::vector<std::unique_ptr<ParseNode>> children;  // empty on leaves
};

struct ParseTree {
  std::unique_ptr<ParseNode> root;
};

struct ProductionSequence {
  std::vector<int> ids;
  uint64_t grammar_digest = 0;
};

// Table-driven LALR(1) parser. Construction fails with a conflict report when
// the grammar is ambiguous under one-token lookahead.
class LalrTables {
 public:
  static LalrTables build(const Grammar& g);

  ParseTree parse(const Grammar& g, const std::vector<Token>& tokens) const;
  ParseTree parse_text(const Grammar& g, const std::string& text) const;

  int state_count() const { return static_cast<int>(actions_.size()); }

 private:
  struct Action {
    enum Kind : uint8_t { None, Shift, Reduce, Accept } kind = None;
    int target = -1;  // state for shift, production for reduce
  };
  // dense: actions_[state][terminal_index], gotos_[state][nonterminal_index]
  std::vector<std::vector<Action>> actions_;
  std::vector<std::vector<int>> gotos_;
  std::vector<int> term_index_;     // symbol id -> dense terminal index
  std::vector<int> nonterm_index_;  // symbol id -> dense nonterminal index
  std::vector<int> term_ids_;       // dense terminal index -> symbol id
  int end_index_ = -1;

  friend class LalrBuilder;
};

// Preorder walk emitting each internal node's production id; equals the
// leftmost derivation order of the tree.
ProductionSequence tree_to_productions(const Grammar& g, const ParseTree& tree);

// Parses every line-query; collects per-query failures and reports them
// together with their zero-based workload indices.
std::vector<ProductionSequence> workload_to_sequences(const Grammar& g, const LalrTables& tables,
                                                      const std::vector<std::string>& queries);

// Sequence file: '#grammar=<hex>' header line, then one space-separated id
// sequence per line.
void write_sequence_file(const std::string& path, const Grammar& g,
                         const std::vector<ProductionSequence>& seqs);
std::vector<ProductionSequence> read_sequence_file(const std::string& path, const Grammar& g);

}  // namespace qgen
