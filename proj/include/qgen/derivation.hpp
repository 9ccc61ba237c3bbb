#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qgen/grammar.hpp"

namespace qgen {

// Hard cap on productions applied while replaying or generating one query.
inline constexpr int kMaxDerivationSteps = 512;

// Leftmost derivation driven by a symbol stack. Terminals are emitted the
// moment they reach the stack top, so the top is always a nonterminal (or the
// stack is empty and the derivation is complete).
struct DerivationState {
  std::vector<int> stack;    // symbol ids, top at back()
  std::vector<int> emitted;  // terminal ids in output order
  int consumed = 0;          // productions applied so far
};

DerivationState new_derivation(const Grammar& g);

inline bool derivation_complete(const DerivationState& s) { return s.stack.empty(); }

// Current expansion point; nullopt once the derivation is complete.
std::optional<int> leftmost_nonterminal(const DerivationState& s);

// Applies one production: pops the matching head, pushes the body, then
// drains any terminals now on top. Throws when the head does not match the
// leftmost nonterminal or the derivation is already complete.
void apply_production(const Grammar& g, DerivationState& s, int production_id);

// Replays a whole sequence into a terminal string. Throws when the sequence
// exhausts before the stack empties, or leaves unconsumed ids behind.
std::vector<int> productions_to_terminals(const Grammar& g, const std::vector<int>& seq);
std::string productions_to_query(const Grammar& g, const std::vector<int>& seq);

std::string render_terminals(const Grammar& g, const std::vector<int>& terminal_ids);

}  // namespace qgen
