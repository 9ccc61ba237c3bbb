#include "qgen/derivation.hpp"

#include <sstream>

namespace qgen {

namespace {

void drain_terminals(const Grammar& g, DerivationState& s) {
  while (!s.stack.empty() && !g.is_nonterminal(s.stack.back())) {
    s.emitted.push_back(s.stack.back());
    s.stack.pop_back();
  }
}

}  // namespace

DerivationState new_derivation(const Grammar& g) {
  DerivationState s;
  s.stack.push_back(g.start());
  return s;
}

std::optional<int> leftmost_nonterminal(const DerivationState& s) {
  if (s.stack.empty()) return std::nullopt;
  return s.stack.back();
}

void apply_production(const Grammar& g, DerivationState& s, int production_id) {
  if (production_id < 0 || production_id >= g.production_count())
    fail("apply_production: unknown production id " + std::to_string(production_id));
  if (s.stack.empty())
    fail("apply_production: derivation is already complete");
  const Production& p = g.production(production_id);
  int top = s.stack.back();
  if (top != p.head) {
    std::ostringstream ss;
    ss << "apply_production: production " << production_id << " expands '"
       << g.symbol(p.head).name << "' but the leftmost nonterminal is '"
       << g.symbol(top).name << "'";
    fail(ss.str());
  }
  s.stack.pop_back();
  for (size_t i = p.body.size(); i-- > 0;) s.stack.push_back(p.body[i]);
  s.consumed += 1;
  drain_terminals(g, s);
}

std::vector<int> productions_to_terminals(const Grammar& g, const std::vector<int>& seq) {
  DerivationState s = new_derivation(g);
  for (size_t i = 0; i < seq.size(); ++i) {
    if (s.stack.empty()) {
      std::ostringstream ss;
      ss << "sequence has " << (seq.size() - i) << " unconsumed production id(s) "
         << "after the derivation completed at position " << i;
      fail(ss.str());
    }
    if (s.consumed >= kMaxDerivationSteps)
      fail("derivation exceeded the step cap of " + std::to_string(kMaxDerivationSteps));
    apply_production(g, s, seq[i]);
  }
  if (!s.stack.empty()) {
    std::ostringstream ss;
    ss << "sequence exhausted with " << s.stack.size()
       << " symbol(s) still pending; next expansion point is '"
       << g.symbol(s.stack.back()).name << "'";
    fail(ss.str());
  }
  return s.emitted;
}

std::string productions_to_query(const Grammar& g, const std::vector<int>& seq) {
  return render_terminals(g, productions_to_terminals(g, seq));
}

std::string render_terminals(const Grammar& g, const std::vector<int>& terminal_ids) {
  std::string out;
  for (size_t i = 0; i < terminal_ids.size(); ++i) {
    if (i) out += ' ';
    out += g.symbol(terminal_ids[i]).name;
  }
  return out;
}

}  // namespace qgen
