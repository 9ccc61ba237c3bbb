#include "qgen/parser.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace qgen {

namespace {

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
}

}  // namespace

std::vector<Token> tokenize(const Grammar& g, const std::string& text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t n) {
    for (size_t k = 0; k < n; ++k) {
      if (text[i + k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    i += n;
  };
  auto emit = [&](const std::string& piece, int tline, int tcol) {
    int id = g.find_symbol(piece, SymbolKind::Terminal);
    if (id < 0) {
      std::ostringstream ss;
      ss << "unknown token '" << piece << "' at line " << tline << ", column " << tcol;
      fail(ss.str());
    }
    out.push_back({id, piece, tline, tcol});
  };

  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    int tline = line, tcol = col;
    if (c == '(' || c == ')' || c == ',' || c == '*') {
      emit(std::string(1, c), tline, tcol);
      advance(1);
      continue;
    }
    if (c == '<' || c == '>' || c == '!' || c == '=') {
      size_t len = (i + 1 < text.size() && text[i + 1] == '=') ? 2 : 1;
      emit(text.substr(i, len), tline, tcol);
      advance(len);
      continue;
    }
    if (word_char(c)) {
      size_t j = i;
      while (j < text.size() && word_char(text[j])) ++j;
      emit(text.substr(i, j - i), tline, tcol);
      advance(j - i);
      continue;
    }
    std::ostringstream ss;
    ss << "unknown token '" << c << "' at line " << tline << ", column " << tcol;
    fail(ss.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// LALR(1) construction. LR(0) cores identify states; lookaheads are pushed
// through the transition graph until they stop growing, which lands on the
// same tables as merging the canonical LR(1) collection.
// ---------------------------------------------------------------------------

class LalrBuilder {
 public:
  explicit LalrBuilder(const Grammar& g) : g_(g), aug_body_{g.start()} {}

  LalrTables run();

 private:
  struct Item {
    int prod;  // production id, or kAugmented
    int dot;
    bool operator<(const Item& o) const {
      return prod != o.prod ? prod < o.prod : dot < o.dot;
    }
    bool operator==(const Item& o) const { return prod == o.prod && dot == o.dot; }
  };

  static constexpr int kAugmented = -1;

  struct State {
    std::vector<Item> kernel;             // sorted
    std::vector<Bitset> lookahead;        // parallel to kernel
    std::map<int, int> transitions;       // symbol id -> state index
  };

  const Grammar& g_;
  std::vector<int> term_index_, term_ids_;
  int end_index_ = -1;
  std::vector<Bitset> first_;  // per symbol id, over dense terminal space (+end unused)
  std::vector<State> states_;
  std::map<std::vector<Item>, int> state_by_kernel_;

  std::vector<int> aug_body_;

  const std::vector<int>& body_of(int prod) const {
    return prod == kAugmented ? aug_body_ : g_.production(prod).body;
  }
  int head_of(int prod) const { return prod == kAugmented ? -2 : g_.production(prod).head; }

  void compute_first();
  // full closure of a state: items with lookaheads
  std::map<Item, Bitset> closure(const State& s) const;
  std::string render_item(const Item& it) const;
  std::string terminal_name(int dense) const;
};

void LalrBuilder::compute_first() {
  term_index_.assign(static_cast<size_t>(g_.symbol_count()), -1);
  for (int t : g_.terminal_ids()) {
    term_index_[static_cast<size_t>(t)] = static_cast<int>(term_ids_.size());
    term_ids_.push_back(t);
  }
  end_index_ = static_cast<int>(term_ids_.size());
  size_t width = term_ids_.size() + 1;  // + end marker

  first_.assign(static_cast<size_t>(g_.symbol_count()), Bitset(width));
  for (int t : g_.terminal_ids())
    first_[static_cast<size_t>(t)].set(static_cast<size_t>(term_index_[static_cast<size_t>(t)]));

  // no epsilon productions, so FIRST of a body is FIRST of its first symbol
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& p : g_.productions()) {
      Bitset& dst = first_[static_cast<size_t>(p.head)];
      const Bitset& src = first_[static_cast<size_t>(p.body[0])];
      size_t before = dst.count();
      dst |= src;
      if (dst.count() != before) changed = true;
    }
  }
}

std::map<LalrBuilder::Item, Bitset> LalrBuilder::closure(const State& s) const {
  size_t width = term_ids_.size() + 1;
  std::map<Item, Bitset> items;
  for (size_t k = 0; k < s.kernel.size(); ++k) items[s.kernel[k]] = s.lookahead[k];

  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& [it, la] : items) {
      const auto& body = body_of(it.prod);
      if (it.dot >= static_cast<int>(body.size())) continue;
      int sym = body[static_cast<size_t>(it.dot)];
      if (!g_.is_nonterminal(sym)) continue;
      Bitset follow(width);
      if (it.dot + 1 < static_cast<int>(body.size()))
        follow = first_[static_cast<size_t>(body[static_cast<size_t>(it.dot) + 1])];
      else
        follow = la;
      for (int q : g_.productions_of(sym)) {
        Item ni{q, 0};
        auto [pos, inserted] = items.emplace(ni, Bitset(width));
        size_t before = pos->second.count();
        pos->second |= follow;
        if (inserted || pos->second.count() != before) changed = true;
      }
    }
  }
  return items;
}

std::string LalrBuilder::terminal_name(int dense) const {
  if (dense == end_index_) return "<end>";
  return "'" + g_.symbol(term_ids_[static_cast<size_t>(dense)]).name + "'";
}

std::string LalrBuilder::render_item(const Item& it) const {
  std::ostringstream ss;
  if (it.prod == kAugmented)
    ss << "<start'>";
  else
    ss << g_.symbol(head_of(it.prod)).name;
  ss << " ->";
  const auto& body = body_of(it.prod);
  for (size_t i = 0; i <= body.size(); ++i) {
    if (static_cast<int>(i) == it.dot) ss << " .";
    if (i < body.size()) ss << " " << g_.symbol(body[i]).name;
  }
  return ss.str();
}

LalrTables LalrBuilder::run() {
  compute_first();
  size_t width = term_ids_.size() + 1;

  {
    State s0;
    s0.kernel.push_back({kAugmented, 0});
    Bitset la(width);
    la.set(static_cast<size_t>(end_index_));
    s0.lookahead.push_back(la);
    state_by_kernel_.emplace(s0.kernel, 0);
    states_.push_back(std::move(s0));
  }

  std::vector<int> worklist{0};
  while (!worklist.empty()) {
    int si = worklist.back();
    worklist.pop_back();
    auto items = closure(states_[static_cast<size_t>(si)]);

    // successor kernels grouped by transition symbol
    std::map<int, std::pair<std::vector<Item>, std::vector<Bitset>>> succ;
    for (const auto& [it, la] : items) {
      const auto& body = body_of(it.prod);
      if (it.dot >= static_cast<int>(body.size())) continue;
      int sym = body[static_cast<size_t>(it.dot)];
      auto& [kernel, las] = succ[sym];
      kernel.push_back({it.prod, it.dot + 1});
      las.push_back(la);
    }

    for (auto& [sym, ker] : succ) {
      auto& [kernel, las] = ker;
      // sort kernel and lookaheads together
      std::vector<size_t> order(kernel.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](size_t a, size_t b) { return kernel[a] < kernel[b]; });
      std::vector<Item> skern;
      std::vector<Bitset> sla;
      for (size_t i : order) {
        skern.push_back(kernel[i]);
        sla.push_back(las[i]);
      }

      auto found = state_by_kernel_.find(skern);
      int ti;
      bool grew = false;
      if (found == state_by_kernel_.end()) {
        ti = static_cast<int>(states_.size());
        State ns;
        ns.kernel = skern;
        ns.lookahead = sla;
        state_by_kernel_.emplace(skern, ti);
        states_.push_back(std::move(ns));
        grew = true;
      } else {
        ti = found->second;
        State& target = states_[static_cast<size_t>(ti)];
        for (size_t i = 0; i < skern.size(); ++i) {
          size_t before = target.lookahead[i].count();
          target.lookahead[i] |= sla[i];
          if (target.lookahead[i].count() != before) grew = true;
        }
      }
      states_[static_cast<size_t>(si)].transitions[sym] = ti;
      if (grew) worklist.push_back(ti);
    }
  }

  // tables
  LalrTables t;
  t.term_index_ = term_index_;
  t.term_ids_ = term_ids_;
  t.end_index_ = end_index_;
  t.nonterm_index_.assign(static_cast<size_t>(g_.symbol_count()), -1);
  int nt_count = 0;
  for (int v : g_.nonterminal_ids()) t.nonterm_index_[static_cast<size_t>(v)] = nt_count++;

  t.actions_.assign(states_.size(), std::vector<LalrTables::Action>(width));
  t.gotos_.assign(states_.size(), std::vector<int>(static_cast<size_t>(nt_count), -1));

  std::vector<std::string> conflicts;
  auto set_action = [&](int state, int dense_term, LalrTables::Action a,
                        const std::string& item_desc) {
    auto& slot = t.actions_[static_cast<size_t>(state)][static_cast<size_t>(dense_term)];
    if (slot.kind == LalrTables::Action::None) {
      slot = a;
      return;
    }
    if (slot.kind == a.kind && slot.target == a.target) return;
    std::ostringstream ss;
    ss << "state " << state << " on " << terminal_name(dense_term) << ": "
       << (slot.kind == LalrTables::Action::Shift ? "shift" : "reduce") << "/"
       << (a.kind == LalrTables::Action::Shift ? "shift" : "reduce") << " conflict at item "
       << item_desc;
    conflicts.push_back(ss.str());
  };

  for (size_t si = 0; si < states_.size(); ++si) {
    auto items = closure(states_[si]);
    for (const auto& [it, la] : items) {
      const auto& body = body_of(it.prod);
      if (it.dot < static_cast<int>(body.size())) {
        int sym = body[static_cast<size_t>(it.dot)];
        if (!g_.is_nonterminal(sym)) {
          int dense = term_index_[static_cast<size_t>(sym)];
          int target = states_[si].transitions.at(sym);
          set_action(static_cast<int>(si), dense,
                     {LalrTables::Action::Shift, target}, render_item(it));
        }
      } else {
        if (it.prod == kAugmented) {
          set_action(static_cast<int>(si), end_index_,
                     {LalrTables::Action::Accept, -1}, render_item(it));
          continue;
        }
        for (size_t d = 0; d < width; ++d) {
          if (!la.test(d)) continue;
          set_action(static_cast<int>(si), static_cast<int>(d),
                     {LalrTables::Action::Reduce, it.prod}, render_item(it));
        }
      }
    }
    for (const auto& [sym, target] : states_[si].transitions) {
      if (g_.is_nonterminal(sym))
        t.gotos_[si][static_cast<size_t>(t.nonterm_index_[static_cast<size_t>(sym)])] = target;
    }
  }

  if (!conflicts.empty()) {
    std::ostringstream ss;
    ss << "grammar is not LALR(1); " << conflicts.size() << " conflict(s):";
    for (const auto& c : conflicts) ss << "\n  " << c;
    fail(ss.str());
  }
  return t;
}

LalrTables LalrTables::build(const Grammar& g) {
  g.check_validity();
  return LalrBuilder(g).run();
}

ParseTree LalrTables::parse(const Grammar& g, const std::vector<Token>& tokens) const {
  std::vector<int> state_stack{0};
  std::vector<std::unique_ptr<ParseNode>> node_stack;

  size_t pos = 0;
  auto current_dense = [&]() -> int {
    if (pos < tokens.size()) return term_index_[static_cast<size_t>(tokens[pos].terminal)];
    return end_index_;
  };
  auto describe_position = [&]() -> std::string {
    std::ostringstream ss;
    if (pos < tokens.size())
      ss << "token '" << tokens[pos].text << "' at line " << tokens[pos].line << ", column "
         << tokens[pos].col;
    else
      ss << "end of input";
    return ss.str();
  };

  while (true) {
    int dense = current_dense();
    const Action& a = actions_[static_cast<size_t>(state_stack.back())][static_cast<size_t>(dense)];
    switch (a.kind) {
      case Action::Shift: {
        auto leaf = std::make_unique<ParseNode>();
        leaf->symbol = tokens[pos].terminal;
        node_stack.push_back(std::move(leaf));
        state_stack.push_back(a.target);
        ++pos;
        break;
      }
      case Action::Reduce: {
        const Production& p = g.production(a.target);
        auto node = std::make_unique<ParseNode>();
        node->symbol = p.head;
        size_t n = p.body.size();
        node->children.resize(n);
        for (size_t i = n; i-- > 0;) {
          node->children[i] = std::move(node_stack.back());
          node_stack.pop_back();
          state_stack.pop_back();
        }
        int goto_state =
            gotos_[static_cast<size_t>(state_stack.back())]
                  [static_cast<size_t>(nonterm_index_[static_cast<size_t>(p.head)])];
        if (goto_state < 0) fail("internal parser error: missing goto");
        node_stack.push_back(std::move(node));
        state_stack.push_back(goto_state);
        break;
      }
      case Action::Accept: {
        ParseTree tree;
        tree.root = std::move(node_stack.back());
        return tree;
      }
      case Action::None: {
        std::ostringstream ss;
        ss << "parse error: unexpected " << describe_position() << "; expected one of:";
        int listed = 0;
        const auto& row = actions_[static_cast<size_t>(state_stack.back())];
        for (size_t d = 0; d < row.size(); ++d) {
          if (row[d].kind == Action::None) continue;
          ss << " "
             << (static_cast<int>(d) == end_index_
                     ? std::string("<end>")
                     : g.symbol(term_ids_[d]).name);
          if (++listed >= 12) {
            ss << " ...";
            break;
          }
        }
        fail(ss.str());
      }
    }
  }
}

ParseTree LalrTables::parse_text(const Grammar& g, const std::string& text) const {
  return parse(g, tokenize(g, text));
}

namespace {

void preorder_productions(const Grammar& g, const ParseNode& node, std::vector<int>& out) {
  if (node.children.empty()) return;  // terminal leaf
  std::vector<int> body;
  body.reserve(node.children.size());
  for (const auto& c : node.children) body.push_back(c->symbol);
  int pid = g.production_by_shape(node.symbol, body);
  if (pid < 0)
    fail("parse tree node does not match any production of '" + g.symbol(node.symbol).name + "'");
  out.push_back(pid);
  for (const auto& c : node.children) preorder_productions(g, *c, out);
}

}  // namespace

ProductionSequence tree_to_productions(const Grammar& g, const ParseTree& tree) {
  if (!tree.root) fail("tree_to_productions: empty tree");
  ProductionSequence seq;
  seq.grammar_digest = g.digest();
  preorder_productions(g, *tree.root, seq.ids);
  return seq;
}

std::vector<ProductionSequence> workload_to_sequences(const Grammar& g, const LalrTables& tables,
                                                      const std::vector<std::string>& queries) {
  std::vector<ProductionSequence> out;
  std::vector<std::string> errors;
  for (size_t i = 0; i < queries.size(); ++i) {
    try {
      out.push_back(tree_to_productions(g, tables.parse_text(g, queries[i])));
    } catch (const std::exception& e) {
      errors.push_back("query " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::ostringstream ss;
    ss << errors.size() << " of " << queries.size() << " queries failed to parse:";
    size_t shown = std::min<size_t>(errors.size(), 8);
    for (size_t i = 0; i < shown; ++i) ss << "\n  " << errors[i];
    if (errors.size() > shown) ss << "\n  ...";
    fail(ss.str());
  }
  return out;
}

void write_sequence_file(const std::string& path, const Grammar& g,
                         const std::vector<ProductionSequence>& seqs) {
  std::ostringstream ss;
  ss << "#grammar=" << g.digest_hex() << "\n";
  for (const auto& s : seqs) {
    for (size_t i = 0; i < s.ids.size(); ++i) {
      if (i) ss << ' ';
      ss << s.ids[i];
    }
    ss << "\n";
  }
  write_text_file(path, ss.str());
}

std::vector<ProductionSequence> read_sequence_file(const std::string& path, const Grammar& g) {
  std::string text = read_text_file(path);
  auto lines = split_on(text, '\n');
  std::vector<ProductionSequence> out;
  bool digest_seen = false;
  for (size_t li = 0; li < lines.size(); ++li) {
    std::string line = trim(lines[li]);
    if (line.empty()) continue;
    if (starts_with(line, "#grammar=")) {
      std::string hex = line.substr(9);
      if (hex != g.digest_hex())
        fail("sequence file was produced for grammar " + hex + " but the loaded grammar is " +
             g.digest_hex());
      digest_seen = true;
      continue;
    }
    if (line[0] == '#') continue;
    ProductionSequence seq;
    seq.grammar_digest = g.digest();
    for (const auto& piece : split_ws(line)) {
      try {
        size_t used = 0;
        int v = std::stoi(piece, &used);
        if (used != piece.size()) throw std::invalid_argument(piece);
        if (v < 0 || v >= g.production_count())
          fail("sequence file line " + std::to_string(li + 1) + ": production id " + piece +
               " is out of range");
        seq.ids.push_back(v);
      } catch (const std::invalid_argument&) {
        fail("sequence file line " + std::to_string(li + 1) + ": malformed id '" + piece + "'");
      } catch (const std::out_of_range&) {
        fail("sequence file line " + std::to_string(li + 1) + ": malformed id '" + piece + "'");
      }
    }
    out.push_back(std::move(seq));
  }
  if (!digest_seen)
    fail("sequence file is missing its #grammar= header: " + path);
  return out;
}

}  // namespace qgen
