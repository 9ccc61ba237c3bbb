#include "qgen/grammar.hpp"

#include <sstream>

namespace qgen {

namespace {

struct SpecToken {
  enum Kind { Ident, TerminalAtom, Arrow, Pipe, StartDecl, EndOfLine } kind;
  std::string text;
  int line;
  int col;
};

[[noreturn]] void spec_fail(int line, int col, const std::string& msg) {
  std::ostringstream ss;
  ss << "grammar spec error at line " << line << ", column " << col << ": " << msg;
  fail(ss.str());
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

// one line -> tokens; comments stripped
std::vector<SpecToken> lex_line(const std::string& text, int line) {
  std::vector<SpecToken> out;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == '#') break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    int col = static_cast<int>(i) + 1;
    if (c == '\'') {
      size_t j = i + 1;
      std::string atom;
      while (j < text.size() && text[j] != '\'') atom += text[j++];
      if (j >= text.size()) spec_fail(line, col, "unterminated terminal quote");
      if (atom.empty()) spec_fail(line, col, "empty terminal");
      out.push_back({SpecToken::TerminalAtom, atom, line, col});
      i = j + 1;
      continue;
    }
    if (c == '-' && i + 1 < text.size() && text[i + 1] == '>') {
      out.push_back({SpecToken::Arrow, "->", line, col});
      i += 2;
      continue;
    }
    if (c == '|') {
      out.push_back({SpecToken::Pipe, "|", line, col});
      ++i;
      continue;
    }
    if (c == '%') {
      size_t j = i + 1;
      std::string word;
      while (j < text.size() && ident_char(text[j])) word += text[j++];
      if (word != "start") spec_fail(line, col, "unknown directive %" + word);
      out.push_back({SpecToken::StartDecl, "%start", line, col});
      i = j;
      continue;
    }
    if (ident_char(c)) {
      size_t j = i;
      std::string word;
      while (j < text.size() && ident_char(text[j])) word += text[j++];
      out.push_back({SpecToken::Ident, word, line, col});
      i = j;
      continue;
    }
    spec_fail(line, col, std::string("unexpected character '") + c + "'");
  }
  return out;
}

}  // namespace

int Grammar::intern(const std::string& name, SymbolKind kind) {
  auto& index = kind == SymbolKind::Terminal ? terminals_by_name_ : nonterminals_by_name_;
  auto it = index.find(name);
  if (it != index.end()) return it->second;
  int id = static_cast<int>(symbols_.size());
  symbols_.push_back({name, kind});
  index.emplace(name, id);
  (kind == SymbolKind::Terminal ? terminal_ids_ : nonterminal_ids_).push_back(id);
  return id;
}

int Grammar::find_symbol(const std::string& name, SymbolKind kind) const {
  const auto& index = kind == SymbolKind::Terminal ? terminals_by_name_ : nonterminals_by_name_;
  auto it = index.find(name);
  return it == index.end() ? -1 : it->second;
}

std::string Grammar::body_key(const std::vector<int>& body) {
  std::string key;
  for (int s : body) {
    key += std::to_string(s);
    key += ',';
  }
  return key;
}

int Grammar::add_production(int head, std::vector<int> body) {
  if (head < 0 || head >= symbol_count() || !is_nonterminal(head))
    fail("production head must be a nonterminal");
  if (body.empty()) fail("empty production body (epsilon rules are not supported)");
  auto shape = std::make_pair(head, body_key(body));
  if (productions_by_shape_.count(shape))
    fail("duplicate production: " + symbol(head).name);
  int id = static_cast<int>(productions_.size());
  productions_.push_back({id, head, std::move(body)});
  productions_by_head_[head].push_back(id);
  productions_by_shape_.emplace(shape, id);
  return id;
}

const std::vector<int>& Grammar::productions_of(int head) const {
  static const std::vector<int> kEmpty;
  auto it = productions_by_head_.find(head);
  return it == productions_by_head_.end() ? kEmpty : it->second;
}

int Grammar::production_by_shape(int head, const std::vector<int>& body) const {
  auto it = productions_by_shape_.find(std::make_pair(head, body_key(body)));
  return it == productions_by_shape_.end() ? -1 : it->second;
}

void Grammar::check_validity() const {
  if (start_ < 0) fail("grammar spec error: no %start declaration");
  for (const auto& p : productions_) {
    for (int s : p.body) {
      if (is_nonterminal(s) && productions_of(s).empty())
        fail("grammar spec error: nonterminal '" + symbol(s).name +
             "' is referenced but has no production");
    }
  }
  if (productions_of(start_).empty())
    fail("grammar spec error: start symbol '" + symbol(start_).name + "' has no production");
}

Grammar Grammar::from_spec(const std::string& spec_text, bool allow_open) {
  Grammar g;
  std::string start_name;
  int start_line = -1;

  struct PendingRef {
    std::string name;
    int line, col;
  };
  std::vector<PendingRef> nonterminal_refs;

  auto lines = split_on(spec_text, '\n');
  for (size_t li = 0; li < lines.size(); ++li) {
    int line_no = static_cast<int>(li) + 1;
    auto toks = lex_line(lines[li], line_no);
    if (toks.empty()) continue;

    if (toks[0].kind == SpecToken::StartDecl) {
      if (toks.size() != 2 || toks[1].kind != SpecToken::Ident)
        spec_fail(line_no, toks[0].col, "%start expects a single nonterminal name");
      if (start_line >= 0)
        spec_fail(line_no, toks[0].col, "duplicate %start (first at line " +
                                            std::to_string(start_line) + ")");
      start_name = toks[1].text;
      start_line = line_no;
      continue;
    }

    if (toks[0].kind != SpecToken::Ident)
      spec_fail(line_no, toks[0].col, "rule must begin with a nonterminal name");
    if (toks.size() < 2 || toks[1].kind != SpecToken::Arrow)
      spec_fail(line_no, toks.size() < 2 ? toks[0].col : toks[1].col, "expected '->'");

    int head = g.intern(toks[0].text, SymbolKind::Nonterminal);

    std::vector<int> body;
    int alt_col = toks[1].col;
    auto flush = [&](int end_col) {
      if (body.empty()) spec_fail(line_no, end_col, "empty alternative");
      g.add_production(head, body);
      body.clear();
    };
    for (size_t ti = 2; ti < toks.size(); ++ti) {
      const auto& t = toks[ti];
      if (t.kind == SpecToken::Pipe) {
        flush(t.col);
        alt_col = t.col;
        continue;
      }
      if (t.kind == SpecToken::Ident) {
        body.push_back(g.intern(t.text, SymbolKind::Nonterminal));
        nonterminal_refs.push_back({t.text, t.line, t.col});
        continue;
      }
      if (t.kind == SpecToken::TerminalAtom) {
        body.push_back(g.intern(t.text, SymbolKind::Terminal));
        continue;
      }
      spec_fail(t.line, t.col, "unexpected '" + t.text + "' in rule body");
    }
    flush(alt_col);
  }

  if (start_line < 0) fail("grammar spec error: no %start declaration");
  int start_id = g.find_symbol(start_name, SymbolKind::Nonterminal);
  if (start_id < 0 || g.productions_of(start_id).empty())
    fail("grammar spec error: start symbol '" + start_name + "' has no production");
  g.start_ = start_id;

  if (!allow_open) {
    for (const auto& ref : nonterminal_refs) {
      int id = g.find_symbol(ref.name, SymbolKind::Nonterminal);
      if (id < 0 || g.productions_of(id).empty())
        spec_fail(ref.line, ref.col,
                  "nonterminal '" + ref.name + "' is referenced but never defined");
    }
  }

  if (!allow_open) g.check_validity();
  return g;
}

std::string Grammar::render() const {
  std::ostringstream ss;
  ss << "%start " << symbol(start_).name << "\n";
  for (const auto& p : productions_) {
    ss << symbol(p.head).name << " ->";
    for (int s : p.body) {
      if (is_nonterminal(s))
        ss << " " << symbol(s).name;
      else
        ss << " '" << symbol(s).name << "'";
    }
    ss << "\n";
  }
  return ss.str();
}

uint64_t Grammar::digest() const { return fnv1a64(render()); }

MaskMatrix MaskMatrix::build(const Grammar& g) {
  MaskMatrix m;
  m.rows_.resize(static_cast<size_t>(g.symbol_count()));
  for (int v : g.nonterminal_ids()) {
    Bitset row(static_cast<size_t>(g.production_count()));
    for (int pid : g.productions_of(v)) row.set(static_cast<size_t>(pid));
    m.rows_[static_cast<size_t>(v)] = std::move(row);
  }
  return m;
}

const Bitset& MaskMatrix::row(const Grammar& g, int nonterminal_id) const {
  if (nonterminal_id < 0 || nonterminal_id >= g.symbol_count())
    fail("mask row request for unknown symbol id " + std::to_string(nonterminal_id));
  if (!g.is_nonterminal(nonterminal_id))
    fail("mask row request for terminal symbol '" + g.symbol(nonterminal_id).name + "'");
  return rows_[static_cast<size_t>(nonterminal_id)];
}

}  // namespace qgen
