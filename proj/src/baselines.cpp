#include "qgen/baselines.hpp"

#include <algorithm>
#include <map>
#include <utility>

namespace qgen {

std::vector<std::string> random_generate(const BoundGrammar& bound, int n, Rng& rng,
                                         const RuleToggles& toggles, RandomGenStats* stats) {
  if (n < 0) fail("random_generate: n must be >= 0");
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  std::vector<int> choices;
  for (int i = 0; i < n; ++i) {
    bool produced = false;
    for (int attempt = 0; attempt <= kRandomRetryLimit && !produced; ++attempt) {
      SemanticState st(bound, toggles);
      try {
        while (!st.complete()) {
          const Bitset& allowed = st.allowed();
          choices.clear();
          for (int pid : bound.grammar().productions_of(st.expansion_symbol())) {
            if (allowed.test(static_cast<size_t>(pid))) choices.push_back(pid);
          }
          if (choices.empty()) fail("random_generate: no production available");
          st.apply(choices[rng.uniform_index(choices.size())]);
        }
      } catch (const QgError&) {
        if (stats) stats->retries++;
        continue;
      }
      if (stats) stats->relaxations += st.relaxation_count();
      out.push_back(st.rendered());
      produced = true;
    }
    if (!produced)
      fail("random_generate: derivation step cap hit " + std::to_string(kRandomRetryLimit + 1) +
           " times in a row");
  }
  return out;
}

std::string Template::skeleton() const {
  std::vector<RawToken> copy = tokens;
  for (size_t k = 0; k < slots.size(); ++k) {
    copy[static_cast<size_t>(slots[k])].text = "{" + columns[k] + "}";
  }
  return render_raw(copy);
}

std::vector<Template> extract_templates(const std::vector<std::string>& canonical_workload,
                                        const BucketMap& map) {
  std::vector<Template> out;
  std::map<std::string, size_t> seen;
  for (const std::string& q : canonical_workload) {
    Template t;
    t.tokens = raw_tokenize(q);
    for (size_t i = 0; i < t.tokens.size(); ++i) {
      const RawToken& tok = t.tokens[i];
      if (tok.kind != RawToken::Ident) continue;
      const ColumnBuckets* col = map.find_key(tok.text).first;
      if (!col) continue;
      t.slots.push_back(static_cast<int>(i));
      t.columns.push_back(col->column);
    }
    std::string key = t.skeleton();
    auto it = seen.find(key);
    if (it != seen.end()) {
      out[it->second].multiplicity++;
    } else {
      seen.emplace(std::move(key), out.size());
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<std::string> template_generate(const std::vector<Template>& templates,
                                           const BucketMap& map, int n, Rng& rng) {
  if (templates.empty()) fail("template_generate: no templates to instantiate");
  if (n < 0) fail("template_generate: n must be >= 0");
  long long total = 0;
  for (const Template& t : templates) {
    if (t.multiplicity <= 0) fail("template_generate: multiplicity must be positive");
    total += t.multiplicity;
  }

  // integer largest-remainder split of n over the multiplicities
  std::vector<int> counts(templates.size(), 0);
  std::vector<std::pair<long long, size_t>> rem;
  long long assigned = 0;
  for (size_t i = 0; i < templates.size(); ++i) {
    long long num = static_cast<long long>(n) * templates[i].multiplicity;
    counts[i] = static_cast<int>(num / total);
    assigned += counts[i];
    rem.emplace_back(num % total, i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const std::pair<long long, size_t>& a,
                      const std::pair<long long, size_t>& b) { return a.first > b.first; });
  for (long long k = 0; k < n - assigned; ++k) counts[rem[static_cast<size_t>(k)].second]++;

  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  std::vector<RawToken> toks;
  for (size_t i = 0; i < templates.size(); ++i) {
    const Template& t = templates[i];
    for (int c = 0; c < counts[i]; ++c) {
      toks = t.tokens;
      for (size_t k = 0; k < t.slots.size(); ++k) {
        const ColumnBuckets* col = map.find_column(t.columns[k]);
        if (!col || col->buckets.empty())
          fail("template_generate: column '" + t.columns[k] + "' has no buckets");
        toks[static_cast<size_t>(t.slots[k])].text =
            col->buckets[rng.uniform_index(col->buckets.size())].key;
      }
      out.push_back(render_raw(toks));
    }
  }
  for (size_t i = out.size(); i > 1; --i) {
    std::swap(out[i - 1], out[rng.uniform_index(i)]);
  }
  return out;
}

}  // namespace qgen
