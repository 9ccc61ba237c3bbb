#pragma once

#include <string>
#include <vector>

#include "qgen/preprocess.hpp"
#include "qgen/semantics.hpp"
#include "qgen/util.hpp"

namespace qgen {

inline constexpr int kRandomRetryLimit = 8;

struct RandomGenStats {
  int retries = 0;      // derivations restarted after hitting the step cap
  int relaxations = 0;  // masked-out choices forced by the progress fallback
};

// Uniform choice over the productions surviving both masks at every step.
// A derivation that hits the step cap is retried up to kRandomRetryLimit
// times before the whole call errors out.
std::vector<std::string> random_generate(const BoundGrammar& bound, int n, Rng& rng,
                                         const RuleToggles& toggles = {},
                                         RandomGenStats* stats = nullptr);

// A canonical bucketized query with every bucket key abstracted to the column
// it belongs to. Non-slot tokens are fixed.
struct Template {
  std::vector<RawToken> tokens;
  std::vector<int> slots;            // token indices that held bucket keys
  std::vector<std::string> columns;  // parallel to slots
  int multiplicity = 1;

  std::string skeleton() const;  // slots rendered as {column}
};

// One template per distinct skeleton, in first-seen order; duplicates
// collapse into the multiplicity count.
std::vector<Template> extract_templates(const std::vector<std::string>& canonical_workload,
                                        const BucketMap& map);

// Instantiates n queries. Per-template counts follow the multiplicity mix
// exactly (largest remainder), so the skeleton and length distributions match
// the source; slot values are uniform draws over the column's bucket keys and
// the output order is shuffled.
std::vector<std::string> template_generate(const std::vector<Template>& templates,
                                           const BucketMap& map, int n, Rng& rng);

}  // namespace qgen
