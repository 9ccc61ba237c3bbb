#pragma once

#include <string>
#include <vector>

#include "qgen/oracle.hpp"
#include "qgen/schema.hpp"
#include "qgen/semantics.hpp"

namespace qgen {

// Exact empirical 1-Wasserstein distance between two multisets: the area
// between their cdfs. Inputs need not be sorted or equally sized.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

struct Kernel {
  enum Type { Linear, Rbf } type = Linear;
  double gamma = 1.0;  // rbf: k(x,y) = exp(-gamma * ||x-y||^2)

  static Kernel linear() { return {Linear, 0.0}; }
  static Kernel rbf(double gamma) { return {Rbf, gamma}; }
  // gamma from the median pairwise distance over the pooled samples
  static Kernel rbf_median(const std::vector<std::vector<double>>& x,
                           const std::vector<std::vector<double>>& y);

  double operator()(const std::vector<double>& a, const std::vector<double>& b) const;
};

// Squared maximum mean discrepancy between two sample sets. The biased
// estimator is exactly 0 on identical sets and never negative beyond
// rounding; the unbiased one can dip below 0 on close distributions.
double mmd(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
           const Kernel& kernel, bool biased = true);

inline constexpr int kSeqGramDim = 512;

// hashed character-3-gram frequency vector of one query text
std::vector<double> char_ngram_embedding(const std::string& text);

// Character-level workload distance: biased squared MMD over 3-gram
// frequency embeddings with an RBF kernel sized by the median heuristic.
// Embeddings are sorted before summation, so query order never matters.
double sequence_mmd(const std::vector<std::string>& a, const std::vector<std::string>& b);

// 1-Wasserstein over one feature: "cardinality", "cost", "length" or
// "joins". Cardinality and cost are log1p-compressed first; their raw
// distances are dominated by the heavy tail.
double feature_wd(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b,
                  const std::string& feature);

struct CorrelationMatrix {
  std::vector<std::string> attrs;          // schema columns, declaration order
  std::vector<std::vector<double>> cells;  // symmetric, entries in [-1, 1]
};

// Pearson correlation of per-query occurrence indicators for every pair of
// schema columns. Attributes with zero occurrence variance correlate 0 with
// everything by convention, their own diagonal included.
CorrelationMatrix attr_correlation(const std::vector<std::string>& workload, const Schema& schema);

// Cosine similarity of the row-concatenated matrices; identical inputs give
// exactly 1.
double matrix_cosine(const CorrelationMatrix& a, const CorrelationMatrix& b);

// mean of max(y, y_hat) / min(y, y_hat); always >= 1, 1 iff all pairs agree
double qerror(const std::vector<double>& truth, const std::vector<double>& estimates);

struct ValidityRates {
  double syntactic = 1.0;
  double semantic = 1.0;
  bool vacuous = false;  // empty workload
};

ValidityRates validity_rates(const std::vector<std::string>& workload, const BoundGrammar& bound);

}  // namespace qgen
