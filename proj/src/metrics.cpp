#include "qgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "qgen/util.hpp"

namespace qgen {

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) fail("wasserstein_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0;
  size_t j = 0;
  double dist = 0.0;
  double prev = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    double x;
    if (i < a.size() && (j == b.size() || a[i] <= b[j]))
      x = a[i];
    else
      x = b[j];
    dist += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
    prev = x;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return dist;
}

double Kernel::operator()(const std::vector<double>& a, const std::vector<double>& b) const {
  if (a.size() != b.size()) fail("kernel: dimension mismatch");
  if (type == Linear) {
    double dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
  }
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

Kernel Kernel::rbf_median(const std::vector<std::vector<double>>& x,
                          const std::vector<std::vector<double>>& y) {
  std::vector<const std::vector<double>*> pool;
  for (const auto& v : x) pool.push_back(&v);
  for (const auto& v : y) pool.push_back(&v);
  std::vector<double> d2s;
  for (size_t i = 0; i < pool.size(); ++i) {
    for (size_t j = i + 1; j < pool.size(); ++j) {
      const std::vector<double>& a = *pool[i];
      const std::vector<double>& b = *pool[j];
      if (a.size() != b.size()) fail("rbf_median: dimension mismatch");
      double d2 = 0.0;
      for (size_t k = 0; k < a.size(); ++k) {
        double d = a[k] - b[k];
        d2 += d * d;
      }
      d2s.push_back(d2);
    }
  }
  if (d2s.empty()) return rbf(1.0);
  size_t mid = d2s.size() / 2;
  std::nth_element(d2s.begin(), d2s.begin() + static_cast<long>(mid), d2s.end());
  double med2 = d2s[mid];  // median squared distance
  if (med2 <= 0.0) return rbf(1.0);
  return rbf(1.0 / (2.0 * med2));
}

namespace {

double kernel_sum(const std::vector<std::vector<double>>& x,
                  const std::vector<std::vector<double>>& y, const Kernel& k,
                  bool skip_diagonal) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < y.size(); ++j) {
      if (skip_diagonal && i == j) continue;
      s += k(x[i], y[j]);
    }
  }
  return s;
}

}  // namespace

double mmd(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
           const Kernel& kernel, bool biased) {
  if (x.empty() || y.empty()) fail("mmd: empty sample set");
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  const double kxy = kernel_sum(x, y, kernel, false);
  if (biased) {
    const double kxx = kernel_sum(x, x, kernel, false);
    const double kyy = kernel_sum(y, y, kernel, false);
    return kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m);
  }
  if (x.size() < 2 || y.size() < 2) fail("mmd: unbiased estimator needs >= 2 samples per side");
  const double kxx = kernel_sum(x, x, kernel, true);
  const double kyy = kernel_sum(y, y, kernel, true);
  return kxx / (n * (n - 1.0)) + kyy / (m * (m - 1.0)) - 2.0 * kxy / (n * m);
}

std::vector<double> char_ngram_embedding(const std::string& text) {
  std::vector<double> v(kSeqGramDim, 0.0);
  size_t grams = 0;
  if (text.size() < 3) {
    v[fnv1a64(text) % kSeqGramDim] = 1.0;
    return v;
  }
  for (size_t i = 0; i + 3 <= text.size(); ++i) {
    v[fnv1a64(std::string_view(text).substr(i, 3)) % kSeqGramDim] += 1.0;
    ++grams;
  }
  for (double& c : v) c /= static_cast<double>(grams);
  return v;
}

double sequence_mmd(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) fail("sequence_mmd: empty workload");
  std::vector<std::vector<double>> ea;
  std::vector<std::vector<double>> eb;
  ea.reserve(a.size());
  eb.reserve(b.size());
  for (const std::string& q : a) ea.push_back(char_ngram_embedding(q));
  for (const std::string& q : b) eb.push_back(char_ngram_embedding(q));
  std::sort(ea.begin(), ea.end());
  std::sort(eb.begin(), eb.end());
  return mmd(ea, eb, Kernel::rbf_median(ea, eb), true);
}

double feature_wd(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b,
                  const std::string& feature) {
  auto extract = [&](const std::vector<FeatureVector>& fs) {
    std::vector<double> out;
    out.reserve(fs.size());
    for (const FeatureVector& f : fs) {
      if (feature == "cardinality")
        out.push_back(std::log1p(static_cast<double>(f.cardinality)));
      else if (feature == "cost")
        out.push_back(std::log1p(f.cost));
      else if (feature == "length")
        out.push_back(static_cast<double>(f.length));
      else if (feature == "joins")
        out.push_back(static_cast<double>(f.join_count));
      else
        fail("feature_wd: unknown feature '" + feature + "'");
    }
    return out;
  };
  return wasserstein_1d(extract(a), extract(b));
}

CorrelationMatrix attr_correlation(const std::vector<std::string>& workload,
                                   const Schema& schema) {
  CorrelationMatrix out;
  for (const auto& col : schema.columns()) out.attrs.push_back(col.name);
  const size_t k = out.attrs.size();
  const size_t n = workload.size();

  // occurrence indicators by bare column name over the query tokens
  std::vector<std::vector<double>> occ(k, std::vector<double>(n, 0.0));
  for (size_t q = 0; q < n; ++q) {
    std::set<std::string> idents;
    for (const RawToken& t : raw_tokenize(workload[q])) {
      if (t.kind == RawToken::Ident) idents.insert(t.text);
    }
    for (size_t c = 0; c < k; ++c) {
      if (idents.count(out.attrs[c])) occ[c][q] = 1.0;
    }
  }

  std::vector<double> mean(k, 0.0);
  std::vector<double> var(k, 0.0);
  for (size_t c = 0; c < k; ++c) {
    for (size_t q = 0; q < n; ++q) mean[c] += occ[c][q];
    if (n > 0) mean[c] /= static_cast<double>(n);
    for (size_t q = 0; q < n; ++q) {
      double d = occ[c][q] - mean[c];
      var[c] += d * d;
    }
  }

  out.cells.assign(k, std::vector<double>(k, 0.0));
  for (size_t i = 0; i < k; ++i) {
    if (var[i] <= 0.0) continue;
    out.cells[i][i] = 1.0;
    for (size_t j = i + 1; j < k; ++j) {
      if (var[j] <= 0.0) continue;
      double cov = 0.0;
      for (size_t q = 0; q < n; ++q) cov += (occ[i][q] - mean[i]) * (occ[j][q] - mean[j]);
      double r = cov / std::sqrt(var[i] * var[j]);
      r = std::clamp(r, -1.0, 1.0);
      out.cells[i][j] = r;
      out.cells[j][i] = r;
    }
  }
  return out;
}

double matrix_cosine(const CorrelationMatrix& a, const CorrelationMatrix& b) {
  if (a.attrs != b.attrs || a.cells.size() != b.cells.size())
    fail("matrix_cosine: attribute sets differ");
  if (a.cells == b.cells) return 1.0;
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (size_t i = 0; i < a.cells.size(); ++i) {
    if (a.cells[i].size() != b.cells[i].size()) fail("matrix_cosine: shape mismatch");
    for (size_t j = 0; j < a.cells[i].size(); ++j) {
      dot += a.cells[i][j] * b.cells[i][j];
      na += a.cells[i][j] * a.cells[i][j];
      nb += b.cells[i][j] * b.cells[i][j];
    }
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double qerror(const std::vector<double>& truth, const std::vector<double>& estimates) {
  if (truth.size() != estimates.size()) fail("qerror: length mismatch");
  if (truth.empty()) fail("qerror: empty input");
  double s = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] <= 0.0 || estimates[i] <= 0.0) fail("qerror: values must be positive");
    s += std::max(truth[i], estimates[i]) / std::min(truth[i], estimates[i]);
  }
  return s / static_cast<double>(truth.size());
}

ValidityRates validity_rates(const std::vector<std::string>& workload, const BoundGrammar& bound) {
  ValidityRates out;
  if (workload.empty()) {
    out.vacuous = true;
    return out;
  }
  int syn = 0;
  int sem = 0;
  for (const std::string& q : workload) {
    ValidityReport r = validate_query(bound, q);
    syn += r.syntactic ? 1 : 0;
    sem += r.semantic ? 1 : 0;
  }
  out.syntactic = static_cast<double>(syn) / static_cast<double>(workload.size());
  out.semantic = static_cast<double>(sem) / static_cast<double>(workload.size());
  return out;
}

}  // namespace qgen
