#include "qgen/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "qgen/derivation.hpp"
#include "qgen/oracle.hpp"

namespace qgen {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) fail(std::string("training: ") + what + " left the finite range");
}

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

// additive mask rows from the recorded per-step choice sets
Mat masks_to_additive(const std::vector<Bitset>& masks, int production_count) {
  Mat add = Mat::Zero(static_cast<Eigen::Index>(masks.size()), production_count);
  for (size_t t = 0; t < masks.size(); ++t) {
    for (int j = 0; j < production_count; ++j) {
      if (!masks[t].test(static_cast<size_t>(j))) add(static_cast<Eigen::Index>(t), j) = -kMaskPenalty;
    }
  }
  return add;
}

std::vector<int> teacher_input(const GeneratorModel& gen, const std::vector<int>& ids) {
  std::vector<int> in;
  in.push_back(gen.bos_id());
  for (size_t i = 0; i + 1 < ids.size(); ++i) in.push_back(ids[i]);
  return in;
}

struct FakeSample {
  std::vector<int> ids;
  Mat z;
  Mat mask_additive;
  std::string text;
  std::vector<double> features;
};

}  // namespace

TrainingConfig parse_training_config(const std::string& text) {
  TrainingConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("training config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "lr_generator") cfg.lr_generator = std::stod(value);
      else if (key == "lr_discriminator") cfg.lr_discriminator = std::stod(value);
      else if (key == "dropout") cfg.dropout = std::stod(value);
      else if (key == "l2_lambda") cfg.l2_lambda = std::stod(value);
      else if (key == "gradient_penalty_coefficient")
        cfg.gradient_penalty_coefficient = std::stod(value);
      else if (key == "rollout_count") cfg.rollout_count = std::stoi(value);
      else if (key == "rollout_stride") cfg.rollout_stride = std::stoi(value);
      else if (key == "pretrain_epochs") cfg.pretrain_epochs = std::stoi(value);
      else if (key == "adversarial_epochs") cfg.adversarial_epochs = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "holdout_fraction") cfg.holdout_fraction = std::stod(value);
      else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else fail("training config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const QgError&) {
      throw;
    } catch (const std::exception&) {
      fail("training config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  if (cfg.batch_size <= 0) fail("training config: batch_size must be positive");
  if (cfg.rollout_count <= 0) fail("training config: rollout_count must be positive");
  if (cfg.rollout_stride <= 0) fail("training config: rollout_stride must be positive");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    fail("training config: holdout_fraction must sit in [0, 1)");
  return cfg;
}

std::vector<TrainingSequence> prepare_sequences(const BoundGrammar& bound,
                                                const LalrTables& tables,
                                                const std::vector<std::string>& canonical) {
  const Grammar& g = bound.grammar();
  const int P = g.production_count();
  std::vector<TrainingSequence> out;
  out.reserve(canonical.size());
  for (size_t q = 0; q < canonical.size(); ++q) {
    TrainingSequence ts;
    ts.text = canonical[q];
    try {
      ParseTree tree = tables.parse_text(g, canonical[q]);
      ts.ids = tree_to_productions(g, tree).ids;
    } catch (const QgError& e) {
      fail("workload query " + std::to_string(q) + ": " + e.what());
    }
    ts.mask_additive = Mat::Zero(static_cast<Eigen::Index>(ts.ids.size()), P);
    SemanticState st(bound);
    for (size_t t = 0; t < ts.ids.size(); ++t) {
      const Bitset& allowed = st.allowed();
      for (int j = 0; j < P; ++j) {
        if (!allowed.test(static_cast<size_t>(j)))
          ts.mask_additive(static_cast<Eigen::Index>(t), j) = -kMaskPenalty;
      }
      // a corpus choice outside the mask still gets probability mass so its
      // likelihood stays finite; generation itself never leaves the mask
      ts.mask_additive(static_cast<Eigen::Index>(t), ts.ids[t]) = 0.0;
      st.apply(ts.ids[t]);
    }
    if (!st.complete()) fail("workload query " + std::to_string(q) + ": incomplete derivation");
    out.push_back(std::move(ts));
  }
  return out;
}

FeatureNorm featurize_corpus(std::vector<TrainingSequence>& seqs, const Database& db,
                             const BucketMap& map, Rng& rng, int* failures) {
  std::vector<FeatureVector> ok;
  std::vector<int> ok_idx;
  for (size_t i = 0; i < seqs.size(); ++i) {
    try {
      FeatureVector fv = featurize(db, map, seqs[i].text, rng);
      ok.push_back(fv);
      ok_idx.push_back(static_cast<int>(i));
    } catch (const std::exception&) {
      if (failures) ++*failures;
    }
  }
  if (ok.empty()) fail("training: no corpus query survived the evaluator");
  FeatureNorm norm = FeatureNorm::fit(ok);
  for (size_t k = 0; k < ok.size(); ++k)
    seqs[static_cast<size_t>(ok_idx[k])].features = norm.apply(ok[k]);
  return norm;
}

std::string TrainingReport::to_jsonl() const {
  std::string out;
  for (const EpochStats& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"phase", e.phase},
                        {"generator_nll", e.generator_nll},
                        {"holdout_nll", e.holdout_nll},
                        {"discriminator_loss", e.discriminator_loss},
                        {"mean_reward", e.mean_reward},
                        {"baseline", e.baseline},
                        {"syntactic_validity", e.syntactic_validity},
                        {"semantic_validity", e.semantic_validity},
                        {"sample_failures", e.sample_failures},
                        {"feature_failures", e.feature_failures},
                        {"seconds", e.seconds}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainingReport pretrain_mle(Checkpoint& ckpt, const BoundGrammar& bound,
                            const std::vector<TrainingSequence>& corpus,
                            const TrainingConfig& cfg, Rng& rng) {
  if (!ckpt.gen) fail("training: checkpoint holds no generator");
  if (corpus.empty()) fail("training: corpus is empty");
  if (ckpt.gen->production_count() != bound.grammar().production_count())
    fail("training: checkpoint and grammar disagree on production count");
  GeneratorModel& gen = *ckpt.gen;
  for (Param* p : gen.params()) p->g.setZero();
  Adam adam({cfg.lr_generator, 0.9, 0.999, 1e-8, cfg.l2_lambda});

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, rng);
  size_t holdout_count = static_cast<size_t>(cfg.holdout_fraction * corpus.size());
  if (holdout_count >= corpus.size()) holdout_count = corpus.size() - 1;
  std::vector<size_t> train(order.begin(), order.end() - static_cast<long>(holdout_count));
  std::vector<size_t> holdout(order.end() - static_cast<long>(holdout_count), order.end());

  auto sequence_loss = [&](const TrainingSequence& ts, double denom, double dropout,
                           bool learn) -> double {
    Tape t;
    Mat z = gen.prior_sample(rng);
    int probs = gen.build_policy(t, z, teacher_input(gen, ts.ids), ts.mask_additive, dropout,
                                 dropout > 0.0 ? &rng : nullptr);
    std::vector<double> weights(ts.ids.size(), 1.0);
    int loss = t.weighted_nll(probs, ts.ids, weights, denom);
    double v = t.value(loss)(0, 0);
    require_finite(v, "pretraining loss");
    if (learn) t.backward(loss);
    return v;
  };

  TrainingReport report;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    shuffle_indices(train, rng);
    double nll_sum = 0.0;
    long long tokens = 0;
    for (size_t at = 0; at < train.size(); at += static_cast<size_t>(cfg.batch_size)) {
      size_t bend = std::min(train.size(), at + static_cast<size_t>(cfg.batch_size));
      double batch = static_cast<double>(bend - at);
      for (size_t i = at; i < bend; ++i) {
        const TrainingSequence& ts = corpus[train[i]];
        double T = static_cast<double>(ts.ids.size());
        double v = sequence_loss(ts, T * batch, cfg.dropout, true);
        nll_sum += v * T * batch;
        tokens += ts.ids.size();
      }
      adam.step(gen.params());
    }
    EpochStats st;
    st.epoch = epoch;
    st.phase = "pretrain";
    st.generator_nll = tokens > 0 ? nll_sum / static_cast<double>(tokens) : 0.0;
    if (holdout.empty()) {
      st.holdout_nll = st.generator_nll;
    } else {
      double hsum = 0.0;
      long long htokens = 0;
      for (size_t i : holdout) {
        const TrainingSequence& ts = corpus[i];
        double T = static_cast<double>(ts.ids.size());
        hsum += sequence_loss(ts, T, 0.0, false) * T;
        htokens += ts.ids.size();
      }
      st.holdout_nll = hsum / static_cast<double>(htokens);
    }
    st.seconds = seconds_since(t0);
    report.epochs.push_back(st);
  }
  return report;
}

double rollout_value(const GeneratorModel& gen, const DiscriminatorModel& disc,
                     const BoundGrammar& bound, const FeatureNorm& norm, const Database& db,
                     const BucketMap& map, const Mat& z, const std::vector<int>& prefix,
                     int completions, Rng& rng) {
  if (completions <= 0) fail("rollout_value: completions must be positive");
  SemanticState base(bound);
  for (int id : prefix) base.apply(id);

  const int cap = std::min(gen.config().max_len, kMaxDerivationSteps);
  auto score_of = [&](const std::vector<int>& ids, const std::string& text,
                      double* out) -> bool {
    FeatureVector fv;
    try {
      fv = featurize(db, map, text, rng);
    } catch (const std::exception&) {
      return false;
    }
    *out = discriminator_score(disc, ids, norm.apply(fv));
    return true;
  };

  if (base.complete()) {
    double s = 0.5;
    score_of(prefix, base.rendered(), &s);
    return s;
  }

  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < completions; ++k) {
    SemanticState st = base;
    std::vector<int> ids = prefix;
    bool aborted = false;
    while (!st.complete()) {
      if (static_cast<int>(ids.size()) >= cap) {
        aborted = true;
        break;
      }
      std::vector<double> v = gen.step_probabilities(z, ids);
      const Bitset& syntax = bound.syntax_masks().row_unchecked(st.expansion_symbol());
      std::vector<double> probs = masked_probabilities(v, syntax, st.semantic_mask());
      int pick = static_cast<int>(rng.pick_weighted(probs));
      st.apply(pick);
      ids.push_back(pick);
    }
    if (aborted) continue;
    double s = 0.0;
    if (!score_of(ids, st.rendered(), &s)) continue;
    sum += s;
    ++counted;
  }
  return counted > 0 ? sum / counted : 0.5;
}

double gradient_penalty(DiscriminatorModel& disc, const Mat& embedded_input, double scale) {
  std::vector<Mat> saved;
  saved.reserve(disc.params().size());
  for (Param* p : disc.params()) saved.push_back(p->g);

  Tape probe;
  int x = probe.input(embedded_input);
  int score = disc.build_score_from(probe, x, 0.0, nullptr);
  probe.backward(score);
  Mat g = probe.grad(x);

  // the probe sweep was only for the input gradient
  for (size_t i = 0; i < saved.size(); ++i) disc.params()[i]->g = saved[i];

  double gnorm = g.norm();
  double value = (gnorm - 1.0) * (gnorm - 1.0);
  if (scale == 0.0 || gnorm < 1e-8) return value;

  // d(value)/dtheta = 2 (|g| - 1) / |g| * d/dtheta (g . grad_x D), estimated
  // with central differences along g
  const double h = 1e-4 / std::max(1.0, gnorm);
  const double coeff = scale * 2.0 * (gnorm - 1.0) / gnorm / (2.0 * h);
  {
    Tape t;
    int s = disc.build_score_from(t, t.constant(embedded_input + h * g), 0.0, nullptr);
    t.backward(t.scale(s, coeff));
  }
  {
    Tape t;
    int s = disc.build_score_from(t, t.constant(embedded_input - h * g), 0.0, nullptr);
    t.backward(t.scale(s, -coeff));
  }
  return value;
}

TrainingReport train_adversarial(Checkpoint& ckpt, const BoundGrammar& bound,
                                 const std::vector<TrainingSequence>& corpus, const Database& db,
                                 const BucketMap& map, const TrainingConfig& cfg, Rng& rng,
                                 int first_epoch, const std::string& checkpoint_path) {
  if (!ckpt.gen || !ckpt.disc) fail("training: checkpoint holds no models");
  GeneratorModel& gen = *ckpt.gen;
  DiscriminatorModel& disc = *ckpt.disc;

  std::vector<size_t> usable;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].features.empty()) usable.push_back(i);
  }
  if (usable.empty()) fail("training: no corpus query carries features");

  for (Param* p : gen.params()) p->g.setZero();
  for (Param* p : disc.params()) p->g.setZero();
  Adam adam_g({cfg.lr_generator, 0.9, 0.999, 1e-8, cfg.l2_lambda});
  Adam adam_d({cfg.lr_discriminator, 0.9, 0.999, 1e-8, cfg.l2_lambda});
  const int P = gen.production_count();
  const Mat one = Mat::Ones(1, 1);
  double baseline = 0.5;

  TrainingReport report;
  for (int epoch = 0; epoch < cfg.adversarial_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = first_epoch + epoch;
    st.phase = "adversarial";

    shuffle_indices(usable, rng);
    size_t real_count = std::min(usable.size(), static_cast<size_t>(cfg.batch_size));

    std::vector<FakeSample> fakes;
    int attempts = 0;
    while (fakes.size() < static_cast<size_t>(cfg.batch_size) &&
           attempts < cfg.batch_size * 4) {
      ++attempts;
      SampleResult r = sample_sequence(gen, bound, RuleToggles{}, rng);
      if (!r.ok) {
        ++st.sample_failures;
        continue;
      }
      FakeSample f;
      f.ids = r.seq;
      f.z = r.z;
      f.mask_additive = masks_to_additive(r.masks, P);
      f.text = r.rendered;
      try {
        f.features = ckpt.norm.apply(featurize(db, map, f.text, rng));
      } catch (const std::exception&) {
        ++st.feature_failures;
        continue;
      }
      fakes.push_back(std::move(f));
    }
    if (fakes.empty()) fail("training: every generation attempt failed");

    int valid_syntax = 0;
    int valid_semantic = 0;
    for (const FakeSample& f : fakes) {
      ValidityReport vr = validate_query(bound, f.text);
      valid_syntax += vr.syntactic ? 1 : 0;
      valid_semantic += vr.semantic ? 1 : 0;
    }
    st.syntactic_validity = static_cast<double>(valid_syntax) / fakes.size();
    st.semantic_validity = static_cast<double>(valid_semantic) / fakes.size();

    if (cfg.lr_discriminator > 0.0) {
      double dloss = 0.0;
      for (size_t i = 0; i < real_count; ++i) {
        const TrainingSequence& ts = corpus[usable[i]];
        Tape t;
        int score = disc.build_score(t, ts.features, ts.ids, cfg.dropout, &rng);
        int loss = t.weighted_nll(score, {0}, {1.0}, static_cast<double>(real_count));
        dloss += t.value(loss)(0, 0);
        t.backward(loss);
      }
      for (const FakeSample& f : fakes) {
        Tape t;
        int score = disc.build_score(t, f.features, f.ids, cfg.dropout, &rng);
        int flipped = t.add(t.constant(one), t.scale(score, -1.0));
        int loss = t.weighted_nll(flipped, {0}, {1.0}, static_cast<double>(fakes.size()));
        dloss += t.value(loss)(0, 0);
        t.backward(loss);
      }
      size_t pairs = std::min(real_count, fakes.size());
      for (size_t i = 0; i < pairs && cfg.gradient_penalty_coefficient > 0.0; ++i) {
        const TrainingSequence& ts = corpus[usable[i]];
        Mat er, ef;
        {
          Tape t;
          er = t.value(disc.build_input(t, ts.features, ts.ids));
        }
        {
          Tape t;
          ef = t.value(disc.build_input(t, fakes[i].features, fakes[i].ids));
        }
        Eigen::Index rows = std::min(er.rows(), ef.rows());
        double eps = rng.unit();
        Mat mixed = eps * er.topRows(rows) + (1.0 - eps) * ef.topRows(rows);
        double gp = gradient_penalty(disc, mixed,
                                     cfg.gradient_penalty_coefficient / static_cast<double>(pairs));
        dloss += cfg.gradient_penalty_coefficient * gp / static_cast<double>(pairs);
      }
      require_finite(dloss, "discriminator loss");
      st.discriminator_loss = dloss;
      adam_d.step(disc.params());
    }

    if (cfg.lr_generator > 0.0) {
      double reward_sum = 0.0;
      double chunk_mean_sum = 0.0;
      double surrogate = 0.0;
      for (const FakeSample& f : fakes) {
        const int T = static_cast<int>(f.ids.size());
        std::vector<double> q(static_cast<size_t>(T), 0.0);
        int prev = -1;
        double qsum = 0.0;
        for (int t = cfg.rollout_stride - 1; t < T || prev < T - 1;
             t += cfg.rollout_stride) {
          int at = std::min(t, T - 1);
          std::vector<int> prefix(f.ids.begin(), f.ids.begin() + at + 1);
          double value = rollout_value(gen, disc, bound, ckpt.norm, db, map, f.z, prefix,
                                       cfg.rollout_count, rng);
          for (int j = prev + 1; j <= at; ++j) q[static_cast<size_t>(j)] = value;
          prev = at;
          if (at == T - 1) break;
        }
        for (double v : q) qsum += v;
        reward_sum += q.back();
        chunk_mean_sum += qsum / T;

        std::vector<double> advantages(q.size());
        for (size_t j = 0; j < q.size(); ++j) advantages[j] = q[j] - baseline;
        Tape t;
        int probs = gen.build_policy(t, f.z, teacher_input(gen, f.ids), f.mask_additive, 0.0,
                                     nullptr);
        int loss = t.weighted_nll(probs, f.ids, advantages,
                                  static_cast<double>(T) * fakes.size());
        surrogate += t.value(loss)(0, 0);
        t.backward(loss);
      }
      require_finite(surrogate, "policy loss");
      st.generator_nll = surrogate;
      st.mean_reward = reward_sum / fakes.size();
      baseline = 0.9 * baseline + 0.1 * (chunk_mean_sum / fakes.size());
      adam_g.step(gen.params());
    }
    st.baseline = baseline;

    st.seconds = seconds_since(t0);
    report.epochs.push_back(st);
    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0) {
      ckpt.save(checkpoint_path);
    }
  }
  if (!checkpoint_path.empty()) ckpt.save(checkpoint_path);
  return report;
}

}  // namespace qgen
