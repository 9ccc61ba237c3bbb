#include "qgen/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "qgen/derivation.hpp"

namespace qgen {

std::vector<double> masked_probabilities(const std::vector<double>& v, const Bitset& syntax_mask,
                                         const Bitset& semantic_mask) {
  if (syntax_mask.size() != v.size() || semantic_mask.size() != v.size())
    fail("masked_probabilities: mask length mismatch");
  std::vector<double> out(v.size(), 0.0);
  double mass = 0.0;
  size_t survivors = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!syntax_mask.test(i) || !semantic_mask.test(i)) continue;
    ++survivors;
    out[i] = v[i];
    mass += v[i];
  }
  if (survivors == 0) fail("masked_probabilities: all productions masked");
  if (mass <= 0.0) {
    // every surviving entry underflowed; fall back to uniform over survivors
    for (size_t i = 0; i < v.size(); ++i) {
      if (syntax_mask.test(i) && semantic_mask.test(i))
        out[i] = 1.0 / static_cast<double>(survivors);
    }
    return out;
  }
  for (double& p : out) p /= mass;
  return out;
}

FeatureNorm FeatureNorm::fit(const std::vector<FeatureVector>& fs) {
  FeatureNorm n;
  n.names = {"cardinality", "cost", "length", "joins", "nested"};
  n.lo.assign(n.names.size(), 0.0);
  n.hi.assign(n.names.size(), 0.0);
  bool first = true;
  for (const FeatureVector& f : fs) {
    std::vector<double> raw = {std::log1p(static_cast<double>(f.cardinality)),
                               std::log1p(f.cost), std::log1p(static_cast<double>(f.length)),
                               std::log1p(static_cast<double>(f.join_count)),
                               f.nested ? 1.0 : 0.0};
    for (size_t i = 0; i < raw.size(); ++i) {
      if (first || raw[i] < n.lo[i]) n.lo[i] = raw[i];
      if (first || raw[i] > n.hi[i]) n.hi[i] = raw[i];
    }
    first = false;
  }
  return n;
}

std::vector<double> FeatureNorm::apply(const FeatureVector& f) const {
  std::vector<double> raw = {std::log1p(static_cast<double>(f.cardinality)), std::log1p(f.cost),
                             std::log1p(static_cast<double>(f.length)),
                             std::log1p(static_cast<double>(f.join_count)),
                             f.nested ? 1.0 : 0.0};
  if (lo.size() != raw.size() || hi.size() != raw.size())
    fail("feature norm: not fitted for this feature set");
  std::vector<double> out(raw.size(), 0.5);
  for (size_t i = 0; i < raw.size(); ++i) {
    double span = hi[i] - lo[i];
    if (span < 1e-12) continue;  // constant feature over the fit set
    out[i] = std::clamp((raw[i] - lo[i]) / span, 0.0, 1.0);
  }
  return out;
}

namespace {

std::unique_ptr<Param> make_param(const std::string& name, int rows, int cols,
                                  std::vector<Param*>& registry) {
  auto p = std::make_unique<Param>(name, rows, cols);
  registry.push_back(p.get());
  return p;
}

constexpr double kInitStd = 0.05;

// weight matrices get random init; biases and layernorm offsets start at zero
bool wants_random_init(const std::string& name) {
  size_t dot = name.rfind('.');
  std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "embed" || leaf == "pos" || (!leaf.empty() && leaf[0] == 'w');
}

}  // namespace

TransformerLayer::TransformerLayer(const std::string& prefix, const ModelConfig& cfg,
                                   bool cross_attention, std::vector<Param*>& registry)
    : d_model_(cfg.d_model) {
  if (cfg.d_model % cfg.heads != 0) fail("model: d_model must be divisible by heads");
  const int dh = cfg.d_model / cfg.heads;
  auto build_attention = [&](Attention& at, const std::string& tag) {
    at.ln_gain = make_param(prefix + "." + tag + ".ln.g", 1, cfg.d_model, registry);
    at.ln_bias = make_param(prefix + "." + tag + ".ln.b", 1, cfg.d_model, registry);
    at.ln_gain->w.setOnes();
    for (int h = 0; h < cfg.heads; ++h) {
      Head hd;
      std::string hp = prefix + "." + tag + ".h" + std::to_string(h);
      hd.wq = make_param(hp + ".wq", cfg.d_model, dh, registry);
      hd.wk = make_param(hp + ".wk", cfg.d_model, dh, registry);
      hd.wv = make_param(hp + ".wv", cfg.d_model, dh, registry);
      hd.wo = make_param(hp + ".wo", dh, cfg.d_model, registry);
      at.heads.push_back(std::move(hd));
    }
  };
  build_attention(self_, "self");
  if (cross_attention) {
    cross_.emplace();
    build_attention(*cross_, "cross");
  }
  ffn_ln_gain_ = make_param(prefix + ".ffn.ln.g", 1, cfg.d_model, registry);
  ffn_ln_bias_ = make_param(prefix + ".ffn.ln.b", 1, cfg.d_model, registry);
  ffn_ln_gain_->w.setOnes();
  ffn_w1_ = make_param(prefix + ".ffn.w1", cfg.d_model, 4 * cfg.d_model, registry);
  ffn_b1_ = make_param(prefix + ".ffn.b1", 1, 4 * cfg.d_model, registry);
  ffn_w2_ = make_param(prefix + ".ffn.w2", 4 * cfg.d_model, cfg.d_model, registry);
  ffn_b2_ = make_param(prefix + ".ffn.b2", 1, cfg.d_model, registry);
}

int TransformerLayer::attend(Tape& t, const Attention& at, int x, int kv, const Mat* additive,
                             double dropout_p, Rng* drop_rng) const {
  int normed = t.layernorm_rows(x, t.param(*at.ln_gain), t.param(*at.ln_bias));
  int source = kv < 0 ? normed : kv;
  const int dh = d_model_ / static_cast<int>(at.heads.size());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  int out = -1;
  for (const Head& h : at.heads) {
    int q = t.matmul(normed, t.param(*h.wq));
    int k = t.matmul(source, t.param(*h.wk));
    int v = t.matmul(source, t.param(*h.wv));
    int scores = t.scale(t.matmul(q, t.transpose(k)), inv_sqrt);
    int probs = additive ? t.softmax_rows(scores, *additive) : t.softmax_rows(scores);
    int head_out = t.matmul(t.matmul(probs, v), t.param(*h.wo));
    out = out < 0 ? head_out : t.add(out, head_out);
  }
  if (dropout_p > 0.0 && drop_rng) out = t.dropout(out, dropout_p, *drop_rng);
  return t.add(x, out);
}

int TransformerLayer::build(Tape& t, int x, int memory, const Mat* self_additive,
                            double dropout_p, Rng* drop_rng) const {
  x = attend(t, self_, x, -1, self_additive, dropout_p, drop_rng);
  if (cross_) {
    if (memory < 0) fail("model: cross-attention layer needs a memory node");
    x = attend(t, *cross_, x, memory, nullptr, dropout_p, drop_rng);
  }
  int normed = t.layernorm_rows(x, t.param(*ffn_ln_gain_), t.param(*ffn_ln_bias_));
  int h1 = t.relu(t.add_rowwise(t.matmul(normed, t.param(*ffn_w1_)), t.param(*ffn_b1_)));
  int h2 = t.add_rowwise(t.matmul(h1, t.param(*ffn_w2_)), t.param(*ffn_b2_));
  if (dropout_p > 0.0 && drop_rng) h2 = t.dropout(h2, dropout_p, *drop_rng);
  return t.add(x, h2);
}

GeneratorModel::GeneratorModel(const ModelConfig& cfg, int production_count,
                               uint64_t grammar_digest, Rng& rng)
    : cfg_(cfg), production_count_(production_count), grammar_digest_(grammar_digest) {
  if (production_count <= 0) fail("model: production count must be positive");
  embed_ = make_param("gen.embed", production_count + 1, cfg.d_model, params_);
  pos_ = make_param("gen.pos", cfg.max_len, cfg.d_model, params_);
  for (int l = 0; l < cfg.layers; ++l) {
    encoder_.push_back(
        std::make_unique<TransformerLayer>("gen.enc" + std::to_string(l), cfg, false, params_));
    decoder_.push_back(
        std::make_unique<TransformerLayer>("gen.dec" + std::to_string(l), cfg, true, params_));
  }
  final_ln_gain_ = make_param("gen.final.ln.g", 1, cfg.d_model, params_);
  final_ln_bias_ = make_param("gen.final.ln.b", 1, cfg.d_model, params_);
  final_ln_gain_->w.setOnes();
  out_w_ = make_param("gen.out.w", cfg.d_model, production_count, params_);
  out_b_ = make_param("gen.out.b", 1, production_count, params_);
  for (Param* p : params_) {
    if (wants_random_init(p->name)) p->init_normal(rng, kInitStd);
  }
}

Mat GeneratorModel::prior_sample(Rng& rng) const {
  Mat z(1, cfg_.d_model);
  for (int i = 0; i < cfg_.d_model; ++i) z(0, i) = rng.normal();
  return z;
}

int GeneratorModel::encode_prior(Tape& t, const Mat& z, double dropout_p, Rng* drop_rng) const {
  if (z.rows() != 1 || z.cols() != cfg_.d_model) fail("model: prior must be 1 x d_model");
  int x = t.constant(z);
  for (const auto& layer : encoder_) x = layer->build(t, x, -1, nullptr, dropout_p, drop_rng);
  return x;
}

int GeneratorModel::build_policy(Tape& t, const Mat& z, const std::vector<int>& ids_in,
                                 const Mat& mask_additive, double dropout_p,
                                 Rng* drop_rng) const {
  const int T = static_cast<int>(ids_in.size());
  if (T == 0) fail("model: empty decoder input");
  if (T > cfg_.max_len) fail("model: sequence exceeds the decoder context");
  int memory = encode_prior(t, z, dropout_p, drop_rng);

  std::vector<int> pos_ids(static_cast<size_t>(T));
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  int x = t.add(t.gather_rows(t.param(*embed_), ids_in), t.gather_rows(t.param(*pos_), pos_ids));
  if (dropout_p > 0.0 && drop_rng) x = t.dropout(x, dropout_p, *drop_rng);

  Mat causal = Mat::Zero(T, T);
  for (int i = 0; i < T; ++i) {
    for (int j = i + 1; j < T; ++j) causal(i, j) = -kMaskPenalty;
  }
  for (const auto& layer : decoder_) x = layer->build(t, x, memory, &causal, dropout_p, drop_rng);
  x = t.layernorm_rows(x, t.param(*final_ln_gain_), t.param(*final_ln_bias_));
  int logits = t.add_rowwise(t.matmul(x, t.param(*out_w_)), t.param(*out_b_));
  return t.softmax_rows(logits, mask_additive);
}

std::vector<double> GeneratorModel::step_probabilities(const Mat& z,
                                                       const std::vector<int>& prefix) const {
  std::vector<int> ids_in;
  ids_in.push_back(bos_id());
  for (int p : prefix) ids_in.push_back(p);
  Tape t;
  Mat zero_mask = Mat::Zero(static_cast<Eigen::Index>(ids_in.size()), production_count_);
  int probs = build_policy(t, z, ids_in, zero_mask, 0.0, nullptr);
  const Mat& pm = t.value(probs);
  std::vector<double> out(static_cast<size_t>(production_count_));
  for (int i = 0; i < production_count_; ++i) out[static_cast<size_t>(i)] = pm(pm.rows() - 1, i);
  return out;
}

DiscriminatorModel::DiscriminatorModel(const ModelConfig& cfg, int production_count,
                                       uint64_t grammar_digest, Rng& rng)
    : cfg_(cfg), production_count_(production_count), grammar_digest_(grammar_digest) {
  if (production_count <= 0) fail("model: production count must be positive");
  embed_ = make_param("disc.embed", production_count + 1, cfg.d_model, params_);
  pos_ = make_param("disc.pos", cfg.max_features + cfg.max_len, cfg.d_model, params_);
  feat_w_ = make_param("disc.feat.w", 1, cfg.d_model, params_);
  feat_b_ = make_param("disc.feat.b", 1, cfg.d_model, params_);
  for (int l = 0; l < cfg.layers; ++l) {
    encoder_.push_back(
        std::make_unique<TransformerLayer>("disc.enc" + std::to_string(l), cfg, false, params_));
  }
  final_ln_gain_ = make_param("disc.final.ln.g", 1, cfg.d_model, params_);
  final_ln_bias_ = make_param("disc.final.ln.b", 1, cfg.d_model, params_);
  final_ln_gain_->w.setOnes();
  head_w_ = make_param("disc.head.w", cfg.d_model, 1, params_);
  head_b_ = make_param("disc.head.b", 1, 1, params_);
  for (Param* p : params_) {
    if (wants_random_init(p->name)) p->init_normal(rng, kInitStd);
  }
}

int DiscriminatorModel::build_input(Tape& t, const std::vector<double>& features,
                                    const std::vector<int>& seq) const {
  const int F = static_cast<int>(features.size());
  const int T = static_cast<int>(seq.size());
  if (F > cfg_.max_features) fail("model: too many features");
  if (T > cfg_.max_len) fail("model: sequence exceeds the encoder context");
  if (F + T == 0) fail("model: empty discriminator input");

  int x;
  if (F > 0) {
    Mat fcol(F, 1);
    for (int i = 0; i < F; ++i) fcol(i, 0) = features[static_cast<size_t>(i)];
    int frows = t.add_rowwise(t.matmul(t.constant(fcol), t.param(*feat_w_)), t.param(*feat_b_));
    x = T > 0 ? t.vstack(frows, t.gather_rows(t.param(*embed_), seq)) : frows;
  } else {
    x = t.gather_rows(t.param(*embed_), seq);
  }
  std::vector<int> pos_ids(static_cast<size_t>(F + T));
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  return t.add(x, t.gather_rows(t.param(*pos_), pos_ids));
}

int DiscriminatorModel::build_score_from(Tape& t, int input_node, double dropout_p,
                                         Rng* drop_rng) const {
  int x = input_node;
  if (dropout_p > 0.0 && drop_rng) x = t.dropout(x, dropout_p, *drop_rng);
  for (const auto& layer : encoder_) x = layer->build(t, x, -1, nullptr, dropout_p, drop_rng);
  x = t.layernorm_rows(x, t.param(*final_ln_gain_), t.param(*final_ln_bias_));
  int pooled = t.mean_rows(x);
  return t.sigmoid(t.add(t.matmul(pooled, t.param(*head_w_)), t.param(*head_b_)));
}

int DiscriminatorModel::build_score(Tape& t, const std::vector<double>& features,
                                    const std::vector<int>& seq, double dropout_p,
                                    Rng* drop_rng) const {
  return build_score_from(t, build_input(t, features, seq), dropout_p, drop_rng);
}

std::vector<double> generator_logits(const GeneratorModel& gen, const Mat& z,
                                     const std::vector<int>& prefix) {
  return gen.step_probabilities(z, prefix);
}

double discriminator_score(const DiscriminatorModel& disc, const std::vector<int>& seq,
                           const std::vector<double>& features_normalized) {
  Tape t;
  int score = disc.build_score(t, features_normalized, seq, 0.0, nullptr);
  return t.value(score)(0, 0);
}

SampleResult sample_sequence(const GeneratorModel& gen, const BoundGrammar& bound,
                             const RuleToggles& toggles, Rng& rng, bool greedy) {
  if (gen.production_count() != bound.grammar().production_count())
    fail("sample_sequence: model and grammar disagree on production count");
  SampleResult r;
  r.z = gen.prior_sample(rng);
  SemanticState st(bound, toggles);
  const int cap = std::min(gen.config().max_len, kMaxDerivationSteps);
  while (!st.complete()) {
    if (static_cast<int>(r.seq.size()) >= cap) return r;  // ok stays false
    std::vector<double> v = gen.step_probabilities(r.z, r.seq);
    const Bitset& syntax = bound.syntax_masks().row_unchecked(st.expansion_symbol());
    std::vector<double> probs = masked_probabilities(v, syntax, st.semantic_mask());
    size_t pick;
    if (greedy) {
      pick = 0;
      for (size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[pick]) pick = i;
      }
    } else {
      pick = rng.pick_weighted(probs);
    }
    r.masks.push_back(st.allowed());
    st.apply(static_cast<int>(pick));
    r.seq.push_back(static_cast<int>(pick));
  }
  r.rendered = st.rendered();
  r.relaxations = st.relaxation_count();
  r.ok = true;
  return r;
}

namespace {

constexpr char kCheckpointMagic[] = "QGCP0001";

nlohmann::json config_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"d_model", c.d_model},
          {"max_len", c.max_len},
          {"max_features", c.max_features}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.max_features = j.at("max_features").get<int>();
  return c;
}

}  // namespace

Checkpoint Checkpoint::fresh(const ModelConfig& cfg, int production_count,
                             uint64_t grammar_digest, const FeatureNorm& norm, Rng& rng) {
  Checkpoint c;
  c.config = cfg;
  c.production_count = production_count;
  c.grammar_digest = grammar_digest;
  c.norm = norm;
  c.gen = std::make_unique<GeneratorModel>(cfg, production_count, grammar_digest, rng);
  c.disc = std::make_unique<DiscriminatorModel>(cfg, production_count, grammar_digest, rng);
  return c;
}

void Checkpoint::save(const std::string& path) const {
  if (!gen || !disc) fail("checkpoint: nothing to save");
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = config_json(config);
  header["production_count"] = production_count;
  header["grammar_digest"] = to_hex(grammar_digest);
  header["feature_norm"] = {{"names", norm.names}, {"lo", norm.lo}, {"hi", norm.hi}};
  nlohmann::json plist = nlohmann::json::array();
  auto list = [&](const std::vector<Param*>& ps) {
    for (const Param* p : ps)
      plist.push_back({{"name", p->name},
                       {"rows", static_cast<int>(p->w.rows())},
                       {"cols", static_cast<int>(p->w.cols())}});
  };
  list(gen->params());
  list(disc->params());
  header["params"] = plist;

  std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("checkpoint: cannot write '" + path + "'");
  out.write(kCheckpointMagic, 8);
  uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto dump = [&](const std::vector<Param*>& ps) {
    for (const Param* p : ps) {
      for (Eigen::Index r = 0; r < p->w.rows(); ++r) {
        for (Eigen::Index c2 = 0; c2 < p->w.cols(); ++c2) {
          double v = p->w(r, c2);
          out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
      }
    }
  };
  dump(gen->params());
  dump(disc->params());
  if (!out) fail("checkpoint: write to '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path, uint64_t expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kCheckpointMagic)
    fail("checkpoint: '" + path + "' is not a checkpoint file");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) fail("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("version").get<int>() != 1) fail("checkpoint: unsupported version");

  Checkpoint c;
  c.config = config_from_json(header.at("config"));
  c.production_count = header.at("production_count").get<int>();
  c.grammar_digest = std::stoull(header.at("grammar_digest").get<std::string>(), nullptr, 16);
  if (expected_digest != 0 && c.grammar_digest != expected_digest)
    fail("checkpoint: grammar digest mismatch (model was trained on a different grammar)");
  c.norm.names = header.at("feature_norm").at("names").get<std::vector<std::string>>();
  c.norm.lo = header.at("feature_norm").at("lo").get<std::vector<double>>();
  c.norm.hi = header.at("feature_norm").at("hi").get<std::vector<double>>();

  Rng tmp(0);
  c.gen = std::make_unique<GeneratorModel>(c.config, c.production_count, c.grammar_digest, tmp);
  c.disc = std::make_unique<DiscriminatorModel>(c.config, c.production_count, c.grammar_digest,
                                                tmp);
  std::vector<Param*> all;
  for (Param* p : c.gen->params()) all.push_back(p);
  for (Param* p : c.disc->params()) all.push_back(p);
  const nlohmann::json& plist = header.at("params");
  if (plist.size() != all.size()) fail("checkpoint: parameter list mismatch");
  for (size_t i = 0; i < all.size(); ++i) {
    const nlohmann::json& e = plist[i];
    Param* p = all[i];
    if (e.at("name").get<std::string>() != p->name ||
        e.at("rows").get<int>() != static_cast<int>(p->w.rows()) ||
        e.at("cols").get<int>() != static_cast<int>(p->w.cols()))
      fail("checkpoint: parameter '" + p->name + "' does not match the stored layout");
    for (Eigen::Index r = 0; r < p->w.rows(); ++r) {
      for (Eigen::Index c2 = 0; c2 < p->w.cols(); ++c2) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        p->w(r, c2) = v;
      }
    }
  }
  if (!in) fail("checkpoint: truncated weights");
  return c;
}

}  // namespace qgen
