#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qgen/autodiff.hpp"
#include "qgen/oracle.hpp"
#include "qgen/semantics.hpp"

namespace qgen {

struct ModelConfig {
  int layers = 6;
  int heads = 4;
  int d_model = 128;
  int max_len = 512;     // production positions the decoder can hold
  int max_features = 8;  // feature prefix positions the discriminator can hold

  static ModelConfig paper() { return {6, 4, 128, 512, 8}; }
  static ModelConfig desk() { return {2, 2, 32, 512, 8}; }
};

// Zero the entries either mask drops, renormalize the survivors to sum 1.
std::vector<double> masked_probabilities(const std::vector<double>& v, const Bitset& syntax_mask,
                                         const Bitset& semantic_mask);

// per-feature map y = (log1p(x) - lo) / (hi - lo), clamped to [0,1]
struct FeatureNorm {
  std::vector<std::string> names;
  std::vector<double> lo;
  std::vector<double> hi;

  static FeatureNorm fit(const std::vector<FeatureVector>& fs);
  std::vector<double> apply(const FeatureVector& f) const;
};

// one pre-LN transformer layer; owns its parameters
class TransformerLayer {
 public:
  TransformerLayer(const std::string& prefix, const ModelConfig& cfg, bool cross_attention,
                   std::vector<Param*>& registry);

  // x: TxD. memory: SxD node id or -1. self_additive: TxT mask or null.
  int build(Tape& t, int x, int memory, const Mat* self_additive, double dropout_p,
            Rng* drop_rng) const;

 private:
  struct Head {
    std::unique_ptr<Param> wq, wk, wv, wo;
  };
  struct Attention {
    std::unique_ptr<Param> ln_gain, ln_bias;
    std::vector<Head> heads;
  };

  int attend(Tape& t, const Attention& at, int x, int kv, const Mat* additive, double dropout_p,
             Rng* drop_rng) const;

  int d_model_;
  Attention self_;
  std::optional<Attention> cross_;
  std::unique_ptr<Param> ffn_ln_gain_, ffn_ln_bias_;
  std::unique_ptr<Param> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
};

// Decoder-only-with-prior-memory sequence model over productions. Vocabulary
// is |P| productions plus one BOS row used only on the input side.
class GeneratorModel {
 public:
  GeneratorModel(const ModelConfig& cfg, int production_count, uint64_t grammar_digest, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  int production_count() const { return production_count_; }
  int bos_id() const { return production_count_; }
  uint64_t grammar_digest() const { return grammar_digest_; }
  std::vector<Param*>& params() { return params_; }

  Mat prior_sample(Rng& rng) const;  // z, 1 x d_model

  // Teacher-forced policy: row t of the result node is the masked
  // next-production distribution after the prefix ids_in[0..t]. The additive
  // matrix is (-kMaskPenalty at banned cells), one row per step.
  int build_policy(Tape& t, const Mat& z, const std::vector<int>& ids_in,
                   const Mat& mask_additive, double dropout_p, Rng* drop_rng) const;

  // pre-mask next-step distribution after `prefix` (inference mode)
  std::vector<double> step_probabilities(const Mat& z, const std::vector<int>& prefix) const;

 private:
  int encode_prior(Tape& t, const Mat& z, double dropout_p, Rng* drop_rng) const;

  ModelConfig cfg_;
  int production_count_;
  uint64_t grammar_digest_;
  std::unique_ptr<Param> embed_, pos_;
  std::vector<std::unique_ptr<TransformerLayer>> encoder_, decoder_;
  std::unique_ptr<Param> final_ln_gain_, final_ln_bias_, out_w_, out_b_;
  std::vector<Param*> params_;

  friend class Checkpoint;
};

// Encoder + mean pooling + sigmoid head over [features, productions].
class DiscriminatorModel {
 public:
  DiscriminatorModel(const ModelConfig& cfg, int production_count, uint64_t grammar_digest,
                     Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  int production_count() const { return production_count_; }
  uint64_t grammar_digest() const { return grammar_digest_; }
  std::vector<Param*>& params() { return params_; }

  // embedded input rows: one per normalized feature, then one per production
  int build_input(Tape& t, const std::vector<double>& features,
                  const std::vector<int>& seq) const;
  // score head over an embedded-input node (for gradient-penalty interpolates)
  int build_score_from(Tape& t, int input_node, double dropout_p, Rng* drop_rng) const;
  int build_score(Tape& t, const std::vector<double>& features, const std::vector<int>& seq,
                  double dropout_p, Rng* drop_rng) const;

 private:
  ModelConfig cfg_;
  int production_count_;
  uint64_t grammar_digest_;
  std::unique_ptr<Param> embed_, pos_, feat_w_, feat_b_;
  std::vector<std::unique_ptr<TransformerLayer>> encoder_;
  std::unique_ptr<Param> final_ln_gain_, final_ln_bias_, head_w_, head_b_;
  std::vector<Param*> params_;

  friend class Checkpoint;
};

std::vector<double> generator_logits(const GeneratorModel& gen, const Mat& z,
                                     const std::vector<int>& prefix);

double discriminator_score(const DiscriminatorModel& disc, const std::vector<int>& seq,
                           const std::vector<double>& features_normalized);

struct SampleResult {
  std::vector<int> seq;
  Mat z;
  std::vector<Bitset> masks;  // allowed productions before each step
  std::string rendered;       // canonical bucketized text
  int relaxations = 0;
  bool ok = false;  // false when the step cap cut the derivation short
};

// Masked ancestral sampling; greedy = argmax instead of a draw.
SampleResult sample_sequence(const GeneratorModel& gen, const BoundGrammar& bound,
                             const RuleToggles& toggles, Rng& rng, bool greedy = false);

// Versioned container for both nets plus the preprocessing constants the
// checkpoint needs to be self-sufficient.
class Checkpoint {
 public:
  ModelConfig config;
  int production_count = 0;
  uint64_t grammar_digest = 0;
  FeatureNorm norm;
  std::unique_ptr<GeneratorModel> gen;
  std::unique_ptr<DiscriminatorModel> disc;

  void save(const std::string& path) const;
  // expected_digest 0 skips the check (caller verifies later)
  static Checkpoint load(const std::string& path, uint64_t expected_digest);
  static Checkpoint fresh(const ModelConfig& cfg, int production_count, uint64_t grammar_digest,
                          const FeatureNorm& norm, Rng& rng);
};

}  // namespace qgen
