#pragma once

#include <string>
#include <vector>

#include "qgen/model.hpp"
#include "qgen/parser.hpp"

namespace qgen {

struct TrainingConfig {
  double lr_generator = 0.001;
  double lr_discriminator = 0.0001;
  double dropout = 0.3;
  double l2_lambda = 0.1;  // decoupled weight decay on every Adam step
  double gradient_penalty_coefficient = 10.0;
  int rollout_count = 8;   // completions averaged per reward estimate
  int rollout_stride = 4;  // steps between reward estimates; in between reuse the last
  int pretrain_epochs = 50;
  int adversarial_epochs = 20;
  int batch_size = 32;
  double holdout_fraction = 0.1;
  int checkpoint_every = 0;  // 0: only the final save
  uint64_t seed = 0;
};

// 'key = value' lines; '#' starts a comment; unknown keys are an error.
TrainingConfig parse_training_config(const std::string& text);

// One corpus query, parsed and replayed: ids are the production choices, and
// mask row t is the additive mask the policy faced before choosing ids[t]
// (0 where selectable, large-negative elsewhere). Feature values are filled
// by featurize_corpus and stay empty for queries the evaluator rejects.
struct TrainingSequence {
  std::string text;  // canonical bucketized form
  std::vector<int> ids;
  Mat mask_additive;
  std::vector<double> features;
};

std::vector<TrainingSequence> prepare_sequences(const BoundGrammar& bound,
                                                const LalrTables& tables,
                                                const std::vector<std::string>& canonical);

// Runs every query through the evaluator, fits the normalizer on the ones
// that execute, and stores their normalized features. Returns the fitted
// normalizer; failures leave .features empty and bump *failures.
FeatureNorm featurize_corpus(std::vector<TrainingSequence>& seqs, const Database& db,
                             const BucketMap& map, Rng& rng, int* failures = nullptr);

struct EpochStats {
  int epoch = 0;
  std::string phase;  // "pretrain" | "adversarial"
  double generator_nll = 0.0;
  double holdout_nll = 0.0;
  double discriminator_loss = 0.0;
  double mean_reward = 0.0;
  double baseline = 0.0;
  double syntactic_validity = 1.0;
  double semantic_validity = 1.0;
  int sample_failures = 0;   // generations cut off by the step cap
  int feature_failures = 0;  // generations the evaluator rejected
  double seconds = 0.0;
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  std::string to_jsonl() const;
};

// Teacher-forced maximum likelihood over the corpus: per-token masked NLL,
// Adam steps per batch, a held-out split scored without dropout each epoch.
// Also the fine-tuning entry point: a loaded checkpoint resumes from its
// stored weights. Throws when the corpus is empty or the loss leaves the
// finite range.
TrainingReport pretrain_mle(Checkpoint& ckpt, const BoundGrammar& bound,
                            const std::vector<TrainingSequence>& corpus,
                            const TrainingConfig& cfg, Rng& rng);

// Mean discriminator score over `completions` masked completions of the
// prefix; an already-complete prefix is scored directly. Completions the
// step cap or the evaluator rejects are dropped; with nothing left the
// neutral 0.5 comes back.
double rollout_value(const GeneratorModel& gen, const DiscriminatorModel& disc,
                     const BoundGrammar& bound, const FeatureNorm& norm, const Database& db,
                     const BucketMap& map, const Mat& z, const std::vector<int>& prefix,
                     int completions, Rng& rng);

// Squared distance of the score's input-gradient norm from 1 at one embedded
// input. When scale is nonzero the matching parameter-space gradient
// (estimated with central differences along the input gradient) is
// accumulated into the discriminator's gradients, scaled by `scale`.
double gradient_penalty(DiscriminatorModel& disc, const Mat& embedded_input, double scale);

// Alternating adversarial phase: the discriminator fits real-vs-generated
// with the gradient penalty added, the generator follows policy-gradient
// updates weighted by rollout rewards against a moving-average baseline.
// lr_generator 0 freezes the generator (and skips its rollouts). Epoch
// numbering continues from `first_epoch`. When checkpoint_path is nonempty
// the checkpoint is saved there every checkpoint_every epochs and at the end.
TrainingReport train_adversarial(Checkpoint& ckpt, const BoundGrammar& bound,
                                 const std::vector<TrainingSequence>& corpus, const Database& db,
                                 const BucketMap& map, const TrainingConfig& cfg, Rng& rng,
                                 int first_epoch = 0, const std::string& checkpoint_path = "");

}  // namespace qgen
