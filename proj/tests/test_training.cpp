#include "qgen/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "qgen/baselines.hpp"
#include "qgen/derivation.hpp"
#include "qgen/oracle.hpp"
#include "test_support.hpp"

using namespace qgen;

namespace {

Grammar load_dialect() {
  return Grammar::from_spec(read_text_file(qgen::test::repo_path("grammars/sql.grammar")), true);
}

Schema fixture_schema() {
  return Schema::from_text(
      "movies.id:int\n"
      "movies.year:int\n"
      "movies.rating:float\n"
      "people.name:string\n"
      "people.age:int\n");
}

BucketMap fixture_buckets(const Schema& schema) {
  std::vector<std::string> wl;
  for (int i = 1; i <= 12; ++i)
    wl.push_back("SELECT * FROM movies WHERE id = " + std::to_string(i));
  for (int y = 1990; y <= 1997; ++y)
    wl.push_back("SELECT * FROM movies WHERE year = " + std::to_string(y));
  for (const char* r : {"0.5", "1.5", "2.5", "3.5", "4.5", "5.0"})
    wl.push_back(std::string("SELECT * FROM movies WHERE rating > ") + r);
  for (const char* n : {"'alice'", "'bob'", "'carol'"})
    wl.push_back(std::string("SELECT * FROM people WHERE name = ") + n);
  for (int a : {20, 25, 30, 35})
    wl.push_back("SELECT * FROM people WHERE age < " + std::to_string(a));
  return BucketMap::build(wl, schema, 4);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_model = 16;
  cfg.max_len = 256;
  cfg.max_features = 8;
  return cfg;
}

struct Fixture {
  Schema schema = fixture_schema();
  BucketMap buckets = fixture_buckets(schema);
  BoundGrammar bound = BoundGrammar::bind(load_dialect(), schema, &buckets);
  LalrTables tables = LalrTables::build(bound.grammar());
  qgen::test::TempDir tmp{"train"};
  Database db = make_db();

  Database make_db() {
    std::string movies = "id,year,rating\n";
    for (int i = 1; i <= 10; ++i) {
      movies += std::to_string(i) + "," + std::to_string(1990 + (i * 3) % 8) + "," +
                std::to_string(0.5 * (i % 10)) + "\n";
    }
    std::string people = "name,age\n";
    for (const char* n : {"alice", "bob", "carol", "dan", "eve", "fred"}) {
      people += std::string(n) + "," + std::to_string(20 + 3 * (n[0] % 5)) + "\n";
    }
    write_text_file(tmp.file("movies.csv"), movies);
    write_text_file(tmp.file("people.csv"), people);
    return Database::load(schema, tmp.path().string());
  }

  std::vector<TrainingSequence> corpus(int n, uint64_t seed) {
    Rng rng(seed);
    auto queries = random_generate(bound, n, rng);
    return prepare_sequences(bound, tables, queries);
  }
};

TrainingConfig quiet_config() {
  TrainingConfig cfg;
  cfg.dropout = 0.0;
  cfg.l2_lambda = 0.0;
  cfg.holdout_fraction = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("training config text parses and validates") {
  TrainingConfig defaults = parse_training_config("");
  CHECK(defaults.lr_generator == 0.001);
  CHECK(defaults.lr_discriminator == 0.0001);
  CHECK(defaults.dropout == 0.3);
  CHECK(defaults.l2_lambda == 0.1);
  CHECK(defaults.gradient_penalty_coefficient == 10.0);
  CHECK(defaults.rollout_count == 8);
  CHECK(defaults.pretrain_epochs == 50);
  CHECK(defaults.batch_size == 32);

  TrainingConfig cfg = parse_training_config(
      "# comment\n"
      "lr_generator = 0.01\n"
      "rollout_count=3  # trailing note\n"
      "\n"
      "seed = 42\n"
      "holdout_fraction = 0.2\n");
  CHECK(cfg.lr_generator == 0.01);
  CHECK(cfg.rollout_count == 3);
  CHECK(cfg.seed == 42);
  CHECK(cfg.holdout_fraction == 0.2);
  CHECK(cfg.dropout == 0.3);

  CHECK_THROWS_WITH_AS(parse_training_config("mystery = 1\n"), doctest::Contains("unknown key"),
                       QgError);
  CHECK_THROWS_WITH_AS(parse_training_config("lr_generator: 0.1\n"),
                       doctest::Contains("expected key = value"), QgError);
  CHECK_THROWS_AS(parse_training_config("dropout = high\n"), QgError);
  CHECK_THROWS_AS(parse_training_config("batch_size = 0\n"), QgError);
  CHECK_THROWS_AS(parse_training_config("holdout_fraction = 1.0\n"), QgError);
}

TEST_CASE("corpus preparation replays the exact choice sequence") {
  Fixture f;
  auto corpus = f.corpus(6, 17);
  REQUIRE(corpus.size() == 6);
  const int P = f.bound.grammar().production_count();
  for (const TrainingSequence& ts : corpus) {
    REQUIRE(!ts.ids.empty());
    REQUIRE(ts.mask_additive.rows() == static_cast<Eigen::Index>(ts.ids.size()));
    REQUIRE(ts.mask_additive.cols() == P);
    for (size_t t = 0; t < ts.ids.size(); ++t) {
      CHECK(ts.mask_additive(static_cast<Eigen::Index>(t), ts.ids[t]) == 0.0);
    }
    CHECK(productions_to_query(f.bound.grammar(), ts.ids) == ts.text);
    ValidityReport rep = validate_sequence(f.bound, ts.ids);
    CHECK(rep.syntactic);
    CHECK(rep.semantic);
  }
  CHECK_THROWS_WITH_AS(prepare_sequences(f.bound, f.tables, {"FROM nowhere SELECT *"}),
                       doctest::Contains("query 0"), QgError);
}

TEST_CASE("corpus featurization fits the normalizer and counts rejects") {
  Fixture f;
  auto corpus = f.corpus(8, 23);
  TrainingSequence bad;
  bad.text = "FROM nowhere SELECT *";
  corpus.push_back(bad);

  Rng rng(5);
  int failures = 0;
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, rng, &failures);
  CHECK(failures == 1);
  CHECK(corpus.back().features.empty());
  REQUIRE(norm.names.size() == 5);
  for (size_t i = 0; i + 1 < corpus.size(); ++i) {
    REQUIRE(corpus[i].features.size() == 5);
    for (double v : corpus[i].features) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("a single sequence is memorized inside two hundred steps") {
  Fixture f;
  auto corpus = f.corpus(4, 31);
  std::sort(corpus.begin(), corpus.end(),
            [](const TrainingSequence& a, const TrainingSequence& b) {
              return a.ids.size() < b.ids.size();
            });
  corpus.resize(1);

  Rng mr(2);
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), f.bound.grammar().production_count(),
                                      f.bound.grammar().digest(), FeatureNorm{}, mr);
  TrainingConfig cfg = quiet_config();
  cfg.lr_generator = 0.01;
  cfg.pretrain_epochs = 200;
  Rng rng(9);
  TrainingReport report = pretrain_mle(ckpt, f.bound, corpus, cfg, rng);
  REQUIRE(report.epochs.size() == 200);
  for (size_t i = 0; i < report.epochs.size(); ++i) {
    CHECK(report.epochs[i].epoch == static_cast<int>(i));
    CHECK(report.epochs[i].phase == "pretrain");
  }
  CHECK(report.epochs.front().generator_nll > report.epochs.back().generator_nll);
  CHECK(report.epochs.back().generator_nll < 0.1);
}

TEST_CASE("pretraining rejects an empty or mismatched corpus") {
  Fixture f;
  Rng mr(2);
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), f.bound.grammar().production_count(),
                                      f.bound.grammar().digest(), FeatureNorm{}, mr);
  Rng rng(1);
  CHECK_THROWS_WITH_AS(pretrain_mle(ckpt, f.bound, {}, quiet_config(), rng),
                       doctest::Contains("corpus is empty"), QgError);

  Checkpoint small = Checkpoint::fresh(tiny_config(), 3, 0, FeatureNorm{}, mr);
  auto corpus = f.corpus(1, 3);
  CHECK_THROWS_WITH_AS(pretrain_mle(small, f.bound, corpus, quiet_config(), rng),
                       doctest::Contains("production count"), QgError);
}

TEST_CASE("pretraining lowers the corpus loss and scores a holdout") {
  Fixture f;
  auto corpus = f.corpus(24, 41);
  Rng mr(6);
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), f.bound.grammar().production_count(),
                                      f.bound.grammar().digest(), FeatureNorm{}, mr);
  TrainingConfig cfg = quiet_config();
  cfg.lr_generator = 0.005;
  cfg.pretrain_epochs = 4;
  cfg.holdout_fraction = 0.25;
  Rng rng(8);
  TrainingReport report = pretrain_mle(ckpt, f.bound, corpus, cfg, rng);
  REQUIRE(report.epochs.size() == 4);
  CHECK(report.epochs.back().generator_nll < report.epochs.front().generator_nll);
  for (const EpochStats& e : report.epochs) {
    CHECK(e.holdout_nll > 0.0);
    CHECK(std::isfinite(e.holdout_nll));
    CHECK(e.seconds >= 0.0);
  }
}

TEST_CASE("a warm start resumes below a cold start") {
  Fixture f;
  auto corpus = f.corpus(10, 57);
  TrainingConfig cfg = quiet_config();
  cfg.lr_generator = 0.005;
  cfg.pretrain_epochs = 6;

  Rng mr(12);
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), f.bound.grammar().production_count(),
                                      f.bound.grammar().digest(), FeatureNorm{}, mr);
  Rng r1(3);
  TrainingReport first = pretrain_mle(ckpt, f.bound, corpus, cfg, r1);
  std::string path = f.tmp.file("warm.ckpt");
  ckpt.save(path);

  Checkpoint warm = Checkpoint::load(path, f.bound.grammar().digest());
  TrainingConfig one = cfg;
  one.pretrain_epochs = 1;
  Rng r2(4);
  TrainingReport resumed = pretrain_mle(warm, f.bound, corpus, one, r2);

  Rng mr2(13);
  Checkpoint cold = Checkpoint::fresh(tiny_config(), f.bound.grammar().production_count(),
                                      f.bound.grammar().digest(), FeatureNorm{}, mr2);
  Rng r3(4);
  TrainingReport fresh_run = pretrain_mle(cold, f.bound, corpus, one, r3);

  CHECK(resumed.epochs[0].generator_nll < fresh_run.epochs[0].generator_nll);
  CHECK(resumed.epochs[0].generator_nll <
        first.epochs.back().generator_nll + 0.3 * first.epochs.back().generator_nll + 0.05);
}

TEST_CASE("rollout rewards are neutral under a constant discriminator") {
  Fixture f;
  auto corpus = f.corpus(3, 71);
  Rng rng(5);
  int failures = 0;
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, rng, &failures);
  REQUIRE(failures == 0);

  Rng mr(20);
  const int P = f.bound.grammar().production_count();
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), P, f.bound.grammar().digest(), norm, mr);
  for (Param* p : ckpt.disc->params()) {
    if (p->name == "disc.head.w" || p->name == "disc.head.b") p->w.setZero();
  }

  const TrainingSequence& ts = corpus[0];
  Rng zr(2);
  Mat z = ckpt.gen->prior_sample(zr);
  std::vector<int> half(ts.ids.begin(), ts.ids.begin() + ts.ids.size() / 2);

  Rng roll(7);
  double v = rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z, half, 3,
                           roll);
  CHECK(v == 0.5);
  Rng roll2(7);
  double complete = rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z,
                                  ts.ids, 3, roll2);
  CHECK(complete == 0.5);
}

TEST_CASE("rollout rewards are seed-deterministic and average completions") {
  Fixture f;
  auto corpus = f.corpus(3, 83);
  Rng rng(5);
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, rng);

  Rng mr(21);
  const int P = f.bound.grammar().production_count();
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), P, f.bound.grammar().digest(), norm, mr);
  const TrainingSequence& ts = corpus[0];
  Rng zr(2);
  Mat z = ckpt.gen->prior_sample(zr);
  std::vector<int> half(ts.ids.begin(), ts.ids.begin() + ts.ids.size() / 2);

  Rng a(11);
  Rng b(11);
  double va = rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z, half, 2, a);
  double vb = rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z, half, 2, b);
  CHECK(va == vb);
  CHECK(va > 0.0);
  CHECK(va < 1.0);

  // a complete prefix scores the sequence itself, no sampling involved
  Rng c1(13);
  double direct = rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z,
                                ts.ids, 5, c1);
  Rng c2(13);
  FeatureVector fv = featurize(f.db, f.buckets, ts.text, c2);
  CHECK(direct == discriminator_score(*ckpt.disc, ts.ids, norm.apply(fv)));

  // averaging more completions shrinks the estimator's spread
  auto spread = [&](int k) {
    std::vector<double> vals;
    for (int s = 0; s < 12; ++s) {
      Rng r(100 + s);
      vals.push_back(rollout_value(*ckpt.gen, *ckpt.disc, f.bound, norm, f.db, f.buckets, z,
                                   half, k, r));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return var / vals.size();
  };
  CHECK(spread(8) < spread(1));
}

TEST_CASE("gradient penalty vanishes at unit gradient norm and matches finite differences") {
  Rng mr(33);
  ModelConfig cfg = tiny_config();
  cfg.d_model = 8;
  DiscriminatorModel disc(cfg, 8, 0, mr);

  Mat x(4, 8);
  Rng xr(3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = xr.normal();
  }

  double value = gradient_penalty(disc, x, 0.0);
  CHECK(value >= 0.0);
  CHECK(value <= 1.0 + 1e-9);  // sigmoid scores keep the input gradient below unit norm

  // scale 0 must leave the accumulated gradients untouched
  for (Param* p : disc.params()) p->g.setZero();
  gradient_penalty(disc, x, 0.0);
  for (Param* p : disc.params()) CHECK(p->g.norm() == 0.0);

  gradient_penalty(disc, x, 1.0);
  double moved = 0.0;
  for (Param* p : disc.params()) moved += p->g.norm();
  CHECK(moved > 0.0);

  Param* head = nullptr;
  for (Param* p : disc.params()) {
    if (p->name == "disc.head.w") head = p;
  }
  REQUIRE(head != nullptr);
  for (Param* p : disc.params()) p->g.setZero();
  gradient_penalty(disc, x, 1.0);
  const double delta = 1e-4;
  int checked = 0;
  for (Eigen::Index r = 0; r < head->w.rows() && checked < 4; ++r) {
    double keep = head->w(r, 0);
    head->w(r, 0) = keep + delta;
    double up = gradient_penalty(disc, x, 0.0);
    head->w(r, 0) = keep - delta;
    double down = gradient_penalty(disc, x, 0.0);
    head->w(r, 0) = keep;
    double fd = (up - down) / (2 * delta);
    if (std::abs(fd) < 1e-4) continue;
    double rel = std::abs(head->g(r, 0) - fd) / std::max(std::abs(fd), std::abs(head->g(r, 0)));
    CHECK(rel < 2e-2);
    ++checked;
  }
  CHECK(checked > 0);
  // restoring the probe means the value query itself never moved gradients
  Mat head_g = head->g;
  gradient_penalty(disc, x, 0.0);
  CHECK(head->g == head_g);
}

TEST_CASE("adversarial epochs update both nets and keep the books") {
  Fixture f;
  auto corpus = f.corpus(10, 91);
  Rng frng(5);
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, frng);

  Rng mr(40);
  const int P = f.bound.grammar().production_count();
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), P, f.bound.grammar().digest(), norm, mr);

  TrainingConfig cfg = quiet_config();
  cfg.batch_size = 4;
  cfg.adversarial_epochs = 2;
  cfg.rollout_count = 2;
  cfg.rollout_stride = 8;
  cfg.checkpoint_every = 1;

  Mat gen_before = ckpt.gen->params().front()->w;
  Mat disc_before = ckpt.disc->params().front()->w;
  std::string path = f.tmp.file("adv.ckpt");
  Rng rng(14);
  TrainingReport report =
      train_adversarial(ckpt, f.bound, corpus, f.db, f.buckets, cfg, rng, 7, path);

  REQUIRE(report.epochs.size() == 2);
  CHECK(report.epochs[0].epoch == 7);
  CHECK(report.epochs[1].epoch == 8);
  for (const EpochStats& e : report.epochs) {
    CHECK(e.phase == "adversarial");
    CHECK(e.syntactic_validity == 1.0);
    CHECK(e.semantic_validity == 1.0);
    CHECK(e.mean_reward > 0.0);
    CHECK(e.mean_reward < 1.0);
    CHECK(std::isfinite(e.discriminator_loss));
    CHECK(e.discriminator_loss > 0.0);
    CHECK(e.baseline > 0.0);
  }
  CHECK(ckpt.gen->params().front()->w != gen_before);
  CHECK(ckpt.disc->params().front()->w != disc_before);

  Checkpoint reloaded = Checkpoint::load(path, f.bound.grammar().digest());
  CHECK(reloaded.gen->params().front()->w == ckpt.gen->params().front()->w);
}

TEST_CASE("zero generator rate freezes the generator while the discriminator fits") {
  Fixture f;
  auto corpus = f.corpus(12, 97);
  Rng frng(5);
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, frng);

  Rng mr(41);
  const int P = f.bound.grammar().production_count();
  Checkpoint ckpt = Checkpoint::fresh(tiny_config(), P, f.bound.grammar().digest(), norm, mr);

  TrainingConfig cfg = quiet_config();
  cfg.batch_size = 6;
  cfg.adversarial_epochs = 4;
  cfg.lr_generator = 0.0;
  cfg.lr_discriminator = 0.002;
  cfg.gradient_penalty_coefficient = 0.0;

  std::vector<Mat> before;
  for (Param* p : ckpt.gen->params()) before.push_back(p->w);
  Rng rng(15);
  TrainingReport report = train_adversarial(ckpt, f.bound, corpus, f.db, f.buckets, cfg, rng);
  for (size_t i = 0; i < before.size(); ++i) CHECK(ckpt.gen->params()[i]->w == before[i]);
  CHECK(report.epochs.back().discriminator_loss < report.epochs.front().discriminator_loss);
  for (const EpochStats& e : report.epochs) CHECK(e.mean_reward == 0.0);
}

TEST_CASE("training runs repeat bit for bit under one seed") {
  Fixture f;
  auto corpus = f.corpus(8, 101);
  Rng frng(5);
  FeatureNorm norm = featurize_corpus(corpus, f.db, f.buckets, frng);

  auto run = [&]() {
    Rng mr(50);
    const int P = f.bound.grammar().production_count();
    Checkpoint ckpt = Checkpoint::fresh(tiny_config(), P, f.bound.grammar().digest(), norm, mr);
    TrainingConfig cfg = quiet_config();
    cfg.pretrain_epochs = 2;
    cfg.batch_size = 4;
    cfg.adversarial_epochs = 1;
    cfg.rollout_count = 2;
    cfg.rollout_stride = 8;
    Rng rng(60);
    TrainingReport pre = pretrain_mle(ckpt, f.bound, corpus, cfg, rng);
    TrainingReport adv = train_adversarial(ckpt, f.bound, corpus, f.db, f.buckets, cfg, rng,
                                           static_cast<int>(pre.epochs.size()));
    return std::make_tuple(pre, adv, ckpt.gen->params().front()->w);
  };

  auto [pre1, adv1, w1] = run();
  auto [pre2, adv2, w2] = run();
  REQUIRE(pre1.epochs.size() == pre2.epochs.size());
  for (size_t i = 0; i < pre1.epochs.size(); ++i) {
    CHECK(pre1.epochs[i].generator_nll == pre2.epochs[i].generator_nll);
    CHECK(pre1.epochs[i].holdout_nll == pre2.epochs[i].holdout_nll);
  }
  REQUIRE(adv1.epochs.size() == adv2.epochs.size());
  for (size_t i = 0; i < adv1.epochs.size(); ++i) {
    CHECK(adv1.epochs[i].generator_nll == adv2.epochs[i].generator_nll);
    CHECK(adv1.epochs[i].discriminator_loss == adv2.epochs[i].discriminator_loss);
    CHECK(adv1.epochs[i].mean_reward == adv2.epochs[i].mean_reward);
  }
  CHECK(w1 == w2);
}

TEST_CASE("reports serialize one json object per epoch") {
  TrainingReport report;
  EpochStats a;
  a.epoch = 0;
  a.phase = "pretrain";
  a.generator_nll = 1.5;
  EpochStats b;
  b.epoch = 1;
  b.phase = "adversarial";
  b.mean_reward = 0.4;
  report.epochs = {a, b};

  std::string text = report.to_jsonl();
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  nlohmann::json j0 = nlohmann::json::parse(lines[0]);
  CHECK(j0.at("epoch") == 0);
  CHECK(j0.at("phase") == "pretrain");
  CHECK(j0.at("generator_nll") == 1.5);
  nlohmann::json j1 = nlohmann::json::parse(lines[1]);
  CHECK(j1.at("phase") == "adversarial");
  CHECK(j1.at("mean_reward") == 0.4);
}
