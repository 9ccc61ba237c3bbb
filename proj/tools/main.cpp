#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qgen/baselines.hpp"
#include "qgen/derivation.hpp"
#include "qgen/grammar.hpp"
#include "qgen/metrics.hpp"
#include "qgen/model.hpp"
#include "qgen/oracle.hpp"
#include "qgen/parser.hpp"
#include "qgen/preprocess.hpp"
#include "qgen/semantics.hpp"
#include "qgen/training.hpp"
#include "qgen/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace qgen;

constexpr uint64_t kDefaultSeed = 42;

struct Options {
  std::string grammar;
  std::string schema;
  std::string data;
  std::string workload;
  std::string checkpoint;
  std::string out;
  std::string config;
  std::string method = "gan";
  std::string profile = "paper";
  uint64_t seed = kDefaultSeed;
  int n = 100;
  bool fine_tune = false;
  std::vector<std::string> disabled_rules;
  std::vector<std::string> candidates;
};

Grammar load_dialect(const std::string& path) {
  if (path.empty()) fail("missing --grammar");
  return Grammar::from_spec(read_text_file(path), true);
}

Schema load_schema(const std::string& path) {
  if (path.empty()) fail("missing --schema");
  return Schema::from_file(path);
}

RuleToggles toggles_from(const std::vector<std::string>& disabled) {
  RuleToggles t;
  for (const auto& r : disabled) {
    if (r == "R1") t.r1 = false;
    else if (r == "R2") t.r2 = false;
    else if (r == "R3") t.r3 = false;
    else if (r == "R4") t.r4 = false;
    else if (r == "R5") t.r5 = false;
    else fail("unknown rule '" + r + "' (expected R1..R5)");
  }
  return t;
}

// A preprocessed workload lives in a directory: canonical.txt holds the
// bucketized queries, buckets.txt the value buckets that produced them.
struct Bundle {
  std::vector<std::string> canonical;
  BucketMap map;
  std::string dir;
};

Bundle load_bundle(const std::string& dir) {
  if (dir.empty()) fail("missing --workload (a directory produced by qgen preprocess)");
  Bundle b;
  b.dir = dir;
  const std::string canon = dir + "/canonical.txt";
  const std::string buckets = dir + "/buckets.txt";
  if (!fs::exists(canon)) fail(canon + ": not found (run qgen preprocess first)");
  if (!fs::exists(buckets)) fail(buckets + ": not found (run qgen preprocess first)");
  b.canonical = read_workload_file(canon);
  b.map = BucketMap::load(buckets);
  return b;
}

std::vector<std::string> digest_header(const Grammar* g, const Schema* s, const BucketMap* m) {
  std::vector<std::string> h;
  if (g) h.push_back("grammar=" + g->digest_hex());
  if (s) h.push_back("schema=" + s->digest_hex());
  if (m) h.push_back("buckets=" + to_hex(m->digest()));
  return h;
}

ModelConfig profile_config(const std::string& name) {
  if (name == "paper") return ModelConfig::paper();
  if (name == "desk") return ModelConfig::desk();
  fail("unknown profile '" + name + "'");
  return {};
}

int cmd_preprocess(const Options& opt) {
  Schema schema = load_schema(opt.schema);
  if (opt.workload.empty()) fail("missing --workload (raw SQL file)");
  if (opt.out.empty()) fail("missing --out (bundle directory)");

  // Keep original line numbers so parse failures point at the input file.
  std::istringstream in(read_text_file(opt.workload));
  std::vector<std::pair<int, std::string>> raw;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || starts_with(t, "--")) continue;
    raw.emplace_back(lineno, t);
  }
  if (raw.empty()) fail(opt.workload + ": no queries found");

  // Clause reordering runs per line first so a parse failure names the
  // offending line of the input file.
  std::vector<std::string> reordered;
  reordered.reserve(raw.size());
  for (const auto& [ln, q] : raw) {
    try {
      reordered.push_back(restructure(q));
    } catch (const QgError& e) {
      fail(opt.workload + " line " + std::to_string(ln) + ": " + e.what());
    }
  }

  std::vector<std::string> raw_queries;
  raw_queries.reserve(raw.size());
  for (const auto& [ln, q] : raw) raw_queries.push_back(q);
  BucketMap map;
  try {
    map = BucketMap::build(raw_queries, schema);
  } catch (const QgError& whole) {
    for (const auto& [ln, q] : raw) {
      try {
        BucketMap::build({q}, schema);
      } catch (const QgError& e) {
        fail(opt.workload + " line " + std::to_string(ln) + ": " + e.what());
      }
    }
    throw;
  }

  PreprocessStats stats;
  std::vector<std::string> canonical;
  canonical.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    try {
      canonical.push_back(bucketize(reordered[i], map, schema, &stats));
    } catch (const QgError& e) {
      fail(opt.workload + " line " + std::to_string(raw[i].first) + ": " + e.what());
    }
  }

  fs::create_directories(opt.out);
  write_workload_file(opt.out + "/canonical.txt", canonical,
                      digest_header(nullptr, &schema, &map));
  map.save(opt.out + "/buckets.txt");
  std::cout << "preprocess: " << canonical.size() << " queries -> " << opt.out
            << " (" << map.columns().size() << " bucketed columns, "
            << stats.out_of_range << " out-of-range constants)\n";
  return 0;
}

int cmd_parse(const Options& opt) {
  Grammar dialect = load_dialect(opt.grammar);
  Schema schema = load_schema(opt.schema);
  Bundle b = load_bundle(opt.workload);
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &b.map);
  auto seqs = workload_to_sequences(bound.grammar(), bound.parser(), b.canonical);
  const std::string out = opt.out.empty() ? b.dir + "/sequences.txt" : opt.out;
  write_sequence_file(out, bound.grammar(), seqs);
  std::cout << "parse: " << seqs.size() << " sequences -> " << out << "\n";
  return 0;
}

int cmd_derive(const Options& opt) {
  Grammar dialect = load_dialect(opt.grammar);
  Schema schema = load_schema(opt.schema);
  Bundle b = load_bundle(opt.workload);
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &b.map);
  const std::string in = b.dir + "/sequences.txt";
  if (!fs::exists(in)) fail(in + ": not found (run qgen parse first)");
  auto seqs = read_sequence_file(in, bound.grammar());
  std::vector<std::string> rendered;
  rendered.reserve(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    try {
      rendered.push_back(productions_to_query(bound.grammar(), seqs[i].ids));
    } catch (const QgError& e) {
      fail("sequence " + std::to_string(i) + ": " + e.what());
    }
  }
  const std::string out = opt.out.empty() ? b.dir + "/derived.txt" : opt.out;
  write_workload_file(out, rendered, digest_header(&bound.grammar(), &schema, &b.map));
  std::cout << "derive: " << rendered.size() << " queries -> " << out << "\n";
  return 0;
}

int cmd_train(const Options& opt, bool seed_given) {
  Grammar dialect = load_dialect(opt.grammar);
  Schema schema = load_schema(opt.schema);
  if (opt.data.empty()) fail("missing --data (directory with one CSV per table)");
  if (opt.checkpoint.empty()) fail("missing --checkpoint (output path)");
  Bundle b = load_bundle(opt.workload);
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &b.map);
  Database db = Database::load(schema, opt.data);

  TrainingConfig cfg;
  if (!opt.config.empty()) cfg = parse_training_config(read_text_file(opt.config));
  if (seed_given || cfg.seed == 0) cfg.seed = opt.seed;

  auto corpus = prepare_sequences(bound, bound.parser(), b.canonical);
  Rng rng(cfg.seed);

  Checkpoint ckpt;
  int feature_failures = 0;
  if (opt.fine_tune) {
    ckpt = Checkpoint::load(opt.checkpoint, bound.grammar().digest());
    // Keep the stored normalizer so old and new features share one scale.
    for (auto& ts : corpus) {
      try {
        FeatureVector f = featurize(db, b.map, ts.text, rng);
        ts.features = ckpt.norm.apply(f);
      } catch (const std::exception&) {
        ++feature_failures;
        ts.features.clear();
      }
    }
  } else {
    FeatureNorm norm = featurize_corpus(corpus, db, b.map, rng, &feature_failures);
    ckpt = Checkpoint::fresh(profile_config(opt.profile), bound.grammar().production_count(),
                             bound.grammar().digest(), norm, rng);
  }

  const std::string report_path = opt.out.empty() ? opt.checkpoint + ".report.jsonl" : opt.out;
  json run{{"record", "run"},
           {"fine_tune", opt.fine_tune},
           {"seed", cfg.seed},
           {"profile", opt.fine_tune ? std::string("checkpoint") : opt.profile},
           {"grammar_digest", bound.grammar().digest_hex()},
           {"schema_digest", schema.digest_hex()},
           {"buckets_digest", to_hex(b.map.digest())},
           {"queries", corpus.size()},
           {"feature_failures", feature_failures},
           {"pretrain_epochs", cfg.pretrain_epochs},
           {"adversarial_epochs", cfg.adversarial_epochs}};

  std::string lines = run.dump() + "\n";
  if (cfg.pretrain_epochs > 0) {
    TrainingReport pre = pretrain_mle(ckpt, bound, corpus, cfg, rng);
    lines += pre.to_jsonl();
  }
  if (cfg.adversarial_epochs > 0) {
    TrainingReport adv = train_adversarial(ckpt, bound, corpus, db, b.map, cfg, rng,
                                           cfg.pretrain_epochs, opt.checkpoint);
    lines += adv.to_jsonl();
  }
  ckpt.save(opt.checkpoint);
  write_text_file(report_path, lines);
  std::cout << "train: " << corpus.size() << " queries, " << cfg.pretrain_epochs
            << "+" << cfg.adversarial_epochs << " epochs -> " << opt.checkpoint
            << " (report " << report_path << ")\n";
  return 0;
}

int run_generate(const Options& opt, const std::string& method) {
  Grammar dialect = load_dialect(opt.grammar);
  Schema schema = load_schema(opt.schema);
  if (opt.out.empty()) fail("missing --out (generated workload file)");
  if (opt.n < 0) fail("--n must be >= 0");
  Bundle b = load_bundle(opt.workload);
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &b.map);
  RuleToggles toggles = toggles_from(opt.disabled_rules);
  Rng rng(opt.seed);

  std::vector<std::string> canonical;
  if (opt.n > 0 && method == "gan") {
    if (opt.checkpoint.empty()) fail("missing --checkpoint (gan method)");
    Checkpoint ckpt = Checkpoint::load(opt.checkpoint, bound.grammar().digest());
    const int limit = opt.n * 4 + 16;
    int attempts = 0;
    while (static_cast<int>(canonical.size()) < opt.n) {
      if (++attempts > limit) fail("generation exceeded the step cap too often; giving up");
      SampleResult s = sample_sequence(*ckpt.gen, bound, toggles, rng);
      if (s.ok) canonical.push_back(s.rendered);
    }
  } else if (opt.n > 0 && method == "random") {
    canonical = random_generate(bound, opt.n, rng, toggles);
  } else if (opt.n > 0 && method == "template") {
    auto templates = extract_templates(b.canonical, b.map);
    canonical = template_generate(templates, b.map, opt.n, rng);
  }

  std::vector<std::string> executable;
  executable.reserve(canonical.size());
  for (const auto& q : canonical) executable.push_back(debucketize(q, b.map, rng));

  auto header = digest_header(&bound.grammar(), &schema, &b.map);
  header.push_back("method=" + method);
  header.push_back("seed=" + std::to_string(opt.seed));
  write_workload_file(opt.out, executable, header);
  std::cout << "generate: " << executable.size() << " queries (" << method << ") -> "
            << opt.out << "\n";
  return 0;
}

// Splits "name=path" candidate arguments.
std::pair<std::string, std::string> split_candidate(const std::string& arg) {
  auto pos = arg.find('=');
  if (pos == std::string::npos || pos == 0 || pos + 1 == arg.size())
    fail("candidate '" + arg + "' must look like name=path");
  return {arg.substr(0, pos), arg.substr(pos + 1)};
}

// Accepts either executable SQL or the canonical bucketized form and returns
// the canonical form for metric computation.
std::vector<std::string> canonicalize_workload(const std::string& path, const BucketMap& map,
                                               const Schema& schema) {
  std::vector<std::string> queries = read_workload_file(path);
  std::vector<std::string> out;
  out.reserve(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    try {
      auto toks = raw_tokenize(queries[i]);
      if (!toks.empty() && toks[0].text == "FROM") {
        out.push_back(queries[i]);
      } else {
        out.push_back(bucketize(restructure(queries[i]), map, schema, nullptr));
      }
    } catch (const QgError& e) {
      fail(path + " query " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

// Length and join structure read straight off the canonical text, so these
// two distances survive when no database is available.
FeatureVector structural_features(const std::string& canonical) {
  FeatureVector f;
  auto toks = raw_tokenize(canonical);
  f.length = static_cast<int>(toks.size());
  int depth = 0;
  int tables = 0;
  bool in_from = false;
  for (const auto& t : toks) {
    if (t.kind == RawToken::Punct && t.text == "(") ++depth;
    else if (t.kind == RawToken::Punct && t.text == ")") --depth;
    else if (depth == 0 && t.kind == RawToken::Keyword && t.text == "FROM") in_from = true;
    else if (depth == 0 && t.kind == RawToken::Keyword) in_from = false;
    else if (depth == 0 && in_from && t.kind == RawToken::Ident) ++tables;
  }
  f.join_count = tables > 1 ? tables - 1 : 0;
  return f;
}

int cmd_evaluate(const Options& opt) {
  Grammar dialect = load_dialect(opt.grammar);
  Schema schema = load_schema(opt.schema);
  Bundle b = load_bundle(opt.workload);
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &b.map);
  const bool degraded = opt.data.empty();
  Database db;
  if (!degraded) db = Database::load(schema, opt.data);

  // Each workload gets its own generator seeded the same way, so a workload
  // measured against itself lands at distance zero.
  auto featurize_all = [&](const std::vector<std::string>& canonical, int* failures) {
    std::vector<FeatureVector> fv;
    fv.reserve(canonical.size());
    Rng rng(opt.seed);
    for (const auto& q : canonical) {
      if (degraded) {
        fv.push_back(structural_features(q));
        continue;
      }
      try {
        fv.push_back(featurize(db, b.map, q, rng));
      } catch (const std::exception&) {
        ++*failures;
      }
    }
    return fv;
  };

  int real_failures = 0;
  auto real_features = featurize_all(b.canonical, &real_failures);
  CorrelationMatrix real_corr = attr_correlation(b.canonical, schema);
  ValidityRates real_valid = validity_rates(b.canonical, bound);

  json report{{"record", "evaluation"},
              {"grammar_digest", bound.grammar().digest_hex()},
              {"schema_digest", schema.digest_hex()},
              {"buckets_digest", to_hex(b.map.digest())},
              {"seed", opt.seed},
              {"degraded", degraded},
              {"reference",
               {{"queries", b.canonical.size()},
                {"feature_failures", real_failures},
                {"syntactic_validity", real_valid.syntactic},
                {"semantic_validity", real_valid.semantic}}}};

  json rows = json::array();
  std::set<std::string> seen;
  for (const auto& cand : opt.candidates) {
    auto [name, path] = split_candidate(cand);
    if (!seen.insert(name).second) fail("duplicate candidate name '" + name + "'");
    auto canonical = canonicalize_workload(path, b.map, schema);
    if (canonical.empty()) fail(path + ": no queries found");
    int failures = 0;
    auto features = featurize_all(canonical, &failures);
    ValidityRates valid = validity_rates(canonical, bound);
    json row{{"name", name},
             {"path", path},
             {"queries", canonical.size()},
             {"feature_failures", failures},
             {"sequence_mmd", sequence_mmd(canonical, b.canonical)},
             {"length_wd", feature_wd(features, real_features, "length")},
             {"joins_wd", feature_wd(features, real_features, "joins")},
             {"correlation_similarity",
              matrix_cosine(attr_correlation(canonical, schema), real_corr)},
             {"syntactic_validity", valid.syntactic},
             {"semantic_validity", valid.semantic}};
    if (!degraded) {
      row["cardinality_wd"] = feature_wd(features, real_features, "cardinality");
      row["cost_wd"] = feature_wd(features, real_features, "cost");
    }
    rows.push_back(std::move(row));
  }
  report["candidates"] = rows;

  const std::string text = report.dump(2) + "\n";
  if (opt.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(opt.out, text);
    std::cout << "evaluate: " << rows.size() << " candidates -> " << opt.out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qgen: grammar-constrained SQL workload synthesis"};
  app.require_subcommand(0, 1);

  Options opt;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--grammar", opt.grammar, "SQL dialect grammar file");
    c->add_option("--schema", opt.schema, "schema description file");
    c->add_option("--workload", opt.workload, "workload input (file or bundle directory)");
    c->add_option("--out", opt.out, "output path");
    c->add_option("--seed", opt.seed, "random seed");
  };

  CLI::App* pre = app.add_subcommand("preprocess",
                                     "bucketize a raw SQL workload into a bundle directory");
  add_common(pre);

  CLI::App* parse = app.add_subcommand("parse", "parse a bundle into production sequences");
  add_common(parse);

  CLI::App* derive = app.add_subcommand("derive", "render production sequences back to queries");
  add_common(derive);

  CLI::App* train = app.add_subcommand("train", "train the generative model on a bundle");
  add_common(train);
  train->add_option("--data", opt.data, "directory with one CSV per table");
  train->add_option("--checkpoint", opt.checkpoint, "checkpoint output path");
  train->add_option("--config", opt.config, "training config file (flags win on overlap)");
  train->add_option("--profile", opt.profile, "model size profile")
      ->check(CLI::IsMember({"paper", "desk"}));
  train->add_flag("--fine-tune", opt.fine_tune, "resume from an existing checkpoint");

  CLI::App* gen = app.add_subcommand("generate", "synthesize a new workload");
  add_common(gen);
  gen->add_option("--checkpoint", opt.checkpoint, "trained checkpoint (gan method)");
  gen->add_option("--n", opt.n, "number of queries");
  gen->add_option("--method", opt.method, "generation method")
      ->check(CLI::IsMember({"gan", "random", "template"}));
  gen->add_option("--disable-rule", opt.disabled_rules, "drop a semantic rule (repeatable)")
      ->check(CLI::IsMember({"R1", "R2", "R3", "R4", "R5"}));

  CLI::App* base = app.add_subcommand("baseline", "synthesize with a non-learned baseline");
  add_common(base);
  base->add_option("--n", opt.n, "number of queries");
  std::string base_method = "random";
  base->add_option("--method", base_method, "baseline method")
      ->check(CLI::IsMember({"random", "template"}));
  base->add_option("--disable-rule", opt.disabled_rules, "drop a semantic rule (repeatable)")
      ->check(CLI::IsMember({"R1", "R2", "R3", "R4", "R5"}));

  CLI::App* eval = app.add_subcommand("evaluate", "compare candidate workloads to the bundle");
  add_common(eval);
  eval->add_option("--data", opt.data, "directory with one CSV per table");
  eval->add_option("candidates", opt.candidates, "name=path workload files (repeatable)");

  CLI11_PARSE(app, argc, argv);

  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 2;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(opt);
    if (parse->parsed()) return cmd_parse(opt);
    if (derive->parsed()) return cmd_derive(opt);
    if (train->parsed()) return cmd_train(opt, train->count("--seed") > 0);
    if (gen->parsed()) return run_generate(opt, opt.method);
    if (base->parsed()) return run_generate(opt, base_method);
    if (eval->parsed()) return cmd_evaluate(opt);
  } catch (const QgError& e) {
    std::cerr << "qgen " << app.get_subcommands().front()->get_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "qgen: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
