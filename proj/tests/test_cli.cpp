#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "qgen/metrics.hpp"
#include "qgen/preprocess.hpp"
#include "qgen/schema.hpp"
#include "qgen/semantics.hpp"
#include "qgen/util.hpp"
#include "test_support.hpp"

using namespace qgen;
using qgen::test::TempDir;
using qgen::test::repo_path;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

// Runs the CLI binary with stderr folded into stdout.
RunResult run_cli(const std::string& args) {
  RunResult r;
  std::string cmd = std::string(QGEN_CLI_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  int rc = pclose(pipe);
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return r;
}

std::string grammar_arg() { return " --grammar " + repo_path("grammars/sql.grammar"); }
std::string schema_arg() { return " --schema " + repo_path("testdata/schema.txt"); }
std::string data_arg() { return " --data " + repo_path("testdata/db"); }

std::string make_bundle(const TempDir& tmp, const std::string& name = "bundle") {
  std::string dir = tmp.file(name);
  RunResult r = run_cli("preprocess" + schema_arg() + " --workload " +
                        repo_path("testdata/workload.sql") + " --out " + dir);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  return dir;
}

}  // namespace

TEST_CASE("cli: no subcommand prints help, exit 2") {
  RunResult r = run_cli("");
  CHECK(r.status == 2);
  CHECK(r.output.find("Usage") != std::string::npos);
  CHECK(r.output.find("preprocess") != std::string::npos);
}

TEST_CASE("cli: preprocess is deterministic and derive restores the corpus") {
  TempDir tmp("cli_pre");
  std::string b1 = make_bundle(tmp, "b1");
  std::string b2 = make_bundle(tmp, "b2");
  CHECK(read_text_file(b1 + "/canonical.txt") == read_text_file(b2 + "/canonical.txt"));
  CHECK(read_text_file(b1 + "/buckets.txt") == read_text_file(b2 + "/buckets.txt"));
  CHECK(read_text_file(b1 + "/canonical.txt").find("schema=") != std::string::npos);

  RunResult p = run_cli("parse" + grammar_arg() + schema_arg() + " --workload " + b1);
  REQUIRE_MESSAGE(p.status == 0, p.output);
  RunResult d = run_cli("derive" + grammar_arg() + schema_arg() + " --workload " + b1);
  REQUIRE_MESSAGE(d.status == 0, d.output);
  CHECK(read_workload_file(b1 + "/derived.txt") == read_workload_file(b1 + "/canonical.txt"));
}

TEST_CASE("cli: preprocess failure names the input line") {
  TempDir tmp("cli_bad");
  write_text_file(tmp.file("bad.sql"),
                  "SELECT * FROM movies WHERE year > 1994\n"
                  "-- comment line\n"
                  "SELECT id UNION SELECT year FROM movies\n");
  RunResult r = run_cli("preprocess" + schema_arg() + " --workload " + tmp.file("bad.sql") +
                        " --out " + tmp.file("out"));
  CHECK(r.status == 1);
  CHECK(r.output.find("line 3") != std::string::npos);
  CHECK(r.output.find("UNION") != std::string::npos);
}

TEST_CASE("cli: baselines generate valid workloads, deterministic per seed") {
  TempDir tmp("cli_base");
  std::string bundle = make_bundle(tmp);
  std::string out1 = tmp.file("r1.sql");
  std::string out2 = tmp.file("r2.sql");
  for (const std::string& out : {out1, out2}) {
    RunResult r = run_cli("baseline" + grammar_arg() + schema_arg() + " --workload " + bundle +
                          " --n 25 --seed 11 --out " + out);
    REQUIRE_MESSAGE(r.status == 0, r.output);
  }
  CHECK(read_text_file(out1) == read_text_file(out2));

  auto queries = read_workload_file(out1);
  REQUIRE(queries.size() == 25);
  Schema schema = Schema::from_file(repo_path("testdata/schema.txt"));
  Grammar dialect = Grammar::from_spec(read_text_file(repo_path("grammars/sql.grammar")), true);
  BucketMap map = BucketMap::load(bundle + "/buckets.txt");
  BoundGrammar bound = BoundGrammar::bind(dialect, schema, &map);
  std::vector<std::string> canonical;
  for (const auto& q : queries) canonical.push_back(bucketize(restructure(q), map, schema));
  ValidityRates v = validity_rates(canonical, bound);
  CHECK(v.syntactic == 1.0);
  CHECK(v.semantic == 1.0);

  RunResult t = run_cli("baseline --method template" + grammar_arg() + schema_arg() +
                        " --workload " + bundle + " --n 30 --out " + tmp.file("t.sql"));
  REQUIRE_MESSAGE(t.status == 0, t.output);
  CHECK(read_workload_file(tmp.file("t.sql")).size() == 30);
}

TEST_CASE("cli: n=0 writes an empty workload and exits 0") {
  TempDir tmp("cli_zero");
  std::string bundle = make_bundle(tmp);
  RunResult r = run_cli("generate --method random" + grammar_arg() + schema_arg() +
                        " --workload " + bundle + " --n 0 --out " + tmp.file("none.sql"));
  CHECK(r.status == 0);
  CHECK(read_workload_file(tmp.file("none.sql")).empty());
}

TEST_CASE("cli: train, gan generate, fine-tune") {
  TempDir tmp("cli_train");
  std::string bundle = make_bundle(tmp);
  write_text_file(tmp.file("train.cfg"),
                  "pretrain_epochs = 2\nadversarial_epochs = 1\nbatch_size = 8\n"
                  "rollout_count = 2\nrollout_stride = 8\n");
  std::string ckpt = tmp.file("model.ckpt");
  RunResult t = run_cli("train" + grammar_arg() + schema_arg() + data_arg() + " --workload " +
                        bundle + " --checkpoint " + ckpt + " --config " + tmp.file("train.cfg") +
                        " --profile desk --seed 5");
  REQUIRE_MESSAGE(t.status == 0, t.output);

  std::istringstream report(read_text_file(ckpt + ".report.jsonl"));
  std::string line;
  REQUIRE(std::getline(report, line));
  auto run = nlohmann::json::parse(line);
  CHECK(run["record"] == "run");
  CHECK(run["fine_tune"] == false);
  CHECK(run["profile"] == "desk");
  CHECK(run["grammar_digest"].get<std::string>().size() == 16);
  int epochs = 0;
  while (std::getline(report, line)) {
    auto e = nlohmann::json::parse(line);
    CHECK(e["epoch"] == epochs);
    ++epochs;
  }
  CHECK(epochs == 3);

  RunResult g = run_cli("generate" + grammar_arg() + schema_arg() + " --workload " + bundle +
                        " --checkpoint " + ckpt + " --n 10 --out " + tmp.file("gan.sql"));
  REQUIRE_MESSAGE(g.status == 0, g.output);
  CHECK(read_workload_file(tmp.file("gan.sql")).size() == 10);

  RunResult ft = run_cli("train --fine-tune" + grammar_arg() + schema_arg() + data_arg() +
                         " --workload " + bundle + " --checkpoint " + ckpt + " --config " +
                         tmp.file("train.cfg") + " --seed 9");
  REQUIRE_MESSAGE(ft.status == 0, ft.output);
  std::istringstream report2(read_text_file(ckpt + ".report.jsonl"));
  REQUIRE(std::getline(report2, line));
  CHECK(nlohmann::json::parse(line)["fine_tune"] == true);
}

TEST_CASE("cli: evaluate scores a workload against itself at zero distance") {
  TempDir tmp("cli_eval");
  std::string bundle = make_bundle(tmp);
  RunResult r = run_cli("baseline" + grammar_arg() + schema_arg() + " --workload " + bundle +
                        " --n 20 --out " + tmp.file("rand.sql"));
  REQUIRE_MESSAGE(r.status == 0, r.output);

  std::string report = tmp.file("eval.json");
  RunResult e = run_cli("evaluate" + grammar_arg() + schema_arg() + data_arg() + " --workload " +
                        bundle + " --out " + report + " self=" + bundle + "/canonical.txt" +
                        " rand=" + tmp.file("rand.sql"));
  REQUIRE_MESSAGE(e.status == 0, e.output);
  auto j = nlohmann::json::parse(read_text_file(report));
  CHECK(j["degraded"] == false);
  REQUIRE(j["candidates"].size() == 2);
  auto self = j["candidates"][0];
  CHECK(self["name"] == "self");
  CHECK(self["sequence_mmd"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(self["cardinality_wd"].get<double>() == 0.0);
  CHECK(self["cost_wd"].get<double>() == 0.0);
  CHECK(self["length_wd"].get<double>() == 0.0);
  CHECK(self["correlation_similarity"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(self["semantic_validity"] == 1.0);
  auto rand_row = j["candidates"][1];
  CHECK(rand_row["sequence_mmd"].get<double>() > 0.0);
  CHECK(rand_row["syntactic_validity"] == 1.0);
}

TEST_CASE("cli: evaluate without data runs degraded") {
  TempDir tmp("cli_deg");
  std::string bundle = make_bundle(tmp);
  std::string report = tmp.file("eval.json");
  RunResult e = run_cli("evaluate" + grammar_arg() + schema_arg() + " --workload " + bundle +
                        " --out " + report + " self=" + bundle + "/canonical.txt");
  REQUIRE_MESSAGE(e.status == 0, e.output);
  auto j = nlohmann::json::parse(read_text_file(report));
  CHECK(j["degraded"] == true);
  auto self = j["candidates"][0];
  CHECK(!self.contains("cardinality_wd"));
  CHECK(!self.contains("cost_wd"));
  CHECK(self["length_wd"].get<double>() == 0.0);
  CHECK(self["joins_wd"].get<double>() == 0.0);
}

TEST_CASE("cli: flag validation failures exit nonzero") {
  TempDir tmp("cli_flags");
  std::string bundle = make_bundle(tmp);
  CHECK(run_cli("generate --method carrier" + grammar_arg() + schema_arg() + " --workload " +
                bundle + " --out x.sql")
            .status != 0);
  CHECK(run_cli("generate --method random --disable-rule R9" + grammar_arg() + schema_arg() +
                " --workload " + bundle + " --out x.sql")
            .status != 0);
  CHECK(run_cli("train" + grammar_arg() + schema_arg() + data_arg() + " --workload " + bundle)
            .status == 1);
  CHECK(run_cli("evaluate" + grammar_arg() + schema_arg() + " --workload " + bundle + " selfonly")
            .status == 1);
}
