#include <cmath>
#include <string>

#include "cli_fixture.hpp"
#include "doctest.h"
#include "mrfalign/aligner.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/mrf.hpp"

using namespace mrfalign;
using namespace mrfalign::testing;

namespace {

const CliCorpus& corpus() {
  static const CliCorpus c = [] {
    CliCorpus made(MRFALIGN_CLI, MRFALIGN_CLI_CORPUS "/cli_corpus");
    REQUIRE(made.build_models());
    return made;
  }();
  return c;
}

std::string value_of(const std::string& table, const std::string& key) {
  std::istringstream in(table);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

}  // namespace

TEST_CASE("every output starts with the version and config hash") {
  const auto& c = corpus();
  for (const auto& cmd : c.commands(c.path("out.txt"))) {
    CAPTURE(cmd);
    REQUIRE(c.run(cmd).code == 0);
    CHECK(slurp(c.path("out.txt")).rfind("# mrfalign 0.1.0 config=", 0) == 0);
  }
  // Binary files keep their header and still load.
  CHECK(slurp(c.path("target.mrf")).rfind("# mrfalign ", 0) == 0);
  CHECK(load_mrf(slurp(c.path("target.mrf"))).id == "target");
}

TEST_CASE("msa-stats") {
  const auto& c = corpus();
  const auto single = c.run("msa-stats " + c.q("single.fasta"));
  REQUIRE(single.code == 0);
  CHECK(value_of(single.out, "rows") == "1");
  CHECK(value_of(single.out, "columns") == "10");
  CHECK(value_of(single.out, "meff") == "1");
  CHECK(c.run("msa-stats " + c.q("empty.fasta")).code == 2);
  CHECK(c.run("msa-stats " + c.q("missing.fasta")).code == 2);
  CHECK(c.run("msa-stats " + c.q("target.fasta")).out == c.run("msa-stats " + c.q("target.fasta")).out);
}

TEST_CASE("usage errors exit with 1") {
  const auto& c = corpus();
  CHECK(c.run("").code == 1);
  CHECK(c.run("no-such-command").code == 1);
  CHECK(c.run("msa-stats").code == 1);
  CHECK(c.run("msa-stats " + c.q("target.fasta") + " --bogus").code == 1);
  CHECK(c.run("align " + c.q("target.mrf") + " " + c.q("other.mrf")).code == 1);  // no --model
  CHECK(c.run("contacts-predict " + c.q("target.fasta") + " --aux " + c.q("aux.fasta")).code == 1);
  CHECK(c.run("cnf-train " + c.q("pairs.txt") + " --objective xyz").code == 1);
  CHECK(c.run("msa-stats " + c.q("target.fasta") + " --threads 0").code == 1);
}

TEST_CASE("align-eval of a reference against itself") {
  const auto& c = corpus();
  const auto r = c.run("align-eval " + c.q("ref_tb.triples") + " " + c.q("ref_tb.triples"));
  REQUIRE(r.code == 0);
  CHECK(strip_header(r.out).find("0\t1\t1\t30\t30\t30\n") != std::string::npos);
  CHECK(strip_header(r.out).find("4\t1\t1\t30\t30\t30\n") != std::string::npos);
}

TEST_CASE("node-only and full alignment agree on edgeless MRFs") {
  const auto& c = corpus();
  const auto base = "align " + c.q("edgeless.mrf") + " " + c.q("edgeless_other.mrf") + " --model " + c.q("model.cnf") +
                    " --background-mode self";
  const auto full = c.run(base), node = c.run(base + " --node-only");
  REQUIRE(full.code == 0);
  REQUIRE(node.code == 0);
  CHECK(strip_header(full.out) == strip_header(node.out));
  CHECK(parse_triples(full.out).m == 26);
}

TEST_CASE("missing distance distributions need --two-bin") {
  const auto& c = corpus();
  const auto base = "align " + c.q("nodist.mrf") + " " + c.q("target_b.mrf") + " --model " + c.q("model.cnf") +
                    " --background-mode self";
  CHECK(c.run(base).code == 1);
  CHECK(c.run(base + " --two-bin 8 -1.5").code == 0);
  CHECK(c.run(base + " --node-only").code == 0);
}

TEST_CASE("the seed only matters where something is sampled") {
  const auto& c = corpus();
  const auto self = "align " + c.q("target.mrf") + " " + c.q("other.mrf") + " --model " + c.q("model.cnf") +
                    " --background-mode self";
  const auto a = c.run(self + " --seed 1"), b = c.run(self + " --seed 99");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);

  const auto train = "cnf-train " + c.q("pairs.txt") + " --hidden 4 --restarts 2 --max-iter 5";
  const auto t1 = c.run(train + " --seed 3"), t2 = c.run(train + " --seed 3"), t3 = c.run(train + " --seed 4");
  REQUIRE(t1.code == 0);
  CHECK(fnv1a(t1.out) == fnv1a(t2.out));
  CHECK(strip_header(t1.out) != strip_header(t3.out));
}

TEST_CASE("thread count does not change any output") {
  const auto& c = corpus();
  const auto one = c.commands(c.path("t1.out")), four = c.commands(c.path("t4.out"));
  for (std::size_t k = 0; k < one.size(); ++k) {
    CAPTURE(one[k]);
    REQUIRE(c.run(one[k] + " --threads 1").code == 0);
    REQUIRE(c.run(four[k] + " --threads 4").code == 0);
    CHECK(slurp(c.path("t1.out")) == slurp(c.path("t4.out")));
  }
}

TEST_CASE("config files fill options and flags override them") {
  const auto& c = corpus();
  spill(c.path("stats.cfg"), "# comment\nthreads = 2\n");
  CHECK(c.run("msa-stats " + c.q("single.fasta") + " --config " + c.q("stats.cfg")).code == 0);

  const auto base = "contacts-predict " + c.q("target.fasta");
  spill(c.path("cp.cfg"), "max_iter = 1\nlambda1 = 0.05\n");
  const auto from_file = c.run(base + " --config " + c.q("cp.cfg"));
  const auto from_flags = c.run(base + " --max-iter 1 --lambda1 0.05");
  REQUIRE(from_file.code == 0);
  CHECK(from_file.out == from_flags.out);
  const auto overridden = c.run(base + " --config " + c.q("cp.cfg") + " --lambda1 0.02");
  CHECK(overridden.out == c.run(base + " --max-iter 1 --lambda1 0.02").out);

  spill(c.path("bad.cfg"), "no_such_key = 1\n");
  CHECK(c.run(base + " --config " + c.q("bad.cfg")).code == 1);
  spill(c.path("broken.cfg"), "just words\n");
  CHECK(c.run(base + " --config " + c.q("broken.cfg")).code == 2);
}

TEST_CASE("contacts-predict flags non-convergence but succeeds") {
  const auto& c = corpus();
  const auto r = c.run("contacts-predict " + c.q("target.fasta") + " --max-iter 1");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("# warning: solver did not converge") != std::string::npos);
  const auto list = parse_contacts(r.out);
  CHECK(list.L == 30);
  CHECK(!list.entries.empty());

  const auto ok = c.run("contacts-predict " + c.q("target.fasta") + " --lambda1 0.03");
  REQUIRE(ok.code == 0);
  CHECK(ok.out.find("warning") == std::string::npos);
  spill(c.path("pred.txt"), ok.out);
  const auto eval = c.run("contacts-eval " + c.q("pred.txt") + " " + c.q("native.txt"));
  REQUIRE(eval.code == 0);
  CHECK(eval.out.find("long\tL/10\t3\t") != std::string::npos);
}

TEST_CASE("search and p-values") {
  const auto& c = corpus();
  const auto fit = c.run("pvalue-fit " + c.q("scores.txt") + " -o " + c.q("evd.txt"));
  REQUIRE(fit.code == 0);
  const auto evd = slurp(c.path("evd.txt"));
  CHECK(std::abs(std::stod(value_of(evd, "mu")) - 3.0) < 0.4);
  CHECK(std::abs(std::stod(value_of(evd, "beta")) - 1.5) < 0.3);

  const auto base = "search " + c.q("target.mrf") + " " + c.q("lib") + " --model " + c.q("model.cnf") + " --samples 200";
  const auto hits = c.run(base + " --top-k 2 --evd " + c.q("evd.txt"));
  REQUIRE(hits.code == 0);
  const auto body = strip_header(hits.out);
  CHECK(std::count(body.begin(), body.end(), '\n') == 2);
  CHECK(body.find("NA") == std::string::npos);
  CHECK(body.rfind("1\thomolog\t", 0) == 0);
  CHECK(c.run(base + " --top-k 50").code == 0);
  CHECK(slurp(c.path("stderr.log")).find("every template is realigned") != std::string::npos);
  const auto json = c.run(base + " --top-k 2 --json");
  REQUIRE(json.code == 0);
  CHECK(json.out.find("\"realigned\": 2") != std::string::npos);
  CHECK(c.run("pvalue-fit " + c.q("ref_bt.triples") + " --column 9").code == 2);
}
