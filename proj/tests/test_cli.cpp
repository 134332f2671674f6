#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "chatir/eval.hpp"
#include "chatir/service.hpp"
#include "chatir/synth.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace chatir;
using nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), "chatir");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("chatir_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

// idf over the message side, unseen terms at df = 0.
double oracle_cosine(const std::vector<PairRecord>& pairs, const PairRecord& query,
                     const std::vector<std::string>& doc_tokens) {
  std::map<std::string, std::size_t> df;
  for (const auto& p : pairs) {
    std::map<std::string, bool> seen;
    for (const auto& t : p.message.tokens) seen[t] = true;
    for (const auto& [t, _] : seen) ++df[t];
  }
  const double n = static_cast<double>(pairs.size());
  auto idf = [&](const std::string& t) {
    const auto it = df.find(t);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((n + 1.0) / (d + 1.0)) + 1.0;
  };
  std::map<std::string, double> q;
  for (const auto& t : query.message.tokens) q[t] += 1.0;
  for (const auto& c : query.context)
    for (const auto& t : c.tokens) q[t] += 0.5;
  std::map<std::string, double> d;
  for (const auto& t : doc_tokens) d[t] += 1.0;
  double qq = 0.0, dd = 0.0, dot = 0.0;
  for (const auto& [t, w] : q) qq += (w * idf(t)) * (w * idf(t));
  for (const auto& [t, w] : d) {
    dd += (w * idf(t)) * (w * idf(t));
    const auto hit = q.find(t);
    if (hit != q.end()) dot += hit->second * idf(t) * w * idf(t);
  }
  if (qq == 0.0 || dd == 0.0) return 0.0;
  return dot / (std::sqrt(qq) * std::sqrt(dd));
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"index"}).code == 1);
  CHECK(run_cli({"train", "semantic"}).code == 1);
  CHECK(run_cli({"eval", "safety", "--corpus", "x"}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  const auto help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train") != std::string::npos);
}

TEST_CASE("data errors exit with code 2") {
  TempDir dir("data_errors");
  CHECK(run_cli({"index", "build", "--corpus", dir / "missing.jsonl", "--out", dir / "idx"}).code == 2);

  write_file(dir.path / "bad.jsonl", "{\"id\": 0, \"message\": \"hi\"}\n");
  const auto bad = run_cli({"index", "build", "--corpus", dir / "bad.jsonl", "--out", dir / "idx"});
  CHECK(bad.code == 2);
  CHECK_FALSE(bad.err.empty());

  fs::create_directories(dir.path / "models");
  write_file(dir.path / "models" / kSemanticFile, "not a checkpoint");
  write_file(dir.path / "models" / kRankerFile, "not a checkpoint");
  write_file(dir.path / "pairs.jsonl",
             "{\"id\":0,\"message\":\"a\",\"response\":\"b\"}\n"
             "{\"id\":1,\"message\":\"c\",\"response\":\"d\"}\n");
  CHECK(run_cli({"eval", "retrieval", "--corpus", dir / "pairs.jsonl", "--models", dir / "models"}).code == 2);
}

TEST_CASE("index build writes a loadable index") {
  TempDir dir("index");
  {
    std::ofstream out(dir.path / "pairs.jsonl");
    write_pair_corpus(out, synth::dialogue_corpus({40, 0.5, 3}));
  }
  const auto r = run_cli({"index", "build", "--corpus", dir / "pairs.jsonl", "--out", dir / "idx"});
  REQUIRE(r.code == 0);
  const auto summary = json::parse(r.out);
  CHECK(summary["pairs"] == 40);
  const auto loaded = IndexedCorpus::load(dir.path / "idx" / kIndexFile);
  CHECK(loaded.index == IndexedCorpus::build(load_pair_corpus(dir / "pairs.jsonl")).index);
}

TEST_CASE("train semantic at zero learning rate keeps the initial weights") {
  TempDir dir("train_lr0");
  {
    std::ofstream out(dir.path / "pairs.jsonl");
    write_pair_corpus(out, synth::dialogue_corpus({kMinSemanticPairs, 0.5, 5}));
  }
  const auto r = run_cli({"train", "semantic", "--corpus", dir / "pairs.jsonl", "--out", dir / "m",
                          "--epochs", "1", "--lr", "0", "--seed", "7"});
  REQUIRE(r.code == 0);
  CdssmEncoder::create(EncoderDims{}, 7).save(dir.path / "init.ckpt");
  CHECK(slurp(dir.path / "m" / kSemanticFile) == slurp(dir.path / "init.ckpt"));

  std::ifstream report(dir.path / "m" / "semantic_report.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(report, line)) {
    const auto row = json::parse(line);
    CHECK(row["model"] == "semantic");
    CHECK(std::isfinite(row["mean_loss"].get<double>()));
    ++rows;
  }
  CHECK(rows == 1);
}

TEST_CASE("eval retrieval on a tiny corpus matches a brute-force ranking") {
  TempDir dir("eval_tiny");
  write_file(dir.path / "pairs.jsonl",
             "{\"id\":0,\"message\":\"do you like pizza\",\"response\":\"pizza is my favorite food\"}\n"
             "{\"id\":1,\"message\":\"what music do you play\",\"context\":[\"hello\"],"
             "\"response\":\"i play jazz music on piano\"}\n"
             "{\"id\":2,\"message\":\"is it raining today\",\"response\":\"the weather is sunny and warm\"}\n");
  const auto encoder = CdssmEncoder::create(EncoderDims{3000, 16, 3, 16}, 11);
  const auto ranker = RankerModel::from_weights({0.9, 0.6, 0.4, 0.3, -0.2, 0.05});
  fs::create_directories(dir.path / "m");
  encoder.save(dir.path / "m" / kSemanticFile);
  ranker.save(dir.path / "m" / kRankerFile);

  const auto r = run_cli({"eval", "retrieval", "--corpus", dir / "pairs.jsonl", "--models", dir / "m"});
  REQUIRE(r.code == 0);
  const auto got = json::parse(r.out);

  // With 99 distractors requested every other response is a candidate, so the
  // oracle ranks all three responses for each query.
  const auto pairs = load_pair_corpus(dir / "pairs.jsonl");
  std::vector<double> ranks;
  for (const auto& q : pairs) {
    std::vector<double> raw;
    for (const auto& c : pairs) raw.push_back(oracle_cosine(pairs, q, c.response.tokens));
    double max_raw = 0.0;
    for (double v : raw) max_raw = std::max(max_raw, v);
    std::vector<double> totals;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const double f1 = max_raw > 0.0 ? raw[j] / max_raw : 0.0;
      totals.push_back(ranker.score(extract_features(q.message, q.context, pairs[j], f1, encoder)));
    }
    double rank = 1;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      if (j == q.id) continue;
      if (totals[j] > totals[q.id] || (totals[j] == totals[q.id] && j < q.id)) ++rank;
    }
    ranks.push_back(rank);
  }
  double r1 = 0.0, mrr = 0.0;
  for (double k : ranks) {
    r1 += k == 1 ? 1.0 : 0.0;
    mrr += 1.0 / k;
  }
  CHECK(got["queries"] == 3);
  CHECK(got["candidates_per_query"] == 3);
  CHECK(got["recall_at_1"].get<double>() == doctest::Approx(r1 / 3).epsilon(1e-12));
  CHECK(got["mrr"].get<double>() == doctest::Approx(mrr / 3).epsilon(1e-12));
  CHECK(got["recall_at_5"].get<double>() == 1.0);
}

TEST_CASE("synth output round-trips through the corpus readers") {
  TempDir dir("synth");
  REQUIRE(run_cli({"synth", "dialogue", "--out", dir / "d.jsonl", "--count", "30"}).code == 0);
  CHECK(load_pair_corpus(dir / "d.jsonl").size() == 30);
  REQUIRE(run_cli({"synth", "emotion", "--out", dir / "e.jsonl", "--count", "5"}).code == 0);
  CHECK(load_labeled_corpus(dir / "e.jsonl").size() == 20);
  REQUIRE(run_cli({"synth", "safety", "--out", dir / "s.jsonl", "--count", "5", "--terms",
                   "data/safety/offensive_terms.txt"})
              .code == 0);
  CHECK(load_labeled_corpus(dir / "s.jsonl").size() == 10);
}
