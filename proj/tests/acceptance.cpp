// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "chatir/errors.hpp"
#include "chatir/eval.hpp"
#include "chatir/service.hpp"
#include "chatir/synth.hpp"
#include "cli.hpp"
#include "fuzz.hpp"
#include "httplib.h"
#include "nn_fixtures.hpp"
#include "ranker_fixtures.hpp"

using namespace chatir;
using namespace chatir::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------

constexpr double kFetchScoreTolerance = 1e-9;
constexpr double kFetchBudgetSeconds = 5.0;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr int kGradSeeds = 10;
constexpr double kGradBudgetSeconds = 60.0;
constexpr std::size_t kSemanticEpochs = 10;  // criterion allows up to 50
constexpr double kMinSeparation = 0.3;
constexpr double kUniformLossTolerance = 1e-6;
constexpr double kSemanticBudgetSeconds = 600.0;
constexpr double kMinEmotionF1 = 0.85;
constexpr double kSimplexTolerance = 1e-9;
constexpr double kMaxCleanFalsePositiveRate = 0.02;
constexpr double kMinRecallAt1 = 0.6;
constexpr double kMinMrr = 0.7;
constexpr double kMaxMedianLatencyMs = 50.0;

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << std::fixed << v;
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("chatir_acc_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// ---- shared models, trained on first use -----------------------------------

struct Shared {
  std::vector<PairRecord> train_pairs = synth::dialogue_corpus({500, 0.5, 1});
  std::optional<IndexedCorpus> train_corpus;
  std::optional<CdssmEncoder> encoder;
  std::optional<RankerModel> ranker;
  std::optional<EmotionModel> emotion;
  std::optional<OffensiveClassifier> safety;
  std::optional<std::vector<LabeledText>> safety_train;
  Lexicons lexicons = Lexicons::load("data/lexicons");
  DodgePolicy policy = DodgePolicy::load("data/safety/sensitive_topics.txt", "data/safety/dodges.txt");
  std::vector<std::string> terms = load_term_list("data/safety/offensive_terms.txt");
  double semantic_seconds = 0.0;

  const IndexedCorpus& corpus() {
    if (!train_corpus) train_corpus = IndexedCorpus::build(train_pairs);
    return *train_corpus;
  }
  const CdssmEncoder& semantic() {
    if (!encoder) {
      SemanticTrainOptions opt;
      opt.epochs = kSemanticEpochs;
      opt.seed = 1;
      const auto t0 = SteadyClock::now();
      encoder = train_semantic(train_pairs, opt).encoder;
      semantic_seconds = seconds_since(t0);
    }
    return *encoder;
  }
  const RankerModel& ranking() {
    if (!ranker) ranker = train_ranker(corpus().pairs, semantic(), corpus().index, {}).model;
    return *ranker;
  }
  const EmotionModel& emotions() {
    if (!emotion) emotion = train_emotion(synth::emotion_corpus(125, 1), semantic(), lexicons, {}).model;
    return *emotion;
  }
  const OffensiveClassifier& offensive() {
    if (!safety) {
      safety_train = synth::safety_corpus(terms, 400, 1);
      safety = train_safety(*safety_train, {}).classifier;
    }
    return *safety;
  }
  EngineModels models(IndexedCorpus corpus) {
    return EngineModels{std::move(corpus), semantic(), ranking(), emotions(),
                        lexicons,          offensive(), policy};
  }
};

Shared& shared() {
  static Shared s;
  return s;
}

// ---- 1. fetch oracle --------------------------------------------------------

// Reference TF-IDF cosine computed from raw token lists.
struct BruteForceTfidf {
  std::vector<std::map<std::string, double>> docs;
  std::vector<double> norms;
  std::map<std::string, double> df;
  double n = 0;

  explicit BruteForceTfidf(const std::vector<PairRecord>& corpus) : n(static_cast<double>(corpus.size())) {
    for (const auto& p : corpus) {
      std::set<std::string> seen(p.message.tokens.begin(), p.message.tokens.end());
      for (const auto& t : seen) df[t] += 1.0;
    }
    for (const auto& p : corpus) {
      std::map<std::string, double> v;
      for (const auto& t : p.message.tokens) v[t] += 1.0;
      double sq = 0.0;
      for (auto& [t, w] : v) {
        w *= idf(t);
        sq += w * w;
      }
      docs.push_back(std::move(v));
      norms.push_back(std::sqrt(sq));
    }
  }
  double idf(const std::string& t) const {
    const auto it = df.find(t);
    return std::log((n + 1.0) / ((it == df.end() ? 0.0 : it->second) + 1.0)) + 1.0;
  }
  double cosine(const QueryBag& q, std::size_t d) const {
    double qn = 0.0, dot = 0.0;
    for (const auto& [t, w] : q) {
      const double qw = w * idf(t);
      qn += qw * qw;
      const auto it = docs[d].find(t);
      if (it != docs[d].end()) dot += qw * it->second;
    }
    if (dot == 0.0) return 0.0;
    return dot / (std::sqrt(qn) * norms[d]);
  }
};

Verdict criterion_fetch() {
  Verdict v;
  Rng rng(101);
  double fetch_seconds = 0.0;
  std::size_t queries = 0, id_mismatch = 0, score_mismatch = 0;
  double worst = 0.0;
  const auto t0 = SteadyClock::now();
  for (int c = 0; c < 20; ++c) {
    std::vector<std::string> vocab;
    const std::size_t vocab_size = 20 + rng.below(400);
    for (std::size_t i = 0; i < vocab_size; ++i) vocab.push_back(random_word(rng, 2, 7));
    const std::size_t n = 1 + rng.below(1000);
    std::vector<PairRecord> corpus;
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string msg;
      const std::size_t len = 1 + rng.below(10);
      // Skewed draws so some terms are frequent and many documents tie.
      for (std::size_t w = 0; w < len; ++w) msg += vocab[rng.below(1 + rng.below(vocab.size()))] + " ";
      std::vector<std::string> ctx;
      if (rng.chance(0.3)) ctx.push_back(rng.pick(vocab));
      corpus.push_back(make_pair_record(i, msg, ctx, "ok"));
    }
    const InvertedIndex index = InvertedIndex::build(corpus);
    const BruteForceTfidf oracle(corpus);
    for (int qi = 0; qi < 100; ++qi, ++queries) {
      std::string msg;
      const std::size_t len = 1 + rng.below(6);
      for (std::size_t w = 0; w < len; ++w) msg += (rng.chance(0.85) ? rng.pick(vocab) : random_word(rng, 8, 9)) + " ";
      std::vector<text::Utterance> ctx;
      for (std::size_t k = rng.below(3); k > 0; --k) ctx.push_back(text::Utterance::from_raw(rng.pick(vocab) + " " + rng.pick(vocab)));
      const auto message = text::Utterance::from_raw(msg);
      const std::size_t k = 1 + rng.below(60);

      const auto f0 = SteadyClock::now();
      const auto fetched = index.fetch(message, ctx, k).candidates;
      fetch_seconds += seconds_since(f0);

      const QueryBag bag = make_query_bag(message, ctx);
      std::vector<ScoredPair> exhaustive;
      for (std::uint32_t d = 0; d < n; ++d) {
        const double s = index.score(bag, d);
        if (s > 0.0) exhaustive.push_back({d, s});
      }
      std::sort(exhaustive.begin(), exhaustive.end(), [](const ScoredPair& a, const ScoredPair& b) {
        return a.score != b.score ? a.score > b.score : a.pair_id < b.pair_id;
      });
      if (exhaustive.size() > k) exhaustive.resize(k);

      bool ids_equal = fetched.size() == exhaustive.size();
      for (std::size_t i = 0; ids_equal && i < fetched.size(); ++i) {
        ids_equal = fetched[i].pair_id == exhaustive[i].pair_id;
      }
      if (!ids_equal) ++id_mismatch;
      for (const auto& s : fetched) {
        const double err = std::abs(s.score - oracle.cosine(bag, s.pair_id));
        worst = std::max(worst, err);
        if (err > kFetchScoreTolerance) ++score_mismatch;
      }
    }
  }
  const double total = seconds_since(t0);
  v.require(queries == 2000, "2000 queries");
  v.require(id_mismatch == 0, std::to_string(id_mismatch) + " top-k id mismatches");
  v.require(score_mismatch == 0, std::to_string(score_mismatch) + " scores off by more than 1e-9");
  v.require(total < kFetchBudgetSeconds, "runtime " + fmt(total, 2) + " s >= 5 s");
  v.note("20 corpora x 100 queries, max |score - oracle| = " + std::to_string(worst) + ", fetch " +
         fmt(fetch_seconds, 3) + " s, total " + fmt(total, 2) + " s");
  return v;
}

// ---- 2. gradient checks -----------------------------------------------------

Verdict criterion_gradients() {
  using namespace chatir::nn;
  Verdict v;
  double worst = 0.0;
  std::size_t checks = 0;
  auto record = [&](double err, const std::string& what) {
    ++checks;
    worst = std::max(worst, err);
    v.require(err <= kGradTolerance, what + " rel err " + std::to_string(err));
  };
  auto dense_check = [&](LayerStack s, std::uint64_t seed, std::size_t steps, std::size_t d_in) {
    Rng rng(seed * 31 + 7);
    jitter_all(s, rng);
    const Activations x = random_activations(rng, steps, d_in, 1.5);
    const Activations out = forward(s, x);
    return gradient_check(s, linear_probe(rng, out.rows, out.cols), x, kGradStep);
  };
  auto single = [](Layer l) {
    LayerStack s;
    s.layers.push_back(std::move(l));
    return s;
  };
  const auto t0 = SteadyClock::now();
  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    const std::string tag = " seed " + std::to_string(seed);
    Rng rng(seed);
    record(dense_check(single(make_conv(3, 6, 5, Activation::tanh, rng)), seed, 4, 6), "conv" + tag);
    record(dense_check(single(make_dense(8, 6, Activation::tanh, rng)), seed, 2, 8), "dense" + tag);
    record(dense_check(single(make_linear(6, 5, rng)), seed, 3, 6), "linear" + tag);
    record(dense_check(single(make_bi_recurrent(6, 5, rng)), seed, 5, 6), "birecurrent" + tag);
    record(dense_check(single(make_logistic_head(7, rng)), seed, 1, 7), "logistic head" + tag);
    record(dense_check(single(make_softmax_head(7, 4, rng)), seed, 1, 7), "softmax head" + tag);
    const char* names[] = {"max pool", "mean pool", "l2 normalize"};
    int idx = 0;
    for (Layer pool : {Layer{MaxPoolOverTime{}}, Layer{MeanPoolOverTime{}}, Layer{L2Normalize{}}}) {
      LayerStack s = single(make_linear(5, 4, rng));
      s.layers.push_back(pool);
      record(dense_check(s, seed, 3, 5), std::string(names[idx++]) + tag);
    }
    LayerStack hp = single(make_hash_projection(16, 6, rng));
    Rng in_rng(seed + 100);
    const SparseSequence seq = random_sparse(in_rng, 3, 16);
    record(gradient_check(hp, linear_probe(in_rng, 3, 6), seq, kGradStep), "hash projection" + tag);

    Rng stack_rng(seed * 977);
    LayerStack cdssm = tiny_cdssm(seed);
    jitter_all(cdssm, stack_rng, 0.2);
    const SparseSequence s1 = random_sparse(stack_rng, 1 + stack_rng.below(5), 16);
    record(gradient_check(cdssm, linear_probe(stack_rng, 1, 6), s1, kGradStep), "cdssm stack" + tag);

    LayerStack bi = tiny_birecurrent(seed);
    jitter_all(bi, stack_rng, 0.2);
    const SparseSequence s2 = random_sparse(stack_rng, 1 + stack_rng.below(5), 16);
    record(gradient_check(bi, binary_cross_entropy(seed % 2 ? 1.0 : 0.0), s2, kGradStep),
           "safety stack" + tag);
  }
  const double secs = seconds_since(t0);
  v.require(secs < kGradBudgetSeconds, "runtime " + fmt(secs, 2) + " s >= 60 s");
  v.note(std::to_string(checks) + " checks over 10 seeds, max rel err " + std::to_string(worst) +
         ", " + fmt(secs, 2) + " s");
  return v;
}

// ---- 3. semantic separation ----------------------------------------------

Verdict criterion_semantic() {
  Verdict v;
  auto& s = shared();
  const auto& enc = s.semantic();

  Rng rng(303);
  double paired = 0.0, random = 0.0;
  const std::size_t n = s.train_pairs.size();
  std::vector<SemanticVector> responses;
  for (const auto& p : s.train_pairs) responses.push_back(enc.encode_message(p.response));
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = enc.encode_message(s.train_pairs[i].message);
    std::size_t j = rng.below(n - 1);
    if (j >= i) ++j;
    paired += similarity(q, responses[i]);
    random += similarity(q, responses[j]);
  }
  const double separation = (paired - random) / static_cast<double>(n);
  v.require(separation >= kMinSeparation, "separation " + fmt(separation) + " < 0.3");
  v.require(s.semantic_seconds < kSemanticBudgetSeconds, "training took " + fmt(s.semantic_seconds, 1) + " s");

  // Collapse every encoding onto one vector: all similarities equal, so each
  // example's loss is ln(m + 1) whatever gamma is.
  auto flat = CdssmEncoder::create(EncoderDims{}, 5);
  auto& dense = std::get<nn::Dense>(flat.stack().layers[3]);
  dense.weight.fill(0.0f);
  for (std::size_t j = 0; j < dense.bias.cols; ++j) dense.bias(0, j) = 0.25f;
  double worst = 0.0;
  for (std::size_t m : {1u, 4u, 9u}) {
    TrainBatch batch;
    for (std::size_t i = 0; i < 8; ++i) {
      TrainExample ex{s.train_pairs[i].message.tokens, s.train_pairs[i].response.tokens, {}};
      for (std::size_t k = 0; k < m; ++k) ex.negatives.push_back(s.train_pairs[(i + 17 * (k + 1)) % n].response.tokens);
      batch.examples.push_back(std::move(ex));
    }
    const double per_example = training_loss(flat, batch, 10.0) / 8.0;
    worst = std::max(worst, std::abs(per_example - std::log(static_cast<double>(m + 1))));
  }
  v.require(worst <= kUniformLossTolerance, "uniform loss deviates by " + std::to_string(worst));
  v.note("500 pairs, " + std::to_string(kSemanticEpochs) + " epochs in " + fmt(s.semantic_seconds, 1) +
         " s, separation " + fmt(separation) + ", |loss - ln(m+1)| max " + std::to_string(worst));
  return v;
}

// ---- 4. ranker ----------------------------------------------------------------

Verdict criterion_ranker() {
  Verdict v;
  const std::array<double, kFeatureCount> w_star = {1.0, 2.0, -1.0, 0.5, 1.5, 0.0};
  Rng rng(404);
  const auto train = separable_pairs(rng, 400, 0.2, w_star);
  const auto held = separable_pairs(rng, 200, 0.2, w_star);
  RankerTrainOptions opt;
  opt.epochs = 200;
  opt.learning_rate = 0.5;
  const auto model = train_ranker_on_pairs(train, RankerModel::create(4), opt).model;
  const double train_acc = pairwise_accuracy(model, train);
  const double held_acc = pairwise_accuracy(model, held);
  v.require(train_acc == 1.0 && held_acc == 1.0,
            "pairwise accuracy train " + fmt(train_acc) + " held-out " + fmt(held_acc));

  // Strictly increasing transforms of the score never change the selection.
  const std::vector<std::function<double(double)>> transforms = {
      [](double x) { return 3.0 * x - 1.0; }, [](double x) { return std::exp(4.0 * x); },
      [](double x) { return x * x * x; }, [](double x) { return std::log(x / (1.0 - x)); }};
  std::size_t invariance_failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<RankedCandidate> ranked;
    const std::size_t n = 1 + rng.below(30);
    for (std::uint32_t i = 0; i < n; ++i) {
      RankedCandidate c;
      c.pair_id = static_cast<std::uint32_t>(rng.below(1000));
      c.score = rng.chance(0.2) ? 0.5 : rng.uniform(0.01, 0.99);
      ranked.push_back(c);
    }
    auto base = ranked;
    sort_ranked(base);
    const auto chosen = select_response(base).pair_id;
    for (const auto& f : transforms) {
      auto t = ranked;
      for (auto& c : t) c.score = f(c.score);
      rng.shuffle(t);
      sort_ranked(t);
      if (select_response(t).pair_id != chosen) ++invariance_failures;
    }
  }
  v.require(invariance_failures == 0, std::to_string(invariance_failures) + " transform changes");

  // Equal totals: the lowest pair id wins regardless of input order.
  std::size_t tie_failures = 0;
  const auto tied_model = RankerModel::from_weights({0.5, 0.0, 0.0, 0.0, 0.0, 0.1});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CandidateInput> inputs;
    std::uint32_t lowest = UINT32_MAX;
    for (std::size_t i = 0; i < 2 + rng.below(10); ++i) {
      CandidateInput c;
      c.pair_id = static_cast<std::uint32_t>(rng.below(10000));
      c.features.values = {0.7, rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01(), 1.0};
      lowest = std::min(lowest, c.pair_id);
      inputs.push_back(c);
    }
    const auto first = rank_candidates(tied_model, inputs);
    rng.shuffle(inputs);
    const auto second = rank_candidates(tied_model, inputs);
    if (select_response(first).pair_id != lowest) ++tie_failures;
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (first[i].pair_id != second[i].pair_id) ++tie_failures;
    }
  }
  v.require(tie_failures == 0, std::to_string(tie_failures) + " tie-break violations");
  v.note("accuracy train " + fmt(train_acc, 3) + " held-out " + fmt(held_acc, 3) +
         ", 2000 transform trials, 200 tie trials");
  return v;
}

// ---- 5. emotion -------------------------------------------------------------

double oracle_macro_f1(const std::vector<EmotionLabel>& truth, const std::vector<EmotionLabel>& pred) {
  double sum = 0.0;
  int classes = 0;
  for (EmotionLabel c : kEmotionLabels) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      fp += truth[i] != c && pred[i] == c;
      fn += truth[i] == c && pred[i] != c;
    }
    if (tp + fn == 0) continue;
    ++classes;
    sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return classes ? sum / classes : 0.0;
}

Verdict criterion_emotion() {
  Verdict v;
  auto& s = shared();
  const auto& model = s.emotions();
  const auto& enc = s.semantic();

  std::set<std::string> seen;
  for (const auto& r : synth::emotion_corpus(125, 1)) seen.insert(text::normalize_text(r.text));
  std::vector<EmotionLabel> truth, pred;
  std::size_t overlap = 0;
  for (const auto& r : synth::emotion_corpus(25, 9001)) {
    overlap += seen.count(text::normalize_text(r.text));
    truth.push_back(parse_emotion(r.label));
    pred.push_back(classify_emotion(model, enc, s.lexicons, text::Utterance::from_raw(r.text)).label);
  }
  const double f1 = oracle_macro_f1(truth, pred);
  v.require(f1 >= kMinEmotionF1, "macro-F1 " + fmt(f1) + " < 0.85");

  Rng rng(505);
  std::size_t simplex_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto r = classify_emotion(model, enc, s.lexicons, text::Utterance::from_raw(fuzz_string(rng, 60)));
    double sum = 0.0;
    bool ok = true;
    for (double p : r.probabilities) {
      ok &= std::isfinite(p) && p >= 0.0 && p <= 1.0;
      sum += p;
    }
    ok &= std::abs(sum - 1.0) <= kSimplexTolerance;
    ok &= r.label == argmax_label(r.probabilities);
    if (!ok) ++simplex_failures;
  }
  v.require(simplex_failures == 0, std::to_string(simplex_failures) + " simplex violations");

  const auto probe = classify_emotion(model, enc, s.lexicons,
                                      text::Utterance::from_raw("Why don't you ever text me!"));
  v.require(probe.label == EmotionLabel::sad || probe.label == EmotionLabel::angry,
            "probe sentence classified as " + std::string(to_string(probe.label)));
  v.note("train 500 rows (400 fit / 100 internal holdout), fresh held-out 100 rows (" +
         std::to_string(overlap) + " texts also in training), macro-F1 " + fmt(f1) +
         ", 1000 fuzzed inputs, probe -> " + std::string(to_string(probe.label)));
  return v;
}

// ---- 6. safety --------------------------------------------------------------

Verdict criterion_safety() {
  Verdict v;
  auto& s = shared();
  const auto& clf = s.offensive();
  std::set<std::string> seen;
  for (const auto& r : *s.safety_train) seen.insert(text::normalize_text(r.text));

  auto fresh = [&](std::size_t count, std::uint64_t seed, const std::function<std::string(Rng&)>& gen) {
    Rng rng(seed);
    std::vector<std::string> out;
    std::set<std::string> taken;
    while (out.size() < count) {
      std::string t = gen(rng);
      const std::string key = text::normalize_text(t);
      if (seen.count(key) || !taken.insert(key).second) continue;
      out.push_back(std::move(t));
    }
    return out;
  };
  const auto offensive = fresh(50, 6001, [&](Rng& r) { return synth::offensive_sentence(s.terms, true, r); });
  const auto clean = fresh(500, 6002, [](Rng& r) { return synth::clean_sentence(r); });

  std::size_t caught = 0, false_pos = 0;
  for (const auto& t : offensive) caught += clf.probability_tokens(safety_tokens(t)) >= kDefaultOffensiveThreshold;
  for (const auto& t : clean) false_pos += clf.probability_tokens(safety_tokens(t)) >= kDefaultOffensiveThreshold;
  const double fp_rate = static_cast<double>(false_pos) / static_cast<double>(clean.size());
  v.require(caught == offensive.size(), "recall " + std::to_string(caught) + "/50");
  v.require(fp_rate <= kMaxCleanFalsePositiveRate, "false positive rate " + fmt(fp_rate));

  Rng rng(6003);
  std::size_t idem_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string once = deobfuscate(text::normalize_text(fuzz_string(rng, 60)));
    if (deobfuscate(once) != once) ++idem_failures;
  }
  v.require(idem_failures == 0, std::to_string(idem_failures) + " idempotence failures");

  // Every flagged input must produce a dodge, no matter what ranking would say.
  const Engine engine(s.models(s.corpus()), {});
  std::vector<std::string> inputs = offensive;
  inputs.insert(inputs.end(), clean.begin(), clean.end());
  for (const auto& topic : s.policy.sensitive_topics) {
    inputs.push_back("what do you think about " + topic);
    inputs.push_back("let's talk " + topic + " today");
  }
  std::size_t flagged = 0, escaped = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto u = text::Utterance::from_raw(inputs[i]);
    if (!evaluate_safety(clf, s.policy, u).fires()) continue;
    ++flagged;
    const auto d = engine.decide(u, {}, "acceptance-" + std::to_string(i), i, false);
    const bool in_list = std::find(s.policy.dodge_responses.begin(), s.policy.dodge_responses.end(),
                                   d.response) != s.policy.dodge_responses.end();
    if (!in_list || d.source != ResponseSource::dodge) ++escaped;
  }
  v.require(flagged >= offensive.size() + 2 * s.policy.sensitive_topics.size(), "too few inputs flagged");
  v.require(escaped == 0, std::to_string(escaped) + " flagged inputs escaped the dodge list");
  v.note("recall " + std::to_string(caught) + "/50, false positives " + std::to_string(false_pos) +
         "/500, 1000 idempotence probes, " + std::to_string(flagged) + " flagged inputs all dodged");
  return v;
}

// ---- 7. retrieval quality ----------------------------------------------------

Verdict criterion_retrieval() {
  Verdict v;
  auto& s = shared();
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : s.train_pairs) seen.insert({p.message.normalized, p.response.normalized});
  std::vector<PairRecord> held;
  std::size_t skipped = 0;
  for (const auto& p : synth::dialogue_corpus({2000, 0.5, 7007})) {
    if (held.size() == 500) break;
    if (seen.count({p.message.normalized, p.response.normalized})) {
      ++skipped;
      continue;
    }
    std::vector<std::string> ctx;
    for (const auto& c : p.context) ctx.push_back(c.raw);
    held.push_back(make_pair_record(static_cast<std::uint32_t>(held.size()), p.message.raw, ctx, p.response.raw));
  }
  const auto m = evaluate_retrieval(held, s.semantic(), s.ranking(), {99, 7});
  v.require(held.size() == 500, "only " + std::to_string(held.size()) + " held-out pairs");
  v.require(m.candidates_per_query == 100, "candidate pool is not 1 + 99");
  v.require(m.recall_at_1 >= kMinRecallAt1, "recall@1 " + fmt(m.recall_at_1) + " < 0.6");
  v.require(m.mrr >= kMinMrr, "MRR " + fmt(m.mrr) + " < 0.7");
  v.note("500 held-out pairs (" + std::to_string(skipped) + " training duplicates skipped), recall@1 " +
         fmt(m.recall_at_1) + ", recall@10 " + fmt(m.recall_at_10) + ", MRR " + fmt(m.mrr));
  return v;
}

// ---- 8. service -------------------------------------------------------------

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

Verdict criterion_service() {
  Verdict v;
  auto& s = shared();

  auto big = IndexedCorpus::build(synth::dialogue_corpus({10000, 0.5, 8008}));
  auto engine = std::make_shared<const Engine>(s.models(std::move(big)), DialogueConfig{});
  v.require(engine->index_size() == 10000, "index is not 10,000 pairs");

  Dialogue dialogue(engine, SessionOptions{});
  const auto queries = synth::dialogue_corpus({300, 0.5, 8009});
  std::vector<double> ms;
  std::string session = dialogue.create_session();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (i % 10 == 0) session = dialogue.create_session();
    const auto t0 = SteadyClock::now();
    dialogue.respond(session, queries[i].message.raw, false);
    ms.push_back(seconds_since(t0) * 1000.0);
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms[ms.size() / 2];
  v.require(median < kMaxMedianLatencyMs, "median latency " + fmt(median, 2) + " ms");

  TempDir dir("service");
  ServiceConfig config = ServiceConfig::from_json({{"index", "unused"}, {"models", "unused"}});
  config.log_path = dir.path / "log.jsonl";

  // Log replay.
  std::map<std::string, json> histories;
  {
    ChatService svc(config, engine);
    const std::vector<std::string> texts = {"hello there", "do you like pizza", "sh1t you are dumb",
                                            "what about religion", "", "my dog is so cute"};
    std::vector<std::string> ids;
    for (int i = 0; i < 6; ++i) ids.push_back(svc.create_session().body["session"]);
    for (std::size_t k = 0; k < 36; ++k) {
      const auto& t = texts[k % texts.size()];
      const auto r = svc.chat(json{{"session", ids[k % ids.size()]}, {"text", t}, {"attachment", t.empty()}});
      v.require(r.status == 200, "chat returned " + std::to_string(r.status));
    }
    for (const auto& id : ids) histories[id] = svc.history(id).body;
  }
  const auto replayed = replay_log(config.log_path);
  std::size_t replay_mismatch = replayed.size() == histories.size() ? 0 : 1;
  for (const auto& [id, h] : histories) {
    const auto it = replayed.find(id);
    if (it == replayed.end() || history_to_json(it->second.turns) != h) ++replay_mismatch;
  }
  v.require(replay_mismatch == 0, std::to_string(replay_mismatch) + " sessions differ after replay");

  // Ordering under 16 concurrent HTTP clients.
  fs::remove(config.log_path);
  ChatService svc(config, engine);
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread runner([&] { server.run(); });
  server.wait_until_ready();
  constexpr int kClients = 16;
  constexpr int kTurns = 8;
  std::vector<std::string> own(kClients);
  std::atomic<int> failures{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c) {
    clients.emplace_back([&, c] {
      httplib::Client cli("127.0.0.1", port);
      const auto created = cli.Post("/v1/session", "", "application/json");
      if (!created || created->status != 200) {
        ++failures;
        return;
      }
      own[c] = json::parse(created->body)["session"];
      for (int i = 0; i < kTurns; ++i) {
        const json body = {{"session", own[c]}, {"text", "client " + std::to_string(c) + " message " + std::to_string(i)}};
        const auto r = cli.Post("/v1/chat", body.dump(), "application/json");
        if (!r || r->status != 200) ++failures;
      }
    });
  }
  for (auto& t : clients) t.join();
  httplib::Client probe("127.0.0.1", port);
  std::size_t order_violations = 0;
  for (int c = 0; c < kClients; ++c) {
    const auto res = probe.Get("/v1/session/" + own[c] + "/history");
    if (!res || res->status != 200) {
      ++order_violations;
      continue;
    }
    const auto turns = json::parse(res->body)["turns"];
    if (turns.size() != 2 * kTurns) ++order_violations;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const bool user = i % 2 == 0;
      if ((turns[i]["author"] == "user") != user) ++order_violations;
      if (user && turns[i]["text"] != "client " + std::to_string(c) + " message " + std::to_string(i / 2)) {
        ++order_violations;
      }
    }
  }
  std::map<std::string, std::size_t> next;
  for (const auto& l : read_jsonl(config.log_path)) {
    if (l["event"] != "turn") continue;
    const std::string id = l["session"];
    if (l["turn_index"].get<std::size_t>() != next[id]) ++order_violations;
    next[id] += 2;
  }
  server.stop();
  runner.join();
  v.require(failures == 0, std::to_string(failures.load()) + " failed HTTP requests");
  v.require(order_violations == 0, std::to_string(order_violations) + " ordering violations");
  v.note("median respond " + fmt(median, 2) + " ms (p90 " + fmt(ms[ms.size() * 9 / 10], 2) +
         " ms) over 300 turns at 10,000 pairs, " + std::to_string(histories.size()) +
         " sessions replayed, 16 clients x 8 turns ordered");
  return v;
}

// ---- 9. determinism ---------------------------------------------------------

std::map<std::string, std::string> full_run(const fs::path& root, int threads) {
  omp_set_num_threads(threads);
  auto cli_run = [&](std::vector<std::string> args, const std::string& capture = "") {
    args.insert(args.begin(), "chatir");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::istringstream in;
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), in, out, err);
    if (code != 0) throw chatir::Error("chatir " + args[1] + " failed: " + err.str());
    if (!capture.empty()) std::ofstream(root / capture, std::ios::binary) << out.str();
  };
  const std::string r = root.string();
  cli_run({"synth", "dialogue", "--out", r + "/pairs.jsonl", "--count", "200", "--seed", "3"});
  cli_run({"synth", "emotion", "--out", r + "/emotion.jsonl", "--count", "40", "--seed", "3"});
  cli_run({"synth", "safety", "--out", r + "/safety.jsonl", "--count", "150", "--seed", "3", "--terms",
           "data/safety/offensive_terms.txt"});
  cli_run({"index", "build", "--corpus", r + "/pairs.jsonl", "--out", r + "/index"});
  cli_run({"train", "semantic", "--corpus", r + "/pairs.jsonl", "--out", r + "/models", "--epochs", "2"});
  cli_run({"train", "ranker", "--corpus", r + "/pairs.jsonl", "--out", r + "/models", "--epochs", "5"});
  cli_run({"train", "emotion", "--corpus", r + "/emotion.jsonl", "--out", r + "/models", "--epochs", "5"});
  cli_run({"train", "safety", "--corpus", r + "/safety.jsonl", "--out", r + "/models", "--epochs", "2"});
  cli_run({"eval", "retrieval", "--corpus", r + "/pairs.jsonl", "--models", r + "/models"}, "eval_retrieval.json");
  cli_run({"eval", "emotion", "--corpus", r + "/emotion.jsonl", "--models", r + "/models"}, "eval_emotion.json");
  cli_run({"eval", "safety", "--corpus", r + "/safety.jsonl", "--models", r + "/models"}, "eval_safety.json");
  omp_set_num_threads(omp_get_num_procs());

  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

Verdict criterion_determinism() {
  Verdict v;
  TempDir a("determinism_a"), b("determinism_b");
  const auto first = full_run(a.path, 1);
  const auto second = full_run(b.path, 4);
  v.require(first.size() == second.size(), "different artifact sets");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      v.require(false, name + " differs");
    }
  }
  for (const char* must : {"index/corpus.idx", "models/semantic.ckpt", "models/ranker.ckpt", "models/emotion.ckpt",
                           "models/safety.ckpt", "eval_retrieval.json", "eval_emotion.json", "eval_safety.json"}) {
    v.require(first.count(must) == 1, std::string("missing ") + must);
  }
  v.note(std::to_string(first.size()) + " artifacts compared across two runs (1 and 4 OpenMP threads), " +
         std::to_string(differing) + " differ");
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria = {
      {"fetch equals exhaustive tf-idf ranking", criterion_fetch},
      {"gradient checks", criterion_gradients},
      {"semantic training separation", criterion_semantic},
      {"ranker accuracy, invariance, tie-break", criterion_ranker},
      {"emotion quality and contracts", criterion_emotion},
      {"safety recall, false positives, idempotence, supremacy", criterion_safety},
      {"end-to-end retrieval quality", criterion_retrieval},
      {"service latency, replay, ordering", criterion_service},
      {"determinism across runs", criterion_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto t0 = SteadyClock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += v.pass ? 0 : 1;
    std::printf("criterion %zu %s: %s [%s] (%.1f s)\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first,
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
