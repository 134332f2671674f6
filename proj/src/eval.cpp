#include "chatir/eval.hpp"

#include <algorithm>

#include "chatir/errors.hpp"
#include "chatir/metrics.hpp"
#include "chatir/rng.hpp"

namespace chatir {

using nlohmann::json;

json RetrievalMetrics::to_json() const {
  return {{"task", "retrieval"},
          {"queries", queries},
          {"candidates_per_query", candidates_per_query},
          {"recall_at_1", recall_at_1},
          {"recall_at_5", recall_at_5},
          {"recall_at_10", recall_at_10},
          {"mrr", mrr}};
}

json EmotionMetrics::to_json() const {
  return {{"task", "emotion"}, {"examples", examples}, {"macro_f1", macro_f1}, {"accuracy", accuracy}};
}

json SafetyMetrics::to_json() const {
  return {{"task", "safety"},
          {"examples", examples},
          {"threshold", threshold},
          {"precision", precision},
          {"recall", recall},
          {"false_positives", false_positives},
          {"false_negatives", false_negatives}};
}

std::vector<std::size_t> retrieval_ranks(std::span<const PairRecord> pairs,
                                         const CdssmEncoder& encoder, const RankerModel& ranker,
                                         const RetrievalEvalOptions& options) {
  if (pairs.size() < 2) throw CorpusTooSmall("retrieval evaluation needs at least 2 pairs");
  const InvertedIndex idf = InvertedIndex::build(pairs);
  const std::size_t n = pairs.size();

  std::vector<std::vector<std::string>> responses(n);
  for (std::size_t i = 0; i < n; ++i) responses[i] = pairs[i].response.tokens;
  auto vecs = encoder.encode_batch(responses, Exec::parallel);
  std::vector<ResponseFeatures> rf(n);
  std::vector<text::TermBag> bags(n);
  for (std::size_t i = 0; i < n; ++i) {
    rf[i] = response_features(pairs[i].response, std::move(vecs[i]));
    bags[i] = text::term_bag(pairs[i].response.tokens);
  }

  Rng rng(options.seed);
  std::vector<std::size_t> ranks;
  ranks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && pairs[j].response.normalized != pairs[i].response.normalized) pool.push_back(j);
    }
    // Partial Fisher-Yates: the first `take` entries become the sample.
    const std::size_t take = std::min(options.distractors, pool.size());
    for (std::size_t k = 0; k < take; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
    pool.resize(take);
    pool.push_back(i);

    const QueryFeatures q = query_features(encoder, pairs[i].message, pairs[i].context);
    const QueryBag bag = make_query_bag(pairs[i].message, pairs[i].context);
    std::vector<double> raw;
    for (std::size_t j : pool) raw.push_back(idf.cosine_with_bag(bag, bags[j]));
    const auto norm = normalize_scores(raw);
    std::vector<CandidateInput> inputs;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      inputs.push_back({static_cast<std::uint32_t>(pool[k]), {}, extract_features(q, rf[pool[k]], norm[k])});
    }
    const auto ranked = rank_candidates(ranker, inputs);
    const auto it = std::find_if(ranked.begin(), ranked.end(),
                                 [&](const RankedCandidate& c) { return c.pair_id == i; });
    ranks.push_back(static_cast<std::size_t>(it - ranked.begin()) + 1);
  }
  return ranks;
}

RetrievalMetrics evaluate_retrieval(std::span<const PairRecord> pairs, const CdssmEncoder& encoder,
                                    const RankerModel& ranker,
                                    const RetrievalEvalOptions& options) {
  const auto ranks = retrieval_ranks(pairs, encoder, ranker, options);
  RetrievalMetrics m;
  m.queries = ranks.size();
  m.candidates_per_query = std::min(options.distractors, pairs.size() - 1) + 1;
  m.recall_at_1 = metrics::recall_at(ranks, 1);
  m.recall_at_5 = metrics::recall_at(ranks, 5);
  m.recall_at_10 = metrics::recall_at(ranks, 10);
  m.mrr = metrics::mean_reciprocal_rank(ranks);
  return m;
}

EmotionMetrics evaluate_emotion(std::span<const LabeledText> rows, const EmotionModel& model,
                                const CdssmEncoder& encoder, const Lexicons& lexicons) {
  std::vector<std::size_t> truth, pred;
  for (const auto& r : rows) {
    truth.push_back(static_cast<std::size_t>(parse_emotion(r.label)));
    pred.push_back(static_cast<std::size_t>(
        classify_emotion(model, encoder, lexicons, text::Utterance::from_raw(r.text)).label));
  }
  EmotionMetrics m;
  m.examples = rows.size();
  m.macro_f1 = metrics::macro_f1(truth, pred, kEmotionCount);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i] ? 1 : 0;
  m.accuracy = rows.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(rows.size());
  return m;
}

SafetyMetrics evaluate_safety(std::span<const LabeledText> rows,
                              const OffensiveClassifier& classifier, double threshold) {
  std::vector<bool> truth, pred;
  for (const auto& r : rows) {
    if (r.label != "0" && r.label != "1") throw InvalidCorpus("safety label must be 0 or 1");
    truth.push_back(r.label == "1");
    pred.push_back(classifier.probability_tokens(safety_tokens(r.text)) >= threshold);
  }
  const auto pr = metrics::precision_recall(truth, pred);
  SafetyMetrics m;
  m.examples = rows.size();
  m.threshold = threshold;
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.false_positives = pr.false_positives;
  m.false_negatives = pr.false_negatives;
  return m;
}

}  // namespace chatir
