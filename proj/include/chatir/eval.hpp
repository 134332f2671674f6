#pragma once

#include <cstdint>
#include <span>

#include "chatir/emotion.hpp"
#include "chatir/index.hpp"
#include "chatir/ranker.hpp"
#include "chatir/safety.hpp"
#include "json.hpp"

namespace chatir {

struct RetrievalEvalOptions {
  std::size_t distractors = 99;
  std::uint64_t seed = 1;
};

struct RetrievalMetrics {
  std::size_t queries = 0;
  std::size_t candidates_per_query = 0;
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double recall_at_10 = 0.0;
  double mrr = 0.0;

  nlohmann::json to_json() const;
};

// Every pair is a query. Its candidate set is the true response plus up to
// `distractors` responses of other pairs, sampled without replacement and
// excluding responses whose text equals the true one. Candidates are ordered
// by rank_candidates; f1 is the TF-IDF cosine between the query and the
// candidate response (idf from an index over the evaluated pairs), normalized
// by the per-query maximum.
RetrievalMetrics evaluate_retrieval(std::span<const PairRecord> pairs, const CdssmEncoder& encoder,
                                    const RankerModel& ranker,
                                    const RetrievalEvalOptions& options = {});

// 1-based rank of the true candidate for each query, in query order.
std::vector<std::size_t> retrieval_ranks(std::span<const PairRecord> pairs,
                                         const CdssmEncoder& encoder, const RankerModel& ranker,
                                         const RetrievalEvalOptions& options = {});

struct EmotionMetrics {
  std::size_t examples = 0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;

  nlohmann::json to_json() const;
};

EmotionMetrics evaluate_emotion(std::span<const LabeledText> rows, const EmotionModel& model,
                                const CdssmEncoder& encoder, const Lexicons& lexicons);

struct SafetyMetrics {
  std::size_t examples = 0;
  double threshold = kDefaultOffensiveThreshold;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;

  nlohmann::json to_json() const;
};

SafetyMetrics evaluate_safety(std::span<const LabeledText> rows,
                              const OffensiveClassifier& classifier,
                              double threshold = kDefaultOffensiveThreshold);

}  // namespace chatir
