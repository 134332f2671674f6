#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/index.hpp"
#include "chatir/nn.hpp"
#include "chatir/semantic.hpp"

namespace chatir {

inline constexpr std::size_t kFeatureCount = 6;

// f1 normalized fetch score, f2 cos(M, R), f3 cos(C+M, R), f4 length ratio,
// f5 letter-trigram Jaccard(M, R), f6 bias.
struct FeatureVector {
  std::array<double, kFeatureCount> values{0, 0, 0, 0, 0, 1};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const FeatureVector&) const = default;
};

// The query side of feature extraction, computed once per turn.
struct QueryFeatures {
  std::size_t token_count = 0;
  SemanticVector message_vec;
  SemanticVector context_vec;
  std::set<std::string> trigrams;
};

// The candidate side; response vectors can be precomputed per pair.
struct ResponseFeatures {
  std::size_t token_count = 0;
  SemanticVector vec;
  std::set<std::string> trigrams;
};

std::set<std::string> trigram_set(std::span<const std::string> tokens);

QueryFeatures query_features(const CdssmEncoder& encoder, const text::Utterance& message,
                             std::span<const text::Utterance> context);
ResponseFeatures response_features(const CdssmEncoder& encoder, const text::Utterance& response);
ResponseFeatures response_features(const text::Utterance& response, SemanticVector vec);

FeatureVector extract_features(const QueryFeatures& query, const ResponseFeatures& response,
                               double normalized_fetch_score);
FeatureVector extract_features(const text::Utterance& message,
                               std::span<const text::Utterance> context,
                               const PairRecord& candidate, double normalized_fetch_score,
                               const CdssmEncoder& encoder);

// Divides by the maximum. All zeros when the maximum is not positive.
std::vector<double> normalize_scores(std::span<const double> scores);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

class RankerModel {
 public:
  static RankerModel create(std::uint64_t seed);
  static RankerModel from_weights(const std::array<double, kFeatureCount>& weights);
  // Throws ShapeMismatch unless the stack is a single Linear(6 -> 1).
  explicit RankerModel(nn::LayerStack stack);

  std::array<double, kFeatureCount> weights() const;
  double margin(const FeatureVector& f) const;  // w . f
  double score(const FeatureVector& f) const;   // sigmoid(w . f)

  const nn::LayerStack& stack() const { return stack_; }

  void save(const std::filesystem::path& path) const;
  static RankerModel load(const std::filesystem::path& path);

  bool operator==(const RankerModel&) const = default;

 private:
  nn::LayerStack stack_;
};

struct CandidateInput {
  std::uint32_t pair_id = 0;
  std::string response;
  FeatureVector features;
};

struct RankedCandidate {
  std::uint32_t pair_id = 0;
  std::string response;
  FeatureVector features;
  double score = 0.0;  // sigmoid(w . f)
  double bonus = 0.0;  // added by re-rank stages

  double total() const { return score + bonus; }
};

// Orders by total() descending, ties by ascending pair id.
void sort_ranked(std::vector<RankedCandidate>& ranked);

// Throws NoCandidates on empty input.
std::vector<RankedCandidate> rank_candidates(const RankerModel& model,
                                             std::span<const CandidateInput> candidates);
const RankedCandidate& select_response(std::span<const RankedCandidate> ranked);

// ---- training ------------------------------------------------------------

struct FeaturePair {
  FeatureVector positive;
  FeatureVector negative;
};

// -log sigmoid(w . (f+ - f-)); grad (when non-null) receives dL/dw.
double pairwise_loss(const std::array<double, kFeatureCount>& w, const FeaturePair& pair,
                     std::array<double, kFeatureCount>* grad = nullptr);

struct RankerTrainOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.1;
  std::size_t negatives = 4;
  std::uint64_t seed = 1;
};

struct RankerEpochStat {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double pairwise_accuracy = 0.0;
};

struct RankerTrainResult {
  RankerModel model;
  std::vector<RankerEpochStat> epochs;
};

// Per-pair SGD over the given feature pairs, shuffled each epoch.
RankerTrainResult train_ranker_on_pairs(std::vector<FeaturePair> pairs, RankerModel init,
                                        const RankerTrainOptions& options);

// Fraction of pairs with w . f+ > w . f-.
double pairwise_accuracy(const RankerModel& model, std::span<const FeaturePair> pairs);

inline constexpr std::size_t kMinRankerPairs = 100;

// Builds (positive, negative) feature pairs from the corpus: the recorded
// response against `negatives` uniformly drawn other responses. f1 is the
// index score of each candidate for the pair's query, normalized over the
// group. Throws CorpusTooSmall.
std::vector<FeaturePair> ranker_training_pairs(std::span<const PairRecord> corpus,
                                               const CdssmEncoder& encoder,
                                               const InvertedIndex& index, std::size_t negatives,
                                               Rng& rng);

RankerTrainResult train_ranker(std::span<const PairRecord> corpus, const CdssmEncoder& encoder,
                               const InvertedIndex& index, const RankerTrainOptions& options);

}  // namespace chatir
