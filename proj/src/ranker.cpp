#include "chatir/ranker.hpp"

#include <algorithm>
#include <cmath>

#include "chatir/errors.hpp"

namespace chatir {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(-x)) without overflow.
double softplus_neg(double x) {
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }
double clamp_cos(double x) { return std::clamp(x, -1.0, 1.0); }

}  // namespace

std::set<std::string> trigram_set(std::span<const std::string> tokens) {
  std::set<std::string> out;
  for (const auto& tok : tokens) {
    for (auto& tri : text::letter_trigrams(tok)) out.insert(std::move(tri));
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

QueryFeatures query_features(const CdssmEncoder& encoder, const text::Utterance& message,
                             std::span<const text::Utterance> context) {
  QueryFeatures q;
  q.token_count = message.tokens.size();
  q.message_vec = encoder.encode_message(message);
  q.context_vec = context.empty() ? q.message_vec : encoder.encode_context(context, message);
  q.trigrams = trigram_set(message.tokens);
  return q;
}

ResponseFeatures response_features(const text::Utterance& response, SemanticVector vec) {
  return {response.tokens.size(), std::move(vec), trigram_set(response.tokens)};
}

ResponseFeatures response_features(const CdssmEncoder& encoder, const text::Utterance& response) {
  return response_features(response, encoder.encode_message(response));
}

FeatureVector extract_features(const QueryFeatures& query, const ResponseFeatures& response,
                               double normalized_fetch_score) {
  FeatureVector f;
  f[0] = clamp01(normalized_fetch_score);
  f[1] = clamp_cos(similarity(query.message_vec, response.vec));
  f[2] = clamp_cos(similarity(query.context_vec, response.vec));
  const double lo = static_cast<double>(std::min(query.token_count, response.token_count));
  const double hi = static_cast<double>(std::max({query.token_count, response.token_count,
                                                  std::size_t{1}}));
  f[3] = lo / hi;
  f[4] = jaccard(query.trigrams, response.trigrams);
  f[5] = 1.0;
  return f;
}

FeatureVector extract_features(const text::Utterance& message,
                               std::span<const text::Utterance> context,
                               const PairRecord& candidate, double normalized_fetch_score,
                               const CdssmEncoder& encoder) {
  return extract_features(query_features(encoder, message, context),
                          response_features(encoder, candidate.response), normalized_fetch_score);
}

std::vector<double> normalize_scores(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!(mx > 0.0)) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] / mx;
  return out;
}

// ---- model -----------------------------------------------------------------

RankerModel RankerModel::create(std::uint64_t seed) {
  Rng rng(seed);
  nn::LayerStack s;
  s.seed = seed;
  s.tag = "ranker";
  s.layers.emplace_back(nn::make_linear(kFeatureCount, 1, rng));
  return RankerModel(std::move(s));
}

RankerModel RankerModel::from_weights(const std::array<double, kFeatureCount>& weights) {
  nn::LayerStack s;
  s.tag = "ranker";
  nn::Linear lin{nn::Tensor2(kFeatureCount, 1)};
  for (std::size_t i = 0; i < kFeatureCount; ++i) lin.weight(i, 0) = static_cast<float>(weights[i]);
  s.layers.emplace_back(std::move(lin));
  return RankerModel(std::move(s));
}

RankerModel::RankerModel(nn::LayerStack stack) : stack_(std::move(stack)) {
  stack_.validate();
  const bool ok = stack_.layers.size() == 1 &&
                  std::holds_alternative<nn::Linear>(stack_.layers[0]) &&
                  std::get<nn::Linear>(stack_.layers[0]).weight.rows == kFeatureCount &&
                  std::get<nn::Linear>(stack_.layers[0]).weight.cols == 1;
  if (!ok) throw ShapeMismatch("ranker: expected a single Linear(6 -> 1) layer");
  for (float w : std::get<nn::Linear>(stack_.layers[0]).weight.data) {
    if (!std::isfinite(w)) throw CorruptCheckpoint("ranker: non-finite weight");
  }
}

std::array<double, kFeatureCount> RankerModel::weights() const {
  std::array<double, kFeatureCount> w{};
  const auto& t = std::get<nn::Linear>(stack_.layers[0]).weight;
  for (std::size_t i = 0; i < kFeatureCount; ++i) w[i] = t(i, 0);
  return w;
}

double RankerModel::margin(const FeatureVector& f) const {
  const auto w = weights();
  double s = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) s += w[i] * f[i];
  return s;
}

double RankerModel::score(const FeatureVector& f) const { return sigmoid(margin(f)); }

void RankerModel::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(stack_, path);
}

RankerModel RankerModel::load(const std::filesystem::path& path) {
  return RankerModel(nn::load_checkpoint(path));
}

// ---- ranking ---------------------------------------------------------------

void sort_ranked(std::vector<RankedCandidate>& ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.total() != b.total()) return a.total() > b.total();
    return a.pair_id < b.pair_id;
  });
}

std::vector<RankedCandidate> rank_candidates(const RankerModel& model,
                                             std::span<const CandidateInput> candidates) {
  if (candidates.empty()) throw NoCandidates("nothing to rank");
  std::vector<RankedCandidate> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    out.push_back({c.pair_id, c.response, c.features, model.score(c.features), 0.0});
  }
  sort_ranked(out);
  return out;
}

const RankedCandidate& select_response(std::span<const RankedCandidate> ranked) {
  if (ranked.empty()) throw NoCandidates("empty ranked list");
  return ranked.front();
}

// ---- training --------------------------------------------------------------

double pairwise_loss(const std::array<double, kFeatureCount>& w, const FeaturePair& pair,
                     std::array<double, kFeatureCount>* grad) {
  double m = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) m += w[i] * (pair.positive[i] - pair.negative[i]);
  if (grad != nullptr) {
    const double coef = -sigmoid(-m);
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      (*grad)[i] += coef * (pair.positive[i] - pair.negative[i]);
    }
  }
  return softplus_neg(m);
}

double pairwise_accuracy(const RankerModel& model, std::span<const FeaturePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t good = 0;
  for (const auto& p : pairs) good += model.margin(p.positive) > model.margin(p.negative) ? 1 : 0;
  return static_cast<double>(good) / static_cast<double>(pairs.size());
}

RankerTrainResult train_ranker_on_pairs(std::vector<FeaturePair> pairs, RankerModel init,
                                        const RankerTrainOptions& options) {
  if (options.learning_rate < 0.0) throw InvalidConfig("learning rate must be non-negative");
  RankerTrainResult result{std::move(init), {}};
  if (options.learning_rate == 0.0 || pairs.empty()) {
    for (std::size_t e = 1; e <= options.epochs; ++e) {
      double loss = 0.0;
      for (const auto& p : pairs) loss += pairwise_loss(result.model.weights(), p);
      result.epochs.push_back({e, pairs.empty() ? 0.0 : loss / static_cast<double>(pairs.size()),
                               pairwise_accuracy(result.model, pairs)});
    }
    return result;
  }

  Rng rng(options.seed ^ 0x7a4b3c2d1eULL);
  auto w = result.model.weights();
  for (std::size_t e = 1; e <= options.epochs; ++e) {
    rng.shuffle(pairs);
    double loss = 0.0;
    for (const auto& p : pairs) {
      std::array<double, kFeatureCount> g{};
      loss += pairwise_loss(w, p, &g);
      for (std::size_t i = 0; i < kFeatureCount; ++i) w[i] -= options.learning_rate * g[i];
    }
    for (double x : w) {
      if (!std::isfinite(x)) throw NonFiniteGradient("ranker weights diverged");
    }
    nn::LayerStack s = result.model.stack();
    auto& t = std::get<nn::Linear>(s.layers[0]).weight;
    for (std::size_t i = 0; i < kFeatureCount; ++i) t(i, 0) = static_cast<float>(w[i]);
    result.model = RankerModel(std::move(s));
    result.epochs.push_back({e, loss / static_cast<double>(pairs.size()),
                             pairwise_accuracy(result.model, pairs)});
  }
  return result;
}

std::vector<FeaturePair> ranker_training_pairs(std::span<const PairRecord> corpus,
                                               const CdssmEncoder& encoder,
                                               const InvertedIndex& index, std::size_t negatives,
                                               Rng& rng) {
  if (corpus.size() < kMinRankerPairs) {
    throw CorpusTooSmall("ranker training needs at least " + std::to_string(kMinRankerPairs) +
                         " pairs, got " + std::to_string(corpus.size()));
  }
  if (index.doc_count() != corpus.size()) {
    throw InvalidCorpus("index does not match the training corpus");
  }
  const std::size_t n = corpus.size();
  std::vector<std::vector<std::string>> responses(n);
  for (std::size_t i = 0; i < n; ++i) responses[i] = corpus[i].response.tokens;
  const auto vecs = encoder.encode_batch(responses, Exec::parallel);
  std::vector<ResponseFeatures> rf(n);
  for (std::size_t i = 0; i < n; ++i) rf[i] = response_features(corpus[i].response, vecs[i]);

  std::vector<FeaturePair> out;
  out.reserve(n * negatives);
  for (std::size_t i = 0; i < n; ++i) {
    const PairRecord& p = corpus[i];
    const QueryFeatures q = query_features(encoder, p.message, p.context);
    const QueryBag bag = make_query_bag(p.message, p.context);
    std::vector<std::size_t> group{i};
    for (std::size_t k = 0; k < negatives; ++k) {
      std::size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      group.push_back(j);
    }
    std::vector<double> raw;
    for (std::size_t j : group) raw.push_back(index.score(bag, static_cast<std::uint32_t>(j)));
    const auto norm = normalize_scores(raw);
    const FeatureVector pos = extract_features(q, rf[i], norm[0]);
    for (std::size_t k = 1; k < group.size(); ++k) {
      out.push_back({pos, extract_features(q, rf[group[k]], norm[k])});
    }
  }
  return out;
}

RankerTrainResult train_ranker(std::span<const PairRecord> corpus, const CdssmEncoder& encoder,
                               const InvertedIndex& index, const RankerTrainOptions& options) {
  Rng rng(options.seed);
  auto pairs = ranker_training_pairs(corpus, encoder, index, options.negatives, rng);
  return train_ranker_on_pairs(std::move(pairs), RankerModel::create(options.seed), options);
}

}  // namespace chatir
