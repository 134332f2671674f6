#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/parallel.hpp"
#include "chatir/text.hpp"

namespace chatir {

inline constexpr double kContextTermWeight = 0.5;
inline constexpr std::uint32_t kIndexFormatVersion = 1;

// Query-side term weights: 1.0 per message token occurrence, 0.5 per context
// token occurrence.
using QueryBag = std::map<std::string, double>;

QueryBag make_query_bag(const text::Utterance& message,
                        std::span<const text::Utterance> context = {});
QueryBag make_query_bag(std::span<const std::string> tokens);

struct Posting {
  std::uint32_t pair_id = 0;
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct ScoredPair {
  std::uint32_t pair_id = 0;
  double score = 0.0;
  bool operator==(const ScoredPair&) const = default;
};

struct FetchResult {
  std::vector<ScoredPair> candidates;
  QueryBag query_terms;
};

// TF-IDF inverted index over the message side of each pair.
//   idf(t) = ln((N + 1) / (df(t) + 1)) + 1
//   w(t, d) = tf(t, d) * idf(t)
//   score(q, d) = cos(q, d)
// The index is immutable after build and safe for concurrent readers.
class InvertedIndex {
 public:
  static InvertedIndex build(std::span<const PairRecord> corpus);

  std::size_t doc_count() const { return doc_norms_.size(); }
  std::size_t term_count() const { return terms_.size(); }
  std::uint32_t doc_freq(std::string_view term) const;
  double idf(std::string_view term) const;
  double doc_norm(std::uint32_t pair_id) const { return doc_norms_.at(pair_id); }
  // nullptr for terms the index has never seen.
  const std::vector<Posting>* postings(std::string_view term) const;
  const std::vector<std::string>& terms() const { return terms_; }

  // Top-k by cosine, ties by ascending pair id. Only documents sharing a term
  // with the query are scored.
  FetchResult fetch(const text::Utterance& message, std::span<const text::Utterance> context,
                    std::size_t k) const;
  std::vector<ScoredPair> fetch(const QueryBag& query, std::size_t k) const;

  // One fetch per query; the parallel path distributes queries over threads.
  std::vector<std::vector<ScoredPair>> fetch_batch(std::span<const QueryBag> queries,
                                                   std::size_t k, Exec exec) const;

  // The exact value fetch assigns to pair_id, 0 without overlap. Throws
  // UnknownPairId.
  double score(const QueryBag& query, std::uint32_t pair_id) const;

  // TF-IDF cosine between the query and an arbitrary bag of document terms,
  // weighted with this index's idf.
  double cosine_with_bag(const QueryBag& query, const text::TermBag& doc) const;

  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);

  bool operator==(const InvertedIndex&) const = default;

 private:
  struct WeightedTerm {
    std::int64_t term_id;  // -1 when absent from the index
    double weight;         // query weight * idf
  };
  struct PreparedQuery {
    std::vector<WeightedTerm> terms;
    double norm = 0.0;
  };

  PreparedQuery prepare(const QueryBag& query) const;
  double idf_for_df(std::uint32_t df) const;

  std::vector<std::string> terms_;  // sorted
  std::unordered_map<std::string, std::uint32_t> term_ids_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<double> idf_;
  std::vector<double> doc_norms_;

  friend struct IndexLoader;
};

// Pair store plus index, persisted together as one artifact.
struct IndexedCorpus {
  std::vector<PairRecord> pairs;
  InvertedIndex index;

  static IndexedCorpus build(std::vector<PairRecord> pairs);
  void save(const std::filesystem::path& path) const;
  static IndexedCorpus load(const std::filesystem::path& path);
};

}  // namespace chatir
