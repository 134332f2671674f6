#include "chatir/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chatir/errors.hpp"

namespace chatir {

QueryBag make_query_bag(const text::Utterance& message, std::span<const text::Utterance> context) {
  QueryBag bag;
  for (const std::string& t : message.tokens) bag[t] += 1.0;
  for (const text::Utterance& c : context) {
    for (const std::string& t : c.tokens) bag[t] += kContextTermWeight;
  }
  return bag;
}

QueryBag make_query_bag(std::span<const std::string> tokens) {
  QueryBag bag;
  for (const std::string& t : tokens) bag[t] += 1.0;
  return bag;
}

double InvertedIndex::idf_for_df(std::uint32_t df) const {
  const double n = static_cast<double>(doc_norms_.size());
  return std::log((n + 1.0) / (static_cast<double>(df) + 1.0)) + 1.0;
}

InvertedIndex InvertedIndex::build(std::span<const PairRecord> corpus) {
  if (corpus.empty()) throw EmptyCorpus("cannot index an empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].id != i) throw InvalidCorpus("pair ids must be dense from 0");
  }

  std::map<std::string, std::vector<Posting>> by_term;
  for (const PairRecord& p : corpus) {
    for (const auto& [term, tf] : text::term_bag(p.message.tokens)) {
      by_term[term].push_back({p.id, tf});
    }
  }

  InvertedIndex idx;
  idx.doc_norms_.assign(corpus.size(), 0.0);
  idx.terms_.reserve(by_term.size());
  idx.postings_.reserve(by_term.size());
  for (auto& [term, postings] : by_term) {
    idx.term_ids_.emplace(term, static_cast<std::uint32_t>(idx.terms_.size()));
    idx.terms_.push_back(term);
    idx.postings_.push_back(std::move(postings));
  }
  idx.idf_.resize(idx.terms_.size());
  std::vector<double> sq(corpus.size(), 0.0);
  for (std::size_t t = 0; t < idx.terms_.size(); ++t) {
    idx.idf_[t] = idx.idf_for_df(static_cast<std::uint32_t>(idx.postings_[t].size()));
    for (const Posting& p : idx.postings_[t]) {
      const double w = static_cast<double>(p.tf) * idx.idf_[t];
      sq[p.pair_id] += w * w;
    }
  }
  for (std::size_t d = 0; d < sq.size(); ++d) idx.doc_norms_[d] = std::sqrt(sq[d]);
  return idx;
}

std::uint32_t InvertedIndex::doc_freq(std::string_view term) const {
  const auto* p = postings(term);
  return p ? static_cast<std::uint32_t>(p->size()) : 0;
}

double InvertedIndex::idf(std::string_view term) const {
  const auto it = term_ids_.find(std::string(term));
  return it == term_ids_.end() ? idf_for_df(0) : idf_[it->second];
}

const std::vector<Posting>* InvertedIndex::postings(std::string_view term) const {
  const auto it = term_ids_.find(std::string(term));
  return it == term_ids_.end() ? nullptr : &postings_[it->second];
}

InvertedIndex::PreparedQuery InvertedIndex::prepare(const QueryBag& query) const {
  PreparedQuery q;
  double sq = 0.0;
  for (const auto& [term, weight] : query) {
    if (weight <= 0.0) continue;
    const auto it = term_ids_.find(term);
    const std::int64_t id = it == term_ids_.end() ? -1 : static_cast<std::int64_t>(it->second);
    const double w = weight * (id < 0 ? idf_for_df(0) : idf_[static_cast<std::size_t>(id)]);
    sq += w * w;
    q.terms.push_back({id, w});
  }
  q.norm = std::sqrt(sq);
  return q;
}

namespace {

// Shared by the posting-list accumulator and the per-document scorer so both
// perform the identical floating-point operations in the identical order.
inline double term_contribution(double query_weight, std::uint32_t tf, double idf) {
  return query_weight * (static_cast<double>(tf) * idf);
}

inline bool better(const ScoredPair& a, const ScoredPair& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.pair_id < b.pair_id;
}

}  // namespace

std::vector<ScoredPair> InvertedIndex::fetch(const QueryBag& query, std::size_t k) const {
  std::vector<ScoredPair> out;
  if (k == 0) return out;
  const PreparedQuery q = prepare(query);
  if (q.norm == 0.0) return out;

  std::vector<double> acc(doc_norms_.size(), 0.0);
  std::vector<std::uint32_t> touched;
  for (const WeightedTerm& wt : q.terms) {
    if (wt.term_id < 0) continue;
    const std::size_t t = static_cast<std::size_t>(wt.term_id);
    for (const Posting& p : postings_[t]) {
      if (acc[p.pair_id] == 0.0) touched.push_back(p.pair_id);
      acc[p.pair_id] += term_contribution(wt.weight, p.tf, idf_[t]);
    }
  }
  out.reserve(touched.size());
  for (std::uint32_t d : touched) {
    out.push_back({d, acc[d] / (q.norm * doc_norms_[d])});
  }
  const std::size_t keep = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    better);
  out.resize(keep);
  return out;
}

FetchResult InvertedIndex::fetch(const text::Utterance& message,
                                 std::span<const text::Utterance> context, std::size_t k) const {
  FetchResult r;
  r.query_terms = make_query_bag(message, context);
  r.candidates = fetch(r.query_terms, k);
  return r;
}

std::vector<std::vector<ScoredPair>> InvertedIndex::fetch_batch(std::span<const QueryBag> queries,
                                                                std::size_t k, Exec exec) const {
  std::vector<std::vector<ScoredPair>> out(queries.size());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(queries.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = fetch(queries[i], k);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = fetch(queries[i], k);
  }
  return out;
}

double InvertedIndex::score(const QueryBag& query, std::uint32_t pair_id) const {
  if (pair_id >= doc_norms_.size()) {
    throw UnknownPairId("pair " + std::to_string(pair_id) + " not in index of " +
                        std::to_string(doc_norms_.size()));
  }
  const PreparedQuery q = prepare(query);
  if (q.norm == 0.0) return 0.0;
  double acc = 0.0;
  for (const WeightedTerm& wt : q.terms) {
    if (wt.term_id < 0) continue;
    const std::size_t t = static_cast<std::size_t>(wt.term_id);
    const auto& plist = postings_[t];
    const auto it = std::lower_bound(plist.begin(), plist.end(), pair_id,
                                     [](const Posting& p, std::uint32_t id) { return p.pair_id < id; });
    if (it == plist.end() || it->pair_id != pair_id) continue;
    acc += term_contribution(wt.weight, it->tf, idf_[t]);
  }
  if (acc == 0.0) return 0.0;
  return acc / (q.norm * doc_norms_[pair_id]);
}

double InvertedIndex::cosine_with_bag(const QueryBag& query, const text::TermBag& doc) const {
  const PreparedQuery q = prepare(query);
  if (q.norm == 0.0 || doc.empty()) return 0.0;
  double doc_sq = 0.0;
  for (const auto& [term, tf] : doc) {
    const double w = static_cast<double>(tf) * idf(term);
    doc_sq += w * w;
  }
  double dot = 0.0;
  for (const auto& [term, tf] : doc) {
    const auto hit = query.find(term);
    if (hit == query.end() || hit->second <= 0.0) continue;
    dot += hit->second * idf(term) * static_cast<double>(tf) * idf(term);
  }
  if (dot == 0.0) return 0.0;
  return dot / (q.norm * std::sqrt(doc_sq));
}

// --- persistence ---------------------------------------------------------
//
// Layout (all integers little-endian, doubles as their IEEE-754 bit pattern):
//   "CHATIRIX" u32 format_version
//   u32 doc_count, u32 term_count
//   per term: u32 len, bytes, u32 posting_count, postings (u32 id, u32 tf)
//   doc_count x f64 doc norms
// idf is recomputed on load from df and N, which reproduces it bit-exactly.

namespace {

constexpr char kIndexMagic[8] = {'C', 'H', 'A', 'T', 'I', 'R', 'I', 'X'};
constexpr char kCorpusMagic[8] = {'C', 'H', 'A', 'T', 'I', 'R', 'P', 'S'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

void put_string(std::ostream& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 26)) throw CorruptIndex("string length out of range");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void magic(const char (&expected)[8]) {
    char m[8];
    read(m, 8);
    if (std::memcmp(m, expected, 8) != 0) throw CorruptIndex("bad magic");
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CorruptIndex("truncated artifact");
  }
  std::istream& in_;
};

void write_index(std::ostream& out, const InvertedIndex& idx) {
  out.write(kIndexMagic, 8);
  put_u32(out, kIndexFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(idx.doc_count()));
  put_u32(out, static_cast<std::uint32_t>(idx.term_count()));
  for (const std::string& term : idx.terms()) {
    put_string(out, term);
    const auto& plist = *idx.postings(term);
    put_u32(out, static_cast<std::uint32_t>(plist.size()));
    for (const Posting& p : plist) {
      put_u32(out, p.pair_id);
      put_u32(out, p.tf);
    }
  }
  for (std::uint32_t d = 0; d < idx.doc_count(); ++d) put_f64(out, idx.doc_norm(d));
}

}  // namespace

// Friend access for the reader lives here to keep the class surface small.
struct IndexLoader {
  static InvertedIndex read(std::istream& in) {
    Reader r(in);
    r.magic(kIndexMagic);
    const std::uint32_t version = r.u32();
    if (version != kIndexFormatVersion) {
      throw FormatVersionMismatch("index format " + std::to_string(version) + ", expected " +
                                  std::to_string(kIndexFormatVersion));
    }
    InvertedIndex idx;
    const std::uint32_t n_docs = r.u32();
    const std::uint32_t n_terms = r.u32();
    idx.doc_norms_.assign(n_docs, 0.0);
    idx.terms_.reserve(n_terms);
    idx.postings_.reserve(n_terms);
    for (std::uint32_t t = 0; t < n_terms; ++t) {
      std::string term = r.str();
      if (!idx.terms_.empty() && !(idx.terms_.back() < term)) throw CorruptIndex("terms not sorted");
      const std::uint32_t n_post = r.u32();
      if (n_post == 0 || n_post > n_docs) throw CorruptIndex("posting count out of range");
      std::vector<Posting> plist(n_post);
      for (auto& p : plist) {
        p.pair_id = r.u32();
        p.tf = r.u32();
        if (p.pair_id >= n_docs || p.tf == 0) throw CorruptIndex("bad posting");
      }
      for (std::size_t i = 1; i < plist.size(); ++i) {
        if (plist[i - 1].pair_id >= plist[i].pair_id) throw CorruptIndex("postings not sorted");
      }
      idx.term_ids_.emplace(term, t);
      idx.terms_.push_back(std::move(term));
      idx.postings_.push_back(std::move(plist));
    }
    for (auto& norm : idx.doc_norms_) norm = r.f64();
    idx.idf_.resize(n_terms);
    for (std::uint32_t t = 0; t < n_terms; ++t) {
      idx.idf_[t] = idx.idf_for_df(static_cast<std::uint32_t>(idx.postings_[t].size()));
    }
    return idx;
  }
};

void InvertedIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_index(out, *this);
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptIndex("cannot open " + path.string());
  return IndexLoader::read(in);
}

IndexedCorpus IndexedCorpus::build(std::vector<PairRecord> pairs) {
  IndexedCorpus c;
  c.index = InvertedIndex::build(pairs);
  c.pairs = std::move(pairs);
  return c;
}

void IndexedCorpus::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kCorpusMagic, 8);
  put_u32(out, kIndexFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(pairs.size()));
  for (const PairRecord& p : pairs) {
    put_string(out, p.message.raw);
    put_u32(out, static_cast<std::uint32_t>(p.context.size()));
    for (const auto& c : p.context) put_string(out, c.raw);
    put_string(out, p.response.raw);
  }
  write_index(out, index);
}

IndexedCorpus IndexedCorpus::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptIndex("cannot open " + path.string());
  Reader r(in);
  r.magic(kCorpusMagic);
  const std::uint32_t version = r.u32();
  if (version != kIndexFormatVersion) {
    throw FormatVersionMismatch("index format " + std::to_string(version));
  }
  IndexedCorpus c;
  const std::uint32_t n = r.u32();
  c.pairs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string message = r.str();
    const std::uint32_t n_ctx = r.u32();
    if (n_ctx > 2) throw CorruptIndex("context length out of range");
    std::vector<std::string> ctx;
    for (std::uint32_t k = 0; k < n_ctx; ++k) ctx.push_back(r.str());
    const std::string response = r.str();
    c.pairs.push_back(make_pair_record(i, message, ctx, response));
  }
  c.index = IndexLoader::read(in);
  if (c.index.doc_count() != c.pairs.size()) throw CorruptIndex("pair store and index disagree");
  return c;
}

}  // namespace chatir
