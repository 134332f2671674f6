#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "chatir/text.hpp"

namespace chatir {

// One indexed (message, context, response) pair. Context holds at most two
// utterances, oldest first.
struct PairRecord {
  std::uint32_t id = 0;
  text::Utterance message;
  std::vector<text::Utterance> context;
  text::Utterance response;
};

PairRecord make_pair_record(std::uint32_t id, std::string_view message,
                            const std::vector<std::string>& context, std::string_view response);

// JSON-lines: {"id": int, "message": str, "context": [str]?, "response": str}.
// Throws InvalidCorpus on malformed lines, non-dense ids, more than two
// context items, or an empty normalized response.
std::vector<PairRecord> read_pair_corpus(std::istream& in);
std::vector<PairRecord> load_pair_corpus(const std::filesystem::path& path);
void write_pair_corpus(std::ostream& out, const std::vector<PairRecord>& pairs);

struct LabeledText {
  std::string text;
  std::string label;
};

// {"text": str, "label": str|int}; integer labels are stored as their decimal
// string so emotion and safety corpora share one reader.
std::vector<LabeledText> load_labeled_corpus(const std::filesystem::path& path);
std::vector<LabeledText> read_labeled_corpus(std::istream& in);
void write_labeled_corpus(std::ostream& out, const std::vector<LabeledText>& rows,
                          bool integer_labels);

// One term per line, '#' starts a comment, blank lines ignored. Terms are
// normalized. Throws LexiconMissing when the file cannot be read.
std::vector<std::string> load_term_list(const std::filesystem::path& path);

}  // namespace chatir
