#include "chatir/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "chatir/errors.hpp"

namespace chatir {

using nlohmann::json;

PairRecord make_pair_record(std::uint32_t id, std::string_view message,
                            const std::vector<std::string>& context, std::string_view response) {
  PairRecord p;
  p.id = id;
  p.message = text::Utterance::from_raw(message);
  for (const std::string& c : context) p.context.push_back(text::Utterance::from_raw(c));
  p.response = text::Utterance::from_raw(response);
  return p;
}

std::vector<PairRecord> read_pair_corpus(std::istream& in) {
  std::vector<PairRecord> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InvalidCorpus(where + ": " + e.what());
    }
    if (!row.is_object() || !row.contains("id") || !row.contains("message") ||
        !row.contains("response")) {
      throw InvalidCorpus(where + ": expected id, message and response");
    }
    if (!row["id"].is_number_integer() || row["id"].get<std::int64_t>() != static_cast<std::int64_t>(pairs.size())) {
      throw InvalidCorpus(where + ": ids must be dense and start at 0");
    }
    std::vector<std::string> context;
    if (row.contains("context") && !row["context"].is_null()) {
      context = row["context"].get<std::vector<std::string>>();
      if (context.size() > 2) throw InvalidCorpus(where + ": context holds at most 2 items");
    }
    PairRecord p = make_pair_record(static_cast<std::uint32_t>(pairs.size()),
                                    row["message"].get<std::string>(), context,
                                    row["response"].get<std::string>());
    if (p.response.normalized.empty()) throw InvalidCorpus(where + ": empty response");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<PairRecord> load_pair_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidCorpus("cannot open " + path.string());
  return read_pair_corpus(in);
}

void write_pair_corpus(std::ostream& out, const std::vector<PairRecord>& pairs) {
  for (const PairRecord& p : pairs) {
    json row;
    row["id"] = p.id;
    row["message"] = p.message.raw;
    if (!p.context.empty()) {
      json ctx = json::array();
      for (const auto& c : p.context) ctx.push_back(c.raw);
      row["context"] = ctx;
    }
    row["response"] = p.response.raw;
    out << row.dump() << '\n';
  }
}

std::vector<LabeledText> read_labeled_corpus(std::istream& in) {
  std::vector<LabeledText> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json row = json::parse(line);
      LabeledText t;
      t.text = row.at("text").get<std::string>();
      const json& label = row.at("label");
      t.label = label.is_string() ? label.get<std::string>() : std::to_string(label.get<int>());
      rows.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw InvalidCorpus("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<LabeledText> load_labeled_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidCorpus("cannot open " + path.string());
  return read_labeled_corpus(in);
}

void write_labeled_corpus(std::ostream& out, const std::vector<LabeledText>& rows,
                          bool integer_labels) {
  for (const LabeledText& r : rows) {
    json row;
    row["text"] = r.text;
    if (integer_labels) {
      row["label"] = std::stoi(r.label);
    } else {
      row["label"] = r.label;
    }
    out << row.dump() << '\n';
  }
}

std::vector<std::string> load_term_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LexiconMissing("cannot read " + path.string());
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    // A leading '#' is a comment; '#' inside a term (e.g. hashtags) is kept
    // unless preceded by whitespace.
    if (hash == 0) continue;
    if (hash != std::string::npos && hash > 0 && (line[hash - 1] == ' ' || line[hash - 1] == '\t')) {
      line.resize(hash);
    }
    std::string term = text::normalize_text(line);
    if (!term.empty()) terms.push_back(std::move(term));
  }
  return terms;
}

}  // namespace chatir
