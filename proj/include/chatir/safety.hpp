#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/nn.hpp"
#include "chatir/text.hpp"

namespace chatir {

// Leet map (0->o 1->i 3->e 4->a 5->s 7->t @->a $->s), then every run of three
// or more identical codepoints becomes one. Idempotent.
std::string deobfuscate(std::string_view normalized);

struct SafetyVerdict {
  bool offensive = false;
  double offensive_prob = 0.0;
  std::optional<std::string> sensitive_topic;
  std::string deobfuscated_text;

  bool fires() const { return offensive || sensitive_topic.has_value(); }
};

struct ClassifierDims {
  std::uint32_t trigram_dim = text::kTrigramDim;
  std::size_t embedding = 32;
  std::size_t hidden = 32;
};

// Hashed trigram embedding -> bidirectional gated recurrent layer -> mean
// over time -> logistic output.
class OffensiveClassifier {
 public:
  static OffensiveClassifier create(const ClassifierDims& dims, std::uint64_t seed);
  // Throws ShapeMismatch unless the stack has the classifier layout.
  explicit OffensiveClassifier(nn::LayerStack stack);

  // Input must already be deobfuscated.
  double probability(std::string_view deobfuscated) const;
  double probability_tokens(std::span<const std::string> tokens) const;

  std::uint32_t trigram_dim() const;
  const nn::LayerStack& stack() const { return stack_; }
  nn::LayerStack& stack() { return stack_; }

  void save(const std::filesystem::path& path) const;
  static OffensiveClassifier load(const std::filesystem::path& path);

  bool operator==(const OffensiveClassifier&) const = default;

 private:
  nn::LayerStack stack_;
};

// Tokens of normalize -> deobfuscate, the form the classifier consumes.
std::vector<std::string> safety_tokens(std::string_view raw);

struct DodgePolicy {
  std::vector<std::string> dodge_responses;
  std::vector<std::string> sensitive_topics;

  // Throws LexiconMissing when a file is unreadable and InvalidConfig when
  // the dodge list is empty.
  static DodgePolicy load(const std::filesystem::path& topics_file,
                          const std::filesystem::path& dodges_file);
};

// First configured topic present as an exact token.
std::optional<std::string> check_sensitive_topic(const DodgePolicy& policy,
                                                 std::span<const std::string> tokens);

// fnv1a64(session + "|" + turn) mod list length.
const std::string& pick_dodge(const DodgePolicy& policy, std::string_view session,
                              std::uint64_t turn);

inline constexpr double kDefaultOffensiveThreshold = 0.5;

// Topics are matched against the deobfuscated tokens.
SafetyVerdict evaluate_safety(const OffensiveClassifier& classifier, const DodgePolicy& policy,
                              const text::Utterance& utterance,
                              double threshold = kDefaultOffensiveThreshold);

struct SafetyTrainOptions {
  ClassifierDims dims;
  std::size_t epochs = 15;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
};

struct SafetyEpochStat {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct SafetyTrainResult {
  OffensiveClassifier classifier;
  std::vector<SafetyEpochStat> epochs;
};

// Binary cross-entropy on deobfuscated rows labeled "1" (offensive) or "0".
// Throws InvalidCorpus on other labels and ClassUnderrepresented when a class
// has no rows.
SafetyTrainResult train_safety(std::span<const LabeledText> corpus,
                               const SafetyTrainOptions& options);

}  // namespace chatir
