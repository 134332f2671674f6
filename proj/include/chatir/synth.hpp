#pragma once

// Seeded synthetic corpora for training, tests and the acceptance suite.
// Dialogue pairs come from topic templates with a shared entity slot between
// message and response; emotion and safety corpora come from class templates
// and lexicon words.

#include <cstdint>
#include <string>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/rng.hpp"

namespace chatir::synth {

struct DialogueOptions {
  std::size_t pairs = 500;
  double context_rate = 0.5;
  std::uint64_t seed = 1;
};

struct DialogueSample {
  PairRecord pair;
  std::size_t topic = 0;
  std::string entity;
};

inline constexpr std::size_t kTopicCount = 10;

std::vector<DialogueSample> dialogue_samples(const DialogueOptions& options);
std::vector<PairRecord> dialogue_corpus(const DialogueOptions& options);

// Classes "happy", "sad", "angry", "others"; `per_class` rows each, shuffled.
std::vector<LabeledText> emotion_corpus(std::size_t per_class, std::uint64_t seed);

// Random leet substitutions, elongations and letter doubling. The result
// always deobfuscates to a string close to the input.
std::string obfuscate(const std::string& term, Rng& rng);

// Ordinary chat sentences with no offensive term. Includes words that embed
// offensive substrings ("class", "assume", "shirt").
std::string clean_sentence(Rng& rng);

// A sentence carrying one (optionally obfuscated) offensive term.
std::string offensive_sentence(const std::vector<std::string>& terms, bool obfuscated, Rng& rng);

// Balanced labeled safety corpus, labels "1" offensive / "0" clean.
std::vector<LabeledText> safety_corpus(const std::vector<std::string>& offensive_terms,
                                       std::size_t per_class, std::uint64_t seed);

}  // namespace chatir::synth
