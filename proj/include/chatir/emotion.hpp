#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/nn.hpp"
#include "chatir/semantic.hpp"

namespace chatir {

enum class EmotionLabel : std::uint8_t { happy = 0, sad = 1, angry = 2, others = 3 };

inline constexpr std::size_t kEmotionCount = 4;
inline constexpr std::array<EmotionLabel, kEmotionCount> kEmotionLabels = {
    EmotionLabel::happy, EmotionLabel::sad, EmotionLabel::angry, EmotionLabel::others};

std::string_view to_string(EmotionLabel label);
// Throws InvalidCorpus for anything outside the label set.
EmotionLabel parse_emotion(std::string_view name);

struct Lexicons {
  std::unordered_set<std::string> positive;
  std::unordered_set<std::string> negative;
  std::unordered_set<std::string> anger;

  // Reads positive.txt, negative.txt and anger.txt from dir. Throws
  // LexiconMissing.
  static Lexicons load(const std::filesystem::path& dir);

  // The lexicon associated with an emotion; nullptr for others.
  const std::unordered_set<std::string>* for_emotion(EmotionLabel label) const;
};

inline constexpr std::size_t kSentimentFeatureCount = 7;

struct SentimentFeatures {
  std::size_t pos_count = 0;
  std::size_t neg_count = 0;
  std::size_t anger_count = 0;
  std::size_t exclamation_count = 0;
  std::size_t question_count = 0;
  std::size_t elongation_count = 0;
  std::size_t token_count = 0;

  // The six counts divided by the token count and clamped to [0, 1], then
  // the bias 1. All zeros (bias aside) for an empty utterance.
  std::array<double, kSentimentFeatureCount> normalized() const;
};

// Lexicon hits are token matches. Exclamation and question marks are
// counted per character; elongated tokens contain a run of three or more
// identical codepoints.
SentimentFeatures sentiment_features(const Lexicons& lexicons, const text::Utterance& utterance);

struct EmotionResult {
  EmotionLabel label = EmotionLabel::others;
  std::array<double, kEmotionCount> probabilities{};
};

class EmotionModel {
 public:
  static EmotionModel create(std::size_t semantic_dim, std::uint64_t seed,
                             std::size_t hidden = 32);
  // Throws ShapeMismatch unless the stack is Dense(tanh) -> SoftmaxHead(4).
  explicit EmotionModel(nn::LayerStack stack);

  std::size_t input_dim() const;
  const nn::LayerStack& stack() const { return stack_; }
  nn::LayerStack& stack() { return stack_; }

  void save(const std::filesystem::path& path) const;
  static EmotionModel load(const std::filesystem::path& path);

  bool operator==(const EmotionModel&) const = default;

 private:
  nn::LayerStack stack_;
};

// Concatenation of the semantic vector and the normalized sentiment features.
nn::Activations emotion_input(const CdssmEncoder& encoder, const Lexicons& lexicons,
                              const text::Utterance& utterance);

// Argmax with ties resolved in label order.
EmotionLabel argmax_label(const std::array<double, kEmotionCount>& probabilities);

EmotionResult classify_emotion(const EmotionModel& model, const CdssmEncoder& encoder,
                               const Lexicons& lexicons, const text::Utterance& utterance);
EmotionResult classify_emotion_input(const EmotionModel& model, const nn::Activations& input);

struct EmotionTrainOptions {
  std::size_t epochs = 40;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  std::size_t hidden = 32;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct EmotionEpochStat {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double heldout_macro_f1 = 0.0;
};

struct EmotionTrainResult {
  EmotionModel model;
  std::vector<EmotionEpochStat> epochs;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

inline constexpr std::size_t kMinExamplesPerClass = 25;

// Cross-entropy over the frozen encoder's outputs. A seeded split holds out
// holdout_fraction of each class for the per-epoch macro-F1. Throws
// ClassUnderrepresented when a class has fewer than kMinExamplesPerClass rows
// and InvalidCorpus on unknown labels.
EmotionTrainResult train_emotion(std::span<const LabeledText> corpus, const CdssmEncoder& encoder,
                                 const Lexicons& lexicons, const EmotionTrainOptions& options);

// Macro-F1 of the model on labeled rows.
double emotion_macro_f1(const EmotionModel& model, const CdssmEncoder& encoder,
                        const Lexicons& lexicons, std::span<const LabeledText> rows);

}  // namespace chatir
