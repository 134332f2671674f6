#include "chatir/emotion.hpp"

#include <algorithm>
#include <cmath>

#include "chatir/errors.hpp"
#include "chatir/metrics.hpp"
#include "chatir/rng.hpp"

namespace chatir {

std::string_view to_string(EmotionLabel label) {
  switch (label) {
    case EmotionLabel::happy: return "happy";
    case EmotionLabel::sad: return "sad";
    case EmotionLabel::angry: return "angry";
    case EmotionLabel::others: return "others";
  }
  return "others";
}

EmotionLabel parse_emotion(std::string_view name) {
  for (EmotionLabel l : kEmotionLabels) {
    if (to_string(l) == name) return l;
  }
  throw InvalidCorpus("unknown emotion label '" + std::string(name) + "'");
}

Lexicons Lexicons::load(const std::filesystem::path& dir) {
  auto as_set = [](const std::vector<std::string>& v) {
    return std::unordered_set<std::string>(v.begin(), v.end());
  };
  Lexicons lex;
  lex.positive = as_set(load_term_list(dir / "positive.txt"));
  lex.negative = as_set(load_term_list(dir / "negative.txt"));
  lex.anger = as_set(load_term_list(dir / "anger.txt"));
  return lex;
}

const std::unordered_set<std::string>* Lexicons::for_emotion(EmotionLabel label) const {
  switch (label) {
    case EmotionLabel::happy: return &positive;
    case EmotionLabel::sad: return &negative;
    case EmotionLabel::angry: return &anger;
    case EmotionLabel::others: return nullptr;
  }
  return nullptr;
}

std::array<double, kSentimentFeatureCount> SentimentFeatures::normalized() const {
  std::array<double, kSentimentFeatureCount> out{};
  out[6] = 1.0;
  if (token_count == 0) return out;
  const std::array<std::size_t, 6> counts = {pos_count,         neg_count,      anger_count,
                                             exclamation_count, question_count, elongation_count};
  const auto n = static_cast<double>(token_count);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = std::min(1.0, static_cast<double>(counts[i]) / n);
  }
  return out;
}

namespace {

bool elongated(const std::string& token) {
  const std::u32string cps = text::decode_utf8(token);
  std::size_t run = 1;
  for (std::size_t i = 1; i < cps.size(); ++i) {
    run = cps[i] == cps[i - 1] ? run + 1 : 1;
    if (run >= 3) return true;
  }
  return false;
}

}  // namespace

SentimentFeatures sentiment_features(const Lexicons& lexicons, const text::Utterance& utterance) {
  SentimentFeatures f;
  f.token_count = utterance.tokens.size();
  for (const auto& tok : utterance.tokens) {
    f.pos_count += lexicons.positive.count(tok);
    f.neg_count += lexicons.negative.count(tok);
    f.anger_count += lexicons.anger.count(tok);
    f.elongation_count += elongated(tok) ? 1 : 0;
    for (char c : tok) {
      f.exclamation_count += c == '!' ? 1 : 0;
      f.question_count += c == '?' ? 1 : 0;
    }
  }
  return f;
}

// ---- model -----------------------------------------------------------------

EmotionModel EmotionModel::create(std::size_t semantic_dim, std::uint64_t seed,
                                  std::size_t hidden) {
  Rng rng(seed);
  nn::LayerStack s;
  s.seed = seed;
  s.tag = "emotion";
  s.layers.emplace_back(
      nn::make_dense(semantic_dim + kSentimentFeatureCount, hidden, nn::Activation::tanh, rng));
  s.layers.emplace_back(nn::make_softmax_head(hidden, kEmotionCount, rng));
  return EmotionModel(std::move(s));
}

EmotionModel::EmotionModel(nn::LayerStack stack) : stack_(std::move(stack)) {
  stack_.validate();
  const auto& l = stack_.layers;
  const bool ok = l.size() == 2 && std::holds_alternative<nn::Dense>(l[0]) &&
                  std::get<nn::Dense>(l[0]).act == nn::Activation::tanh &&
                  std::holds_alternative<nn::SoftmaxHead>(l[1]) &&
                  std::get<nn::SoftmaxHead>(l[1]).weight.cols == kEmotionCount;
  if (!ok) throw ShapeMismatch("emotion: expected Dense(tanh) -> SoftmaxHead(4)");
}

std::size_t EmotionModel::input_dim() const {
  return std::get<nn::Dense>(stack_.layers[0]).weight.rows;
}

void EmotionModel::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(stack_, path);
}

EmotionModel EmotionModel::load(const std::filesystem::path& path) {
  return EmotionModel(nn::load_checkpoint(path));
}

nn::Activations emotion_input(const CdssmEncoder& encoder, const Lexicons& lexicons,
                              const text::Utterance& utterance) {
  const SemanticVector v = encoder.encode_message(utterance);
  const auto s = sentiment_features(lexicons, utterance).normalized();
  nn::Activations x(1, v.size() + s.size());
  std::copy(v.begin(), v.end(), x.data.begin());
  std::copy(s.begin(), s.end(), x.data.begin() + static_cast<std::ptrdiff_t>(v.size()));
  return x;
}

EmotionLabel argmax_label(const std::array<double, kEmotionCount>& probabilities) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kEmotionCount; ++i) {
    if (probabilities[i] > probabilities[best]) best = i;
  }
  return kEmotionLabels[best];
}

EmotionResult classify_emotion_input(const EmotionModel& model, const nn::Activations& input) {
  if (input.cols != model.input_dim()) throw ShapeMismatch("emotion: input width mismatch");
  const nn::Activations p = nn::forward(model.stack(), input);
  EmotionResult r;
  std::copy(p.data.begin(), p.data.end(), r.probabilities.begin());
  r.label = argmax_label(r.probabilities);
  return r;
}

EmotionResult classify_emotion(const EmotionModel& model, const CdssmEncoder& encoder,
                               const Lexicons& lexicons, const text::Utterance& utterance) {
  return classify_emotion_input(model, emotion_input(encoder, lexicons, utterance));
}

// ---- training --------------------------------------------------------------

namespace {

struct Example {
  nn::Activations input;
  std::size_t label = 0;
};

double macro_f1_on(const EmotionModel& model, std::span<const Example> rows) {
  std::vector<std::size_t> truth, pred;
  for (const auto& e : rows) {
    truth.push_back(e.label);
    pred.push_back(static_cast<std::size_t>(classify_emotion_input(model, e.input).label));
  }
  return metrics::macro_f1(truth, pred, kEmotionCount);
}

}  // namespace

EmotionTrainResult train_emotion(std::span<const LabeledText> corpus, const CdssmEncoder& encoder,
                                 const Lexicons& lexicons, const EmotionTrainOptions& options) {
  if (options.batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (options.holdout_fraction < 0.0 || options.holdout_fraction >= 1.0) {
    throw InvalidConfig("holdout_fraction must be in [0, 1)");
  }
  std::array<std::vector<std::size_t>, kEmotionCount> by_class;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    by_class[static_cast<std::size_t>(parse_emotion(corpus[i].label))].push_back(i);
  }
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    if (by_class[c].size() < kMinExamplesPerClass) {
      throw ClassUnderrepresented("class '" + std::string(to_string(kEmotionLabels[c])) +
                                  "' has " + std::to_string(by_class[c].size()) +
                                  " examples, need " + std::to_string(kMinExamplesPerClass));
    }
  }

  Rng rng(options.seed);
  std::vector<Example> train, held;
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    auto idx = by_class[c];
    rng.shuffle(idx);
    const auto n_held = static_cast<std::size_t>(
        std::floor(options.holdout_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Example e{emotion_input(encoder, lexicons, text::Utterance::from_raw(corpus[idx[k]].text)), c};
      (k < n_held ? held : train).push_back(std::move(e));
    }
  }

  EmotionTrainResult result{EmotionModel::create(encoder.dim(), options.seed, options.hidden), {},
                            train.size(), held.size()};
  auto& stack = result.model.stack();
  auto grads = nn::Gradients::zeros_like(stack);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      grads.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const Example& e = train[order[b]];
        nn::ForwardCache cache;
        const nn::Activations p = nn::forward(stack, e.input, &cache);
        const double pl = std::max(p(0, e.label), 1e-300);
        total += -std::log(pl);
        nn::Activations up(1, kEmotionCount, 0.0);
        up(0, e.label) = -1.0 / pl;
        nn::accumulate_backward(stack, cache, up, grads);
      }
      grads.scale(1.0 / static_cast<double>(end - start));
      nn::sgd_step(stack, grads, options.learning_rate);
    }
    result.epochs.push_back({epoch, train.empty() ? 0.0 : total / static_cast<double>(train.size()),
                             held.empty() ? 0.0 : macro_f1_on(result.model, held)});
  }
  return result;
}

double emotion_macro_f1(const EmotionModel& model, const CdssmEncoder& encoder,
                        const Lexicons& lexicons, std::span<const LabeledText> rows) {
  std::vector<Example> ex;
  for (const auto& r : rows) {
    ex.push_back({emotion_input(encoder, lexicons, text::Utterance::from_raw(r.text)),
                  static_cast<std::size_t>(parse_emotion(r.label))});
  }
  return macro_f1_on(model, ex);
}

}  // namespace chatir
