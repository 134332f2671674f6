#include "chatir/safety.hpp"

#include <algorithm>
#include <cmath>

#include "chatir/errors.hpp"
#include "chatir/hash.hpp"
#include "chatir/rng.hpp"
#include "chatir/semantic.hpp"

namespace chatir {

std::string deobfuscate(std::string_view normalized) {
  std::u32string cps = text::decode_utf8(normalized);
  for (char32_t& c : cps) {
    switch (c) {
      case U'0': c = U'o'; break;
      case U'1': c = U'i'; break;
      case U'3': c = U'e'; break;
      case U'4': c = U'a'; break;
      case U'5': c = U's'; break;
      case U'7': c = U't'; break;
      case U'@': c = U'a'; break;
      case U'$': c = U's'; break;
      default: break;
    }
  }
  std::u32string out;
  out.reserve(cps.size());
  std::size_t i = 0;
  while (i < cps.size()) {
    std::size_t j = i;
    while (j < cps.size() && cps[j] == cps[i]) ++j;
    out.append(j - i >= 3 ? 1 : j - i, cps[i]);
    i = j;
  }
  return text::encode_utf8(out);
}

std::vector<std::string> safety_tokens(std::string_view raw) {
  return text::tokenize(deobfuscate(text::normalize_text(raw)));
}

// ---- classifier ------------------------------------------------------------

OffensiveClassifier OffensiveClassifier::create(const ClassifierDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  nn::LayerStack s;
  s.seed = seed;
  s.tag = "safety";
  s.layers.emplace_back(nn::make_hash_projection(dims.trigram_dim, dims.embedding, rng));
  s.layers.emplace_back(nn::make_bi_recurrent(dims.embedding, dims.hidden, rng));
  s.layers.emplace_back(nn::MeanPoolOverTime{});
  s.layers.emplace_back(nn::make_logistic_head(2 * dims.hidden, rng));
  return OffensiveClassifier(std::move(s));
}

OffensiveClassifier::OffensiveClassifier(nn::LayerStack stack) : stack_(std::move(stack)) {
  stack_.validate();
  const auto& l = stack_.layers;
  const bool ok = l.size() == 4 && std::holds_alternative<nn::HashProjection>(l[0]) &&
                  std::holds_alternative<nn::BiRecurrentGated>(l[1]) &&
                  std::holds_alternative<nn::MeanPoolOverTime>(l[2]) &&
                  std::holds_alternative<nn::LogisticHead>(l[3]);
  if (!ok) throw ShapeMismatch("safety: unexpected layer layout");
}

std::uint32_t OffensiveClassifier::trigram_dim() const {
  return static_cast<std::uint32_t>(std::get<nn::HashProjection>(stack_.layers[0]).weight.rows);
}

double OffensiveClassifier::probability_tokens(std::span<const std::string> tokens) const {
  return nn::forward(stack_, encoder_input(tokens, trigram_dim()))(0, 0);
}

double OffensiveClassifier::probability(std::string_view deobfuscated) const {
  return probability_tokens(text::tokenize(deobfuscated));
}

void OffensiveClassifier::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(stack_, path);
}

OffensiveClassifier OffensiveClassifier::load(const std::filesystem::path& path) {
  return OffensiveClassifier(nn::load_checkpoint(path));
}

// ---- policy ----------------------------------------------------------------

DodgePolicy DodgePolicy::load(const std::filesystem::path& topics_file,
                              const std::filesystem::path& dodges_file) {
  DodgePolicy p;
  p.sensitive_topics = load_term_list(topics_file);
  p.dodge_responses = load_term_list(dodges_file);
  if (p.dodge_responses.empty()) throw InvalidConfig("dodge response list is empty");
  return p;
}

std::optional<std::string> check_sensitive_topic(const DodgePolicy& policy,
                                                 std::span<const std::string> tokens) {
  for (const auto& topic : policy.sensitive_topics) {
    if (std::find(tokens.begin(), tokens.end(), topic) != tokens.end()) return topic;
  }
  return std::nullopt;
}

const std::string& pick_dodge(const DodgePolicy& policy, std::string_view session,
                              std::uint64_t turn) {
  if (policy.dodge_responses.empty()) throw InvalidConfig("dodge response list is empty");
  std::uint64_t h = fnv1a64(session);
  h = fnv1a64("|", h);
  h = fnv1a64(std::to_string(turn), h);
  return policy.dodge_responses[h % policy.dodge_responses.size()];
}

SafetyVerdict evaluate_safety(const OffensiveClassifier& classifier, const DodgePolicy& policy,
                              const text::Utterance& utterance, double threshold) {
  SafetyVerdict v;
  v.deobfuscated_text = deobfuscate(utterance.normalized);
  const auto tokens = text::tokenize(v.deobfuscated_text);
  v.offensive_prob = classifier.probability_tokens(tokens);
  v.offensive = v.offensive_prob >= threshold;
  v.sensitive_topic = check_sensitive_topic(policy, tokens);
  return v;
}

// ---- training --------------------------------------------------------------

SafetyTrainResult train_safety(std::span<const LabeledText> corpus,
                               const SafetyTrainOptions& options) {
  if (options.batch_size == 0) throw InvalidConfig("batch_size must be positive");
  struct Example {
    nn::SparseSequence input;
    double target;
  };
  std::vector<Example> rows;
  std::size_t positives = 0;
  for (const auto& r : corpus) {
    if (r.label != "0" && r.label != "1") {
      throw InvalidCorpus("safety label must be 0 or 1, got '" + r.label + "'");
    }
    const double target = r.label == "1" ? 1.0 : 0.0;
    positives += r.label == "1" ? 1 : 0;
    rows.push_back({encoder_input(safety_tokens(r.text), options.dims.trigram_dim), target});
  }
  if (positives == 0 || positives == rows.size()) {
    throw ClassUnderrepresented("safety corpus needs both offensive and clean rows");
  }

  SafetyTrainResult result{OffensiveClassifier::create(options.dims, options.seed), {}};
  auto& stack = result.classifier.stack();
  auto grads = nn::Gradients::zeros_like(stack);
  Rng rng(options.seed ^ 0x5afe5afeULL);
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      grads.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const Example& e = rows[order[b]];
        nn::ForwardCache cache;
        const double p = std::clamp(nn::forward(stack, e.input, &cache)(0, 0), 1e-12, 1.0 - 1e-12);
        total += -(e.target * std::log(p) + (1.0 - e.target) * std::log(1.0 - p));
        correct += ((p >= 0.5) == (e.target == 1.0)) ? 1 : 0;
        nn::Activations up(1, 1);
        up(0, 0) = -e.target / p + (1.0 - e.target) / (1.0 - p);
        nn::accumulate_backward(stack, cache, up, grads);
      }
      grads.scale(1.0 / static_cast<double>(end - start));
      nn::sgd_step(stack, grads, options.learning_rate);
    }
    const auto n = static_cast<double>(rows.size());
    result.epochs.push_back({epoch, total / n, static_cast<double>(correct) / n});
  }
  return result;
}

}  // namespace chatir
