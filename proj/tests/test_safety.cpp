#include <filesystem>
#include <fstream>
#include <set>

#include "chatir/errors.hpp"
#include "chatir/safety.hpp"
#include "chatir/semantic.hpp"
#include "chatir/synth.hpp"
#include "doctest.h"
#include "fuzz.hpp"
#include "nn_fixtures.hpp"

using namespace chatir;
using namespace chatir::testing;

namespace {

const DodgePolicy& shipped_policy() {
  static const DodgePolicy p =
      DodgePolicy::load("data/safety/sensitive_topics.txt", "data/safety/dodges.txt");
  return p;
}

std::vector<std::string> toks(std::string_view s) { return safety_tokens(s); }

}  // namespace

TEST_CASE("deobfuscate examples") {
  CHECK(deobfuscate("hello") == "hello");
  CHECK(deobfuscate("sh1t") == "shit");
  CHECK(deobfuscate("shiiiit") == "shit");
  CHECK(deobfuscate("$h!7") == "sh!t");
  CHECK(deobfuscate("@55h0l3") == "asshole");
  CHECK(deobfuscate("b1tchhhh") == "bitch");
  CHECK(deobfuscate("good") == "good");
  CHECK(deobfuscate("nooo way!!!") == "no way!");
  CHECK(deobfuscate("ééé") == "é");
}

TEST_CASE("deobfuscate is idempotent") {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const std::string once = deobfuscate(text::normalize_text(fuzz_string(rng)));
    REQUIRE(deobfuscate(once) == once);
  }
}

TEST_CASE("sensitive topics") {
  DodgePolicy p{{"ok"}, {"religion", "politics"}};
  CHECK(check_sensitive_topic(p, toks("let's talk about religion")) == "religion");
  CHECK_FALSE(check_sensitive_topic(p, toks("let's talk about pizza")).has_value());
  CHECK(check_sensitive_topic(p, toks("politics and religion")) == "religion");
  CHECK_FALSE(check_sensitive_topic(p, toks("religious people")).has_value());
  CHECK(check_sensitive_topic(p, toks("P0L1T1C$ again")) == "politics");
}

TEST_CASE("dodge selection") {
  const DodgePolicy single{{"only"}, {}};
  for (std::uint64_t t = 0; t < 20; ++t) CHECK(pick_dodge(single, "s", t) == "only");

  const auto& p = shipped_policy();
  REQUIRE(p.dodge_responses.size() == 5);
  CHECK(&pick_dodge(p, "abc", 3) == &pick_dodge(p, "abc", 3));
  std::set<std::string> seen;
  for (std::uint64_t t = 0; t < 10; ++t) seen.insert(pick_dodge(p, "session-1", t));
  CHECK(seen.size() >= 2);

  const DodgePolicy none{{}, {}};
  CHECK_THROWS_AS(pick_dodge(none, "s", 0), InvalidConfig);
}

TEST_CASE("policy files") {
  CHECK(shipped_policy().sensitive_topics.front() == "religion");
  CHECK_THROWS_AS(DodgePolicy::load("missing.txt", "data/safety/dodges.txt"), LexiconMissing);
  const auto empty = std::filesystem::temp_directory_path() / "chatir_empty_dodges.txt";
  std::ofstream(empty) << "# nothing here\n";
  CHECK_THROWS_AS(DodgePolicy::load("data/safety/sensitive_topics.txt", empty), InvalidConfig);
  std::filesystem::remove(empty);
}

TEST_CASE("classifier gradient check") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto clf = OffensiveClassifier::create(ClassifierDims{8, 8, 4}, seed);
    Rng rng(seed * 3);
    jitter_all(clf.stack(), rng, 0.3);
    std::vector<std::string> words;
    for (std::size_t i = 1 + rng.below(5); i > 0; --i) words.push_back(random_word(rng, 1, 5));
    const nn::StackInput input = encoder_input(words, 8);
    CHECK(nn::gradient_check(clf.stack(), binary_cross_entropy(seed % 2), input, 1e-4) <= 1e-4);
  }
}

TEST_CASE("verdict threshold consistency") {
  const auto clf = OffensiveClassifier::create(ClassifierDims{}, 3);
  Rng rng(6);
  for (double threshold : {0.0, 0.3, 0.5, 0.7, 1.0}) {
    for (int i = 0; i < 50; ++i) {
      const auto u = text::Utterance::from_raw(fuzz_string(rng));
      const auto v = evaluate_safety(clf, shipped_policy(), u, threshold);
      REQUIRE(v.offensive_prob > 0.0);
      REQUIRE(v.offensive_prob < 1.0);
      REQUIRE(v.offensive == (v.offensive_prob >= threshold));
      REQUIRE(v.deobfuscated_text == deobfuscate(u.normalized));
    }
  }
}

TEST_CASE("training") {
  const auto terms = load_term_list("data/safety/offensive_terms.txt");
  const auto corpus = synth::safety_corpus(terms, 300, 2);
  SafetyTrainOptions opt;
  opt.epochs = 6;
  opt.seed = 5;

  SUBCASE("labels") {
    std::vector<LabeledText> bad = {{"hi", "2"}};
    CHECK_THROWS_AS(train_safety(bad, opt), InvalidCorpus);
    std::vector<LabeledText> one_class = {{"hi", "0"}, {"yo", "0"}};
    CHECK_THROWS_AS(train_safety(one_class, opt), ClassUnderrepresented);
  }
  SUBCASE("zero learning rate") {
    opt.learning_rate = 0.0;
    opt.epochs = 1;
    CHECK(train_safety(corpus, opt).classifier == OffensiveClassifier::create(opt.dims, opt.seed));
  }
  SUBCASE("separates obfuscated abuse from clean chat") {
    const auto r = train_safety(corpus, opt);
    CHECK(r.epochs.back().mean_loss < r.epochs.front().mean_loss);
    Rng rng(77);
    for (int i = 0; i < 50; ++i) {
      const auto s = synth::offensive_sentence(terms, true, rng);
      CHECK_MESSAGE(r.classifier.probability(deobfuscate(text::normalize_text(s))) >= 0.5, s);
    }
    std::size_t false_positives = 0;
    for (int i = 0; i < 200; ++i) {
      const auto s = synth::clean_sentence(rng);
      false_positives += r.classifier.probability(deobfuscate(text::normalize_text(s))) >= 0.5;
    }
    CHECK(false_positives <= 4);
    for (const auto& d : shipped_policy().dodge_responses) {
      CHECK(r.classifier.probability(deobfuscate(text::normalize_text(d))) < 0.5);
    }
    CHECK(train_safety(corpus, opt).classifier == r.classifier);

    const auto path = std::filesystem::temp_directory_path() / "chatir_safety_test.ckpt";
    r.classifier.save(path);
    CHECK(OffensiveClassifier::load(path) == r.classifier);
    std::filesystem::remove(path);
  }
}
