#include <cmath>
#include <filesystem>

#include "chatir/emotion.hpp"
#include "chatir/errors.hpp"
#include "chatir/synth.hpp"
#include "doctest.h"
#include "fuzz.hpp"
#include "nn_fixtures.hpp"

using namespace chatir;
using namespace chatir::testing;

namespace {

const Lexicons& lexicons() {
  static const Lexicons lex = Lexicons::load("data/lexicons");
  return lex;
}

const CdssmEncoder& encoder() {
  static const CdssmEncoder enc = CdssmEncoder::create(EncoderDims{}, 7);
  return enc;
}

}  // namespace

TEST_CASE("labels") {
  for (EmotionLabel l : kEmotionLabels) CHECK(parse_emotion(to_string(l)) == l);
  CHECK_THROWS_AS(parse_emotion("bored"), InvalidCorpus);
  CHECK(argmax_label({0.25, 0.25, 0.25, 0.25}) == EmotionLabel::happy);
  CHECK(argmax_label({0.1, 0.4, 0.4, 0.1}) == EmotionLabel::sad);
  CHECK(argmax_label({0.1, 0.2, 0.3, 0.4}) == EmotionLabel::others);
}

TEST_CASE("lexicon loading") {
  CHECK(lexicons().positive.count("happy") == 1);
  CHECK(lexicons().anger.count("furious") == 1);
  CHECK_THROWS_AS(Lexicons::load("no/such/dir"), LexiconMissing);
  CHECK(lexicons().for_emotion(EmotionLabel::sad) == &lexicons().negative);
  CHECK(lexicons().for_emotion(EmotionLabel::others) == nullptr);
}

TEST_CASE("sentiment feature examples") {
  const auto happy = sentiment_features(lexicons(), text::Utterance::from_raw("i am happy"));
  CHECK(happy.pos_count == 1);
  CHECK(happy.normalized()[0] == doctest::Approx(1.0 / 3.0));

  const auto empty = sentiment_features(lexicons(), text::Utterance::from_raw(""));
  const auto ez = empty.normalized();
  for (std::size_t i = 0; i < 6; ++i) CHECK(ez[i] == 0.0);
  CHECK(ez[6] == 1.0);

  const auto text_me =
      sentiment_features(lexicons(), text::Utterance::from_raw("Why don't you ever text me!"));
  CHECK(text_me.token_count == 7);
  CHECK(text_me.exclamation_count == 1);
  CHECK(text_me.normalized()[3] == doctest::Approx(1.0 / 7.0));

  const auto loud = sentiment_features(lexicons(), text::Utterance::from_raw("nooooo!!! why??"));
  CHECK(loud.elongation_count == 2);  // "nooooo" and the "!!!" run
  CHECK(loud.exclamation_count == 3);
  CHECK(loud.question_count == 2);
  for (double v : loud.normalized()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("probability simplex on fuzzed inputs") {
  const auto model = EmotionModel::create(encoder().dim(), 3);
  CHECK(model.input_dim() == 135);
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto r = classify_emotion(model, encoder(), lexicons(),
                                    text::Utterance::from_raw(fuzz_string(rng)));
    double sum = 0.0;
    for (double p : r.probabilities) {
      REQUIRE(p >= 0.0);
      REQUIRE(p <= 1.0);
      sum += p;
    }
    REQUIRE(std::abs(sum - 1.0) <= 1e-6);
    REQUIRE(r.label == argmax_label(r.probabilities));
  }
}

TEST_CASE("head gradient check") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto model = EmotionModel::create(9, seed, 8);
    Rng rng(seed);
    jitter_all(model.stack(), rng, 0.3);
    const auto x = random_activations(rng, 1, 16, 1.0);
    CHECK(nn::gradient_check(model.stack(), cross_entropy(seed % kEmotionCount), x, 1e-4) <= 1e-4);
  }
}

TEST_CASE("training") {
  const auto corpus = synth::emotion_corpus(125, 5);
  EmotionTrainOptions opt;
  opt.seed = 4;

  SUBCASE("underrepresented class") {
    std::vector<LabeledText> few;
    std::size_t angry = 0;
    for (const auto& r : corpus) {
      if (r.label == "angry" && ++angry > 24) continue;
      few.push_back(r);
    }
    CHECK_THROWS_AS(train_emotion(few, encoder(), lexicons(), opt), ClassUnderrepresented);
  }
  SUBCASE("zero learning rate and frozen encoder") {
    const auto before = nn::parameter_hash(encoder().stack());
    opt.learning_rate = 0.0;
    opt.epochs = 2;
    const auto r = train_emotion(corpus, encoder(), lexicons(), opt);
    CHECK(r.model == EmotionModel::create(encoder().dim(), opt.seed));
    CHECK(nn::parameter_hash(encoder().stack()) == before);
  }
  SUBCASE("learns the synthetic classes") {
    const auto r = train_emotion(corpus, encoder(), lexicons(), opt);
    CHECK(r.train_size == 400);
    CHECK(r.heldout_size == 100);
    CHECK(r.epochs.back().heldout_macro_f1 >= 0.85);
    CHECK(classify_emotion(r.model, encoder(), lexicons(),
                           text::Utterance::from_raw("i am so happy today :)"))
              .label == EmotionLabel::happy);
    const auto ambiguous = classify_emotion(r.model, encoder(), lexicons(),
                                            text::Utterance::from_raw("Why don't you ever text me!"));
    CHECK((ambiguous.label == EmotionLabel::sad || ambiguous.label == EmotionLabel::angry));

    const auto again = train_emotion(corpus, encoder(), lexicons(), opt);
    CHECK(again.model == r.model);

    const auto path = std::filesystem::temp_directory_path() / "chatir_emotion_test.ckpt";
    r.model.save(path);
    CHECK(EmotionModel::load(path) == r.model);
    std::filesystem::remove(path);
  }
}
