#include "chatir/synth.hpp"

#include <array>
#include <cctype>

namespace chatir::synth {
namespace {

struct Topic {
  std::vector<std::string> entities;
  std::vector<std::string> messages;   // "{e}" marks the entity slot
  std::vector<std::string> responses;
  std::vector<std::string> openers;    // context turns
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> kTopics = {
      {{"pizza", "sushi", "pasta", "tacos", "ramen", "burgers", "curry", "noodles", "pancakes",
        "waffles", "salad", "dumplings", "biryani", "falafel", "kebab", "lasagna", "burritos",
        "croissants", "bagels", "cheesecake", "brownies", "donuts", "omelettes", "risotto",
        "paella"},
       {"have you ever tried {e}", "i am craving {e} right now", "what do you think about {e}",
        "i just had {e} for dinner", "do you like eating {e}"},
       {"{e} is one of my favourite foods", "nothing beats fresh {e} honestly",
        "i could eat {e} every single day", "{e} sounds delicious, enjoy", "mmm {e} is so tasty"},
       {"i am so hungry", "what should i eat tonight", "dinner time finally"}},
      {{"football", "cricket", "tennis", "basketball", "baseball", "hockey", "rugby", "golf",
        "badminton", "volleyball", "swimming", "cycling", "boxing", "skiing", "surfing",
        "skating", "rowing", "fencing", "archery", "wrestling", "karate", "judo", "climbing",
        "sailing", "marathons"},
       {"do you watch {e}", "i played {e} this weekend", "who is the best at {e}",
        "is {e} a fun sport", "i want to get better at {e}"},
       {"{e} is such an exciting sport", "i never miss a good {e} match",
        "practice {e} every day and you will improve", "{e} keeps you really fit",
        "watching {e} with friends is the best"},
       {"did you see the game last night", "my team lost again", "i need more exercise"}},
      {{"guitar", "piano", "violin", "drums", "jazz", "rock", "hiphop", "reggae", "opera", "blues",
        "techno", "metal", "country", "flute", "cello", "saxophone", "trumpet", "ukulele", "harp",
        "banjo", "kpop", "disco", "punk", "folk", "salsa"},
       {"do you listen to {e}", "i am learning {e}", "can you recommend some {e}",
        "{e} always makes me dance", "what is your take on {e}"},
       {"{e} has such a great sound", "i have {e} on repeat all week",
        "keep practising {e} and it will click", "{e} concerts are amazing live",
        "there is so much good {e} out there"},
       {"i love music", "put on some songs", "my headphones broke"}},
      {{"horror", "comedies", "thrillers", "westerns", "cartoons", "documentaries", "musicals",
        "romance", "anime", "superheroes", "sequels", "remakes", "whodunits", "dramas", "fantasy",
        "scifi", "noir", "biopics", "classics", "blockbusters", "indies", "zombies", "vampires",
        "pirates", "spies"},
       {"do you enjoy {e}", "i watched some {e} last night", "recommend me good {e}",
        "are {e} worth watching", "i am in the mood for {e}"},
       {"{e} are perfect for a movie night", "grab popcorn and watch {e}",
        "i could binge {e} all weekend", "the best {e} are the old ones",
        "{e} never get old for me"},
       {"movie night tonight", "the cinema was packed", "what should i watch"}},
      {{"paris", "london", "tokyo", "rome", "berlin", "sydney", "delhi", "mumbai", "cairo",
        "lisbon", "dubai", "bangkok", "seoul", "madrid", "vienna", "prague", "athens", "istanbul",
        "toronto", "chicago", "boston", "goa", "bali", "iceland", "peru"},
       {"have you been to {e}", "i am flying to {e} next week", "is {e} nice this time of year",
        "what should i see in {e}", "i miss living in {e}"},
       {"{e} is a beautiful place to visit", "take lots of photos in {e}",
        "the food in {e} is incredible", "{e} is lovely in spring", "i dream of going to {e}"},
       {"i need a vacation", "packing my bags", "the airport is so crowded"}},
      {{"puppies", "kittens", "hamsters", "parrots", "rabbits", "turtles", "goldfish", "ferrets",
        "ponies", "lizards", "snakes", "guineapigs", "canaries", "chinchillas", "hedgehogs",
        "geckos", "iguanas", "budgies", "beagles", "poodles", "labradors", "huskies", "corgis",
        "tabbies", "dalmatians"},
       {"i just adopted two {e}", "are {e} easy to care for", "do you like {e}",
        "my {e} woke me up early", "i want to get some {e}"},
       {"{e} make wonderful companions", "give your {e} a cuddle from me",
        "{e} need lots of love and care", "awww {e} are adorable", "i would love to meet your {e}"},
       {"my pet is so cute", "i went to the animal shelter", "the vet visit went well"}},
      {{"rain", "snow", "sunshine", "storms", "fog", "wind", "thunder", "lightning", "hail",
        "drizzle", "heatwaves", "monsoon", "frost", "clouds", "rainbows", "hurricanes",
        "tornadoes", "blizzards", "humidity", "breeze", "sleet", "sunsets", "sunrises",
        "droughts", "floods"},
       {"there is so much {e} today", "do you like {e}", "the forecast says {e} tomorrow",
        "i got caught in the {e}", "i cannot stand {e}"},
       {"{e} can change your whole mood", "stay safe out there in the {e}",
        "i kind of enjoy {e} honestly", "{e} makes a cosy day indoors",
        "grab a jacket for the {e}"},
       {"looking out the window", "the sky looks strange", "i checked the forecast"}},
      {{"meetings", "deadlines", "emails", "reports", "interviews", "promotions", "salary",
        "overtime", "coworkers", "bosses", "presentations", "spreadsheets", "projects", "clients",
        "budgets", "contracts", "invoices", "internships", "commutes", "offices", "shifts",
        "payroll", "audits", "startups", "conferences"},
       {"i have too many {e} this week", "how do i handle {e}", "my {e} are stressing me",
        "any tips for {e}", "i spent all day on {e}"},
       {"{e} can be exhausting, take breaks", "one step at a time with {e}",
        "you will crush those {e}", "make a list for your {e}", "{e} get easier with practice"},
       {"long day at the office", "work is busy lately", "my manager called"}},
      {{"chess", "minecraft", "fortnite", "tetris", "poker", "sudoku", "monopoly", "scrabble",
        "zelda", "mario", "pokemon", "pacman", "halo", "fifa", "roblox", "checkers", "crosswords",
        "bingo", "solitaire", "dominoes", "uno", "jenga", "pictionary", "charades", "battleship"},
       {"do you play {e}", "i stayed up late playing {e}", "i keep losing at {e}",
        "teach me some {e} tricks", "is {e} still popular"},
       {"{e} is so much fun with friends", "you will win at {e} next time",
        "i could play {e} for hours", "{e} is a classic for a reason",
        "the trick to {e} is patience"},
       {"game night with friends", "i am bored", "just bought a new console"}},
      {{"novels", "poetry", "comics", "biographies", "memoirs", "fables", "myths", "sagas",
        "essays", "manga", "dickens", "tolkien", "austen", "orwell", "rowling", "shakespeare",
        "tolstoy", "hemingway", "kafka", "twain", "dostoevsky", "chaucer", "homer", "atwood",
        "murakami"},
       {"have you read {e}", "i am reading {e} again", "what do you think of {e}",
        "recommend me some {e}", "i love reading {e} at night"},
       {"{e} is a wonderful read", "curl up with {e} and some tea",
        "i never get tired of {e}", "{e} will take you to another world",
        "everyone should read {e} once"},
       {"the library was quiet", "i finished my book", "reading before bed"}},
  };
  return kTopics;
}

std::string fill(const std::string& tmpl, const std::string& entity) {
  std::string out = tmpl;
  const auto pos = out.find("{e}");
  if (pos != std::string::npos) out.replace(pos, 3, entity);
  return out;
}

}  // namespace

std::vector<DialogueSample> dialogue_samples(const DialogueOptions& options) {
  Rng rng(options.seed);
  const auto& all = topics();
  std::vector<DialogueSample> out;
  out.reserve(options.pairs);
  for (std::size_t i = 0; i < options.pairs; ++i) {
    DialogueSample s;
    s.topic = rng.below(all.size());
    const Topic& t = all[s.topic];
    s.entity = rng.pick(t.entities);
    std::vector<std::string> context;
    if (rng.chance(options.context_rate)) {
      const std::size_t n = 1 + rng.below(2);
      for (std::size_t k = 0; k < n; ++k) context.push_back(rng.pick(t.openers));
    }
    s.pair = make_pair_record(static_cast<std::uint32_t>(i), fill(rng.pick(t.messages), s.entity),
                              context, fill(rng.pick(t.responses), s.entity));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PairRecord> dialogue_corpus(const DialogueOptions& options) {
  std::vector<PairRecord> pairs;
  for (auto& s : dialogue_samples(options)) pairs.push_back(std::move(s.pair));
  return pairs;
}

// ---- emotion ---------------------------------------------------------------

std::vector<LabeledText> emotion_corpus(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  struct ClassTemplates {
    const char* label;
    std::vector<std::string> templates;  // "{w}" = class word
    std::vector<std::string> words;
    std::vector<std::string> endings;
  };
  static const std::vector<ClassTemplates> kClasses = {
      {"happy",
       {"i am so {w} today", "this is {w} news", "feeling {w} right now", "what a {w} day",
        "i feel {w} and grateful", "everything is {w} with my friends"},
       {"happy", "glad", "great", "awesome", "wonderful", "excited", "delighted", "joyful",
        "amazing", "fantastic", "cheerful", "thrilled"},
       {"", " :)", " :d", " haha", " yay"}},
      {"sad",
       {"i feel so {w} today", "why does nobody ever call me, i am {w}",
        "everything feels {w} lately", "i am {w} and alone", "you never text me, i feel {w}",
        "i miss you, i am {w}"},
       {"sad", "lonely", "depressed", "heartbroken", "miserable", "down", "gloomy", "hopeless",
        "unhappy", "hurt", "upset", "blue"},
       {"", " :(", " ...", " sigh"}},
      {"angry",
       {"i am so {w} with you", "this is {w} and unfair", "stop it, i am {w}",
        "why don't you ever listen, i am {w}", "you make me {w}", "i am {w} at everyone"},
       {"angry", "furious", "mad", "annoyed", "irritated", "livid", "outraged", "frustrated",
        "enraged", "fuming", "pissed", "raging"},
       {"!", "!!", "!!!", " >:("}},
      {"others",
       {"what time is the {w}", "i am going to the {w} later", "where is the {w}",
        "tell me about the {w}", "the {w} opens at nine", "can you check the {w}"},
       {"meeting", "train", "store", "library", "bus", "weather", "schedule", "museum",
        "bank", "office", "station", "market"},
       {"", "?", " please", " thanks"}},
  };
  std::vector<LabeledText> rows;
  for (const auto& cls : kClasses) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::string tmpl = rng.pick(cls.templates);
      const auto pos = tmpl.find("{w}");
      tmpl.replace(pos, 3, rng.pick(cls.words));
      rows.push_back({tmpl + rng.pick(cls.endings), cls.label});
    }
  }
  rng.shuffle(rows);
  return rows;
}

// ---- safety ----------------------------------------------------------------

std::string obfuscate(const std::string& term, Rng& rng) {
  static const std::array<std::pair<char, std::vector<char>>, 6> kLeet = {{
      {'o', {'0'}},
      {'i', {'1'}},
      {'e', {'3'}},
      {'a', {'4', '@'}},
      {'s', {'5', '$'}},
      {'t', {'7'}},
  }};
  std::string out;
  bool changed = false;
  for (char c : term) {
    char emitted = c;
    for (const auto& [from, to] : kLeet) {
      if (c == from && rng.chance(0.45)) {
        emitted = rng.pick(to);
        changed = true;
      }
    }
    out.push_back(emitted);
    if (std::isalpha(static_cast<unsigned char>(c)) && rng.chance(0.15)) {
      // Elongate: a run of 3+ is squashed back, a double letter is kept.
      out.append(rng.chance(0.6) ? 2 + rng.below(3) : 1, emitted);
      changed = true;
    }
  }
  if (!changed && !out.empty()) {
    const std::size_t pos = rng.below(out.size());
    out.insert(pos, 3, out[pos]);
  }
  if (rng.chance(0.3)) {
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

namespace {

const std::vector<std::string>& clean_templates() {
  static const std::vector<std::string> kTemplates = {
      "i am going to {x} after {y}",
      "can we talk about {x} later",
      "my friend loves {x} and {y}",
      "what do you think of {x}",
      "the {x} was really nice today",
      "i need help with my {x}",
      "let me tell you about {x}",
      "did you hear about the {x}",
      "we should try {x} this weekend",
      "i forgot my {x} at home",
      "there was a long line at the {x}",
      "how was your {x} yesterday",
  };
  return kTemplates;
}

const std::vector<std::string>& clean_fillers() {
  // Several of these contain offensive-looking substrings on purpose.
  static const std::vector<std::string> kFillers = {
      "class", "classic", "assignment", "assistant", "passport", "glasses", "grass", "bass guitar",
      "shirt", "shift", "shipping", "dickens", "cocktail", "peacock", "hancock", "scrapbook",
      "hello kitty", "shell", "basement", "analysis", "therapist", "butterfly", "buttons",
      "cockpit", "pushing", "skyscraper", "pumpkin", "homework", "breakfast", "concert",
      "football", "the museum", "my sister", "the garden", "coffee", "a new phone", "the beach",
      "mathematics", "cricket", "the weekend", "piano lessons", "sushi", "grandma", "my puppy",
      "the bus", "the library", "dinner", "a movie", "the hike", "swimming", "the bakery",
      "the weather", "my exams", "a picnic", "the bookstore", "a birthday party", "documents",
      "hitchhiking", "title", "shiitake", "cucumber", "crapes", "scunthorpe", "assess",
      "compass", "embassy", "bassoon", "fitness", "witness", "shih tzu", "dashboard"};
  return kFillers;
}

const std::vector<std::string>& offensive_templates() {
  static const std::vector<std::string> kTemplates = {
      "you are a {t}", "shut up you {t}", "{t} off", "what a {t}", "you {t}",
      "such a {t} answer", "go away {t}", "i hate you {t}", "{t}", "this is {t}",
      "you absolute {t}", "stupid {t} bot",
  };
  return kTemplates;
}

std::string fill_slot(std::string tmpl, const std::string& slot, const std::string& value) {
  const auto pos = tmpl.find(slot);
  if (pos != std::string::npos) tmpl.replace(pos, slot.size(), value);
  return tmpl;
}

std::string pseudo_word(Rng& rng) {
  static const std::string kLetters = "abcdefghijklmnopqrstuvwxyz";
  std::string w;
  for (std::size_t n = 2 + rng.below(7); n > 0; --n) w.push_back(kLetters[rng.below(kLetters.size())]);
  return w;
}

}  // namespace

std::string clean_sentence(Rng& rng) {
  static const std::vector<std::string> kFriendly = {
      "star", "genius", "legend", "sweetheart", "champ", "hero", "friend", "classic",
      "class act", "smart cookie", "peach", "gem", "sunshine", "rockstar", "dickens",
      "scunthorpe", "cocktail", "passport", "shiitake", "assistant", "bassist", "pickle",
      "mate", "buddy", "cutie", "doll", "wizard", "treasure", "shell", "dashboard"};
  // Same sentence shapes as the offensive templates, harmless filler.
  static const std::vector<std::string> kShapes = {
      "you are a {t}", "what a {t}", "you {t}", "such a {t} answer", "{t}", "this is {t}",
      "you absolute {t}"};
  if (rng.chance(0.3)) {
    const Topic& t = rng.pick(topics());
    const auto& templates = rng.chance(0.5) ? t.messages : t.responses;
    return fill(rng.pick(templates), rng.pick(t.entities));
  }
  if (rng.chance(0.3)) return fill_slot(rng.pick(kShapes), "{t}", rng.pick(kFriendly));
  if (rng.chance(0.25)) {
    // Unfamiliar words are not offensive by themselves.
    std::string s = rng.pick(rng.chance(0.5) ? kShapes : clean_templates());
    s = fill_slot(s, "{t}", pseudo_word(rng));
    s = fill_slot(s, "{x}", pseudo_word(rng));
    return fill_slot(s, "{y}", pseudo_word(rng));
  }
  std::string s = rng.pick(clean_templates());
  s = fill_slot(s, "{x}", rng.pick(clean_fillers()));
  s = fill_slot(s, "{y}", rng.pick(clean_fillers()));
  return s;
}

std::string offensive_sentence(const std::vector<std::string>& terms, bool obfuscated, Rng& rng) {
  const std::string& term = rng.pick(terms);
  return fill_slot(rng.pick(offensive_templates()), "{t}", obfuscated ? obfuscate(term, rng) : term);
}

std::vector<LabeledText> safety_corpus(const std::vector<std::string>& offensive_terms,
                                       std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledText> rows;
  for (std::size_t i = 0; i < per_class; ++i) {
    rows.push_back({offensive_sentence(offensive_terms, rng.chance(0.7), rng), "1"});
    rows.push_back({clean_sentence(rng), "0"});
  }
  rng.shuffle(rows);
  return rows;
}

}  // namespace chatir::synth
