#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "chatir/errors.hpp"
#include "chatir/eval.hpp"
#include "chatir/service.hpp"
#include "chatir/synth.hpp"
#include "json.hpp"

namespace chatir::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_report(const fs::path& path, const std::vector<json>& rows) {
  auto out = open_out(path);
  for (const auto& r : rows) out << r.dump() << '\n';
}

struct Io {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

// ---- index -----------------------------------------------------------------

struct IndexArgs {
  std::string corpus;
  std::string out;
};

void index_build(const IndexArgs& a, Io& io) {
  const auto corpus = IndexedCorpus::build(load_pair_corpus(a.corpus));
  fs::create_directories(a.out);
  corpus.save(fs::path(a.out) / kIndexFile);
  io.out << json{{"pairs", corpus.index.doc_count()}, {"terms", corpus.index.term_count()},
                 {"index", (fs::path(a.out) / kIndexFile).string()}}
                .dump()
         << '\n';
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string models;  // where upstream models are read from; defaults to out
  std::string lexicons = "data/lexicons";
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::uint64_t seed = 1;

  fs::path models_dir() const { return models.empty() ? fs::path(out) : fs::path(models); }
};

void train_semantic_cmd(const TrainArgs& a, Io& io) {
  const auto pairs = load_pair_corpus(a.corpus);
  SemanticTrainOptions opt;
  if (a.epochs) opt.epochs = *a.epochs;
  if (a.lr) opt.learning_rate = *a.lr;
  opt.seed = a.seed;
  const auto r = train_semantic(pairs, opt);
  fs::create_directories(a.out);
  r.encoder.save(fs::path(a.out) / kSemanticFile);
  std::vector<json> rows;
  for (const auto& e : r.report.epochs) {
    rows.push_back({{"model", "semantic"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
  }
  write_report(fs::path(a.out) / "semantic_report.jsonl", rows);
  io.out << json{{"model", "semantic"}, {"epochs", rows.size()},
                 {"final_loss", rows.empty() ? json(nullptr) : rows.back()["mean_loss"]}}
                .dump()
         << '\n';
}

void train_ranker_cmd(const TrainArgs& a, Io& io) {
  const auto corpus = IndexedCorpus::build(load_pair_corpus(a.corpus));
  const auto encoder = CdssmEncoder::load(a.models_dir() / kSemanticFile);
  RankerTrainOptions opt;
  if (a.epochs) opt.epochs = *a.epochs;
  if (a.lr) opt.learning_rate = *a.lr;
  opt.seed = a.seed;
  const auto r = train_ranker(corpus.pairs, encoder, corpus.index, opt);
  fs::create_directories(a.out);
  r.model.save(fs::path(a.out) / kRankerFile);
  std::vector<json> rows;
  for (const auto& e : r.epochs) {
    rows.push_back({{"model", "ranker"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss},
                    {"pairwise_accuracy", e.pairwise_accuracy}});
  }
  write_report(fs::path(a.out) / "ranker_report.jsonl", rows);
  io.out << json{{"model", "ranker"}, {"weights", r.model.weights()}}.dump() << '\n';
}

void train_emotion_cmd(const TrainArgs& a, Io& io) {
  const auto rows_in = load_labeled_corpus(a.corpus);
  const auto encoder = CdssmEncoder::load(a.models_dir() / kSemanticFile);
  const auto lexicons = Lexicons::load(a.lexicons);
  EmotionTrainOptions opt;
  if (a.epochs) opt.epochs = *a.epochs;
  if (a.lr) opt.learning_rate = *a.lr;
  opt.seed = a.seed;
  const auto r = train_emotion(rows_in, encoder, lexicons, opt);
  fs::create_directories(a.out);
  r.model.save(fs::path(a.out) / kEmotionFile);
  std::vector<json> rows;
  for (const auto& e : r.epochs) {
    rows.push_back({{"model", "emotion"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss},
                    {"heldout_macro_f1", e.heldout_macro_f1}});
  }
  write_report(fs::path(a.out) / "emotion_report.jsonl", rows);
  io.out << json{{"model", "emotion"}, {"train_size", r.train_size}, {"heldout_size", r.heldout_size},
                 {"heldout_macro_f1", r.epochs.empty() ? 0.0 : r.epochs.back().heldout_macro_f1}}
                .dump()
         << '\n';
}

void train_safety_cmd(const TrainArgs& a, Io& io) {
  const auto rows_in = load_labeled_corpus(a.corpus);
  SafetyTrainOptions opt;
  if (a.epochs) opt.epochs = *a.epochs;
  if (a.lr) opt.learning_rate = *a.lr;
  opt.seed = a.seed;
  const auto r = train_safety(rows_in, opt);
  fs::create_directories(a.out);
  r.classifier.save(fs::path(a.out) / kSafetyFile);
  std::vector<json> rows;
  for (const auto& e : r.epochs) {
    rows.push_back({{"model", "safety"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss},
                    {"train_accuracy", e.train_accuracy}});
  }
  write_report(fs::path(a.out) / "safety_report.jsonl", rows);
  io.out << json{{"model", "safety"},
                 {"train_accuracy", r.epochs.empty() ? 0.0 : r.epochs.back().train_accuracy}}
                .dump()
         << '\n';
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string corpus;
  std::string models;
  std::string lexicons = "data/lexicons";
  std::size_t distractors = 99;
  std::uint64_t seed = 1;
  double threshold = kDefaultOffensiveThreshold;
};

void eval_retrieval_cmd(const EvalArgs& a, Io& io) {
  const auto pairs = load_pair_corpus(a.corpus);
  const auto encoder = CdssmEncoder::load(fs::path(a.models) / kSemanticFile);
  const auto ranker = RankerModel::load(fs::path(a.models) / kRankerFile);
  io.out << evaluate_retrieval(pairs, encoder, ranker, {a.distractors, a.seed}).to_json().dump() << '\n';
}

void eval_emotion_cmd(const EvalArgs& a, Io& io) {
  const auto rows = load_labeled_corpus(a.corpus);
  const auto encoder = CdssmEncoder::load(fs::path(a.models) / kSemanticFile);
  const auto model = EmotionModel::load(fs::path(a.models) / kEmotionFile);
  io.out << evaluate_emotion(rows, model, encoder, Lexicons::load(a.lexicons)).to_json().dump() << '\n';
}

void eval_safety_cmd(const EvalArgs& a, Io& io) {
  const auto rows = load_labeled_corpus(a.corpus);
  const auto clf = OffensiveClassifier::load(fs::path(a.models) / kSafetyFile);
  io.out << evaluate_safety(rows, clf, a.threshold).to_json().dump() << '\n';
}

// ---- serve / chat ----------------------------------------------------------

std::atomic<HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (HttpServer* s = g_server.load()) s->stop();
}

void serve_cmd(const std::string& config_path, Io& io) {
  const auto config = ServiceConfig::load(config_path);
  auto engine = std::make_shared<const Engine>(load_engine_models(config), config.dialogue);
  ChatService service(config, engine);
  const std::size_t restored = service.restore_from_log();
  HttpServer server(service);
  const int port = server.bind(config.host, config.port);
  io.err << "serving on http://" << config.host << ":" << port << " (index " << engine->index_size()
         << " pairs, " << restored << " sessions restored)\n";
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
}

void chat_cmd(const std::string& config_path, Io& io) {
  const auto config = ServiceConfig::load(config_path);
  auto engine = std::make_shared<const Engine>(load_engine_models(config), config.dialogue);
  Dialogue dialogue(engine, SessionOptions{config.session_ttl, std::nullopt});
  const std::string session = dialogue.create_session();
  io.err << "type a message; /image sends an attachment, /quit exits\n";
  std::string line;
  while (io.out << "> " << std::flush, std::getline(io.in, line)) {
    if (line == "/quit") break;
    const bool attachment = line == "/image";
    if (!attachment && text::normalize_text(line).empty()) continue;
    const auto d = dialogue.respond(session, attachment ? "" : line, attachment);
    io.out << d.response << "  [" << to_string(d.source);
    if (d.emotion) io.out << ", " << to_string(d.emotion->label);
    io.out << "]\n";
  }
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 500;
  std::uint64_t seed = 1;
  double context_rate = 0.5;
  std::string terms = "data/safety/offensive_terms.txt";
};

void synth_dialogue_cmd(const SynthArgs& a, Io&) {
  auto out = open_out(a.out);
  write_pair_corpus(out, synth::dialogue_corpus({a.count, a.context_rate, a.seed}));
}

void synth_emotion_cmd(const SynthArgs& a, Io&) {
  auto out = open_out(a.out);
  write_labeled_corpus(out, synth::emotion_corpus(a.count, a.seed), false);
}

void synth_safety_cmd(const SynthArgs& a, Io&) {
  auto out = open_out(a.out);
  write_labeled_corpus(out, synth::safety_corpus(load_term_list(a.terms), a.count, a.seed), true);
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  Io io{in, out, err};
  CLI::App app{"chatir: retrieval-based chat engine"};
  app.name("chatir");
  app.require_subcommand(1);

  std::function<void()> action;
  auto bind = [&](CLI::App* cmd, auto fn) { cmd->callback([&action, fn] { action = fn; }); };

  // index
  IndexArgs ia;
  auto* index = app.add_subcommand("index", "Build the inverted index");
  index->require_subcommand(1);
  auto* index_build_cmd = index->add_subcommand("build", "Index a pair corpus");
  index_build_cmd->add_option("--corpus", ia.corpus, "Pair corpus (JSON lines)")->required();
  index_build_cmd->add_option("--out", ia.out, "Output directory")->required();
  bind(index_build_cmd, [&] { index_build(ia, io); });

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  auto add_train = [&](const char* name, const char* desc, void (*fn)(const TrainArgs&, Io&),
                       bool upstream, bool lexicons) {
    auto* c = train->add_subcommand(name, desc);
    c->add_option("--corpus", ta.corpus, "Training corpus")->required();
    c->add_option("--out", ta.out, "Output directory")->required();
    c->add_option("--epochs", ta.epochs, "Training epochs");
    c->add_option("--lr", ta.lr, "Learning rate")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", ta.seed, "Random seed");
    if (upstream) c->add_option("--models", ta.models, "Directory with the semantic encoder (default: --out)");
    if (lexicons) c->add_option("--lexicons", ta.lexicons, "Lexicon directory");
    bind(c, [&, fn] { fn(ta, io); });
  };
  add_train("semantic", "Convolutional semantic encoder", train_semantic_cmd, false, false);
  add_train("ranker", "Pairwise logistic ranker", train_ranker_cmd, true, false);
  add_train("emotion", "Emotion classifier", train_emotion_cmd, true, true);
  add_train("safety", "Offensive-language classifier", train_safety_cmd, false, false);

  // eval
  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate trained models");
  eval->require_subcommand(1);
  auto add_eval = [&](const char* name, const char* desc, void (*fn)(const EvalArgs&, Io&)) {
    auto* c = eval->add_subcommand(name, desc);
    c->add_option("--corpus", ea.corpus, "Evaluation corpus")->required();
    c->add_option("--models", ea.models, "Model directory")->required();
    bind(c, [&, fn] { fn(ea, io); });
    return c;
  };
  auto* er = add_eval("retrieval", "recall@k and MRR against sampled distractors", eval_retrieval_cmd);
  er->add_option("--distractors", ea.distractors, "Distractors per query");
  er->add_option("--seed", ea.seed, "Sampling seed");
  auto* ee = add_eval("emotion", "Macro-F1", eval_emotion_cmd);
  ee->add_option("--lexicons", ea.lexicons, "Lexicon directory");
  auto* es = add_eval("safety", "Precision and recall", eval_safety_cmd);
  es->add_option("--threshold", ea.threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));

  // serve / chat
  std::string config_path;
  auto* serve = app.add_subcommand("serve", "Run the HTTP chat service");
  serve->add_option("--config", config_path, "Service config (JSON)")->required();
  bind(serve, [&] { serve_cmd(config_path, io); });
  auto* chat = app.add_subcommand("chat", "Interactive terminal chat");
  chat->add_option("--config", config_path, "Service config (JSON)")->required();
  bind(chat, [&] { chat_cmd(config_path, io); });

  // synth
  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic corpora");
  synth_cmd->require_subcommand(1);
  auto add_synth = [&](const char* name, const char* desc, const char* count_help,
                       void (*fn)(const SynthArgs&, Io&)) {
    auto* c = synth_cmd->add_subcommand(name, desc);
    c->add_option("--out", sa.out, "Output file")->required();
    c->add_option("--count", sa.count, count_help);
    c->add_option("--seed", sa.seed, "Random seed");
    bind(c, [&, fn] { fn(sa, io); });
    return c;
  };
  add_synth("dialogue", "Templated message/response pairs", "Number of pairs", synth_dialogue_cmd)
      ->add_option("--context-rate", sa.context_rate, "Share of pairs with context")
      ->check(CLI::Range(0.0, 1.0));
  add_synth("emotion", "Labeled emotion rows", "Rows per class", synth_emotion_cmd);
  add_synth("safety", "Labeled offensive/clean rows", "Rows per class", synth_safety_cmd)
      ->add_option("--terms", sa.terms, "Offensive seed terms");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    action();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace chatir::cli
