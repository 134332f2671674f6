#include "chatir/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"

#include "chatir/errors.hpp"
#include "chatir/rng.hpp"

namespace chatir {

nn::SparseSequence encoder_input(std::span<const std::string> tokens, std::uint32_t dim) {
  nn::SparseSequence seq;
  if (tokens.empty()) {
    seq.steps.push_back(text::TrigramVector{dim, {}});
    return seq;
  }
  seq.steps.reserve(tokens.size());
  for (const auto& tok : tokens) seq.steps.push_back(text::token_trigram_vector(tok, dim));
  return seq;
}

std::vector<std::string> context_mode_tokens(std::span<const text::Utterance> context,
                                             const text::Utterance& message) {
  std::vector<std::string> out;
  for (const auto& u : context) out.insert(out.end(), u.tokens.begin(), u.tokens.end());
  if (!out.empty()) out.emplace_back(kContextSeparator);
  out.insert(out.end(), message.tokens.begin(), message.tokens.end());
  return out;
}

CdssmEncoder CdssmEncoder::create(const EncoderDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  nn::LayerStack stack;
  stack.seed = seed;
  stack.tag = "semantic";
  stack.layers.emplace_back(nn::make_hash_projection(dims.trigram_dim, dims.conv_dim, rng));
  stack.layers.emplace_back(
      nn::make_conv(dims.window, dims.conv_dim, dims.conv_dim, nn::Activation::tanh, rng));
  stack.layers.emplace_back(nn::MaxPoolOverTime{});
  stack.layers.emplace_back(
      nn::make_dense(dims.conv_dim, dims.semantic_dim, nn::Activation::tanh, rng));
  stack.layers.emplace_back(nn::L2Normalize{});
  return CdssmEncoder(std::move(stack));
}

CdssmEncoder::CdssmEncoder(nn::LayerStack stack) : stack_(std::move(stack)) {
  stack_.validate();
  const auto& l = stack_.layers;
  const bool ok = l.size() == 5 && std::holds_alternative<nn::HashProjection>(l[0]) &&
                  std::holds_alternative<nn::ConvOverTime>(l[1]) &&
                  std::holds_alternative<nn::MaxPoolOverTime>(l[2]) &&
                  std::holds_alternative<nn::Dense>(l[3]) &&
                  std::holds_alternative<nn::L2Normalize>(l[4]);
  if (!ok) throw ShapeMismatch("semantic encoder: unexpected layer layout");
}

std::uint32_t CdssmEncoder::trigram_dim() const {
  return static_cast<std::uint32_t>(std::get<nn::HashProjection>(stack_.layers[0]).weight.rows);
}

std::size_t CdssmEncoder::dim() const {
  return std::get<nn::Dense>(stack_.layers[3]).weight.cols;
}

SemanticVector CdssmEncoder::encode(std::span<const std::string> tokens) const {
  return nn::forward(stack_, encoder_input(tokens, trigram_dim())).data;
}

SemanticVector CdssmEncoder::encode_message(const text::Utterance& message) const {
  return encode(message.tokens);
}

SemanticVector CdssmEncoder::encode_context(std::span<const text::Utterance> context,
                                            const text::Utterance& message) const {
  return encode(context_mode_tokens(context, message));
}

std::vector<SemanticVector> CdssmEncoder::encode_batch(
    std::span<const std::vector<std::string>> inputs, Exec exec) const {
  std::vector<SemanticVector> out(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = encode(inputs[i]);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = encode(inputs[i]);
  }
  return out;
}

void CdssmEncoder::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(stack_, path);
}

CdssmEncoder CdssmEncoder::load(const std::filesystem::path& path) {
  return CdssmEncoder(nn::load_checkpoint(path));
}

double similarity(const SemanticVector& a, const SemanticVector& b) {
  if (a.size() != b.size()) throw ShapeMismatch("similarity: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

struct Encoded {
  nn::ForwardCache cache;
  const std::vector<double>& vec() const { return cache.output().data; }
};

Encoded encode_cached(const CdssmEncoder& encoder, std::span<const std::string> tokens) {
  Encoded e;
  nn::forward(encoder.stack(), encoder_input(tokens, encoder.trigram_dim()), &e.cache);
  return e;
}

double example_loss(const CdssmEncoder& encoder, const TrainExample& ex, double gamma,
                    nn::Gradients* grads) {
  const Encoded q = encode_cached(encoder, ex.query);
  std::vector<Encoded> docs;
  docs.reserve(1 + ex.negatives.size());
  docs.push_back(encode_cached(encoder, ex.positive));
  for (const auto& neg : ex.negatives) docs.push_back(encode_cached(encoder, neg));

  std::vector<double> logits(docs.size());
  for (std::size_t j = 0; j < docs.size(); ++j) logits[j] = gamma * similarity(q.vec(), docs[j].vec());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double s : logits) z += std::exp(s - mx);
  const double loss = -(logits[0] - mx) + std::log(z);
  if (grads == nullptr) return loss;

  const std::size_t d = q.vec().size();
  nn::Activations dq(1, d, 0.0);
  for (std::size_t j = 0; j < docs.size(); ++j) {
    const double p = std::exp(logits[j] - mx) / z;
    const double coef = gamma * (p - (j == 0 ? 1.0 : 0.0));
    nn::Activations dr(1, d);
    for (std::size_t k = 0; k < d; ++k) {
      dq.data[k] += coef * docs[j].vec()[k];
      dr.data[k] = coef * q.vec()[k];
    }
    nn::accumulate_backward(encoder.stack(), docs[j].cache, dr, *grads);
  }
  nn::accumulate_backward(encoder.stack(), q.cache, dq, *grads);
  return loss;
}

}  // namespace

double training_loss(const CdssmEncoder& encoder, const TrainBatch& batch, double gamma,
                     nn::Gradients* grads, Exec exec) {
  const auto& ex = batch.examples;
  if (exec == Exec::serial) {
    double total = 0.0;
    for (const auto& e : ex) total += example_loss(encoder, e, gamma, grads);
    return total;
  }

  const std::size_t chunks = std::min(kReductionChunks, ex.size());
  std::vector<double> losses(chunks, 0.0);
  std::vector<nn::Gradients> partial(grads != nullptr ? chunks : 0);
#pragma omp parallel for schedule(static, 1)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
    const std::size_t lo = ex.size() * c / chunks;
    const std::size_t hi = ex.size() * (c + 1) / chunks;
    nn::Gradients* g = nullptr;
    if (grads != nullptr) {
      partial[c] = nn::Gradients::zeros_like(encoder.stack());
      g = &partial[c];
    }
    for (std::size_t i = lo; i < hi; ++i) losses[c] += example_loss(encoder, ex[i], gamma, g);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += losses[c];
    if (grads != nullptr) grads->add(partial[c]);
  }
  return total;
}

void TrainReport::write_jsonl(std::ostream& out) const {
  for (const auto& e : epochs) {
    nlohmann::json row = {{"model", model}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    out << row.dump() << '\n';
  }
}

TrainReport continue_semantic(CdssmEncoder& encoder, std::span<const PairRecord> corpus,
                              const SemanticTrainOptions& options) {
  if (corpus.size() < kMinSemanticPairs) {
    throw CorpusTooSmall("semantic training needs at least " + std::to_string(kMinSemanticPairs) +
                         " pairs, got " + std::to_string(corpus.size()));
  }
  if (options.batch_size == 0) throw InvalidConfig("batch_size must be positive");
  Rng rng(options.seed ^ 0x5eed5eed5eedULL);
  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainReport report;
  report.model = "semantic";
  auto grads = nn::Gradients::zeros_like(encoder.stack());
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      TrainBatch batch;
      for (std::size_t b = start; b < end; ++b) {
        const PairRecord& p = corpus[order[b]];
        TrainExample ex;
        if (!p.context.empty() && rng.chance(0.5)) {
          ex.query = context_mode_tokens(p.context, p.message);
        } else {
          ex.query = p.message.tokens;
        }
        ex.positive = p.response.tokens;
        for (std::size_t k = 0; k < options.negatives; ++k) {
          std::size_t j = rng.below(n - 1);
          if (j >= order[b]) ++j;
          ex.negatives.push_back(corpus[j].response.tokens);
        }
        batch.examples.push_back(std::move(ex));
      }
      grads.set_zero();
      epoch_loss += training_loss(encoder, batch, options.gamma, &grads, options.exec);
      grads.scale(1.0 / static_cast<double>(batch.examples.size()));
      nn::sgd_step(encoder.stack(), grads, options.learning_rate);
    }
    report.epochs.push_back({epoch, epoch_loss / static_cast<double>(n)});
  }
  return report;
}

SemanticTrainResult train_semantic(std::span<const PairRecord> corpus,
                                   const SemanticTrainOptions& options) {
  SemanticTrainResult result{CdssmEncoder::create(options.dims, options.seed), {}};
  result.report = continue_semantic(result.encoder, corpus, options);
  return result;
}

}  // namespace chatir
