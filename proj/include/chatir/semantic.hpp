#pragma once

// Convolutional latent semantic encoder. Each token becomes a hashed
// letter-trigram count vector; a window-3 convolution, max-pooling over time
// and a dense layer produce a unit-length semantic vector.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chatir/corpus.hpp"
#include "chatir/nn.hpp"
#include "chatir/parallel.hpp"
#include "chatir/text.hpp"

namespace chatir {

inline constexpr std::string_view kContextSeparator = "[sep]";

struct EncoderDims {
  std::uint32_t trigram_dim = text::kTrigramDim;
  std::size_t conv_dim = 96;
  std::size_t window = 3;
  std::size_t semantic_dim = 128;
};

using SemanticVector = std::vector<double>;

// One sparse step per token. An empty token list yields a single all-zero
// step so that every input has a defined encoding.
nn::SparseSequence encoder_input(std::span<const std::string> tokens, std::uint32_t dim);

// Context tokens (oldest first), the separator, then the message tokens. No
// separator when there is no context.
std::vector<std::string> context_mode_tokens(std::span<const text::Utterance> context,
                                             const text::Utterance& message);

class CdssmEncoder {
 public:
  static CdssmEncoder create(const EncoderDims& dims, std::uint64_t seed);
  // Throws ShapeMismatch unless the stack has the encoder layout.
  explicit CdssmEncoder(nn::LayerStack stack);

  SemanticVector encode(std::span<const std::string> tokens) const;
  SemanticVector encode_message(const text::Utterance& message) const;
  SemanticVector encode_context(std::span<const text::Utterance> context,
                                const text::Utterance& message) const;
  std::vector<SemanticVector> encode_batch(std::span<const std::vector<std::string>> inputs,
                                           Exec exec) const;

  std::uint32_t trigram_dim() const;
  std::size_t dim() const;

  const nn::LayerStack& stack() const { return stack_; }
  nn::LayerStack& stack() { return stack_; }

  void save(const std::filesystem::path& path) const;
  static CdssmEncoder load(const std::filesystem::path& path);

  bool operator==(const CdssmEncoder&) const = default;

 private:
  nn::LayerStack stack_;
};

// Cosine of two encoder outputs (both unit length, so a dot product).
double similarity(const SemanticVector& a, const SemanticVector& b);

struct TrainExample {
  std::vector<std::string> query;
  std::vector<std::string> positive;
  std::vector<std::vector<std::string>> negatives;
};

struct TrainBatch {
  std::vector<TrainExample> examples;
};

// Sum over examples of -log softmax_0(gamma * [cos(q, r+), cos(q, r-_1), ...]).
// When grads is non-null the parameter gradient is accumulated into it. The
// parallel path splits examples into kReductionChunks fixed chunks and sums
// the chunk results in order.
double training_loss(const CdssmEncoder& encoder, const TrainBatch& batch, double gamma,
                     nn::Gradients* grads = nullptr, Exec exec = Exec::serial);

struct EpochStat {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainReport {
  std::string model;
  std::vector<EpochStat> epochs;

  // One JSON object per epoch.
  void write_jsonl(std::ostream& out) const;
};

struct SemanticTrainOptions {
  EncoderDims dims;
  std::size_t epochs = 20;
  double learning_rate = 0.1;
  std::size_t negatives = 4;
  double gamma = 10.0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  Exec exec = Exec::parallel;
};

inline constexpr std::size_t kMinSemanticPairs = 50;

// Samples one example per pair per epoch: the query is the message or, for
// pairs with context, the context-mode input with probability 1/2. Negatives
// are responses of other pairs drawn uniformly. Throws CorpusTooSmall.
struct SemanticTrainResult {
  CdssmEncoder encoder;
  TrainReport report;
};
SemanticTrainResult train_semantic(std::span<const PairRecord> corpus,
                                   const SemanticTrainOptions& options);

// Runs further epochs on an existing encoder.
TrainReport continue_semantic(CdssmEncoder& encoder, std::span<const PairRecord> corpus,
                              const SemanticTrainOptions& options);

}  // namespace chatir
