#pragma once

// Small dense-tensor toolkit: the layers needed by the semantic encoder, the
// emotion head and the offensive-language classifier, exact backpropagation,
// SGD, checkpoints and a finite-difference gradient checker.
//
// Parameters are stored as 32-bit floats. Activations and gradients are
// computed in double precision.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "chatir/rng.hpp"
#include "chatir/text.hpp"

namespace chatir::nn {

template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t size() const { return data.size(); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool operator==(const Matrix&) const = default;
};

using Tensor2 = Matrix<float>;
using Activations = Matrix<double>;

inline constexpr double kGradClipNorm = 5.0;

enum class Activation : std::uint8_t { tanh, identity };

// Sparse trigram counts per time step -> dense rows. Input layer only.
struct HashProjection {
  Tensor2 weight;  // dim_in x dim_out
};

// Centered window of `window` steps, zero-padded at both ends; output length
// equals input length.
struct ConvOverTime {
  std::size_t window = 3;
  Activation act = Activation::tanh;
  Tensor2 weight;  // (window * d_in) x d_out, block j holds offset j - (window-1)/2
  Tensor2 bias;    // 1 x d_out
};

struct MaxPoolOverTime {};
struct MeanPoolOverTime {};
struct L2Normalize {};

// Row-wise affine map followed by an activation.
struct Dense {
  Activation act = Activation::tanh;
  Tensor2 weight;  // d_in x d_out
  Tensor2 bias;    // 1 x d_out
};

// Row-wise linear map without bias.
struct Linear {
  Tensor2 weight;  // d_in x d_out
};

// Two gated recurrent units (update + reset gate), one per direction, whose
// states are concatenated per step: [forward_t | backward_t].
// Gate blocks inside each 3h-wide tensor are ordered [update | reset | candidate].
struct BiRecurrentGated {
  Tensor2 fw_input;      // d_in x 3h
  Tensor2 fw_recurrent;  // h x 3h
  Tensor2 fw_bias;       // 1 x 3h
  Tensor2 bw_input;
  Tensor2 bw_recurrent;
  Tensor2 bw_bias;

  std::size_t hidden() const { return fw_recurrent.rows; }
};

struct SoftmaxHead {
  Tensor2 weight;  // d_in x classes
  Tensor2 bias;    // 1 x classes
};

struct LogisticHead {
  Tensor2 weight;  // d_in x 1
  Tensor2 bias;    // 1 x 1
};

using Layer = std::variant<HashProjection, ConvOverTime, MaxPoolOverTime, Dense, Linear,
                           L2Normalize, BiRecurrentGated, MeanPoolOverTime, SoftmaxHead,
                           LogisticHead>;

std::string layer_kind(const Layer& layer);
std::vector<Tensor2*> layer_parameters(Layer& layer);
std::vector<const Tensor2*> layer_parameters(const Layer& layer);

// Glorot-uniform weights, zero biases.
HashProjection make_hash_projection(std::size_t dim_in, std::size_t dim_out, Rng& rng);
ConvOverTime make_conv(std::size_t window, std::size_t d_in, std::size_t d_out, Activation act,
                       Rng& rng);
Dense make_dense(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng);
Linear make_linear(std::size_t d_in, std::size_t d_out, Rng& rng);
BiRecurrentGated make_bi_recurrent(std::size_t d_in, std::size_t hidden, Rng& rng);
SoftmaxHead make_softmax_head(std::size_t d_in, std::size_t classes, Rng& rng);
LogisticHead make_logistic_head(std::size_t d_in, Rng& rng);

class LayerStack {
 public:
  std::vector<Layer> layers;
  std::uint64_t seed = 0;
  std::string tag;  // free-form model name recorded in checkpoints

  // Throws ShapeMismatch when adjacent dimensions disagree or a
  // HashProjection appears anywhere but first.
  void validate() const;

  std::vector<Tensor2*> parameters();
  std::vector<const Tensor2*> parameters() const;
  std::size_t parameter_count() const;
  bool sparse_input() const;

  bool operator==(const LayerStack& other) const;
};

struct SparseSequence {
  std::vector<text::TrigramVector> steps;
};

using StackInput = std::variant<SparseSequence, Activations>;

struct LayerCache {
  Activations out;
  std::vector<double> aux;
  std::vector<std::size_t> index;
};

struct ForwardCache {
  StackInput input;
  std::vector<LayerCache> layers;

  const Activations& output() const { return layers.back().out; }
};

// Deterministic forward pass. When cache is given it receives every
// intermediate needed by backward. Throws ShapeMismatch.
Activations forward(const LayerStack& stack, const StackInput& input,
                    ForwardCache* cache = nullptr);

// Per-parameter gradients, congruent with LayerStack::parameters().
class Gradients {
 public:
  Gradients() = default;
  static Gradients zeros_like(const LayerStack& stack);

  std::vector<Activations>& tensors() { return tensors_; }
  const std::vector<Activations>& tensors() const { return tensors_; }

  void set_zero();
  void add(const Gradients& other);
  void scale(double factor);
  double l2_norm() const;
  bool all_finite() const;
  std::size_t parameter_count() const;
  bool congruent_with(const LayerStack& stack) const;

 private:
  std::vector<Activations> tensors_;
};

// Adds dL/dtheta for the given upstream gradient (dL/doutput) to `into`.
// When input_grad is non-null and the input is dense it receives dL/dinput.
// Throws StaleCache when the cache does not match the stack.
void accumulate_backward(const LayerStack& stack, const ForwardCache& cache,
                         const Activations& upstream, Gradients& into,
                         Activations* input_grad = nullptr);

Gradients backward(const LayerStack& stack, const ForwardCache& cache,
                   const Activations& upstream);

// theta <- theta - lr * clip(g). Gradients whose global L2 norm exceeds
// clip_norm are rescaled to clip_norm first. Throws NonFiniteGradient (and
// leaves the stack untouched) if any gradient entry is not finite.
void sgd_step(LayerStack& stack, const Gradients& grads, double lr,
              double clip_norm = kGradClipNorm);

// Loss over the whole stack; when grads is non-null the analytic gradient is
// accumulated into it.
using Objective = std::function<double(const LayerStack&, Gradients*)>;

// Loss as a function of the stack output; writes dL/doutput when grad is
// non-null.
using OutputLoss = std::function<double(const Activations& output, Activations* grad)>;

// Central differences against the analytic gradient for every parameter.
// Returns max_i |a - n| / max(|a|, |n|, 1e-8). The difference quotient uses
// the actually stored (float-rounded) perturbed values as its denominator.
double gradient_check(LayerStack& stack, const Objective& objective, double h);
double gradient_check(LayerStack& stack, const OutputLoss& loss, const StackInput& input,
                      double h);

// --- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(std::ostream& out, const LayerStack& stack);
LayerStack read_checkpoint(std::istream& in);
void save_checkpoint(const LayerStack& stack, const std::filesystem::path& path);
LayerStack load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the little-endian parameter bytes.
std::uint64_t parameter_hash(const LayerStack& stack);

}  // namespace chatir::nn
