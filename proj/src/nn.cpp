#include "chatir/nn.hpp"

#include <cmath>
#include <sstream>

#include "chatir/errors.hpp"

namespace chatir::nn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double activate(Activation act, double v) { return act == Activation::tanh ? std::tanh(v) : v; }

// Derivative expressed through the activation's output.
double activation_slope(Activation act, double out) {
  return act == Activation::tanh ? 1.0 - out * out : 1.0;
}

const char* activation_name(Activation act) {
  return act == Activation::tanh ? "tanh" : "identity";
}

Tensor2 glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
               Rng& rng) {
  Tensor2 t(rows, cols);
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(-r, r));
  return t;
}

// Input/output widths; 0 means "passes its input width through".
struct Dims {
  std::size_t in = 0;
  std::size_t out = 0;
};

Dims layer_dims(const Layer& layer) {
  return std::visit(
      overloaded{
          [](const HashProjection& l) { return Dims{l.weight.rows, l.weight.cols}; },
          [](const ConvOverTime& l) {
            return Dims{l.window == 0 ? 0 : l.weight.rows / l.window, l.weight.cols};
          },
          [](const Dense& l) { return Dims{l.weight.rows, l.weight.cols}; },
          [](const Linear& l) { return Dims{l.weight.rows, l.weight.cols}; },
          [](const BiRecurrentGated& l) { return Dims{l.fw_input.rows, 2 * l.hidden()}; },
          [](const SoftmaxHead& l) { return Dims{l.weight.rows, l.weight.cols}; },
          [](const LogisticHead& l) { return Dims{l.weight.rows, 1}; },
          [](const auto&) { return Dims{}; },
      },
      layer);
}

double dot_row(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// out[t] = x[t] * W (+ bias). W is float, accumulation in double.
void affine_rows(const Activations& x, const Tensor2& w, const Tensor2* bias, Activations& out) {
  out = Activations(x.rows, w.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    double* o = out.data.data() + t * w.cols;
    if (bias) {
      for (std::size_t c = 0; c < w.cols; ++c) o[c] = bias->data[c];
    }
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double xi = x(t, i);
      if (xi == 0.0) continue;
      const float* wr = w.data.data() + i * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) o[c] += xi * wr[c];
    }
  }
}

// Given dL/dz for a row-wise affine map z = xW + b: accumulate dW, db and
// optionally dL/dx.
void affine_rows_backward(const Activations& x, const Tensor2& w, const Activations& dz,
                          Activations& dw, Activations* db, Activations* dx) {
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* g = dz.data.data() + t * w.cols;
    if (db) {
      for (std::size_t c = 0; c < w.cols; ++c) db->data[c] += g[c];
    }
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double xi = x(t, i);
      const float* wr = w.data.data() + i * w.cols;
      double* dwr = dw.data.data() + i * w.cols;
      if (xi != 0.0) {
        for (std::size_t c = 0; c < w.cols; ++c) dwr[c] += xi * g[c];
      }
      if (dx) {
        double s = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) s += g[c] * wr[c];
        (*dx)(t, i) += s;
      }
    }
  }
}

// ---- forward kernels ------------------------------------------------------

void forward_hash(const HashProjection& l, const SparseSequence& seq, LayerCache& c) {
  const std::size_t d = l.weight.cols;
  c.out = Activations(seq.steps.size(), d);
  for (std::size_t t = 0; t < seq.steps.size(); ++t) {
    double* o = c.out.data.data() + t * d;
    for (const auto& [idx, count] : seq.steps[t].entries) {
      const float* wr = l.weight.data.data() + static_cast<std::size_t>(idx) * d;
      const double k = count;
      for (std::size_t j = 0; j < d; ++j) o[j] += k * wr[j];
    }
  }
}

void forward_conv(const ConvOverTime& l, const Activations& x, LayerCache& c) {
  const std::size_t d_in = x.cols;
  const std::size_t d_out = l.weight.cols;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>((l.window - 1) / 2);
  const std::ptrdiff_t steps = static_cast<std::ptrdiff_t>(x.rows);
  c.out = Activations(x.rows, d_out);
  for (std::ptrdiff_t t = 0; t < steps; ++t) {
    double* o = c.out.data.data() + t * static_cast<std::ptrdiff_t>(d_out);
    for (std::size_t k = 0; k < d_out; ++k) o[k] = l.bias.data[k];
    for (std::size_t j = 0; j < l.window; ++j) {
      const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(j) - half;
      if (s < 0 || s >= steps) continue;
      for (std::size_t i = 0; i < d_in; ++i) {
        const double xi = x(static_cast<std::size_t>(s), i);
        if (xi == 0.0) continue;
        const float* wr = l.weight.data.data() + (j * d_in + i) * d_out;
        for (std::size_t k = 0; k < d_out; ++k) o[k] += xi * wr[k];
      }
    }
    for (std::size_t k = 0; k < d_out; ++k) o[k] = activate(l.act, o[k]);
  }
}

void forward_max_pool(const Activations& x, LayerCache& c) {
  c.out = Activations(1, x.cols);
  c.index.assign(x.cols, 0);
  for (std::size_t k = 0; k < x.cols; ++k) {
    double best = x(0, k);
    std::size_t arg = 0;
    for (std::size_t t = 1; t < x.rows; ++t) {
      if (x(t, k) > best) {
        best = x(t, k);
        arg = t;
      }
    }
    c.out(0, k) = best;
    c.index[k] = arg;
  }
}

void forward_mean_pool(const Activations& x, LayerCache& c) {
  c.out = Activations(1, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t k = 0; k < x.cols; ++k) c.out(0, k) += x(t, k);
  }
  const double inv = 1.0 / static_cast<double>(x.rows);
  for (double& v : c.out.data) v *= inv;
}

constexpr double kNormFloor = 1e-12;

void forward_l2(const Activations& x, LayerCache& c) {
  c.out = Activations(x.rows, x.cols);
  c.aux.assign(x.rows, 0.0);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double n = std::sqrt(dot_row(x.row(t), x.row(t)));
    c.aux[t] = n;
    if (n < kNormFloor) {
      // Degenerate direction: fall back to a fixed unit vector.
      const double u = 1.0 / std::sqrt(static_cast<double>(x.cols));
      for (std::size_t k = 0; k < x.cols; ++k) c.out(t, k) = u;
    } else {
      for (std::size_t k = 0; k < x.cols; ++k) c.out(t, k) = x(t, k) / n;
    }
  }
}

void forward_dense(const Dense& l, const Activations& x, LayerCache& c) {
  affine_rows(x, l.weight, &l.bias, c.out);
  for (double& v : c.out.data) v = activate(l.act, v);
}

void forward_softmax(const SoftmaxHead& l, const Activations& x, LayerCache& c) {
  affine_rows(x, l.weight, &l.bias, c.out);
  for (std::size_t t = 0; t < c.out.rows; ++t) {
    auto row = c.out.row(t);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

void forward_logistic(const LogisticHead& l, const Activations& x, LayerCache& c) {
  affine_rows(x, l.weight, &l.bias, c.out);
  for (double& v : c.out.data) v = sigmoid(v);
}

// Cache layout per direction and step: [z | r | n | h_prev], each h wide.
void forward_gru_direction(const Tensor2& w_in, const Tensor2& w_rec, const Tensor2& bias,
                           const Activations& x, bool reverse, std::size_t column_offset,
                           double* cache, Activations& out) {
  const std::size_t h = w_rec.rows;
  const std::size_t steps = x.rows;
  std::vector<double> a(3 * h), hu(3 * h), state(h, 0.0), rh(h);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    for (std::size_t j = 0; j < 3 * h; ++j) a[j] = bias.data[j];
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double xi = x(t, i);
      if (xi == 0.0) continue;
      const float* wr = w_in.data.data() + i * 3 * h;
      for (std::size_t j = 0; j < 3 * h; ++j) a[j] += xi * wr[j];
    }
    // Update and reset gates see the previous state directly.
    std::fill(hu.begin(), hu.end(), 0.0);
    for (std::size_t k = 0; k < h; ++k) {
      const double hk = state[k];
      if (hk == 0.0) continue;
      const float* ur = w_rec.data.data() + k * 3 * h;
      for (std::size_t j = 0; j < 2 * h; ++j) hu[j] += hk * ur[j];
    }
    double* slot = cache + t * 4 * h;
    double* z = slot;
    double* r = slot + h;
    double* n = slot + 2 * h;
    double* h_prev = slot + 3 * h;
    for (std::size_t k = 0; k < h; ++k) {
      z[k] = sigmoid(a[k] + hu[k]);
      r[k] = sigmoid(a[h + k] + hu[h + k]);
      h_prev[k] = state[k];
      rh[k] = r[k] * state[k];
    }
    for (std::size_t j = 0; j < h; ++j) hu[2 * h + j] = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      if (rh[k] == 0.0) continue;
      const float* ur = w_rec.data.data() + k * 3 * h + 2 * h;
      for (std::size_t j = 0; j < h; ++j) hu[2 * h + j] += rh[k] * ur[j];
    }
    for (std::size_t k = 0; k < h; ++k) {
      n[k] = std::tanh(a[2 * h + k] + hu[2 * h + k]);
      state[k] = (1.0 - z[k]) * n[k] + z[k] * state[k];
      out(t, column_offset + k) = state[k];
    }
  }
}

void forward_gru(const BiRecurrentGated& l, const Activations& x, LayerCache& c) {
  const std::size_t h = l.hidden();
  c.out = Activations(x.rows, 2 * h);
  c.aux.assign(2 * x.rows * 4 * h, 0.0);
  forward_gru_direction(l.fw_input, l.fw_recurrent, l.fw_bias, x, false, 0, c.aux.data(), c.out);
  forward_gru_direction(l.bw_input, l.bw_recurrent, l.bw_bias, x, true, h,
                        c.aux.data() + x.rows * 4 * h, c.out);
}

// ---- backward kernels -----------------------------------------------------

void backward_gru_direction(const Tensor2& w_in, const Tensor2& w_rec, const Activations& x,
                            bool reverse, std::size_t column_offset, const double* cache,
                            const Activations& upstream, Activations& d_in, Activations& d_rec,
                            Activations& d_bias, Activations* dx) {
  const std::size_t h = w_rec.rows;
  const std::size_t steps = x.rows;
  std::vector<double> carry(h, 0.0), dh(h), da(3 * h), d_rh(h), next(h);
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const double* slot = cache + t * 4 * h;
    const double* z = slot;
    const double* r = slot + h;
    const double* n = slot + 2 * h;
    const double* h_prev = slot + 3 * h;
    for (std::size_t k = 0; k < h; ++k) dh[k] = upstream(t, column_offset + k) + carry[k];

    double* da_z = da.data();
    double* da_r = da.data() + h;
    double* da_n = da.data() + 2 * h;
    for (std::size_t k = 0; k < h; ++k) {
      da_n[k] = dh[k] * (1.0 - z[k]) * (1.0 - n[k] * n[k]);
      da_z[k] = dh[k] * (h_prev[k] - n[k]) * z[k] * (1.0 - z[k]);
      next[k] = dh[k] * z[k];
    }
    // Candidate path through (r * h_prev) U_n.
    for (std::size_t k = 0; k < h; ++k) {
      const float* ur = w_rec.data.data() + k * 3 * h + 2 * h;
      double* dur = d_rec.data.data() + k * 3 * h + 2 * h;
      const double rh = r[k] * h_prev[k];
      double s_k = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        s_k += da_n[j] * ur[j];
        dur[j] += rh * da_n[j];
      }
      d_rh[k] = s_k;
    }
    for (std::size_t k = 0; k < h; ++k) {
      da_r[k] = d_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
      next[k] += d_rh[k] * r[k];
    }
    // Gate paths through h_prev U_{z,r}.
    for (std::size_t k = 0; k < h; ++k) {
      const float* ur = w_rec.data.data() + k * 3 * h;
      double* dur = d_rec.data.data() + k * 3 * h;
      double s_k = 0.0;
      for (std::size_t j = 0; j < 2 * h; ++j) {
        s_k += da[j] * ur[j];
        dur[j] += h_prev[k] * da[j];
      }
      next[k] += s_k;
    }
    for (std::size_t j = 0; j < 3 * h; ++j) d_bias.data[j] += da[j];
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double xi = x(t, i);
      const float* wr = w_in.data.data() + i * 3 * h;
      double* dwr = d_in.data.data() + i * 3 * h;
      double s_i = 0.0;
      for (std::size_t j = 0; j < 3 * h; ++j) {
        if (xi != 0.0) dwr[j] += xi * da[j];
        s_i += da[j] * wr[j];
      }
      if (dx) (*dx)(t, i) += s_i;
    }
    carry.swap(next);
  }
}

bool shapes_match(const Activations& g, std::size_t rows, std::size_t cols) {
  return g.rows == rows && g.cols == cols;
}

}  // namespace

// ---- layer metadata -------------------------------------------------------

std::string layer_kind(const Layer& layer) {
  return std::visit(overloaded{
                        [](const HashProjection&) { return std::string("hash_projection"); },
                        [](const ConvOverTime&) { return std::string("conv_over_time"); },
                        [](const MaxPoolOverTime&) { return std::string("max_pool_over_time"); },
                        [](const Dense&) { return std::string("dense"); },
                        [](const Linear&) { return std::string("linear"); },
                        [](const L2Normalize&) { return std::string("l2_normalize"); },
                        [](const BiRecurrentGated&) { return std::string("bi_recurrent_gated"); },
                        [](const MeanPoolOverTime&) { return std::string("mean_pool_over_time"); },
                        [](const SoftmaxHead&) { return std::string("softmax_head"); },
                        [](const LogisticHead&) { return std::string("logistic_head"); },
                    },
                    layer);
}

std::vector<Tensor2*> layer_parameters(Layer& layer) {
  return std::visit(
      overloaded{
          [](HashProjection& l) { return std::vector<Tensor2*>{&l.weight}; },
          [](ConvOverTime& l) { return std::vector<Tensor2*>{&l.weight, &l.bias}; },
          [](Dense& l) { return std::vector<Tensor2*>{&l.weight, &l.bias}; },
          [](Linear& l) { return std::vector<Tensor2*>{&l.weight}; },
          [](BiRecurrentGated& l) {
            return std::vector<Tensor2*>{&l.fw_input, &l.fw_recurrent, &l.fw_bias,
                                         &l.bw_input, &l.bw_recurrent, &l.bw_bias};
          },
          [](SoftmaxHead& l) { return std::vector<Tensor2*>{&l.weight, &l.bias}; },
          [](LogisticHead& l) { return std::vector<Tensor2*>{&l.weight, &l.bias}; },
          [](auto&) { return std::vector<Tensor2*>{}; },
      },
      layer);
}

std::vector<const Tensor2*> layer_parameters(const Layer& layer) {
  auto mut = layer_parameters(const_cast<Layer&>(layer));
  return {mut.begin(), mut.end()};
}

HashProjection make_hash_projection(std::size_t dim_in, std::size_t dim_out, Rng& rng) {
  return {glorot(dim_in, dim_out, dim_in, dim_out, rng)};
}

ConvOverTime make_conv(std::size_t window, std::size_t d_in, std::size_t d_out, Activation act,
                       Rng& rng) {
  if (window == 0) throw ShapeMismatch("convolution window must be positive");
  return {window, act, glorot(window * d_in, d_out, window * d_in, d_out, rng),
          Tensor2(1, d_out)};
}

Dense make_dense(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng) {
  return {act, glorot(d_in, d_out, d_in, d_out, rng), Tensor2(1, d_out)};
}

Linear make_linear(std::size_t d_in, std::size_t d_out, Rng& rng) {
  return {glorot(d_in, d_out, d_in, d_out, rng)};
}

BiRecurrentGated make_bi_recurrent(std::size_t d_in, std::size_t hidden, Rng& rng) {
  BiRecurrentGated l;
  l.fw_input = glorot(d_in, 3 * hidden, d_in, hidden, rng);
  l.fw_recurrent = glorot(hidden, 3 * hidden, hidden, hidden, rng);
  l.fw_bias = Tensor2(1, 3 * hidden);
  l.bw_input = glorot(d_in, 3 * hidden, d_in, hidden, rng);
  l.bw_recurrent = glorot(hidden, 3 * hidden, hidden, hidden, rng);
  l.bw_bias = Tensor2(1, 3 * hidden);
  return l;
}

SoftmaxHead make_softmax_head(std::size_t d_in, std::size_t classes, Rng& rng) {
  return {glorot(d_in, classes, d_in, classes, rng), Tensor2(1, classes)};
}

LogisticHead make_logistic_head(std::size_t d_in, Rng& rng) {
  return {glorot(d_in, 1, d_in, 1, rng), Tensor2(1, 1)};
}

// ---- LayerStack -------------------------------------------------------------

void LayerStack::validate() const {
  if (layers.empty()) throw ShapeMismatch("empty layer stack");
  std::size_t width = 0;  // 0 = unknown until the first sized layer
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    if (std::holds_alternative<HashProjection>(layer) && i != 0) {
      throw ShapeMismatch("hash_projection must be the first layer");
    }
    const Dims d = layer_dims(layer);
    if (d.in != 0 && width != 0 && d.in != width) {
      throw ShapeMismatch("layer " + std::to_string(i) + " (" + layer_kind(layer) +
                          ") expects width " + std::to_string(d.in) + ", got " +
                          std::to_string(width));
    }
    if (d.out != 0) width = d.out;
    if (const auto* c = std::get_if<ConvOverTime>(&layer)) {
      if (c->window == 0 || c->weight.rows % c->window != 0 || c->bias.cols != c->weight.cols) {
        throw ShapeMismatch("malformed conv_over_time");
      }
    }
    if (const auto* g = std::get_if<BiRecurrentGated>(&layer)) {
      const std::size_t h = g->hidden();
      const bool ok = g->fw_input.cols == 3 * h && g->fw_recurrent.cols == 3 * h &&
                      g->fw_bias.cols == 3 * h && g->bw_input.rows == g->fw_input.rows &&
                      g->bw_input.cols == 3 * h && g->bw_recurrent.rows == h &&
                      g->bw_recurrent.cols == 3 * h && g->bw_bias.cols == 3 * h;
      if (!ok) throw ShapeMismatch("malformed bi_recurrent_gated");
    }
  }
}

std::vector<Tensor2*> LayerStack::parameters() {
  std::vector<Tensor2*> out;
  for (Layer& l : layers) {
    for (Tensor2* t : layer_parameters(l)) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor2*> LayerStack::parameters() const {
  std::vector<const Tensor2*> out;
  for (const Layer& l : layers) {
    for (const Tensor2* t : layer_parameters(l)) out.push_back(t);
  }
  return out;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor2* t : parameters()) n += t->size();
  return n;
}

bool LayerStack::sparse_input() const {
  return !layers.empty() && std::holds_alternative<HashProjection>(layers.front());
}

bool LayerStack::operator==(const LayerStack& other) const {
  if (layers.size() != other.layers.size() || seed != other.seed || tag != other.tag) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layer_kind(layers[i]) != layer_kind(other.layers[i])) return false;
    const auto a = layer_parameters(layers[i]);
    const auto b = layer_parameters(other.layers[i]);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!(*a[k] == *b[k])) return false;
    }
  }
  return true;
}

// ---- forward ------------------------------------------------------------------

Activations forward(const LayerStack& stack, const StackInput& input, ForwardCache* cache) {
  if (stack.layers.empty()) throw ShapeMismatch("empty layer stack");
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.input = input;
  c.layers.assign(stack.layers.size(), LayerCache{});

  const Activations* x = nullptr;
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const Layer& layer = stack.layers[i];
    LayerCache& lc = c.layers[i];
    if (i == 0) {
      if (const auto* hp = std::get_if<HashProjection>(&layer)) {
        const auto* seq = std::get_if<SparseSequence>(&c.input);
        if (!seq) throw ShapeMismatch("hash_projection needs a sparse sequence input");
        if (seq->steps.empty()) throw ShapeMismatch("empty input sequence");
        for (const auto& step : seq->steps) {
          if (step.dim != hp->weight.rows) {
            throw ShapeMismatch("trigram dim " + std::to_string(step.dim) + " != " +
                                std::to_string(hp->weight.rows));
          }
        }
        forward_hash(*hp, *seq, lc);
        x = &lc.out;
        continue;
      }
      x = std::get_if<Activations>(&c.input);
      if (!x) throw ShapeMismatch("dense stack needs a dense input");
      if (x->rows == 0) throw ShapeMismatch("empty input sequence");
    }
    const Dims d = layer_dims(layer);
    if (d.in != 0 && x->cols != d.in) {
      throw ShapeMismatch(layer_kind(layer) + " expects width " + std::to_string(d.in) +
                          ", got " + std::to_string(x->cols));
    }
    std::visit(overloaded{
                   [&](const HashProjection&) {
                     throw ShapeMismatch("hash_projection must be the first layer");
                   },
                   [&](const ConvOverTime& l) { forward_conv(l, *x, lc); },
                   [&](const MaxPoolOverTime&) { forward_max_pool(*x, lc); },
                   [&](const Dense& l) { forward_dense(l, *x, lc); },
                   [&](const Linear& l) { affine_rows(*x, l.weight, nullptr, lc.out); },
                   [&](const L2Normalize&) { forward_l2(*x, lc); },
                   [&](const BiRecurrentGated& l) { forward_gru(l, *x, lc); },
                   [&](const MeanPoolOverTime&) { forward_mean_pool(*x, lc); },
                   [&](const SoftmaxHead& l) { forward_softmax(l, *x, lc); },
                   [&](const LogisticHead& l) { forward_logistic(l, *x, lc); },
               },
               layer);
    x = &lc.out;
  }
  return c.output();
}

// ---- Gradients ------------------------------------------------------------------

Gradients Gradients::zeros_like(const LayerStack& stack) {
  Gradients g;
  for (const Tensor2* t : stack.parameters()) g.tensors_.emplace_back(t->rows, t->cols);
  return g;
}

void Gradients::set_zero() {
  for (auto& t : tensors_) t.fill(0.0);
}

void Gradients::add(const Gradients& other) {
  if (other.tensors_.size() != tensors_.size()) throw ShapeMismatch("gradient sets differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& a = tensors_[i].data;
    const auto& b = other.tensors_[i].data;
    if (a.size() != b.size()) throw ShapeMismatch("gradient tensors differ");
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  }
}

void Gradients::scale(double factor) {
  for (auto& t : tensors_) {
    for (double& v : t.data) v *= factor;
  }
}

double Gradients::l2_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) {
    for (double v : t.data) s += v * v;
  }
  return std::sqrt(s);
}

bool Gradients::all_finite() const {
  for (const auto& t : tensors_) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::size_t Gradients::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool Gradients::congruent_with(const LayerStack& stack) const {
  const auto params = stack.parameters();
  if (params.size() != tensors_.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows != tensors_[i].rows || params[i]->cols != tensors_[i].cols) return false;
  }
  return true;
}

// ---- backward -------------------------------------------------------------------

void accumulate_backward(const LayerStack& stack, const ForwardCache& cache,
                         const Activations& upstream, Gradients& into, Activations* input_grad) {
  if (cache.layers.size() != stack.layers.size() || cache.layers.empty()) {
    throw StaleCache("cache has " + std::to_string(cache.layers.size()) + " layers, stack has " +
                     std::to_string(stack.layers.size()));
  }
  if (!into.congruent_with(stack)) throw StaleCache("gradient buffer does not match the stack");
  const Activations& out = cache.output();
  if (!shapes_match(upstream, out.rows, out.cols)) {
    throw StaleCache("upstream gradient shape does not match the cached output");
  }

  // Offsets of each layer's tensors inside the flat gradient list.
  std::vector<std::size_t> offset(stack.layers.size() + 1, 0);
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    offset[i + 1] = offset[i] + layer_parameters(stack.layers[i]).size();
  }
  auto& g = into.tensors();

  Activations grad = upstream;
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const Layer& layer = stack.layers[li];
    const LayerCache& lc = cache.layers[li];
    if (!shapes_match(grad, lc.out.rows, lc.out.cols)) throw StaleCache("cache shape drift");

    const bool is_first = li == 0;
    const Activations* x = nullptr;
    if (!is_first) {
      x = &cache.layers[li - 1].out;
    } else {
      x = std::get_if<Activations>(&cache.input);
    }
    const bool want_dx = !is_first || (input_grad != nullptr && x != nullptr);
    Activations dx;
    if (want_dx && x) dx = Activations(x->rows, x->cols);

    const std::size_t p = offset[li];
    std::visit(
        overloaded{
            [&](const HashProjection& l) {
              const auto* seq = std::get_if<SparseSequence>(&cache.input);
              if (!seq || seq->steps.size() != grad.rows) throw StaleCache("sparse input drift");
              const std::size_t d = l.weight.cols;
              for (std::size_t t = 0; t < seq->steps.size(); ++t) {
                const double* gr = grad.data.data() + t * d;
                for (const auto& [idx, count] : seq->steps[t].entries) {
                  double* dw = g[p].data.data() + static_cast<std::size_t>(idx) * d;
                  const double k = count;
                  for (std::size_t j = 0; j < d; ++j) dw[j] += k * gr[j];
                }
              }
            },
            [&](const ConvOverTime& l) {
              const std::size_t d_in = x->cols;
              const std::size_t d_out = l.weight.cols;
              Activations da = grad;
              for (std::size_t k = 0; k < da.size(); ++k) {
                da.data[k] *= activation_slope(l.act, lc.out.data[k]);
              }
              const std::ptrdiff_t half = static_cast<std::ptrdiff_t>((l.window - 1) / 2);
              const std::ptrdiff_t steps = static_cast<std::ptrdiff_t>(x->rows);
              for (std::ptrdiff_t t = 0; t < steps; ++t) {
                const double* dat = da.data.data() + t * static_cast<std::ptrdiff_t>(d_out);
                for (std::size_t k = 0; k < d_out; ++k) g[p + 1].data[k] += dat[k];
                for (std::size_t j = 0; j < l.window; ++j) {
                  const std::ptrdiff_t s = t + static_cast<std::ptrdiff_t>(j) - half;
                  if (s < 0 || s >= steps) continue;
                  for (std::size_t i = 0; i < d_in; ++i) {
                    const double xi = (*x)(static_cast<std::size_t>(s), i);
                    const float* wr = l.weight.data.data() + (j * d_in + i) * d_out;
                    double* dwr = g[p].data.data() + (j * d_in + i) * d_out;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < d_out; ++k) {
                      if (xi != 0.0) dwr[k] += xi * dat[k];
                      acc += dat[k] * wr[k];
                    }
                    if (want_dx) dx(static_cast<std::size_t>(s), i) += acc;
                  }
                }
              }
            },
            [&](const MaxPoolOverTime&) {
              if (!want_dx) return;
              for (std::size_t k = 0; k < grad.cols; ++k) dx(lc.index[k], k) += grad(0, k);
            },
            [&](const MeanPoolOverTime&) {
              if (!want_dx) return;
              const double inv = 1.0 / static_cast<double>(x->rows);
              for (std::size_t t = 0; t < x->rows; ++t) {
                for (std::size_t k = 0; k < x->cols; ++k) dx(t, k) += grad(0, k) * inv;
              }
            },
            [&](const L2Normalize&) {
              if (!want_dx) return;
              for (std::size_t t = 0; t < x->rows; ++t) {
                const double n = lc.aux[t];
                if (n < kNormFloor) continue;
                const double yg = dot_row(lc.out.row(t), grad.row(t));
                for (std::size_t k = 0; k < x->cols; ++k) {
                  dx(t, k) += (grad(t, k) - lc.out(t, k) * yg) / n;
                }
              }
            },
            [&](const Dense& l) {
              Activations dz = grad;
              for (std::size_t k = 0; k < dz.size(); ++k) {
                dz.data[k] *= activation_slope(l.act, lc.out.data[k]);
              }
              affine_rows_backward(*x, l.weight, dz, g[p], &g[p + 1], want_dx ? &dx : nullptr);
            },
            [&](const Linear& l) {
              affine_rows_backward(*x, l.weight, grad, g[p], nullptr, want_dx ? &dx : nullptr);
            },
            [&](const SoftmaxHead& l) {
              Activations dz(grad.rows, grad.cols);
              for (std::size_t t = 0; t < grad.rows; ++t) {
                const double gp = dot_row(grad.row(t), lc.out.row(t));
                for (std::size_t k = 0; k < grad.cols; ++k) {
                  dz(t, k) = lc.out(t, k) * (grad(t, k) - gp);
                }
              }
              affine_rows_backward(*x, l.weight, dz, g[p], &g[p + 1], want_dx ? &dx : nullptr);
            },
            [&](const LogisticHead& l) {
              Activations dz = grad;
              for (std::size_t k = 0; k < dz.size(); ++k) {
                const double s = lc.out.data[k];
                dz.data[k] *= s * (1.0 - s);
              }
              affine_rows_backward(*x, l.weight, dz, g[p], &g[p + 1], want_dx ? &dx : nullptr);
            },
            [&](const BiRecurrentGated& l) {
              const std::size_t h = l.hidden();
              Activations* dxp = want_dx ? &dx : nullptr;
              backward_gru_direction(l.fw_input, l.fw_recurrent, *x, false, 0, lc.aux.data(),
                                     grad, g[p], g[p + 1], g[p + 2], dxp);
              backward_gru_direction(l.bw_input, l.bw_recurrent, *x, true, h,
                                     lc.aux.data() + x->rows * 4 * h, grad, g[p + 3], g[p + 4],
                                     g[p + 5], dxp);
            },
        },
        layer);

    if (is_first) {
      if (input_grad && x) *input_grad = std::move(dx);
      break;
    }
    grad = std::move(dx);
  }
}

Gradients backward(const LayerStack& stack, const ForwardCache& cache,
                   const Activations& upstream) {
  Gradients g = Gradients::zeros_like(stack);
  accumulate_backward(stack, cache, upstream, g);
  return g;
}

void sgd_step(LayerStack& stack, const Gradients& grads, double lr, double clip_norm) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (!grads.congruent_with(stack)) throw ShapeMismatch("gradients do not match the stack");
  if (!grads.all_finite()) throw NonFiniteGradient("gradient contains NaN or infinity");
  const double norm = grads.l2_norm();
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  const double step = lr * scale;
  auto params = stack.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->data;
    const auto& g = grads.tensors()[i].data;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta[k] = static_cast<float>(static_cast<double>(theta[k]) - step * g[k]);
    }
  }
}

double gradient_check(LayerStack& stack, const Objective& objective, double h) {
  Gradients analytic = Gradients::zeros_like(stack);
  objective(stack, &analytic);
  double worst = 0.0;
  auto params = stack.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->data;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const float original = theta[k];
      theta[k] = static_cast<float>(static_cast<double>(original) + h);
      const double up = theta[k];
      const double loss_up = objective(stack, nullptr);
      theta[k] = static_cast<float>(static_cast<double>(original) - h);
      const double down = theta[k];
      const double loss_down = objective(stack, nullptr);
      theta[k] = original;
      const double numeric = (loss_up - loss_down) / (up - down);
      const double a = analytic.tensors()[i].data[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double gradient_check(LayerStack& stack, const OutputLoss& loss, const StackInput& input,
                      double h) {
  const Objective objective = [&](const LayerStack& s, Gradients* grads) {
    ForwardCache cache;
    const Activations out = forward(s, input, &cache);
    if (!grads) return loss(out, nullptr);
    Activations upstream(out.rows, out.cols);
    const double value = loss(out, &upstream);
    accumulate_backward(s, cache, upstream, *grads);
    return value;
  };
  return gradient_check(stack, objective, h);
}

}  // namespace chatir::nn
