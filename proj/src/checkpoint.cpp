#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "chatir/errors.hpp"
#include "chatir/hash.hpp"
#include "chatir/nn.hpp"

// Checkpoint layout: a plain-text manifest terminated by the line "end",
// followed by the raw parameter payload as little-endian IEEE-754 floats.
//
//   chatir-checkpoint
//   format_version 1
//   seed 42
//   tag cdssm
//   layers 2
//   dense 4 3 tanh
//   softmax_head 3 2
//   tensors 4
//   tensor 4 3
//   ...
//   payload_floats 26
//   end

namespace chatir::nn {
namespace {

constexpr const char* kMagicLine = "chatir-checkpoint";

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw CorruptCheckpoint("unknown activation '" + s + "'");
}

std::string layer_spec(const Layer& layer) {
  std::ostringstream os;
  os << layer_kind(layer);
  if (const auto* l = std::get_if<HashProjection>(&layer)) {
    os << ' ' << l->weight.rows << ' ' << l->weight.cols;
  } else if (const auto* l = std::get_if<ConvOverTime>(&layer)) {
    os << ' ' << l->window << ' ' << l->weight.rows / l->window << ' ' << l->weight.cols << ' '
       << (l->act == Activation::tanh ? "tanh" : "identity");
  } else if (const auto* l = std::get_if<Dense>(&layer)) {
    os << ' ' << l->weight.rows << ' ' << l->weight.cols << ' '
       << (l->act == Activation::tanh ? "tanh" : "identity");
  } else if (const auto* l = std::get_if<Linear>(&layer)) {
    os << ' ' << l->weight.rows << ' ' << l->weight.cols;
  } else if (const auto* l = std::get_if<BiRecurrentGated>(&layer)) {
    os << ' ' << l->fw_input.rows << ' ' << l->hidden();
  } else if (const auto* l = std::get_if<SoftmaxHead>(&layer)) {
    os << ' ' << l->weight.rows << ' ' << l->weight.cols;
  } else if (const auto* l = std::get_if<LogisticHead>(&layer)) {
    os << ' ' << l->weight.rows;
  }
  return os.str();
}

std::size_t read_size(std::istringstream& is, const std::string& line) {
  long long v = -1;
  if (!(is >> v) || v <= 0 || v > (1LL << 28)) {
    throw CorruptCheckpoint("bad dimension in '" + line + "'");
  }
  return static_cast<std::size_t>(v);
}

// Builds a zero-initialized layer from its manifest line.
Layer parse_layer(const std::string& line) {
  std::istringstream is(line);
  std::string kind;
  is >> kind;
  Layer layer;
  if (kind == "hash_projection") {
    const std::size_t in = read_size(is, line), out = read_size(is, line);
    layer = HashProjection{Tensor2(in, out)};
  } else if (kind == "conv_over_time") {
    const std::size_t w = read_size(is, line), in = read_size(is, line),
                      out = read_size(is, line);
    std::string act;
    is >> act;
    layer = ConvOverTime{w, parse_activation(act), Tensor2(w * in, out), Tensor2(1, out)};
  } else if (kind == "max_pool_over_time") {
    layer = MaxPoolOverTime{};
  } else if (kind == "mean_pool_over_time") {
    layer = MeanPoolOverTime{};
  } else if (kind == "l2_normalize") {
    layer = L2Normalize{};
  } else if (kind == "dense") {
    const std::size_t in = read_size(is, line), out = read_size(is, line);
    std::string act;
    is >> act;
    layer = Dense{parse_activation(act), Tensor2(in, out), Tensor2(1, out)};
  } else if (kind == "linear") {
    const std::size_t in = read_size(is, line), out = read_size(is, line);
    layer = Linear{Tensor2(in, out)};
  } else if (kind == "bi_recurrent_gated") {
    const std::size_t in = read_size(is, line), h = read_size(is, line);
    layer = BiRecurrentGated{Tensor2(in, 3 * h), Tensor2(h, 3 * h), Tensor2(1, 3 * h),
                             Tensor2(in, 3 * h), Tensor2(h, 3 * h), Tensor2(1, 3 * h)};
  } else if (kind == "softmax_head") {
    const std::size_t in = read_size(is, line), out = read_size(is, line);
    layer = SoftmaxHead{Tensor2(in, out), Tensor2(1, out)};
  } else if (kind == "logistic_head") {
    const std::size_t in = read_size(is, line);
    layer = LogisticHead{Tensor2(in, 1), Tensor2(1, 1)};
  } else {
    throw CorruptCheckpoint("unknown layer kind '" + kind + "'");
  }
  std::string extra;
  if (is >> extra) throw CorruptCheckpoint("trailing tokens in '" + line + "'");
  return layer;
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw CorruptCheckpoint("manifest ends before '" + key + "'");
  if (line.rfind(key, 0) != 0) {
    throw CorruptCheckpoint("expected '" + key + "', found '" + line + "'");
  }
  return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw CorruptCheckpoint("bad " + what);
    return v;
  } catch (const std::logic_error&) {
    throw CorruptCheckpoint("bad " + what + " '" + s + "'");
  }
}

void write_le_float(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

}  // namespace

void write_checkpoint(std::ostream& out, const LayerStack& stack) {
  stack.validate();
  out << kMagicLine << '\n';
  out << "format_version " << kCheckpointFormatVersion << '\n';
  out << "seed " << stack.seed << '\n';
  out << "tag " << (stack.tag.empty() ? "-" : stack.tag) << '\n';
  out << "layers " << stack.layers.size() << '\n';
  for (const Layer& l : stack.layers) out << layer_spec(l) << '\n';
  const auto params = stack.parameters();
  out << "tensors " << params.size() << '\n';
  std::size_t total = 0;
  for (const Tensor2* t : params) {
    out << "tensor " << t->rows << ' ' << t->cols << '\n';
    total += t->size();
  }
  out << "payload_floats " << total << '\n';
  out << "end\n";
  for (const Tensor2* t : params) {
    for (float v : t->data) write_le_float(out, v);
  }
}

LayerStack read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) {
    throw CorruptCheckpoint("not a checkpoint file");
  }
  const std::uint64_t version = parse_u64(expect_line(in, "format_version"), "format_version");
  if (version != kCheckpointFormatVersion) {
    throw FormatVersionMismatch("checkpoint format " + std::to_string(version) + ", expected " +
                                std::to_string(kCheckpointFormatVersion));
  }
  LayerStack stack;
  stack.seed = parse_u64(expect_line(in, "seed"), "seed");
  stack.tag = expect_line(in, "tag");
  if (stack.tag == "-") stack.tag.clear();
  const std::uint64_t n_layers = parse_u64(expect_line(in, "layers"), "layer count");
  if (n_layers == 0 || n_layers > 64) throw CorruptCheckpoint("layer count out of range");
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    if (!std::getline(in, line)) throw CorruptCheckpoint("manifest truncated in layer list");
    stack.layers.push_back(parse_layer(line));
  }
  try {
    stack.validate();
  } catch (const ShapeMismatch& e) {
    throw CorruptCheckpoint(std::string("inconsistent layer shapes: ") + e.what());
  }

  auto params = stack.parameters();
  const std::uint64_t n_tensors = parse_u64(expect_line(in, "tensors"), "tensor count");
  if (n_tensors != params.size()) throw CorruptCheckpoint("tensor count disagrees with layers");
  std::size_t total = 0;
  for (Tensor2* t : params) {
    std::istringstream is(expect_line(in, "tensor"));
    std::size_t r = 0, c = 0;
    if (!(is >> r >> c) || r != t->rows || c != t->cols) {
      throw CorruptCheckpoint("tensor shape disagrees with its layer");
    }
    total += t->size();
  }
  const std::uint64_t payload = parse_u64(expect_line(in, "payload_floats"), "payload size");
  if (payload != total) throw CorruptCheckpoint("payload size disagrees with tensor shapes");
  if (!std::getline(in, line) || line != "end") throw CorruptCheckpoint("missing 'end'");

  for (Tensor2* t : params) {
    for (float& v : t->data) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      if (in.gcount() != 4) throw CorruptCheckpoint("payload truncated");
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                 (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CorruptCheckpoint("trailing bytes after payload");
  }
  return stack;
}

void save_checkpoint(const LayerStack& stack, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_checkpoint(out, stack);
  if (!out) throw Error("write failed for " + path.string());
}

LayerStack load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open " + path.string());
  return read_checkpoint(in);
}

std::uint64_t parameter_hash(const LayerStack& stack) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const Tensor2* t : stack.parameters()) {
    for (float v : t->data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      h = fnv1a64(std::string_view(b, 4), h);
    }
  }
  return h;
}

}  // namespace chatir::nn
