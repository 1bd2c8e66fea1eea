#include "nga/diff/nn.hpp"

#include <bit>
#include <cmath>

#include "nga/error.hpp"

namespace nga::diff {

Tensor ParameterSet::add(const std::string& name, Tensor value) {
  if (contains(name)) fail(ErrorKind::kArgument, "duplicate parameter name: " + name);
  entries_.emplace_back(name, value);
  return value;
}

Tensor ParameterSet::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(n);
  for (auto& v : values) v = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [key, value] : entries_)
    if (key == name) return value;
  fail(ErrorKind::kArgument, "unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& entry : entries_)
    if (entry.first == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& entry : entries_) n += entry.second.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& entry : entries_) entry.second.zero_grad();
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, value] : entries_) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (auto e : value.shape()) mix(e);
    for (double v : value.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, value] : entries_) {
    out.add(name, Tensor::from(value.shape(), {value.data().begin(), value.data().end()}, value.requires_grad()));
  }
  return out;
}

Linear make_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = params.add_uniform(prefix + ".weight", {in, out}, in, rng);
  l.bias = params.add_uniform(prefix + ".bias", {out}, in, rng);
  return l;
}

LayerNorm make_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t width) {
  LayerNorm ln;
  ln.gain = params.add(prefix + ".gain", Tensor::full({width}, 1.0, true));
  ln.shift = params.add(prefix + ".shift", Tensor::zeros({width}, true));
  return ln;
}

Mlp make_mlp(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
             std::size_t out, Rng& rng) {
  return Mlp{make_linear(params, prefix + ".hidden", in, hidden, rng),
             make_linear(params, prefix + ".out", hidden, out, rng)};
}

AttentionBlock make_attention_block(ParameterSet& params, const std::string& prefix, std::size_t width,
                                    std::size_t heads, std::size_t ffn_width, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    fail(ErrorKind::kConfig, "attention width " + std::to_string(width) + " not divisible by " +
                                 std::to_string(heads) + " heads");
  }
  AttentionBlock b;
  b.width = width;
  b.heads = heads;
  b.query = make_linear(params, prefix + ".query", width, width, rng);
  b.key = make_linear(params, prefix + ".key", width, width, rng);
  b.value = make_linear(params, prefix + ".value", width, width, rng);
  b.output = make_linear(params, prefix + ".output", width, width, rng);
  b.attention_norm = make_layer_norm(params, prefix + ".attention_norm", width);
  b.feed_forward = make_mlp(params, prefix + ".ffn", width, ffn_width, width, rng);
  b.feed_forward_norm = make_layer_norm(params, prefix + ".ffn_norm", width);
  return b;
}

Tensor attention_block(const Tensor& queries, const Tensor& keys_values, const AttentionBlock& block,
                       const AttentionOptions& options) {
  if (queries.rank() != 2 || keys_values.rank() != 2 || queries.cols() != block.width ||
      keys_values.cols() != block.width) {
    fail(ErrorKind::kArgument, "attention_block: inputs must be rank-2 with width " + std::to_string(block.width));
  }
  const std::size_t head_width = block.width / block.heads;
  const double scaling = 1.0 / std::sqrt(static_cast<double>(head_width));

  const Tensor q = block.query(queries);
  const Tensor k = block.key(keys_values);
  const Tensor v = block.value(keys_values);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(block.heads);
  for (std::size_t h = 0; h < block.heads; ++h) {
    const std::size_t start = h * head_width;
    Tensor weights;
    if (options.uniform_weights) {
      weights = Tensor::full({queries.rows(), keys_values.rows()}, 1.0 / static_cast<double>(keys_values.rows()));
    } else {
      const Tensor scores = scale(matmul_nt(slice_cols(q, start, head_width), slice_cols(k, start, head_width)), scaling);
      weights = softmax(scores, 1);
    }
    if (options.weights_out) options.weights_out->push_back(weights);
    head_outputs.push_back(matmul(weights, slice_cols(v, start, head_width)));
  }
  const Tensor attended = block.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  const Tensor h1 = block.attention_norm(add(queries, block.output(attended)));
  return block.feed_forward_norm(add(h1, block.feed_forward(h1)));
}

}  // namespace nga::diff
