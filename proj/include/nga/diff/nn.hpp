#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nga/diff/tensor.hpp"

namespace nga::diff {

using Rng = std::mt19937_64;

// Ordered name -> leaf tensor map holding every learnable value of a model.
class ParameterSet {
 public:
  // Registers a fresh leaf; names must be unique.
  Tensor add(const std::string& name, Tensor value);
  // Registers a leaf initialized uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Order-sensitive FNV-1a hash over names, shapes and raw value bits.
  std::uint64_t checksum() const;
  // Deep copy; the copy shares no storage with this set.
  ParameterSet clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

Linear make_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

struct LayerNorm {
  Tensor gain;
  Tensor shift;
  double eps = 1e-5;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift, eps); }
};

LayerNorm make_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t width);

// Two-layer feed-forward network with a ReLU in between.
struct Mlp {
  Linear hidden;
  Linear out;
  Tensor operator()(const Tensor& x) const { return out(relu(hidden(x))); }
};

Mlp make_mlp(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
             std::size_t out, Rng& rng);

// Post-norm transformer block: multi-head attention of `queries` over
// `keys_values`, residual + layer norm, feed-forward, residual + layer norm.
struct AttentionBlock {
  std::size_t width = 0;
  std::size_t heads = 1;
  Linear query, key, value, output;
  LayerNorm attention_norm;
  Mlp feed_forward;
  LayerNorm feed_forward_norm;
};

AttentionBlock make_attention_block(ParameterSet& params, const std::string& prefix, std::size_t width,
                                    std::size_t heads, std::size_t ffn_width, Rng& rng);

struct AttentionOptions {
  // Test hook: replaces the attention weights of every head with 1/keys.
  bool uniform_weights = false;
  // When set, receives one (queries x keys) weight matrix per head.
  std::vector<Tensor>* weights_out = nullptr;
};

Tensor attention_block(const Tensor& queries, const Tensor& keys_values, const AttentionBlock& block,
                       const AttentionOptions& options = {});

}  // namespace nga::diff
