#pragma once

// Non-autoregressive slate generator: an item encoder and a position encoder
// produce an allocation probability matrix Z in one forward pass; slates are
// then read off Z by per-position constrained decoding or beam search, with
// no further network evaluation.

#include <atomic>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "nga/diff/nn.hpp"
#include "nga/market/types.hpp"

namespace nga::gen {

using market::PageRequest;
using market::SlateItems;

struct GeneratorConfig {
  std::size_t feature_dim = 8;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_width = 64;
  std::size_t max_slots = 10;
  double alpha = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& doc);
};

// (n+m) x k; each column is a distribution over candidates for that slot.
struct AllocationMatrix {
  diff::Tensor probabilities;
  diff::Tensor log_probabilities;

  std::size_t items() const { return probabilities.rows(); }
  std::size_t slots() const { return probabilities.cols(); }
  double at(std::size_t item, std::size_t slot) const { return probabilities.at(item, slot); }
};

// Test hooks.
struct GeneratorHooks {
  bool zero_hidden_scores = false;
  bool uniform_cross_attention = false;
};

struct GeneratorForward {
  diff::Tensor item_states;      // (n+m) x d
  diff::Tensor position_states;  // k x d
  diff::Tensor hidden_scores;    // (n+m) x k
  AllocationMatrix allocation;
};

// pointwise_ctr * bid + alpha * pointwise_ctr * pointwise_cvr
double prior_score(const market::Candidate& c, double alpha);

class Generator {
 public:
  explicit Generator(GeneratorConfig config);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return config_; }
  diff::ParameterSet& parameters() { return params_; }
  const diff::ParameterSet& parameters() const { return params_; }

  diff::Tensor encode_items(const PageRequest& request) const;
  diff::Tensor encode_positions(std::size_t slots, const diff::Tensor& item_states,
                                const GeneratorHooks& hooks = {}) const;
  // Scaled dot products x_i . t_j / sqrt(d).
  diff::Tensor hidden_scores(const diff::Tensor& item_states, const diff::Tensor& position_states) const;
  AllocationMatrix allocation_matrix(const PageRequest& request, const diff::Tensor& item_states,
                                     const diff::Tensor& position_states, const GeneratorHooks& hooks = {}) const;
  // Rebuilds Z for (possibly re-bid) `request` from cached hidden scores. The
  // encoders never see bids, so this equals a fresh forward pass.
  AllocationMatrix allocation_from_hidden(const PageRequest& request, const diff::Tensor& hidden_scores) const;

  // One network call: encoders plus allocation matrix.
  GeneratorForward forward(const PageRequest& request, const GeneratorHooks& hooks = {}) const;

  // Reference decoder that reruns the position encoder once per slot,
  // conditioning on the items already placed. Counts k network calls.
  SlateItems decode_autoregressive(const PageRequest& request) const;

  std::uint64_t network_calls() const { return calls_.load(); }
  void reset_network_calls() { calls_.store(0); }

  nlohmann::json to_checkpoint() const;
  void load_checkpoint(const nlohmann::json& checkpoint);

 private:
  struct PositionLayer {
    diff::AttentionBlock self_attention;
    diff::AttentionBlock cross_attention;
  };

  diff::Tensor run_position_layers(diff::Tensor states, const diff::Tensor& item_states,
                                   const GeneratorHooks& hooks) const;

  GeneratorConfig config_;
  diff::ParameterSet params_;
  diff::Linear item_input_;
  std::vector<diff::AttentionBlock> item_layers_;
  diff::Tensor position_embeddings_;
  std::vector<PositionLayer> position_layers_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

// Per-position argmax over the feasible set; ties go to the lower candidate
// index. `excluded` optionally masks candidates out. Throws kInfeasible when a
// position has no feasible candidate.
SlateItems constrained_decode(const AllocationMatrix& allocation, const PageRequest& request,
                              const std::vector<bool>* excluded = nullptr);

struct BeamCandidate {
  SlateItems items;
  double log_probability = 0.0;
};

// Beam search over positions by accumulated log Z, same feasibility filters as
// constrained_decode. Sorted by log-probability, best first. With
// beam_size == 1 the result is exactly the constrained_decode slate.
std::vector<BeamCandidate> beam_generate(const AllocationMatrix& allocation, const PageRequest& request,
                                         std::size_t beam_size, const std::vector<bool>* excluded = nullptr);

}  // namespace nga::gen
