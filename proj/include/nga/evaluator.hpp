#pragma once

// List-wise evaluator: a transformer list encoder over the slate in display
// order, then three independent sigmoid towers for list-wise pCTR (Theta),
// pCVR (Gamma) and payment ratio (p). Payments are bid * p, so no slot is
// ever charged more than its bid.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "nga/diff/nn.hpp"
#include "nga/generator.hpp"
#include "nga/market/types.hpp"

namespace nga::eval {

using market::PageRequest;
using market::SlateItems;

struct EvaluatorConfig {
  std::size_t feature_dim = 8;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_width = 64;
  std::size_t tower_hidden = 32;
  std::size_t slots = 10;
  double alpha = 5.0;
  std::uint64_t seed = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static EvaluatorConfig from_json(const nlohmann::json& doc);
};

// Row i holds the bids of the other k-1 slate items in display order.
struct SelfExclusionBids {
  std::size_t slots = 0;
  std::vector<double> values;  // slots x (slots - 1), row-major

  double at(std::size_t row, std::size_t col) const { return values[row * (slots - 1) + col]; }
};

SelfExclusionBids self_exclusion_bids(std::span<const double> slate_bids);

struct TowerOutputs {
  diff::Tensor ctr;            // Theta, k
  diff::Tensor cvr;            // Gamma, k
  diff::Tensor payment_ratio;  // p, k
  std::vector<double> payments;
};

// R = sum_i Theta_i * bid_i * p_i + alpha * Theta_i * Gamma_i
double list_reward(std::span<const double> ctr, std::span<const double> cvr, std::span<const double> payment_ratio,
                   std::span<const double> bids, double alpha);
diff::Tensor list_reward(const TowerOutputs& towers, std::span<const double> bids, double alpha);

// Z_{y_j, j} for each slot j of the slate.
std::vector<double> slate_allocation_entries(const gen::AllocationMatrix& allocation, const SlateItems& slate);

std::vector<double> slate_bids(const PageRequest& request, const SlateItems& slate);

class Evaluator {
 public:
  explicit Evaluator(EvaluatorConfig config);
  Evaluator(const Evaluator&) = delete;
  Evaluator& operator=(const Evaluator&) = delete;

  const EvaluatorConfig& config() const { return config_; }
  diff::ParameterSet& parameters() { return params_; }
  const diff::ParameterSet& parameters() const { return params_; }
  // Parameters of the payment tower alone.
  std::vector<diff::Tensor> payment_tower_parameters() const;

  // k x d, order-sensitive through additive slot embeddings.
  diff::Tensor encode_list(const SlateItems& slate, const PageRequest& request) const;

  TowerOutputs predict_towers(const diff::Tensor& list_states, std::span<const double> allocation_entries,
                              const SelfExclusionBids& exclusion_bids, std::span<const double> bids) const;

  // encode_list + predict_towers for one slate.
  TowerOutputs evaluate(const SlateItems& slate, const PageRequest& request,
                        std::span<const double> allocation_entries) const;
  double reward(const SlateItems& slate, const PageRequest& request, std::span<const double> allocation_entries) const;

  // A frozen evaluator is a fixed reward model for generator training.
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  nlohmann::json to_checkpoint() const;
  void load_checkpoint(const nlohmann::json& checkpoint);

 private:
  EvaluatorConfig config_;
  diff::ParameterSet params_;
  diff::Linear item_input_;
  diff::Tensor slot_embeddings_;
  std::vector<diff::AttentionBlock> layers_;
  diff::Mlp ctr_tower_;
  diff::Mlp cvr_tower_;
  diff::Mlp pay_tower_;
  bool frozen_ = false;
};

struct WinnerSelection {
  std::size_t index = 0;
  std::vector<double> rewards;
  market::Slate slate;
};

// Highest reward wins; ties go to the earlier candidate. Throws kArgument on an empty list.
WinnerSelection select_winner(std::span<const SlateItems> candidates, const PageRequest& request,
                              const gen::AllocationMatrix& allocation, const Evaluator& evaluator);

}  // namespace nga::eval
