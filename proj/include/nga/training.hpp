#pragma once

// Two-stage optimization. Stage one fits the evaluator to logged feedback
// (click and conversion cross-entropy) and shapes its payment tower with a
// regret Lagrangian; stage two trains the generator by policy gradient
// against the frozen evaluator, rewarding each placed item by its marginal
// contribution.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nga/diff/tensor.hpp"
#include "nga/evaluator.hpp"
#include "nga/generator.hpp"
#include "nga/market/dataset.hpp"
#include "nga/mechanisms.hpp"

namespace nga::train {

using market::PageRequest;
using market::SlateItems;
using mech::MisreportGrid;

struct LagrangianState {
  std::vector<double> lambda;  // one multiplier per slot, all >= 0
  double rho = 1.0;
  std::size_t period = 100;
  double step = 0.1;

  void validate() const;
};

// Mean binary cross-entropy over every (record, slot).
diff::Tensor loss_pctr(std::span<const diff::Tensor> ctr, std::span<const std::vector<int>> clicks);

// Cross-entropy over clicked slots only; nullopt when nothing was clicked.
std::optional<diff::Tensor> loss_pcvr(std::span<const diff::Tensor> cvr, std::span<const std::vector<int>> clicks,
                                      std::span<const std::vector<int>> conversions);

// Discrete outcome of a regret search for one ad of the truthful winner.
struct AdRegretPlan {
  std::size_t candidate = 0;
  std::size_t slot = 0;  // 0-based slot in the truthful winner
  double value = 0.0;
  double truthful_utility = 0.0;
  double best_utility = 0.0;
  double best_multiplier = 1.0;
  double regret = 0.0;
  // Winner under the best misreport; empty when no misreport beats the truth.
  SlateItems counterfactual;
  std::size_t counterfactual_slot = 0;
  std::vector<double> counterfactual_z;
};

struct RecordRegret {
  SlateItems truthful_slate;
  std::vector<double> truthful_z;
  std::vector<AdRegretPlan> ads;  // ads in the truthful winner, display order

  double total() const;
};

// The mechanism is generator -> beam search -> evaluator winner selection with
// evaluator payments. Values are the request's bids; an ad's utility is
// (value - payment) * Theta at its slot, 0 when unallocated. `hidden` caches
// the generator's bid-independent scores for the request.
RecordRegret estimate_regret(const PageRequest& request, const diff::Tensor& hidden, const gen::Generator& generator,
                             const eval::Evaluator& evaluator, const MisreportGrid& grid, std::size_t beam_size);
RecordRegret estimate_regret(const PageRequest& request, const gen::Generator& generator,
                             const eval::Evaluator& evaluator, const MisreportGrid& grid, std::size_t beam_size);

// Taped per-ad regrets (scalars) following the plan's discrete choices, aligned with plan.ads.
std::vector<diff::Tensor> regret_values(const RecordRegret& plan, const PageRequest& request, const eval::Evaluator& evaluator,
                           bool ctr_gradient);

struct RegretTerm {
  std::vector<diff::Tensor> regrets;  // taped scalars, one per ad
  std::vector<std::size_t> slots;     // multiplier index for each entry
};

// -mean(revenue) + mean over regret terms of sum(lambda * rgt + rho/2 * rgt^2).
// Revenue per record is sum_i bid_i * p_i * Theta_i on the logged slate.
diff::Tensor loss_pay(std::span<const eval::TowerOutputs> towers, std::span<const std::vector<double>> bids,
                      std::span<const RegretTerm> regrets, const LagrangianState& lagrangian, bool ctr_gradient);

// Generator scores and logged-slate allocation entries for one record.
struct RecordContext {
  diff::Tensor hidden;
  std::vector<double> logged_z;
};

RecordContext record_context(const market::LogRecord& record, const gen::Generator& generator);

struct PayLossOptions {
  std::size_t beam_size = 20;
  bool ctr_gradient = false;
};

// Convenience form over a batch of records; `regret_subset` indexes the batch.
diff::Tensor loss_pay(std::span<const market::LogRecord* const> batch, std::span<const RecordContext> contexts,
                      std::span<const std::size_t> regret_subset, const eval::Evaluator& evaluator,
                      const gen::Generator& generator, const LagrangianState& lagrangian, const MisreportGrid& grid,
                      const PayLossOptions& options);

struct EvaluatorTrainingConfig {
  std::size_t epochs = 5;
  std::size_t batch = 64;
  double learning_rate = 3e-3;
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  double rho = 1.0;
  double multiplier_step = 0.1;
  std::size_t multiplier_period = 100;
  std::size_t regret_subsample = 8;
  std::size_t beam_size = 20;
  bool pay_loss_through_ctr = false;
  MisreportGrid grid = MisreportGrid::standard();
  std::uint64_t seed = 11;

  void validate() const;
};

struct EvaluatorEpoch {
  std::size_t epoch = 0;
  double loss_pctr = 0.0;
  double loss_pcvr = 0.0;
  double loss_pay = 0.0;
  double mean_regret = 0.0;
  double mean_lambda = 0.0;
};

struct EvaluatorTrainingReport {
  std::vector<EvaluatorEpoch> epochs;
  LagrangianState lagrangian;

  void write_csv(const std::filesystem::path& path) const;
};

EvaluatorTrainingReport train_evaluator(eval::Evaluator& evaluator, const gen::Generator& generator,
                                        const market::LogDataset& dataset, const EvaluatorTrainingConfig& config);

// Mean of L_pctr over a dataset under the evaluator, no gradients.
double dataset_loss_pctr(const eval::Evaluator& evaluator, const gen::Generator& generator,
                         const market::LogDataset& dataset);

// Mean per-record total regret over the requests of a dataset.
double mean_grid_regret(const eval::Evaluator& evaluator, const gen::Generator& generator,
                        const market::LogDataset& dataset, const MisreportGrid& grid, std::size_t beam_size);

using SlateScorer = std::function<double(const SlateItems&)>;

// r_i = R(winner) - max R over a beam rerun with winner[i] masked out. A
// mask that leaves no feasible slate counts the alternative as 0.
std::vector<double> marginal_contribution(const SlateItems& winner, const PageRequest& request,
                                          const gen::AllocationMatrix& allocation, const SlateScorer& scorer,
                                          std::size_t beam_size);

SlateScorer evaluator_scorer(const eval::Evaluator& evaluator, const PageRequest& request,
                             const gen::AllocationMatrix& allocation);

struct GeneratorTrainingConfig {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double learning_rate = 3e-3;
  std::size_t beam_size = 20;
  std::uint64_t seed = 13;

  void validate() const;
};

struct GeneratorEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
};

struct GeneratorTrainingReport {
  std::vector<GeneratorEpoch> epochs;

  void write_csv(const std::filesystem::path& path) const;
};

// Requires a frozen evaluator (kContract otherwise); never touches its parameters.
GeneratorTrainingReport train_generator(gen::Generator& generator, const eval::Evaluator& evaluator,
                                        const std::vector<PageRequest>& requests,
                                        const GeneratorTrainingConfig& config);

// Policy-gradient surrogate -sum_i r_i * log Z[y_i, i] for one request.
diff::Tensor policy_loss(const gen::AllocationMatrix& allocation, const SlateItems& slate,
                         std::span<const double> rewards);

}  // namespace nga::train
