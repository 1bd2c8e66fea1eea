#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nga/market/types.hpp"

namespace nga::market {

struct EnvironmentConfig {
  std::uint64_t seed = 7;
  // position_bias[j] = -position_decay * j for 0-based slot j
  double position_decay = 0.2;
  double neighbor_weight = 0.5;
  double ad_ctr_offset = -2.0;
  double organic_ctr_offset = -1.6;
  double ad_cvr_offset = -1.5;
  double organic_cvr_offset = -1.8;
  // Euclidean norms of the feature -> logit weight vectors.
  double ctr_weight_norm = 0.7;
  double cvr_weight_norm = 0.6;
};

struct MarketConfig {
  std::size_t ads = 30;
  std::size_t organics = 20;
  std::size_t slots = 10;
  std::size_t feature_dim = 8;
  std::size_t brands = 20;
  double value_log_mean = 0.5;
  double value_log_sd = 0.3;
  double bid_noise_sd = 0.25;
  ConstraintSet constraints{1, 10, true, true};
  EnvironmentConfig environment;

  void validate() const;
};

// Synthetic ground truth with list-wise externalities. For an item at
// 0-based slot j:
//   ctr = sigmoid(base_logit + position_bias[j] + neighbor_weight * mean(base_logit of j-1, j+1))
//   cvr = sigmoid(cvr_logit + neighbor_weight * mean(cvr_logit of j-1, j+1))
// An empty neighborhood contributes 0.
struct GroundTruthModel {
  std::vector<double> position_bias;
  double neighbor_weight = 0.0;
  std::vector<double> ctr_weights;  // over features[1..]
  std::vector<double> cvr_weights;
  double ad_ctr_offset = 0.0;
  double organic_ctr_offset = 0.0;
  double ad_cvr_offset = 0.0;
  double organic_cvr_offset = 0.0;

  static GroundTruthModel from_config(const MarketConfig& config);

  double base_logit(const Candidate& c) const;
  double cvr_logit(const Candidate& c) const;
};

// Feature layout: features[0] is the ad indicator, the rest are standard normal.
PageRequest sample_request(const MarketConfig& config, const GroundTruthModel& model, std::uint64_t seed);
PageRequest sample_request(const MarketConfig& config, std::uint64_t seed);

std::vector<double> true_list_ctr(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model);
std::vector<double> true_list_cvr(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model);

struct Feedback {
  std::vector<int> clicks;
  std::vector<int> conversions;
};

// Bernoulli clicks; conversions are only drawn for clicked slots.
Feedback sample_feedback(std::span<const double> ctr, std::span<const double> cvr, std::uint64_t seed);
Feedback simulate_feedback(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model,
                           std::uint64_t seed);

// Expected platform objective sum_i pay_i * ctr_i + alpha * ctr_i * cvr_i under ground truth.
struct ExpectedOutcome {
  double revenue = 0.0;
  double orders = 0.0;
  double clicks = 0.0;
  std::vector<double> ctr;
  std::vector<double> cvr;
  double objective(double alpha) const { return revenue + alpha * orders; }
};

ExpectedOutcome expected_outcome(const MechanismOutcome& outcome, const PageRequest& request,
                                 const GroundTruthModel& model);

double sigmoid(double x);

}  // namespace nga::market
