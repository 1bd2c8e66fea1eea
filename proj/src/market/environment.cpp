#include "nga/market/environment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nga/error.hpp"
#include "nga/market/feasibility.hpp"

namespace nga::market {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void MarketConfig::validate() const {
  if (slots == 0) fail(ErrorKind::kConfig, "market: slot count must be positive");
  if (slots > ads + organics) {
    fail(ErrorKind::kConfig, "market: k=" + std::to_string(slots) + " exceeds n+m=" + std::to_string(ads + organics));
  }
  if (feature_dim < 2) fail(ErrorKind::kConfig, "market: feature_dim must be at least 2");
  if (ads > 0 && brands == 0) fail(ErrorKind::kConfig, "market: brand pool must be nonempty");
  if (constraints.min_ad_start < 1 || constraints.min_ad_start > slots + 1) {
    fail(ErrorKind::kConfig, "market: min_ad_start must lie in [1, k+1]");
  }
  if (constraints.max_ads > slots) fail(ErrorKind::kConfig, "market: max_ads exceeds k");
  if (value_log_sd < 0 || bid_noise_sd < 0) fail(ErrorKind::kConfig, "market: negative spread");
}

namespace {

std::vector<double> random_direction(std::mt19937_64& rng, std::size_t dim, double norm) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(dim);
  double sq = 0.0;
  for (auto& v : w) {
    v = normal(rng);
    sq += v * v;
  }
  const double s = sq > 0 ? norm / std::sqrt(sq) : 0.0;
  for (auto& v : w) v *= s;
  return w;
}

double feature_dot(const std::vector<double>& weights, const Candidate& c) {
  double acc = 0.0;
  const std::size_t n = std::min(weights.size(), c.features.size() > 0 ? c.features.size() - 1 : 0);
  for (std::size_t i = 0; i < n; ++i) acc += weights[i] * c.features[i + 1];
  return acc;
}

template <typename LogitFn>
std::vector<double> list_probabilities(const SlateItems& slate, const PageRequest& request, LogitFn logit,
                                       const std::vector<double>* position_bias, double neighbor_weight) {
  require_feasible(slate, request);
  const std::size_t k = slate.size();
  std::vector<double> base(k);
  for (std::size_t j = 0; j < k; ++j) base[j] = logit(request.candidates[slate[j]]);
  std::vector<double> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    double neighbor_sum = 0.0;
    std::size_t neighbors = 0;
    if (j > 0) {
      neighbor_sum += base[j - 1];
      ++neighbors;
    }
    if (j + 1 < k) {
      neighbor_sum += base[j + 1];
      ++neighbors;
    }
    const double neighbor_term = neighbors ? neighbor_weight * neighbor_sum / static_cast<double>(neighbors) : 0.0;
    const double bias = position_bias && j < position_bias->size() ? (*position_bias)[j] : 0.0;
    out[j] = sigmoid(base[j] + bias + neighbor_term);
  }
  return out;
}

}  // namespace

GroundTruthModel GroundTruthModel::from_config(const MarketConfig& config) {
  const auto& env = config.environment;
  std::mt19937_64 rng(env.seed);
  GroundTruthModel m;
  m.position_bias.resize(config.slots);
  for (std::size_t j = 0; j < config.slots; ++j) m.position_bias[j] = -env.position_decay * static_cast<double>(j);
  m.neighbor_weight = env.neighbor_weight;
  m.ctr_weights = random_direction(rng, config.feature_dim - 1, env.ctr_weight_norm);
  m.cvr_weights = random_direction(rng, config.feature_dim - 1, env.cvr_weight_norm);
  m.ad_ctr_offset = env.ad_ctr_offset;
  m.organic_ctr_offset = env.organic_ctr_offset;
  m.ad_cvr_offset = env.ad_cvr_offset;
  m.organic_cvr_offset = env.organic_cvr_offset;
  return m;
}

double GroundTruthModel::base_logit(const Candidate& c) const {
  return (c.is_ad() ? ad_ctr_offset : organic_ctr_offset) + feature_dot(ctr_weights, c);
}

double GroundTruthModel::cvr_logit(const Candidate& c) const {
  return (c.is_ad() ? ad_cvr_offset : organic_cvr_offset) + feature_dot(cvr_weights, c);
}

PageRequest sample_request(const MarketConfig& config, const GroundTruthModel& model, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> brand_pick(0, config.brands > 0 ? config.brands - 1 : 0);

  PageRequest r;
  r.request_id = "req-" + std::to_string(seed);
  r.slots = config.slots;
  r.constraints = config.constraints;
  r.seed = seed;

  auto make_features = [&](bool is_ad) {
    std::vector<double> f(config.feature_dim);
    f[0] = is_ad ? 1.0 : 0.0;
    for (std::size_t i = 1; i < f.size(); ++i) f[i] = normal(rng);
    return f;
  };

  for (std::size_t i = 0; i < config.ads; ++i) {
    Candidate c;
    c.id = "ad-" + std::to_string(i);
    c.kind = ItemKind::kAd;
    c.features = make_features(true);
    c.private_value = std::exp(config.value_log_mean + config.value_log_sd * normal(rng));
    c.bid = c.private_value * std::exp(config.bid_noise_sd * normal(rng));
    c.brand = "brand-" + std::to_string(brand_pick(rng));
    c.pointwise_ctr = sigmoid(model.base_logit(c));
    c.pointwise_cvr = sigmoid(model.cvr_logit(c));
    r.candidates.push_back(std::move(c));
  }

  std::vector<Candidate> organics;
  for (std::size_t i = 0; i < config.organics; ++i) {
    Candidate c;
    c.kind = ItemKind::kOrganic;
    c.features = make_features(false);
    c.pointwise_ctr = sigmoid(model.base_logit(c));
    c.pointwise_cvr = sigmoid(model.cvr_logit(c));
    organics.push_back(std::move(c));
  }
  // upstream ranking by estimated order volume
  std::stable_sort(organics.begin(), organics.end(), [](const Candidate& a, const Candidate& b) {
    return a.pointwise_ctr * a.pointwise_cvr > b.pointwise_ctr * b.pointwise_cvr;
  });
  for (std::size_t i = 0; i < organics.size(); ++i) {
    organics[i].id = "org-" + std::to_string(i);
    organics[i].brand = "org-" + std::to_string(i);
    organics[i].organic_rank = i + 1;
    r.candidates.push_back(std::move(organics[i]));
  }
  return r;
}

PageRequest sample_request(const MarketConfig& config, std::uint64_t seed) {
  return sample_request(config, GroundTruthModel::from_config(config), seed);
}

std::vector<double> true_list_ctr(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model) {
  return list_probabilities(
      slate, request, [&](const Candidate& c) { return model.base_logit(c); }, &model.position_bias,
      model.neighbor_weight);
}

std::vector<double> true_list_cvr(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model) {
  return list_probabilities(
      slate, request, [&](const Candidate& c) { return model.cvr_logit(c); }, nullptr, model.neighbor_weight);
}

Feedback sample_feedback(std::span<const double> ctr, std::span<const double> cvr, std::uint64_t seed) {
  if (ctr.size() != cvr.size()) fail(ErrorKind::kArgument, "sample_feedback: ctr/cvr length mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Feedback fb;
  fb.clicks.resize(ctr.size());
  fb.conversions.resize(ctr.size());
  for (std::size_t i = 0; i < ctr.size(); ++i) {
    // both draws always consumed so slot i's outcome does not depend on earlier slots
    const double u_click = unit(rng);
    const double u_conv = unit(rng);
    fb.clicks[i] = u_click < ctr[i] ? 1 : 0;
    fb.conversions[i] = fb.clicks[i] && u_conv < cvr[i] ? 1 : 0;
  }
  return fb;
}

Feedback simulate_feedback(const SlateItems& slate, const PageRequest& request, const GroundTruthModel& model,
                           std::uint64_t seed) {
  return sample_feedback(true_list_ctr(slate, request, model), true_list_cvr(slate, request, model), seed);
}

ExpectedOutcome expected_outcome(const MechanismOutcome& outcome, const PageRequest& request,
                                 const GroundTruthModel& model) {
  if (outcome.payments.size() != outcome.items.size()) {
    fail(ErrorKind::kArgument, "expected_outcome: payments not aligned with slate");
  }
  ExpectedOutcome e;
  e.ctr = true_list_ctr(outcome.items, request, model);
  e.cvr = true_list_cvr(outcome.items, request, model);
  for (std::size_t j = 0; j < outcome.items.size(); ++j) {
    e.revenue += outcome.payments[j] * e.ctr[j];
    e.orders += e.ctr[j] * e.cvr[j];
    e.clicks += e.ctr[j];
  }
  return e;
}

}  // namespace nga::market
