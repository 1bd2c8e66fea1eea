#include "nga/evaluator.hpp"

#include <cmath>

#include "nga/diff/checkpoint.hpp"
#include "nga/error.hpp"

namespace nga::eval {

using diff::Tensor;

void EvaluatorConfig::validate() const {
  if (feature_dim == 0 || width == 0 || layers == 0 || ffn_width == 0 || tower_hidden == 0 || slots == 0) {
    fail(ErrorKind::kConfig, "evaluator: dimensions must be positive");
  }
  if (heads == 0 || width % heads != 0) fail(ErrorKind::kConfig, "evaluator: width must be divisible by heads");
  if (!(alpha >= 0.0)) fail(ErrorKind::kConfig, "evaluator: alpha must be nonnegative");
}

nlohmann::json EvaluatorConfig::to_json() const {
  return {{"kind", "evaluator"}, {"feature_dim", feature_dim},   {"width", width}, {"layers", layers},
          {"heads", heads},      {"ffn_width", ffn_width},       {"tower_hidden", tower_hidden},
          {"slots", slots},      {"alpha", alpha},               {"seed", seed}};
}

EvaluatorConfig EvaluatorConfig::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "evaluator") fail(ErrorKind::kConfig, "checkpoint is not an evaluator");
    EvaluatorConfig c;
    c.feature_dim = doc.at("feature_dim").get<std::size_t>();
    c.width = doc.at("width").get<std::size_t>();
    c.layers = doc.at("layers").get<std::size_t>();
    c.heads = doc.at("heads").get<std::size_t>();
    c.ffn_width = doc.at("ffn_width").get<std::size_t>();
    c.tower_hidden = doc.at("tower_hidden").get<std::size_t>();
    c.slots = doc.at("slots").get<std::size_t>();
    c.alpha = doc.at("alpha").get<double>();
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed evaluator config: ") + e.what());
  }
}

SelfExclusionBids self_exclusion_bids(std::span<const double> bids) {
  SelfExclusionBids out;
  out.slots = bids.size();
  if (out.slots < 2) return out;
  out.values.reserve(out.slots * (out.slots - 1));
  for (std::size_t i = 0; i < out.slots; ++i)
    for (std::size_t j = 0; j < out.slots; ++j)
      if (j != i) out.values.push_back(bids[j]);
  return out;
}

double list_reward(std::span<const double> ctr, std::span<const double> cvr, std::span<const double> payment_ratio,
                   std::span<const double> bids, double alpha) {
  const std::size_t k = ctr.size();
  if (cvr.size() != k || payment_ratio.size() != k || bids.size() != k) {
    fail(ErrorKind::kArgument, "list_reward: vectors must share one length");
  }
  double r = 0.0;
  for (std::size_t i = 0; i < k; ++i) r += ctr[i] * bids[i] * payment_ratio[i] + alpha * ctr[i] * cvr[i];
  return r;
}

Tensor list_reward(const TowerOutputs& towers, std::span<const double> bids, double alpha) {
  const std::size_t k = towers.ctr.size();
  if (bids.size() != k) fail(ErrorKind::kArgument, "list_reward: bids do not match the towers");
  const Tensor b = Tensor::from({k}, {bids.begin(), bids.end()});
  const Tensor revenue = diff::mul(diff::mul(towers.ctr, b), towers.payment_ratio);
  const Tensor orders = diff::scale(diff::mul(towers.ctr, towers.cvr), alpha);
  return diff::sum(diff::add(revenue, orders));
}

std::vector<double> slate_allocation_entries(const gen::AllocationMatrix& allocation, const SlateItems& slate) {
  if (slate.size() > allocation.slots()) fail(ErrorKind::kArgument, "slate longer than the allocation matrix");
  std::vector<double> out(slate.size());
  for (std::size_t j = 0; j < slate.size(); ++j) {
    if (slate[j] >= allocation.items()) fail(ErrorKind::kArgument, "slate item outside the allocation matrix");
    out[j] = allocation.at(slate[j], j);
  }
  return out;
}

std::vector<double> slate_bids(const PageRequest& request, const SlateItems& slate) {
  std::vector<double> out(slate.size());
  for (std::size_t j = 0; j < slate.size(); ++j) out[j] = request.candidates.at(slate[j]).bid;
  return out;
}

Evaluator::Evaluator(EvaluatorConfig config) : config_(config) {
  config_.validate();
  diff::Rng rng(config_.seed);
  const auto d = config_.width;
  const auto k = config_.slots;
  item_input_ = diff::make_linear(params_, "list.input", config_.feature_dim, d, rng);
  slot_embeddings_ = params_.add_uniform("list.slot_embedding", {k, d}, d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers_.push_back(diff::make_attention_block(params_, "list.layer" + std::to_string(l), d, config_.heads,
                                                 config_.ffn_width, rng));
  }
  ctr_tower_ = diff::make_mlp(params_, "tower.ctr", d + 1, config_.tower_hidden, 1, rng);
  cvr_tower_ = diff::make_mlp(params_, "tower.cvr", d + 1, config_.tower_hidden, 1, rng);
  pay_tower_ = diff::make_mlp(params_, "tower.pay", d + 2 + (k - 1), config_.tower_hidden, 1, rng);
}

std::vector<Tensor> Evaluator::payment_tower_parameters() const {
  return {pay_tower_.hidden.weight, pay_tower_.hidden.bias, pay_tower_.out.weight, pay_tower_.out.bias};
}

Tensor Evaluator::encode_list(const SlateItems& slate, const PageRequest& request) const {
  const std::size_t k = slate.size();
  if (k == 0 || k > config_.slots) {
    fail(ErrorKind::kArgument, "encode_list: slate length " + std::to_string(k) + " outside [1, " +
                                   std::to_string(config_.slots) + "]");
  }
  std::vector<double> features;
  features.reserve(k * config_.feature_dim);
  for (auto idx : slate) {
    if (idx >= request.candidates.size()) fail(ErrorKind::kArgument, "encode_list: slate item out of range");
    const auto& c = request.candidates[idx];
    if (c.features.size() != config_.feature_dim) {
      fail(ErrorKind::kArgument, "encode_list: candidate " + c.id + " has " + std::to_string(c.features.size()) +
                                     " features, evaluator expects " + std::to_string(config_.feature_dim));
    }
    features.insert(features.end(), c.features.begin(), c.features.end());
  }
  std::vector<std::size_t> rows(k);
  for (std::size_t j = 0; j < k; ++j) rows[j] = j;
  Tensor x = diff::add(item_input_(Tensor::from({k, config_.feature_dim}, std::move(features))),
                       diff::gather_rows(slot_embeddings_, rows));
  for (const auto& layer : layers_) x = diff::attention_block(x, x, layer);
  return x;
}

TowerOutputs Evaluator::predict_towers(const Tensor& list_states, std::span<const double> allocation_entries,
                                       const SelfExclusionBids& exclusion_bids, std::span<const double> bids) const {
  const std::size_t k = list_states.rows();
  if (list_states.rank() != 2 || list_states.cols() != config_.width) {
    fail(ErrorKind::kArgument, "predict_towers: list states must be k x width");
  }
  if (k != config_.slots) {
    fail(ErrorKind::kArgument, "predict_towers: evaluator is built for k=" + std::to_string(config_.slots) +
                                   ", got " + std::to_string(k));
  }
  if (allocation_entries.size() != k || bids.size() != k) {
    fail(ErrorKind::kArgument, "predict_towers: allocation entries and bids must have length k");
  }
  if (exclusion_bids.slots != k || exclusion_bids.values.size() != k * (k - 1)) {
    fail(ErrorKind::kArgument, "predict_towers: self-exclusion bids must be k x (k-1)");
  }
  const Tensor z = Tensor::from({k, 1}, {allocation_entries.begin(), allocation_entries.end()});
  std::vector<double> bid_block;
  bid_block.reserve(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    bid_block.push_back(std::log1p(bids[i]));
    for (std::size_t j = 0; j + 1 < k; ++j) bid_block.push_back(std::log1p(exclusion_bids.at(i, j)));
  }
  const Tensor bid_features = Tensor::from({k, k}, std::move(bid_block));

  const Tensor shared[] = {list_states, z};
  const Tensor quality_input = diff::concat_cols(shared);
  const Tensor pay_parts[] = {list_states, z, bid_features};
  const Tensor pay_input = diff::concat_cols(pay_parts);

  TowerOutputs out;
  out.ctr = diff::reshape(diff::sigmoid(ctr_tower_(quality_input)), {k});
  out.cvr = diff::reshape(diff::sigmoid(cvr_tower_(quality_input)), {k});
  out.payment_ratio = diff::reshape(diff::sigmoid(pay_tower_(pay_input)), {k});
  out.payments.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.payments[i] = bids[i] * out.payment_ratio.at(i);
  return out;
}

TowerOutputs Evaluator::evaluate(const SlateItems& slate, const PageRequest& request,
                                 std::span<const double> allocation_entries) const {
  const auto bids = slate_bids(request, slate);
  return predict_towers(encode_list(slate, request), allocation_entries, self_exclusion_bids(bids), bids);
}

double Evaluator::reward(const SlateItems& slate, const PageRequest& request,
                         std::span<const double> allocation_entries) const {
  diff::NoGradGuard no_grad;
  const auto towers = evaluate(slate, request, allocation_entries);
  const auto bids = slate_bids(request, slate);
  return list_reward(towers.ctr.data(), towers.cvr.data(), towers.payment_ratio.data(), bids, config_.alpha);
}

nlohmann::json Evaluator::to_checkpoint() const { return diff::to_checkpoint(params_, config_.to_json()); }

void Evaluator::load_checkpoint(const nlohmann::json& checkpoint) {
  auto incoming = EvaluatorConfig::from_json(checkpoint.at("model")).to_json();
  auto mine = config_.to_json();
  incoming.erase("seed");
  mine.erase("seed");
  if (incoming != mine) fail(ErrorKind::kConfig, "evaluator checkpoint config does not match the model");
  diff::load_checkpoint(params_, checkpoint);
}

WinnerSelection select_winner(std::span<const SlateItems> candidates, const PageRequest& request,
                              const gen::AllocationMatrix& allocation, const Evaluator& evaluator) {
  if (candidates.empty()) fail(ErrorKind::kArgument, request.request_id + ": select_winner needs a candidate slate");
  diff::NoGradGuard no_grad;
  WinnerSelection out;
  out.rewards.reserve(candidates.size());
  TowerOutputs best;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& slate = candidates[c];
    auto towers = evaluator.evaluate(slate, request, slate_allocation_entries(allocation, slate));
    const auto bids = slate_bids(request, slate);
    const double r = list_reward(towers.ctr.data(), towers.cvr.data(), towers.payment_ratio.data(), bids,
                                 evaluator.config().alpha);
    out.rewards.push_back(r);
    if (c == 0 || r > out.rewards[out.index]) {
      out.index = c;
      best = std::move(towers);
    }
  }
  auto copy = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  out.slate.items = candidates[out.index];
  out.slate.list_ctr = copy(best.ctr);
  out.slate.list_cvr = copy(best.cvr);
  out.slate.payment_ratio = copy(best.payment_ratio);
  out.slate.payments = std::move(best.payments);
  return out;
}

}  // namespace nga::eval
