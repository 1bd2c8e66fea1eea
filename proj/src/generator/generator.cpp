#include "nga/generator.hpp"

#include <algorithm>
#include <cmath>

#include "nga/diff/checkpoint.hpp"
#include "nga/error.hpp"
#include "nga/market/feasibility.hpp"

namespace nga::gen {

using diff::Tensor;

void GeneratorConfig::validate() const {
  if (feature_dim == 0 || width == 0 || layers == 0 || ffn_width == 0 || max_slots == 0) {
    fail(ErrorKind::kConfig, "generator: dimensions must be positive");
  }
  if (heads == 0 || width % heads != 0) fail(ErrorKind::kConfig, "generator: width must be divisible by heads");
  if (!(alpha >= 0.0)) fail(ErrorKind::kConfig, "generator: alpha must be nonnegative");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"kind", "generator"},     {"feature_dim", feature_dim}, {"width", width},
          {"layers", layers},        {"heads", heads},             {"ffn_width", ffn_width},
          {"max_slots", max_slots},  {"alpha", alpha},             {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "generator") fail(ErrorKind::kConfig, "checkpoint is not a generator");
    GeneratorConfig c;
    c.feature_dim = doc.at("feature_dim").get<std::size_t>();
    c.width = doc.at("width").get<std::size_t>();
    c.layers = doc.at("layers").get<std::size_t>();
    c.heads = doc.at("heads").get<std::size_t>();
    c.ffn_width = doc.at("ffn_width").get<std::size_t>();
    c.max_slots = doc.at("max_slots").get<std::size_t>();
    c.alpha = doc.at("alpha").get<double>();
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed generator config: ") + e.what());
  }
}

double prior_score(const market::Candidate& c, double alpha) {
  return c.pointwise_ctr * c.bid + alpha * c.pointwise_ctr * c.pointwise_cvr;
}

Generator::Generator(GeneratorConfig config) : config_(config) {
  config_.validate();
  diff::Rng rng(config_.seed);
  const auto d = config_.width;
  item_input_ = diff::make_linear(params_, "item.input", config_.feature_dim, d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    item_layers_.push_back(diff::make_attention_block(params_, "item.layer" + std::to_string(l), d, config_.heads,
                                                      config_.ffn_width, rng));
  }
  position_embeddings_ = params_.add_uniform("position.embedding", {config_.max_slots, d}, d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto prefix = "position.layer" + std::to_string(l);
    position_layers_.push_back(
        {diff::make_attention_block(params_, prefix + ".self", d, config_.heads, config_.ffn_width, rng),
         diff::make_attention_block(params_, prefix + ".cross", d, config_.heads, config_.ffn_width, rng)});
  }
}

Tensor Generator::encode_items(const PageRequest& request) const {
  const std::size_t n = request.candidates.size();
  if (n == 0) fail(ErrorKind::kArgument, "encode_items: empty candidate set");
  std::vector<double> features;
  features.reserve(n * config_.feature_dim);
  for (const auto& c : request.candidates) {
    if (c.features.size() != config_.feature_dim) {
      fail(ErrorKind::kArgument, "encode_items: candidate " + c.id + " has " + std::to_string(c.features.size()) +
                                     " features, generator expects " + std::to_string(config_.feature_dim));
    }
    features.insert(features.end(), c.features.begin(), c.features.end());
  }
  Tensor x = item_input_(Tensor::from({n, config_.feature_dim}, std::move(features)));
  for (const auto& layer : item_layers_) x = diff::attention_block(x, x, layer);
  return x;
}

Tensor Generator::run_position_layers(Tensor states, const Tensor& item_states, const GeneratorHooks& hooks) const {
  diff::AttentionOptions cross_options;
  cross_options.uniform_weights = hooks.uniform_cross_attention;
  for (const auto& layer : position_layers_) {
    states = diff::attention_block(states, states, layer.self_attention);
    states = diff::attention_block(states, item_states, layer.cross_attention, cross_options);
  }
  return states;
}

Tensor Generator::encode_positions(std::size_t slots, const Tensor& item_states, const GeneratorHooks& hooks) const {
  if (slots == 0 || slots > config_.max_slots) {
    fail(ErrorKind::kArgument, "encode_positions: k=" + std::to_string(slots) + " outside [1, " +
                                   std::to_string(config_.max_slots) + "]");
  }
  if (item_states.size() == 0 || item_states.cols() != config_.width) {
    fail(ErrorKind::kArgument, "encode_positions: item states must be nonempty with the model width");
  }
  std::vector<std::size_t> rows(slots);
  for (std::size_t j = 0; j < slots; ++j) rows[j] = j;
  return run_position_layers(diff::gather_rows(position_embeddings_, rows), item_states, hooks);
}

Tensor Generator::hidden_scores(const Tensor& item_states, const Tensor& position_states) const {
  return diff::scale(diff::matmul_nt(item_states, position_states), 1.0 / std::sqrt(static_cast<double>(config_.width)));
}

namespace {

AllocationMatrix softmax_columns(const Tensor& logits) {
  for (double v : logits.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "allocation matrix: non-finite logit");
  }
  return {diff::softmax(logits, 0), diff::log_softmax(logits, 0)};
}

Tensor prior_logits(const PageRequest& request, std::size_t slots, double alpha) {
  const std::size_t n = request.candidates.size();
  std::vector<double> prior(n * slots);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = prior_score(request.candidates[i], alpha);
    std::fill_n(prior.begin() + static_cast<std::ptrdiff_t>(i * slots), slots, s);
  }
  return Tensor::from({n, slots}, std::move(prior));
}

}  // namespace

AllocationMatrix Generator::allocation_matrix(const PageRequest& request, const Tensor& item_states,
                                              const Tensor& position_states, const GeneratorHooks& hooks) const {
  if (item_states.rows() != request.candidates.size()) {
    fail(ErrorKind::kArgument, "allocation_matrix: item states do not match the request");
  }
  const std::size_t k = position_states.rows();
  const Tensor hidden = hooks.zero_hidden_scores ? Tensor::zeros({request.candidates.size(), k})
                                                 : hidden_scores(item_states, position_states);
  return allocation_from_hidden(request, hidden);
}

AllocationMatrix Generator::allocation_from_hidden(const PageRequest& request, const Tensor& hidden) const {
  if (hidden.rank() != 2 || hidden.rows() != request.candidates.size()) {
    fail(ErrorKind::kArgument, "allocation_from_hidden: hidden scores do not match the request");
  }
  return softmax_columns(diff::add(prior_logits(request, hidden.cols(), config_.alpha), hidden));
}

GeneratorForward Generator::forward(const PageRequest& request, const GeneratorHooks& hooks) const {
  calls_.fetch_add(1);
  GeneratorForward out;
  out.item_states = encode_items(request);
  out.position_states = encode_positions(request.slots, out.item_states, hooks);
  out.hidden_scores = hooks.zero_hidden_scores ? Tensor::zeros({request.candidates.size(), request.slots})
                                               : hidden_scores(out.item_states, out.position_states);
  out.allocation = allocation_from_hidden(request, out.hidden_scores);
  return out;
}

SlateItems Generator::decode_autoregressive(const PageRequest& request) const {
  diff::NoGradGuard no_grad;
  const std::size_t n = request.candidates.size();
  const std::size_t k = request.slots;
  const std::size_t d = config_.width;
  const Tensor items = encode_items(request);
  const auto item_data = items.data();
  const auto pos_data = position_embeddings_.data();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  market::FeasibilityTracker tracker(request);
  SlateItems slate;
  for (std::size_t j = 0; j < k; ++j) {
    calls_.fetch_add(1);
    std::vector<double> inputs(pos_data.begin(), pos_data.begin() + static_cast<std::ptrdiff_t>(k * d));
    for (std::size_t p = 0; p < slate.size(); ++p)
      for (std::size_t c = 0; c < d; ++c) inputs[p * d + c] += item_data[slate[p] * d + c];
    const Tensor positions = run_position_layers(Tensor::from({k, d}, std::move(inputs)), items, {});
    const auto t = positions.data();

    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += item_data[i * d + c] * t[j * d + c];
      logits[i] = prior_score(request.candidates[i], config_.alpha) + dot * inv_sqrt_d;
    }
    const Tensor z = diff::softmax(Tensor::from({n}, std::move(logits)), 0);
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (tracker.allows(i) && (best == n || z.at(i) > z.at(best))) best = i;
    }
    if (best == n) {
      fail(ErrorKind::kInfeasible, request.request_id + ": no feasible candidate at slot " + std::to_string(j + 1) +
                                       " (" + tracker.describe_active() + ")");
    }
    tracker.place(best);
    slate.push_back(best);
  }
  return slate;
}

nlohmann::json Generator::to_checkpoint() const { return diff::to_checkpoint(params_, config_.to_json()); }

void Generator::load_checkpoint(const nlohmann::json& checkpoint) {
  const auto cfg = GeneratorConfig::from_json(checkpoint.at("model"));
  if (cfg.to_json() != config_.to_json()) {
    // seed only affects initialization
    auto a = cfg.to_json(), b = config_.to_json();
    a.erase("seed");
    b.erase("seed");
    if (a != b) fail(ErrorKind::kConfig, "generator checkpoint config does not match the model");
  }
  diff::load_checkpoint(params_, checkpoint);
}

// ---------------------------------------------------------------------------
// decoding

namespace {

void check_dimensions(const AllocationMatrix& allocation, const PageRequest& request) {
  if (allocation.items() != request.candidates.size() || allocation.slots() != request.slots) {
    fail(ErrorKind::kArgument, request.request_id + ": allocation matrix shape does not match the request");
  }
}

}  // namespace

SlateItems constrained_decode(const AllocationMatrix& allocation, const PageRequest& request,
                              const std::vector<bool>* excluded) {
  check_dimensions(allocation, request);
  const std::size_t n = allocation.items();
  const std::size_t k = allocation.slots();
  const auto z = allocation.probabilities.data();
  market::FeasibilityTracker tracker(request, excluded);
  SlateItems slate;
  slate.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (tracker.allows(i) && (best == n || z[i * k + j] > z[best * k + j])) best = i;
    }
    if (best == n) {
      fail(ErrorKind::kInfeasible, request.request_id + ": no feasible candidate at slot " + std::to_string(j + 1) +
                                       " (" + tracker.describe_active() + ")");
    }
    tracker.place(best);
    slate.push_back(best);
  }
  return slate;
}

std::vector<BeamCandidate> beam_generate(const AllocationMatrix& allocation, const PageRequest& request,
                                         std::size_t beam_size, const std::vector<bool>* excluded) {
  if (beam_size == 0) fail(ErrorKind::kArgument, "beam_generate: beam_size must be at least 1");
  check_dimensions(allocation, request);
  const std::size_t n = allocation.items();
  const std::size_t k = allocation.slots();
  const auto z = allocation.probabilities.data();

  struct Partial {
    SlateItems items;
    market::FeasibilityTracker tracker;
    double score;
    double last_z;
  };

  struct Expansion {
    std::size_t parent;
    std::size_t item;
    double score;
    double last_z;
  };

  std::vector<Partial> beam;
  beam.push_back({{}, market::FeasibilityTracker(request, excluded), 0.0, 0.0});
  std::vector<Expansion> expanded;
  for (std::size_t j = 0; j < k; ++j) {
    expanded.clear();
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const auto& p = beam[b];
      for (std::size_t i = 0; i < n; ++i) {
        if (p.tracker.allows(i)) expanded.push_back({b, i, p.score + std::log(z[i * k + j]), z[i * k + j]});
      }
    }
    if (expanded.empty()) {
      fail(ErrorKind::kInfeasible, request.request_id + ": no feasible slate (dead end at slot " +
                                       std::to_string(j + 1) + ")");
    }
    // Higher score first; equal scores fall back to the larger last-step
    // probability, then the lexicographically smaller sequence. This keeps
    // beam_size 1 identical to greedy decoding even when log() collapses ties.
    auto better = [&beam](const Expansion& a, const Expansion& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.last_z != b.last_z) return a.last_z > b.last_z;
      const auto& pa = beam[a.parent].items;
      const auto& pb = beam[b.parent].items;
      if (pa != pb) return pa < pb;
      return a.item < b.item;
    };
    const std::size_t keep = std::min(beam_size, expanded.size());
    std::partial_sort(expanded.begin(), expanded.begin() + static_cast<std::ptrdiff_t>(keep), expanded.end(), better);
    std::vector<Partial> next;
    next.reserve(keep);
    for (std::size_t e = 0; e < keep; ++e) {
      const auto& x = expanded[e];
      Partial p{beam[x.parent].items, beam[x.parent].tracker, x.score, x.last_z};
      p.items.push_back(x.item);
      p.tracker.place(x.item);
      next.push_back(std::move(p));
    }
    beam = std::move(next);
  }
  std::vector<BeamCandidate> out;
  out.reserve(beam.size());
  for (auto& p : beam) out.push_back({std::move(p.items), p.score});
  return out;
}

}  // namespace nga::gen
