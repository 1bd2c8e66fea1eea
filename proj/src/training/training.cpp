#include "nga/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "nga/diff/adam.hpp"
#include "nga/error.hpp"

namespace nga::train {

using diff::Tensor;

void LagrangianState::validate() const {
  for (double l : lambda)
    if (!(l >= 0.0)) fail(ErrorKind::kConfig, "Lagrange multipliers must be nonnegative");
  if (!(rho > 0.0)) fail(ErrorKind::kConfig, "penalty weight rho must be positive");
  if (period == 0) fail(ErrorKind::kConfig, "multiplier update period must be positive");
  if (!(step >= 0.0)) fail(ErrorKind::kConfig, "multiplier step must be nonnegative");
}

namespace {

void require_open_unit(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!(v > 0.0 && v < 1.0)) fail(ErrorKind::kNumeric, std::string(what) + ": prediction outside (0,1)");
  }
}

// Elementwise log-likelihood y*log(q) + (1-y)*log(1-q).
Tensor log_likelihood(const Tensor& q, const std::vector<int>& labels) {
  std::vector<double> y(labels.begin(), labels.end());
  std::vector<double> not_y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorKind::kArgument, "labels must be 0 or 1");
    not_y[i] = 1.0 - y[i];
  }
  const Tensor yt = Tensor::from({labels.size()}, std::move(y));
  const Tensor nt = Tensor::from({labels.size()}, std::move(not_y));
  const Tensor complement = diff::add_scalar(diff::scale(q, -1.0), 1.0);
  return diff::add(diff::mul(yt, diff::log(q)), diff::mul(nt, diff::log(complement)));
}

Tensor pick(const Tensor& t, std::size_t index) {
  const std::size_t idx[] = {index};
  return diff::gather_flat(t, idx);
}

}  // namespace

Tensor loss_pctr(std::span<const Tensor> ctr, std::span<const std::vector<int>> clicks) {
  if (ctr.size() != clicks.size() || ctr.empty()) fail(ErrorKind::kArgument, "loss_pctr: batch size mismatch");
  Tensor total;
  std::size_t count = 0;
  for (std::size_t r = 0; r < ctr.size(); ++r) {
    if (ctr[r].size() != clicks[r].size()) fail(ErrorKind::kArgument, "loss_pctr: label length mismatch");
    require_open_unit(ctr[r], "loss_pctr");
    const Tensor s = diff::sum(log_likelihood(ctr[r], clicks[r]));
    total = total.defined() ? diff::add(total, s) : s;
    count += clicks[r].size();
  }
  return diff::scale(total, -1.0 / static_cast<double>(count));
}

std::optional<Tensor> loss_pcvr(std::span<const Tensor> cvr, std::span<const std::vector<int>> clicks,
                                std::span<const std::vector<int>> conversions) {
  if (cvr.size() != clicks.size() || cvr.size() != conversions.size()) {
    fail(ErrorKind::kArgument, "loss_pcvr: batch size mismatch");
  }
  Tensor total;
  std::size_t count = 0;
  for (std::size_t r = 0; r < cvr.size(); ++r) {
    const auto& mask = clicks[r];
    if (cvr[r].size() != mask.size() || conversions[r].size() != mask.size()) {
      fail(ErrorKind::kArgument, "loss_pcvr: label length mismatch");
    }
    const std::size_t clicked = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    if (clicked == 0) continue;
    require_open_unit(cvr[r], "loss_pcvr");
    std::vector<double> weights(mask.begin(), mask.end());
    const Tensor w = Tensor::from({mask.size()}, std::move(weights));
    const Tensor s = diff::sum(diff::mul(w, log_likelihood(cvr[r], conversions[r])));
    total = total.defined() ? diff::add(total, s) : s;
    count += clicked;
  }
  if (count == 0) return std::nullopt;
  return diff::scale(total, -1.0 / static_cast<double>(count));
}

double RecordRegret::total() const {
  double t = 0.0;
  for (const auto& a : ads) t += a.regret;
  return t;
}

RecordRegret estimate_regret(const PageRequest& request, const Tensor& hidden, const gen::Generator& generator,
                             const eval::Evaluator& evaluator, const MisreportGrid& grid, std::size_t beam_size) {
  grid.validate();
  diff::NoGradGuard no_grad;
  const auto allocation = generator.allocation_from_hidden(request, hidden);
  const auto truthful = mech::nga_decide(request, allocation, evaluator, beam_size).winner.slate;

  RecordRegret out;
  out.truthful_slate = truthful.items;
  out.truthful_z = eval::slate_allocation_entries(allocation, truthful.items);
  for (std::size_t s = 0; s < truthful.items.size(); ++s) {
    const auto idx = truthful.items[s];
    const auto& c = request.candidates[idx];
    if (!c.is_ad()) continue;
    AdRegretPlan plan;
    plan.candidate = idx;
    plan.slot = s;
    plan.value = c.bid;
    plan.truthful_utility = (plan.value - truthful.payments[s]) * truthful.list_ctr[s];
    plan.best_utility = plan.truthful_utility;
    for (double g : grid.multipliers) {
      if (g == 1.0) continue;
      const auto misreport = market::with_bid(request, idx, g * plan.value);
      const auto alloc = generator.allocation_from_hidden(misreport, hidden);
      const auto winner = mech::nga_decide(misreport, alloc, evaluator, beam_size).winner.slate;
      const auto it = std::find(winner.items.begin(), winner.items.end(), idx);
      if (it == winner.items.end()) continue;
      const auto slot = static_cast<std::size_t>(it - winner.items.begin());
      const double u = (plan.value - winner.payments[slot]) * winner.list_ctr[slot];
      if (u > plan.best_utility) {
        plan.best_utility = u;
        plan.best_multiplier = g;
        plan.counterfactual = winner.items;
        plan.counterfactual_slot = slot;
        plan.counterfactual_z = eval::slate_allocation_entries(alloc, winner.items);
      }
    }
    plan.regret = std::max(0.0, plan.best_utility - plan.truthful_utility);
    out.ads.push_back(std::move(plan));
  }
  return out;
}

RecordRegret estimate_regret(const PageRequest& request, const gen::Generator& generator,
                             const eval::Evaluator& evaluator, const MisreportGrid& grid, std::size_t beam_size) {
  Tensor hidden;
  {
    diff::NoGradGuard no_grad;
    hidden = generator.forward(request).hidden_scores;
  }
  return estimate_regret(request, hidden, generator, evaluator, grid, beam_size);
}

std::vector<Tensor> regret_values(const RecordRegret& plan, const PageRequest& request,
                                  const eval::Evaluator& evaluator, bool ctr_gradient) {
  std::vector<Tensor> out;
  out.reserve(plan.ads.size());
  std::optional<eval::TowerOutputs> truthful;
  for (const auto& ad : plan.ads) {
    if (ad.counterfactual.empty()) {
      out.push_back(Tensor::scalar(0.0));
      continue;
    }
    if (!truthful) truthful = evaluator.evaluate(plan.truthful_slate, request, plan.truthful_z);
    auto theta = [ctr_gradient](const Tensor& ctr, std::size_t slot) {
      const Tensor t = pick(ctr, slot);
      return ctr_gradient ? t : t.detach();
    };
    // u = value * (1 - g * p) * Theta, with g = 1 on the truthful side
    const Tensor p_t = pick(truthful->payment_ratio, ad.slot);
    const Tensor u_t = diff::mul(diff::scale(diff::add_scalar(diff::scale(p_t, -1.0), 1.0), ad.value),
                                 theta(truthful->ctr, ad.slot));
    const auto misreport = market::with_bid(request, ad.candidate, ad.best_multiplier * ad.value);
    const auto cf = evaluator.evaluate(ad.counterfactual, misreport, ad.counterfactual_z);
    const Tensor p_m = pick(cf.payment_ratio, ad.counterfactual_slot);
    const Tensor u_m =
        diff::mul(diff::scale(diff::add_scalar(diff::scale(p_m, -ad.best_multiplier), 1.0), ad.value),
                  theta(cf.ctr, ad.counterfactual_slot));
    out.push_back(diff::relu(diff::sub(u_m, u_t)));
  }
  return out;
}

Tensor loss_pay(std::span<const eval::TowerOutputs> towers, std::span<const std::vector<double>> bids,
                std::span<const RegretTerm> regrets, const LagrangianState& lagrangian, bool ctr_gradient) {
  lagrangian.validate();
  if (towers.size() != bids.size() || towers.empty()) fail(ErrorKind::kArgument, "loss_pay: batch size mismatch");
  Tensor revenue;
  for (std::size_t r = 0; r < towers.size(); ++r) {
    const auto& t = towers[r];
    const Tensor b = Tensor::from({bids[r].size()}, bids[r]);
    const Tensor ctr = ctr_gradient ? t.ctr : t.ctr.detach();
    const Tensor rev = diff::sum(diff::mul(diff::mul(b, t.payment_ratio), ctr));
    revenue = revenue.defined() ? diff::add(revenue, rev) : rev;
  }
  Tensor loss = diff::scale(revenue, -1.0 / static_cast<double>(towers.size()));
  Tensor penalty;
  for (const auto& term : regrets) {
    if (term.regrets.size() != term.slots.size()) fail(ErrorKind::kArgument, "loss_pay: regret slot mismatch");
    for (std::size_t i = 0; i < term.regrets.size(); ++i) {
      const auto slot = term.slots[i];
      const double lambda = slot < lagrangian.lambda.size() ? lagrangian.lambda[slot] : 0.0;
      const Tensor& rgt = term.regrets[i];
      const Tensor p = diff::add(diff::scale(rgt, lambda), diff::scale(diff::mul(rgt, rgt), 0.5 * lagrangian.rho));
      penalty = penalty.defined() ? diff::add(penalty, p) : p;
    }
  }
  if (penalty.defined() && !regrets.empty()) {
    loss = diff::add(loss, diff::scale(penalty, 1.0 / static_cast<double>(regrets.size())));
  }
  return loss;
}

RecordContext record_context(const market::LogRecord& record, const gen::Generator& generator) {
  diff::NoGradGuard no_grad;
  const auto fwd = generator.forward(record.request);
  return {fwd.hidden_scores, eval::slate_allocation_entries(fwd.allocation, record.slate)};
}

namespace {

RegretTerm regret_term(const market::LogRecord& record, const RecordContext& context,
                       const eval::Evaluator& evaluator, const gen::Generator& generator, const MisreportGrid& grid,
                       const PayLossOptions& options, std::vector<double>* plain = nullptr) {
  const auto plan = estimate_regret(record.request, context.hidden, generator, evaluator, grid, options.beam_size);
  RegretTerm term;
  term.regrets = regret_values(plan, record.request, evaluator, options.ctr_gradient);
  for (const auto& ad : plan.ads) {
    term.slots.push_back(ad.slot);
    if (plain) plain->push_back(ad.regret);
  }
  return term;
}

}  // namespace

Tensor loss_pay(std::span<const market::LogRecord* const> batch, std::span<const RecordContext> contexts,
                std::span<const std::size_t> regret_subset, const eval::Evaluator& evaluator,
                const gen::Generator& generator, const LagrangianState& lagrangian, const MisreportGrid& grid,
                const PayLossOptions& options) {
  if (batch.size() != contexts.size()) fail(ErrorKind::kArgument, "loss_pay: contexts do not match the batch");
  std::vector<eval::TowerOutputs> towers;
  std::vector<std::vector<double>> bids;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    towers.push_back(evaluator.evaluate(batch[r]->slate, batch[r]->request, contexts[r].logged_z));
    bids.push_back(eval::slate_bids(batch[r]->request, batch[r]->slate));
  }
  std::vector<RegretTerm> regrets;
  for (auto idx : regret_subset) {
    if (idx >= batch.size()) fail(ErrorKind::kArgument, "loss_pay: regret subset index out of range");
    regrets.push_back(regret_term(*batch[idx], contexts[idx], evaluator, generator, grid, options));
  }
  return loss_pay(towers, bids, regrets, lagrangian, options.ctr_gradient);
}

void EvaluatorTrainingConfig::validate() const {
  if (epochs == 0 || batch == 0) fail(ErrorKind::kConfig, "evaluator training: epochs and batch must be positive");
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "evaluator training: learning rate must be positive");
  if (!(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0)) fail(ErrorKind::kConfig, "evaluator training: weights must be >= 0");
  if (beam_size == 0) fail(ErrorKind::kConfig, "evaluator training: beam size must be positive");
  LagrangianState{{}, rho, multiplier_period, multiplier_step}.validate();
  grid.validate();
}

namespace {

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) fail(ErrorKind::kNumeric, what + " diverged (non-finite loss)");
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace

void EvaluatorTrainingReport::write_csv(const std::filesystem::path& path) const {
  std::string text = "epoch,loss_pctr,loss_pcvr,loss_pay,mean_regret,mean_lambda\n";
  for (const auto& e : epochs) {
    text += std::to_string(e.epoch) + "," + fixed(e.loss_pctr) + "," + fixed(e.loss_pcvr) + "," + fixed(e.loss_pay) +
            "," + fixed(e.mean_regret) + "," + fixed(e.mean_lambda) + "\n";
  }
  write_text(path, text);
}

EvaluatorTrainingReport train_evaluator(eval::Evaluator& evaluator, const gen::Generator& generator,
                                        const market::LogDataset& dataset, const EvaluatorTrainingConfig& config) {
  config.validate();
  if (dataset.empty()) fail(ErrorKind::kArgument, "train_evaluator: empty dataset");
  if (evaluator.frozen()) fail(ErrorKind::kContract, "train_evaluator: evaluator is frozen");
  const std::size_t k = evaluator.config().slots;
  for (const auto& rec : dataset) {
    if (rec.slate.size() != k) fail(ErrorKind::kArgument, "train_evaluator: record slate length differs from k");
  }

  std::vector<RecordContext> contexts;
  contexts.reserve(dataset.size());
  for (const auto& rec : dataset) contexts.push_back(record_context(rec, generator));

  EvaluatorTrainingReport report;
  report.lagrangian = {std::vector<double>(k, 0.0), config.rho, config.multiplier_period, config.multiplier_step};
  auto& lagrangian = report.lagrangian;
  diff::Adam adam({config.learning_rate});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const PayLossOptions pay_options{config.beam_size, config.pay_loss_through_ctr};

  std::vector<double> window_sum(k, 0.0);
  std::vector<std::size_t> window_count(k, 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_pctr = 0.0, sum_pcvr = 0.0, sum_pay = 0.0, sum_regret = 0.0;
    std::size_t batches = 0, pcvr_batches = 0, regret_records = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<eval::TowerOutputs> towers;
      std::vector<Tensor> ctr, cvr;
      std::vector<std::vector<int>> clicks, conversions;
      std::vector<std::vector<double>> bids;
      for (std::size_t i = start; i < end; ++i) {
        const auto& rec = dataset[order[i]];
        auto t = evaluator.evaluate(rec.slate, rec.request, contexts[order[i]].logged_z);
        ctr.push_back(t.ctr);
        cvr.push_back(t.cvr);
        clicks.push_back(rec.clicks);
        conversions.push_back(rec.conversions);
        bids.push_back(eval::slate_bids(rec.request, rec.slate));
        towers.push_back(std::move(t));
      }
      const Tensor l_pctr = loss_pctr(ctr, clicks);
      Tensor total = diff::scale(l_pctr, config.w1);
      sum_pctr += l_pctr.item();
      if (auto l_pcvr = loss_pcvr(cvr, clicks, conversions)) {
        total = diff::add(total, diff::scale(*l_pcvr, config.w2));
        sum_pcvr += l_pcvr->item();
        ++pcvr_batches;
      }
      if (config.w3 > 0.0) {
        std::vector<RegretTerm> regrets;
        const std::size_t subsample = std::min(config.regret_subsample, end - start);
        for (std::size_t j = 0; j < subsample; ++j) {
          const auto idx = order[start + j];
          std::vector<double> plain;
          regrets.push_back(
              regret_term(dataset[idx], contexts[idx], evaluator, generator, config.grid, pay_options, &plain));
          const auto& slots = regrets.back().slots;
          double record_total = 0.0;
          for (std::size_t a = 0; a < plain.size(); ++a) {
            window_sum[slots[a]] += plain[a];
            ++window_count[slots[a]];
            record_total += plain[a];
          }
          sum_regret += record_total;
          ++regret_records;
        }
        const Tensor l_pay = loss_pay(towers, bids, regrets, lagrangian, config.pay_loss_through_ctr);
        total = diff::add(total, diff::scale(l_pay, config.w3));
        sum_pay += l_pay.item();
      }
      check_finite(total.item(), "evaluator training");
      evaluator.parameters().zero_grad();
      diff::backward(total);
      adam.step(evaluator.parameters());
      ++batches;
      ++step;
      if (config.w3 > 0.0 && step % lagrangian.period == 0) {
        for (std::size_t s = 0; s < k; ++s) {
          const double mean = window_count[s] ? window_sum[s] / static_cast<double>(window_count[s]) : 0.0;
          lagrangian.lambda[s] = std::max(0.0, lagrangian.lambda[s] + lagrangian.step * mean);
          window_sum[s] = 0.0;
          window_count[s] = 0;
        }
      }
    }
    EvaluatorEpoch e;
    e.epoch = epoch;
    e.loss_pctr = sum_pctr / static_cast<double>(batches);
    e.loss_pcvr = pcvr_batches ? sum_pcvr / static_cast<double>(pcvr_batches) : 0.0;
    e.loss_pay = sum_pay / static_cast<double>(batches);
    e.mean_regret = regret_records ? sum_regret / static_cast<double>(regret_records) : 0.0;
    e.mean_lambda = std::accumulate(lagrangian.lambda.begin(), lagrangian.lambda.end(), 0.0) / static_cast<double>(k);
    spdlog::debug("evaluator epoch {}: pctr {:.4f} pcvr {:.4f} pay {:.4f} regret {:.4f}", epoch, e.loss_pctr,
                  e.loss_pcvr, e.loss_pay, e.mean_regret);
    report.epochs.push_back(e);
  }
  return report;
}

double dataset_loss_pctr(const eval::Evaluator& evaluator, const gen::Generator& generator,
                         const market::LogDataset& dataset) {
  if (dataset.empty()) fail(ErrorKind::kArgument, "dataset_loss_pctr: empty dataset");
  diff::NoGradGuard no_grad;
  std::vector<Tensor> ctr;
  std::vector<std::vector<int>> clicks;
  for (const auto& rec : dataset) {
    const auto ctx = record_context(rec, generator);
    ctr.push_back(evaluator.evaluate(rec.slate, rec.request, ctx.logged_z).ctr);
    clicks.push_back(rec.clicks);
  }
  return loss_pctr(ctr, clicks).item();
}

double mean_grid_regret(const eval::Evaluator& evaluator, const gen::Generator& generator,
                        const market::LogDataset& dataset, const MisreportGrid& grid, std::size_t beam_size) {
  if (dataset.empty()) return 0.0;
  double total = 0.0;
  for (const auto& rec : dataset) total += estimate_regret(rec.request, generator, evaluator, grid, beam_size).total();
  return total / static_cast<double>(dataset.size());
}

SlateScorer evaluator_scorer(const eval::Evaluator& evaluator, const PageRequest& request,
                             const gen::AllocationMatrix& allocation) {
  return [&evaluator, &request, &allocation](const SlateItems& slate) {
    return evaluator.reward(slate, request, eval::slate_allocation_entries(allocation, slate));
  };
}

std::vector<double> marginal_contribution(const SlateItems& winner, const PageRequest& request,
                                          const gen::AllocationMatrix& allocation, const SlateScorer& scorer,
                                          std::size_t beam_size) {
  const double reward = scorer(winner);
  std::vector<double> out;
  out.reserve(winner.size());
  std::vector<bool> excluded(request.candidates.size(), false);
  for (auto item : winner) {
    excluded[item] = true;
    double alternative = 0.0;
    try {
      const auto beams = gen::beam_generate(allocation, request, beam_size, &excluded);
      for (std::size_t b = 0; b < beams.size(); ++b) {
        const double r = scorer(beams[b].items);
        if (b == 0 || r > alternative) alternative = r;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInfeasible) throw;
      spdlog::warn("{}: no feasible slate without candidate {}; alternative reward taken as 0", request.request_id,
                   request.candidates[item].id);
    }
    excluded[item] = false;
    out.push_back(reward - alternative);
  }
  return out;
}

void GeneratorTrainingConfig::validate() const {
  if (epochs == 0 || batch == 0 || beam_size == 0) {
    fail(ErrorKind::kConfig, "generator training: epochs, batch and beam size must be positive");
  }
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "generator training: learning rate must be positive");
}

void GeneratorTrainingReport::write_csv(const std::filesystem::path& path) const {
  std::string text = "epoch,loss,mean_reward\n";
  for (const auto& e : epochs) text += std::to_string(e.epoch) + "," + fixed(e.loss) + "," + fixed(e.mean_reward) + "\n";
  write_text(path, text);
}

Tensor policy_loss(const gen::AllocationMatrix& allocation, const SlateItems& slate, std::span<const double> rewards) {
  if (slate.size() != rewards.size()) fail(ErrorKind::kArgument, "policy_loss: one reward per slate item required");
  const std::size_t k = allocation.slots();
  std::vector<std::size_t> flat(slate.size());
  for (std::size_t j = 0; j < slate.size(); ++j) flat[j] = slate[j] * k + j;
  const Tensor log_z = diff::gather_flat(allocation.log_probabilities, flat);
  const Tensor r = Tensor::from({rewards.size()}, {rewards.begin(), rewards.end()});
  return diff::scale(diff::sum(diff::mul(r, log_z)), -1.0);
}

GeneratorTrainingReport train_generator(gen::Generator& generator, const eval::Evaluator& evaluator,
                                        const std::vector<PageRequest>& requests,
                                        const GeneratorTrainingConfig& config) {
  config.validate();
  if (!evaluator.frozen()) fail(ErrorKind::kContract, "train_generator: evaluator must be frozen");
  if (requests.empty()) fail(ErrorKind::kArgument, "train_generator: no training requests");

  GeneratorTrainingReport report;
  diff::Adam adam({config.learning_rate});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(requests.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_loss = 0.0, sum_reward = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      Tensor total;
      for (std::size_t i = start; i < end; ++i) {
        const auto& request = requests[order[i]];
        const auto fwd = generator.forward(request);
        mech::NgaDecision decision;
        std::vector<double> rewards;
        {
          diff::NoGradGuard no_grad;
          decision = mech::nga_decide(request, fwd.allocation, evaluator, config.beam_size);
          rewards = marginal_contribution(decision.winner.slate.items, request, fwd.allocation,
                                          evaluator_scorer(evaluator, request, fwd.allocation), config.beam_size);
        }
        sum_reward += decision.winner.rewards[decision.winner.index];
        const Tensor l = policy_loss(fwd.allocation, decision.winner.slate.items, rewards);
        total = total.defined() ? diff::add(total, l) : l;
      }
      total = diff::scale(total, 1.0 / static_cast<double>(end - start));
      check_finite(total.item(), "generator training");
      sum_loss += total.item();
      generator.parameters().zero_grad();
      diff::backward(total);
      adam.step(generator.parameters());
      ++batches;
    }
    GeneratorEpoch e;
    e.epoch = epoch;
    e.loss = sum_loss / static_cast<double>(batches);
    e.mean_reward = sum_reward / static_cast<double>(requests.size());
    spdlog::debug("generator epoch {}: loss {:.4f} reward {:.4f}", epoch, e.loss, e.mean_reward);
    report.epochs.push_back(e);
  }
  return report;
}

}  // namespace nga::train
