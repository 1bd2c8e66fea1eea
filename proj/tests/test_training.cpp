#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "nga/diff/adam.hpp"
#include "nga/error.hpp"
#include "nga/evaluator.hpp"
#include "nga/generator.hpp"
#include "nga/market/dataset.hpp"
#include "nga/mechanisms.hpp"
#include "nga/training.hpp"
#include "support.hpp"

using namespace nga::train;
using nga::diff::Tensor;
using nga::market::LogDataset;
using nga::market::MarketConfig;
using nga::market::PageRequest;
using nga::market::SlateItems;
using testing::ad;
using testing::make_request;
using testing::brute_force_regret;

namespace {

MarketConfig small_market() {
  MarketConfig c;
  c.ads = 6;
  c.organics = 4;
  c.slots = 4;
  c.constraints = {2, 2, true, true};
  return c;
}

nga::eval::EvaluatorConfig small_evaluator(std::uint64_t seed = 3) {
  nga::eval::EvaluatorConfig c;
  c.slots = 4;
  c.seed = seed;
  return c;
}

LogDataset small_dataset(std::size_t n, std::uint64_t seed = 7) {
  return nga::market::generate_log_dataset(small_market(), nga::mech::make_ugsp_mechanism(5.0, {2, 4}), {0.2}, n,
                                           seed);
}

std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

double bce(double q, int y) { return -(y ? std::log(q) : std::log(1.0 - q)); }

}  // namespace

TEST_CASE("loss_pctr: closed form, mean over all slots, numeric guard") {
  const std::vector<Tensor> half{Tensor::full({3}, 0.5), Tensor::full({3}, 0.5)};
  const std::vector<std::vector<int>> clicks{{1, 0, 0}, {0, 1, 1}};
  CHECK(loss_pctr(half, clicks).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const std::vector<Tensor> q{Tensor::from({2}, {0.2, 0.7}), Tensor::from({3}, {0.9, 0.4, 0.1})};
  const std::vector<std::vector<int>> y{{1, 0}, {1, 1, 0}};
  const double expected =
      (bce(0.2, 1) + bce(0.7, 0) + bce(0.9, 1) + bce(0.4, 1) + bce(0.1, 0)) / 5.0;
  CHECK(loss_pctr(q, y).item() == doctest::Approx(expected).epsilon(1e-14));

  const std::vector<Tensor> bad{Tensor::from({2}, {0.0, 0.5})};
  const std::vector<std::vector<int>> y2{{0, 1}};
  try {
    loss_pctr(bad, y2);
    FAIL("expected a numeric error");
  } catch (const nga::Error& e) {
    CHECK(e.kind() == nga::ErrorKind::kNumeric);
  }
  CHECK_THROWS_AS(loss_pctr(std::vector<Tensor>{}, std::vector<std::vector<int>>{}), nga::Error);
}

TEST_CASE("loss_pcvr masks unclicked slots") {
  const std::vector<Tensor> q{Tensor::from({3}, {0.3, 0.6, 0.8}), Tensor::from({2}, {0.5, 0.5})};
  const std::vector<std::vector<int>> clicks{{1, 0, 1}, {0, 0}};
  const std::vector<std::vector<int>> conv{{1, 0, 0}, {0, 0}};
  const auto l = loss_pcvr(q, clicks, conv);
  REQUIRE(l.has_value());
  CHECK(l->item() == doctest::Approx((bce(0.3, 1) + bce(0.8, 0)) / 2.0).epsilon(1e-14));

  const std::vector<std::vector<int>> none{{0, 0, 0}, {0, 0}};
  CHECK_FALSE(loss_pcvr(q, none, none).has_value());
}

TEST_CASE("estimate_regret matches a brute-force rerun; truthful grid yields zero") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  nga::eval::Evaluator e(small_evaluator());
  const std::vector<double> grid{0.4, 0.8, 1.0, 1.3, 2.0};
  std::size_t ads = 0, positive = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto r = nga::market::sample_request(small_market(), s);
    const auto plan = estimate_regret(r, g, e, MisreportGrid{grid}, 4);
    const auto oracle = brute_force_regret(r, g, e, grid, 4);
    REQUIRE(plan.ads.size() == oracle.size());
    for (std::size_t a = 0; a < oracle.size(); ++a) {
      CHECK(plan.ads[a].regret == doctest::Approx(oracle[a]).epsilon(1e-12));
      CHECK(plan.ads[a].regret >= 0.0);
      CHECK(plan.ads[a].counterfactual.empty() == (plan.ads[a].best_multiplier == 1.0));
      positive += plan.ads[a].regret > 0.0;
      ++ads;
    }
    const auto truthful = estimate_regret(r, g, e, MisreportGrid{{1.0}}, 4);
    CHECK(truthful.total() == 0.0);
    for (const auto& a : truthful.ads) CHECK(a.counterfactual.empty());
  }
  MESSAGE(ads << " winning ads, " << positive << " with positive regret");
  CHECK(ads > 0);
}

TEST_CASE("loss_pay: gradient through the payment tower, pure revenue without regret") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  nga::eval::Evaluator e(small_evaluator(9));
  const auto data = small_dataset(60, 21);
  const MisreportGrid grid{{0.5, 1.0, 1.5, 2.5}};

  // Find records with a positive regret so the penalty term is exercised.
  std::vector<std::size_t> with_regret;
  for (std::size_t i = 0; i < data.size() && with_regret.size() < 2; ++i) {
    if (estimate_regret(data[i].request, g, e, grid, 4).total() > 0.0) with_regret.push_back(i);
  }
  REQUIRE_FALSE(with_regret.empty());

  std::vector<const nga::market::LogRecord*> batch;
  std::vector<RecordContext> contexts;
  for (std::size_t i = 0; i < 6; ++i) {
    batch.push_back(&data[i]);
    contexts.push_back(record_context(data[i], g));
  }
  for (auto i : with_regret) {
    batch.push_back(&data[i]);
    contexts.push_back(record_context(data[i], g));
  }
  std::vector<std::size_t> subset;
  for (std::size_t i = 6; i < batch.size(); ++i) subset.push_back(i);
  const LagrangianState lagrangian{{0.3, 0.1, 0.7, 0.2}, 2.0, 10, 0.1};
  const PayLossOptions options{4, false};

  const auto loss = [&] { return loss_pay(batch, contexts, subset, e, g, lagrangian, grid, options); };
  const auto check = testing::finite_difference_check(e.payment_tower_parameters(), loss, 1e-5, 200);
  MESSAGE("loss_pay gradient check: " << check.checked << " elements, max relative error "
                                      << check.max_relative_error);
  CHECK(check.max_relative_error < 1e-4);
  double largest = 0.0;
  for (const auto& t : e.payment_tower_parameters()) {
    for (double v : t.grad()) largest = std::max(largest, std::abs(v));
  }
  MESSAGE("largest payment-tower gradient " << largest);
  CHECK(largest > 1e-3);

  // With no regret terms the loss is minus the mean expected revenue on the logged slates.
  const std::vector<std::size_t> none;
  const double revenue_loss = loss_pay(batch, contexts, none, e, g, lagrangian, grid, options).item();
  double revenue = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto t = e.evaluate(batch[r]->slate, batch[r]->request, contexts[r].logged_z);
    for (std::size_t s = 0; s < batch[r]->slate.size(); ++s) {
      revenue += batch[r]->request.candidates[batch[r]->slate[s]].bid * t.payment_ratio.at(s) * t.ctr.at(s);
    }
  }
  CHECK(revenue_loss == doctest::Approx(-revenue / static_cast<double>(batch.size())).epsilon(1e-12));
}

TEST_CASE("loss_pay: zero regret terms leave only revenue; the penalty is lambda*r + rho/2*r^2") {
  const nga::eval::TowerOutputs t{Tensor::from({2}, {0.5, 0.25}), Tensor::from({2}, {0.1, 0.1}),
                                  Tensor::from({2}, {0.4, 0.8}), {}};
  const std::vector<nga::eval::TowerOutputs> towers{t};
  const std::vector<std::vector<double>> bids{{2.0, 1.0}};
  const LagrangianState lagrangian{{0.5, 1.5}, 4.0, 1, 0.1};
  const std::vector<RegretTerm> zeros{{{Tensor::scalar(0.0), Tensor::scalar(0.0)}, {0, 1}}};
  const double revenue = 2.0 * 0.4 * 0.5 + 1.0 * 0.8 * 0.25;
  CHECK(loss_pay(towers, bids, zeros, lagrangian, false).item() == doctest::Approx(-revenue));
  const std::vector<RegretTerm> some{{{Tensor::scalar(0.2), Tensor::scalar(0.1)}, {0, 1}}};
  const double penalty = 0.5 * 0.2 + 2.0 * 0.04 + 1.5 * 0.1 + 2.0 * 0.01;
  CHECK(loss_pay(towers, bids, some, lagrangian, false).item() == doctest::Approx(-revenue + penalty));

  for (const auto& broken : {LagrangianState{{-0.1}, 1.0, 1, 0.1}, LagrangianState{{0.0}, 0.0, 1, 0.1},
                             LagrangianState{{0.0}, -2.0, 1, 0.1}, LagrangianState{{0.0}, 1.0, 0, 0.1}}) {
    try {
      loss_pay(towers, bids, zeros, broken, false);
      FAIL("expected a config error");
    } catch (const nga::Error& e) {
      CHECK(e.kind() == nga::ErrorKind::kConfig);
    }
  }
}

TEST_CASE("evaluator training: w3 = 0 freezes the payment tower, L_pctr falls, multipliers grow monotonically") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  const auto data = small_dataset(200, 5);

  nga::eval::Evaluator e(small_evaluator());
  const auto pay_before = flatten(e.payment_tower_parameters());
  const double pctr_before = dataset_loss_pctr(e, g, data);
  EvaluatorTrainingConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 16;
  cfg.w3 = 0.0;
  const auto report = train_evaluator(e, g, data, cfg);
  CHECK(flatten(e.payment_tower_parameters()) == pay_before);
  const double pctr_after = dataset_loss_pctr(e, g, data);
  MESSAGE("L_pctr " << pctr_before << " -> " << pctr_after);
  CHECK(pctr_after < pctr_before);
  CHECK(report.epochs.size() == 4);
  for (double l : report.lagrangian.lambda) CHECK(l == 0.0);

  nga::eval::Evaluator shaped(small_evaluator());
  EvaluatorTrainingConfig full;
  full.epochs = 3;
  full.batch = 16;
  full.multiplier_period = 2;
  full.regret_subsample = 2;
  full.beam_size = 4;
  full.grid = MisreportGrid{{0.5, 1.0, 2.0}};
  const auto r2 = train_evaluator(shaped, g, data, full);
  double previous = 0.0;
  for (const auto& ep : r2.epochs) {
    CHECK(ep.mean_lambda >= previous);
    CHECK(std::isfinite(ep.loss_pay));
    previous = ep.mean_lambda;
  }
  for (double l : r2.lagrangian.lambda) CHECK(l >= 0.0);
  CHECK(flatten(shaped.payment_tower_parameters()) != pay_before);

  shaped.set_frozen(true);
  CHECK_THROWS_AS(train_evaluator(shaped, g, data, full), nga::Error);
  nga::eval::Evaluator fresh(small_evaluator());
  CHECK_THROWS_AS(train_evaluator(fresh, g, LogDataset{}, full), nga::Error);
  auto bad = full;
  bad.rho = -1.0;
  CHECK_THROWS_AS(train_evaluator(fresh, g, data, bad), nga::Error);
}

TEST_CASE("marginal_contribution against a hand scorer") {
  const auto r = make_request({ad("a", 1.0, 0.5), ad("b", 1.0, 0.5), ad("c", 1.0, 0.5)}, 2,
                              testing::open_constraints());
  const auto z = testing::allocation_from({{0.5, 0.2}, {0.3, 0.5}, {0.2, 0.3}});
  const auto scorer_for = [](std::map<std::size_t, double> weights) {
    return [weights](const SlateItems& s) {
      double t = 0.0;
      for (auto i : s) t += weights.at(i);
      return t;
    };
  };
  const auto r1 = marginal_contribution({0, 1}, r, z, scorer_for({{0, 0.5}, {1, 0.4}, {2, 0.0}}), 10);
  CHECK(r1[0] == doctest::Approx(0.5));
  CHECK(r1[1] == doctest::Approx(0.4));

  const auto twin = marginal_contribution({0, 1}, r, z, scorer_for({{0, 0.5}, {1, 0.4}, {2, 0.4}}), 10);
  CHECK(twin[1] == doctest::Approx(0.0));

  const auto alone = make_request({ad("a", 1.0, 0.5)}, 1, testing::open_constraints());
  const auto z1 = testing::allocation_from({{1.0}});
  const auto only = marginal_contribution({0}, alone, z1, scorer_for({{0, 0.7}}), 4);
  CHECK(only[0] == doctest::Approx(0.7));
}

TEST_CASE("policy loss: zero rewards give zero gradient; a positive reward raises the chosen entries") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  const auto r = nga::market::sample_request(small_market(), 4);
  const auto fwd = g.forward(r);
  const auto slate = nga::gen::constrained_decode(fwd.allocation, r);

  g.parameters().zero_grad();
  nga::diff::backward(policy_loss(fwd.allocation, slate, std::vector<double>(slate.size(), 0.0)));
  bool all_zero = true;
  for (const auto& [name, p] : g.parameters().entries()) {
    for (double v : p.grad()) all_zero = all_zero && v == 0.0;
  }
  CHECK(all_zero);

  const auto log_z_sum = [&] {
    const auto z = g.forward(r).allocation;
    double t = 0.0;
    for (std::size_t j = 0; j < slate.size(); ++j) t += z.log_probabilities.at(slate[j], j);
    return t;
  };
  const double before = log_z_sum();
  g.parameters().zero_grad();
  nga::diff::backward(policy_loss(g.forward(r).allocation, slate, std::vector<double>(slate.size(), 1.0)));
  nga::diff::Adam adam({1e-3});
  adam.step(g.parameters());
  CHECK(log_z_sum() > before);
  CHECK_THROWS_AS(policy_loss(fwd.allocation, slate, std::vector<double>{1.0}), nga::Error);
}

TEST_CASE("generator training needs a frozen evaluator and never changes it") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  nga::eval::Evaluator e(small_evaluator());
  std::vector<PageRequest> requests;
  for (std::uint64_t s = 0; s < 12; ++s) requests.push_back(nga::market::sample_request(small_market(), s));
  GeneratorTrainingConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.beam_size = 3;
  try {
    train_generator(g, e, requests, cfg);
    FAIL("expected a contract error");
  } catch (const nga::Error& err) {
    CHECK(err.kind() == nga::ErrorKind::kContract);
  }
  e.set_frozen(true);
  const auto eval_sum = e.parameters().checksum();
  const auto gen_sum = g.parameters().checksum();
  const auto report = train_generator(g, e, requests, cfg);
  CHECK(report.epochs.size() == 2);
  CHECK(e.parameters().checksum() == eval_sum);
  CHECK(g.parameters().checksum() != gen_sum);
  CHECK_THROWS_AS(train_generator(g, e, {}, cfg), nga::Error);
}
