#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "nga/error.hpp"
#include "nga/generator.hpp"
#include "nga/market/environment.hpp"
#include "nga/market/feasibility.hpp"
#include "support.hpp"

using namespace nga::gen;
using nga::diff::Tensor;
using nga::market::PageRequest;
using nga::market::SlateItems;
using testing::ad;
using testing::allocation_from;
using testing::log_prob;
using testing::oracle_greedy;
using testing::make_request;
using testing::organic;

namespace {

GeneratorConfig small_config(double alpha = 5.0) {
  GeneratorConfig c;
  c.alpha = alpha;
  c.seed = 3;
  return c;
}

void check_same_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb, double tol = 1e-12) {
  for (std::size_t c = 0; c < a.cols(); ++c) CHECK(a.at(ra, c) == doctest::Approx(b.at(rb, c)).epsilon(tol));
}

}  // namespace

TEST_CASE("encode_items: shape, duplicate symmetry, permutation equivariance") {
  Generator g(small_config());
  std::mt19937_64 rng(1);
  auto r = testing::random_small_request(rng, 3, 2, 2);
  const auto x = g.encode_items(r);
  CHECK(x.shape() == nga::diff::Shape{5, 32});

  auto dup = r;
  dup.candidates[1].features = dup.candidates[0].features;
  const auto xd = g.encode_items(dup);
  check_same_rows(xd, 0, xd, 1);

  auto perm = r;
  const std::vector<std::size_t> order{3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i) perm.candidates[i] = r.candidates[order[i]];
  const auto xp = g.encode_items(perm);
  for (std::size_t i = 0; i < 5; ++i) check_same_rows(xp, i, x, order[i], 1e-10);

  auto bad = r;
  bad.candidates[0].features.push_back(0.0);
  CHECK_THROWS_AS(g.encode_items(bad), nga::Error);
}

TEST_CASE("encode_positions: shapes, uniform cross-attention invariance, limits") {
  Generator g(small_config());
  std::mt19937_64 rng(2);
  auto r = testing::random_small_request(rng, 6, 5, 10);
  const auto x = g.encode_items(r);
  CHECK(g.encode_positions(10, x).shape() == nga::diff::Shape{10, 32});
  CHECK(g.encode_positions(1, x).shape() == nga::diff::Shape{1, 32});
  CHECK_THROWS_AS(g.encode_positions(11, x), nga::Error);

  GeneratorHooks uniform;
  uniform.uniform_cross_attention = true;
  const auto t = g.encode_positions(4, x, uniform);
  std::vector<std::size_t> rev(x.rows());
  for (std::size_t i = 0; i < rev.size(); ++i) rev[i] = rev.size() - 1 - i;
  const auto tp = g.encode_positions(4, nga::diff::gather_rows(x, rev), uniform);
  for (std::size_t j = 0; j < 4; ++j) check_same_rows(t, j, tp, j, 1e-10);
}

TEST_CASE("allocation matrix: symmetric column, closed form, organic logit") {
  {
    Generator g(small_config());
    auto r = make_request({ad("a", 1.0, 0.3, 0.2), ad("b", 1.0, 0.3, 0.2)}, 1, testing::open_constraints());
    r.candidates[1].brand = r.candidates[0].brand;
    const auto z = g.forward(r).allocation;
    CHECK(z.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(z.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  {
    Generator g(small_config(0.0));
    auto r = make_request({ad("a", 0.0, 0.5), ad("b", std::log(3.0), 1.0)}, 1, testing::open_constraints());
    r.candidates[0].bid = 0.0;
    GeneratorHooks zero;
    zero.zero_hidden_scores = true;
    const auto z = g.forward(r, zero).allocation;
    CHECK(z.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(z.at(1, 0) == doctest::Approx(0.75).epsilon(1e-12));
  }
  {
    Generator g(small_config(5.0));
    std::mt19937_64 rng(3);
    auto r = testing::random_small_request(rng, 3, 3, 3);
    const auto fwd = g.forward(r);
    // Reconstruct softmax over items from the documented logit for every column.
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> logit(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const auto& c = r.candidates[i];
        const double prior = c.is_ad() ? c.pointwise_ctr * c.bid + 5.0 * c.pointwise_ctr * c.pointwise_cvr
                                       : 5.0 * c.pointwise_ctr * c.pointwise_cvr;
        logit[i] = prior + fwd.hidden_scores.at(i, j);
      }
      const double mx = *std::max_element(logit.begin(), logit.end());
      double s = 0;
      for (double l : logit) s += std::exp(l - mx);
      for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(fwd.allocation.at(i, j) == doctest::Approx(std::exp(logit[i] - mx) / s).epsilon(1e-12));
      }
    }
    double dot = 0;
    for (std::size_t c = 0; c < 32; ++c) dot += fwd.item_states.at(0, c) * fwd.position_states.at(1, c);
    CHECK(fwd.hidden_scores.at(0, 1) == doctest::Approx(dot / std::sqrt(32.0)).epsilon(1e-12));
  }
}

TEST_CASE("allocation_from_hidden equals a fresh forward after a bid change") {
  Generator g(small_config());
  std::mt19937_64 rng(4);
  const auto r = testing::random_small_request(rng, 4, 2, 3);
  const auto fwd = g.forward(r);
  std::size_t adi = 0;
  while (!r.candidates[adi].is_ad()) ++adi;
  const auto rebid = nga::market::with_bid(r, adi, r.candidates[adi].bid * 1.7);
  const auto a = g.allocation_from_hidden(rebid, fwd.hidden_scores);
  const auto b = g.forward(rebid).allocation;
  for (std::size_t i = 0; i < a.probabilities.size(); ++i) CHECK(a.probabilities.at(i) == b.probabilities.at(i));
}

TEST_CASE("constrained_decode: hand example and unconstrained argmax") {
  const auto r = make_request({ad("i1", 1.0, 0.1), organic("i2", 1), organic("i3", 2)}, 2, {2, 10, false, false});
  const auto z = allocation_from({{0.6, 0.1}, {0.3, 0.7}, {0.1, 0.2}});
  CHECK(constrained_decode(z, r) == SlateItems{1, 2});

  const auto free = make_request({ad("a", 1, 0.1), ad("b", 1, 0.1), ad("c", 1, 0.1)}, 1, testing::open_constraints());
  CHECK(constrained_decode(allocation_from({{0.2}, {0.5}, {0.3}}), free) == SlateItems{1});
  CHECK(constrained_decode(allocation_from({{0.4}, {0.4}, {0.2}}), free) == SlateItems{0});
}

TEST_CASE("constrained_decode: infeasibility names the position and constraints") {
  const auto r = make_request({ad("a", 1, 0.1), organic("o", 1)}, 2, {2, 1, false, true});
  const auto z = allocation_from({{0.5, 0.5}, {0.5, 0.5}});
  CHECK(constrained_decode(z, r) == SlateItems{1, 0});
  const auto banned = make_request({ad("a", 1, 0.1), ad("b", 1, 0.1)}, 1, {2, 1, false, true});
  try {
    constrained_decode(allocation_from({{0.5}, {0.5}}), banned);
    FAIL("expected infeasible");
  } catch (const nga::Error& e) {
    CHECK(e.kind() == nga::ErrorKind::kInfeasible);
    CHECK(std::string(e.what()).find("slot 1") != std::string::npos);
    CHECK(std::string(e.what()).find("ads banned") != std::string::npos);
  }
}

TEST_CASE("decoding oracles: exhaustive enumeration for n+m <= 6, k <= 3") {
  Generator g(small_config());
  std::mt19937_64 rng(2024);
  std::size_t instances = 0, with_slates = 0;
  for (std::size_t total = 1; total <= 6; ++total) {
    for (std::size_t ads = 0; ads <= total; ++ads) {
      for (std::size_t k = 1; k <= std::min<std::size_t>(3, total); ++k) {
        for (int rep = 0; rep < 12; ++rep) {
          auto r = testing::random_small_request(rng, ads, total - ads, k);
          const auto z = g.forward(r).allocation;
          std::vector<bool> mask(r.size(), false);
          const bool use_mask = rep % 3 == 2;
          if (use_mask) mask[std::uniform_int_distribution<std::size_t>(0, r.size() - 1)(rng)] = true;
          const auto* excluded = use_mask ? &mask : nullptr;
          ++instances;

          const auto greedy = oracle_greedy(z, r, excluded);
          if (greedy.empty()) {
            CHECK_THROWS_AS(constrained_decode(z, r, excluded), nga::Error);
          } else {
            CHECK(constrained_decode(z, r, excluded) == greedy);
            CHECK(nga::market::check_feasible(greedy, r));
          }

          const auto all = testing::enumerate_slates(r, excluded);
          if (all.empty()) {
            CHECK_THROWS_AS(beam_generate(z, r, 500, excluded), nga::Error);
            continue;
          }
          ++with_slates;
          const auto beams = beam_generate(z, r, 500, excluded);
          REQUIRE(beams.size() == all.size());
          auto best = all.front();
          for (const auto& s : all) {
            if (log_prob(z, s) > log_prob(z, best)) best = s;
          }
          CHECK(beams.front().items == best);
          CHECK(beams.front().log_probability == log_prob(z, best));
          std::map<SlateItems, int> seen;
          for (std::size_t b = 0; b < beams.size(); ++b) {
            CHECK(++seen[beams[b].items] == 1);
            CHECK(std::find(all.begin(), all.end(), beams[b].items) != all.end());
            if (b) CHECK(beams[b - 1].log_probability >= beams[b].log_probability);
          }
        }
      }
    }
  }
  MESSAGE(instances << " instances, " << with_slates << " with feasible slates");
  CHECK(with_slates > 100);
}

TEST_CASE("beam_size 1 equals greedy on 1000 random instances") {
  Generator g(small_config());
  std::mt19937_64 rng(77);
  nga::market::MarketConfig cfg;
  cfg.ads = 8;
  cfg.organics = 6;
  cfg.slots = 6;
  cfg.constraints = {2, 3, true, true};
  std::size_t compared = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto r = nga::market::sample_request(cfg, s);
    const auto z = g.forward(r).allocation;
    const auto greedy = constrained_decode(z, r);
    const auto beam = beam_generate(z, r, 1);
    REQUIRE(beam.size() == 1);
    CHECK(beam.front().items == greedy);
    ++compared;
  }
  CHECK(compared == 1000);
}

TEST_CASE("beam: forced unique slate and argument errors") {
  const auto r = make_request({organic("o1", 1), organic("o2", 2), organic("o3", 3)}, 3, {4, 0, false, true});
  const auto z = allocation_from({{0.1, 0.2, 0.7}, {0.3, 0.3, 0.2}, {0.6, 0.5, 0.1}});
  for (std::size_t b : {1u, 5u, 20u}) {
    const auto out = beam_generate(z, r, b);
    REQUIRE(out.size() == 1);
    CHECK(out.front().items == SlateItems{0, 1, 2});
  }
  CHECK_THROWS_AS(beam_generate(z, r, 0), nga::Error);
}

TEST_CASE("network call counter: one forward per request, k for the autoregressive reference") {
  Generator g(small_config());
  nga::market::MarketConfig cfg;
  cfg.constraints = {3, 4, true, true};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = nga::market::sample_request(cfg, s);
    g.reset_network_calls();
    const auto z = g.forward(r).allocation;
    beam_generate(z, r, 20);
    constrained_decode(z, r);
    CHECK(g.network_calls() == 1);
    g.reset_network_calls();
    const auto ar = g.decode_autoregressive(r);
    CHECK(g.network_calls() == r.slots);
    CHECK(nga::market::check_feasible(ar, r));
  }
}

TEST_CASE("generator checkpoint round trip") {
  Generator a(small_config());
  auto cfg = small_config();
  cfg.seed = 99;
  Generator b(cfg);
  CHECK(a.parameters().checksum() != b.parameters().checksum());
  b.load_checkpoint(a.to_checkpoint());
  CHECK(a.parameters().checksum() == b.parameters().checksum());
  auto other = small_config();
  other.width = 16;
  Generator c(other);
  CHECK_THROWS_AS(c.load_checkpoint(a.to_checkpoint()), nga::Error);
}
