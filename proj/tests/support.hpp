#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nga/diff/tensor.hpp"
#include "nga/generator.hpp"
#include "nga/market/environment.hpp"
#include "nga/market/types.hpp"
#include "nga/mechanisms.hpp"

namespace testing {

using nga::market::Candidate;
using nga::market::ConstraintSet;
using nga::market::ItemKind;
using nga::market::PageRequest;
using nga::market::SlateItems;

inline Candidate ad(const std::string& id, double bid, double ctr, double cvr = 0.0, const std::string& brand = "",
                    std::size_t feature_dim = 8) {
  Candidate c;
  c.id = id;
  c.kind = ItemKind::kAd;
  c.bid = bid;
  c.private_value = bid;
  c.pointwise_ctr = ctr;
  c.pointwise_cvr = cvr;
  c.brand = brand.empty() ? "brand-" + id : brand;
  c.features.assign(feature_dim, 0.0);
  return c;
}

inline Candidate organic(const std::string& id, std::size_t rank, double ctr = 0.1, double cvr = 0.1,
                         std::size_t feature_dim = 8) {
  Candidate c;
  c.id = id;
  c.kind = ItemKind::kOrganic;
  c.organic_rank = rank;
  c.pointwise_ctr = ctr;
  c.pointwise_cvr = cvr;
  c.features.assign(feature_dim, 0.0);
  return c;
}

inline PageRequest make_request(std::vector<Candidate> candidates, std::size_t slots, ConstraintSet constraints) {
  PageRequest r;
  r.request_id = "req";
  r.candidates = std::move(candidates);
  r.slots = slots;
  r.constraints = constraints;
  return r;
}

inline ConstraintSet open_constraints(std::size_t max_ads = 100) { return {1, max_ads, false, false}; }

// Column-major input convenience: rows are items, columns are slots.
inline nga::gen::AllocationMatrix allocation_from(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), k = rows.front().size();
  std::vector<double> flat, logs;
  for (const auto& r : rows) {
    for (double v : r) {
      flat.push_back(v);
      logs.push_back(std::log(v));
    }
  }
  return {nga::diff::Tensor::from({n, k}, flat), nga::diff::Tensor::from({n, k}, logs)};
}

// Random small request; features, priors and brands drawn from `rng`.
inline PageRequest random_small_request(std::mt19937_64& rng, std::size_t ads, std::size_t organics,
                                        std::size_t slots, std::size_t feature_dim = 8) {
  std::uniform_real_distribution<double> u(0.05, 0.9), b(0.2, 3.0), f(-1.0, 1.0);
  std::uniform_int_distribution<int> brand(0, 2), flag(0, 1);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < ads; ++i) {
    auto c = ad("a" + std::to_string(i), b(rng), u(rng), u(rng), "b" + std::to_string(brand(rng)), feature_dim);
    c.private_value = c.bid * std::exp(0.2 * f(rng));
    for (auto& x : c.features) x = f(rng);
    cands.push_back(c);
  }
  for (std::size_t i = 0; i < organics; ++i) {
    auto c = organic("o" + std::to_string(i), i + 1, u(rng), u(rng), feature_dim);
    for (auto& x : c.features) x = f(rng);
    cands.push_back(c);
  }
  std::shuffle(cands.begin(), cands.end(), rng);
  ConstraintSet cs;
  cs.min_ad_start = std::uniform_int_distribution<std::size_t>(1, slots + 1)(rng);
  cs.max_ads = std::uniform_int_distribution<std::size_t>(0, slots)(rng);
  cs.brand_dedup = flag(rng);
  cs.organic_order_fixed = flag(rng);
  auto r = make_request(std::move(cands), slots, cs);
  r.request_id = "rand";
  return r;
}

// Position-local feasibility, restated from the decoding rules: no repeats,
// ads only from min_ad_start and at most max_ads of them, one ad per brand
// under brand_dedup, and only the lowest-ranked unused organic under a fixed
// organic order.
inline bool oracle_allows(const PageRequest& r, const SlateItems& prefix, std::size_t cand,
                          const std::vector<bool>* excluded = nullptr) {
  if (prefix.size() >= r.slots) return false;
  if (excluded && (*excluded)[cand]) return false;
  if (std::find(prefix.begin(), prefix.end(), cand) != prefix.end()) return false;
  const auto& c = r.candidates[cand];
  if (c.is_ad()) {
    if (prefix.size() + 1 < r.constraints.min_ad_start) return false;
    std::size_t ads = 0;
    for (auto p : prefix) ads += r.candidates[p].is_ad();
    if (ads >= r.constraints.max_ads) return false;
  } else if (r.constraints.organic_order_fixed) {
    std::size_t lowest = 0;
    bool found = false;
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      const auto& o = r.candidates[i];
      if (o.is_ad() || (excluded && (*excluded)[i])) continue;
      if (std::find(prefix.begin(), prefix.end(), i) != prefix.end()) continue;
      if (!found || o.organic_rank < r.candidates[lowest].organic_rank) lowest = i, found = true;
    }
    if (!found || lowest != cand) return false;
  }
  if (r.constraints.brand_dedup && !c.brand.empty()) {
    for (auto p : prefix) {
      if (r.candidates[p].brand == c.brand) return false;
    }
  }
  return true;
}

// Every complete slate reachable position by position under oracle_allows.
inline std::vector<SlateItems> enumerate_slates(const PageRequest& r, const std::vector<bool>* excluded = nullptr) {
  std::vector<SlateItems> out;
  std::function<void(SlateItems&)> rec = [&](SlateItems& prefix) {
    if (prefix.size() == r.slots) {
      out.push_back(prefix);
      return;
    }
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      if (!oracle_allows(r, prefix, i, excluded)) continue;
      prefix.push_back(i);
      rec(prefix);
      prefix.pop_back();
    }
  };
  SlateItems prefix;
  rec(prefix);
  return out;
}

inline double log_prob(const nga::gen::AllocationMatrix& z, const SlateItems& s) {
  double out = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) out += std::log(z.at(s[j], j));
  return out;
}

// Position-by-position argmax over the oracle's feasible set; empty on a dead end.
inline SlateItems oracle_greedy(const nga::gen::AllocationMatrix& z, const PageRequest& r,
                                const std::vector<bool>* excluded = nullptr) {
  SlateItems s;
  for (std::size_t j = 0; j < r.slots; ++j) {
    std::size_t best = r.size();
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!testing::oracle_allows(r, s, i, excluded)) continue;
      if (best == r.size() || z.at(i, j) > z.at(best, j)) best = i;
    }
    if (best == r.size()) return {};
    s.push_back(best);
  }
  return s;
}

struct OracleReport {
  double psi = 0.0;
  std::size_t included = 0, excluded = 0;
  std::vector<double> regrets;
};

// Audit restated directly: rerun the mechanism once per (allocated ad, multiplier).
inline OracleReport brute_force_audit(const nga::market::MechanismRef& mech, const std::vector<PageRequest>& requests,
                                      const std::vector<double>& grid, const nga::market::GroundTruthModel& truth) {
  auto utility = [&](const nga::market::MechanismOutcome& o, const PageRequest& r, std::size_t who, double value) {
    for (std::size_t s = 0; s < o.items.size(); ++s) {
      if (o.items[s] == who) return (value - o.payments[s]) * nga::market::true_list_ctr(o.items, r, truth)[s];
    }
    return 0.0;
  };
  OracleReport out;
  double total = 0.0;
  for (const auto& r : requests) {
    const auto base = mech(r);
    double normalized = 0.0;
    for (auto who : base.items) {
      if (!r.candidates[who].is_ad()) continue;
      const double v = r.candidates[who].private_value;
      const double u = utility(base, r, who, v);
      if (u <= 1e-9) {
        ++out.excluded;
        continue;
      }
      double best = u;
      for (double g : grid) {
        if (g == 1.0) continue;
        auto mis = r;
        mis.candidates[who].bid = g * r.candidates[who].bid;
        best = std::max(best, utility(mech(mis), mis, who, v));
      }
      const double rgt = std::max(0.0, best - u);
      out.regrets.push_back(rgt);
      normalized += rgt / u;
      ++out.included;
    }
    total += normalized;
  }
  out.psi = requests.empty() ? 0.0 : total / static_cast<double>(requests.size());
  return out;
}

// Regret of each winning ad of the generate-evaluate mechanism, restated with
// a fresh generator pass per misreport; values are the logged bids.
inline std::vector<double> brute_force_regret(const PageRequest& request, const nga::gen::Generator& g,
                                              const nga::eval::Evaluator& e, const std::vector<double>& grid,
                                              std::size_t beam) {
  const auto winner = [&](const PageRequest& r) {
    return nga::mech::nga_decide(r, g.forward(r).allocation, e, beam).winner.slate;
  };
  const auto truthful = winner(request);
  std::vector<double> out;
  for (std::size_t s = 0; s < truthful.items.size(); ++s) {
    const auto idx = truthful.items[s];
    if (!request.candidates[idx].is_ad()) continue;
    const double v = request.candidates[idx].bid;
    const double u = (v - truthful.payments[s]) * truthful.list_ctr[s];
    double best = u;
    for (double m : grid) {
      auto mis = request;
      mis.candidates[idx].bid = m * v;
      const auto w = winner(mis);
      for (std::size_t j = 0; j < w.items.size(); ++j) {
        if (w.items[j] == idx) best = std::max(best, (v - w.payments[j]) * w.list_ctr[j]);
      }
    }
    out.push_back(std::max(0.0, best - u));
  }
  return out;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences for every element of every
// leaf in `leaves`. `loss` must rebuild the graph from the leaves' current values.
inline GradCheck finite_difference_check(std::vector<nga::diff::Tensor> leaves,
                                         const std::function<nga::diff::Tensor()>& loss, double h = 1e-4,
                                         std::size_t max_elements_per_leaf = 1000) {
  using nga::diff::Tensor;
  for (auto& l : leaves) l.zero_grad();
  nga::diff::backward(loss());
  GradCheck out;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.mutable_data();
    const std::size_t stride = std::max<std::size_t>(1, values.size() / max_elements_per_leaf);
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      double plus, minus;
      {
        nga::diff::NoGradGuard guard;
        values[i] = saved + h;
        plus = loss().item();
        values[i] = saved - h;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      // Gradients indistinguishable from zero carry no relative signal.
      if (std::abs(analytic[i] - numeric) > 1e-9) out.max_relative_error = std::max(out.max_relative_error, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace testing
