#include "nga/mechanisms.hpp"

#include <algorithm>
#include <bit>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "nga/error.hpp"
#include "nga/market/feasibility.hpp"

namespace nga::mech {

using diff::Tensor;

namespace {

double ugsp_score(const market::Candidate& c, double alpha) {
  return c.bid * c.pointwise_ctr + alpha * c.pointwise_ctr * c.pointwise_cvr;
}

std::vector<double> payments_for(const SlateItems& slate, const UgspRanking& ranking) {
  std::vector<double> out(slate.size(), 0.0);
  for (std::size_t s = 0; s < slate.size(); ++s) {
    const auto it = std::find(ranking.ads.begin(), ranking.ads.end(), slate[s]);
    if (it != ranking.ads.end()) out[s] = ranking.payments[static_cast<std::size_t>(it - ranking.ads.begin())];
  }
  return out;
}

}  // namespace

UgspRanking ugsp_allocate(const PageRequest& request, double alpha, bool clamp_payments) {
  std::vector<std::size_t> ads;
  for (std::size_t i = 0; i < request.candidates.size(); ++i)
    if (request.candidates[i].is_ad()) ads.push_back(i);
  std::stable_sort(ads.begin(), ads.end(), [&](std::size_t a, std::size_t b) {
    return ugsp_score(request.candidates[a], alpha) > ugsp_score(request.candidates[b], alpha);
  });
  if (request.constraints.brand_dedup) {
    std::vector<std::size_t> kept;
    std::vector<std::string> seen;
    for (auto i : ads) {
      const auto& brand = request.candidates[i].brand;
      if (!brand.empty() && std::find(seen.begin(), seen.end(), brand) != seen.end()) continue;
      if (!brand.empty()) seen.push_back(brand);
      kept.push_back(i);
    }
    ads = std::move(kept);
  }
  UgspRanking out;
  out.ads = ads;
  out.scores.reserve(ads.size());
  for (auto i : ads) out.scores.push_back(ugsp_score(request.candidates[i], alpha));
  out.payments.resize(ads.size());
  for (std::size_t r = 0; r < ads.size(); ++r) {
    const auto& c = request.candidates[ads[r]];
    const double next = r + 1 < ads.size() ? out.scores[r + 1] : 0.0;
    double price = 0.0;
    if (c.pointwise_ctr > 0.0) price = (next - alpha * c.pointwise_ctr * c.pointwise_cvr) / c.pointwise_ctr;
    out.payments[r] = clamp_payments ? std::clamp(price, 0.0, c.bid) : price;
  }
  return out;
}

SlateItems fixed_slot_allocate(const PageRequest& request, const std::vector<std::size_t>& ad_slots, double alpha) {
  for (auto s : ad_slots) {
    if (s == 0 || s > request.slots) {
      fail(ErrorKind::kArgument, request.request_id + ": ad slot " + std::to_string(s) + " outside [1, k]");
    }
  }
  const auto ranking = ugsp_allocate(request, alpha);
  market::FeasibilityTracker tracker(request);
  std::vector<std::size_t> organics;
  for (std::size_t i = 0; i < request.candidates.size(); ++i)
    if (!request.candidates[i].is_ad()) organics.push_back(i);
  std::stable_sort(organics.begin(), organics.end(), [&](std::size_t a, std::size_t b) {
    return request.candidates[a].organic_rank < request.candidates[b].organic_rank;
  });

  SlateItems slate;
  std::size_t next_ad = 0;
  std::size_t next_organic = 0;
  for (std::size_t slot = 1; slot <= request.slots; ++slot) {
    const bool ad_slot = std::find(ad_slots.begin(), ad_slots.end(), slot) != ad_slots.end();
    std::size_t chosen = request.candidates.size();
    if (ad_slot) {
      for (std::size_t r = next_ad; r < ranking.ads.size(); ++r) {
        if (tracker.allows(ranking.ads[r])) {
          chosen = ranking.ads[r];
          next_ad = r + 1;
          break;
        }
      }
    }
    if (chosen == request.candidates.size()) {
      while (next_organic < organics.size() && !tracker.allows(organics[next_organic])) ++next_organic;
      if (next_organic < organics.size()) chosen = organics[next_organic++];
    }
    if (chosen == request.candidates.size()) {
      fail(ErrorKind::kInfeasible, request.request_id + ": fixed-slot template cannot fill slot " +
                                       std::to_string(slot) + " (" + tracker.describe_active() + ")");
    }
    tracker.place(chosen);
    slate.push_back(chosen);
  }
  return slate;
}

MechanismRef make_ugsp_mechanism(double alpha, std::vector<std::size_t> ad_slots, bool clamp_payments) {
  MechanismRef m;
  m.name = clamp_payments ? "ugsp" : "ugsp-unclamped";
  m.allocate = [alpha, ad_slots](const PageRequest& r) { return fixed_slot_allocate(r, ad_slots, alpha); };
  m.pay = [alpha, clamp_payments](const PageRequest& r, const SlateItems& slate) {
    return payments_for(slate, ugsp_allocate(r, alpha, clamp_payments));
  };
  return m;
}

MechanismRef make_first_price_mechanism(double alpha, std::vector<std::size_t> ad_slots) {
  return make_overcharging_mechanism(alpha, std::move(ad_slots), 1.0);
}

MechanismRef make_overcharging_mechanism(double alpha, std::vector<std::size_t> ad_slots, double factor) {
  MechanismRef m;
  m.name = factor == 1.0 ? "first-price" : "overcharge";
  m.allocate = [alpha, ad_slots](const PageRequest& r) { return fixed_slot_allocate(r, ad_slots, alpha); };
  m.pay = [factor](const PageRequest& r, const SlateItems& slate) {
    std::vector<double> out(slate.size());
    for (std::size_t s = 0; s < slate.size(); ++s) out[s] = factor * r.candidates[slate[s]].bid;
    return out;
  };
  return m;
}

NgaDecision nga_decide(const PageRequest& request, const gen::AllocationMatrix& allocation,
                       const eval::Evaluator& evaluator, std::size_t beam_size) {
  NgaDecision out;
  out.beams = gen::beam_generate(allocation, request, beam_size);
  std::vector<SlateItems> slates;
  slates.reserve(out.beams.size());
  for (const auto& b : out.beams) slates.push_back(b.items);
  out.winner = eval::select_winner(slates, request, allocation, evaluator);
  return out;
}

namespace {

// Identity of a request up to bids: the encoders only read features.
std::uint64_t feature_fingerprint(const PageRequest& request) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (char c : request.request_id) mix(static_cast<unsigned char>(c));
  mix(request.slots);
  for (const auto& c : request.candidates) {
    for (char ch : c.id) mix(static_cast<unsigned char>(ch));
    for (double f : c.features) mix(std::bit_cast<std::uint64_t>(f));
  }
  return h;
}

}  // namespace

MechanismRef make_nga_mechanism(const gen::Generator& generator, const eval::Evaluator& evaluator,
                                std::size_t beam_size) {
  struct Cache {
    std::uint64_t key = 0;
    Tensor hidden;
  };
  auto cache = std::make_shared<Cache>();
  MechanismRef m;
  m.name = "nga";
  m.run = [&generator, &evaluator, beam_size, cache](const PageRequest& request) {
    diff::NoGradGuard no_grad;
    const auto key = feature_fingerprint(request);
    gen::AllocationMatrix allocation;
    if (cache->hidden.defined() && cache->key == key) {
      allocation = generator.allocation_from_hidden(request, cache->hidden);
    } else {
      auto fwd = generator.forward(request);
      cache->key = key;
      cache->hidden = fwd.hidden_scores;
      allocation = fwd.allocation;
    }
    auto decision = nga_decide(request, allocation, evaluator, beam_size);
    MechanismOutcome out;
    out.items = std::move(decision.winner.slate.items);
    out.payments = std::move(decision.winner.slate.payments);
    return out;
  };
  return m;
}

MisreportGrid MisreportGrid::standard() {
  MisreportGrid g;
  for (int i = 1; i <= 15; ++i) g.multipliers.push_back(static_cast<double>(i) / 5.0);
  return g;
}

void MisreportGrid::validate() const {
  if (multipliers.empty()) fail(ErrorKind::kConfig, "misreport grid is empty");
  bool truthful = false;
  for (double g : multipliers) {
    if (!(g > 0.0)) fail(ErrorKind::kConfig, "misreport multipliers must be positive");
    truthful = truthful || g == 1.0;
  }
  if (!truthful) fail(ErrorKind::kConfig, "misreport grid must contain 1.0");
}

namespace {

// Utility of candidate `ad` under an outcome; 0 when not allocated.
double ground_truth_utility(const MechanismOutcome& outcome, const PageRequest& request, std::size_t ad,
                            double value, const market::GroundTruthModel& truth) {
  const auto it = std::find(outcome.items.begin(), outcome.items.end(), ad);
  if (it == outcome.items.end()) return 0.0;
  const auto slot = static_cast<std::size_t>(it - outcome.items.begin());
  const auto ctr = market::true_list_ctr(outcome.items, request, truth);
  return (value - outcome.payments.at(slot)) * ctr[slot];
}

}  // namespace

RegretReport audit_ic(const MechanismRef& mechanism, const std::vector<PageRequest>& requests,
                      const MisreportGrid& grid, const market::GroundTruthModel& truth) {
  grid.validate();
  RegretReport report;
  double total = 0.0;
  for (const auto& request : requests) {
    RequestRegret rr;
    rr.request_id = request.request_id;
    const auto truthful = mechanism(request);
    for (std::size_t s = 0; s < truthful.items.size(); ++s) {
      const auto idx = truthful.items[s];
      const auto& c = request.candidates[idx];
      if (!c.is_ad()) continue;
      AdRegret ar;
      ar.candidate = idx;
      ar.id = c.id;
      ar.truthful_utility = ground_truth_utility(truthful, request, idx, c.private_value, truth);
      ar.best_utility = ar.truthful_utility;
      if (ar.truthful_utility <= kUtilityFloor) {
        ar.excluded = true;
        ++report.excluded;
        rr.ads.push_back(ar);
        continue;
      }
      for (double g : grid.multipliers) {
        if (g == 1.0) continue;
        const auto misreport = market::with_bid(request, idx, g * c.bid);
        const double u = ground_truth_utility(mechanism(misreport), misreport, idx, c.private_value, truth);
        if (u > ar.best_utility) {
          ar.best_utility = u;
          ar.best_multiplier = g;
        }
      }
      ar.regret = std::max(0.0, ar.best_utility - ar.truthful_utility);
      rr.normalized_regret += ar.regret / ar.truthful_utility;
      ++report.included;
      rr.ads.push_back(ar);
    }
    total += rr.normalized_regret;
    report.requests.push_back(std::move(rr));
  }
  report.psi = requests.empty() ? 0.0 : total / static_cast<double>(requests.size());
  return report;
}

std::vector<IrViolation> audit_ir(const MechanismRef& mechanism, const std::vector<PageRequest>& requests) {
  std::vector<IrViolation> out;
  for (const auto& request : requests) {
    const auto outcome = mechanism(request);
    for (std::size_t s = 0; s < outcome.items.size(); ++s) {
      const auto idx = outcome.items[s];
      const double bid = request.candidates[idx].bid;
      if (outcome.payments.at(s) > bid + kIrTolerance) {
        out.push_back({request.request_id, idx, s + 1, bid, outcome.payments[s]});
      }
    }
  }
  return out;
}

nlohmann::json regret_report_to_json(const RegretReport& report) {
  nlohmann::json requests = nlohmann::json::array();
  for (const auto& rr : report.requests) {
    nlohmann::json ads = nlohmann::json::array();
    for (const auto& a : rr.ads) {
      ads.push_back({{"id", a.id},
                     {"truthful_utility", a.truthful_utility},
                     {"best_utility", a.best_utility},
                     {"best_multiplier", a.best_multiplier},
                     {"regret", a.regret},
                     {"excluded", a.excluded}});
    }
    requests.push_back({{"request_id", rr.request_id}, {"normalized_regret", rr.normalized_regret}, {"ads", ads}});
  }
  return {{"psi", report.psi},
          {"included", report.included},
          {"excluded", report.excluded},
          {"requests", std::move(requests)}};
}

}  // namespace nga::mech
