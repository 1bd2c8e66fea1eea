#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nga::market {

enum class ItemKind { kAd, kOrganic };

struct Candidate {
  std::string id;
  ItemKind kind = ItemKind::kAd;
  std::vector<double> features;
  double bid = 0.0;            // per click; 0 for organics
  double private_value = 0.0;  // per click; 0 for organics
  double pointwise_ctr = 0.0;
  double pointwise_cvr = 0.0;
  std::string brand;
  std::size_t organic_rank = 0;  // 1 = top organic; 0 for ads

  bool is_ad() const { return kind == ItemKind::kAd; }
};

// Slot indices in constraints are 1-based; min_ad_start == k + 1 bans ads.
struct ConstraintSet {
  std::size_t min_ad_start = 1;
  std::size_t max_ads = 0;
  bool brand_dedup = false;
  bool organic_order_fixed = true;
};

struct PageRequest {
  std::string request_id;
  std::vector<Candidate> candidates;
  std::size_t slots = 0;
  ConstraintSet constraints;
  std::uint64_t seed = 0;

  std::size_t size() const { return candidates.size(); }
  std::size_t ad_count() const;
  std::size_t organic_count() const;
  // Throws kArgument on broken invariants (duplicate ids, k > n + m, organic with a bid, ...).
  void validate() const;
  std::vector<double> bids() const;
};

// Candidate indices in display order.
using SlateItems = std::vector<std::size_t>;

struct Slate {
  SlateItems items;
  std::vector<double> list_ctr;
  std::vector<double> list_cvr;
  std::vector<double> payment_ratio;
  std::vector<double> payments;  // per click, bid * payment_ratio
};

struct MechanismOutcome {
  SlateItems items;
  std::vector<double> payments;  // per click, aligned with items; 0 for organics
};

// An auction mechanism: allocation rule plus payment rule. `run` is an
// optional fused path; when empty the two rules are composed.
struct MechanismRef {
  std::string name;
  std::function<SlateItems(const PageRequest&)> allocate;
  std::function<std::vector<double>(const PageRequest&, const SlateItems&)> pay;
  std::function<MechanismOutcome(const PageRequest&)> run;

  MechanismOutcome operator()(const PageRequest& request) const;
};

// Copy of `request` with candidate `index` bidding `bid`.
PageRequest with_bid(const PageRequest& request, std::size_t index, double bid);

}  // namespace nga::market
