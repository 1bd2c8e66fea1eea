#include "nga/market/feasibility.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "nga/error.hpp"

namespace nga::market {

namespace {
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
}

FeasibilityTracker::FeasibilityTracker(const PageRequest& request, const std::vector<bool>* excluded)
    : slots_(request.slots), constraints_(request.constraints) {
  const std::size_t n = request.candidates.size();
  if (excluded && excluded->size() != n) fail(ErrorKind::kArgument, "exclusion mask size mismatch");
  candidates_.reserve(n);
  unavailable_.assign(n, false);
  brand_of_.assign(n, kNone);
  std::unordered_map<std::string, std::size_t> brand_ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = request.candidates[i];
    candidates_.push_back(&c);
    if (excluded && (*excluded)[i]) unavailable_[i] = true;
    if (!c.brand.empty()) brand_of_[i] = brand_ids.emplace(c.brand, brand_ids.size()).first->second;
    if (!c.is_ad()) organics_by_rank_.push_back(i);
  }
  brand_used_.assign(brand_ids.size(), false);
  std::sort(organics_by_rank_.begin(), organics_by_rank_.end(),
            [&](std::size_t a, std::size_t b) { return candidates_[a]->organic_rank < candidates_[b]->organic_rank; });
}

std::size_t FeasibilityTracker::next_organic() const {
  for (std::size_t k = organic_cursor_; k < organics_by_rank_.size(); ++k) {
    if (!unavailable_[organics_by_rank_[k]]) return organics_by_rank_[k];
  }
  return kNone;
}

bool FeasibilityTracker::allows(std::size_t candidate) const {
  if (complete() || candidate >= candidates_.size() || unavailable_[candidate]) return false;
  const Candidate& c = *candidates_[candidate];
  if (c.is_ad()) {
    if (position_ + 1 < constraints_.min_ad_start) return false;
    if (ads_placed_ >= constraints_.max_ads) return false;
  } else if (constraints_.organic_order_fixed && candidate != next_organic()) {
    return false;
  }
  if (constraints_.brand_dedup && brand_of_[candidate] != kNone && brand_used_[brand_of_[candidate]]) return false;
  return true;
}

void FeasibilityTracker::place(std::size_t candidate) {
  if (!allows(candidate)) {
    fail(ErrorKind::kInfeasible, "candidate " + std::to_string(candidate) + " not allowed at position " +
                                     std::to_string(position_ + 1));
  }
  unavailable_[candidate] = true;
  if (candidates_[candidate]->is_ad()) ++ads_placed_;
  if (brand_of_[candidate] != kNone) brand_used_[brand_of_[candidate]] = true;
  while (organic_cursor_ < organics_by_rank_.size() && unavailable_[organics_by_rank_[organic_cursor_]]) {
    ++organic_cursor_;
  }
  ++position_;
}

std::string FeasibilityTracker::describe_active() const {
  std::string out = "no-repeat";
  if (position_ + 1 < constraints_.min_ad_start) {
    out += ", ads banned before slot " + std::to_string(constraints_.min_ad_start);
  }
  if (ads_placed_ >= constraints_.max_ads) out += ", ad limit " + std::to_string(constraints_.max_ads) + " reached";
  if (constraints_.brand_dedup) out += ", brand de-duplication";
  if (constraints_.organic_order_fixed) out += ", fixed organic order";
  return out;
}

bool check_feasible(const SlateItems& slate, const PageRequest& request, std::string* reason) {
  auto reject = [reason](std::string why) {
    if (reason) *reason = std::move(why);
    return false;
  };
  const auto& cons = request.constraints;
  if (slate.size() != request.slots) {
    return reject("slate has " + std::to_string(slate.size()) + " items for " + std::to_string(request.slots) +
                  " slots");
  }
  std::unordered_set<std::size_t> seen;
  std::unordered_set<std::string> brands;
  std::size_t ads = 0;
  std::size_t last_rank = 0;
  for (std::size_t pos = 0; pos < slate.size(); ++pos) {
    const std::size_t idx = slate[pos];
    if (idx >= request.candidates.size()) return reject("candidate index out of range");
    if (!seen.insert(idx).second) return reject("duplicate item " + request.candidates[idx].id);
    const Candidate& c = request.candidates[idx];
    if (c.is_ad()) {
      if (pos + 1 < cons.min_ad_start) return reject("ad " + c.id + " before min_ad_start");
      if (++ads > cons.max_ads) return reject("more than max_ads ads");
    } else if (cons.organic_order_fixed) {
      if (c.organic_rank <= last_rank) return reject("organic order violated at " + c.id);
      last_rank = c.organic_rank;
    }
    if (cons.brand_dedup && !c.brand.empty() && !brands.insert(c.brand).second) {
      return reject("duplicate brand " + c.brand);
    }
  }
  return true;
}

void require_feasible(const SlateItems& slate, const PageRequest& request) {
  std::string why;
  if (!check_feasible(slate, request, &why)) fail(ErrorKind::kContract, request.request_id + ": infeasible slate: " + why);
}

}  // namespace nga::market
