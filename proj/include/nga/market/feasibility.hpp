#pragma once

#include <string>
#include <vector>

#include "nga/market/types.hpp"

namespace nga::market {

// Incremental feasibility filter for filling a slate position by position.
// Each check is O(1) after an O(n + m) setup; copying is cheap enough for beams.
class FeasibilityTracker {
 public:
  // `excluded` (optional, one flag per candidate) removes candidates outright.
  explicit FeasibilityTracker(const PageRequest& request, const std::vector<bool>* excluded = nullptr);

  // Whether `candidate` may occupy the next position.
  bool allows(std::size_t candidate) const;
  void place(std::size_t candidate);

  // 0-based index of the next position to fill.
  std::size_t position() const { return position_; }
  bool complete() const { return position_ >= slots_; }
  // Human-readable list of constraints active at the next position.
  std::string describe_active() const;

 private:
  std::size_t slots_;
  ConstraintSet constraints_;
  std::vector<const Candidate*> candidates_;
  std::vector<bool> unavailable_;
  std::vector<std::size_t> brand_of_;
  std::vector<bool> brand_used_;
  std::vector<std::size_t> organics_by_rank_;
  std::size_t organic_cursor_ = 0;
  std::size_t ads_placed_ = 0;
  std::size_t position_ = 0;

  std::size_t next_organic() const;
};

// Checks a complete slate against its request. On failure, `reason` (when
// given) names the first violated rule.
bool check_feasible(const SlateItems& slate, const PageRequest& request, std::string* reason = nullptr);

// Throws kContract naming the violation.
void require_feasible(const SlateItems& slate, const PageRequest& request);

}  // namespace nga::market
