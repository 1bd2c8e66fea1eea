#include "nga/market/types.hpp"

#include <unordered_set>

#include "nga/error.hpp"

namespace nga::market {

std::size_t PageRequest::ad_count() const {
  std::size_t n = 0;
  for (const auto& c : candidates) n += c.is_ad() ? 1 : 0;
  return n;
}

std::size_t PageRequest::organic_count() const { return candidates.size() - ad_count(); }

std::vector<double> PageRequest::bids() const {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.bid);
  return out;
}

void PageRequest::validate() const {
  if (slots == 0) fail(ErrorKind::kArgument, request_id + ": slot count must be positive");
  if (slots > candidates.size()) {
    fail(ErrorKind::kArgument, request_id + ": " + std::to_string(slots) + " slots exceed " +
                                   std::to_string(candidates.size()) + " candidates");
  }
  if (constraints.min_ad_start < 1 || constraints.min_ad_start > slots + 1) {
    fail(ErrorKind::kArgument, request_id + ": min_ad_start must lie in [1, k+1]");
  }
  if (constraints.max_ads > slots) fail(ErrorKind::kArgument, request_id + ": max_ads exceeds k");
  std::unordered_set<std::string> ids;
  std::unordered_set<std::size_t> ranks;
  const std::size_t dim = candidates.empty() ? 0 : candidates.front().features.size();
  for (const auto& c : candidates) {
    if (!ids.insert(c.id).second) fail(ErrorKind::kArgument, request_id + ": duplicate candidate id " + c.id);
    if (c.features.size() != dim) fail(ErrorKind::kArgument, request_id + ": ragged feature vectors");
    if (!(c.pointwise_ctr >= 0.0 && c.pointwise_ctr <= 1.0 && c.pointwise_cvr >= 0.0 && c.pointwise_cvr <= 1.0)) {
      fail(ErrorKind::kArgument, request_id + ": pointwise probabilities of " + c.id + " outside [0,1]");
    }
    if (c.is_ad()) {
      if (!(c.bid >= 0.0)) fail(ErrorKind::kArgument, request_id + ": negative bid for " + c.id);
    } else {
      if (c.bid != 0.0 || c.private_value != 0.0) {
        fail(ErrorKind::kArgument, request_id + ": organic " + c.id + " carries a bid or value");
      }
      if (c.organic_rank == 0 || !ranks.insert(c.organic_rank).second) {
        fail(ErrorKind::kArgument, request_id + ": organic ranks must be distinct and positive");
      }
    }
  }
}

MechanismOutcome MechanismRef::operator()(const PageRequest& request) const {
  if (run) return run(request);
  if (!allocate || !pay) fail(ErrorKind::kArgument, "mechanism '" + name + "' has no allocation or payment rule");
  MechanismOutcome out;
  out.items = allocate(request);
  out.payments = pay(request, out.items);
  return out;
}

PageRequest with_bid(const PageRequest& request, std::size_t index, double bid) {
  PageRequest copy = request;
  copy.candidates.at(index).bid = bid;
  return copy;
}

}  // namespace nga::market
