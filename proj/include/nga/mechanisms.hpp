#pragma once

// Auction mechanisms (uGSP with a fixed-position template, the NGA
// generate-evaluate pipeline, and test-only pricing rules) plus the
// mechanism-agnostic incentive audits.

#include <cstddef>
#include <string>
#include <vector>

#include "nga/evaluator.hpp"
#include "nga/generator.hpp"
#include "nga/market/environment.hpp"
#include "nga/market/types.hpp"

namespace nga::mech {

using market::MechanismOutcome;
using market::MechanismRef;
using market::PageRequest;
using market::SlateItems;

struct UgspRanking {
  std::vector<std::size_t> ads;  // candidate indices, best first
  std::vector<double> scores;    // bid * ctr + alpha * ctr * cvr
  std::vector<double> payments;  // per click, clamped to [0, bid]
};

// Ranks ads by uGSP score (stable on ties). With brand_dedup only the best ad
// of each brand takes part. Each ad pays the smallest per-click bid that keeps
// its rank against the next ad; the last ad pays against a score of 0.
UgspRanking ugsp_allocate(const PageRequest& request, double alpha, bool clamp_payments = true);

// Ranked ads fill `ad_slots` (1-based) in order; organics fill every other
// slot in organic_rank order. An ad slot with no ad left takes an organic.
SlateItems fixed_slot_allocate(const PageRequest& request, const std::vector<std::size_t>& ad_slots, double alpha);

MechanismRef make_ugsp_mechanism(double alpha, std::vector<std::size_t> ad_slots, bool clamp_payments = true);

// Same allocation as uGSP; every ad pays its own bid.
MechanismRef make_first_price_mechanism(double alpha, std::vector<std::size_t> ad_slots);

// Test mechanism charging a multiple of the bid.
MechanismRef make_overcharging_mechanism(double alpha, std::vector<std::size_t> ad_slots, double factor);

struct NgaDecision {
  std::vector<gen::BeamCandidate> beams;
  eval::WinnerSelection winner;
};

// Beam search over Z, evaluator scoring, winner selection.
NgaDecision nga_decide(const PageRequest& request, const gen::AllocationMatrix& allocation,
                       const eval::Evaluator& evaluator, std::size_t beam_size);

// Generator forward + nga_decide. The generator encoders ignore bids, so the
// mechanism reuses hidden scores across re-bid copies of the same request.
MechanismRef make_nga_mechanism(const gen::Generator& generator, const eval::Evaluator& evaluator,
                                std::size_t beam_size);

struct MisreportGrid {
  std::vector<double> multipliers;

  // 0.2, 0.4, ..., 3.0
  static MisreportGrid standard();
  // Throws kConfig unless all multipliers are positive and 1.0 is present.
  void validate() const;
};

inline constexpr double kUtilityFloor = 1e-9;

struct AdRegret {
  std::size_t candidate = 0;
  std::string id;
  double truthful_utility = 0.0;
  double best_utility = 0.0;
  double best_multiplier = 1.0;
  double regret = 0.0;
  bool excluded = false;  // truthful utility <= kUtilityFloor
};

struct RequestRegret {
  std::string request_id;
  std::vector<AdRegret> ads;  // ads allocated under truthful bidding
  double normalized_regret = 0.0;  // sum of regret / utility over included ads
};

struct RegretReport {
  std::vector<RequestRegret> requests;
  double psi = 0.0;  // fraction; mean over requests of normalized_regret
  std::size_t included = 0;
  std::size_t excluded = 0;
};

// Truthful profile = the request's bids; utilities use each ad's private
// value and ground-truth list CTRs: u = (value - payment) * ctr. Each
// allocated ad misreports g * bid for every g in the grid with others fixed.
RegretReport audit_ic(const MechanismRef& mechanism, const std::vector<PageRequest>& requests,
                      const MisreportGrid& grid, const market::GroundTruthModel& truth);

struct IrViolation {
  std::string request_id;
  std::size_t candidate = 0;
  std::size_t slot = 0;
  double bid = 0.0;
  double payment = 0.0;
};

inline constexpr double kIrTolerance = 1e-12;

std::vector<IrViolation> audit_ir(const MechanismRef& mechanism, const std::vector<PageRequest>& requests);

nlohmann::json regret_report_to_json(const RegretReport& report);

}  // namespace nga::mech
