#pragma once

// Logged auction outcomes. On disk a dataset is JSON lines, one record per
// line, each carrying "schema_version": 1 and the fields
//   request_id, k, constraints{min_ad_start,max_ads,brand_dedup,organic_order_fixed},
//   candidates[{id,kind,features,bid,private_value,pointwise_ctr,pointwise_cvr,brand,organic_rank}],
//   slate[candidate ids], clicks[], conversions[], payments[], seed
// An empty file is a valid empty dataset.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nga/market/environment.hpp"
#include "nga/market/types.hpp"

namespace nga::market {

inline constexpr int kLogSchemaVersion = 1;

struct LogRecord {
  PageRequest request;
  SlateItems slate;
  std::vector<int> clicks;
  std::vector<int> conversions;
  std::vector<double> payments;  // per click
  std::uint64_t seed = 0;

  bool clicked() const;
};

using LogDataset = std::vector<LogRecord>;

struct LoggingConfig {
  // Probability that a request is served by a uniformly random feasible slate
  // instead of the logging mechanism.
  double epsilon = 0.2;
};

// Deterministic in `seed`; request i is sampled with a seed derived from (seed, i).
LogDataset generate_log_dataset(const MarketConfig& config, const MechanismRef& logging_policy,
                                const LoggingConfig& logging, std::size_t num_requests, std::uint64_t seed);

// Random feasible slate built position by position; nullopt-like empty result on dead end.
SlateItems random_feasible_slate(const PageRequest& request, std::uint64_t seed);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

nlohmann::json request_to_json(const PageRequest& request);
PageRequest request_from_json(const nlohmann::json& doc);
nlohmann::json record_to_json(const LogRecord& record);
LogRecord record_from_json(const nlohmann::json& doc);

void write_log_dataset(const std::filesystem::path& path, const LogDataset& dataset);
LogDataset read_log_dataset(const std::filesystem::path& path);

// Index of the candidate with id `id`; throws kArgument when absent.
std::size_t index_of(const PageRequest& request, const std::string& id);

}  // namespace nga::market
