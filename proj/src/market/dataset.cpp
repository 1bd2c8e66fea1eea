#include "nga/market/dataset.hpp"

#include <fstream>
#include <random>

#include "nga/error.hpp"
#include "nga/market/feasibility.hpp"

namespace nga::market {

using nlohmann::json;

bool LogRecord::clicked() const {
  for (int c : clicks)
    if (c) return true;
  return false;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SlateItems random_feasible_slate(const PageRequest& request, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 32; ++attempt) {
    FeasibilityTracker tracker(request);
    SlateItems slate;
    while (!tracker.complete()) {
      std::vector<std::size_t> allowed;
      for (std::size_t i = 0; i < request.candidates.size(); ++i)
        if (tracker.allows(i)) allowed.push_back(i);
      if (allowed.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
      const std::size_t chosen = allowed[pick(rng)];
      tracker.place(chosen);
      slate.push_back(chosen);
    }
    if (tracker.complete()) return slate;
  }
  return {};
}

LogDataset generate_log_dataset(const MarketConfig& config, const MechanismRef& logging_policy,
                                const LoggingConfig& logging, std::size_t num_requests, std::uint64_t seed) {
  if (logging.epsilon < 0.0 || logging.epsilon > 1.0) fail(ErrorKind::kConfig, "logging epsilon must lie in [0,1]");
  const auto model = GroundTruthModel::from_config(config);
  LogDataset out;
  out.reserve(num_requests);
  for (std::size_t i = 0; i < num_requests; ++i) {
    LogRecord rec;
    rec.seed = derive_seed(seed, i);
    rec.request = sample_request(config, model, rec.seed);
    std::mt19937_64 explore_rng(derive_seed(rec.seed, 1));
    const bool explore = std::uniform_real_distribution<double>(0.0, 1.0)(explore_rng) < logging.epsilon;
    MechanismOutcome outcome;
    if (explore) outcome.items = random_feasible_slate(rec.request, derive_seed(rec.seed, 2));
    if (outcome.items.empty()) {
      outcome = logging_policy(rec.request);
    } else {
      outcome.payments = logging_policy.pay(rec.request, outcome.items);
    }
    require_feasible(outcome.items, rec.request);
    const auto fb = simulate_feedback(outcome.items, rec.request, model, derive_seed(rec.seed, 3));
    rec.slate = std::move(outcome.items);
    rec.payments = std::move(outcome.payments);
    rec.clicks = fb.clicks;
    rec.conversions = fb.conversions;
    out.push_back(std::move(rec));
  }
  return out;
}

std::size_t index_of(const PageRequest& request, const std::string& id) {
  for (std::size_t i = 0; i < request.candidates.size(); ++i)
    if (request.candidates[i].id == id) return i;
  fail(ErrorKind::kArgument, request.request_id + ": unknown candidate id " + id);
}

json request_to_json(const PageRequest& r) {
  json cands = json::array();
  for (const auto& c : r.candidates) {
    cands.push_back({{"id", c.id},
                     {"kind", c.is_ad() ? "ad" : "organic"},
                     {"features", c.features},
                     {"bid", c.bid},
                     {"private_value", c.private_value},
                     {"pointwise_ctr", c.pointwise_ctr},
                     {"pointwise_cvr", c.pointwise_cvr},
                     {"brand", c.brand},
                     {"organic_rank", c.organic_rank}});
  }
  return {{"request_id", r.request_id},
          {"k", r.slots},
          {"constraints",
           {{"min_ad_start", r.constraints.min_ad_start},
            {"max_ads", r.constraints.max_ads},
            {"brand_dedup", r.constraints.brand_dedup},
            {"organic_order_fixed", r.constraints.organic_order_fixed}}},
          {"candidates", std::move(cands)},
          {"seed", r.seed}};
}

PageRequest request_from_json(const json& doc) {
  try {
    PageRequest r;
    r.request_id = doc.at("request_id").get<std::string>();
    r.slots = doc.at("k").get<std::size_t>();
    const auto& cons = doc.at("constraints");
    r.constraints.min_ad_start = cons.at("min_ad_start").get<std::size_t>();
    r.constraints.max_ads = cons.at("max_ads").get<std::size_t>();
    r.constraints.brand_dedup = cons.at("brand_dedup").get<bool>();
    r.constraints.organic_order_fixed = cons.at("organic_order_fixed").get<bool>();
    r.seed = doc.value("seed", std::uint64_t{0});
    for (const auto& cj : doc.at("candidates")) {
      Candidate c;
      c.id = cj.at("id").get<std::string>();
      const auto kind = cj.at("kind").get<std::string>();
      if (kind != "ad" && kind != "organic") fail(ErrorKind::kArgument, "candidate kind must be ad or organic");
      c.kind = kind == "ad" ? ItemKind::kAd : ItemKind::kOrganic;
      c.features = cj.at("features").get<std::vector<double>>();
      c.bid = cj.value("bid", 0.0);
      c.private_value = cj.value("private_value", 0.0);
      c.pointwise_ctr = cj.at("pointwise_ctr").get<double>();
      c.pointwise_cvr = cj.at("pointwise_cvr").get<double>();
      c.brand = cj.value("brand", std::string{});
      c.organic_rank = cj.value("organic_rank", std::size_t{0});
      r.candidates.push_back(std::move(c));
    }
    r.validate();
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::kArgument, std::string("malformed request: ") + e.what());
  }
}

json record_to_json(const LogRecord& rec) {
  json doc = request_to_json(rec.request);
  json slate = json::array();
  for (auto idx : rec.slate) slate.push_back(rec.request.candidates.at(idx).id);
  doc["schema_version"] = kLogSchemaVersion;
  doc["slate"] = std::move(slate);
  doc["clicks"] = rec.clicks;
  doc["conversions"] = rec.conversions;
  doc["payments"] = rec.payments;
  doc["seed"] = rec.seed;
  return doc;
}

LogRecord record_from_json(const json& doc) {
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kLogSchemaVersion) {
      fail(ErrorKind::kConfig, "unsupported log schema version " + std::to_string(version));
    }
    LogRecord rec;
    rec.request = request_from_json(doc);
    for (const auto& id : doc.at("slate")) rec.slate.push_back(index_of(rec.request, id.get<std::string>()));
    rec.clicks = doc.at("clicks").get<std::vector<int>>();
    rec.conversions = doc.at("conversions").get<std::vector<int>>();
    rec.payments = doc.at("payments").get<std::vector<double>>();
    rec.seed = doc.at("seed").get<std::uint64_t>();
    const auto k = rec.slate.size();
    if (rec.clicks.size() != k || rec.conversions.size() != k || rec.payments.size() != k) {
      fail(ErrorKind::kArgument, rec.request.request_id + ": per-slot arrays do not match slate length");
    }
    return rec;
  } catch (const json::exception& e) {
    fail(ErrorKind::kArgument, std::string("malformed log record: ") + e.what());
  }
}

void write_log_dataset(const std::filesystem::path& path, const LogDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  for (const auto& rec : dataset) out << record_to_json(rec).dump() << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

LogDataset read_log_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open for reading: " + path.string());
  LogDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorKind::kArgument, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace nga::market
