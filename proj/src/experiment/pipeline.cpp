#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "nga/diff/checkpoint.hpp"
#include "nga/error.hpp"
#include "nga/experiment.hpp"
#include "nga/market/feasibility.hpp"

namespace nga::exp {

using market::derive_seed;

MetricsRow compute_metrics(const std::string& mechanism, const std::vector<ServedRecord>& log,
                           const std::string& log_name) {
  if (log.empty()) fail(ErrorKind::kArgument, "compute_metrics: " + log_name + " is empty");
  double impressions = 0.0, clicks = 0.0, conversions = 0.0, revenue = 0.0;
  for (const auto& rec : log) {
    if (rec.clicks.size() != rec.payments.size() || rec.conversions.size() != rec.clicks.size()) {
      fail(ErrorKind::kArgument, "compute_metrics: " + log_name + " has misaligned per-slot arrays");
    }
    impressions += static_cast<double>(rec.impressions);
    for (std::size_t s = 0; s < rec.clicks.size(); ++s) {
      clicks += rec.clicks[s];
      conversions += rec.conversions[s];
      revenue += rec.clicks[s] * rec.payments[s];
    }
  }
  if (impressions <= 0.0) fail(ErrorKind::kArgument, "compute_metrics: " + log_name + " has no impressions");
  MetricsRow row;
  row.mechanism = mechanism;
  row.rpm = revenue / impressions * 1000.0;
  row.ctr = clicks / impressions * 100.0;
  row.cvr = clicks > 0.0 ? conversions / clicks * 100.0 : 0.0;
  return row;
}

ServedRecord expected_record(const market::MechanismOutcome& outcome, const market::PageRequest& request,
                             const market::GroundTruthModel& truth) {
  const auto expected = market::expected_outcome(outcome, request, truth);
  ServedRecord rec;
  rec.impressions = outcome.items.size();
  rec.clicks = expected.ctr;
  rec.conversions.resize(expected.ctr.size());
  for (std::size_t s = 0; s < expected.ctr.size(); ++s) rec.conversions[s] = expected.ctr[s] * expected.cvr[s];
  rec.payments = outcome.payments;
  return rec;
}

double psi_percent(const mech::RegretReport& report) { return 100.0 * report.psi; }

market::MechanismRef make_mechanism(const std::string& name, const PipelineConfig& config,
                                    const gen::Generator* generator, const eval::Evaluator* evaluator) {
  const double alpha = config.generator.alpha;
  if (name == "ugsp") return mech::make_ugsp_mechanism(alpha, config.ad_slots);
  if (name == "first-price") return mech::make_first_price_mechanism(alpha, config.ad_slots);
  if (name == "nga") {
    if (!generator || !evaluator) fail(ErrorKind::kArgument, "nga mechanism needs a generator and an evaluator");
    return mech::make_nga_mechanism(*generator, *evaluator, config.beam_size);
  }
  fail(ErrorKind::kConfig, "unknown mechanism: " + name);
}

std::string fnv_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<market::PageRequest> sample_requests(const market::MarketConfig& config, std::size_t count,
                                                 std::uint64_t seed) {
  const auto model = market::GroundTruthModel::from_config(config);
  std::vector<market::PageRequest> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(market::sample_request(config, model, derive_seed(seed, i)));
  return out;
}

TrainedModels train_models(const PipelineConfig& config, std::uint64_t seed) {
  TrainedModels out;
  const auto logging = mech::make_ugsp_mechanism(config.generator.alpha, config.ad_slots);
  const auto dataset = market::generate_log_dataset(config.market, logging, {config.epsilon}, config.train_requests,
                                                    derive_seed(seed, 1));
  std::string bytes;
  for (const auto& rec : dataset) bytes += market::record_to_json(rec).dump() + "\n";
  out.dataset_hash = fnv_hex(bytes);

  auto gcfg = config.generator;
  gcfg.seed = derive_seed(seed, 2);
  auto ecfg = config.evaluator;
  ecfg.seed = derive_seed(seed, 3);
  out.generator = std::make_unique<gen::Generator>(gcfg);
  out.evaluator = std::make_unique<eval::Evaluator>(ecfg);

  auto etrain = config.evaluator_training;
  etrain.seed = derive_seed(seed, 4);
  out.evaluator_report = train::train_evaluator(*out.evaluator, *out.generator, dataset, etrain);
  out.evaluator->set_frozen(true);

  std::vector<market::PageRequest> requests;
  const std::size_t n = std::min(config.generator_requests, dataset.size());
  requests.reserve(n);
  for (std::size_t i = 0; i < n; ++i) requests.push_back(dataset[i].request);
  auto gtrain = config.generator_training;
  gtrain.seed = derive_seed(seed, 5);
  if (!requests.empty()) out.generator_report = train::train_generator(*out.generator, *out.evaluator, requests, gtrain);
  return out;
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  if (q == 0.5) {
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  }
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

nlohmann::json RunManifest::to_json() const {
  return {{"format", "nga-manifest"},
          {"version", 1},
          {"code_version", code_version},
          {"settings", settings},
          {"experiment_seed", experiment_seed},
          {"repetition_seeds", repetition_seeds},
          {"dataset_hashes", dataset_hashes},
          {"started", started},
          {"finished", finished}};
}

RunManifest RunManifest::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "nga-manifest") fail(ErrorKind::kConfig, "not a run manifest");
    RunManifest m;
    m.code_version = doc.at("code_version").get<std::string>();
    m.settings = doc.at("settings").get<Settings>();
    m.experiment_seed = doc.at("experiment_seed").get<std::uint64_t>();
    m.repetition_seeds = doc.at("repetition_seeds").get<std::vector<std::uint64_t>>();
    m.dataset_hashes = doc.at("dataset_hashes").get<std::vector<std::string>>();
    m.started = doc.value("started", "");
    m.finished = doc.value("finished", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed manifest: ") + e.what());
  }
}

ExperimentResult run_experiment(const PipelineConfig& config, const std::filesystem::path& output_dir) {
  ExperimentResult result;
  auto& manifest = result.manifest;
  manifest.settings = config.settings;
  manifest.experiment_seed = config.experiment_seed;
  manifest.started = utc_now();

  const auto truth = market::GroundTruthModel::from_config(config.market);
  const bool needs_models = std::find(config.mechanisms.begin(), config.mechanisms.end(), "nga") != config.mechanisms.end();

  struct Accumulator {
    double rpm = 0, ctr = 0, cvr = 0, psi = 0, reward = 0, rt_median = 0, rt_p99 = 0;
  };
  std::map<std::string, Accumulator> totals;

  for (std::size_t r = 0; r < config.repetitions; ++r) {
    const auto seed = derive_seed(config.experiment_seed, r);
    manifest.repetition_seeds.push_back(seed);
    TrainedModels models;
    if (needs_models) {
      spdlog::info("repetition {}: training models", r + 1);
      models = train_models(config, seed);
      manifest.dataset_hashes.push_back(models.dataset_hash);
    }
    const auto requests = sample_requests(config.market, config.eval_requests, derive_seed(seed, 7));
    const std::vector<market::PageRequest> audit_set(
        requests.begin(), requests.begin() + static_cast<std::ptrdiff_t>(std::min(config.audit_requests, requests.size())));
    std::map<std::string, double> objectives;
    for (const auto& name : config.mechanisms) {
      const auto mechanism = make_mechanism(name, config, models.generator.get(), models.evaluator.get());
      std::vector<ServedRecord> log;
      std::vector<double> latencies;
      double objective = 0.0;
      log.reserve(requests.size());
      for (const auto& request : requests) {
        const auto start = std::chrono::steady_clock::now();
        const auto outcome = mechanism(request);
        if (config.record_latency) latencies.push_back(elapsed_ms(start));
        market::require_feasible(outcome.items, request);
        objective += market::expected_outcome(outcome, request, truth).objective(config.generator.alpha);
        log.push_back(expected_record(outcome, request, truth));
      }
      auto row = compute_metrics(name, log);
      const auto report = mech::audit_ic(mechanism, audit_set, config.grid, truth);
      auto& acc = totals[name];
      acc.rpm += row.rpm;
      acc.ctr += row.ctr;
      acc.cvr += row.cvr;
      acc.psi += psi_percent(report);
      objectives[name] = objective / static_cast<double>(requests.size());
      acc.reward += objectives[name];
      if (config.record_latency) {
        acc.rt_median += percentile(latencies, 0.5);
        acc.rt_p99 += percentile(latencies, 0.99);
      }
      spdlog::info("repetition {}: {} objective {:.4f} psi {:.3f}%", r + 1, name, objectives[name],
                   psi_percent(report));
    }
    result.objectives.push_back(std::move(objectives));
  }

  const double reps = static_cast<double>(config.repetitions);
  for (const auto& name : config.mechanisms) {
    const auto& acc = totals[name];
    MetricsRow row;
    row.mechanism = name;
    row.rpm = acc.rpm / reps;
    row.ctr = acc.ctr / reps;
    row.cvr = acc.cvr / reps;
    row.psi = acc.psi / reps;
    row.reward = acc.reward / reps;
    if (config.record_latency) {
      row.rt_median_ms = acc.rt_median / reps;
      row.rt_p99_ms = acc.rt_p99 / reps;
    }
    std::vector<double> per_rep;
    for (const auto& o : result.objectives) per_rep.push_back(o.at(name));
    row.mean = std::accumulate(per_rep.begin(), per_rep.end(), 0.0) / reps;
    double ss = 0.0;
    for (double v : per_rep) ss += (v - row.mean) * (v - row.mean);
    row.std = per_rep.size() > 1 ? std::sqrt(ss / static_cast<double>(per_rep.size() - 1)) : 0.0;
    result.rows.push_back(row);
  }
  manifest.finished = utc_now();
  if (!output_dir.empty()) export_results(result.rows, manifest, output_dir);
  return result;
}

ExperimentResult run_from_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& output_dir) {
  const auto manifest = RunManifest::from_json(diff::read_json_file(manifest_path));
  auto settings = default_settings();
  for (const auto& [key, value] : manifest.settings) set_setting(settings, key, value);
  auto config = make_pipeline_config(settings);
  if (config.experiment_seed != manifest.experiment_seed) {
    fail(ErrorKind::kConfig, "manifest experiment seed disagrees with its settings");
  }
  auto result = run_experiment(config, output_dir);
  if (!manifest.dataset_hashes.empty() && result.manifest.dataset_hashes != manifest.dataset_hashes) {
    fail(ErrorKind::kRuntime, "rerun produced datasets that differ from the manifest");
  }
  return result;
}

nlohmann::json LatencyReport::to_json() const {
  return {{"requests", requests},
          {"slots", slots},
          {"nar_median_ms", nar_median_ms},
          {"nar_p99_ms", nar_p99_ms},
          {"ar_median_ms", ar_median_ms},
          {"ar_p99_ms", ar_p99_ms},
          {"nar_forward_calls_per_request", nar_calls_per_request},
          {"ar_forward_calls_per_request", ar_calls_per_request}};
}

LatencyReport benchmark_latency(const gen::Generator& generator, const std::vector<market::PageRequest>& requests,
                                std::size_t beam_size, std::size_t warmup) {
  if (requests.empty()) fail(ErrorKind::kArgument, "benchmark_latency: no requests");
  diff::NoGradGuard no_grad;
  auto nar = [&](const market::PageRequest& request) {
    const auto fwd = generator.forward(request);
    if (beam_size <= 1) return gen::constrained_decode(fwd.allocation, request);
    return gen::beam_generate(fwd.allocation, request, beam_size).front().items;
  };
  for (std::size_t i = 0; i < warmup; ++i) {
    const auto& request = requests[i % requests.size()];
    nar(request);
    generator.decode_autoregressive(request);
  }
  std::vector<double> nar_ms, ar_ms;
  std::uint64_t nar_calls = 0, ar_calls = 0;
  for (const auto& request : requests) {
    auto before = generator.network_calls();
    auto start = std::chrono::steady_clock::now();
    const auto a = nar(request);
    nar_ms.push_back(elapsed_ms(start));
    nar_calls += generator.network_calls() - before;
    market::require_feasible(a, request);

    before = generator.network_calls();
    start = std::chrono::steady_clock::now();
    const auto b = generator.decode_autoregressive(request);
    ar_ms.push_back(elapsed_ms(start));
    ar_calls += generator.network_calls() - before;
    market::require_feasible(b, request);
  }
  LatencyReport report;
  report.requests = requests.size();
  report.slots = requests.front().slots;
  report.nar_median_ms = percentile(nar_ms, 0.5);
  report.nar_p99_ms = percentile(nar_ms, 0.99);
  report.ar_median_ms = percentile(ar_ms, 0.5);
  report.ar_p99_ms = percentile(ar_ms, 0.99);
  report.nar_calls_per_request = static_cast<double>(nar_calls) / static_cast<double>(requests.size());
  report.ar_calls_per_request = static_cast<double>(ar_calls) / static_cast<double>(requests.size());
  return report;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string optional6(const std::optional<double>& v) { return v ? fixed6(*v) : "NA"; }

}  // namespace

std::string format_results_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    if (r.mechanism.find_first_of(",\"\n") != std::string::npos) {
      fail(ErrorKind::kArgument, "mechanism name not CSV-safe: " + r.mechanism);
    }
    out += r.mechanism + "," + fixed6(r.rpm) + "," + fixed6(r.ctr) + "," + fixed6(r.cvr) + "," + fixed6(r.psi) + "," +
           fixed6(r.reward) + "," + optional6(r.rt_median_ms) + "," + optional6(r.rt_p99_ms) + "," + fixed6(r.mean) +
           "," + fixed6(r.std) + "\n";
  }
  return out;
}

void export_results(const std::vector<MetricsRow>& rows, const RunManifest& manifest,
                    const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create output directory " + directory.string() + ": " + ec.message());
  const auto csv = directory / "results.csv";
  std::ofstream out(csv, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + csv.string());
  out << format_results_csv(rows);
  if (!out) fail(ErrorKind::kIo, "write failed: " + csv.string());
  diff::write_json_file(directory / "manifest.json", manifest.to_json());
}

std::vector<MetricsRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    fail(ErrorKind::kArgument, path.string() + ": unexpected header");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) fail(ErrorKind::kArgument, path.string() + ":" + std::to_string(line_no) + ": expected 10 columns");
    auto num = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0') {
        fail(ErrorKind::kArgument, path.string() + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
      }
      return v;
    };
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s == "NA") return std::nullopt;
      return num(s);
    };
    MetricsRow r;
    r.mechanism = cells[0];
    r.rpm = num(cells[1]);
    r.ctr = num(cells[2]);
    r.cvr = num(cells[3]);
    r.psi = num(cells[4]);
    r.reward = num(cells[5]);
    r.rt_median_ms = opt(cells[6]);
    r.rt_p99_ms = opt(cells[7]);
    r.mean = num(cells[8]);
    r.std = num(cells[9]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace nga::exp
