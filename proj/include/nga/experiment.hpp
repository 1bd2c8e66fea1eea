#pragma once

// Experiment orchestration: configuration, business metrics, the end-to-end
// pipeline with repetitions and manifests, the decode latency benchmark and
// result export.
//
// Configuration files are plain text, one `key = value` per line, `#` starts
// a comment. Unknown keys are rejected. See `default_settings()` for every key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nga/evaluator.hpp"
#include "nga/generator.hpp"
#include "nga/market/dataset.hpp"
#include "nga/market/environment.hpp"
#include "nga/mechanisms.hpp"
#include "nga/training.hpp"

namespace nga::exp {

inline constexpr const char* kVersion = "1.0.0";

using Settings = std::map<std::string, std::string>;

Settings default_settings();
// Applies `key = value` lines from `text` on top of the defaults.
Settings parse_settings(const std::string& text, const std::string& origin = "<config>");
Settings load_settings(const std::filesystem::path& path);
// Overrides one key; throws kConfig for unknown keys.
void set_setting(Settings& settings, const std::string& key, const std::string& value);
std::string settings_to_text(const Settings& settings);

struct PipelineConfig {
  market::MarketConfig market;
  gen::GeneratorConfig generator;
  eval::EvaluatorConfig evaluator;
  std::size_t beam_size = 20;
  std::vector<std::size_t> ad_slots{3, 6, 9};
  mech::MisreportGrid grid = mech::MisreportGrid::standard();

  std::size_t train_requests = 2000;
  std::size_t heldout_requests = 500;
  std::uint64_t data_seed = 101;
  double epsilon = 0.2;

  train::EvaluatorTrainingConfig evaluator_training;
  train::GeneratorTrainingConfig generator_training;
  std::size_t generator_requests = 200;

  std::size_t repetitions = 5;
  std::uint64_t experiment_seed = 2024;
  std::vector<std::string> mechanisms{"ugsp", "nga"};
  std::size_t eval_requests = 1000;
  std::size_t audit_requests = 50;
  bool record_latency = false;

  Settings settings;
};

PipelineConfig make_pipeline_config(const Settings& settings);

// Per-request outcome as served. Click and conversion entries may be
// expectations rather than draws.
struct ServedRecord {
  std::size_t impressions = 0;
  std::vector<double> clicks;
  std::vector<double> conversions;
  std::vector<double> payments;
};

struct MetricsRow {
  std::string mechanism;
  double rpm = 0.0;
  double ctr = 0.0;  // percent
  double cvr = 0.0;  // percent
  double psi = 0.0;  // percent
  double reward = 0.0;
  std::optional<double> rt_median_ms;
  std::optional<double> rt_p99_ms;
  double mean = 0.0;
  double std = 0.0;
};

// RPM, CTR and CVR; Psi, reward and timing are left for the caller.
MetricsRow compute_metrics(const std::string& mechanism, const std::vector<ServedRecord>& log,
                           const std::string& log_name = "outcome log");

// Ground-truth expected outcome of a served slate.
ServedRecord expected_record(const market::MechanismOutcome& outcome, const market::PageRequest& request,
                             const market::GroundTruthModel& truth);

// Psi = 100 * sum_i rgt_i / u_i averaged over requests.
double psi_percent(const mech::RegretReport& report);

// Mechanisms by name: "ugsp", "first-price", "nga". The NGA mechanism
// references `generator` and `evaluator`, which must outlive it.
market::MechanismRef make_mechanism(const std::string& name, const PipelineConfig& config,
                                    const gen::Generator* generator, const eval::Evaluator* evaluator);

struct RunManifest {
  Settings settings;
  std::uint64_t experiment_seed = 0;
  std::vector<std::uint64_t> repetition_seeds;
  std::vector<std::string> dataset_hashes;
  std::string code_version = kVersion;
  std::string started;
  std::string finished;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& doc);
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  RunManifest manifest;
  // Per-repetition, per-mechanism mean ground-truth objective.
  std::vector<std::map<std::string, double>> objectives;
};

// Trains, serves and audits every configured mechanism `repetitions` times;
// writes results.csv and manifest.json into `output_dir` when non-empty.
ExperimentResult run_experiment(const PipelineConfig& config, const std::filesystem::path& output_dir);
ExperimentResult run_from_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& output_dir);

struct TrainedModels {
  std::unique_ptr<gen::Generator> generator;
  std::unique_ptr<eval::Evaluator> evaluator;
  train::EvaluatorTrainingReport evaluator_report;
  train::GeneratorTrainingReport generator_report;
  std::string dataset_hash;
};

// One repetition's two-stage training on a logged dataset sampled with `seed`.
TrainedModels train_models(const PipelineConfig& config, std::uint64_t seed);

std::vector<market::PageRequest> sample_requests(const market::MarketConfig& config, std::size_t count,
                                                 std::uint64_t seed);

struct LatencyReport {
  std::size_t requests = 0;
  std::size_t slots = 0;
  double nar_median_ms = 0.0;
  double nar_p99_ms = 0.0;
  double ar_median_ms = 0.0;
  double ar_p99_ms = 0.0;
  double nar_calls_per_request = 0.0;
  double ar_calls_per_request = 0.0;

  nlohmann::json to_json() const;
};

inline constexpr std::size_t kLatencyWarmup = 50;

// Non-autoregressive decode (one forward, then constrained argmax or beam)
// versus the autoregressive reference (k forwards), same parameters.
LatencyReport benchmark_latency(const gen::Generator& generator, const std::vector<market::PageRequest>& requests,
                                std::size_t beam_size, std::size_t warmup = kLatencyWarmup);

inline constexpr const char* kResultsHeader = "mechanism,RPM,CTR,CVR,Psi,reward,RT_ms_median,RT_ms_p99,mean,std";

std::string format_results_csv(const std::vector<MetricsRow>& rows);
void export_results(const std::vector<MetricsRow>& rows, const RunManifest& manifest,
                    const std::filesystem::path& directory);
std::vector<MetricsRow> read_results_csv(const std::filesystem::path& path);

std::string fnv_hex(const std::string& bytes);

}  // namespace nga::exp
