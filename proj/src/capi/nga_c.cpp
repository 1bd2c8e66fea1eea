#include "nga/nga_c.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nga/diff/checkpoint.hpp"
#include "nga/error.hpp"
#include "nga/experiment.hpp"
#include "nga/market/dataset.hpp"
#include "nga/market/feasibility.hpp"

struct nga_config {
  nga::exp::Settings settings;
};

struct nga_models {
  std::unique_ptr<nga::gen::Generator> generator;
  std::unique_ptr<nga::eval::Evaluator> evaluator;
};

namespace {

using nga::ErrorKind;
using nga::market::derive_seed;

thread_local std::string g_last_error;

nga_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument: return NGA_ERR_ARGUMENT;
    case ErrorKind::kConfig: return NGA_ERR_CONFIG;
    case ErrorKind::kInfeasible: return NGA_ERR_INFEASIBLE;
    case ErrorKind::kNumeric: return NGA_ERR_NUMERIC;
    case ErrorKind::kContract: return NGA_ERR_CONTRACT;
    case ErrorKind::kIo: return NGA_ERR_IO;
    case ErrorKind::kRuntime: return NGA_ERR_RUNTIME;
  }
  return NGA_ERR_RUNTIME;
}

void log_to_stderr() {
  static std::once_flag once;
  std::call_once(once, [] { spdlog::set_default_logger(spdlog::stderr_color_mt("nga")); });
}

template <class F>
nga_status guarded(F&& body) {
  try {
    log_to_stderr();
    body();
    return NGA_OK;
  } catch (const nga::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return NGA_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return NGA_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NGA_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown failure";
    return NGA_ERR_RUNTIME;
  }
}

void require_arg(const void* p, const char* name) {
  if (!p) nga::fail(ErrorKind::kArgument, std::string(name) + " must not be null");
}

char* copy_out(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const std::string& s) {
  if (out) *out = copy_out(s);
}

nga::exp::PipelineConfig pipeline(const nga_config* config) {
  require_arg(config, "config");
  return nga::exp::make_pipeline_config(config->settings);
}

// The staged pipeline mirrors one repetition of the full experiment seeded by data.seed.
std::uint64_t stage_seed(const nga::exp::PipelineConfig& cfg) { return cfg.data_seed; }

std::vector<double> values(const nga::diff::Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::unique_ptr<nga::gen::Generator> load_generator(const char* path) {
  const auto doc = nga::diff::read_json_file(path);
  auto g = std::make_unique<nga::gen::Generator>(nga::gen::GeneratorConfig::from_json(doc.at("model")));
  g->load_checkpoint(doc);
  return g;
}

std::unique_ptr<nga::eval::Evaluator> load_evaluator(const char* path) {
  const auto doc = nga::diff::read_json_file(path);
  auto e = std::make_unique<nga::eval::Evaluator>(nga::eval::EvaluatorConfig::from_json(doc.at("model")));
  e->load_checkpoint(doc);
  return e;
}

nga::market::LogDataset read_dataset(const char* path) {
  require_arg(path, "dataset_path");
  return nga::market::read_log_dataset(path);
}

nlohmann::json metrics_json(const nga::exp::MetricsRow& row) {
  return {{"mechanism", row.mechanism}, {"RPM", row.rpm}, {"CTR", row.ctr}, {"CVR", row.cvr}, {"reward", row.reward}};
}

nlohmann::json slate_ids(const nga::market::PageRequest& request, const nga::market::SlateItems& items) {
  auto ids = nlohmann::json::array();
  for (auto i : items) ids.push_back(request.candidates.at(i).id);
  return ids;
}

}  // namespace

extern "C" {

const char* nga_version(void) { return nga::exp::kVersion; }

const char* nga_last_error(void) { return g_last_error.c_str(); }

const char* nga_status_name(nga_status status) {
  switch (status) {
    case NGA_OK: return "ok";
    case NGA_ERR_ARGUMENT: return "argument error";
    case NGA_ERR_CONFIG: return "config error";
    case NGA_ERR_INFEASIBLE: return "infeasible";
    case NGA_ERR_NUMERIC: return "numeric error";
    case NGA_ERR_CONTRACT: return "contract violation";
    case NGA_ERR_IO: return "io error";
    case NGA_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

void nga_string_free(char* text) { std::free(text); }

nga_status nga_config_create(const char* path, nga_config** out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<nga_config>();
    cfg->settings = path ? nga::exp::load_settings(path) : nga::exp::default_settings();
    nga::exp::make_pipeline_config(cfg->settings);
    *out = cfg.release();
  });
}

void nga_config_destroy(nga_config* config) { delete config; }

nga_status nga_config_set(nga_config* config, const char* key, const char* value) {
  return guarded([&] {
    require_arg(config, "config");
    require_arg(key, "key");
    require_arg(value, "value");
    auto next = config->settings;
    nga::exp::set_setting(next, key, value);
    nga::exp::make_pipeline_config(next);
    config->settings = std::move(next);
  });
}

nga_status nga_config_get(const nga_config* config, const char* key, char** out_value) {
  return guarded([&] {
    require_arg(config, "config");
    require_arg(key, "key");
    require_arg(out_value, "out_value");
    const auto it = config->settings.find(key);
    if (it == config->settings.end()) nga::fail(ErrorKind::kConfig, std::string("unknown setting: ") + key);
    emit(out_value, it->second);
  });
}

nga_status nga_config_text(const nga_config* config, char** out_text) {
  return guarded([&] {
    require_arg(config, "config");
    require_arg(out_text, "out_text");
    emit(out_text, nga::exp::settings_to_text(config->settings));
  });
}

nga_status nga_gen_data(const nga_config* config, const char* dataset_path) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(dataset_path, "dataset_path");
    const auto logging = nga::mech::make_ugsp_mechanism(cfg.generator.alpha, cfg.ad_slots);
    const auto data = nga::market::generate_log_dataset(cfg.market, logging, {cfg.epsilon}, cfg.train_requests,
                                                        derive_seed(stage_seed(cfg), 1));
    nga::market::write_log_dataset(dataset_path, data);
  });
}

nga_status nga_train_evaluator(const nga_config* config, const char* dataset_path, const char* evaluator_out,
                               const char* generator_out, const char* report_csv) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(evaluator_out, "evaluator_out");
    require_arg(generator_out, "generator_out");
    const auto data = read_dataset(dataset_path);
    const auto seed = stage_seed(cfg);
    auto gcfg = cfg.generator;
    gcfg.seed = derive_seed(seed, 2);
    auto ecfg = cfg.evaluator;
    ecfg.seed = derive_seed(seed, 3);
    nga::gen::Generator generator(gcfg);
    nga::eval::Evaluator evaluator(ecfg);
    auto training = cfg.evaluator_training;
    training.seed = derive_seed(seed, 4);
    const auto report = nga::train::train_evaluator(evaluator, generator, data, training);
    evaluator.set_frozen(true);
    nga::diff::write_json_file(evaluator_out, evaluator.to_checkpoint());
    nga::diff::write_json_file(generator_out, generator.to_checkpoint());
    if (report_csv) report.write_csv(report_csv);
  });
}

nga_status nga_train_generator(const nga_config* config, const char* dataset_path, const char* generator_in,
                               const char* evaluator_in, const char* generator_out, const char* report_csv) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(generator_in, "generator_in");
    require_arg(evaluator_in, "evaluator_in");
    require_arg(generator_out, "generator_out");
    const auto data = read_dataset(dataset_path);
    auto generator = load_generator(generator_in);
    auto evaluator = load_evaluator(evaluator_in);
    evaluator->set_frozen(true);
    std::vector<nga::market::PageRequest> requests;
    for (std::size_t i = 0; i < std::min(cfg.generator_requests, data.size()); ++i) requests.push_back(data[i].request);
    if (requests.empty()) nga::fail(ErrorKind::kArgument, std::string("dataset is empty: ") + dataset_path);
    auto training = cfg.generator_training;
    training.seed = derive_seed(stage_seed(cfg), 5);
    const auto report = nga::train::train_generator(*generator, *evaluator, requests, training);
    nga::diff::write_json_file(generator_out, generator->to_checkpoint());
    if (report_csv) report.write_csv(report_csv);
  });
}

nga_status nga_models_load(const char* generator_path, const char* evaluator_path, nga_models** out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = nullptr;
    require_arg(generator_path, "generator_path");
    require_arg(evaluator_path, "evaluator_path");
    auto models = std::make_unique<nga_models>();
    models->generator = load_generator(generator_path);
    models->evaluator = load_evaluator(evaluator_path);
    models->evaluator->set_frozen(true);
    *out = models.release();
  });
}

void nga_models_destroy(nga_models* models) { delete models; }

nga_status nga_generate_json(const nga_models* models, const nga_config* config, const char* request_json,
                             char** out_json) {
  return guarded([&] {
    require_arg(models, "models");
    require_arg(request_json, "request_json");
    require_arg(out_json, "out_json");
    const auto cfg = pipeline(config);
    const auto request = nga::market::request_from_json(nlohmann::json::parse(request_json));
    nga::diff::NoGradGuard no_grad;
    const auto fwd = models->generator->forward(request);
    const auto decision = nga::mech::nga_decide(request, fwd.allocation, *models->evaluator, cfg.beam_size);
    const auto& slate = decision.winner.slate;
    nga::market::require_feasible(slate.items, request);
    auto beams = nlohmann::json::array();
    for (std::size_t b = 0; b < decision.beams.size(); ++b) {
      beams.push_back({{"slate", slate_ids(request, decision.beams[b].items)},
                       {"log_probability", decision.beams[b].log_probability},
                       {"reward", decision.winner.rewards.at(b)}});
    }
    nlohmann::json doc{{"request_id", request.request_id},
                       {"beams", beams},
                       {"winner", decision.winner.index},
                       {"slate", slate_ids(request, slate.items)},
                       {"payments", slate.payments},
                       {"ctr", slate.list_ctr},
                       {"cvr", slate.list_cvr},
                       {"payment_ratio", slate.payment_ratio}};
    emit(out_json, doc.dump());
  });
}

nga_status nga_evaluate_json(const nga_models* models, const char* request_json, const char* slates_json,
                             char** out_json) {
  return guarded([&] {
    require_arg(models, "models");
    require_arg(request_json, "request_json");
    require_arg(slates_json, "slates_json");
    require_arg(out_json, "out_json");
    const auto request = nga::market::request_from_json(nlohmann::json::parse(request_json));
    const auto doc = nlohmann::json::parse(slates_json);
    std::vector<nlohmann::json> lists;
    if (doc.contains("slates")) {
      for (const auto& s : doc.at("slates")) lists.push_back(s);
    } else {
      lists.push_back(doc.at("slate"));
    }
    std::vector<nga::market::SlateItems> slates;
    for (const auto& ids : lists) {
      nga::market::SlateItems slate;
      for (const auto& id : ids) slate.push_back(nga::market::index_of(request, id.get<std::string>()));
      nga::market::require_feasible(slate, request);
      slates.push_back(std::move(slate));
    }
    nga::diff::NoGradGuard no_grad;
    const auto fwd = models->generator->forward(request);
    const auto winner = nga::eval::select_winner(slates, request, fwd.allocation, *models->evaluator);
    auto scored = nlohmann::json::array();
    for (std::size_t i = 0; i < slates.size(); ++i) {
      const auto z = nga::eval::slate_allocation_entries(fwd.allocation, slates[i]);
      const auto towers = models->evaluator->evaluate(slates[i], request, z);
      scored.push_back({{"slate", slate_ids(request, slates[i])},
                        {"ctr", values(towers.ctr)},
                        {"cvr", values(towers.cvr)},
                        {"payment_ratio", values(towers.payment_ratio)},
                        {"payments", towers.payments},
                        {"reward", winner.rewards.at(i)}});
    }
    nlohmann::json out{{"slates", scored}, {"winner", winner.index}, {"payments", winner.slate.payments}};
    emit(out_json, out.dump());
  });
}

nga_status nga_serve(const nga_config* config, const nga_models* models, const char* mechanism, size_t requests,
                     const char* outcomes_path, char** out_json) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(mechanism, "mechanism");
    require_arg(out_json, "out_json");
    if (requests == 0) nga::fail(ErrorKind::kArgument, "serve: request count must be positive");
    const auto mech = nga::exp::make_mechanism(mechanism, cfg, models ? models->generator.get() : nullptr,
                                               models ? models->evaluator.get() : nullptr);
    const auto truth = nga::market::GroundTruthModel::from_config(cfg.market);
    const auto batch = nga::exp::sample_requests(cfg.market, requests, derive_seed(cfg.experiment_seed, 7));
    std::ofstream outcomes;
    if (outcomes_path) {
      outcomes.open(outcomes_path);
      if (!outcomes) nga::fail(ErrorKind::kIo, std::string("cannot write ") + outcomes_path);
    }
    std::vector<nga::exp::ServedRecord> log;
    double objective = 0.0;
    for (const auto& request : batch) {
      const auto outcome = mech(request);
      nga::market::require_feasible(outcome.items, request);
      objective += nga::market::expected_outcome(outcome, request, truth).objective(cfg.generator.alpha);
      log.push_back(nga::exp::expected_record(outcome, request, truth));
      if (outcomes) {
        const auto& rec = log.back();
        outcomes << nlohmann::json{{"request_id", request.request_id},
                                   {"slate", slate_ids(request, outcome.items)},
                                   {"payments", outcome.payments},
                                   {"expected_clicks", rec.clicks},
                                   {"expected_conversions", rec.conversions}}
                        .dump()
                 << '\n';
      }
    }
    if (outcomes && !outcomes.flush()) nga::fail(ErrorKind::kIo, std::string("write failed: ") + outcomes_path);
    auto row = nga::exp::compute_metrics(mechanism, log, "served log");
    row.reward = objective / static_cast<double>(batch.size());
    auto doc = metrics_json(row);
    doc["requests"] = batch.size();
    emit(out_json, doc.dump());
  });
}

nga_status nga_audit(const nga_config* config, const nga_models* models, const char* mechanism,
                     const char* dataset_path, size_t requests, char** out_json) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(mechanism, "mechanism");
    require_arg(out_json, "out_json");
    const auto mech = nga::exp::make_mechanism(mechanism, cfg, models ? models->generator.get() : nullptr,
                                               models ? models->evaluator.get() : nullptr);
    const auto truth = nga::market::GroundTruthModel::from_config(cfg.market);
    std::vector<nga::market::PageRequest> batch;
    if (dataset_path) {
      for (const auto& rec : read_dataset(dataset_path)) {
        if (requests && batch.size() == requests) break;
        batch.push_back(rec.request);
      }
    } else {
      batch = nga::exp::sample_requests(cfg.market, requests, derive_seed(cfg.experiment_seed, 7));
    }
    const auto report = nga::mech::audit_ic(mech, batch, cfg.grid, truth);
    const auto violations = nga::mech::audit_ir(mech, batch);
    nlohmann::json doc{{"mechanism", mechanism},
                       {"requests", batch.size()},
                       {"psi_percent", nga::exp::psi_percent(report)},
                       {"ir_violations", violations.size()},
                       {"regret", nga::mech::regret_report_to_json(report)}};
    emit(out_json, doc.dump());
  });
}

nga_status nga_bench(const nga_config* config, const nga_models* models, size_t requests, char** out_json) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(out_json, "out_json");
    std::unique_ptr<nga::gen::Generator> owned;
    const nga::gen::Generator* generator = models ? models->generator.get() : nullptr;
    if (!generator) {
      auto gcfg = cfg.generator;
      gcfg.seed = derive_seed(stage_seed(cfg), 2);
      owned = std::make_unique<nga::gen::Generator>(gcfg);
      generator = owned.get();
    }
    const auto batch = nga::exp::sample_requests(cfg.market, requests, derive_seed(cfg.experiment_seed, 7));
    const auto report = nga::exp::benchmark_latency(*generator, batch, 1);
    emit(out_json, report.to_json().dump());
  });
}

nga_status nga_run_experiment(const nga_config* config, const char* output_dir, char** out_csv) {
  return guarded([&] {
    const auto cfg = pipeline(config);
    require_arg(output_dir, "output_dir");
    const auto result = nga::exp::run_experiment(cfg, output_dir);
    emit(out_csv, nga::exp::format_results_csv(result.rows));
  });
}

nga_status nga_run_from_manifest(const char* manifest_path, const char* output_dir, char** out_csv) {
  return guarded([&] {
    require_arg(manifest_path, "manifest_path");
    require_arg(output_dir, "output_dir");
    const auto result = nga::exp::run_from_manifest(manifest_path, output_dir);
    emit(out_csv, nga::exp::format_results_csv(result.rows));
  });
}

nga_status nga_report(const char* results_csv, char** out_text) {
  return guarded([&] {
    require_arg(results_csv, "results_csv");
    require_arg(out_text, "out_text");
    const auto rows = nga::exp::read_results_csv(results_csv);
    auto opt = [](const std::optional<double>& v) {
      char buf[32];
      if (!v) return std::string("NA");
      std::snprintf(buf, sizeof buf, "%.3f", *v);
      return std::string(buf);
    };
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %10s %8s %8s %8s %10s %10s %10s %10s %10s\n", "mechanism", "RPM", "CTR%",
                  "CVR%", "Psi%", "reward", "RT_med", "RT_p99", "mean", "std");
    os << line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-16s %10.3f %8.3f %8.3f %8.3f %10.4f %10s %10s %10.4f %10.4f\n",
                    r.mechanism.c_str(), r.rpm, r.ctr, r.cvr, r.psi, r.reward, opt(r.rt_median_ms).c_str(),
                    opt(r.rt_p99_ms).c_str(), r.mean, r.std);
      os << line;
    }
    emit(out_text, os.str());
  });
}

}  // extern "C"
