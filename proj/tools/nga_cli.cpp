// nga: command-line front end over the C API.
//
// Stages read and write fixed file names inside the output directory
// (--out, else $NGA_OUTPUT_DIR, else the current directory):
//   dataset.jsonl, evaluator.json, generator_init.json, generator.json,
//   evaluator_training.csv, generator_training.csv, results.csv, manifest.json
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nga/nga_c.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  nga_status status;
  bool local = false;
};

void check(nga_status status) {
  if (status != NGA_OK) throw Failure{status};
}

struct OwnedString {
  char* text = nullptr;
  ~OwnedString() { nga_string_free(text); }
  std::string str() const { return text ? text : ""; }
};

struct ConfigHandle {
  nga_config* handle = nullptr;
  ~ConfigHandle() { nga_config_destroy(handle); }
};

struct ModelsHandle {
  nga_models* handle = nullptr;
  ~ModelsHandle() { nga_models_destroy(handle); }
};

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string mechanism = "nga";
  std::size_t requests = 200;
  std::string request_file;
  std::string slate_file;
  std::string manifest;
  std::string dataset;
  std::string grid;
  bool untrained = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "nga: cannot read %s\n", path.c_str());
    throw Failure{NGA_ERR_IO, true};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path output_dir(const Options& opt) {
  fs::path dir = opt.out;
  if (dir.empty()) {
    const char* env = std::getenv("NGA_OUTPUT_DIR");
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    std::fprintf(stderr, "nga: cannot create output directory %s: %s\n", dir.c_str(), ec.message().c_str());
    throw Failure{NGA_ERR_IO, true};
  }
  return dir;
}

void load_config(const Options& opt, ConfigHandle& cfg) {
  check(nga_config_create(opt.config.empty() ? nullptr : opt.config.c_str(), &cfg.handle));
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "nga: --set expects key=value, got '%s'\n", kv.c_str());
      throw Failure{NGA_ERR_CONFIG, true};
    }
    check(nga_config_set(cfg.handle, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
}

void load_models(const fs::path& dir, ModelsHandle& models) {
  check(nga_models_load((dir / "generator.json").c_str(), (dir / "evaluator.json").c_str(), &models.handle));
}

std::string path_str(const fs::path& p) { return p.string(); }

int run(const std::string& command, const Options& opt) {
  if (command == "report" && !opt.manifest.empty()) {
    const auto dir = output_dir(opt);
    OwnedString csv;
    check(nga_run_from_manifest(opt.manifest.c_str(), dir.c_str(), &csv.text));
    OwnedString table;
    check(nga_report(path_str(dir / "results.csv").c_str(), &table.text));
    std::cout << table.str();
    return 0;
  }
  if (command == "report") {
    OwnedString table;
    check(nga_report(path_str(output_dir(opt) / "results.csv").c_str(), &table.text));
    std::cout << table.str();
    return 0;
  }

  ConfigHandle cfg;
  load_config(opt, cfg);
  const auto dir = output_dir(opt);
  const auto dataset = path_str(dir / "dataset.jsonl");

  if (command == "config") {
    OwnedString text;
    check(nga_config_text(cfg.handle, &text.text));
    std::cout << text.str();
  } else if (command == "gen-data") {
    check(nga_gen_data(cfg.handle, dataset.c_str()));
    std::cout << dataset << '\n';
  } else if (command == "train-evaluator") {
    check(nga_train_evaluator(cfg.handle, dataset.c_str(), path_str(dir / "evaluator.json").c_str(),
                              path_str(dir / "generator_init.json").c_str(),
                              path_str(dir / "evaluator_training.csv").c_str()));
    std::cout << path_str(dir / "evaluator.json") << '\n';
  } else if (command == "train-generator") {
    check(nga_train_generator(cfg.handle, dataset.c_str(), path_str(dir / "generator_init.json").c_str(),
                              path_str(dir / "evaluator.json").c_str(), path_str(dir / "generator.json").c_str(),
                              path_str(dir / "generator_training.csv").c_str()));
    std::cout << path_str(dir / "generator.json") << '\n';
  } else if (command == "serve" || command == "audit") {
    ModelsHandle models;
    if (opt.mechanism == "nga") load_models(dir, models);
    OwnedString json;
    if (command == "serve") {
      const auto outcomes = path_str(dir / ("outcomes_" + opt.mechanism + ".jsonl"));
      check(nga_serve(cfg.handle, models.handle, opt.mechanism.c_str(), opt.requests, outcomes.c_str(), &json.text));
    } else {
      if (!opt.grid.empty()) check(nga_config_set(cfg.handle, "mech.grid", opt.grid.c_str()));
      check(nga_audit(cfg.handle, models.handle, opt.mechanism.c_str(),
                      opt.dataset.empty() ? nullptr : opt.dataset.c_str(), opt.requests, &json.text));
    }
    std::cout << json.str() << '\n';
  } else if (command == "bench") {
    ModelsHandle models;
    if (!opt.untrained) load_models(dir, models);
    OwnedString json;
    check(nga_bench(cfg.handle, models.handle, opt.requests, &json.text));
    std::cout << json.str() << '\n';
  } else if (command == "run") {
    OwnedString csv;
    check(nga_run_experiment(cfg.handle, dir.c_str(), &csv.text));
    std::cout << csv.str();
  } else if (command == "generate") {
    ModelsHandle models;
    load_models(dir, models);
    OwnedString json;
    check(nga_generate_json(models.handle, cfg.handle, read_file(opt.request_file).c_str(), &json.text));
    std::cout << json.str() << '\n';
  } else if (command == "evaluate") {
    ModelsHandle models;
    load_models(dir, models);
    OwnedString json;
    check(nga_evaluate_json(models.handle, read_file(opt.request_file).c_str(), read_file(opt.slate_file).c_str(),
                            &json.text));
    std::cout << json.str() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NGA generative auction: data, training, serving, audit and benchmarks"};
  app.set_version_flag("--version", nga_version());
  app.require_subcommand(1);

  Options opt;
  auto common = [&opt](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "settings file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", opt.overrides, "override a setting, key=value (repeatable)");
    sub->add_option("-o,--out", opt.out, "output directory (default $NGA_OUTPUT_DIR or .)");
  };

  std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "sample a logged dataset under the uGSP logging policy"},
      {"train-evaluator", "stage one: fit the evaluator and its payment tower"},
      {"train-generator", "stage two: policy-gradient training of the generator"},
      {"serve", "serve fresh requests with a mechanism and print metrics"},
      {"audit", "empirical IC regret (Psi) and IR violations"},
      {"bench", "non-autoregressive vs autoregressive decode latency"},
      {"run", "full pipeline with repetitions; writes results.csv and manifest.json"},
      {"report", "print results.csv, or rerun from --manifest first"},
      {"generate", "NGA slate for one request JSON"},
      {"evaluate", "evaluator rewards and winner for a request JSON and candidate slates"},
      {"config", "print the effective settings"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    common(sub);
    if (name == "serve" || name == "audit") {
      sub->add_option("-m,--mechanism", opt.mechanism, "ugsp | first-price | nga")->capture_default_str();
    }
    if (name == "serve" || name == "audit" || name == "bench") {
      sub->add_option("-n,--requests", opt.requests, "number of fresh requests")->capture_default_str();
    }
    if (name == "audit") {
      sub->add_option("-d,--dataset", opt.dataset, "audit the requests of this logged dataset")
          ->check(CLI::ExistingFile);
      sub->add_option("-g,--grid", opt.grid, "misreport multipliers, comma separated (must include 1)");
    }
    if (name == "bench") sub->add_flag("--untrained", opt.untrained, "time a freshly initialised generator");
    if (name == "report") sub->add_option("--manifest", opt.manifest, "rerun this manifest")->check(CLI::ExistingFile);
    if (name == "generate" || name == "evaluate") {
      sub->add_option("-r,--request", opt.request_file, "request JSON file")->required()->check(CLI::ExistingFile);
    }
    if (name == "evaluate") {
      sub->add_option("--slate", opt.slate_file, "JSON file {\"slates\": [[ids], ...]}")->required()->check(CLI::ExistingFile);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), opt);
  } catch (const Failure& f) {
    const char* detail = f.local ? "" : nga_last_error();
    std::fprintf(stderr, "nga: %s%s%s\n", nga_status_name(f.status), *detail ? ": " : "", detail);
    return f.status == NGA_ERR_CONFIG ? kExitConfig : kExitRuntime;
  }
}
