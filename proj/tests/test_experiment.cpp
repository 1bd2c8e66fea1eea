#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "nga/error.hpp"
#include "nga/experiment.hpp"

using namespace nga::exp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("nga_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kTinyConfig = R"(
market.n_ads = 6
market.n_organic = 4
market.slots = 3
market.min_ad_start = 2
market.max_ads = 1
mech.ad_slots = 2
mech.beam_size = 3
mech.grid = 0.5,1.0,1.5
data.train_requests = 80
data.heldout_requests = 20
train.batch = 16
train.evaluator_epochs = 1
train.regret_beam = 2
train.regret_subsample = 2
train.generator_epochs = 1
train.generator_requests = 16
train.generator_batch = 8
exp.repetitions = 1
exp.eval_requests = 30
exp.audit_requests = 4
)";

}  // namespace

TEST_CASE("compute_metrics on hand-built logs") {
  ServedRecord rec;
  rec.impressions = 10;
  rec.clicks = {1, 0, 1, 0, 0, 0, 0, 0, 0, 0};
  rec.conversions = {1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  rec.payments = {1.5, 0, 1.5, 0, 0, 0, 0, 0, 0, 0};
  const auto row = compute_metrics("m", {rec});
  CHECK(row.rpm == doctest::Approx(300.0));
  CHECK(row.ctr == doctest::Approx(20.0));
  CHECK(row.cvr == doctest::Approx(50.0));

  ServedRecord quiet = rec;
  quiet.clicks.assign(10, 0);
  quiet.conversions.assign(10, 0);
  const auto zero = compute_metrics("m", {quiet});
  CHECK(zero.rpm == 0.0);
  CHECK(zero.ctr == 0.0);
  CHECK(zero.cvr == 0.0);

  try {
    compute_metrics("m", {}, "outcomes_ugsp.jsonl");
    FAIL("expected an error");
  } catch (const nga::Error& e) {
    CHECK(std::string(e.what()).find("outcomes_ugsp.jsonl") != std::string::npos);
  }

  nga::mech::RegretReport report;
  report.psi = 0.1;
  CHECK(psi_percent(report) == doctest::Approx(10.0));
}

TEST_CASE("results CSV: header, NA columns, round trip, byte-identical rewrite") {
  MetricsRow a;
  a.mechanism = "ugsp";
  a.rpm = 12.3456789;
  a.ctr = 4.5;
  a.psi = 1.25;
  MetricsRow b = a;
  b.mechanism = "nga";
  b.rt_median_ms = 0.25;
  b.rt_p99_ms = 1.5;
  const std::string text = format_results_csv({a, b});
  CHECK(text.rfind(std::string(kResultsHeader) + "\n", 0) == 0);
  CHECK(text.find("ugsp,12.345679,4.500000") != std::string::npos);
  CHECK(text.find(",NA,NA,") != std::string::npos);

  const auto dir = scratch("csv");
  RunManifest manifest;
  manifest.settings = default_settings();
  export_results({a, b}, manifest, dir);
  const auto back = read_results_csv(dir / "results.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].mechanism == "ugsp");
  CHECK_FALSE(back[0].rt_median_ms.has_value());
  CHECK(back[1].rt_p99_ms.value() == doctest::Approx(1.5));
  CHECK(format_results_csv(back) == slurp(dir / "results.csv"));

  MetricsRow bad = a;
  bad.mechanism = "a,b";
  CHECK_THROWS_AS(format_results_csv({bad}), nga::Error);
  fs::remove_all(dir);
}

TEST_CASE("settings parsing: defaults, overrides, errors") {
  const auto d = default_settings();
  CHECK(d.at("market.slots") == "10");
  const auto s = parse_settings("# comment\nmarket.slots = 4\n\nmech.ad_slots = 2,4 # trailing\n");
  CHECK(s.at("market.slots") == "4");
  CHECK(make_pipeline_config(s).ad_slots == std::vector<std::size_t>{2, 4});
  const auto roundtrip = parse_settings(settings_to_text(s));
  CHECK(roundtrip == s);

  auto expect_config_error = [](auto&& fn, const std::string& needle) {
    try {
      fn();
      FAIL("expected a config error");
    } catch (const nga::Error& e) {
      CHECK(e.kind() == nga::ErrorKind::kConfig);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_config_error([] { parse_settings("market.slot = 4\n", "a.cfg"); }, "market.slot");
  expect_config_error([] { parse_settings("market.slots 4\n", "a.cfg"); }, "a.cfg:1");
  expect_config_error([] { make_pipeline_config(parse_settings("market.slots = four\n")); }, "market.slots");
  expect_config_error([] { make_pipeline_config(parse_settings("train.rho = -1\n")); }, "rho");
  expect_config_error([] { make_pipeline_config(parse_settings("mech.grid = 0.5,2\n")); }, "1.0");
  expect_config_error([] { load_settings("/nonexistent/x.cfg"); }, "x.cfg");
  Settings copy = d;
  expect_config_error([&] { set_setting(copy, "nope", "1"); }, "nope");
}

TEST_CASE("latency benchmark counts one network call for NAR and k for AR") {
  nga::gen::Generator g(nga::gen::GeneratorConfig{});
  nga::market::MarketConfig m;
  m.ads = 8;
  m.organics = 6;
  m.slots = 5;
  m.constraints = {2, 3, true, true};
  const auto requests = sample_requests(m, 20, 3);
  const auto report = benchmark_latency(g, requests, 1, 2);
  CHECK(report.requests == 20);
  CHECK(report.nar_calls_per_request == 1.0);
  CHECK(report.ar_calls_per_request == 5.0);
  CHECK(report.nar_median_ms > 0.0);
  CHECK(report.nar_p99_ms >= report.nar_median_ms);
  CHECK(report.ar_p99_ms >= report.ar_median_ms);
  CHECK_THROWS_AS(benchmark_latency(g, {}, 1), nga::Error);
}

TEST_CASE("end-to-end: one repetition, two mechanisms, manifest rerun is byte-identical") {
  const auto config = make_pipeline_config(parse_settings(kTinyConfig));
  const auto dir = scratch("run");
  const auto result = run_experiment(config, dir);
  REQUIRE(result.rows.size() == 2);
  CHECK(result.rows[0].mechanism == "ugsp");
  CHECK(result.rows[1].mechanism == "nga");
  for (const auto& row : result.rows) {
    CHECK(row.rpm >= 0.0);
    CHECK(row.ctr > 0.0);
    CHECK(row.ctr <= 100.0);
    CHECK(row.psi >= 0.0);
    CHECK(row.std == 0.0);
    CHECK_FALSE(row.rt_median_ms.has_value());
  }
  CHECK(result.manifest.repetition_seeds.size() == 1);
  CHECK(fs::exists(dir / "manifest.json"));
  const std::string first = slurp(dir / "results.csv");

  const auto again = scratch("rerun");
  run_from_manifest(dir / "manifest.json", again);
  CHECK(slurp(again / "results.csv") == first);

  auto altered = nlohmann::json::parse(slurp(dir / "manifest.json"));
  altered["dataset_hashes"][0] = "deadbeef";
  {
    std::ofstream out(again / "tampered.json");
    out << altered.dump(2);
  }
  CHECK_THROWS_AS(run_from_manifest(again / "tampered.json", again), nga::Error);
  fs::remove_all(dir);
  fs::remove_all(again);
}
