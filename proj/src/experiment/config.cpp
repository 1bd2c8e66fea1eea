#include <charconv>
#include <fstream>
#include <sstream>

#include "nga/error.hpp"
#include "nga/experiment.hpp"

namespace nga::exp {

Settings default_settings() {
  return {
      {"market.n_ads", "30"},
      {"market.n_organic", "20"},
      {"market.slots", "10"},
      {"market.feature_dim", "8"},
      {"market.brands", "20"},
      {"market.min_ad_start", "3"},
      {"market.max_ads", "4"},
      {"market.brand_dedup", "true"},
      {"market.organic_order_fixed", "true"},
      {"market.neighbor_weight", "0.5"},
      {"market.position_decay", "0.2"},
      {"market.env_seed", "7"},
      {"model.width", "32"},
      {"model.layers", "2"},
      {"model.heads", "2"},
      {"model.ffn_width", "64"},
      {"model.tower_hidden", "32"},
      {"model.alpha", "5"},
      {"model.seed", "1"},
      {"mech.beam_size", "20"},
      {"mech.ad_slots", "3,6,9"},
      {"mech.grid", "0.2,0.4,0.6,0.8,1.0,1.2,1.4,1.6,1.8,2.0,2.2,2.4,2.6,2.8,3.0"},
      {"data.train_requests", "2000"},
      {"data.heldout_requests", "500"},
      {"data.seed", "101"},
      {"data.epsilon", "0.2"},
      {"train.lr", "0.003"},
      {"train.batch", "64"},
      {"train.evaluator_epochs", "5"},
      {"train.w1", "1"},
      {"train.w2", "1"},
      {"train.w3", "1"},
      {"train.rho", "1"},
      {"train.multiplier_step", "0.1"},
      {"train.multiplier_period", "100"},
      {"train.regret_subsample", "8"},
      {"train.regret_beam", "20"},
      {"train.pay_loss_through_ctr", "false"},
      {"train.generator_epochs", "20"},
      {"train.generator_requests", "200"},
      {"train.generator_batch", "16"},
      {"train.seed", "11"},
      {"exp.repetitions", "5"},
      {"exp.seed", "2024"},
      {"exp.mechanisms", "ugsp,nga"},
      {"exp.eval_requests", "1000"},
      {"exp.audit_requests", "50"},
      {"exp.record_latency", "false"},
  };
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const Settings& s, const std::string& key) {
  const auto& text = s.at(key);
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) fail(ErrorKind::kConfig, key + ": cannot parse '" + text + "'");
  return value;
}

std::size_t size_of(const Settings& s, const std::string& key) { return parse_number<std::size_t>(s, key); }
std::uint64_t u64_of(const Settings& s, const std::string& key) { return parse_number<std::uint64_t>(s, key); }
double real_of(const Settings& s, const std::string& key) { return parse_number<double>(s, key); }

bool bool_of(const Settings& s, const std::string& key) {
  const auto& v = s.at(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::kConfig, key + ": expected true or false, got '" + v + "'");
}

}  // namespace

void set_setting(Settings& settings, const std::string& key, const std::string& value) {
  const auto it = settings.find(key);
  if (it == settings.end()) fail(ErrorKind::kConfig, "unknown config key: " + key);
  it->second = value;
}

Settings parse_settings(const std::string& text, const std::string& origin) {
  Settings s = default_settings();
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_setting(s, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return s;
}

Settings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kConfig, "cannot read config file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_settings(buffer.str(), path.string());
}

std::string settings_to_text(const Settings& settings) {
  std::string out;
  for (const auto& [k, v] : settings) out += k + " = " + v + "\n";
  return out;
}

PipelineConfig make_pipeline_config(const Settings& s) {
  for (const auto& [key, value] : s) {
    if (!default_settings().count(key)) fail(ErrorKind::kConfig, "unknown config key: " + key);
  }
  PipelineConfig c;
  c.settings = s;

  auto& m = c.market;
  m.ads = size_of(s, "market.n_ads");
  m.organics = size_of(s, "market.n_organic");
  m.slots = size_of(s, "market.slots");
  m.feature_dim = size_of(s, "market.feature_dim");
  m.brands = size_of(s, "market.brands");
  m.constraints.min_ad_start = size_of(s, "market.min_ad_start");
  m.constraints.max_ads = size_of(s, "market.max_ads");
  m.constraints.brand_dedup = bool_of(s, "market.brand_dedup");
  m.constraints.organic_order_fixed = bool_of(s, "market.organic_order_fixed");
  m.environment.neighbor_weight = real_of(s, "market.neighbor_weight");
  m.environment.position_decay = real_of(s, "market.position_decay");
  m.environment.seed = u64_of(s, "market.env_seed");
  m.validate();

  const double alpha = real_of(s, "model.alpha");
  auto& g = c.generator;
  g.feature_dim = m.feature_dim;
  g.width = size_of(s, "model.width");
  g.layers = size_of(s, "model.layers");
  g.heads = size_of(s, "model.heads");
  g.ffn_width = size_of(s, "model.ffn_width");
  g.max_slots = m.slots;
  g.alpha = alpha;
  g.seed = u64_of(s, "model.seed");
  g.validate();

  auto& e = c.evaluator;
  e.feature_dim = m.feature_dim;
  e.width = g.width;
  e.layers = g.layers;
  e.heads = g.heads;
  e.ffn_width = g.ffn_width;
  e.tower_hidden = size_of(s, "model.tower_hidden");
  e.slots = m.slots;
  e.alpha = alpha;
  e.seed = g.seed + 1;
  e.validate();

  c.beam_size = size_of(s, "mech.beam_size");
  if (c.beam_size == 0) fail(ErrorKind::kConfig, "mech.beam_size must be positive");
  c.ad_slots.clear();
  for (const auto& part : split(s.at("mech.ad_slots"), ',')) {
    Settings one{{"mech.ad_slots", part}};
    const auto slot = size_of(one, "mech.ad_slots");
    if (slot == 0 || slot > m.slots) fail(ErrorKind::kConfig, "mech.ad_slots: slot " + part + " outside [1, k]");
    c.ad_slots.push_back(slot);
  }
  c.grid.multipliers.clear();
  for (const auto& part : split(s.at("mech.grid"), ',')) {
    Settings one{{"mech.grid", part}};
    c.grid.multipliers.push_back(real_of(one, "mech.grid"));
  }
  c.grid.validate();

  c.train_requests = size_of(s, "data.train_requests");
  c.heldout_requests = size_of(s, "data.heldout_requests");
  c.data_seed = u64_of(s, "data.seed");
  c.epsilon = real_of(s, "data.epsilon");
  if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) fail(ErrorKind::kConfig, "data.epsilon must lie in [0,1]");

  auto& et = c.evaluator_training;
  et.learning_rate = real_of(s, "train.lr");
  et.batch = size_of(s, "train.batch");
  et.epochs = size_of(s, "train.evaluator_epochs");
  et.w1 = real_of(s, "train.w1");
  et.w2 = real_of(s, "train.w2");
  et.w3 = real_of(s, "train.w3");
  et.rho = real_of(s, "train.rho");
  et.multiplier_step = real_of(s, "train.multiplier_step");
  et.multiplier_period = size_of(s, "train.multiplier_period");
  et.regret_subsample = size_of(s, "train.regret_subsample");
  et.beam_size = size_of(s, "train.regret_beam");
  et.pay_loss_through_ctr = bool_of(s, "train.pay_loss_through_ctr");
  et.grid = c.grid;
  et.seed = u64_of(s, "train.seed");
  et.validate();

  auto& gt = c.generator_training;
  gt.learning_rate = et.learning_rate;
  gt.epochs = size_of(s, "train.generator_epochs");
  gt.batch = size_of(s, "train.generator_batch");
  gt.beam_size = c.beam_size;
  gt.seed = et.seed + 1;
  gt.validate();
  c.generator_requests = size_of(s, "train.generator_requests");

  c.repetitions = size_of(s, "exp.repetitions");
  if (c.repetitions == 0) fail(ErrorKind::kConfig, "exp.repetitions must be positive");
  c.experiment_seed = u64_of(s, "exp.seed");
  c.mechanisms = split(s.at("exp.mechanisms"), ',');
  if (c.mechanisms.empty()) fail(ErrorKind::kConfig, "exp.mechanisms is empty");
  for (const auto& name : c.mechanisms) {
    if (name != "ugsp" && name != "nga" && name != "first-price") {
      fail(ErrorKind::kConfig, "exp.mechanisms: unknown mechanism '" + name + "'");
    }
  }
  c.eval_requests = size_of(s, "exp.eval_requests");
  if (c.eval_requests == 0) fail(ErrorKind::kConfig, "exp.eval_requests must be positive");
  c.audit_requests = size_of(s, "exp.audit_requests");
  c.record_latency = bool_of(s, "exp.record_latency");
  return c;
}

}  // namespace nga::exp
