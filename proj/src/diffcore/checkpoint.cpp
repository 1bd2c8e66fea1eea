#include "nga/diff/checkpoint.hpp"

#include <fstream>

#include "nga/error.hpp"

namespace nga::diff {

nlohmann::json to_checkpoint(const ParameterSet& params, const nlohmann::json& model_config) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, value] : params.entries()) {
    entries.push_back({{"name", name},
                       {"shape", value.shape()},
                       {"values", std::vector<double>(value.data().begin(), value.data().end())}});
  }
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"model", model_config},
          {"params", std::move(entries)}};
}

void load_checkpoint(ParameterSet& params, const nlohmann::json& checkpoint) {
  try {
    if (checkpoint.at("format").get<std::string>() != kCheckpointFormat) {
      fail(ErrorKind::kConfig, "not an nga-params checkpoint");
    }
    const int version = checkpoint.at("version").get<int>();
    if (version != kCheckpointVersion) {
      fail(ErrorKind::kConfig, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto& entries = checkpoint.at("params");
    if (entries.size() != params.size()) {
      fail(ErrorKind::kConfig, "checkpoint has " + std::to_string(entries.size()) + " parameters, model has " +
                                   std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& [name, tensor] = params.entries()[i];
      const auto& e = entries[i];
      if (e.at("name").get<std::string>() != name) {
        fail(ErrorKind::kConfig, "checkpoint parameter " + std::to_string(i) + " is '" +
                                     e.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      if (e.at("shape").get<Shape>() != tensor.shape()) fail(ErrorKind::kConfig, "shape mismatch for " + name);
      const auto values = e.at("values").get<std::vector<double>>();
      auto dst = tensor.mutable_data();
      if (values.size() != dst.size()) fail(ErrorKind::kConfig, "value count mismatch for " + name);
      std::copy(values.begin(), values.end(), dst.begin());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed checkpoint: ") + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open for reading: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

}  // namespace nga::diff
