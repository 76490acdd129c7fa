#include "clinembed/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

bool known_kind(const std::string& kind) {
  return kind == "tokenizer" || kind == "mlm" || kind == "downstream";
}

}  // namespace

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["model_kind"] = model_kind;
  j["schema_hash"] = schema.hash();
  j["schema"] = schema.to_json();
  j["config"] = config;
  j["seed"] = seed;
  j["metadata"] = metadata;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : parameters) {
    const auto values = t.values();
    params[name] = {{"shape", t.shape()},
                    {"values", std::vector<double>(values.begin(), values.end())}};
  }
  j["parameters"] = std::move(params);
  return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  try {
    Checkpoint c;
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kCheckpointVersion) {
      throw SchemaError("unsupported checkpoint version " + std::to_string(c.schema_version));
    }
    c.model_kind = j.at("model_kind").get<std::string>();
    if (!known_kind(c.model_kind)) throw SchemaError("unknown model kind '" + c.model_kind + "'");
    c.schema = FeatureSchema::from_json(j.at("schema"));
    if (c.schema.hash() != j.at("schema_hash").get<std::string>()) {
      throw SchemaError("checkpoint schema hash does not match its schema");
    }
    c.config = j.at("config");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.metadata = j.at("metadata");
    for (const auto& [name, p] : j.at("parameters").items()) {
      c.parameters.emplace(name, Tensor(p.at("shape").get<Shape>(), p.at("values").get<std::vector<double>>()));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw SchemaError(std::string("malformed checkpoint parameter: ") + e.what());
  }
}

void Checkpoint::require_schema(const FeatureSchema& active) const {
  if (active.hash() != schema.hash()) {
    throw SchemaError("checkpoint schema " + schema.hash() + " does not match active schema " +
                      active.hash());
  }
}

const Tensor& Checkpoint::parameter(const std::string& name) const {
  const auto it = parameters.find(name);
  if (it == parameters.end()) throw SchemaError("checkpoint lacks parameter '" + name + "'");
  return it->second;
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(indent) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_json_file(ckpt.to_json(), path, -1);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const ConfigError& e) {
    throw SchemaError(e.what());
  }
  return Checkpoint::from_json(j);
}

}  // namespace clinembed
