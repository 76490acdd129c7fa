#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "clinembed/schema.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

inline constexpr int kCheckpointVersion = 1;

/// Serialized model state passed between pipeline stages. `model_kind` is
/// "tokenizer" (CBOW pretraining), "mlm" or "downstream".
struct Checkpoint {
  int schema_version = kCheckpointVersion;
  std::string model_kind;
  FeatureSchema schema;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> parameters;

  nlohmann::json to_json() const;
  /// Throws SchemaError on a version mismatch, an unknown model kind or a
  /// schema hash that disagrees with the embedded schema.
  static Checkpoint from_json(const nlohmann::json& j);

  /// Throws SchemaError unless `active` has the same hash as the stored schema.
  void require_schema(const FeatureSchema& active) const;

  const Tensor& parameter(const std::string& name) const;
};

/// Numbers are written as shortest round-trip decimals, so save -> load ->
/// save reproduces the file byte for byte. Throws IoError on I/O failure.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `j` with a trailing newline; throws IoError.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path, int indent = 2);
/// Throws IoError when unreadable and ConfigError when not valid JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace clinembed
