#include "clinembed/schema.hpp"

#include <cstdint>
#include <cstdio>
#include <set>

#include "clinembed/error.hpp"

namespace clinembed {

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
  if (features_.size() < 2) throw SchemaError("schema needs at least 2 features");
  std::set<std::string> names;
  slot_.assign(features_.size(), kNoSlot);
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const FeatureSpec& f = features_[i];
    if (f.name.empty()) throw SchemaError("feature " + std::to_string(i) + " has no name");
    if (!names.insert(f.name).second) throw SchemaError("duplicate feature name " + f.name);
    if (f.kind == FeatureKind::Numerical) {
      if (!(f.std > 0.0)) throw SchemaError("feature " + f.name + " needs std > 0");
      slot_[i] = numerical_.size();
      numerical_.push_back(i);
    } else {
      if (f.cardinality < 2) throw SchemaError("feature " + f.name + " needs cardinality >= 2");
      if (f.mode >= f.cardinality) throw SchemaError("feature " + f.name + " has mode out of range");
      slot_[i] = categorical_.size();
      categorical_.push_back(i);
      cat_offset_.push_back(total_categories_);
      total_categories_ += f.cardinality;
    }
  }
  if (numerical_.empty() || categorical_.empty()) {
    throw SchemaError("schema needs at least one numerical and one categorical feature");
  }
}

FeatureSchema FeatureSchema::clinical_default() {
  auto num = [](std::string name) {
    return FeatureSpec{std::move(name), FeatureKind::Numerical, 0, 0.0, 1.0, 0};
  };
  auto cat = [](std::string name, std::size_t c) {
    return FeatureSpec{std::move(name), FeatureKind::Categorical, c, 0.0, 1.0, 0};
  };
  return FeatureSchema({
      num("DBP"), num("FIO"), num("HR"), num("MBP"), num("OS"), num("RR"), num("SBP"), num("Temp"),
      cat("CRR", 2), cat("GCST", 13), cat("GCSEO", 4), cat("GCSMR", 6), cat("GCSVR", 5),
  });
}

std::size_t FeatureSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  throw SchemaError("unknown feature " + name);
}

void FeatureSchema::set_numerical_stats(std::size_t feature, double mean, double std) {
  FeatureSpec& f = features_.at(feature);
  if (f.kind != FeatureKind::Numerical) throw SchemaError(f.name + " is not numerical");
  if (!(std > 0.0)) throw SchemaError("feature " + f.name + " has zero spread");
  f.mean = mean;
  f.std = std;
}

void FeatureSchema::set_mode(std::size_t feature, std::size_t mode) {
  FeatureSpec& f = features_.at(feature);
  if (f.kind != FeatureKind::Categorical) throw SchemaError(f.name + " is not categorical");
  if (mode >= f.cardinality) throw SchemaError("mode out of range for " + f.name);
  f.mode = mode;
}

std::string FeatureSchema::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const FeatureSpec& f : features_) {
    feed(f.name);
    feed(f.kind == FeatureKind::Numerical ? ":num:" : ":cat:");
    feed(std::to_string(f.cardinality));
    feed(";");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const FeatureSpec& f : features_) {
    nlohmann::json j;
    j["name"] = f.name;
    if (f.kind == FeatureKind::Numerical) {
      j["kind"] = "numerical";
      j["mean"] = f.mean;
      j["std"] = f.std;
    } else {
      j["kind"] = "categorical";
      j["cardinality"] = f.cardinality;
      j["mode"] = f.mode;
    }
    features.push_back(std::move(j));
  }
  return nlohmann::json{{"features", std::move(features)}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureSpec> specs;
    for (const auto& item : j.at("features")) {
      for (const auto& [key, _] : item.items()) {
        if (key != "name" && key != "kind" && key != "cardinality" && key != "mean" &&
            key != "std" && key != "mode") {
          throw SchemaError("unknown schema key '" + key + "'");
        }
      }
      FeatureSpec f;
      f.name = item.at("name").get<std::string>();
      const std::string kind = item.at("kind").get<std::string>();
      if (kind == "numerical") {
        f.kind = FeatureKind::Numerical;
        f.mean = item.value("mean", 0.0);
        f.std = item.value("std", 1.0);
      } else if (kind == "categorical") {
        f.kind = FeatureKind::Categorical;
        f.cardinality = item.at("cardinality").get<std::size_t>();
        f.mode = item.value("mode", std::size_t{0});
      } else {
        throw SchemaError("feature " + f.name + " has unknown kind '" + kind + "'");
      }
      specs.push_back(std::move(f));
    }
    return FeatureSchema(std::move(specs));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema document: ") + e.what());
  }
}

std::size_t default_max_missing(std::size_t d) { return (15 * d) / 18; }

}  // namespace clinembed
