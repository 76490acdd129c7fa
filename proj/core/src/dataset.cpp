#include "clinembed/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "clinembed/error.hpp"
#include "clinembed/rng.hpp"
#include "clinembed/tokenizer.hpp"

namespace clinembed {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("line " + std::to_string(line) + ": cannot parse '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, std::size_t line) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("line " + std::to_string(line) + ": cannot parse integer '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t StayRecord::missing_count(std::size_t t, std::size_t d) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < d; ++i) n += missing[t * d + i];
  return n;
}

std::size_t Dataset::total_steps() const {
  std::size_t n = 0;
  for (const StayRecord& s : stays) n += s.steps;
  return n;
}

Split split_of(std::int64_t stay_id, std::uint64_t seed) {
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(stay_id) ^ splitmix64(seed));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < 0.70) return Split::Train;
  if (u < 0.85) return Split::Validation;
  return Split::Test;
}

SplitDataset split_dataset(const Dataset& data, std::uint64_t seed) {
  SplitDataset out;
  for (Dataset* part : {&out.train, &out.validation, &out.test}) {
    part->schema = data.schema;
    part->imputed = data.imputed;
    part->normalized = data.normalized;
  }
  for (const StayRecord& s : data.stays) {
    switch (split_of(s.stay_id, seed)) {
      case Split::Train: out.train.stays.push_back(s); break;
      case Split::Validation: out.validation.stays.push_back(s); break;
      case Split::Test: out.test.stays.push_back(s); break;
    }
  }
  return out;
}

FeatureStats fit_statistics(const Dataset& train) {
  const FeatureSchema& schema = train.schema;
  const std::size_t d = schema.size();
  FeatureStats stats;
  stats.mean.assign(d, 0.0);
  stats.std.assign(d, 0.0);
  stats.mode.assign(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    const FeatureSpec& f = schema[i];
    std::size_t count = 0;
    if (f.kind == FeatureKind::Numerical) {
      double sum = 0.0;
      for (const StayRecord& s : train.stays) {
        for (std::size_t t = 0; t < s.steps; ++t) {
          if (s.missing[t * d + i]) continue;
          sum += s.values[t * d + i];
          ++count;
        }
      }
      if (count == 0) throw SchemaError("feature " + f.name + " is entirely missing in training data");
      const double mu = sum / static_cast<double>(count);
      double ss = 0.0;
      for (const StayRecord& s : train.stays) {
        for (std::size_t t = 0; t < s.steps; ++t) {
          if (s.missing[t * d + i]) continue;
          const double dv = s.values[t * d + i] - mu;
          ss += dv * dv;
        }
      }
      stats.mean[i] = mu;
      stats.std[i] = std::sqrt(ss / static_cast<double>(count));
    } else {
      std::vector<std::size_t> counts(f.cardinality, 0);
      for (const StayRecord& s : train.stays) {
        for (std::size_t t = 0; t < s.steps; ++t) {
          if (s.missing[t * d + i]) continue;
          ++counts[category_code(s.values[t * d + i], f)];
          ++count;
        }
      }
      if (count == 0) throw SchemaError("feature " + f.name + " is entirely missing in training data");
      stats.mode[i] = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  }
  return stats;
}

Dataset impute(Dataset data, const FeatureStats& stats) {
  const FeatureSchema& schema = data.schema;
  const std::size_t d = schema.size();
  for (StayRecord& s : data.stays) {
    for (std::size_t t = 0; t < s.steps; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        if (!s.missing[t * d + i]) continue;
        double fill = schema.is_numerical(i) ? stats.mean[i] : static_cast<double>(stats.mode[i]);
        // An already-normalized dataset stores z-scores, where the mean is 0.
        if (data.normalized && schema.is_numerical(i)) fill = 0.0;
        s.values[t * d + i] = fill;
      }
    }
  }
  data.imputed = true;
  return data;
}

Dataset normalize(Dataset data, const FeatureStats& stats) {
  if (data.normalized) throw DataError("dataset is already normalized");
  const FeatureSchema& schema = data.schema;
  const std::size_t d = schema.size();
  for (std::size_t i : schema.numerical()) {
    if (!(stats.std[i] > 0.0)) throw SchemaError("feature " + schema[i].name + " has zero std");
  }
  for (StayRecord& s : data.stays) {
    for (std::size_t t = 0; t < s.steps; ++t) {
      for (std::size_t i : schema.numerical()) {
        double& v = s.values[t * d + i];
        if (s.missing[t * d + i] && !data.imputed) continue;
        v = (v - stats.mean[i]) / stats.std[i];
      }
    }
  }
  data.normalized = true;
  return data;
}

FeatureSchema with_statistics(const FeatureSchema& schema, const FeatureStats& stats) {
  FeatureSchema out = schema;
  for (std::size_t i : schema.numerical()) out.set_numerical_stats(i, stats.mean[i], stats.std[i]);
  for (std::size_t i : schema.categorical()) out.set_mode(i, stats.mode[i]);
  return out;
}

std::vector<StepRef> filter_steps(const Dataset& data, std::size_t max_missing) {
  const std::size_t d = data.schema.size();
  std::vector<StepRef> pool;
  for (std::size_t s = 0; s < data.stays.size(); ++s) {
    const StayRecord& stay = data.stays[s];
    for (std::size_t t = 0; t < stay.steps; ++t) {
      if (stay.missing_count(t, d) <= max_missing) pool.push_back({s, t});
    }
  }
  return pool;
}

PreparedData prepare(const Dataset& raw, std::uint64_t split_seed) {
  if (raw.normalized || raw.imputed) throw DataError("prepare expects raw (unprocessed) data");
  PreparedData out;
  SplitDataset splits = split_dataset(raw, split_seed);
  if (splits.train.stays.empty()) throw DataError("training split is empty");
  out.stats = fit_statistics(splits.train);
  out.schema = with_statistics(raw.schema, out.stats);
  for (Dataset* part : {&splits.train, &splits.validation, &splits.test}) {
    *part = normalize(impute(std::move(*part), out.stats), out.stats);
    part->schema = out.schema;
  }
  out.splits = std::move(splits);
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 2 || header[0] != "stay_id" || header[1] != "step") {
    throw SchemaError("CSV header must start with stay_id,step");
  }
  const std::size_t d = schema.size();
  std::vector<std::size_t> column_feature(header.size(), kNoSlot);
  std::size_t label_col = kNoSlot;
  std::size_t stay_label_col = kNoSlot;
  std::vector<bool> seen(d, false);
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (header[c] == "label") {
      label_col = c;
    } else if (header[c] == "stay_label") {
      stay_label_col = c;
    } else {
      const std::size_t f = schema.index_of(header[c]);
      if (seen[f]) throw SchemaError("duplicate column " + header[c]);
      seen[f] = true;
      column_feature[c] = f;
    }
  }
  for (std::size_t f = 0; f < d; ++f) {
    if (!seen[f]) throw SchemaError("CSV lacks feature column " + schema[f].name);
  }

  struct Row {
    std::vector<double> values;
    std::vector<std::uint8_t> missing;
    int label = -1;
    int stay_label = -1;
  };
  std::map<std::int64_t, std::map<std::int64_t, Row>> grouped;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields");
    }
    const std::int64_t id = parse_int(fields[0], line_no);
    const std::int64_t step = parse_int(fields[1], line_no);
    Row row;
    row.values.assign(d, kMissing);
    row.missing.assign(d, 1);
    for (std::size_t c = 2; c < fields.size(); ++c) {
      if (c == label_col || c == stay_label_col) {
        if (fields[c].empty()) continue;
        const std::int64_t v = parse_int(fields[c], line_no);
        if (v != 0 && v != 1) throw DataError("line " + std::to_string(line_no) + ": labels must be 0/1");
        (c == label_col ? row.label : row.stay_label) = static_cast<int>(v);
        continue;
      }
      if (fields[c].empty()) continue;
      const std::size_t f = column_feature[c];
      const double v = parse_double(fields[c], line_no);
      if (!schema.is_numerical(f)) category_code(v, schema[f]);
      row.values[f] = v;
      row.missing[f] = 0;
    }
    auto& stay = grouped[id];
    if (!stay.emplace(step, std::move(row)).second) {
      throw DataError("duplicate step " + std::to_string(step) + " for stay " + std::to_string(id));
    }
  }

  Dataset data;
  data.schema = schema;
  for (auto& [id, rows] : grouped) {
    StayRecord s;
    s.stay_id = id;
    std::int64_t expected = 0;
    bool any_label = false;
    for (auto& [step, row] : rows) {
      if (step != expected) {
        throw DataError("stay " + std::to_string(id) + " has non-contiguous step index " +
                        std::to_string(step));
      }
      ++expected;
      s.values.insert(s.values.end(), row.values.begin(), row.values.end());
      s.missing.insert(s.missing.end(), row.missing.begin(), row.missing.end());
      if (row.label >= 0) {
        any_label = true;
        s.step_labels.push_back(static_cast<std::uint8_t>(row.label));
      }
      if (row.stay_label >= 0) {
        if (s.stay_label && *s.stay_label != (row.stay_label == 1)) {
          throw DataError("stay " + std::to_string(id) + " has inconsistent stay_label");
        }
        s.stay_label = row.stay_label == 1;
      }
    }
    s.steps = rows.size();
    if (any_label && s.step_labels.size() != s.steps) {
      throw DataError("stay " + std::to_string(id) + " has partially missing labels");
    }
    data.stays.push_back(std::move(s));
  }
  return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const FeatureSchema& schema = data.schema;
  const std::size_t d = schema.size();
  const bool has_labels = !data.stays.empty() && !data.stays.front().step_labels.empty();
  const bool has_stay_labels = !data.stays.empty() && data.stays.front().stay_label.has_value();
  out << "stay_id,step";
  for (const FeatureSpec& f : schema.features()) out << ',' << f.name;
  if (has_labels) out << ",label";
  if (has_stay_labels) out << ",stay_label";
  out << '\n';
  for (const StayRecord& s : data.stays) {
    for (std::size_t t = 0; t < s.steps; ++t) {
      out << s.stay_id << ',' << t;
      for (std::size_t i = 0; i < d; ++i) {
        out << ',';
        if (s.missing[t * d + i]) continue;
        const double v = s.values[t * d + i];
        if (schema.is_numerical(i)) {
          out << format_double(v);
        } else {
          out << static_cast<long long>(v);
        }
      }
      if (has_labels) out << ',' << static_cast<int>(s.step_labels.at(t));
      if (has_stay_labels) out << ',' << (s.stay_label.value() ? 1 : 0);
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json dataset_manifest(const Dataset& data, std::uint64_t split_seed) {
  const std::size_t d = data.schema.size();
  std::size_t steps = 0, positives = 0, stay_pos = 0, missing = 0;
  std::size_t counts[3] = {0, 0, 0};
  for (const StayRecord& s : data.stays) {
    steps += s.steps;
    for (std::uint8_t y : s.step_labels) positives += y;
    if (s.stay_label.value_or(false)) ++stay_pos;
    for (std::uint8_t m : s.missing) missing += m;
    ++counts[static_cast<int>(split_of(s.stay_id, split_seed))];
  }
  const double n_stays = static_cast<double>(std::max<std::size_t>(1, data.stays.size()));
  const double n_steps = static_cast<double>(std::max<std::size_t>(1, steps));
  nlohmann::json j;
  j["n_features"] = d;
  j["n_numerical"] = data.schema.numerical().size();
  j["n_categorical"] = data.schema.categorical().size();
  j["n_stays"] = data.stays.size();
  j["n_steps"] = steps;
  j["step_prevalence"] = static_cast<double>(positives) / n_steps;
  j["stay_prevalence"] = static_cast<double>(stay_pos) / n_stays;
  j["missing_fraction"] = static_cast<double>(missing) / (n_steps * static_cast<double>(d));
  j["schema_hash"] = data.schema.hash();
  j["split_seed"] = split_seed;
  j["splits"] = {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}};
  return j;
}

}  // namespace clinembed
