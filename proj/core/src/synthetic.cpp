#include "clinembed/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "clinembed/error.hpp"
#include "json_util.hpp"

namespace clinembed {
namespace {

using detail::reject_unknown;

// Inverse standard normal CDF (Acklam's rational approximation, |err| < 1.2e-9).
double normal_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  if (p < lo) {
    const double q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > 1 - lo) {
    const double q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> cutpoints_for(const CategoricalGenerator& g) {
  if (!g.cutpoints.empty()) return g.cutpoints;
  std::vector<double> cuts;
  for (std::size_t l = 1; l < g.cardinality; ++l) {
    cuts.push_back(normal_quantile(static_cast<double>(l) / static_cast<double>(g.cardinality)));
  }
  return cuts;
}

std::vector<std::size_t> code_order_for(const CategoricalGenerator& g) {
  if (!g.code_order.empty()) return g.code_order;
  std::vector<std::size_t> order(g.cardinality);
  for (std::size_t l = 0; l < g.cardinality; ++l) order[l] = l;
  return order;
}

}  // namespace

GeneratorSpec GeneratorSpec::clinical_default() {
  GeneratorSpec s;
  // name, factor, loading, center, spread, label weight
  s.numerical = {
      {"DBP", 1, 1.0, 60.0, 12.0, 0.0},  {"FIO", 2, 1.0, 0.40, 0.10, 0.5},
      {"HR", 0, 1.0, 85.0, 15.0, 0.6},   {"MBP", 1, 1.0, 80.0, 12.0, -0.4},
      {"OS", 2, -1.0, 96.0, 2.5, -0.6},  {"RR", 0, 1.0, 18.0, 4.0, 0.6},
      {"SBP", 1, 1.0, 120.0, 18.0, -0.5}, {"Temp", 0, 1.0, 37.0, 0.6, 0.3},
  };
  // Severity levels increase with the latent score; codes are a fixed
  // relabelling of levels, as happens when category strings are sorted.
  s.categorical = {
      {"CRR", 1, -1.0, 0.5, 2, {1.0}, {0, 1}, 0.8},
      {"GCST", 3, 1.0, 0.3, 13, {}, {7, 2, 11, 0, 5, 9, 12, 3, 1, 8, 6, 10, 4}, -2.0},
      {"GCSEO", 3, 1.0, 0.5, 4, {}, {2, 0, 3, 1}, -0.8},
      {"GCSMR", 3, 1.0, 0.5, 6, {}, {3, 5, 0, 2, 4, 1}, -1.0},
      {"GCSVR", 3, 1.0, 0.5, 5, {}, {1, 4, 2, 0, 3}, -0.8},
  };
  return s;
}

FeatureSchema GeneratorSpec::schema() const {
  std::vector<FeatureSpec> specs;
  for (const NumericalGenerator& g : numerical) {
    specs.push_back({g.name, FeatureKind::Numerical, 0, 0.0, 1.0, 0});
  }
  for (const CategoricalGenerator& g : categorical) {
    specs.push_back({g.name, FeatureKind::Categorical, g.cardinality, 0.0, 1.0, 0});
  }
  return FeatureSchema(std::move(specs));
}

void GeneratorSpec::validate() const {
  if (n_stays < 1) throw ConfigError("n_stays must be >= 1");
  if (min_steps < 1 || max_steps < min_steps) throw ConfigError("need 1 <= min_steps <= max_steps");
  if (!(ar_rho >= 0.0 && ar_rho < 1.0)) throw ConfigError("ar_rho must lie in [0, 1)");
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("missing_rate must lie in [0, 1)");
  if (!(prevalence > 0.0 && prevalence < 0.5)) throw ConfigError("prevalence must lie in (0, 0.5)");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  for (const NumericalGenerator& g : numerical) {
    if (g.factor >= n_factors) throw ConfigError("feature " + g.name + " uses an unknown factor");
    if (!(g.spread > 0.0)) throw ConfigError("feature " + g.name + " needs spread > 0");
  }
  for (const CategoricalGenerator& g : categorical) {
    if (g.factor >= n_factors) throw ConfigError("feature " + g.name + " uses an unknown factor");
    if (g.cardinality < 2) throw ConfigError("feature " + g.name + " needs cardinality >= 2");
    if (!g.cutpoints.empty()) {
      if (g.cutpoints.size() != g.cardinality - 1 ||
          !std::is_sorted(g.cutpoints.begin(), g.cutpoints.end())) {
        throw ConfigError("feature " + g.name + " needs cardinality-1 increasing cutpoints");
      }
    }
    if (!g.code_order.empty()) {
      std::vector<std::size_t> sorted = g.code_order;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t l = 0; l < sorted.size(); ++l) {
        if (sorted.size() != g.cardinality || sorted[l] != l) {
          throw ConfigError("feature " + g.name + " code_order must permute 0..cardinality-1");
        }
      }
    }
  }
  schema();  // name uniqueness and kind coverage
}

nlohmann::json GeneratorSpec::to_json() const {
  nlohmann::json j;
  j["n_stays"] = n_stays;
  j["min_steps"] = min_steps;
  j["max_steps"] = max_steps;
  j["n_factors"] = n_factors;
  j["ar_rho"] = ar_rho;
  j["noise"] = noise;
  j["missing_rate"] = missing_rate;
  j["prevalence"] = prevalence;
  j["horizon"] = horizon;
  j["seed"] = seed;
  j["numerical"] = nlohmann::json::array();
  for (const NumericalGenerator& g : numerical) {
    j["numerical"].push_back({{"name", g.name}, {"factor", g.factor}, {"loading", g.loading},
                              {"center", g.center}, {"spread", g.spread},
                              {"label_weight", g.label_weight}});
  }
  j["categorical"] = nlohmann::json::array();
  for (const CategoricalGenerator& g : categorical) {
    j["categorical"].push_back({{"name", g.name}, {"factor", g.factor}, {"loading", g.loading},
                                {"noise", g.noise}, {"cardinality", g.cardinality},
                                {"cutpoints", g.cutpoints}, {"code_order", g.code_order},
                                {"label_weight", g.label_weight}});
  }
  return j;
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  try {
    reject_unknown(j,
                   {"n_stays", "min_steps", "max_steps", "n_factors", "ar_rho", "noise",
                    "missing_rate", "prevalence", "horizon", "seed", "numerical", "categorical"},
                   "generator spec");
    GeneratorSpec s = clinical_default();
    s.n_stays = j.value("n_stays", s.n_stays);
    s.min_steps = j.value("min_steps", s.min_steps);
    s.max_steps = j.value("max_steps", s.max_steps);
    s.n_factors = j.value("n_factors", s.n_factors);
    s.ar_rho = j.value("ar_rho", s.ar_rho);
    s.noise = j.value("noise", s.noise);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
    s.prevalence = j.value("prevalence", s.prevalence);
    s.horizon = j.value("horizon", s.horizon);
    s.seed = j.value("seed", s.seed);
    if (j.contains("numerical")) {
      s.numerical.clear();
      for (const auto& item : j.at("numerical")) {
        reject_unknown(item, {"name", "factor", "loading", "center", "spread", "label_weight"},
                       "numerical generator");
        NumericalGenerator g;
        g.name = item.at("name").get<std::string>();
        g.factor = item.value("factor", g.factor);
        g.loading = item.value("loading", g.loading);
        g.center = item.value("center", g.center);
        g.spread = item.value("spread", g.spread);
        g.label_weight = item.value("label_weight", g.label_weight);
        s.numerical.push_back(std::move(g));
      }
    }
    if (j.contains("categorical")) {
      s.categorical.clear();
      for (const auto& item : j.at("categorical")) {
        reject_unknown(item,
                       {"name", "factor", "loading", "noise", "cardinality", "cutpoints",
                        "code_order", "label_weight"},
                       "categorical generator");
        CategoricalGenerator g;
        g.name = item.at("name").get<std::string>();
        g.factor = item.value("factor", g.factor);
        g.loading = item.value("loading", g.loading);
        g.noise = item.value("noise", g.noise);
        g.cardinality = item.value("cardinality", g.cardinality);
        g.cutpoints = item.value("cutpoints", g.cutpoints);
        g.code_order = item.value("code_order", g.code_order);
        g.label_weight = item.value("label_weight", g.label_weight);
        s.categorical.push_back(std::move(g));
      }
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator spec: ") + e.what());
  }
}

Dataset generate_synthetic(const GeneratorSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.min_steps, spec.max_steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset data;
  data.schema = spec.schema();
  const std::size_t n_num = spec.numerical.size();
  const std::size_t d = data.schema.size();
  const double innovation = std::sqrt(1.0 - spec.ar_rho * spec.ar_rho);

  std::vector<std::vector<double>> cuts;
  std::vector<std::vector<std::size_t>> codes;
  for (const CategoricalGenerator& g : spec.categorical) {
    cuts.push_back(cutpoints_for(g));
    codes.push_back(code_order_for(g));
  }

  // Label score without the intercept, one per step in generation order.
  std::vector<double> scores;
  std::vector<double> factors(spec.n_factors);
  for (std::size_t s = 0; s < spec.n_stays; ++s) {
    StayRecord stay;
    stay.stay_id = static_cast<std::int64_t>(s + 1);
    stay.steps = length(rng);
    stay.values.assign(stay.steps * d, 0.0);
    stay.missing.assign(stay.steps * d, 0);
    for (std::size_t t = 0; t < stay.steps; ++t) {
      for (double& f : factors) f = t == 0 ? normal(rng) : spec.ar_rho * f + innovation * normal(rng);
      double score = 0.0;
      for (std::size_t i = 0; i < n_num; ++i) {
        const NumericalGenerator& g = spec.numerical[i];
        const double z = g.loading * factors[g.factor] + spec.noise * normal(rng);
        stay.values[t * d + i] = g.center + g.spread * z;
        score += g.label_weight * z;
      }
      for (std::size_t k = 0; k < spec.categorical.size(); ++k) {
        const CategoricalGenerator& g = spec.categorical[k];
        const double raw = g.loading * factors[g.factor] + g.noise * normal(rng);
        const double latent = raw / std::sqrt(g.loading * g.loading + g.noise * g.noise);
        const std::size_t level = static_cast<std::size_t>(
            std::upper_bound(cuts[k].begin(), cuts[k].end(), latent) - cuts[k].begin());
        stay.values[t * d + n_num + k] = static_cast<double>(codes[k][level]);
        score += g.label_weight *
                 (static_cast<double>(level) / static_cast<double>(g.cardinality - 1) - 0.5);
      }
      scores.push_back(score);
    }
    data.stays.push_back(std::move(stay));
  }

  auto expected_prevalence = [&](double b0) {
    double acc = 0.0;
    for (double sc : scores) acc += sigmoid(sc + b0);
    return acc / static_cast<double>(scores.size());
  };
  double lo = -50.0, hi = 50.0;
  if (expected_prevalence(lo) > spec.prevalence || expected_prevalence(hi) < spec.prevalence) {
    throw ConfigError("prevalence target is unreachable");
  }
  double b0 = 0.0;
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    b0 = 0.5 * (lo + hi);
    const double p = expected_prevalence(b0);
    if (std::abs(p - spec.prevalence) < 1e-9) {
      converged = true;
      break;
    }
    (p < spec.prevalence ? lo : hi) = b0;
  }
  if (!converged && std::abs(expected_prevalence(b0) - spec.prevalence) > 1e-4) {
    throw ConfigError("prevalence bisection did not converge");
  }

  std::size_t idx = 0;
  for (StayRecord& stay : data.stays) {
    stay.step_labels.resize(stay.steps);
    bool event = false;
    for (std::size_t t = 0; t < stay.steps; ++t) {
      const bool y = unit(rng) < sigmoid(scores[idx++] + b0);
      stay.step_labels[t] = y ? 1 : 0;
      if (y && t < spec.horizon) event = true;
    }
    stay.stay_label = event;
  }

  if (spec.missing_rate > 0.0) {
    for (StayRecord& stay : data.stays) {
      for (std::size_t c = 0; c < stay.values.size(); ++c) {
        if (unit(rng) < spec.missing_rate) {
          stay.missing[c] = 1;
          stay.values[c] = std::numeric_limits<double>::quiet_NaN();
        }
      }
    }
  }
  return data;
}

}  // namespace clinembed
