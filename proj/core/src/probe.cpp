#include "clinembed/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

double mean_pairwise_distance(const std::vector<const ProbePoint*>& pts) {
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      acc += distance(pts[i]->vector, pts[j]->vector);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : acc / static_cast<double>(pairs);
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                    "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173",
                                    "#3182bd", "#e6550d", "#31a354", "#756bb1", "#636363"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string marker(const ProbePoint& p, double x, double y, const char* colour) {
  const double r = 5.0;
  std::string shape;
  if (!p.numerical) {
    shape = "<rect x=\"" + fmt(x - r * 0.8) + "\" y=\"" + fmt(y - r * 0.8) + "\" width=\"" +
            fmt(r * 1.6) + "\" height=\"" + fmt(r * 1.6) + "\"";
  } else if (p.level == "mid") {
    shape = "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(r) + "\"";
  } else {
    const double dir = p.level == "high" ? -1.0 : 1.0;  // SVG y grows downwards
    shape = "<polygon points=\"" + fmt(x) + "," + fmt(y + dir * r) + " " + fmt(x - r) + "," +
            fmt(y - dir * r) + " " + fmt(x + r) + "," + fmt(y - dir * r) + "\"";
  }
  return shape + " fill=\"" + colour + "\"><title>" + xml_escape(p.feature + " " + p.level) +
         "</title></" + (p.numerical ? (p.level == "mid" ? "circle" : "polygon") : "rect") + ">";
}

}  // namespace

std::vector<ProbePoint> probe_numerical(const TokenizerParams& params, const FeatureSchema& schema) {
  std::vector<ProbePoint> out;
  const std::size_t m = params.dim;
  for (std::size_t s = 0; s < schema.numerical().size(); ++s) {
    const std::string& name = schema[schema.numerical()[s]].name;
    const auto w = params.num_weight.row(s);
    const auto b = params.num_bias.row(s);
    for (const auto& [level, x] : {std::pair{"low", -3.0}, std::pair{"mid", 0.0}, std::pair{"high", 3.0}}) {
      ProbePoint p{name, level, true, std::vector<double>(m)};
      for (std::size_t c = 0; c < m; ++c) p.vector[c] = x == 0.0 ? b[c] : x * w[c] + b[c];
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<ProbePoint> probe_categorical(const TokenizerParams& params, const FeatureSchema& schema) {
  std::vector<ProbePoint> out;
  const std::size_t m = params.dim;
  for (std::size_t k = 0; k < schema.categorical().size(); ++k) {
    const FeatureSpec& f = schema[schema.categorical()[k]];
    const auto b = params.cat_bias.row(k);
    for (std::size_t code = 0; code < f.cardinality; ++code) {
      const auto w = params.cat_weight[k].row(code);
      ProbePoint p{f.name, std::to_string(code), false, std::vector<double>(m)};
      for (std::size_t c = 0; c < m; ++c) p.vector[c] = w[c] + b[c];
      out.push_back(std::move(p));
    }
  }
  return out;
}

Tensor probe_matrix(const std::vector<ProbePoint>& points) {
  if (points.empty()) return Tensor({0, 0});
  const std::size_t m = points.front().vector.size();
  Tensor out({points.size(), m});
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].vector.size() != m) throw ShapeError("probe vectors differ in length");
    std::copy(points[i].vector.begin(), points[i].vector.end(), out.row(i).begin());
  }
  return out;
}

std::vector<PlantedPair> default_planted_pairs() {
  return {{"Temp", "RR", 1}, {"RR", "HR", 1}, {"SBP", "DBP", 1}, {"OS", "FIO", -1}};
}

std::vector<PlantedPair> planted_pairs_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("planted pairs must be a JSON array");
  std::vector<PlantedPair> out;
  try {
    for (const auto& item : j) {
      for (const auto& [key, _] : item.items()) {
        if (key != "a" && key != "b" && key != "sign") throw ConfigError("unknown key '" + key + "' in planted pair");
      }
      PlantedPair p{item.at("a").get<std::string>(), item.at("b").get<std::string>(), item.value("sign", 1)};
      if (p.sign != 1 && p.sign != -1) throw ConfigError("planted pair sign must be 1 or -1");
      out.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed planted pairs: ") + e.what());
  }
  return out;
}

CorrelationReport correlation_report(const std::vector<ProbePoint>& points,
                                     const std::vector<PlantedPair>& planted) {
  // Numerical features in first-appearance order with their directions.
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> low, high;
  std::vector<const ProbePoint*> mids, all;
  for (const ProbePoint& p : points) {
    if (!p.numerical) continue;
    all.push_back(&p);
    if (std::find(names.begin(), names.end(), p.feature) == names.end()) names.push_back(p.feature);
    if (p.level == "low") low[p.feature] = p.vector;
    if (p.level == "high") high[p.feature] = p.vector;
    if (p.level == "mid") mids.push_back(&p);
  }
  std::map<std::string, std::vector<double>> dir;
  for (const std::string& n : names) {
    if (!low.count(n) || !high.count(n)) throw SchemaError("feature " + n + " lacks low or high probe");
    std::vector<double> v(low[n].size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = high[n][c] - low[n][c];
    dir[n] = std::move(v);
  }
  auto cosine = [&](const std::string& a, const std::string& b) {
    const auto& x = dir.at(a);
    const auto& y = dir.at(b);
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      xy += x[c] * y[c];
      xx += x[c] * x[c];
      yy += y[c] * y[c];
    }
    if (xx == 0.0 || yy == 0.0) return 0.0;
    return xy / std::sqrt(xx * yy);
  };

  CorrelationReport report;
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = i + 1; j < names.size(); ++j) {
      report.pairs.push_back({names[i], names[j], cosine(names[i], names[j]), 0});
    }
  }
  std::stable_sort(report.pairs.begin(), report.pairs.end(),
                   [](const PairCosine& x, const PairCosine& y) { return x.cosine > y.cosine; });
  for (std::size_t r = 0; r < report.pairs.size(); ++r) report.pairs[r].rank = r + 1;
  report.top_quartile = std::max<std::size_t>(1, report.pairs.size() / 4);

  for (const PlantedPair& pp : planted) {
    if (!dir.count(pp.a) || !dir.count(pp.b)) {
      throw SchemaError("planted pair (" + pp.a + ", " + pp.b + ") names an unknown numerical feature");
    }
    PlantedResult res{pp, 0.0, 0, false};
    for (const PairCosine& pc : report.pairs) {
      if ((pc.a == pp.a && pc.b == pp.b) || (pc.a == pp.b && pc.b == pp.a)) {
        res.cosine = pc.cosine;
        res.rank = pc.rank;
      }
    }
    res.recovered = pp.sign > 0 ? res.rank <= report.top_quartile : res.cosine < 0.0;
    report.planted.push_back(res);
  }
  report.mid_mean_distance = mean_pairwise_distance(mids);
  report.all_mean_distance = mean_pairwise_distance(all);
  report.mid_clustered = report.mid_mean_distance < report.all_mean_distance;
  return report;
}

nlohmann::json CorrelationReport::to_json() const {
  nlohmann::json j;
  j["pairs"] = nlohmann::json::array();
  for (const PairCosine& p : pairs) {
    j["pairs"].push_back({{"a", p.a}, {"b", p.b}, {"cosine", p.cosine}, {"rank", p.rank}});
  }
  j["top_quartile"] = top_quartile;
  j["planted"] = nlohmann::json::array();
  for (const PlantedResult& p : planted) {
    j["planted"].push_back({{"a", p.pair.a},
                            {"b", p.pair.b},
                            {"sign", p.pair.sign},
                            {"cosine", p.cosine},
                            {"rank", p.rank},
                            {"recovered", p.recovered}});
  }
  j["mid_mean_distance"] = mid_mean_distance;
  j["all_mean_distance"] = all_mean_distance;
  j["mid_clustered"] = mid_clustered;
  return j;
}

void emit_scatter(const std::vector<ProbePoint>& points, const Tensor& coords,
                  const std::filesystem::path& csv_path, const std::filesystem::path& svg_path) {
  if (coords.rank() != 2 || coords.dim(0) != points.size() || coords.dim(1) != 2) {
    throw ShapeError("emit_scatter needs one 2-D coordinate per point");
  }
  if (!coords.all_finite()) throw ContractError("scatter coordinates must be finite");

  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
  csv << "name,level,x,y\n";
  char buf[96];
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", coords.at(i, 0), coords.at(i, 1));
    csv << points[i].feature << ',' << points[i].level << ',' << buf << '\n';
  }
  if (!csv) throw IoError("failed writing " + csv_path.string());

  const double width = 720.0, height = 540.0, margin = 40.0, legend = 140.0;
  double xmin = coords.at(0, 0), xmax = xmin, ymin = coords.at(0, 1), ymax = ymin;
  for (std::size_t i = 0; i < points.size(); ++i) {
    xmin = std::min(xmin, coords.at(i, 0));
    xmax = std::max(xmax, coords.at(i, 0));
    ymin = std::min(ymin, coords.at(i, 1));
    ymax = std::max(ymax, coords.at(i, 1));
  }
  const double xspan = xmax > xmin ? xmax - xmin : 1.0;
  const double yspan = ymax > ymin ? ymax - ymin : 1.0;
  const double plot_w = width - 2 * margin - legend;
  const double plot_h = height - 2 * margin;

  std::map<std::string, std::size_t> colour_of;
  std::vector<std::string> order;
  for (const ProbePoint& p : points) {
    if (colour_of.emplace(p.feature, colour_of.size()).second) order.push_back(p.feature);
  }
  const std::size_t palette = sizeof kPalette / sizeof kPalette[0];

  std::ofstream svg(svg_path, std::ios::binary);
  if (!svg) throw IoError("cannot open " + svg_path.string() + " for writing");
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
      << fmt(height) << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << fmt(margin) << "\" y=\"" << fmt(margin) << "\" width=\"" << fmt(plot_w)
      << "\" height=\"" << fmt(plot_h) << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double x = margin + (coords.at(i, 0) - xmin) / xspan * plot_w;
    const double y = margin + plot_h - (coords.at(i, 1) - ymin) / yspan * plot_h;
    svg << marker(points[i], x, y, kPalette[colour_of[points[i].feature] % palette]) << '\n';
  }
  const double lx = width - legend + 10.0;
  for (std::size_t f = 0; f < order.size(); ++f) {
    const double ly = margin + 18.0 * static_cast<double>(f);
    svg << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly) << "\" width=\"10.00\" height=\"10.00\" fill=\""
        << kPalette[f % palette] << "\"/>\n";
    svg << "<text x=\"" << fmt(lx + 16.0) << "\" y=\"" << fmt(ly + 9.0)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(order[f]) << "</text>\n";
  }
  const double ky = margin + 18.0 * static_cast<double>(order.size()) + 12.0;
  svg << "<text x=\"" << fmt(lx) << "\" y=\"" << fmt(ky)
      << "\" font-family=\"sans-serif\" font-size=\"12\">&#9660; low &#9679; mid &#9650; high</text>\n";
  svg << "</svg>\n";
  if (!svg) throw IoError("failed writing " + svg_path.string());
}

}  // namespace clinembed
