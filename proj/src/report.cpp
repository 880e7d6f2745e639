#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "noc/eval.hpp"
#include "noc/tensor.hpp"

namespace noc {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string report_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "experiment,category,metric,mean,sd,n\n";
  for (const auto& r : rows)
    os << csv_field(r.experiment) << ',' << csv_field(r.category) << ',' << csv_field(r.metric) << ','
       << fixed6(r.mean) << ',' << fixed6(r.sd) << ',' << r.n << '\n';
  return os.str();
}

nlohmann::json report_json(const std::vector<MetricRow>& rows, const std::vector<NamedBreakdown>& breakdowns) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"experiment", r.experiment},
                         {"category", r.category},
                         {"metric", r.metric},
                         {"mean", r.mean},
                         {"sd", r.sd},
                         {"n", r.n}});
  j["breakdowns"] = nlohmann::json::array();
  for (const auto& nb : breakdowns) {
    const auto& b = nb.breakdown;
    nlohmann::json e;
    e["experiment"] = nb.experiment;
    e["n_gt"] = b.n_gt;
    e["counted"] = b.counted;
    for (std::size_t k = 0; k < 5; ++k) {
      e["counts"][kErrorTypeNames[k]] = b.counts[k];
      e["fractions"][kErrorTypeNames[k]] = b.fractions[k];
    }
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [cat, counts] : b.per_category) per[std::to_string(cat)] = counts;
    e["per_category"] = per;
    j["breakdowns"].push_back(e);
  }
  return j;
}

std::vector<MetricRow> rows_from_json(const nlohmann::json& j) {
  std::vector<MetricRow> rows;
  for (const auto& r : j.at("rows"))
    rows.push_back({r.at("experiment"), r.at("category"), r.at("metric"), r.at("mean"), r.at("sd"), r.at("n")});
  return rows;
}

std::vector<NamedBreakdown> breakdowns_from_json(const nlohmann::json& j) {
  std::vector<NamedBreakdown> out;
  for (const auto& e : j.at("breakdowns")) {
    NamedBreakdown nb;
    nb.experiment = e.at("experiment");
    nb.breakdown.n_gt = e.at("n_gt");
    nb.breakdown.counted = e.at("counted");
    for (std::size_t k = 0; k < 5; ++k) {
      nb.breakdown.counts[k] = e.at("counts").at(kErrorTypeNames[k]);
      nb.breakdown.fractions[k] = e.at("fractions").at(kErrorTypeNames[k]);
    }
    for (const auto& [key, counts] : e.at("per_category").items())
      nb.breakdown.per_category[std::stoul(key)] = counts.get<std::array<std::size_t, 5>>();
    out.push_back(std::move(nb));
  }
  return out;
}

void emit_report(const std::string& dir, const std::vector<MetricRow>& rows,
                 const std::vector<NamedBreakdown>& breakdowns) {
  std::filesystem::create_directories(dir);
  const auto csv_path = std::filesystem::path(dir) / "results.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << report_csv(rows);
  const auto json_path = std::filesystem::path(dir) / "breakdown.json";
  std::ofstream js(json_path, std::ios::binary);
  if (!js) throw std::runtime_error("cannot write " + json_path.string());
  js << report_json(rows, breakdowns).dump(2) << '\n';
  if (!csv || !js) throw std::runtime_error("failed writing report to " + dir);
}

void write_detections_jsonl(std::ostream& out, const std::vector<Detection>& detections) {
  for (const auto& d : detections) {
    const nlohmann::json j = {{"image_id", d.image_id}, {"category", d.category}, {"x1", d.region.x1},
                              {"y1", d.region.y1},      {"x2", d.region.x2},       {"y2", d.region.y2},
                              {"score", d.score}};
    out << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(std::istream& in) {
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d;
      d.image_id = j.at("image_id").get<std::size_t>();
      d.category = j.at("category").get<std::size_t>();
      d.region = make_region(j.at("x1"), j.at("y1"), j.at("x2"), j.at("y2"));
      d.score = j.at("score").get<double>();
      if (!std::isfinite(d.score)) throw std::invalid_argument("non-finite score");
      out.push_back(d);
    } catch (const std::exception& e) {
      throw FormatError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace noc
