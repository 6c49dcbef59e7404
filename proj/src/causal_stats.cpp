#include "devlbert/causal_stats.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace devlbert {

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field,
                                     int line_number) {
  if (!j.contains(field) || !j.at(field).is_array()) {
    throw ValidationError("line " + std::to_string(line_number) + ": missing array field \"" +
                          field + "\"");
  }
  std::vector<std::string> out;
  for (const auto& v : j.at(field)) {
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else if (v.is_number_integer()) {
      out.push_back(std::to_string(v.get<long long>()));
    } else {
      throw ValidationError("line " + std::to_string(line_number) + ": field \"" + field +
                            "\" holds a non-symbol entry");
    }
  }
  return out;
}

}  // namespace

StatsRecord parse_stats_record(const std::string& line, int line_number) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ValidationError("line " + std::to_string(line_number) + ": not a JSON object");
  }
  StatsRecord r;
  r.x = string_list(j, "x", line_number);
  r.y = string_list(j, "y", line_number);
  r.z = string_list(j, "z", line_number);
  return r;
}

std::vector<StatsRecord> read_stats_jsonl(std::istream& in) {
  std::vector<StatsRecord> records;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_stats_record(line, line_number));
  }
  return records;
}

CooccurrenceTable<std::uint64_t> ingest(const std::vector<StatsRecord>& records,
                                        bool multiplicity) {
  CooccurrenceTable<std::uint64_t> table;
  for (const auto& r : records) table.add(r, multiplicity);
  return table;
}

StatsReport make_report(const CooccurrenceTable<std::uint64_t>& table,
                        const std::vector<std::pair<std::string, std::string>>& pairs,
                        const std::vector<std::string>* z_vocab) {
  StatsReport report;
  for (const auto& [x, y] : pairs) {
    PairReport p;
    p.x = x;
    p.y = y;
    p.conditional = table.conditional(y, x);
    p.interventional = table.interventional(y, x, z_vocab, &p.coverage);
    p.ratio = p.interventional > 0 ? p.conditional / p.interventional
                                   : std::numeric_limits<double>::infinity();
    report.pairs.push_back(std::move(p));
  }
  std::stable_sort(report.pairs.begin(), report.pairs.end(),
                   [](const PairReport& a, const PairReport& b) {
                     return (a.conditional - a.interventional) >
                            (b.conditional - b.interventional);
                   });
  return report;
}

nlohmann::json report_to_json(const StatsReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"x", p.x},
                     {"y", p.y},
                     {"conditional", p.conditional},
                     {"interventional", p.interventional},
                     {"gap", p.conditional - p.interventional},
                     {"ratio", std::isfinite(p.ratio) ? nlohmann::json(p.ratio)
                                                      : nlohmann::json()},
                     {"coverage", p.coverage}});
  }
  return nlohmann::json{{"pairs", pairs}};
}

std::string report_to_text(const StatsReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "x" << std::setw(12) << "y" << std::right
      << std::setw(14) << "conditional" << std::setw(16) << "interventional" << std::setw(12)
      << "gap" << std::setw(10) << "ratio" << std::setw(10) << "coverage" << "\n";
  out << std::string(86, '-') << "\n";
  for (const auto& p : report.pairs) {
    out << std::left << std::setw(12) << p.x << std::setw(12) << p.y << std::right
        << std::fixed << std::setprecision(6) << std::setw(14) << p.conditional
        << std::setw(16) << p.interventional << std::setw(12)
        << (p.conditional - p.interventional);
    if (std::isfinite(p.ratio)) {
      out << std::setw(10) << std::setprecision(3) << p.ratio;
    } else {
      out << std::setw(10) << "inf";
    }
    out << std::setw(10) << std::setprecision(3) << p.coverage << "\n";
    out.unsetf(std::ios::fixed);
  }
  return out.str();
}

}  // namespace devlbert
