#include "nfa/harness/report.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>

#include "nfa/error.hpp"
#include "nfa/io.hpp"

namespace nfa::harness {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json record_json(const attack::ExampleRecord& r) {
  return {{"index", r.index},   {"label", r.label},           {"success", r.success},
          {"queries", r.queries}, {"final_loss", r.final_loss}, {"norm", r.norm},
          {"numeric_error", r.numeric_error}};
}

bool same(const json& a, const json& b) {
  if (a.is_null() || b.is_null()) return a.is_null() && b.is_null();
  return a.get<double>() == b.get<double>();
}

}  // namespace

json aggregates_json(const attack::Aggregates& a) {
  return {{"examples", a.examples},
          {"successes", a.successes},
          {"success_rate_percent", a.success_rate_percent},
          {"avg_queries", optional_number(a.avg_queries)},
          {"median_queries", optional_number(a.median_queries)}};
}

json make_report(const ReportInput& in, const std::string& timestamp) {
  require(!in.records.empty(), "report: at least one record is required");
  json records = json::array();
  for (const auto& r : in.records) records.push_back(record_json(r));
  return {{"metadata", {{"timestamp", timestamp}, {"tool", "nfa"}}},
          {"run", {{"attack", in.attack}, {"target", in.target}, {"skipped_misclassified", in.skipped}}},
          {"config", in.config},
          {"records", records},
          {"aggregates", aggregates_json(attack::aggregate(in.records))},
          {"observations", in.observations}};
}

std::string report_csv(const std::vector<attack::ExampleRecord>& records) {
  std::ostringstream os;
  os << "index,label,success,queries,final_loss,norm\n";
  for (const auto& r : records)
    os << r.index << ',' << r.label << ',' << (r.success ? 1 : 0) << ',' << r.queries << ','
       << json(r.final_loss).dump() << ',' << json(r.norm).dump() << '\n';
  return os.str();
}

void verify_aggregates(const json& report) {
  std::vector<attack::ExampleRecord> records;
  for (const auto& r : report.at("records")) {
    attack::ExampleRecord rec;
    rec.success = r.at("success").get<bool>();
    rec.queries = r.at("queries").get<std::size_t>();
    records.push_back(rec);
  }
  const json expect = aggregates_json(attack::aggregate(records));
  const json& got = report.at("aggregates");
  for (const char* key : {"examples", "successes", "success_rate_percent", "avg_queries", "median_queries"})
    if (!same(expect.at(key), got.at(key)))
      throw NumericError(std::string("report aggregate '") + key + "' disagrees with its records: " + got.at(key).dump() +
                         " vs " + expect.at(key).dump());
}

ReportPaths emit_report(const ReportInput& in, const std::filesystem::path& prefix) {
  const json doc = make_report(in, utc_timestamp());
  verify_aggregates(doc);
  ReportPaths paths{prefix, prefix};
  paths.json += ".json";
  paths.csv += ".csv";
  io::write_file_atomic(paths.json, doc.dump(2) + "\n");
  io::write_file_atomic(paths.csv, report_csv(in.records));
  return paths;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace nfa::harness
