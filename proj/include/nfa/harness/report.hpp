#ifndef NFA_HARNESS_REPORT_HPP
#define NFA_HARNESS_REPORT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfa/attack.hpp"

namespace nfa::harness {

struct ReportInput {
  std::string attack;                 // flow | nes | pgd
  std::string target = "vanilla";     // vanilla | defended classifier
  nlohmann::json config = nlohmann::json::object();
  std::vector<attack::ExampleRecord> records;
  std::size_t skipped = 0;
  nlohmann::json observations = nlohmann::json::object();
};

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path csv;
};

/// Report document. Everything except metadata.timestamp is a pure function
/// of the input, so two identical runs differ only in that field.
nlohmann::json make_report(const ReportInput& in, const std::string& timestamp);

/// One row per example: index,label,success,queries,final_loss,norm.
std::string report_csv(const std::vector<attack::ExampleRecord>& records);

/// Recomputes the aggregates from the document's own records; throws
/// NumericError on any disagreement.
void verify_aggregates(const nlohmann::json& report);

/// Writes <prefix>.json and <prefix>.csv atomically after verification.
ReportPaths emit_report(const ReportInput& in, const std::filesystem::path& prefix);

nlohmann::json aggregates_json(const attack::Aggregates& a);

std::string utc_timestamp();

}  // namespace nfa::harness

#endif  // NFA_HARNESS_REPORT_HPP
