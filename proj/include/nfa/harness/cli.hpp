#ifndef NFA_HARNESS_CLI_HPP
#define NFA_HARNESS_CLI_HPP

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace nfa::harness {

/// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation or runtime failure
inline constexpr int kExitUsage = 2;    // unknown subcommand or flag

/// Files produced under --out.
struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path train_set() const { return root / "data" / "train.nfds"; }
  std::filesystem::path test_set() const { return root / "data" / "test.nfds"; }
  std::filesystem::path flow() const { return root / "models" / "flow.nfck"; }
  std::filesystem::path classifier(bool defended) const {
    return root / "models" / (defended ? "classifier_defended.nfck" : "classifier.nfck");
  }
  // <reports>/<stage>_<attack>_<target>{.json,.csv}
  std::filesystem::path report(const std::string& stage, const std::string& attack, bool defended) const {
    return root / "reports" / (stage + "_" + attack + "_" + (defended ? "defended" : "vanilla"));
  }
  std::filesystem::path adversarial(const std::string& attack, bool defended) const {
    return root / "reports" / ("adversarial_" + attack + "_" + (defended ? "defended" : "vanilla") + ".nfds");
  }
  std::filesystem::path images(const std::string& attack, bool defended) const {
    return root / "images" / (attack + "_" + (defended ? "defended" : "vanilla"));
  }
  std::filesystem::path samples() const { return root / "samples"; }
};

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nfa::harness

#endif  // NFA_HARNESS_CLI_HPP
