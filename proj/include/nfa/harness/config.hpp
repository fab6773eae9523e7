#ifndef NFA_HARNESS_CONFIG_HPP
#define NFA_HARNESS_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "nfa/attack.hpp"
#include "nfa/classifier.hpp"
#include "nfa/data.hpp"
#include "nfa/flow/train.hpp"

namespace nfa::harness {

enum class NesProfile { vanilla, defended };

/// Effective settings for every pipeline stage.
///
/// File grammar: `[section]` headers, `key = value` lines, `#` starts a
/// comment, blank lines ignored. Sections are data, flow, classifier, attack
/// and io; unknown sections or keys are rejected with the line number.
///
///   [data]        seed, source (shapes|idx), idx_images, idx_labels, count,
///                 classes, size, noise_std, max_offset, train_fraction,
///                 flow_train_count (0 = whole train split)
///   [flow]        hidden, depth, high_res_blocks, low_res_blocks, fc_blocks,
///                 alpha, delta, slope, epochs, batch_size, lr_initial,
///                 lr_final, dequantize
///   [classifier]  hidden, depth, epochs, batch_size, lr, slope, adv_eps,
///                 adv_steps, adv_step_size
///   [attack]      kind (flow|nes|pgd), eps, norm (inf|2), budget,
///                 max_examples, sigma, samples, elites, max_iters,
///                 sigma_init, nes_profile (vanilla|defended), nes_sigma,
///                 nes_samples, nes_lr, pgd_steps, pgd_step_size
///   [io]          out, dump_count, sample_count, sample_temperature
struct RunConfig {
  std::uint64_t seed = 0;

  // [data]
  std::string source = "shapes";
  std::string idx_images;
  std::string idx_labels;
  data::ShapesConfig shapes;
  double train_fraction = 0.8;
  std::size_t flow_train_count = 2000;

  // [flow]
  flow::FlowTrainConfig flow;

  // [classifier]
  classifier::ClassifierConfig classifier;
  classifier::AdvTrainConfig adv;

  // [attack]
  attack::AttackKind kind = attack::AttackKind::flow;
  attack::AttackConfig latent;
  NesProfile nes_profile = NesProfile::vanilla;
  std::optional<double> nes_sigma;
  std::optional<std::size_t> nes_samples;
  std::optional<double> nes_lr;
  attack::PgdConfig pgd;
  std::size_t max_examples = 100;

  // [io]
  std::string out = "out";
  std::size_t dump_count = 8;
  std::size_t sample_count = 64;
  double sample_temperature = 1.0;

  /// Seeds of every stage are derived from `seed`; call after changing it.
  void derive_seeds();
  /// Throws ContractViolation naming the first bad setting.
  void validate() const;

  attack::NesConfig nes() const;
  attack::EvalConfig eval_config() const;

  nlohmann::json to_json() const;
};

RunConfig default_config();
/// Parses config text over the defaults. ParseError names the line.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

std::string to_string(NesProfile p);
NesProfile nes_profile_from_string(const std::string& s);

}  // namespace nfa::harness

#endif  // NFA_HARNESS_CONFIG_HPP
