#ifndef NFA_ATTACK_HPP
#define NFA_ATTACK_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfa/classifier.hpp"
#include "nfa/data.hpp"
#include "nfa/flow/model.hpp"
#include "nfa/prng.hpp"
#include "nfa/projection.hpp"

namespace nfa::attack {

using classifier::ClassifierModel;
using classifier::QueryOracle;
using flow::FlowModel;

/// max(0, lp_y - max_{c != y} lp_c). Zero iff y is not the strict argmax.
double cw_loss(std::span<const float> logprobs, std::size_t y);

struct AttackConfig {
  double sigma = 0.1;         // latent noise std
  std::size_t samples = 20;   // candidates per iteration
  std::size_t elites = 4;     // k lowest-loss candidates averaged into mu
  std::size_t max_iters = 500;
  double eps = 8.0 / 255.0;
  Norm norm = Norm::linf;
  std::size_t budget = classifier::kDefaultBudget;
  double sigma_init = 0.01;   // mu_0 ~ N(0, sigma_init^2 I)
  std::uint64_t seed = 0;

  void validate() const;
  /// samples * max_iters >= budget, i.e. the iteration cap cannot stop the attack early.
  bool covers_budget() const { return samples * max_iters >= budget; }
};

struct NesConfig {
  double sigma = 0.1;
  std::size_t samples = 50;   // even: samples/2 antithetic pairs
  double lr = 0.01;
  double eps = 8.0 / 255.0;
  Norm norm = Norm::linf;
  std::size_t budget = classifier::kDefaultBudget;
  std::uint64_t seed = 0;

  static NesConfig vanilla() { return {}; }
  static NesConfig defended() {
    NesConfig c;
    c.sigma = 0.001;
    c.samples = 100;
    return c;
  }
  void validate() const;
};

/// Snapshot handed to the per-iteration callback of latent_attack.
struct AttackState {
  std::vector<float> z_clean;
  std::vector<float> mu;
  std::size_t iteration = 0;
  std::vector<float> best;
  double best_loss = 0.0;
  std::size_t queries = 0;
};

using IterationCallback = std::function<void(const AttackState&)>;

struct AttackResult {
  bool success = false;
  std::size_t queries = 0;
  std::vector<float> x_adv;  // best candidate seen (the adversarial image on success)
  double final_loss = 0.0;
  double norm = 0.0;         // ||x_adv - x||_p
  std::size_t iterations = 0;
  bool budget_exhausted = false;
  bool numeric_error = false;
};

/// Black-box search over the flow's base space around the clean image's latent code.
/// Each iteration draws `samples` latents z_clean + mu + sigma*e, decodes them,
/// projects into the eps-ball, queries them in order and moves mu to the mean
/// re-encoded latent of the `elites` best (projected) candidates.
AttackResult latent_attack(std::span<const float> x, std::size_t y, const FlowModel<float>& flow, QueryOracle& oracle,
                           const AttackConfig& cfg, Prng& prng, const IterationCallback& on_iteration = {});

/// NES with antithetic sampling on the C&W loss and signed, projected steps.
/// The starting image is queried once; every iteration then spends exactly
/// `samples` queries on probes.
AttackResult nes_attack(std::span<const float> x, std::size_t y, QueryOracle& oracle, const NesConfig& cfg, Prng& prng);

/// Antithetic NES gradient estimate of `loss` at x (probes are not projected).
std::vector<double> nes_gradient(const std::function<double(std::span<const float>)>& loss, std::span<const float> x,
                                 double sigma, std::size_t samples, Prng& prng);

enum class AttackKind { flow, nes, pgd };
std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& name);

struct PgdConfig {
  std::size_t steps = classifier::kDefaultPgdSteps;
  double step_size = 0.0;
  double eps = 8.0 / 255.0;
};

struct EvalConfig {
  AttackKind kind = AttackKind::flow;
  AttackConfig latent;
  NesConfig nes;
  PgdConfig pgd;
  std::size_t max_examples = 0;  // cap on eligible examples, 0 = whole set
  std::uint64_t seed = 0;
  // Called for every answered oracle query with the example index; must be
  // thread-safe when NF_THREADS > 1.
  std::function<void(std::size_t, std::span<const float>)> query_observer;
};

struct ExampleRecord {
  std::size_t index = 0;  // position in the evaluated dataset
  std::uint32_t label = 0;
  bool success = false;
  std::size_t queries = 0;
  double final_loss = 0.0;
  double norm = 0.0;
  bool numeric_error = false;
};

struct Aggregates {
  std::size_t examples = 0;
  std::size_t successes = 0;
  double success_rate_percent = 0.0;     // two decimals, round half up
  std::optional<double> avg_queries;     // over successful examples
  std::optional<double> median_queries;  // over successful examples
};

Aggregates aggregate(std::span<const ExampleRecord> records);

struct Evaluation {
  std::vector<ExampleRecord> records;
  std::vector<std::vector<float>> adversarial;  // aligned with records
  std::size_t skipped = 0;                      // misclassified, not attacked
  Aggregates aggregates;
};

/// Attacks every correctly classified example with a fresh oracle and a
/// per-example PRNG stream. Throws ContractViolation when nothing is eligible.
Evaluation evaluate(const data::Dataset& test, const ClassifierModel& clf, const FlowModel<float>* flow,
                    const EvalConfig& cfg);

}  // namespace nfa::attack

#endif  // NFA_ATTACK_HPP
