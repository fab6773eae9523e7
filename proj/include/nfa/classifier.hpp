#ifndef NFA_CLASSIFIER_HPP
#define NFA_CLASSIFIER_HPP

#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <vector>

#include "nfa/data.hpp"
#include "nfa/layers.hpp"
#include "nfa/prng.hpp"

namespace nfa::classifier {

inline constexpr std::size_t kDefaultBudget = 10000;
inline constexpr double kDefaultEps = 8.0 / 255.0;
inline constexpr std::size_t kDefaultPgdSteps = 100;

/// MLP with a log-softmax head.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(Mlp<float> net, std::size_t classes);

  std::size_t input_width() const { return net_.in_width(); }
  std::size_t classes() const noexcept { return classes_; }
  const Mlp<float>& net() const noexcept { return net_; }
  Mlp<float>& net() noexcept { return net_; }

  std::vector<float> logprobs(std::span<const float> x) const;
  Matrix<float> logprobs(const Matrix<float>& x) const;
  std::size_t predict(std::span<const float> x) const;

 private:
  Mlp<float> net_;
  std::size_t classes_ = 0;
};

/// clf_logprobs
inline std::vector<float> clf_logprobs(const ClassifierModel& m, std::span<const float> x) { return m.logprobs(x); }

struct ClassifierConfig {
  std::size_t hidden = 64;
  std::size_t depth = 2;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double slope = kDefaultLeakySlope;
  std::uint64_t seed = 0;
};

struct AdvTrainConfig {
  double eps = kDefaultEps;
  std::size_t steps = 7;
  double step_size = 0.0;  // 0 selects 2.5 * eps / steps
  bool random_start = true;
};

struct ClassifierEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct ClassifierTrainResult {
  ClassifierModel model;
  std::vector<ClassifierEpoch> trace;
};

ClassifierModel make_classifier(std::size_t input_width, std::size_t classes, const ClassifierConfig& cfg);

/// -logprobs[y]
double cross_entropy(std::span<const float> logprobs, std::size_t y);

/// Cross-entropy training with Adam.
ClassifierTrainResult train_classifier(const data::Dataset& train, const ClassifierConfig& cfg);

/// Same loop, but every batch is replaced by PGD adversaries of the current model.
ClassifierTrainResult pgd_adv_train(const data::Dataset& train, const ClassifierConfig& cfg, const AdvTrainConfig& adv);

double accuracy(const ClassifierModel& m, const data::Dataset& ds);

struct PgdResult {
  std::vector<float> x_adv;
  std::size_t steps_used = 0;
  bool success = false;  // prediction differs from y
};

/// White-box l-inf PGD on the C&W margin: sign-gradient steps, each followed
/// by projection onto the eps-ball and [0,1]. step_size 0 selects 2.5 * eps / steps.
PgdResult pgd_attack(const ClassifierModel& m, std::span<const float> x, std::size_t y, double eps,
                     std::size_t steps = kDefaultPgdSteps, double step_size = 0.0);

/// Black-box view of a classifier: log-probabilities only, every call counted.
/// The counter is guarded by a mutex so concurrent callers are serialized.
class QueryOracle {
 public:
  using Observer = std::function<void(std::span<const float>)>;

  explicit QueryOracle(const ClassifierModel& model, std::size_t budget = kDefaultBudget);

  QueryOracle(const QueryOracle&) = delete;
  QueryOracle& operator=(const QueryOracle&) = delete;

  /// Throws BudgetExhausted once `budget` queries have been answered.
  std::vector<float> query(std::span<const float> x);

  std::size_t count() const;
  std::size_t budget() const noexcept { return budget_; }
  std::size_t remaining() const;
  bool exhausted() const;
  std::size_t input_width() const;

  // Sees every image that is answered (instrumentation only).
  void set_observer(Observer obs);

 private:
  const ClassifierModel& model_;
  std::size_t budget_;
  std::size_t count_ = 0;
  Observer observer_;
  mutable std::mutex mu_;
};

/// oracle_query
inline std::vector<float> oracle_query(QueryOracle& o, std::span<const float> x) { return o.query(x); }

}  // namespace nfa::classifier

#endif  // NFA_CLASSIFIER_HPP
