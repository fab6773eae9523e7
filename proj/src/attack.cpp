#include "nfa/attack.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "nfa/error.hpp"
#include "nfa/kernels.hpp"
#include "nfa/parallel.hpp"

namespace nfa::attack {

double cw_loss(std::span<const float> logprobs, std::size_t y) {
  require(logprobs.size() >= 2, "cw_loss: need at least two classes");
  require(y < logprobs.size(), "cw_loss: label " + std::to_string(y) + " out of range");
  double other = -INFINITY;
  for (std::size_t c = 0; c < logprobs.size(); ++c)
    if (c != y) other = std::max(other, static_cast<double>(logprobs[c]));
  return std::max(0.0, static_cast<double>(logprobs[y]) - other);
}

void AttackConfig::validate() const {
  require(sigma > 0.0, "attack: sigma must be positive");
  require(eps > 0.0, "attack: eps must be positive");
  require(samples >= 1 && elites >= 1 && elites <= samples, "attack: need 1 <= elites <= samples");
  require(max_iters >= 1, "attack: max_iters must be positive");
  require(budget >= 1, "attack: budget must be positive");
  require(sigma_init >= 0.0, "attack: sigma_init must be non-negative");
}

void NesConfig::validate() const {
  require(sigma > 0.0, "nes: sigma must be positive");
  require(eps > 0.0, "nes: eps must be positive");
  require(samples >= 2 && samples % 2 == 0, "nes: sample size must be even (antithetic pairs)");
  require(lr > 0.0, "nes: learning rate must be positive");
  require(budget >= 1, "nes: budget must be positive");
}

namespace {

struct Verdict {
  double loss;
  bool flipped;
};

Verdict ask(QueryOracle& oracle, std::span<const float> x, std::size_t y) {
  const auto lp = oracle.query(x);
  return {cw_loss(lp, y), kernels::argmax(std::span<const float>(lp)) != y};
}

void finish(AttackResult& r, std::span<const float> x, Norm p, const QueryOracle& oracle) {
  r.queries = oracle.count();
  if (!r.x_adv.empty()) r.norm = distance(r.x_adv, x, p);
}

}  // namespace

AttackResult latent_attack(std::span<const float> x, std::size_t y, const FlowModel<float>& flow, QueryOracle& oracle,
                           const AttackConfig& cfg, Prng& prng, const IterationCallback& on_iteration) {
  cfg.validate();
  const std::size_t d = x.size();
  require(d == flow.dim(), "latent_attack: image has " + std::to_string(d) + " pixels, flow expects " +
                               std::to_string(flow.dim()));
  require(d == oracle.input_width(), "latent_attack: image does not match the oracle input width");

  AttackResult result;
  AttackState state;
  state.best_loss = INFINITY;
  try {
    state.z_clean = flow.inverse(rows_of(x, 1, d)).z.values();
    state.mu.resize(d);
    for (auto& m : state.mu) m = static_cast<float>(cfg.sigma_init * prng.normal());

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      state.iteration = it + 1;
      result.iterations = it + 1;
      Matrix<float> z({cfg.samples, d});
      for (std::size_t i = 0; i < cfg.samples; ++i)
        for (std::size_t j = 0; j < d; ++j)
          z(i, j) = static_cast<float>(state.z_clean[j] + state.mu[j] + cfg.sigma * prng.normal());
      const Matrix<float> decoded = flow.forward(std::move(z));

      Matrix<float> cand({cfg.samples, d});
      std::vector<double> losses(cfg.samples);
      for (std::size_t i = 0; i < cfg.samples; ++i) {
        const auto proj = project(decoded.row(i), x, cfg.eps, cfg.norm);
        std::copy(proj.begin(), proj.end(), cand.row(i).begin());
        const Verdict v = ask(oracle, proj, y);
        losses[i] = v.loss;
        if (v.loss < state.best_loss) {
          state.best_loss = v.loss;
          state.best = proj;
        }
        if (v.flipped) {
          result.success = true;
          result.x_adv = proj;
          result.final_loss = v.loss;
          state.queries = oracle.count();
          if (on_iteration) on_iteration(state);
          finish(result, x, cfg.norm, oracle);
          return result;
        }
      }

      std::vector<std::size_t> order(cfg.samples);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
      Matrix<float> elite({cfg.elites, d});
      for (std::size_t e = 0; e < cfg.elites; ++e) {
        const auto src = cand.row(order[e]);
        std::copy(src.begin(), src.end(), elite.row(e).begin());
      }
      const Matrix<float> ez = flow.inverse(std::move(elite)).z;
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < cfg.elites; ++e) acc += ez(e, j);
        state.mu[j] = static_cast<float>(acc / static_cast<double>(cfg.elites) - state.z_clean[j]);
      }
      state.queries = oracle.count();
      if (on_iteration) on_iteration(state);
    }
  } catch (const BudgetExhausted&) {
    result.budget_exhausted = true;
  } catch (const NumericError&) {
    result.numeric_error = true;
  }
  result.x_adv = state.best;
  result.final_loss = std::isfinite(state.best_loss) ? state.best_loss : 0.0;
  finish(result, x, cfg.norm, oracle);
  return result;
}

std::vector<double> nes_gradient(const std::function<double(std::span<const float>)>& loss, std::span<const float> x,
                                 double sigma, std::size_t samples, Prng& prng) {
  require(samples >= 2 && samples % 2 == 0, "nes_gradient: sample size must be even");
  const std::size_t pairs = samples / 2;
  std::vector<double> g(x.size(), 0.0);
  std::vector<float> u(x.size()), plus(x.size()), minus(x.size());
  for (std::size_t k = 0; k < pairs; ++k) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      u[j] = static_cast<float>(prng.normal());
      plus[j] = static_cast<float>(x[j] + sigma * u[j]);
      minus[j] = static_cast<float>(x[j] - sigma * u[j]);
    }
    const double diff = loss(plus) - loss(minus);
    for (std::size_t j = 0; j < x.size(); ++j) g[j] += diff * u[j];
  }
  for (auto& v : g) v /= 2.0 * static_cast<double>(pairs) * sigma;
  return g;
}

AttackResult nes_attack(std::span<const float> x, std::size_t y, QueryOracle& oracle, const NesConfig& cfg, Prng& prng) {
  cfg.validate();
  const std::size_t d = x.size();
  require(d == oracle.input_width(), "nes_attack: image does not match the oracle input width");
  AttackResult result;
  std::vector<float> cur(x.begin(), x.end());
  double best_loss = INFINITY;
  std::vector<float> best;
  const std::size_t pairs = cfg.samples / 2;

  try {
    const Verdict v0 = ask(oracle, cur, y);
    best_loss = v0.loss;
    best = cur;
    if (v0.flipped) {
      result.success = true;
      result.x_adv = cur;
      result.final_loss = v0.loss;
      finish(result, x, cfg.norm, oracle);
      return result;
    }
    std::vector<float> u(d), probe(d);
    std::vector<double> g(d);
    for (std::size_t it = 1;; ++it) {
      result.iterations = it;
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t k = 0; k < pairs; ++k) {
        for (auto& v : u) v = static_cast<float>(prng.normal());
        double diff = 0.0;
        for (const double sign : {1.0, -1.0}) {
          for (std::size_t j = 0; j < d; ++j) probe[j] = static_cast<float>(cur[j] + sign * cfg.sigma * u[j]);
          const auto p = project(probe, x, cfg.eps, cfg.norm);
          const Verdict v = ask(oracle, p, y);
          if (v.loss < best_loss) {
            best_loss = v.loss;
            best = p;
          }
          if (v.flipped) {
            result.success = true;
            result.x_adv = p;
            result.final_loss = v.loss;
            finish(result, x, cfg.norm, oracle);
            return result;
          }
          diff += sign * v.loss;
        }
        for (std::size_t j = 0; j < d; ++j) g[j] += diff * u[j];
      }
      const double scale = 1.0 / (2.0 * static_cast<double>(pairs) * cfg.sigma);
      for (std::size_t j = 0; j < d; ++j) {
        const double gj = g[j] * scale;
        const double step = gj > 0.0 ? cfg.lr : (gj < 0.0 ? -cfg.lr : 0.0);
        probe[j] = static_cast<float>(cur[j] - step);
      }
      cur = project(probe, x, cfg.eps, cfg.norm);
    }
  } catch (const BudgetExhausted&) {
    result.budget_exhausted = true;
  }
  result.x_adv = best;
  result.final_loss = best_loss;
  finish(result, x, cfg.norm, oracle);
  return result;
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::flow: return "flow";
    case AttackKind::nes: return "nes";
    case AttackKind::pgd: return "pgd";
  }
  return "flow";
}

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "flow") return AttackKind::flow;
  if (name == "nes") return AttackKind::nes;
  if (name == "pgd") return AttackKind::pgd;
  throw ContractViolation("unknown attack '" + name + "' (expected flow, nes or pgd)");
}

Aggregates aggregate(std::span<const ExampleRecord> records) {
  Aggregates a;
  a.examples = records.size();
  std::vector<std::size_t> q;
  for (const auto& r : records)
    if (r.success) q.push_back(r.queries);
  a.successes = q.size();
  if (a.examples > 0) {
    // percent with two decimals, rounded half up, in integer arithmetic
    const std::uint64_t n = a.examples;
    const std::uint64_t hundredths = (static_cast<std::uint64_t>(a.successes) * 20000 + n) / (2 * n);
    a.success_rate_percent = static_cast<double>(hundredths) / 100.0;
  }
  if (!q.empty()) {
    std::sort(q.begin(), q.end());
    a.avg_queries = static_cast<double>(std::accumulate(q.begin(), q.end(), std::uint64_t{0})) /
                    static_cast<double>(q.size());
    const std::size_t m = q.size() / 2;
    a.median_queries = q.size() % 2 == 1 ? static_cast<double>(q[m]) : (static_cast<double>(q[m - 1]) + q[m]) / 2.0;
  }
  return a;
}

Evaluation evaluate(const data::Dataset& test, const ClassifierModel& clf, const FlowModel<float>* flow,
                    const EvalConfig& cfg) {
  require(test.size() > 0, "evaluate: empty test set");
  require(test.image_size() == clf.input_width(), "evaluate: classifier input width does not match the test images");
  if (cfg.kind == AttackKind::flow) {
    require(flow != nullptr, "evaluate: the flow attack needs a flow model");
    cfg.latent.validate();
  } else if (cfg.kind == AttackKind::nes) {
    cfg.nes.validate();
  }

  std::vector<std::size_t> eligible;
  Evaluation ev;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (cfg.max_examples > 0 && eligible.size() == cfg.max_examples) break;
    if (clf.predict(test.image(i)) == test.label(i))
      eligible.push_back(i);
    else
      ++ev.skipped;
  }
  if (eligible.empty()) throw ContractViolation("evaluate: no correctly classified examples to attack");

  const std::size_t n = eligible.size();
  ev.records.resize(n);
  ev.adversarial.resize(n);
  std::exception_ptr failure;

  auto run_one = [&](std::size_t k) {
    const std::size_t idx = eligible[k];
    const auto x = test.image(idx);
    const std::size_t y = test.label(idx);
    Prng prng(derive_seed(cfg.seed, idx));
    AttackResult r;
    if (cfg.kind == AttackKind::pgd) {
      const auto p = classifier::pgd_attack(clf, x, y, cfg.pgd.eps, cfg.pgd.steps, cfg.pgd.step_size);
      r.success = p.success;
      r.queries = p.steps_used;
      r.x_adv = p.x_adv;
      r.final_loss = cw_loss(clf.logprobs(p.x_adv), y);
      r.norm = distance(p.x_adv, x, Norm::linf);
    } else {
      const std::size_t budget = cfg.kind == AttackKind::flow ? cfg.latent.budget : cfg.nes.budget;
      QueryOracle oracle(clf, budget);
      if (cfg.query_observer) oracle.set_observer([&, idx](std::span<const float> q) { cfg.query_observer(idx, q); });
      r = cfg.kind == AttackKind::flow ? latent_attack(x, y, *flow, oracle, cfg.latent, prng)
                                       : nes_attack(x, y, oracle, cfg.nes, prng);
      require(r.queries == oracle.count(), "evaluate: attack query count disagrees with the oracle");
    }
    ev.records[k] = {idx, test.label(idx), r.success, r.queries, r.final_loss, r.norm, r.numeric_error};
    ev.adversarial[k] = std::move(r.x_adv);
  };

  const bool fan_out = parallel::thread_count() > 1 && n > 1;
#pragma omp parallel for schedule(dynamic) num_threads(parallel::thread_count()) if (fan_out)
  for (std::size_t k = 0; k < n; ++k) {
    try {
      run_one(k);
    } catch (...) {
#pragma omp critical(nfa_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  ev.aggregates = aggregate(ev.records);
  return ev;
}

}  // namespace nfa::attack
