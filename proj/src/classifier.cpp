#include "nfa/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "nfa/adam.hpp"
#include "nfa/error.hpp"
#include "nfa/kernels.hpp"
#include "nfa/projection.hpp"

namespace nfa::classifier {

ClassifierModel::ClassifierModel(Mlp<float> net, std::size_t classes) : net_(std::move(net)), classes_(classes) {
  require(classes_ >= 2, "classifier needs at least two classes");
  require(net_.out_width() == classes_, "classifier: network output width does not match class count");
}

std::vector<float> ClassifierModel::logprobs(std::span<const float> x) const {
  require(x.size() == input_width(), "classifier: input has " + std::to_string(x.size()) + " pixels, expected " +
                                         std::to_string(input_width()));
  const Matrix<float> logits = net_.forward(rows_of(x, 1, x.size()));
  return kernels::log_softmax(logits.row(0));
}

Matrix<float> ClassifierModel::logprobs(const Matrix<float>& x) const {
  return kernels::log_softmax_rows(net_.forward(x));
}

std::size_t ClassifierModel::predict(std::span<const float> x) const {
  return kernels::argmax(std::span<const float>(logprobs(x)));
}

ClassifierModel make_classifier(std::size_t input_width, std::size_t classes, const ClassifierConfig& cfg) {
  require(input_width > 0 && cfg.hidden > 0, "classifier: widths must be positive");
  auto net = Mlp<float>::make(input_width, cfg.hidden, cfg.depth, classes, Activation::leaky_relu,
                              static_cast<float>(cfg.slope));
  Prng prng(derive_seed(cfg.seed, 1));
  net.init(prng, false);
  return ClassifierModel(std::move(net), classes);
}

double cross_entropy(std::span<const float> logprobs, std::size_t y) {
  require(y < logprobs.size(), "cross_entropy: label out of range");
  return -static_cast<double>(logprobs[y]);
}

namespace {

// Mean cross-entropy of a batch; fills d(mean CE)/dlogits.
double batch_cross_entropy(const Matrix<float>& logits, std::span<const std::uint32_t> labels, Matrix<float>& dlogits,
                           std::size_t& correct) {
  const Matrix<float> lp = kernels::log_softmax_rows(logits);
  const std::size_t b = lp.rows();
  dlogits = Matrix<float>(lp.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t y = labels[r];
    loss -= lp(r, y);
    if (kernels::argmax(lp.row(r)) == y) ++correct;
    for (std::size_t c = 0; c < lp.cols(); ++c)
      dlogits(r, c) = (std::exp(lp(r, c)) - (c == y ? 1.0f : 0.0f)) / static_cast<float>(b);
  }
  return loss / static_cast<double>(b);
}

// d(sum CE)/dx for a batch; used to craft adversarial training inputs.
Matrix<float> input_gradient(const ClassifierModel& m, const Matrix<float>& x, std::span<const std::uint32_t> labels) {
  MlpCache<float> cache;
  const Matrix<float> logits = m.net().forward(x, &cache);
  Matrix<float> dlogits;
  std::size_t correct = 0;
  batch_cross_entropy(logits, labels, dlogits, correct);
  return m.net().backward(cache, dlogits);
}

Matrix<float> adversarial_batch(const ClassifierModel& m, const Matrix<float>& clean,
                                std::span<const std::uint32_t> labels, const AdvTrainConfig& adv, Prng& prng) {
  const double step = adv.step_size > 0.0 ? adv.step_size : 2.5 * adv.eps / static_cast<double>(adv.steps);
  Matrix<float> x = clean;
  if (adv.random_start)
    for (auto& v : x.values()) v = std::clamp(static_cast<float>(v + prng.uniform(-adv.eps, adv.eps)), 0.0f, 1.0f);
  for (std::size_t s = 0; s < adv.steps; ++s) {
    const Matrix<float> g = input_gradient(m, x, labels);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float sg = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      x[i] = static_cast<float>(x[i] + step * sg);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto p = attack::project(x.row(r), clean.row(r), adv.eps, attack::Norm::linf);
      std::copy(p.begin(), p.end(), x.row(r).begin());
    }
  }
  return x;
}

ClassifierTrainResult train_loop(const data::Dataset& train, const ClassifierConfig& cfg, const AdvTrainConfig* adv) {
  require(train.size() > 0, "train_classifier: empty dataset");
  require(cfg.batch_size > 0 && cfg.epochs > 0, "train_classifier: batch size and epochs must be positive");
  require(cfg.lr > 0.0, "train_classifier: learning rate must be positive");
  ClassifierTrainResult result;
  result.model = make_classifier(train.image_size(), train.classes(), cfg);
  ClassifierModel& model = result.model;

  Prng prng(derive_seed(cfg.seed, 2));
  const std::size_t n = train.size();
  AdamState adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  MlpGrad<float> grad = model.net().make_grad();
  std::vector<std::span<float>> params, grads;
  model.net().collect(params);
  grad.collect(grads);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = prng.permutation(n);
    double weighted = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t rows = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, rows);
      Matrix<float> batch = train.rows(idx);
      std::vector<std::uint32_t> labels(rows);
      for (std::size_t r = 0; r < rows; ++r) labels[r] = train.label(idx[r]);
      if (adv != nullptr) batch = adversarial_batch(model, batch, labels, *adv, prng);

      MlpCache<float> cache;
      const Matrix<float> logits = model.net().forward(batch, &cache);
      Matrix<float> dlogits;
      const double loss = batch_cross_entropy(logits, labels, dlogits, correct);
      grad.zero();
      model.net().backward(cache, dlogits, &grad);
      adam_step(params, grads, adam);
      weighted += loss * static_cast<double>(rows);
    }
    result.trace.push_back({epoch, weighted / static_cast<double>(n),
                            static_cast<double>(correct) / static_cast<double>(n)});
  }
  return result;
}

}  // namespace

ClassifierTrainResult train_classifier(const data::Dataset& train, const ClassifierConfig& cfg) {
  return train_loop(train, cfg, nullptr);
}

ClassifierTrainResult pgd_adv_train(const data::Dataset& train, const ClassifierConfig& cfg, const AdvTrainConfig& adv) {
  require(adv.eps > 0.0 && adv.steps > 0, "pgd_adv_train: eps and steps must be positive");
  return train_loop(train, cfg, &adv);
}

double accuracy(const ClassifierModel& m, const data::Dataset& ds) {
  require(ds.size() > 0, "accuracy: empty dataset");
  const Matrix<float> lp = m.logprobs(ds.flat());
  std::size_t correct = 0;
  for (std::size_t r = 0; r < lp.rows(); ++r)
    if (kernels::argmax(lp.row(r)) == ds.label(r)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

PgdResult pgd_attack(const ClassifierModel& m, std::span<const float> x, std::size_t y, double eps, std::size_t steps,
                     double step_size) {
  require(y < m.classes(), "pgd_attack: label out of range");
  require(eps >= 0.0 && steps > 0, "pgd_attack: eps must be non-negative and steps positive");
  const double step = step_size > 0.0 ? step_size : 2.5 * eps / static_cast<double>(steps);
  PgdResult out;
  out.x_adv.assign(x.begin(), x.end());
  if (m.predict(out.x_adv) != y) {
    out.success = true;
    return out;
  }
  for (std::size_t s = 0; s < steps; ++s) {
    MlpCache<float> cache;
    const Matrix<float> logits = m.net().forward(rows_of(std::span<const float>(out.x_adv), 1, x.size()), &cache);
    const auto lp = kernels::log_softmax(logits.row(0));
    // Margin lp_y - max_{c != y} lp_c; its logit gradient is e_y - e_c*.
    std::size_t runner = y == 0 ? 1 : 0;
    for (std::size_t c = 0; c < lp.size(); ++c)
      if (c != y && lp[c] > lp[runner]) runner = c;
    Matrix<float> dlogits({1, m.classes()});
    dlogits(0, y) = 1.0f;
    dlogits(0, runner) = -1.0f;
    const Matrix<float> g = m.net().backward(cache, dlogits);
    std::vector<float> cand(out.x_adv);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const float sg = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      cand[i] = static_cast<float>(cand[i] - step * sg);
    }
    out.x_adv = attack::project(cand, x, eps, attack::Norm::linf);
    out.steps_used = s + 1;
    if (m.predict(out.x_adv) != y) {
      out.success = true;
      break;
    }
  }
  return out;
}

QueryOracle::QueryOracle(const ClassifierModel& model, std::size_t budget) : model_(model), budget_(budget) {
  require(budget_ > 0, "query oracle: budget must be positive");
}

std::vector<float> QueryOracle::query(std::span<const float> x) {
  std::lock_guard lock(mu_);
  if (count_ >= budget_)
    throw BudgetExhausted("query budget of " + std::to_string(budget_) + " exhausted");
  auto lp = model_.logprobs(x);
  ++count_;
  if (observer_) observer_(x);
  return lp;
}

std::size_t QueryOracle::count() const {
  std::lock_guard lock(mu_);
  return count_;
}

std::size_t QueryOracle::remaining() const {
  std::lock_guard lock(mu_);
  return budget_ - count_;
}

bool QueryOracle::exhausted() const {
  std::lock_guard lock(mu_);
  return count_ >= budget_;
}

std::size_t QueryOracle::input_width() const { return model_.input_width(); }

void QueryOracle::set_observer(Observer obs) {
  std::lock_guard lock(mu_);
  observer_ = std::move(obs);
}

}  // namespace nfa::classifier
