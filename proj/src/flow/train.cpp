#include "nfa/flow/train.hpp"

#include <algorithm>
#include <cmath>

#include "nfa/adam.hpp"

namespace nfa::flow {

double exponential_lr(double lr_initial, double lr_final, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return lr_initial;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr_initial * std::pow(lr_final / lr_initial, frac);
}

FlowTrainResult train_flow(const data::Dataset& dataset, const FlowTrainConfig& cfg, const EpochCallback& on_epoch) {
  require(dataset.size() > 0, "train_flow: empty dataset");
  require(cfg.batch_size > 0 && cfg.epochs > 0, "train_flow: batch size and epochs must be positive");
  require(cfg.lr_initial > 0.0 && cfg.lr_final > 0.0, "train_flow: learning rates must be positive");
  FlowArchitecture arch = cfg.arch;
  arch.image = {dataset.channels(), dataset.height(), dataset.width()};

  FlowTrainResult result;
  result.model = build_flow<float>(arch);
  FlowModel<float>& model = result.model;
  FlowModel<float> last_good = model;

  Prng prng(cfg.seed);
  const Matrix<float> all = dataset.flat();
  const std::size_t n = dataset.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  AdamState adam(AdamConfig{cfg.lr_initial, 0.9, 0.999, 1e-8});
  FlowGrad<float> grad = model.make_grad();
  auto params = model.parameters();
  auto grads = grad.views();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = prng.permutation(n);
    double weighted = 0.0;
    bool bad = false;
    for (std::size_t start = 0; start < n && !bad; start += cfg.batch_size) {
      const std::size_t rows = std::min(cfg.batch_size, n - start);
      Matrix<float> batch({rows, all.cols()});
      for (std::size_t r = 0; r < rows; ++r) {
        const auto src = all.row(order[start + r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      if (cfg.dequantize) batch = data::dequantize(batch, prng);

      grad.zero();
      double loss = 0.0;
      try {
        loss = nll_with_grad(model, batch, grad);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        adam.cfg.lr = exponential_lr(cfg.lr_initial, cfg.lr_final, step, total_steps);
        adam_step(params, grads, adam);
      } catch (const NumericError&) {
        bad = true;
        break;
      }
      weighted += loss * static_cast<double>(rows);
      ++step;
    }
    if (bad) {
      result.diverged = true;
      model = std::move(last_good);
      return result;
    }
    EpochStats stats{epoch, weighted / static_cast<double>(n),
                     weighted / static_cast<double>(n) / static_cast<double>(model.dim()), adam.cfg.lr};
    result.trace.push_back(stats);
    last_good = model;
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

Matrix<float> sample(const FlowModel<float>& model, std::size_t count, double temperature, Prng& prng) {
  require(count > 0, "sample: count must be positive");
  require(temperature >= 0.0, "sample: temperature must be non-negative");
  Matrix<float> z({count, model.dim()});
  if (temperature > 0.0)
    for (auto& v : z.values()) v = static_cast<float>(temperature * prng.normal());
  Matrix<float> x = model.forward(std::move(z));
  if (!model.has_preprocess())
    for (auto& v : x.values()) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
  require(window > 0, "smooth: window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

PixelMeanCheck compare_pixel_means(const Matrix<float>& samples, const Matrix<float>& reference, double nsigma) {
  require(samples.cols() == reference.cols(), "compare_pixel_means: image sizes differ");
  require(samples.rows() > 1 && reference.rows() > 1, "compare_pixel_means: need at least two images per set");
  auto moments = [](const Matrix<float>& m, std::size_t j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) mean += m(r, j);
    mean /= static_cast<double>(m.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) var += (m(r, j) - mean) * (m(r, j) - mean);
    var /= static_cast<double>(m.rows() - 1);
    return std::pair{mean, var};
  };
  PixelMeanCheck out;
  out.pixels = samples.cols();
  for (std::size_t j = 0; j < samples.cols(); ++j) {
    const auto [ma, va] = moments(samples, j);
    const auto [mb, vb] = moments(reference, j);
    const double se = std::sqrt(va / static_cast<double>(samples.rows()) + vb / static_cast<double>(reference.rows()));
    const double diff = std::abs(ma - mb);
    const double z = se > 0.0 ? diff / se : (diff > 0.0 ? INFINITY : 0.0);
    out.max_z = std::max(out.max_z, z);
    if (z > nsigma) ++out.failures;
  }
  return out;
}

}  // namespace nfa::flow
