#ifndef NFA_FLOW_TRAIN_HPP
#define NFA_FLOW_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "nfa/data.hpp"
#include "nfa/flow/model.hpp"
#include "nfa/prng.hpp"

namespace nfa::flow {

struct FlowTrainConfig {
  FlowArchitecture arch;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr_initial = 1e-4;
  double lr_final = 1e-6;
  bool dequantize = true;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double nll = 0.0;          // mean nats per image
  double nll_per_dim = 0.0;  // nats per pixel
  double lr = 0.0;           // learning rate at the last step of the epoch
};

struct FlowTrainResult {
  FlowModel<float> model;
  std::vector<EpochStats> trace;
  bool diverged = false;  // model holds the last finite epoch when set
};

/// Exponentially decayed learning rate, lr_initial at step 0 and lr_final at the last step.
double exponential_lr(double lr_initial, double lr_final, std::size_t step, std::size_t total_steps);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Maximum-likelihood training with Adam on mini-batches of dequantized images.
FlowTrainResult train_flow(const data::Dataset& dataset, const FlowTrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Images x = f(temperature * eps), eps ~ N(0, I); one image per row, all in [0,1].
Matrix<float> sample(const FlowModel<float>& model, std::size_t count, double temperature, Prng& prng);

/// Trailing moving average with the given window.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

struct PixelMeanCheck {
  std::size_t pixels = 0;
  std::size_t failures = 0;  // pixels whose mean differs by more than nsigma standard errors
  double max_z = 0.0;
  bool passed() const { return failures == 0; }
};

/// Per-pixel mean comparison of two image sets using the standard error of the
/// difference of means, sqrt(var_a / n_a + var_b / n_b).
PixelMeanCheck compare_pixel_means(const Matrix<float>& samples, const Matrix<float>& reference, double nsigma = 3.0);

}  // namespace nfa::flow

#endif  // NFA_FLOW_TRAIN_HPP
