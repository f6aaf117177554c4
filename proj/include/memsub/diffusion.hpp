#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "memsub/adam.hpp"
#include "memsub/model.hpp"
#include "memsub/rng.hpp"

namespace memsub {

/// Cumulative signal coefficients ᾱ_t, strictly decreasing in t.
struct NoiseSchedule {
  std::vector<double> alpha_bar;

  std::size_t steps() const noexcept { return alpha_bar.size(); }

  /// Linear-in-β schedule, rescaled from the usual 1000-step endpoints
  /// (1e-4, 0.02) to `steps` steps.
  static NoiseSchedule linear(std::size_t steps) {
    if (steps == 0) throw ArgumentError("noise schedule needs at least one step");
    const double scale = 1000.0 / double(steps);
    const double b0 = 1e-4 * scale, b1 = std::min(0.02 * scale, 0.999);
    NoiseSchedule s;
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      const double beta = steps == 1 ? b0 : b0 + (b1 - b0) * double(i) / double(steps - 1);
      prod *= 1.0 - beta;
      s.alpha_bar.push_back(prod);
    }
    return s;
  }

  void validate() const {
    double prev = 1.0;
    for (double a : alpha_bar) {
      if (!(a < prev) || !(a > 0.0)) throw ArgumentError("alpha_bar must decrease strictly in (0,1)");
      prev = a;
    }
  }
};

struct NoisedSample {
  Matrix xt;
  Matrix eps;
};

/// x_t = √ᾱ_t x0 + √(1-ᾱ_t) ε with ε drawn from rng. Each row of x0 is one sample.
inline NoisedSample forward_noise(const Matrix& x0, std::size_t t, const NoiseSchedule& schedule,
                                  Rng& rng) {
  if (t >= schedule.steps()) {
    throw IndexError("forward_noise: t=" + std::to_string(t) + " outside schedule of " +
                     std::to_string(schedule.steps()));
  }
  NoisedSample s{Matrix(x0.rows(), x0.cols()), rng.normal_matrix<float>(x0.rows(), x0.cols())};
  const double a = schedule.alpha_bar[t];
  const float sa = float(std::sqrt(a)), sn = float(std::sqrt(1.0 - a));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.xt.values()[i] = sa * x0.values()[i] + sn * s.eps.values()[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t iterations = 3000;
  std::size_t batch_size = 64;
  double lr = 2e-3;
  std::size_t warmup = 100;     ///< linear ramp from 0 to lr
  double final_lr_ratio = 0.0;  ///< cosine decay ends at lr * final_lr_ratio
  double cond_drop_prob = 0.1;
  std::uint64_t seed = 1;
  std::size_t log_every = 100;
};

/// A training example: one image row and its label.
struct Example {
  std::span<const float> image;
  int label;
};

/// Per-batch mean of squared L2 norms: (1/B) Σ_b ‖pred_b − ε_b‖².
template <class T>
double noise_prediction_loss(const BasicMatrix<T>& pred, const BasicMatrix<T>& eps) {
  if (!pred.same_shape(eps)) throw ShapeError("loss: " + shape_str(pred) + " vs " + shape_str(eps));
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = double(pred.values()[i]) - double(eps.values()[i]);
    s += r * r;
  }
  return pred.rows() ? s / double(pred.rows()) : 0.0;
}

/// One optimizer step on the noise-prediction objective. Each sample gets a
/// uniform timestep, fresh noise, and with probability cond_drop_prob the
/// null label. Throws DivergenceError on a non-finite loss, leaving params
/// untouched.
inline double train_step(DenoiserParams& params, AdamState<float>& adam,
                         std::span<const Example> batch, const TrainConfig& config,
                         const NoiseSchedule& schedule, Rng& rng, double lr = -1.0) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  if (!(config.cond_drop_prob >= 0.0 && config.cond_drop_prob < 1.0)) {
    throw ArgumentError("train_step: cond_drop_prob must be in [0,1)");
  }
  const std::size_t dim = params.config.image_dim();
  const std::size_t bsz = batch.size();
  Matrix xt(bsz, dim), eps(bsz, dim);
  std::vector<int> labels(bsz), steps(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    if (batch[b].image.size() != dim) throw ShapeError("train_step: image size mismatch");
    const auto t = rng.uniform_index(schedule.steps());
    const bool drop = rng.uniform() < config.cond_drop_prob;
    steps[b] = static_cast<int>(t);
    labels[b] = drop ? kNullLabel : batch[b].label;
    const float sa = float(std::sqrt(schedule.alpha_bar[t]));
    const float sn = float(std::sqrt(1.0 - schedule.alpha_bar[t]));
    for (std::size_t j = 0; j < dim; ++j) {
      const float e = float(rng.normal());
      eps(b, j) = e;
      xt(b, j) = sa * batch[b].image[j] + sn * e;
    }
  }

  ForwardTrace<float> trace;
  const auto pred = denoiser_forward(params, xt, std::span<const int>(labels),
                                     std::span<const int>(steps), &trace);
  const double loss = noise_prediction_loss(pred, eps);
  if (!std::isfinite(loss)) {
    throw DivergenceError("training diverged: non-finite loss at optimizer step " +
                          std::to_string(adam.step + 1));
  }
  Matrix grad = pred - eps;
  const float scale = 2.0f / float(bsz);
  for (auto& g : grad.values()) g *= scale;
  const auto grads = backward(params, trace, grad);
  adam_step(params, grads, adam, lr < 0 ? config.lr : lr);
  return loss;
}

/// Learning rate for zero-based optimizer step `it`: linear warmup, then
/// cosine decay over the remaining iterations.
inline double lr_at(const TrainConfig& cfg, std::size_t it) {
  if (it < cfg.warmup) return cfg.lr * double(it + 1) / double(cfg.warmup);
  const std::size_t span = cfg.iterations > cfg.warmup ? cfg.iterations - cfg.warmup : 1;
  const double frac = std::min(1.0, double(it - cfg.warmup) / double(span));
  const double lo = cfg.lr * cfg.final_lr_ratio;
  return lo + 0.5 * (cfg.lr - lo) * (1.0 + std::cos(3.141592653589793 * frac));
}

// ---------------------------------------------------------------------------
// Classifier-free guidance and sampling

struct SamplerConfig {
  double guidance_scale = 5.0;
  std::size_t num_steps = 50;
  std::uint64_t seed = 0;
};

/// ε̂ = ε(z,t) + s·(ε(z,t,p) − ε(z,t)), written over any denoiser callable
/// `f(z, label, t)`. Makes exactly two calls, unconditional first.
template <class Denoise>
Matrix cfg_combine(Denoise&& f, const Matrix& zt, int t, int label, double scale) {
  if (label == kNullLabel) throw ArgumentError("cfg: conditional branch needs a non-null label");
  const Matrix uncond = f(zt, kNullLabel, t);
  const Matrix cond = f(zt, label, t);
  if (!uncond.same_shape(cond)) throw ShapeError("cfg: branch shapes differ");
  Matrix out(uncond.rows(), uncond.cols());
  const float s = float(scale);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = uncond.values()[i] + s * (cond.values()[i] - uncond.values()[i]);
  }
  return out;
}

inline Matrix cfg_predict(const DenoiserParams& params, const Matrix& zt, int t, int label,
                          double scale) {
  return cfg_combine(
      [&](const Matrix& z, int y, int step) { return denoiser_forward(params, z, y, step); }, zt, t,
      label, scale);
}

/// Called on the conditional forward pass of each sampling step:
/// (step index in the trajectory, diffusion timestep t, layer, hidden activation).
using SamplingHook =
    std::function<void(std::size_t step_index, int t, std::size_t layer, const Matrix& hidden)>;

/// Diffusion timesteps visited by a num_steps trajectory, from T-1 down to 0.
inline std::vector<int> sampling_timesteps(std::size_t num_steps, std::size_t T) {
  if (num_steps > T) throw ArgumentError("sampler: num_steps exceeds schedule length");
  std::vector<int> ts;
  if (num_steps == 0) return ts;
  if (num_steps == 1) return {static_cast<int>(T - 1)};
  for (std::size_t i = 0; i < num_steps; ++i) {
    ts.push_back(static_cast<int>(((T - 1) * (num_steps - 1 - i)) / (num_steps - 1)));
  }
  return ts;
}

/// Initial latent for one seed: a row of standard normals.
inline Matrix initial_noise(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix<float>(1, dim);
}

/// Deterministic DDIM reverse trajectory, one row per seed. The predicted x0
/// is clipped to [-1, 1] and ε re-derived from it at each step. Label 0 runs
/// the plain unconditional model; any other label runs classifier-free
/// guidance. Rows are independent: a seed's image does not depend on which
/// other seeds share the batch.
inline Matrix sample_batch(const DenoiserParams& params, int label, std::span<const std::uint64_t> seeds,
                           const SamplerConfig& config, const NoiseSchedule& schedule,
                           const SamplingHook& hook = {}) {
  const std::size_t dim = params.config.image_dim();
  if (schedule.steps() != params.config.timesteps) {
    throw ArgumentError("sampler: schedule length differs from model timesteps");
  }
  if (label < 0 || static_cast<std::size_t>(label) > params.config.num_labels) {
    throw IndexError("sampler: label " + std::to_string(label) + " out of range");
  }
  if (config.guidance_scale < 0.0) throw ArgumentError("sampler: guidance_scale must be >= 0");
  const auto ts = sampling_timesteps(config.num_steps, schedule.steps());

  Matrix z(seeds.size(), dim);
  for (std::size_t r = 0; r < seeds.size(); ++r) {
    const auto n = initial_noise(dim, seeds[r]);
    std::copy(n.values().begin(), n.values().end(), z.row(r).begin());
  }

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    std::vector<int> steps(z.rows(), t);
    ActivationHook<float> layer_hook;
    if (hook) {
      layer_hook = [&](std::size_t layer, const Matrix& hidden) { hook(i, t, layer, hidden); };
    }
    const auto forward = [&](const Matrix& zz, int y, int step) {
      std::vector<int> labels(zz.rows(), y);
      std::vector<int> st(zz.rows(), step);
      const bool conditional = (y == label);
      return denoiser_forward(params, zz, std::span<const int>(labels), std::span<const int>(st),
                              nullptr, conditional && hook ? &layer_hook : nullptr);
    };
    const Matrix eps_hat = label == kNullLabel ? forward(z, kNullLabel, t)
                                               : cfg_combine(forward, z, t, label, config.guidance_scale);

    const double a = schedule.alpha_bar[static_cast<std::size_t>(t)];
    const double a_prev = i + 1 < ts.size() ? schedule.alpha_bar[static_cast<std::size_t>(ts[i + 1])] : 1.0;
    const float sa = float(std::sqrt(a)), sn = float(std::sqrt(1.0 - a));
    const float spa = float(std::sqrt(a_prev)), spn = float(std::sqrt(1.0 - a_prev));
    for (std::size_t k = 0; k < z.size(); ++k) {
      const float zk = z.values()[k];
      float x0 = (zk - sn * eps_hat.values()[k]) / sa;
      x0 = std::clamp(x0, -1.0f, 1.0f);
      const float e = (zk - sa * x0) / sn;
      z.values()[k] = spa * x0 + spn * e;
    }
  }
  return z;
}

/// Single image (1 × dim) for config.seed.
inline Matrix sample(const DenoiserParams& params, int label, const SamplerConfig& config,
                     const NoiseSchedule& schedule, const SamplingHook& hook = {}) {
  const std::uint64_t seed = config.seed;
  return sample_batch(params, label, std::span<const std::uint64_t>(&seed, 1), config, schedule, hook);
}

}  // namespace memsub
