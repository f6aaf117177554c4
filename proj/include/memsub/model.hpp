#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "memsub/matrix.hpp"
#include "memsub/rng.hpp"

namespace memsub {

/// Architecture of the label-conditional denoiser.
///
/// x_t ──input_proj──▶ h_0
/// h_{l+1} = h_l + FFN_l(LayerNorm_l(h_l) + label_emb[y] + time_emb[t])   l = 0..depth-1
/// ε̂ = output_proj(h_depth)
///
/// Conditioning enters the residual stream only through the FFN blocks, so
/// every prompt-specific signal passes through an FFN second linear layer.
struct ModelConfig {
  std::size_t image_size = 16;  ///< images are image_size × image_size, flattened
  std::size_t hidden = 256;
  std::size_t inner = 512;      ///< GEGLU inner width d'
  std::size_t depth = 6;        ///< number of FFN blocks L
  std::size_t num_labels = 20;  ///< non-null labels; label 0 is the null prompt
  std::size_t timesteps = 50;

  std::size_t image_dim() const noexcept { return image_size * image_size; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr int kNullLabel = 0;

/// y = x · weightᵀ + bias; weight is out × in.
template <class T>
struct Linear {
  BasicMatrix<T> weight;
  BasicMatrix<T> bias;  ///< 1 × out
};

/// GEGLU feed-forward block. w_out is the second linear layer W^l (d × d'),
/// the only tensor the localization module ever prunes.
template <class T>
struct FfnBlock {
  BasicMatrix<T> norm_gain;  ///< 1 × d, pre-norm affine
  BasicMatrix<T> norm_bias;  ///< 1 × d
  BasicMatrix<T> w_gate;   ///< d' × d
  BasicMatrix<T> b_gate;   ///< 1 × d'
  BasicMatrix<T> w_value;  ///< d' × d
  BasicMatrix<T> b_value;  ///< 1 × d'
  BasicMatrix<T> w_out;    ///< d × d'
  BasicMatrix<T> b_out;    ///< 1 × d
};

template <class T>
struct BasicDenoiserParams {
  ModelConfig config;
  BasicMatrix<T> label_embeddings;  ///< (num_labels + 1) × hidden, row 0 = null
  BasicMatrix<T> time_embeddings;   ///< timesteps × hidden
  Linear<T> input_proj;
  std::vector<FfnBlock<T>> ffn_blocks;
  Linear<T> output_proj;
  BasicMatrix<T> output_skip;  ///< timesteps × image_dim, elementwise gain on x_t
  /// Bumped by every in-place update so stale forward traces can be detected.
  std::uint64_t version = 0;
};

using FfnBlockF = FfnBlock<float>;
using DenoiserParams = BasicDenoiserParams<float>;

/// Visits every tensor in declaration order (the checkpoint order).
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("label_embeddings", p.label_embeddings);
  fn("time_embeddings", p.time_embeddings);
  fn("input_proj.weight", p.input_proj.weight);
  fn("input_proj.bias", p.input_proj.bias);
  for (std::size_t l = 0; l < p.ffn_blocks.size(); ++l) {
    auto& b = p.ffn_blocks[l];
    const std::string pre = "ffn." + std::to_string(l) + ".";
    fn(pre + "norm_gain", b.norm_gain);
    fn(pre + "norm_bias", b.norm_bias);
    fn(pre + "w_gate", b.w_gate);
    fn(pre + "b_gate", b.b_gate);
    fn(pre + "w_value", b.w_value);
    fn(pre + "b_value", b.b_value);
    fn(pre + "w_out", b.w_out);
    fn(pre + "b_out", b.b_out);
  }
  fn("output_proj.weight", p.output_proj.weight);
  fn("output_proj.bias", p.output_proj.bias);
  fn("output_skip", p.output_skip);
}

/// Zero-filled parameters with the shapes implied by cfg.
template <class T>
BasicDenoiserParams<T> zero_params(const ModelConfig& cfg) {
  BasicDenoiserParams<T> p;
  p.config = cfg;
  const auto d = cfg.hidden, di = cfg.inner, img = cfg.image_dim();
  p.label_embeddings = BasicMatrix<T>(cfg.num_labels + 1, d);
  p.time_embeddings = BasicMatrix<T>(cfg.timesteps, d);
  p.input_proj = {BasicMatrix<T>(d, img), BasicMatrix<T>(1, d)};
  p.ffn_blocks.resize(cfg.depth);
  for (auto& b : p.ffn_blocks) {
    b = {BasicMatrix<T>(1, d), BasicMatrix<T>(1, d),
         BasicMatrix<T>(di, d), BasicMatrix<T>(1, di), BasicMatrix<T>(di, d),
         BasicMatrix<T>(1, di), BasicMatrix<T>(d, di), BasicMatrix<T>(1, d)};
  }
  p.output_proj = {BasicMatrix<T>(img, d), BasicMatrix<T>(1, img)};
  p.output_skip = BasicMatrix<T>(cfg.timesteps, img);
  return p;
}

/// Random initialization: fan-in scaled Gaussians, unit-variance embeddings,
/// FFN output layers scaled down by depth, zero output head.
template <class T>
BasicDenoiserParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = zero_params<T>(cfg);
  Rng rng(seed);
  const auto fill = [&rng](BasicMatrix<T>& m, double stddev) {
    for (auto& v : m.values()) v = static_cast<T>(rng.normal() * stddev);
  };
  fill(p.label_embeddings, 1.0);
  fill(p.time_embeddings, 1.0);
  fill(p.input_proj.weight, 1.0 / std::sqrt(double(cfg.image_dim())));
  const double out_scale = 1.0 / std::sqrt(double(cfg.inner) * double(cfg.depth));
  for (auto& b : p.ffn_blocks) {
    b.norm_gain.fill(T{1});
    fill(b.w_gate, 1.0 / std::sqrt(double(cfg.hidden)));
    fill(b.w_value, 1.0 / std::sqrt(double(cfg.hidden)));
    fill(b.w_out, out_scale);
  }
  return p;
}

/// Checks that every tensor matches the shapes implied by the stored config.
template <class T>
void validate_params(const BasicDenoiserParams<T>& p) {
  const auto ref = zero_params<T>(p.config);
  if (p.ffn_blocks.size() != p.config.depth) {
    throw ShapeError("params: " + std::to_string(p.ffn_blocks.size()) + " ffn blocks, depth " +
                     std::to_string(p.config.depth));
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> want;
  for_each_tensor(ref, [&](const std::string& n, const BasicMatrix<T>& m) {
    want.push_back({n, {m.rows(), m.cols()}});
  });
  std::size_t i = 0;
  for_each_tensor(p, [&](const std::string& n, const BasicMatrix<T>& m) {
    if (m.rows() != want[i].second.first || m.cols() != want[i].second.second) {
      throw ShapeError("params: " + n + " is " + shape_str(m) + ", expected " +
                       shape_str(want[i].second.first, want[i].second.second));
    }
    ++i;
  });
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³)))

inline constexpr double kGeluC = 0.7978845608028654;  // √(2/π)
inline constexpr double kGeluA = 0.044715;

template <class T>
T gelu(T x) noexcept {
  const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <class T>
T gelu_grad(T x) noexcept {
  const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <class T>
struct GegluResult {
  BasicMatrix<T> hidden;  ///< input to w_out, the probed activation h^{t,l}
  BasicMatrix<T> out;
};

template <class T>
struct GegluCache {
  BasicMatrix<T> gate;   ///< x·w_gateᵀ + b_gate
  BasicMatrix<T> value;  ///< x·w_valueᵀ + b_value
};

/// hidden = (x·w_gateᵀ + b_gate) ⊙ GELU(x·w_valueᵀ + b_value)
/// out    = hidden·w_outᵀ + b_out
template <class T>
GegluResult<T> geglu_forward(const BasicMatrix<T>& x, const FfnBlock<T>& block,
                             GegluCache<T>* cache = nullptr) {
  if (x.cols() != block.w_gate.cols()) {
    throw ShapeError("geglu_forward: input " + shape_str(x) + " vs w_gate " +
                     shape_str(block.w_gate));
  }
  auto gate = matmul_nt(x, block.w_gate);
  add_row_inplace(gate, block.b_gate);
  auto value = matmul_nt(x, block.w_value);
  add_row_inplace(value, block.b_value);
  BasicMatrix<T> hidden(gate.rows(), gate.cols());
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden.values()[i] = gate.values()[i] * gelu(value.values()[i]);
  }
  auto out = matmul_nt(hidden, block.w_out);
  add_row_inplace(out, block.b_out);
  if (cache) {
    cache->gate = std::move(gate);
    cache->value = std::move(value);
  }
  return {std::move(hidden), std::move(out)};
}

// ---------------------------------------------------------------------------

/// Called once per FFN block with the block's hidden activation.
template <class T>
using ActivationHook = std::function<void(std::size_t layer, const BasicMatrix<T>& hidden)>;

/// Everything the backward pass needs from a forward pass.
template <class T>
struct ForwardTrace {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  BasicMatrix<T> input;
  std::vector<int> labels;
  std::vector<int> steps;
  std::vector<BasicMatrix<T>> residual;  ///< h_0 .. h_L
  std::vector<BasicMatrix<T>> normed;    ///< (h_l - mean) / std, before the affine
  std::vector<std::vector<T>> inv_std;   ///< per row
  std::vector<BasicMatrix<T>> block_in;  ///< u_l = LayerNorm(h_l) + conditioning
  std::vector<GegluCache<T>> caches;
  std::vector<BasicMatrix<T>> hidden;

  bool valid() const noexcept { return owner != nullptr; }
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

/// Writes (x - mean) / sqrt(var + eps) into out and returns 1 / sqrt(var + eps).
template <class T>
T normalize_row(std::span<const T> x, std::span<T> out) {
  T mean = 0;
  for (T v : x) mean += v;
  mean /= T(x.size());
  T var = 0;
  for (T v : x) var += (v - mean) * (v - mean);
  var /= T(x.size());
  const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean) * inv;
  return inv;
}

template <class T>
void check_indices(const BasicDenoiserParams<T>& p, std::size_t batch, std::span<const int> labels,
                   std::span<const int> steps) {
  if (labels.size() != batch || steps.size() != batch) {
    throw ShapeError("forward: batch " + std::to_string(batch) + " with " +
                     std::to_string(labels.size()) + " labels, " + std::to_string(steps.size()) +
                     " steps");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) > p.config.num_labels) {
      throw IndexError("forward: label " + std::to_string(y) + " out of range");
    }
  }
  for (int t : steps) {
    if (t < 0 || static_cast<std::size_t>(t) >= p.config.timesteps) {
      throw IndexError("forward: timestep " + std::to_string(t) + " out of range");
    }
  }
}

}  // namespace detail

/// Full denoiser forward pass on a batch (one row per sample, each row with its
/// own label and timestep). Pure in (params, x, labels, steps).
template <class T>
BasicMatrix<T> denoiser_forward(const BasicDenoiserParams<T>& p, const BasicMatrix<T>& x,
                                std::span<const int> labels, std::span<const int> steps,
                                std::type_identity_t<ForwardTrace<T>>* trace = nullptr,
                                const std::type_identity_t<ActivationHook<T>>* hook = nullptr) {
  if (x.cols() != p.config.image_dim()) {
    throw ShapeError("forward: input " + shape_str(x) + ", image dim " +
                     std::to_string(p.config.image_dim()));
  }
  detail::check_indices(p, x.rows(), labels, steps);
  const std::size_t batch = x.rows(), d = p.config.hidden;

  auto h = matmul_nt(x, p.input_proj.weight);
  add_row_inplace(h, p.input_proj.bias);

  if (trace) {
    *trace = ForwardTrace<T>{};
    trace->owner = &p;
    trace->version = p.version;
    trace->input = x;
    trace->labels.assign(labels.begin(), labels.end());
    trace->steps.assign(steps.begin(), steps.end());
  }

  for (std::size_t l = 0; l < p.ffn_blocks.size(); ++l) {
    const auto& blk = p.ffn_blocks[l];
    BasicMatrix<T> normed(batch, d), u(batch, d);
    std::vector<T> inv_std(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      inv_std[r] = detail::normalize_row<T>(std::as_const(h).row(r), normed.row(r));
      auto row = u.row(r);
      const auto nr = normed.row(r);
      const auto le = p.label_embeddings.row(static_cast<std::size_t>(labels[r]));
      const auto te = p.time_embeddings.row(static_cast<std::size_t>(steps[r]));
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = nr[j] * blk.norm_gain.data()[j] + blk.norm_bias.data()[j] + le[j] + te[j];
      }
    }
    GegluCache<T> cache;
    auto res = geglu_forward(u, blk, trace ? &cache : nullptr);
    if (hook && *hook) (*hook)(l, res.hidden);
    if (trace) {
      trace->residual.push_back(h);
      trace->normed.push_back(std::move(normed));
      trace->inv_std.push_back(std::move(inv_std));
      trace->block_in.push_back(std::move(u));
      trace->caches.push_back(std::move(cache));
      trace->hidden.push_back(res.hidden);
    }
    h = std::move(h) + res.out;
  }
  if (trace) trace->residual.push_back(h);

  auto out = matmul_nt(h, p.output_proj.weight);
  add_row_inplace(out, p.output_proj.bias);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto k = p.output_skip.row(static_cast<std::size_t>(steps[r]));
    const auto xr = x.row(r);
    auto o = out.row(r);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += k[j] * xr[j];
  }
  return out;
}

template <class T>
BasicMatrix<T> denoiser_forward(const BasicDenoiserParams<T>& p, const BasicMatrix<T>& x, int label,
                                int step) {
  std::vector<int> labels(x.rows(), label), steps(x.rows(), step);
  return denoiser_forward(p, x, std::span<const int>(labels), std::span<const int>(steps));
}

/// Hand-written reverse pass for the fixed architecture. Returns gradients in
/// a parameter-shaped container. loss_grad is ∂loss/∂output.
template <class T>
BasicDenoiserParams<T> backward(const BasicDenoiserParams<T>& p, const ForwardTrace<T>& trace,
                                const BasicMatrix<T>& loss_grad) {
  if (!trace.valid()) throw StateError("backward: missing forward trace");
  if (trace.owner != &p || trace.version != p.version) {
    throw StateError("backward: forward trace is stale for these parameters");
  }
  if (trace.residual.size() != p.ffn_blocks.size() + 1) {
    throw StateError("backward: incomplete forward trace");
  }
  const auto& h_last = trace.residual.back();
  if (loss_grad.rows() != h_last.rows() || loss_grad.cols() != p.config.image_dim()) {
    throw ShapeError("backward: loss grad " + shape_str(loss_grad));
  }

  auto g = zero_params<T>(p.config);
  const std::size_t batch = loss_grad.rows(), d = p.config.hidden;

  g.output_proj.weight = matmul_tn(loss_grad, h_last);
  g.output_proj.bias = column_sums(loss_grad);
  for (std::size_t r = 0; r < batch; ++r) {
    auto k = g.output_skip.row(static_cast<std::size_t>(trace.steps[r]));
    const auto gr = loss_grad.row(r);
    const auto xr = trace.input.row(r);
    for (std::size_t j = 0; j < k.size(); ++j) k[j] += gr[j] * xr[j];
  }
  auto dh = matmul(loss_grad, p.output_proj.weight);

  for (std::size_t li = p.ffn_blocks.size(); li-- > 0;) {
    const auto& blk = p.ffn_blocks[li];
    auto& gb = g.ffn_blocks[li];
    const auto& cache = trace.caches[li];

    gb.w_out = matmul_tn(dh, trace.hidden[li]);
    gb.b_out = column_sums(dh);
    const auto dhidden = matmul(dh, blk.w_out);

    BasicMatrix<T> dgate(dhidden.rows(), dhidden.cols());
    BasicMatrix<T> dvalue(dhidden.rows(), dhidden.cols());
    for (std::size_t i = 0; i < dhidden.size(); ++i) {
      const T gv = cache.gate.values()[i];
      const T vv = cache.value.values()[i];
      dgate.values()[i] = dhidden.values()[i] * gelu(vv);
      dvalue.values()[i] = dhidden.values()[i] * gv * gelu_grad(vv);
    }
    gb.w_gate = matmul_tn(dgate, trace.block_in[li]);
    gb.b_gate = column_sums(dgate);
    gb.w_value = matmul_tn(dvalue, trace.block_in[li]);
    gb.b_value = column_sums(dvalue);

    const auto du = matmul(dgate, blk.w_gate) + matmul(dvalue, blk.w_value);
    const auto& normed = trace.normed[li];
    std::vector<T> dn(d);
    for (std::size_t r = 0; r < batch; ++r) {
      auto le = g.label_embeddings.row(static_cast<std::size_t>(trace.labels[r]));
      auto te = g.time_embeddings.row(static_cast<std::size_t>(trace.steps[r]));
      const auto dr = du.row(r);
      const auto nr = normed.row(r);
      T mean_dn = 0, mean_dn_n = 0;
      for (std::size_t j = 0; j < d; ++j) {
        le[j] += dr[j];
        te[j] += dr[j];
        gb.norm_gain.data()[j] += dr[j] * nr[j];
        gb.norm_bias.data()[j] += dr[j];
        dn[j] = dr[j] * blk.norm_gain.data()[j];
        mean_dn += dn[j];
        mean_dn_n += dn[j] * nr[j];
      }
      mean_dn /= T(d);
      mean_dn_n /= T(d);
      auto dhr = dh.row(r);
      const T is = trace.inv_std[li][r];
      for (std::size_t j = 0; j < d; ++j) dhr[j] += is * (dn[j] - mean_dn - nr[j] * mean_dn_n);
    }
  }

  g.input_proj.weight = matmul_tn(dh, trace.input);
  g.input_proj.bias = column_sums(dh);
  return g;
}

}  // namespace memsub
