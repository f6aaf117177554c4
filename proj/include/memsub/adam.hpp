#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "memsub/model.hpp"

namespace memsub {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter tensor in
/// for_each_tensor order.
template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<BasicMatrix<T>> m;
  std::vector<BasicMatrix<T>> v;
};

template <class T>
AdamState<T> make_adam_state(const BasicDenoiserParams<T>& p, AdamConfig cfg = {}) {
  AdamState<T> s;
  s.config = cfg;
  for_each_tensor(p, [&](const std::string&, const BasicMatrix<T>& t) {
    s.m.emplace_back(t.rows(), t.cols());
    s.v.emplace_back(t.rows(), t.cols());
  });
  return s;
}

/// One bias-corrected Adam update, in place.
template <class T>
void adam_step(BasicDenoiserParams<T>& params, const BasicDenoiserParams<T>& grads,
               AdamState<T>& state, double lr) {
  std::vector<BasicMatrix<T>*> ps;
  std::vector<const BasicMatrix<T>*> gs;
  for_each_tensor(params, [&](const std::string&, BasicMatrix<T>& t) { ps.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, const BasicMatrix<T>& t) { gs.push_back(&t); });
  if (ps.size() != gs.size() || ps.size() != state.m.size()) {
    throw ShapeError("adam_step: tensor count mismatch");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i]->same_shape(*gs[i]) || !ps[i]->same_shape(state.m[i])) {
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " shape mismatch");
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T step_size = T(lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T eps = T(c.eps);

  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto pv = ps[i]->values();
    const auto gv = gs[i]->values();
    auto mv = state.m[i].values();
    auto vv = state.v[i].values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const T g = gv[k];
      mv[k] = b1 * mv[k] + (T(1) - b1) * g;
      vv[k] = b2 * vv[k] + (T(1) - b2) * g * g;
      pv[k] -= step_size * mv[k] / (std::sqrt(vv[k]) * inv_sqrt_bc2 + eps);
    }
  }
  ++params.version;
}

}  // namespace memsub
