#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "g2s/core/tensor.hpp"

namespace g2s {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
  long step = 0;

  void reset(std::span<Parameter<S>* const> params) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto* p : params) {
      m.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
};

/// Bias-corrected Adam update using each parameter's accumulated `grad`.
/// An empty state is initialised on first use.
template <typename S>
void adam_step(std::span<Parameter<S>* const> params, AdamState<S>& state, const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) state.reset(params);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
        state.m[i].rows() != p.value.rows() || state.m[i].cols() != p.value.cols()) {
      throw ContractError("adam_step: shape mismatch for parameter '" + p.name + "'");
    }
  }
  state.step += 1;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = S(1) - std::pow(b1, static_cast<S>(state.step));
  const S c2 = S(1) - std::pow(b2, static_cast<S>(state.step));
  const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (S(1) - b1) * p.grad;
    v = b2 * v + (S(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template <typename S>
void adam_step(const ParameterRefs<S>& params, AdamState<S>& state, const AdamConfig& cfg) {
  adam_step(std::span<Parameter<S>* const>(params.data(), params.size()), state, cfg);
}

}  // namespace g2s
