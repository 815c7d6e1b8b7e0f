#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "g2s/core/ops.hpp"
#include "g2s/core/rng.hpp"

namespace g2s {

template <typename S>
Matrix<S> uniform_init(Index rows, Index cols, S bound, Rng& rng) {
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

template <typename S>
Matrix<S> normal_init(Index rows, Index cols, S stddev, Rng& rng) {
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal(0.0, stddev));
  return m;
}

/// y = x W + b with W stored [in x out].
template <typename S>
struct Linear {
  Parameter<S> weight;
  Parameter<S> bias;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, const std::string& name) {
    const S bound = std::sqrt(S(6) / static_cast<S>(in + out));
    weight = Parameter<S>(name + ".weight", uniform_init<S>(in, out, bound, rng));
    bias = Parameter<S>(name + ".bias", Matrix<S>::Zero(1, out), 1);
  }

  Index in_dim() const { return weight.value.rows(); }
  Index out_dim() const { return weight.value.cols(); }

  Tensor<S> operator()(const Tensor<S>& x) const {
    auto& t = x.tape();
    return add_row(matmul(x, t.parameter(weight)), t.parameter(bias));
  }

  void set_identity() {
    if (in_dim() != out_dim()) throw ConfigError("set_identity on a non-square Linear");
    weight.value.setIdentity();
    bias.value.setZero();
  }

  void collect(ParameterRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Row-wise layer normalisation with learned gain and bias.
template <typename S>
struct LayerNorm {
  Parameter<S> gain;
  Parameter<S> bias;

  LayerNorm() = default;
  LayerNorm(Index dim, const std::string& name)
      : gain(name + ".gain", Matrix<S>::Ones(1, dim), 1), bias(name + ".bias", Matrix<S>::Zero(1, dim), 1) {}

  Tensor<S> operator()(const Tensor<S>& x) const {
    auto& t = x.tape();
    return add_row(mul_row(layer_norm_rows(x), t.parameter(gain)), t.parameter(bias));
  }

  void collect(ParameterRefs<S>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

/// Two-layer position-wise MLP with LeakyReLU.
template <typename S>
struct FeedForward {
  Linear<S> in;
  Linear<S> out;
  S slope = S(0.01);

  FeedForward() = default;
  FeedForward(Index dim, Index hidden, Rng& rng, const std::string& name, S leaky_slope = S(0.01))
      : in(dim, hidden, rng, name + ".in"), out(hidden, dim, rng, name + ".out"), slope(leaky_slope) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return out(leaky_relu(in(x), slope)); }

  void collect(ParameterRefs<S>& refs) {
    in.collect(refs);
    out.collect(refs);
  }
};

/// Multi-head scaled dot-product attention with input and output
/// projections. Scores are scaled by 1/sqrt(dim/heads). An optional additive
/// mask (Nq x Nk, 0 or -inf) is applied before the softmax.
template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index dim, int num_heads, Rng& rng, const std::string& name) : heads(num_heads) {
    if (num_heads <= 0 || dim % num_heads != 0) {
      throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
    }
    wq = Linear<S>(dim, dim, rng, name + ".wq");
    wk = Linear<S>(dim, dim, rng, name + ".wk");
    wv = Linear<S>(dim, dim, rng, name + ".wv");
    wo = Linear<S>(dim, dim, rng, name + ".wo");
  }

  Index dim() const { return wq.in_dim(); }

  Tensor<S> operator()(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                       const Matrix<S>* mask = nullptr,
                       std::vector<Matrix<S>>* weights_out = nullptr) const {
    if (q.cols() != dim() || k.cols() != dim() || v.cols() != dim()) {
      throw ShapeError("attention: input width does not match layer width");
    }
    if (k.rows() != v.rows()) throw ShapeError("attention: key/value row counts differ");
    auto& t = q.tape();
    const Index dh = dim() / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const auto qp = wq(q);
    const auto kp = wk(k);
    const auto vp = wv(v);
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto qh = slice_cols(qp, h * dh, dh);
      const auto kh = slice_cols(kp, h * dh, dh);
      const auto vh = slice_cols(vp, h * dh, dh);
      auto scores = scale * matmul(qh, transpose(kh));
      if (mask != nullptr) scores = scores + t.constant(*mask);
      const auto attn = softmax_rows(scores);
      if (weights_out != nullptr) weights_out->push_back(attn.value());
      outs.push_back(matmul(attn, vh));
    }
    return wo(heads == 1 ? outs[0] : concat_cols(outs));
  }

  void collect(ParameterRefs<S>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

/// Free-function form: per-head attention of q over (k, v), concatenated and
/// output-projected by `layer`.
template <typename S>
Tensor<S> cross_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                          const MultiHeadAttention<S>& layer) {
  return layer(q, k, v);
}

// Causal mask: position i may attend to j <= i.
template <typename S>
Matrix<S> causal_mask(Index n) {
  Matrix<S> m = Matrix<S>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<S>::infinity();
  }
  return m;
}

}  // namespace g2s
