#pragma once

// Differentiable operations on tape tensors. Every function records its
// result on the tape of its first argument.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "g2s/core/tensor.hpp"

namespace g2s {

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace detail

enum class Axis { kRows, kCols };

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  const auto ia = a.id(), ib = b.id();
  Matrix<S> y = a.value() * b.value();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <typename S>
Tensor<S> operator*(S s, const Tensor<S>& a) {
  const auto ia = a.id();
  return a.tape().record(s * a.value(), {a}, [ia, s](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, s * t.grad(self));
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S s) {
  const auto ia = a.id();
  Matrix<S> y = a.value().array() + s;
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
  });
}

// Elementwise product.
template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "hadamard");
  const auto ia = a.id(), ib = b.id();
  Matrix<S> y = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

// a[r, c] + row[0, c]
template <typename S>
Tensor<S> add_row(const Tensor<S>& a, const Tensor<S>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols(a)");
  const auto ia = a.id(), ir = row.id();
  Matrix<S> y = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(y), {a, row}, [ia, ir](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

// a[r, c] * row[0, c]
template <typename S>
Tensor<S> mul_row(const Tensor<S>& a, const Tensor<S>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: row must be 1 x cols(a)");
  const auto ia = a.id(), ir = row.id();
  Matrix<S> y = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape().record(std::move(y), {a, row}, [ia, ir](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& r = t.value(ir);
    if (t.requires_grad(ia)) {
      Matrix<S> ga = g.array().rowwise() * r.row(0).array();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ir)) t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
  });
}

// a[r, c] * w[r, 0]
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& a, const Tensor<S>& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) throw ShapeError("scale_rows: weights must be rows(a) x 1");
  const auto ia = a.id(), iw = w.id();
  Matrix<S> y = a.value().array().colwise() * w.value().col(0).array();
  return a.tape().record(std::move(y), {a, w}, [ia, iw](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix<S> ga = g.array().colwise() * t.value(iw).col(0).array();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(iw)) t.accumulate(iw, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  const auto ia = a.id();
  Matrix<S> y = a.value().transpose();
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
  const auto ia = a.id();
  Matrix<S> y = a.value().unaryExpr([slope](S v) { return v >= S(0) ? v : slope * v; });
  return a.tape().record(std::move(y), {a}, [ia, slope](Tape<S>& t, std::size_t self) {
    Matrix<S> d = t.value(ia).unaryExpr([slope](S v) { return v >= S(0) ? S(1) : slope; });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  const auto ia = a.id();
  Matrix<S> y = a.value().unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    const auto& s = t.value(self);
    Matrix<S> d = s.array() * (S(1) - s.array());
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
  const auto ia = a.id();
  Matrix<S> y = a.value().cwiseAbs();
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    Matrix<S> sign = t.value(ia).unaryExpr([](S v) { return S((v > S(0)) - (v < S(0))); });
    t.accumulate(ia, t.grad(self).cwiseProduct(sign));
  });
}

/// Row-wise softmax with max subtraction. Entries equal to -inf receive
/// exactly zero probability, which is how attention and routing masks work.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  const auto ia = a.id();
  const auto& x = a.value();
  Matrix<S> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    const auto& yv = t.value(self);
    const auto& g = t.grad(self);
    Matrix<S> gy = g.cwiseProduct(yv);
    Matrix<S> ga = gy - (yv.array().colwise() * gy.rowwise().sum().array()).matrix();
    t.accumulate(ia, ga);
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, Axis axis) {
  if (axis == Axis::kCols) return softmax_rows(a);
  return transpose(softmax_rows(transpose(a)));
}

// Per-row normalisation to zero mean and unit variance (no affine part).
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& a, S eps = S(1e-5)) {
  const auto ia = a.id();
  const auto& x = a.value();
  const Index n = x.cols();
  Matrix<S> y(x.rows(), n);
  Matrix<S> inv_std(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    const S mu = x.row(r).mean();
    const S var = (x.row(r).array() - mu).square().mean();
    inv_std(r, 0) = S(1) / std::sqrt(var + eps);
    y.row(r) = (x.row(r).array() - mu) * inv_std(r, 0);
  }
  return a.tape().record(std::move(y), {a}, [ia, inv_std, n](Tape<S>& t, std::size_t self) {
    const auto& xh = t.value(self);
    const auto& g = t.grad(self);
    Matrix<S> ga(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const S gm = g.row(r).mean();
      const S gx = g.row(r).dot(xh.row(r)) / S(n);
      ga.row(r) = inv_std(r, 0) * (g.row(r).array() - gm - xh.row(r).array() * gx);
    }
    t.accumulate(ia, ga);
  });
}

// Token-axis concatenation.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<S> y(rows, cols);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.rows();
  }
  return parts[0].tape().record(std::move(y), parts, [spans](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, start] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
    }
  });
}

// Feature-axis concatenation.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<S> y(rows, cols);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.cols();
  }
  return parts[0].tape().record(std::move(y), parts, [spans](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (const auto& [id, start] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    }
  });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  const auto ia = a.id();
  const Index rows = a.rows();
  Matrix<S> y = a.value().middleRows(start, count);
  return a.tape().record(std::move(y), {a}, [ia, start, rows](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Matrix<S> ga = Matrix<S>::Zero(rows, g.cols());
    ga.middleRows(start, g.rows()) = g;
    t.accumulate(ia, ga);
  });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  const auto ia = a.id();
  const Index cols = a.cols();
  Matrix<S> y = a.value().middleCols(start, count);
  return a.tape().record(std::move(y), {a}, [ia, start, cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Matrix<S> ga = Matrix<S>::Zero(g.rows(), cols);
    ga.middleCols(start, g.cols()) = g;
    t.accumulate(ia, ga);
  });
}

// y[i] = a[index[i]]; indices may repeat.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, std::span<const Index> index) {
  const auto ia = a.id();
  const Index rows = a.rows();
  Matrix<S> y(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw ShapeError("gather_rows: index out of range");
    y.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return a.tape().record(std::move(y), {a}, [ia, idx, rows](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Matrix<S> ga = Matrix<S>::Zero(rows, g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(ia, ga);
  });
}

// y has `rows` rows; y[index[i]] += a[i].
template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& a, std::span<const Index> index, Index rows) {
  if (static_cast<Index>(index.size()) != a.rows()) throw ShapeError("scatter_rows: index length != rows(a)");
  const auto ia = a.id();
  Matrix<S> y = Matrix<S>::Zero(rows, a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw ShapeError("scatter_rows: index out of range");
    y.row(index[i]) += a.value().row(static_cast<Index>(i));
  }
  std::vector<Index> idx(index.begin(), index.end());
  return a.tape().record(std::move(y), {a}, [ia, idx](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Matrix<S> ga(static_cast<Index>(idx.size()), g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(static_cast<Index>(i)) = g.row(idx[i]);
    t.accumulate(ia, ga);
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  const auto ia = a.id();
  Matrix<S> y = Matrix<S>::Constant(1, 1, a.value().sum());
  return a.tape().record(std::move(y), {a}, [ia](Tape<S>& t, std::size_t self) {
    const auto& v = t.value(ia);
    t.accumulate(ia, Matrix<S>::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  const S n = static_cast<S>(a.value().size());
  return (S(1) / n) * sum(a);
}

/// Column means (1 x cols). Each column is summed in sorted order, so the
/// result does not depend on the order of the rows.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  const auto ia = a.id();
  const auto& x = a.value();
  const Index n = x.rows();
  if (n == 0) throw ShapeError("mean_rows: empty input");
  Matrix<S> y(1, x.cols());
  std::vector<S> column(static_cast<std::size_t>(n));
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < n; ++r) column[static_cast<std::size_t>(r)] = x(r, c);
    std::sort(column.begin(), column.end());
    S acc = 0;
    for (S v : column) acc += v;
    y(0, c) = acc / static_cast<S>(n);
  }
  return a.tape().record(std::move(y), {a}, [ia, n](Tape<S>& t, std::size_t self) {
    Matrix<S> ga = t.grad(self).replicate(n, 1) / static_cast<S>(n);
    t.accumulate(ia, ga);
  });
}

/// Mean over rows of -log softmax(logits)[target]. Targets index columns.
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits, std::span<const int> targets) {
  const auto& x = logits.value();
  if (static_cast<Index>(targets.size()) != x.rows()) {
    throw ContractError("cross_entropy_rows: target count != logit rows");
  }
  if (x.rows() == 0) throw ContractError("cross_entropy_rows: empty batch");
  Matrix<S> probs(x.rows(), x.cols());
  S total = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    const int k = targets[static_cast<std::size_t>(r)];
    if (k < 0 || k >= x.cols()) throw ContractError("cross_entropy_rows: target out of range");
    const S m = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - m).exp();
    const S z = probs.row(r).sum();
    probs.row(r) /= z;
    total += (m + std::log(z)) - x(r, k);
  }
  const S n = static_cast<S>(x.rows());
  std::vector<int> tg(targets.begin(), targets.end());
  const auto il = logits.id();
  return logits.tape().record(Matrix<S>::Constant(1, 1, total / n), {logits},
                              [il, probs, tg, n](Tape<S>& t, std::size_t self) {
                                Matrix<S> ga = probs;
                                for (std::size_t r = 0; r < tg.size(); ++r) ga(static_cast<Index>(r), tg[r]) -= S(1);
                                t.accumulate(il, (t.grad(self)(0, 0) / n) * ga);
                              });
}

/// Expected stopping time under per-step stop probabilities
/// s_t = sigmoid(logit_t), with a forced stop at the last step:
///   E = hop * sum_t P(not stopped before t) = hop * sum_t prod_{u<t} (1 - s_u).
/// Input is N x 1; output 1 x 1 in the units of `hop`.
template <typename S>
Tensor<S> expected_stop_time(const Tensor<S>& stop_logits, S hop) {
  if (stop_logits.cols() != 1 || stop_logits.rows() == 0) {
    throw ShapeError("expected_stop_time: logits must be N x 1");
  }
  const auto il = stop_logits.id();
  const auto& l = stop_logits.value();
  const Index n = l.rows();
  Matrix<S> survive(n, 1);
  Matrix<S> s(n, 1);
  S acc = 1;
  for (Index t = 0; t < n; ++t) {
    survive(t, 0) = acc;
    s(t, 0) = S(1) / (S(1) + std::exp(-l(t, 0)));
    acc *= (S(1) - s(t, 0));
  }
  const S e = hop * survive.sum();
  return stop_logits.tape().record(Matrix<S>::Constant(1, 1, e), {stop_logits},
                                   [il, survive, s, hop, n](Tape<S>& t, std::size_t self) {
                                     const S g = t.grad(self)(0, 0);
                                     Matrix<S> gl = Matrix<S>::Zero(n, 1);
                                     S tail = 0;  // sum of survive over t > u
                                     for (Index u = n - 1; u >= 0; --u) {
                                       gl(u, 0) = -g * hop * s(u, 0) * tail;
                                       tail += survive(u, 0);
                                     }
                                     t.accumulate(il, gl);
                                   });
}

}  // namespace g2s
