#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "g2s/core/tensor.hpp"

namespace g2s {

template <typename S>
using ScalarFunction = std::function<Tensor<S>(Tape<S>&, const Tensor<S>&)>;

/// Compares the tape gradient of scalar `f` at `x` with central finite
/// differences. Returns max_i |g_tape - g_fd| / max(1, |g_fd|).
template <typename S>
S grad_check(const ScalarFunction<S>& f, const Matrix<S>& x, S eps) {
  if (!(eps >= S(1e-7) && eps <= S(1e-3))) throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  Matrix<S> analytic;
  {
    Tape<S> tape;
    const auto xv = tape.variable(x);
    const auto y = f(tape, xv);
    if (y.rows() != 1 || y.cols() != 1) throw ContractError("grad_check: function is not scalar-valued");
    tape.backward(y);
    analytic = xv.grad();
  }
  auto eval = [&f](const Matrix<S>& at) {
    Tape<S> tape;
    return f(tape, tape.constant(at)).item();
  };
  S worst = 0;
  Matrix<S> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const S orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const S up = eval(probe);
    probe.data()[i] = orig - eps;
    const S down = eval(probe);
    probe.data()[i] = orig;
    const S fd = (up - down) / (S(2) * eps);
    worst = std::max(worst, std::abs(analytic.data()[i] - fd) / std::max(S(1), std::abs(fd)));
  }
  return worst;
}

}  // namespace g2s
