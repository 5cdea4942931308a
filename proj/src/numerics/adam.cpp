#include <cmath>

#include "knobs/numerics.hpp"

namespace knobs {

AdamState::AdamState(std::size_t rows, std::size_t cols, AdamHyper h)
    : hyper(h), first_moment(rows, cols), second_moment(rows, cols) {}

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, std::int64_t& step, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  }
  ++step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.epsilon);
  }
}

void adam_step(Matrix& params, const Matrix& grads, AdamState& state) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw ShapeError("adam_step: gradient shape differs from parameter shape");
  }
  if (state.first_moment.rows() != params.rows() || state.first_moment.cols() != params.cols() ||
      state.second_moment.rows() != params.rows() || state.second_moment.cols() != params.cols()) {
    throw ShapeError("adam_step: optimizer state shape differs from parameter shape");
  }
  if (state.step < 0) throw ConfigError("adam_step: negative step counter");
  adam_step(params.data(), grads.data(), state.first_moment.data(), state.second_moment.data(),
            state.step, state.hyper);
}

}  // namespace knobs
