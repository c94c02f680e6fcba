#pragma once

// SGD with momentum and Adam over a list of named parameter tensors. Both
// read gradients from each parameter's grad buffer.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/bayes_core.hpp"
#include "golden_sgd/errors.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

namespace detail {

inline void require_finite_grads(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradientError(p.name);
    }
  }
}

inline std::vector<Tensor> zeros_like(std::span<const NamedTensor> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.shape());
  return out;
}

inline void require_mirrors(std::span<const NamedTensor> params, const std::vector<Tensor>& buffers,
                            const char* what) {
  if (buffers.size() != params.size()) {
    throw ShapeError(std::string(what) + " holds " + std::to_string(buffers.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buffers[i].shape() != params[i].tensor.shape()) {
      throw ShapeError(std::string(what) + " buffer for '" + params[i].name + "' has shape " +
                       shape_to_string(buffers[i].shape()));
    }
  }
}

}  // namespace detail

struct SgdState {
  double eta;
  double alpha;
  std::vector<Tensor> velocity;  // previous weight delta, one per parameter
};

inline SgdState make_sgd(std::span<const NamedTensor> params, double eta, double alpha) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("sgd learning rate must be > 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("sgd momentum must lie in [0,1)");
  return {eta, alpha, detail::zeros_like(params)};
}

// eta = (1 - sqrt(2) * phi)^2, alpha = sqrt(2) * phi.
inline SgdState make_theoretical_sgd(std::span<const NamedTensor> params) {
  return make_sgd(params, bayes::learning_eta(), bayes::momentum_alpha());
}

// delta(t) = -eta * g + alpha * delta(t-1);  w += delta(t)
inline void sgd_step(std::span<NamedTensor> params, SgdState& state) {
  detail::require_mirrors(params, state.velocity, "sgd velocity");
  detail::require_finite_grads(params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data();
    auto g = params[k].tensor.grad();
    auto v = state.velocity[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double delta = -state.eta * g[i] + state.alpha * v[i];
      w[i] += delta;
      v[i] = delta;
    }
  }
}

struct AdamState {
  double eta;
  double beta1;
  double beta2;
  double epsilon;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

inline AdamState make_adam(std::span<const NamedTensor> params, double eta, double beta1 = 0.9,
                           double beta2 = 0.999, double epsilon = 1e-8) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("adam learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw DomainError("adam beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("adam beta2 must lie in [0,1)");
  if (!(epsilon > 0.0)) throw DomainError("adam epsilon must be > 0");
  return {eta, beta1, beta2, epsilon, 0, detail::zeros_like(params), detail::zeros_like(params)};
}

inline void adam_step(std::span<NamedTensor> params, AdamState& state) {
  detail::require_mirrors(params, state.m, "adam first moment");
  detail::require_mirrors(params, state.v, "adam second moment");
  detail::require_finite_grads(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data();
    auto g = params[k].tensor.grad();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= state.eta * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// Optimizer state as checkpoint tensors. Hyperparameters and the step
// counter are stored as scalars; buffers are named after their parameter.
inline std::vector<NamedTensor> to_tensors(const SgdState& s, std::span<const NamedTensor> params) {
  detail::require_mirrors(params, s.velocity, "sgd velocity");
  std::vector<NamedTensor> out{{"sgd.eta", Tensor(Shape{}, {s.eta})}, {"sgd.alpha", Tensor(Shape{}, {s.alpha})}};
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"velocity/" + params[i].name, s.velocity[i]});
  return out;
}

inline std::vector<NamedTensor> to_tensors(const AdamState& s, std::span<const NamedTensor> params) {
  detail::require_mirrors(params, s.m, "adam first moment");
  std::vector<NamedTensor> out{{"adam.eta", Tensor(Shape{}, {s.eta})},
                               {"adam.beta1", Tensor(Shape{}, {s.beta1})},
                               {"adam.beta2", Tensor(Shape{}, {s.beta2})},
                               {"adam.epsilon", Tensor(Shape{}, {s.epsilon})},
                               {"adam.step", Tensor(Shape{}, {static_cast<double>(s.step)})}};
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"m/" + params[i].name, s.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"v/" + params[i].name, s.v[i]});
  return out;
}

namespace detail {

inline const Tensor& find_tensor(std::span<const NamedTensor> saved, const std::string& name) {
  for (const auto& s : saved) {
    if (s.name == name) return s.tensor;
  }
  throw ConsistencyError("optimizer checkpoint lacks '" + name + "'");
}

inline std::vector<Tensor> find_buffers(std::span<const NamedTensor> saved, std::span<const NamedTensor> params,
                                        const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    const Tensor& t = find_tensor(saved, prefix + p.name);
    if (t.shape() != p.tensor.shape()) throw ShapeError("optimizer buffer shape mismatch for '" + p.name + "'");
    out.push_back(t.reshaped(t.shape()));
  }
  return out;
}

}  // namespace detail

inline SgdState sgd_from_tensors(std::span<const NamedTensor> saved, std::span<const NamedTensor> params) {
  return {detail::find_tensor(saved, "sgd.eta")[0], detail::find_tensor(saved, "sgd.alpha")[0],
          detail::find_buffers(saved, params, "velocity/")};
}

inline AdamState adam_from_tensors(std::span<const NamedTensor> saved, std::span<const NamedTensor> params) {
  AdamState s{detail::find_tensor(saved, "adam.eta")[0],
              detail::find_tensor(saved, "adam.beta1")[0],
              detail::find_tensor(saved, "adam.beta2")[0],
              detail::find_tensor(saved, "adam.epsilon")[0],
              static_cast<std::uint64_t>(detail::find_tensor(saved, "adam.step")[0]),
              detail::find_buffers(saved, params, "m/"),
              detail::find_buffers(saved, params, "v/")};
  return s;
}

}  // namespace golden_sgd
